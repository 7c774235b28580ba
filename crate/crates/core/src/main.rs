fn main() {
    std::process::exit(chiarella::cli::run_from_args(std::env::args_os()));
}
