//! Stochastic simulation of the discrete model and deterministic integration
//! of its continuous-time limit.
//!
//! Random numbers come from ChaCha8 (`rand_chacha`), seeded with
//! `seed_from_u64(seed)`; path `i` of a batch uses stream `i` of the same
//! seed. Gaussian draws use `rand_distr::StandardNormal`. Both are
//! platform-independent, so a seed reproduces the same path everywhere.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{fundamentalist_demand, step_discrete, trend_demand, MarketState, ModelParams};

/// Default integration step, in months.
pub const DEFAULT_DT: f64 = 0.01;
/// Largest accepted integration step, in months.
pub const MAX_DT: f64 = 0.05;
/// `sup |m|` over the tail below which a trajectory counts as converged.
pub const FIXED_POINT_TOL: f64 = 1e-6;
/// Share of a trajectory discarded as transient by default.
pub const DEFAULT_TRANSIENT_FRACTION: f64 = 0.5;

/// A simulated monthly path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPath {
    pub p: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub seed: u64,
}

impl SimPath {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Price distortion `p - v` at every step.
    pub fn distortion(&self) -> Vec<f64> {
        self.p.iter().zip(&self.v).map(|(p, v)| p - v).collect()
    }

    /// Writes the path as CSV with header `t,p,m,v,delta`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "p", "m", "v", "delta"])?;
        for t in 0..self.len() {
            let (p, m, v) = (self.p[t], self.m[t], self.v[t]);
            w.write_record(&[t.to_string(), p.to_string(), m.to_string(), v.to_string(), (p - v).to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// RNG for path `stream` of a run seeded with `seed`.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Simulates `length` months starting from `p = v = v0`, `m = 0`.
pub fn simulate_path(params: &ModelParams, length: usize, seed: u64) -> Result<SimPath> {
    simulate_path_with_rng(params, length, seed, &mut path_rng(seed, 0))
}

/// Simulates `count` independent paths in parallel, path `i` drawing from
/// stream `i`.
pub fn simulate_paths(params: &ModelParams, length: usize, seed: u64, count: usize) -> Result<Vec<SimPath>> {
    (0..count)
        .into_par_iter()
        .map(|i| simulate_path_with_rng(params, length, seed, &mut path_rng(seed, i as u64)))
        .collect()
}

fn simulate_path_with_rng(params: &ModelParams, length: usize, seed: u64, rng: &mut ChaCha8Rng) -> Result<SimPath> {
    if length < 2 {
        return Err(Error::TooShort { needed: 2, got: length });
    }
    params.validate_for_simulation()?;

    let mut path = SimPath {
        p: Vec::with_capacity(length),
        m: Vec::with_capacity(length),
        v: Vec::with_capacity(length),
        seed,
    };
    let mut state = MarketState::new(params.v0, 0.0, params.v0);
    for t in 0..length {
        if t > 0 {
            let z_n: f64 = StandardNormal.sample(rng);
            let z_v: f64 = StandardNormal.sample(rng);
            state = step_discrete(state, params, params.sigma_n * z_n, params.sigma_v * z_v);
            if !state.is_finite() {
                return Err(Error::Diverged(format!("simulated state not finite at t = {t}")));
            }
        }
        path.p.push(state.p);
        path.m.push(state.m);
        path.v.push(state.v);
    }
    Ok(path)
}

/// Output of [`integrate_deterministic`]: states sampled every `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<MarketState>,
}

fn vector_field(params: &ModelParams, s: [f64; 3]) -> [f64; 3] {
    let [p, m, v] = s;
    let dp = fundamentalist_demand(v - p, params) + trend_demand(m, params);
    [dp, params.alpha * (dp - m), 0.0]
}

/// Integrates the noise-free continuous-time model with classical RK4.
///
/// Noise and drift are ignored, so the value stays at `state0.v`.
pub fn integrate_deterministic(params: &ModelParams, state0: MarketState, dt: f64, horizon: f64) -> Result<Trajectory> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    if dt > MAX_DT {
        return Err(Error::InvalidInput(format!("dt must be <= {MAX_DT} months, got {dt}")));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidInput(format!("horizon must be > 0, got {horizon}")));
    }
    if !state0.is_finite() {
        return Err(Error::InvalidInput("initial state not finite".into()));
    }
    let steps = (horizon / dt).round() as usize;
    let mut states = Vec::with_capacity(steps + 1);
    let mut s = [state0.p, state0.m, state0.v];
    states.push(state0);
    let add = |a: [f64; 3], b: [f64; 3], h: f64| [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2]];
    for _ in 0..steps {
        let k1 = vector_field(params, s);
        let k2 = vector_field(params, add(s, k1, dt / 2.0));
        let k3 = vector_field(params, add(s, k2, dt / 2.0));
        let k4 = vector_field(params, add(s, k3, dt));
        for i in 0..3 {
            s[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let state = MarketState::new(s[0], s[1], s[2]);
        if !state.is_finite() {
            return Err(Error::Diverged("deterministic trajectory left the finite range".into()));
        }
        states.push(state);
    }
    Ok(Trajectory { dt, states })
}

/// Classification of the long-run behaviour of a deterministic trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub converged_to_fixed_point: bool,
    /// Mean period between upward zero crossings of `m`, in months.
    pub period: Option<f64>,
    /// Individual period estimates from successive crossings.
    pub periods: Vec<f64>,
    /// `(max - min) / mean` of the period estimates.
    pub period_rel_spread: Option<f64>,
    /// Tail maximum of `|m|`.
    pub amplitude_m: f64,
    /// Tail maximum of `|p - v|`.
    pub amplitude_delta: f64,
}

/// Minimum number of full periods the tail must contain to report a cycle.
pub const MIN_CYCLES: usize = 10;

/// Classifies the tail of `trajectory` as fixed point or limit cycle.
pub fn detect_limit_cycle(trajectory: &Trajectory, transient_fraction: f64) -> Result<CycleReport> {
    if !(0.0..1.0).contains(&transient_fraction) {
        return Err(Error::InvalidInput(format!(
            "transient_fraction must lie in [0, 1), got {transient_fraction}"
        )));
    }
    let start = (trajectory.states.len() as f64 * transient_fraction).floor() as usize;
    let tail = &trajectory.states[start..];
    if tail.len() < 3 {
        return Err(Error::TooShort { needed: 3, got: tail.len() });
    }
    let amplitude_m = tail.iter().map(|s| s.m.abs()).fold(0.0, f64::max);
    let amplitude_delta = tail.iter().map(|s| s.distortion().abs()).fold(0.0, f64::max);
    if amplitude_m < FIXED_POINT_TOL {
        return Ok(CycleReport {
            converged_to_fixed_point: true,
            period: None,
            periods: Vec::new(),
            period_rel_spread: None,
            amplitude_m,
            amplitude_delta,
        });
    }

    let mut crossings = Vec::new();
    for (i, w) in tail.windows(2).enumerate() {
        let (a, b) = (w[0].m, w[1].m);
        if a < 0.0 && b >= 0.0 {
            let frac = -a / (b - a);
            crossings.push((i as f64 + frac) * trajectory.dt);
        }
    }
    if crossings.len() < MIN_CYCLES + 1 {
        return Err(Error::InvalidInput(format!(
            "trajectory too short to classify: {} upward crossings after the transient, need {}",
            crossings.len(),
            MIN_CYCLES + 1
        )));
    }
    let periods: Vec<f64> = crossings.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = periods.iter().sum::<f64>() / periods.len() as f64;
    let (lo, hi) = periods
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    Ok(CycleReport {
        converged_to_fixed_point: false,
        period: Some(mean),
        periods,
        period_rel_spread: Some((hi - lo) / mean),
        amplitude_m,
        amplitude_delta,
    })
}
