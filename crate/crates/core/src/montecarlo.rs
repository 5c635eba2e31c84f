//! Monte Carlo estimate of the C-parameter for a block whose phase drifts
//! linearly while it is being accumulated.
//!
//! Averaging `cos` and `sin` over a linear ramp of total size `d` shrinks the
//! vector `(E_xx, E_yx)` by `|sin(d/2) / (d/2)|`, which is the analytic
//! envelope the simulation is compared against.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::keyrate::asymptotic_rate;
use crate::photonics::PhaseTrajectory;
use crate::qstate::{AliceBasis, BasisPair, BobBasis, HybridPairState};
use crate::rng::{substream, Domain, SimRng};
use crate::stats::{c_parameter, BasisPairCounts, FourfoldCounts};

/// Arrival times of the signals inside a block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arrivals {
    /// Signal `n` arrives at `n / N * block_time`.
    #[default]
    Even,
    /// Ordered uniform arrival times (a Poisson process conditioned on `N`).
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftScenario {
    pub n_signals: u64,
    pub block_time: f64,
    pub total_phase_change: f64,
    pub initial_phase: f64,
    pub trials: u32,
    pub seed: u64,
    pub visibility_z: f64,
    pub visibility_xy: f64,
    #[serde(default)]
    pub arrivals: Arrivals,
    /// Replaces the linear ramp when set; evaluated at `t` in `[0, block_time)`.
    #[serde(default)]
    pub trajectory: Option<PhaseTrajectory>,
}

impl Default for DriftScenario {
    fn default() -> Self {
        DriftScenario {
            n_signals: 3000,
            block_time: 1.0,
            total_phase_change: 0.0,
            initial_phase: 0.0,
            trials: 300,
            seed: 0,
            visibility_z: 0.916,
            visibility_xy: 0.885,
            arrivals: Arrivals::Even,
            trajectory: None,
        }
    }
}

impl DriftScenario {
    pub fn validate(&self) -> Result<()> {
        if self.n_signals == 0 {
            return Err(invalid("n_signals", "must be at least 1"));
        }
        if self.trials == 0 {
            return Err(invalid("trials", "must be at least 1"));
        }
        if !(self.block_time > 0.0) {
            return Err(invalid("block_time", "must be positive"));
        }
        if !self.total_phase_change.is_finite() || !self.initial_phase.is_finite() {
            return Err(invalid("total_phase_change", "must be finite"));
        }
        if let Some(t) = &self.trajectory {
            t.validate()?;
        }
        HybridPairState::new(self.initial_phase, self.visibility_z, self.visibility_xy).map(|_| ())
    }

    pub fn with_rate(&self, rate: f64) -> Self {
        DriftScenario {
            total_phase_change: rate * self.block_time,
            ..self.clone()
        }
    }

    fn phase_at(&self, t: f64) -> f64 {
        match &self.trajectory {
            Some(traj) => traj.phase_at(t),
            None => self.initial_phase + t / self.block_time * self.total_phase_change,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmearingResult {
    pub mean_c: f64,
    /// Sample standard deviation over trials.
    pub std_c: f64,
    pub analytic_c: f64,
    pub trials: u32,
}

impl SmearingResult {
    pub fn std_error(&self) -> f64 {
        self.std_c / (self.trials as f64).sqrt()
    }
}

/// `c0 |sinc(d / 2)|`.
pub fn analytic_smearing(c0: f64, total_phase_change: f64) -> f64 {
    let x = total_phase_change / 2.0;
    if x.abs() < 1e-8 {
        return c0 * (1.0 - x * x / 6.0);
    }
    c0 * (x.sin() / x).abs()
}

fn run_trial(s: &SimRng, scenario: &DriftScenario, base: &HybridPairState) -> f64 {
    let mut rng = s.clone();
    let n = scenario.n_signals;
    let times: Vec<f64> = match scenario.arrivals {
        Arrivals::Even => Vec::new(),
        Arrivals::Poisson => {
            let mut t: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * scenario.block_time).collect();
            t.sort_by(f64::total_cmp);
            t
        }
    };
    let mut xx = FourfoldCounts::default();
    let mut yx = FourfoldCounts::default();
    for k in 0..n {
        let t = match scenario.arrivals {
            Arrivals::Even => k as f64 / n as f64 * scenario.block_time,
            Arrivals::Poisson => times[k as usize],
        };
        let state = base.with_phase(scenario.phase_at(t));
        let (pair, counts) = if rng.random::<bool>() {
            (BasisPair::XX, &mut xx)
        } else {
            (BasisPair::YX, &mut yx)
        };
        let (a, b) = state.outcome_probabilities(pair).sample(rng.random::<f64>());
        counts.record(a, b);
    }
    let corr = |c: &FourfoldCounts| {
        let total = c.total();
        if total == 0 {
            0.0
        } else {
            (c.same() as f64 - c.different() as f64) / total as f64
        }
    };
    c_parameter(corr(&xx), corr(&yx)).value
}

/// Mean and spread of the block C-parameter over independent trials.
///
/// Trial `i` always draws from substream `(seed, i)`, so scenarios that
/// differ only in drift share random numbers and the result does not depend
/// on the number of worker threads.
pub fn simulate_block_c(scenario: &DriftScenario) -> Result<SmearingResult> {
    scenario.validate()?;
    let base = HybridPairState::new(scenario.initial_phase, scenario.visibility_z, scenario.visibility_xy)?;
    let values: Vec<f64> = (0..scenario.trials)
        .into_par_iter()
        .map(|i| {
            let rng = substream(scenario.seed, Domain::MonteCarlo, i as u64);
            run_trial(&rng, scenario, &base)
        })
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(SmearingResult {
        mean_c: mean,
        std_c: var.sqrt(),
        analytic_c: analytic_smearing(scenario.visibility_xy, scenario.total_phase_change),
        trials: scenario.trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// rad/s
    pub rate: f64,
    pub total_phase_change: f64,
    pub result: SmearingResult,
    /// Asymptotic key rate at `mean_c` and the scenario's computational QBER.
    pub asymptotic_rate: f64,
    pub analytic_asymptotic_rate: f64,
}

pub fn sweep_drift_rates(rates: &[f64], template: &DriftScenario) -> Result<Vec<SweepRow>> {
    if rates.is_empty() {
        return Err(invalid("rates", "empty rate grid"));
    }
    let q = (1.0 - template.visibility_z) / 2.0;
    rates
        .iter()
        .map(|&rate| {
            let s = template.with_rate(rate);
            let result = simulate_block_c(&s)?;
            Ok(SweepRow {
                rate,
                total_phase_change: s.total_phase_change,
                result,
                asymptotic_rate: asymptotic_rate(q, result.mean_c),
                analytic_asymptotic_rate: asymptotic_rate(q, result.analytic_c),
            })
        })
        .collect()
}

/// First drift rate at which `column(row)` falls to `(1 - fraction)` of its
/// value at the smallest |rate|, linearly interpolated between grid points.
pub fn threshold_search(rows: &[SweepRow], fraction: f64, column: impl Fn(&SweepRow) -> f64) -> Option<f64> {
    let mut sorted: Vec<&SweepRow> = rows.iter().filter(|r| r.rate >= 0.0).collect();
    sorted.sort_by(|a, b| a.rate.total_cmp(&b.rate));
    let baseline = column(sorted.first()?);
    let target = baseline * (1.0 - fraction);
    for w in sorted.windows(2) {
        let (y0, y1) = (column(w[0]), column(w[1]));
        if y0 > target && y1 <= target {
            let t = (y0 - target) / (y0 - y1);
            return Some(w[0].rate + t * (w[1].rate - w[0].rate));
        }
    }
    None
}

/// Drift rate at which the analytic envelope costs `fraction` of the key
/// rate, by bisection on `[0, 2 pi / block_time]`.
pub fn analytic_threshold(visibility_z: f64, c0: f64, block_time: f64, fraction: f64) -> Option<f64> {
    let q = (1.0 - visibility_z) / 2.0;
    let base = asymptotic_rate(q, c0);
    if base <= 0.0 {
        return None;
    }
    let target = base * (1.0 - fraction);
    let f = |rate: f64| asymptotic_rate(q, analytic_smearing(c0, rate * block_time)) - target;
    let (mut lo, mut hi) = (0.0, std::f64::consts::TAU / block_time);
    if f(hi) > 0.0 {
        return None;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Which basis pairs a sampled event may land in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selection {
    /// Passive analyzers: Alice 1/3 per basis, Bob 1/2 per basis.
    Passive,
    /// Fair coin between XX and YX.
    Superposition,
}

/// Draw `n` events from a static state into one block of counts.
pub fn sample_block(state: &HybridPairState, n: u64, selection: Selection, rng: &mut SimRng) -> BasisPairCounts {
    let mut counts = BasisPairCounts::new(0.0, 1.0).expect("positive duration");
    let probs = BasisPair::ALL.map(|p| state.outcome_probabilities(p));
    for _ in 0..n {
        let pair = match selection {
            Selection::Passive => {
                let alice = AliceBasis::ALL[rng.random_range(0..3)];
                let bob = BobBasis::ALL[rng.random_range(0..2)];
                BasisPair::new(alice, bob)
            }
            Selection::Superposition => {
                if rng.random::<bool>() {
                    BasisPair::XX
                } else {
                    BasisPair::YX
                }
            }
        };
        let (a, b) = probs[pair.index()].sample(rng.random::<f64>());
        counts.record(pair, a, b);
    }
    counts
}
