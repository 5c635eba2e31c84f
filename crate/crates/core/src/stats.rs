//! Estimators over basis-sorted coincidence counts.
//!
//! Error bars are first-order propagated Poisson counting errors. For a
//! correlation `E = (n_same - n_diff) / n` this gives `sigma_E^2 = (1 - E^2) / n`,
//! and for an error fraction `Q = n_diff / n` it gives `sigma_Q^2 = Q (1 - Q) / n`.

use std::f64::consts::PI;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::qstate::{outcome_index, BasisPair, Outcome};

/// Coincidence counts for one basis pair, `n[alice][bob]` with `0 = +`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FourfoldCounts {
    pub n: [[u64; 2]; 2],
}

impl FourfoldCounts {
    pub fn new(pp: u64, pm: u64, mp: u64, mm: u64) -> Self {
        FourfoldCounts {
            n: [[pp, pm], [mp, mm]],
        }
    }

    pub fn record(&mut self, alice: Outcome, bob: Outcome) {
        self.n[outcome_index(alice)][outcome_index(bob)] += 1;
    }

    pub fn total(&self) -> u64 {
        self.n.iter().flatten().sum()
    }

    pub fn same(&self) -> u64 {
        self.n[0][0] + self.n[1][1]
    }

    pub fn different(&self) -> u64 {
        self.n[0][1] + self.n[1][0]
    }
}

impl AddAssign for FourfoldCounts {
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.n.iter_mut().flatten().zip(rhs.n.iter().flatten()) {
            *a += b;
        }
    }
}

/// Estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

pub fn expectation_from_counts(c: &FourfoldCounts) -> Result<Estimate> {
    let total = c.total();
    if total == 0 {
        return Err(Error::ZeroSamples("expectation value"));
    }
    let n = total as f64;
    let value = (c.same() as f64 - c.different() as f64) / n;
    Ok(Estimate {
        value,
        error: ((1.0 - value * value).max(0.0) / n).sqrt(),
    })
}

pub fn qber_from_counts(c: &FourfoldCounts) -> Result<Estimate> {
    let total = c.total();
    if total == 0 {
        return Err(Error::ZeroSamples("QBER"));
    }
    let n = total as f64;
    let q = c.different() as f64 / n;
    Ok(Estimate {
        value: q,
        error: (q * (1.0 - q) / n).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CParameter {
    /// Clipped to `[0, 1]`.
    pub value: f64,
    /// Unclipped `sqrt(e_xx^2 + e_yx^2)`.
    pub raw: f64,
    pub clipped: bool,
}

pub fn c_parameter(e_xx: f64, e_yx: f64) -> CParameter {
    let raw = e_xx.hypot(e_yx);
    CParameter {
        value: raw.min(1.0),
        raw,
        clipped: raw > 1.0,
    }
}

/// Counts for all six basis pairs over one analysis block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisPairCounts {
    pub block_start: f64,
    pub block_duration: f64,
    pub pairs: [FourfoldCounts; 6],
    /// Coincidences whose delay fell outside every arrival slot.
    pub unclassified: u64,
}

impl BasisPairCounts {
    pub fn new(block_start: f64, block_duration: f64) -> Result<Self> {
        if !(block_duration > 0.0) {
            return Err(invalid("block_duration", "must be positive"));
        }
        Ok(BasisPairCounts {
            block_start,
            block_duration,
            pairs: [FourfoldCounts::default(); 6],
            unclassified: 0,
        })
    }

    pub fn get(&self, pair: BasisPair) -> &FourfoldCounts {
        &self.pairs[pair.index()]
    }

    pub fn get_mut(&mut self, pair: BasisPair) -> &mut FourfoldCounts {
        &mut self.pairs[pair.index()]
    }

    pub fn record(&mut self, pair: BasisPair, alice: Outcome, bob: Outcome) {
        self.get_mut(pair).record(alice, bob);
    }

    /// Total classified coincidences.
    pub fn total(&self) -> u64 {
        self.pairs.iter().map(FourfoldCounts::total).sum()
    }

    pub fn superposition_total(&self) -> u64 {
        self.get(BasisPair::XX).total() + self.get(BasisPair::YX).total()
    }

    /// Merge another block into this one; the span grows to cover both.
    pub fn merge(&mut self, other: &BasisPairCounts) {
        let end = (self.block_start + self.block_duration).max(other.block_start + other.block_duration);
        self.block_start = self.block_start.min(other.block_start);
        self.block_duration = end - self.block_start;
        for (a, b) in self.pairs.iter_mut().zip(other.pairs) {
            *a += b;
        }
        self.unclassified += other.unclassified;
    }

    /// Sum of a sequence of blocks, or `None` when empty.
    pub fn aggregate<'a>(blocks: impl IntoIterator<Item = &'a BasisPairCounts>) -> Option<BasisPairCounts> {
        let mut it = blocks.into_iter();
        let mut acc = it.next()?.clone();
        for b in it {
            acc.merge(b);
        }
        Some(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockEstimate {
    pub block_start: f64,
    pub block_duration: f64,
    pub e_xx: Estimate,
    pub e_yx: Estimate,
    pub c64: Estimate,
    pub c_clipped: bool,
    pub qber_z: Estimate,
    pub qber_x: Estimate,
    /// `atan2(e_yx, e_xx)` in `(-pi, pi]`.
    pub phase: Estimate,
    /// Continuous phase; equals `phase.value` until `time_series` unwraps it.
    pub phase_unwrapped: f64,
    pub n_total: u64,
    pub n_zz: u64,
    pub n_xx: u64,
    pub n_yx: u64,
}

pub fn block_estimate(counts: &BasisPairCounts) -> Result<BlockEstimate> {
    for pair in [BasisPair::XX, BasisPair::YX, BasisPair::ZZ] {
        if counts.get(pair).total() == 0 {
            return Err(Error::EmptyBlock(pair));
        }
    }
    let e_xx = expectation_from_counts(counts.get(BasisPair::XX))?;
    let e_yx = expectation_from_counts(counts.get(BasisPair::YX))?;
    let qber_z = qber_from_counts(counts.get(BasisPair::ZZ))?;
    let c = c_parameter(e_xx.value, e_yx.value);

    let (c_err, phase_err) = if c.raw > 0.0 {
        let (x, y) = (e_xx.value, e_yx.value);
        let (sx, sy) = (e_xx.error, e_yx.error);
        let r2 = c.raw * c.raw;
        (
            ((x * sx).powi(2) + (y * sy).powi(2)).sqrt() / c.raw,
            ((y * sx).powi(2) + (x * sy).powi(2)).sqrt() / r2,
        )
    } else {
        (((e_xx.error.powi(2) + e_yx.error.powi(2)) / 2.0).sqrt(), PI)
    };

    let phase = e_yx.value.atan2(e_xx.value);
    Ok(BlockEstimate {
        block_start: counts.block_start,
        block_duration: counts.block_duration,
        e_xx,
        e_yx,
        c64: Estimate {
            value: c.value,
            error: c_err,
        },
        c_clipped: c.clipped,
        qber_z,
        qber_x: Estimate {
            value: (1.0 - c.value) / 2.0,
            error: c_err / 2.0,
        },
        phase: Estimate {
            value: phase,
            error: phase_err,
        },
        phase_unwrapped: phase,
        n_total: counts.total(),
        n_zz: counts.get(BasisPair::ZZ).total(),
        n_xx: counts.get(BasisPair::XX).total(),
        n_yx: counts.get(BasisPair::YX).total(),
    })
}

/// One point of a block time series; `estimate` is `None` for a gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub block_start: f64,
    pub block_duration: f64,
    pub estimate: Option<BlockEstimate>,
    pub gap_reason: Option<String>,
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_phase(x: f64) -> f64 {
    let w = (x + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Per-block estimates with phase unwrapped by nearest-branch continuation.
/// Deficient blocks become gaps and do not interrupt the unwrapping.
pub fn time_series(blocks: &[BasisPairCounts]) -> Vec<SeriesPoint> {
    let mut prev: Option<f64> = None;
    blocks
        .iter()
        .map(|b| match block_estimate(b) {
            Ok(mut est) => {
                let unwrapped = match prev {
                    Some(p) => p + wrap_phase(est.phase.value - p),
                    None => est.phase.value,
                };
                est.phase_unwrapped = unwrapped;
                prev = Some(unwrapped);
                SeriesPoint {
                    block_start: b.block_start,
                    block_duration: b.block_duration,
                    estimate: Some(est),
                    gap_reason: None,
                }
            }
            Err(e) => SeriesPoint {
                block_start: b.block_start,
                block_duration: b.block_duration,
                estimate: None,
                gap_reason: Some(e.to_string()),
            },
        })
        .collect()
}
