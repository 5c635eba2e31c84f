//! Eavesdropper information bound, asymptotic key rate and finite-size key
//! length for the 6-state / 4-state reference-frame-independent protocol.
//!
//! The Eve bound is the standard RFI form written in terms of the 6-4
//! C-parameter (`sqrt(C66 / 2) = C64` under the symmetric-correlation
//! assumption):
//!
//! ```text
//! u   = min(C64 / (1 - Q), 1)
//! v   = sqrt(C64^2 - (1 - Q)^2 u^2) / Q
//! I_E = (1 - Q) h((1 + u) / 2) + Q h((1 + v) / 2)
//! ```
//!
//! The finite-size rate is
//!
//! ```text
//! r_N = (n/N) [1 - I_E(Q', C') - f h(Q') - 7 sqrt(log2(2/eps_smooth) / n)]
//!       - (1/N) [log2(2/eps_ec) + 2 log2(1/eps_pa) + 30 log2(N + 1)]
//! ```
//!
//! with `n -> (1 - n_q) n` in the yield prefactor to pay for the QBER sample.
//! Other placements of the absolute terms are available through
//! [`KeyReading`] for calibration reports.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::qstate::BasisPair;
use crate::stats::{BasisPairCounts, BlockEstimate, Estimate};

/// Fraction of coincidences in the key-map basis: Alice Z (1/3) times Bob Z (1/2).
pub const SIFTING_FACTOR: f64 = 1.0 / 6.0;

/// Rate reported for the reference operating point (Q = 4.2 %, C = 0.8845)
/// by a numerical key-rate framework; shown next to the analytic bound.
pub const REFERENCE_NUMERICAL_RATE: f64 = 0.063;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecurityParams {
    pub eps_smooth: f64,
    pub eps_ec: f64,
    pub eps_pa: f64,
    pub eps_pe: f64,
    /// Fraction of the key-map basis sacrificed for QBER estimation.
    pub n_q: f64,
    /// Error-correction inefficiency.
    pub f: f64,
}

impl Default for SecurityParams {
    fn default() -> Self {
        SecurityParams {
            eps_smooth: 2.5e-9,
            eps_ec: 2.5e-9,
            eps_pa: 2.5e-9,
            eps_pe: 2.5e-9,
            n_q: 0.1,
            f: 1.2,
        }
    }
}

impl SecurityParams {
    pub fn with_f(self, f: f64) -> Self {
        SecurityParams { f, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, eps) in [
            ("eps_smooth", self.eps_smooth),
            ("eps_ec", self.eps_ec),
            ("eps_pa", self.eps_pa),
            ("eps_pe", self.eps_pe),
        ] {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(invalid(name, format!("{eps} is outside (0, 1)")));
            }
        }
        if !(0.0..=1.0).contains(&self.n_q) {
            return Err(invalid("n_q", format!("{} is outside [0, 1]", self.n_q)));
        }
        if !(self.f >= 1.0) {
            return Err(invalid("f", format!("{} is below 1", self.f)));
        }
        Ok(())
    }
}

/// Channel parameters feeding the key-rate formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelEstimate {
    pub q_z: f64,
    pub c64: f64,
    /// Raw coincidences, `N`.
    pub n_total: u64,
    /// Key-map coincidences, `n`.
    pub n_keymap: u64,
    pub m_xx: u64,
    pub m_yx: u64,
    /// Orientation `atan2(e_yx, e_xx)` when known; otherwise the worst case
    /// over orientations is used for the finite-size shrink.
    #[serde(default)]
    pub phase: Option<f64>,
}

impl ChannelEstimate {
    /// Estimate from totals alone, splitting `N` by the passive sifting model:
    /// `N/6` key-map coincidences and `N/6` in each of XX and YX.
    pub fn from_totals(n_total: u64, q_z: f64, c64: f64) -> Self {
        let sixth = (n_total as f64 * SIFTING_FACTOR).round() as u64;
        ChannelEstimate {
            q_z,
            c64,
            n_total,
            n_keymap: sixth,
            m_xx: sixth,
            m_yx: sixth,
            phase: None,
        }
    }

    /// Estimate from measured counts; `None` when any needed basis is empty.
    pub fn from_counts(counts: &BasisPairCounts) -> Option<Self> {
        let est = crate::stats::block_estimate(counts).ok()?;
        Some(Self::from_block(&est))
    }

    pub fn from_block(est: &BlockEstimate) -> Self {
        ChannelEstimate {
            q_z: est.qber_z.value,
            c64: est.c64.value,
            n_total: est.n_total,
            n_keymap: est.n_zz,
            m_xx: est.n_xx,
            m_yx: est.n_yx,
            phase: Some(est.phase.value),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.q_z) {
            return Err(invalid("q_z", format!("{} is outside [0, 0.5]", self.q_z)));
        }
        if !(0.0..=1.0).contains(&self.c64) {
            return Err(invalid("c64", format!("{} is outside [0, 1]", self.c64)));
        }
        if self.n_keymap > self.n_total {
            return Err(invalid("n_keymap", "exceeds n_total"));
        }
        Ok(())
    }
}

/// Binary Shannon entropy in bits.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain {
            function: "binary_entropy",
            value: p,
        });
    }
    Ok(h2(p))
}

fn h2(p: f64) -> f64 {
    let term = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    term(p) + term(1.0 - p)
}

pub fn c66_from_c64(c64: f64) -> f64 {
    2.0 * c64 * c64
}

/// Eve bound with its intermediate quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EveBound {
    pub value: f64,
    pub u: f64,
    pub v: f64,
    /// `C64^2 - (1 - Q)^2 u^2` before clamping at zero.
    pub radicand: f64,
}

pub fn eve_bound(q: f64, c64: f64) -> Result<EveBound> {
    if !(0.0..0.5).contains(&q) {
        return Err(Error::Domain {
            function: "eve_information",
            value: q,
        });
    }
    if !(0.0..=1.0).contains(&c64) {
        return Err(Error::Domain {
            function: "eve_information",
            value: c64,
        });
    }
    let u = (c64 / (1.0 - q)).min(1.0);
    let radicand = c64 * c64 - (1.0 - q).powi(2) * u * u;
    // v > 1 only for (Q, C) pairs no physical state reaches.
    let v = if q > 0.0 {
        (radicand.max(0.0).sqrt() / q).min(1.0)
    } else {
        0.0
    };
    let value = (1.0 - q) * h2((1.0 + u) / 2.0) + q * h2((1.0 + v) / 2.0);
    Ok(EveBound { value, u, v, radicand })
}

pub fn eve_information(q: f64, c64: f64) -> Result<f64> {
    eve_bound(q, c64).map(|b| b.value)
}

/// Secret bits per coincidence in the asymptotic limit.
pub fn asymptotic_rate(q: f64, c64: f64) -> f64 {
    if !(q < 0.5) {
        return 0.0;
    }
    let q = q.max(0.0);
    let c = c64.clamp(0.0, 1.0);
    let ie = eve_information(q, c).expect("domain checked above");
    SIFTING_FACTOR * (1.0 - h2(q) - ie).max(0.0)
}

/// Hoeffding deviation of an empirical frequency from `m` samples.
pub fn hoeffding_deviation(m: f64, eps_pe: f64) -> f64 {
    ((2.0 / eps_pe).ln() / (2.0 * m)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteAdjustment {
    pub q_prime: f64,
    pub c_prime: f64,
    pub xi_q: f64,
    pub xi_xx: f64,
    pub xi_yx: f64,
    /// Orientation used for the shrink (the worst case when unknown).
    pub orientation: f64,
}

fn shrink(e: f64, xi: f64) -> f64 {
    (e.abs() - xi).max(0.0)
}

fn shrunk_c(c: f64, theta: f64, xi_xx: f64, xi_yx: f64) -> f64 {
    shrink(c * theta.cos(), xi_xx).hypot(shrink(c * theta.sin(), xi_yx))
}

/// Worst-case statistical deviations: the QBER moves up by `xi(n_q n)` and
/// each superposition correlation moves toward zero by `xi(m)`.
pub fn finite_adjustments(est: &ChannelEstimate, sp: &SecurityParams) -> Result<FiniteAdjustment> {
    let m_q = sp.n_q * est.n_keymap as f64;
    if !(m_q > 0.0) {
        return Err(Error::ZeroSamples("QBER estimation sample"));
    }
    if est.m_xx == 0 {
        return Err(Error::ZeroSamples("XX correlation sample"));
    }
    if est.m_yx == 0 {
        return Err(Error::ZeroSamples("YX correlation sample"));
    }
    let xi_q = hoeffding_deviation(m_q, sp.eps_pe);
    let xi_xx = hoeffding_deviation(est.m_xx as f64, sp.eps_pe);
    let xi_yx = hoeffding_deviation(est.m_yx as f64, sp.eps_pe);

    let (orientation, c_prime) = match est.phase {
        Some(phase) => (phase, shrunk_c(est.c64, phase, xi_xx, xi_yx)),
        None => {
            const STEPS: usize = 4096;
            (0..=STEPS)
                .map(|k| {
                    let theta = FRAC_PI_2 * k as f64 / STEPS as f64;
                    (theta, shrunk_c(est.c64, theta, xi_xx, xi_yx))
                })
                .fold(
                    (0.0, f64::INFINITY),
                    |best, cur| {
                        if cur.1 < best.1 {
                            cur
                        } else {
                            best
                        }
                    },
                )
        }
    };
    Ok(FiniteAdjustment {
        q_prime: est.q_z + xi_q,
        c_prime,
        xi_q,
        xi_xx,
        xi_yx,
        orientation,
    })
}

/// Where the absolute bit-count terms of the finite-size formula are divided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `- (1/N)[...]` outside the yield prefactor.
    PerRawSignal,
    /// `- (1/n)[...]` inside the bracket.
    PerKeymapSignal,
    /// Absolute terms inside the bracket unnormalized, only `30/N log2(N+1)` scaled.
    AsTypeset,
}

/// How `n_q` enters the error-correction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeakReading {
    /// `n_q` of the key-map basis is consumed; leak is `f h(Q')`.
    Sacrifice,
    /// Leak is literally `n_q f h(Q')`, no sacrifice.
    Multiplier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyReading {
    pub normalization: Normalization,
    pub leak: LeakReading,
}

impl Default for KeyReading {
    fn default() -> Self {
        KeyReading {
            normalization: Normalization::PerRawSignal,
            leak: LeakReading::Sacrifice,
        }
    }
}

impl KeyReading {
    pub fn all() -> Vec<KeyReading> {
        let mut v = Vec::new();
        for normalization in [
            Normalization::PerRawSignal,
            Normalization::PerKeymapSignal,
            Normalization::AsTypeset,
        ] {
            for leak in [LeakReading::Sacrifice, LeakReading::Multiplier] {
                v.push(KeyReading { normalization, leak });
            }
        }
        v
    }
}

impl fmt::Display for KeyReading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = match self.normalization {
            Normalization::PerRawSignal => "per-raw-signal",
            Normalization::PerKeymapSignal => "per-keymap-signal",
            Normalization::AsTypeset => "as-typeset",
        };
        let l = match self.leak {
            LeakReading::Sacrifice => "sacrifice",
            LeakReading::Multiplier => "multiplier",
        };
        write!(f, "{n}/{l}")
    }
}

/// Each named contribution to `r_N`, in bits per raw coincidence. Penalties
/// are positive numbers subtracted from `yield_term`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyTerms {
    pub prefactor: f64,
    pub yield_term: f64,
    pub eve_information: f64,
    pub error_correction: f64,
    pub smoothing: f64,
    pub ec_verification: f64,
    pub privacy_amplification: f64,
    pub coherent_attack: f64,
}

impl KeyTerms {
    pub fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("eve_information", self.eve_information),
            ("error_correction", self.error_correction),
            ("smoothing", self.smoothing),
            ("ec_verification", self.ec_verification),
            ("privacy_amplification", self.privacy_amplification),
            ("coherent_attack", self.coherent_attack),
        ]
    }

    pub fn rate(&self) -> f64 {
        self.yield_term - self.named().iter().map(|(_, v)| v).sum::<f64>()
    }

    /// Largest penalty.
    pub fn binding_term(&self) -> (&'static str, f64) {
        self.named()
            .into_iter()
            .fold(("none", f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyResult {
    pub reading: KeyReading,
    /// Secret bits per raw coincidence, floored at zero.
    pub rate: f64,
    /// Unfloored value of `r_N`.
    pub raw_rate: f64,
    pub secret_bits: u64,
    pub n_total: u64,
    pub asymptotic_rate: f64,
    pub adjustment: FiniteAdjustment,
    pub h_q_prime: f64,
    /// `None` when `Q' >= 1/2`.
    pub i_e: Option<f64>,
    pub terms: KeyTerms,
}

impl KeyResult {
    pub fn is_zero(&self) -> bool {
        self.secret_bits == 0
    }
}

pub fn finite_key(est: &ChannelEstimate, sp: &SecurityParams) -> Result<KeyResult> {
    finite_key_with(est, sp, KeyReading::default())
}

pub fn finite_key_with(est: &ChannelEstimate, sp: &SecurityParams, reading: KeyReading) -> Result<KeyResult> {
    est.validate()?;
    sp.validate()?;
    if est.n_total == 0 {
        return Err(Error::ZeroSamples("raw key"));
    }
    let adj = finite_adjustments(est, sp)?;
    let big_n = est.n_total as f64;
    let n = est.n_keymap as f64;

    let q_prime = adj.q_prime.min(0.5);
    let h_q = h2(q_prime);
    // Q' at or past 1/2 leaves nothing to distil; charge a full bit to Eve.
    let i_e = if adj.q_prime < 0.5 {
        Some(eve_information(adj.q_prime, adj.c_prime.clamp(0.0, 1.0))?)
    } else {
        None
    };

    let (prefactor, leak) = match reading.leak {
        LeakReading::Sacrifice => ((1.0 - sp.n_q) * n / big_n, sp.f * h_q),
        LeakReading::Multiplier => (n / big_n, sp.n_q * sp.f * h_q),
    };
    let smoothing = 7.0 * ((2.0 / sp.eps_smooth).log2() / n).sqrt();
    let ec = (2.0 / sp.eps_ec).log2();
    let pa = 2.0 * (1.0 / sp.eps_pa).log2();
    let coherent = 30.0 * (big_n + 1.0).log2();

    let (ec_term, pa_term, coh_term) = match reading.normalization {
        Normalization::PerRawSignal => (ec / big_n, pa / big_n, coherent / big_n),
        Normalization::PerKeymapSignal => (prefactor * ec / n, prefactor * pa / n, prefactor * coherent / n),
        Normalization::AsTypeset => (prefactor * ec, prefactor * pa, prefactor * coherent / big_n),
    };
    let terms = KeyTerms {
        prefactor,
        yield_term: prefactor,
        eve_information: prefactor * i_e.unwrap_or(1.0),
        error_correction: prefactor * leak,
        smoothing: prefactor * smoothing,
        ec_verification: ec_term,
        privacy_amplification: pa_term,
        coherent_attack: coh_term,
    };
    let raw_rate = terms.rate();
    let rate = raw_rate.max(0.0);
    let secret_bits = (rate * big_n).floor() as u64;
    Ok(KeyResult {
        reading,
        rate,
        raw_rate,
        secret_bits,
        n_total: est.n_total,
        asymptotic_rate: asymptotic_rate(est.q_z, est.c64),
        adjustment: adj,
        h_q_prime: h_q,
        i_e,
        terms,
    })
}

/// Finite-size results under every reading of the absolute terms.
pub fn calibration_report(est: &ChannelEstimate, sp: &SecurityParams) -> Result<Vec<KeyResult>> {
    KeyReading::all()
        .into_iter()
        .map(|r| finite_key_with(est, sp, r))
        .collect()
}

/// Asymptotic rate per block with first-order error propagation.
pub fn rate_series(blocks: &[BlockEstimate]) -> Vec<Estimate> {
    blocks.iter().map(block_rate).collect()
}

pub fn block_rate(b: &BlockEstimate) -> Estimate {
    let (q, c) = (b.qber_z.value, b.c64.value);
    let value = asymptotic_rate(q, c);
    const STEP: f64 = 1e-6;
    let partial = |f: &dyn Fn(f64) -> f64, x: f64, lo: f64, hi: f64| {
        let (a, b) = ((x - STEP).max(lo), (x + STEP).min(hi));
        if b > a {
            (f(b) - f(a)) / (b - a)
        } else {
            0.0
        }
    };
    let dq = partial(&|x| asymptotic_rate(x, c), q, 0.0, 0.5 - 1e-12);
    let dc = partial(&|x| asymptotic_rate(q, x), c, 0.0, 1.0);
    Estimate {
        value,
        error: (dq * b.qber_z.error).hypot(dc * b.c64.error),
    }
}

/// Convenience for callers holding raw counts of a single superposition pair.
pub fn sample_count(counts: &BasisPairCounts, pair: BasisPair) -> u64 {
    counts.get(pair).total()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE_EPS: f64 = 2.5e-9;

    #[test]
    fn entropy_examples() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        // mpmath, 30 digits: 0.251388144690118437...
        assert!((binary_entropy(0.042).unwrap() - 0.251_388_144_690_118_4).abs() < 1e-14);
        assert!(binary_entropy(-0.01).is_err());
        assert!(binary_entropy(1.5).is_err());
    }

    #[test]
    fn c66_examples() {
        assert_eq!(c66_from_c64(1.0), 2.0);
        assert_eq!(c66_from_c64(0.0), 0.0);
        assert!((c66_from_c64(0.8845) - 1.5646805).abs() < 1e-12);
        // The bound only sees C66 through sqrt(C66 / 2) = C64.
        assert!(((c66_from_c64(0.8845) / 2.0).sqrt() - 0.8845).abs() < 1e-15);
    }

    #[test]
    fn eve_examples() {
        assert_eq!(eve_information(0.0, 1.0).unwrap(), 0.0);
        assert!((eve_information(0.0, 0.0).unwrap() - 1.0).abs() < 1e-15);
        // mpmath: 0.266868546748708768
        assert!((eve_information(0.042, 0.8845).unwrap() - 0.266_868_546_748_708_8).abs() < 1e-13);
        assert!(eve_information(0.5, 0.5).is_err());
        assert!(eve_information(0.1, 1.1).is_err());
    }

    #[test]
    fn asymptotic_examples() {
        assert!((asymptotic_rate(0.0, 1.0) - 1.0 / 6.0).abs() < 1e-15);
        // 1 - h(q) is of order 1e-17 here
        assert!(asymptotic_rate(0.5 - 1e-9, 0.9) < 1e-15);
        assert_eq!(asymptotic_rate(0.5, 0.9), 0.0);
        // mpmath: 0.0802905514268621
        assert!((asymptotic_rate(0.042, 0.8845) - 0.080_290_551_426_862_1).abs() < 1e-13);
        assert_eq!(asymptotic_rate(0.042, 0.0), 0.0);
    }

    #[test]
    fn hoeffding_example() {
        // mpmath: 0.0320157166760578713
        assert!((hoeffding_deviation(10_000.0, TABLE_EPS) - 0.032_015_716_676_057_87).abs() < 1e-15);
    }

    #[test]
    fn adjustments_vanish_with_infinite_samples() {
        let big = 1u64 << 60;
        let est = ChannelEstimate {
            q_z: 0.042,
            c64: 0.8845,
            n_total: big,
            n_keymap: big / 6,
            m_xx: big / 6,
            m_yx: big / 6,
            phase: None,
        };
        let adj = finite_adjustments(&est, &SecurityParams::default()).unwrap();
        assert!((adj.q_prime - 0.042).abs() < 1e-7);
        assert!((adj.c_prime - 0.8845).abs() < 1e-7);
    }

    #[test]
    fn zero_qber_still_gets_a_deviation() {
        let est = ChannelEstimate::from_totals(600_000, 0.0, 0.9);
        let adj = finite_adjustments(&est, &SecurityParams::default()).unwrap();
        assert!(adj.q_prime > 0.0);
        assert_eq!(adj.q_prime, adj.xi_q);
    }

    #[test]
    fn zero_samples_is_an_error() {
        let mut est = ChannelEstimate::from_totals(600_000, 0.04, 0.9);
        est.m_yx = 0;
        assert!(matches!(
            finite_adjustments(&est, &SecurityParams::default()),
            Err(Error::ZeroSamples(_))
        ));
        let sp = SecurityParams {
            n_q: 0.0,
            ..SecurityParams::default()
        };
        assert!(finite_adjustments(&ChannelEstimate::from_totals(600, 0.04, 0.9), &sp).is_err());
    }

    #[test]
    fn worst_orientation_is_no_better_than_any_known_one() {
        let mut est = ChannelEstimate::from_totals(50_000, 0.04, 0.88);
        let sp = SecurityParams::default();
        let worst = finite_adjustments(&est, &sp).unwrap().c_prime;
        for k in 0..20 {
            est.phase = Some(-3.0 + 0.3 * k as f64);
            assert!(finite_adjustments(&est, &sp).unwrap().c_prime >= worst - 1e-12);
        }
    }

    #[test]
    fn small_blocks_give_no_key() {
        let est = ChannelEstimate::from_totals(1_000, 0.042, 0.8845);
        let r = finite_key(&est, &SecurityParams::default().with_f(1.0)).unwrap();
        assert!(r.is_zero());
        assert_eq!(r.rate, 0.0);
        assert!(r.raw_rate < 0.0);
    }

    #[test]
    fn terms_add_up() {
        let est = ChannelEstimate::from_totals(5_000_000, 0.03, 0.93);
        for reading in KeyReading::all() {
            let r = finite_key_with(&est, &SecurityParams::default(), reading).unwrap();
            assert!((r.terms.rate() - r.raw_rate).abs() < 1e-15);
        }
    }

    #[test]
    fn security_params_validation() {
        assert!(SecurityParams::default().validate().is_ok());
        assert!(SecurityParams::default().with_f(0.9).validate().is_err());
        let bad = SecurityParams {
            eps_pa: 0.0,
            ..SecurityParams::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn radicand_clamp_is_numerical_noise_only() {
        for i in 0..50 {
            for j in 0..=50 {
                let q = 0.49 * i as f64 / 50.0;
                let c = j as f64 / 50.0;
                let b = eve_bound(q, c).unwrap();
                if b.u < 1.0 {
                    assert!(b.radicand.abs() < 1e-9, "q={q} c={c} radicand={}", b.radicand);
                }
                assert!((0.0..=1.0 + 1e-12).contains(&b.value));
            }
        }
    }

    #[test]
    fn eve_is_one_without_phase_correlations() {
        for i in 0..50 {
            let q = 0.49 * i as f64 / 50.0;
            assert!((eve_information(q, 0.0).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rate_can_rise_with_q_once_u_saturates() {
        // at fixed c, u = c/(1-q) climbs towards 1 and h((1+u)/2) drops steeply
        assert!(asymptotic_rate(0.30, 0.75) > asymptotic_rate(0.29, 0.75));
        assert!(eve_bound(0.30, 0.75).unwrap().u == 1.0);
        assert!(asymptotic_rate(0.21, 0.78) > asymptotic_rate(0.20, 0.78));
        assert!(eve_bound(0.21, 0.78).unwrap().u < 1.0);
    }

    #[test]
    fn asymptotic_rate_is_monotone() {
        let grid: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
        for &c in &grid {
            let mut prev = f64::INFINITY;
            for k in 0..=99 {
                let q = 0.5 * k as f64 / 100.0;
                // phase visibility no better than key-basis visibility
                if c > 1.0 - 2.0 * q {
                    break;
                }
                let r = asymptotic_rate(q, c);
                assert!(r <= prev + 1e-15, "q step at c={c}");
                prev = r;
            }
        }
        for k in 0..=99 {
            let q = 0.5 * k as f64 / 100.0;
            let mut prev = -1.0;
            for &c in &grid {
                let r = asymptotic_rate(q, c);
                assert!(r >= prev - 1e-15, "c step at q={q}");
                prev = r;
            }
        }
    }

    #[test]
    fn finite_never_beats_asymptotic() {
        for &n in &[1e3, 1e4, 1e5, 1e6, 1e7, 1e9] {
            for &(q, c) in &[(0.0, 1.0), (0.02, 0.95), (0.042, 0.8845), (0.08, 0.7)] {
                let est = ChannelEstimate::from_totals(n as u64, q, c);
                for f in [1.0, 1.2] {
                    let r = finite_key(&est, &SecurityParams::default().with_f(f)).unwrap();
                    assert!(r.rate <= asymptotic_rate(q, c) + 1e-15);
                }
            }
        }
    }

    #[test]
    fn finite_rate_climbs_to_the_sacrificed_asymptote() {
        let (q, c) = (0.042, 0.8845);
        let sp = SecurityParams::default().with_f(1.0);
        let mut prev = 0.0;
        for k in 4..=16 {
            let r = finite_key(&ChannelEstimate::from_totals(10u64.pow(k), q, c), &sp).unwrap();
            assert!(r.rate >= prev, "N = 1e{k}");
            prev = r.rate;
        }
        // the n_q sacrifice scales the limit
        assert!((prev - (1.0 - sp.n_q) * asymptotic_rate(q, c)).abs() < 1e-4, "{prev}");
        let tiny = SecurityParams { n_q: 1e-3, ..sp };
        let r = finite_key(&ChannelEstimate::from_totals(10u64.pow(17), q, c), &tiny).unwrap();
        assert!((r.rate - asymptotic_rate(q, c)).abs() < 2e-4, "{}", r.rate);
    }

    #[test]
    fn binding_term_reported() {
        let r = finite_key(
            &ChannelEstimate::from_totals(2_000, 0.042, 0.8845),
            &SecurityParams::default(),
        )
        .unwrap();
        let (name, value) = r.terms.binding_term();
        assert!(value > 0.0);
        assert_ne!(name, "none");
    }
}
