//! Closed-form model of the shared polarization / time-bin entangled pair.
//!
//! The state is `(|H,E> + e^{i phi} |V,L>) / sqrt(2)` with Alice holding the
//! polarization qubit and Bob the time-bin qubit. Noise enters through two
//! visibilities: `visibility_z` scales the computational-basis correlation and
//! `visibility_xy` scales both superposition-basis correlations. The sign
//! convention is the one obtained from the literal Pauli matrices with
//! `|0> = H = E` and `|1> = V = L`, which gives `<Y (x) X> = +sin(phi)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Measurement basis on Alice's (polarization) side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AliceBasis {
    Z,
    X,
    Y,
}

/// Measurement basis on Bob's (time-bin) side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BobBasis {
    Z,
    X,
}

impl AliceBasis {
    pub const ALL: [AliceBasis; 3] = [AliceBasis::Z, AliceBasis::X, AliceBasis::Y];
}

impl BobBasis {
    pub const ALL: [BobBasis; 2] = [BobBasis::Z, BobBasis::X];
}

/// One of the six (Alice, Bob) basis combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BasisPair {
    pub alice: AliceBasis,
    pub bob: BobBasis,
}

impl BasisPair {
    pub const ZZ: BasisPair = BasisPair::new(AliceBasis::Z, BobBasis::Z);
    pub const XX: BasisPair = BasisPair::new(AliceBasis::X, BobBasis::X);
    pub const YX: BasisPair = BasisPair::new(AliceBasis::Y, BobBasis::X);

    /// All six pairs in a fixed order; `index()` is the position in this array.
    pub const ALL: [BasisPair; 6] = [
        BasisPair::new(AliceBasis::Z, BobBasis::Z),
        BasisPair::new(AliceBasis::Z, BobBasis::X),
        BasisPair::new(AliceBasis::X, BobBasis::Z),
        BasisPair::new(AliceBasis::X, BobBasis::X),
        BasisPair::new(AliceBasis::Y, BobBasis::Z),
        BasisPair::new(AliceBasis::Y, BobBasis::X),
    ];

    pub const fn new(alice: AliceBasis, bob: BobBasis) -> Self {
        BasisPair { alice, bob }
    }

    pub const fn index(self) -> usize {
        let a = match self.alice {
            AliceBasis::Z => 0,
            AliceBasis::X => 1,
            AliceBasis::Y => 2,
        };
        let b = match self.bob {
            BobBasis::Z => 0,
            BobBasis::X => 1,
        };
        a * 2 + b
    }

    /// The key-map pair.
    pub fn is_key_map(self) -> bool {
        self == Self::ZZ
    }

    /// Pairs entering the C-parameter.
    pub fn is_superposition(self) -> bool {
        self == Self::XX || self == Self::YX
    }
}

impl fmt::Display for BasisPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}{:?}", self.alice, self.bob)
    }
}

/// A single-party measurement result, `+1` or `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Plus,
    Minus,
}

impl Outcome {
    pub fn sign(self) -> f64 {
        match self {
            Outcome::Plus => 1.0,
            Outcome::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Outcome::Plus => Outcome::Minus,
            Outcome::Minus => Outcome::Plus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridPairState {
    /// Total relative phase in radians.
    pub phase: f64,
    pub visibility_z: f64,
    pub visibility_xy: f64,
}

impl HybridPairState {
    pub fn new(phase: f64, visibility_z: f64, visibility_xy: f64) -> Result<Self> {
        let state = HybridPairState {
            phase,
            visibility_z,
            visibility_xy,
        };
        state.validate()?;
        Ok(state)
    }

    /// Maximally entangled, noiseless state at the given phase.
    pub fn ideal(phase: f64) -> Self {
        HybridPairState {
            phase,
            visibility_z: 1.0,
            visibility_xy: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.phase.is_finite() {
            return Err(invalid("phase", "must be finite"));
        }
        for (name, v) in [
            ("visibility_z", self.visibility_z),
            ("visibility_xy", self.visibility_xy),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(name, format!("{v} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn with_phase(self, phase: f64) -> Self {
        HybridPairState { phase, ..self }
    }

    /// Correlation `<A (x) B>` for the given basis pair.
    pub fn expectation(&self, pair: BasisPair) -> f64 {
        match (pair.alice, pair.bob) {
            (AliceBasis::Z, BobBasis::Z) => self.visibility_z,
            (AliceBasis::X, BobBasis::X) => self.visibility_xy * self.phase.cos(),
            (AliceBasis::Y, BobBasis::X) => self.visibility_xy * self.phase.sin(),
            _ => 0.0,
        }
    }

    pub fn outcome_probabilities(&self, pair: BasisPair) -> OutcomeProbs {
        OutcomeProbs::from_expectation(self.expectation(pair))
    }

    /// Computational-basis error rate implied by `visibility_z`.
    pub fn qber_z(&self) -> f64 {
        (1.0 - self.visibility_z) / 2.0
    }
}

/// Joint outcome distribution for one basis pair, indexed `[alice][bob]`
/// with `0 = +` and `1 = -`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeProbs {
    pub p: [[f64; 2]; 2],
}

impl OutcomeProbs {
    /// `p(a, b) = (1 + a b E) / 4`, so both marginals are exactly 1/2.
    pub fn from_expectation(e: f64) -> Self {
        let same = (1.0 + e) / 4.0;
        let diff = (1.0 - e) / 4.0;
        OutcomeProbs {
            p: [[same, diff], [diff, same]],
        }
    }

    pub fn get(&self, alice: Outcome, bob: Outcome) -> f64 {
        self.p[outcome_index(alice)][outcome_index(bob)]
    }

    pub fn sum(&self) -> f64 {
        self.p.iter().flatten().sum()
    }

    /// `sum a b p(a, b)`.
    pub fn correlation(&self) -> f64 {
        self.p[0][0] + self.p[1][1] - self.p[0][1] - self.p[1][0]
    }

    /// Map a uniform variate in `[0, 1)` to a joint outcome by inverse CDF.
    pub fn sample(&self, u: f64) -> (Outcome, Outcome) {
        let mut acc = 0.0;
        for (a, row) in [Outcome::Plus, Outcome::Minus].into_iter().zip(self.p) {
            for (b, p) in [Outcome::Plus, Outcome::Minus].into_iter().zip(row) {
                acc += p;
                if u < acc {
                    return (a, b);
                }
            }
        }
        (Outcome::Minus, Outcome::Minus)
    }
}

pub(crate) fn outcome_index(o: Outcome) -> usize {
    match o {
        Outcome::Plus => 0,
        Outcome::Minus => 1,
    }
}
