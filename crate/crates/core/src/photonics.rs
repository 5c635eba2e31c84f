//! Physical-layer model: pair source, lossy arms, passive analyzers and
//! detectors, producing time-tag streams for both parties.
//!
//! Alice's passive six-state analyzer picks Z, X or Y with probability 1/3.
//! Bob's unbalanced time-bin analyzer puts the photon in one of three arrival
//! slots: early (Z, +) with probability 1/4, late (Z, -) with 1/4, and the
//! interference slot (X) with 1/2, where the output port carries the outcome.
//!
//! Generation is sharded by emission time. Every shard has its own random
//! substream, so output is independent of how many shards run in parallel.
//! Shards are stitched with a watermark: a tag is never stamped earlier than
//! the start of the shard that emitted it.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::qstate::{AliceBasis, BasisPair, BobBasis, HybridPairState, Outcome};
use crate::rng::{substream, Domain, SimRng};
use crate::tags::TimeTag;

pub const PS_PER_S: f64 = 1e12;

/// Emission-time length of one generation shard.
pub const SHARD_SECONDS: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PhaseTrajectory {
    /// `initial + rate * t`, rad and rad/s.
    Linear { initial: f64, rate: f64 },
    /// Piecewise-linear through `(times[k], phases[k])`, held constant outside.
    Tabulated { times: Vec<f64>, phases: Vec<f64> },
}

impl Default for PhaseTrajectory {
    fn default() -> Self {
        PhaseTrajectory::Linear {
            initial: 0.0,
            rate: 0.0,
        }
    }
}

impl PhaseTrajectory {
    pub fn validate(&self) -> Result<()> {
        match self {
            PhaseTrajectory::Linear { initial, rate } => {
                if !initial.is_finite() || !rate.is_finite() {
                    return Err(invalid("trajectory", "linear ramp must be finite"));
                }
            }
            PhaseTrajectory::Tabulated { times, phases } => {
                if times.is_empty() || times.len() != phases.len() {
                    return Err(invalid(
                        "trajectory",
                        "times and phases must be non-empty and equally long",
                    ));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(invalid("trajectory", "times must be strictly increasing"));
                }
                if times.iter().chain(phases).any(|x| !x.is_finite()) {
                    return Err(invalid("trajectory", "values must be finite"));
                }
            }
        }
        Ok(())
    }

    pub fn phase_at(&self, t: f64) -> f64 {
        match self {
            PhaseTrajectory::Linear { initial, rate } => initial + rate * t,
            PhaseTrajectory::Tabulated { times, phases } => {
                let k = times.partition_point(|&x| x <= t);
                if k == 0 {
                    phases[0]
                } else if k == times.len() {
                    phases[k - 1]
                } else {
                    let f = (t - times[k - 1]) / (times[k] - times[k - 1]);
                    phases[k - 1] + f * (phases[k] - phases[k - 1])
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceModel {
    /// pairs/s
    pub pair_rate: f64,
    /// Reported only; the per-arm totals in [`ChannelModel`] already include it.
    pub heralding_efficiency: f64,
    pub visibility_z: f64,
    pub visibility_xy: f64,
    pub trajectory: PhaseTrajectory,
}

impl Default for SourceModel {
    fn default() -> Self {
        SourceModel {
            pair_rate: 1e7,
            heralding_efficiency: 0.2,
            visibility_z: 0.916,
            visibility_xy: 0.885,
            trajectory: PhaseTrajectory::default(),
        }
    }
}

impl SourceModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.pair_rate > 0.0 && self.pair_rate.is_finite()) {
            return Err(invalid("pair_rate", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.heralding_efficiency) {
            return Err(invalid("heralding_efficiency", "must be in [0, 1]"));
        }
        self.trajectory.validate()?;
        HybridPairState::new(0.0, self.visibility_z, self.visibility_xy).map(|_| ())
    }

    pub fn state_at(&self, t: f64) -> HybridPairState {
        HybridPairState {
            phase: self.trajectory.phase_at(t),
            visibility_z: self.visibility_z,
            visibility_xy: self.visibility_xy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModel {
    pub ptc_throughput: f64,
    pub channel_throughput: f64,
    pub ta_throughput: f64,
    pub analyzer_throughput: f64,
    /// Idler arm, detector efficiency included.
    pub alice_total_efficiency: f64,
    /// Signal arm, detector efficiency included.
    pub bob_total_efficiency: f64,
    /// m
    pub fiber_length: f64,
    /// ns/km
    pub modal_dispersion: f64,
    /// ns
    pub time_bin_separation: f64,
    /// ps, per detector
    pub detector_jitter_sigma: f64,
    /// counts/s per detector
    pub dark_count_rate: f64,
    /// Fixed path delay from emission to Alice's tagger input, ps.
    pub alice_delay: f64,
    /// Fixed path delay from emission to Bob's tagger input (short-short path), ps.
    pub bob_delay: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            ptc_throughput: 0.354,
            channel_throughput: 0.861,
            ta_throughput: 0.670,
            analyzer_throughput: 0.496,
            alice_total_efficiency: 0.093,
            bob_total_efficiency: 0.011,
            fiber_length: 15.0,
            modal_dispersion: 0.353,
            time_bin_separation: 2.2,
            detector_jitter_sigma: 300.0,
            dark_count_rate: 100.0,
            alice_delay: 10_000.0,
            bob_delay: 85_000.0,
        }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("ptc_throughput", self.ptc_throughput),
            ("channel_throughput", self.channel_throughput),
            ("ta_throughput", self.ta_throughput),
            ("analyzer_throughput", self.analyzer_throughput),
            ("alice_total_efficiency", self.alice_total_efficiency),
            ("bob_total_efficiency", self.bob_total_efficiency),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(name, format!("{v} is outside [0, 1]")));
            }
        }
        if !(self.time_bin_separation > 0.0) {
            return Err(invalid("time_bin_separation", "must be positive"));
        }
        for (name, v) in [
            ("fiber_length", self.fiber_length),
            ("modal_dispersion", self.modal_dispersion),
            ("detector_jitter_sigma", self.detector_jitter_sigma),
            ("dark_count_rate", self.dark_count_rate),
            ("alice_delay", self.alice_delay),
            ("bob_delay", self.bob_delay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// PTC throughput without the intrinsic 50 % polarizer loss.
    pub fn adjusted_ptc_throughput(&self) -> f64 {
        2.0 * self.ptc_throughput
    }

    /// Width of the uniform modal-dispersion smear on Bob's arm, ps.
    pub fn dispersion_smear(&self) -> f64 {
        // m * ns/km = ps
        self.fiber_length * self.modal_dispersion
    }

    pub fn slot_spacing_ps(&self) -> f64 {
        self.time_bin_separation * 1000.0
    }

    /// Bob-minus-Alice delay of the early slot, ps.
    pub fn base_delay_ps(&self) -> f64 {
        self.bob_delay - self.alice_delay
    }
}

/// `pair_rate * eta_A * eta_B`, coincidences/s.
pub fn expected_coincidence_rate(src: &SourceModel, ch: &ChannelModel) -> f64 {
    src.pair_rate * ch.alice_total_efficiency * ch.bob_total_efficiency
}

/// What a channel id means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelRole {
    Alice(AliceBasis, Outcome),
    /// One of Bob's two analyzer output ports, named by the X outcome it reports.
    Bob(Outcome),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorLayout {
    pub name: String,
    pub alice: Vec<AliceChannel>,
    pub bob: Vec<BobChannel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliceChannel {
    pub channel: u8,
    pub basis: AliceBasis,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BobChannel {
    pub channel: u8,
    pub outcome: Outcome,
}

impl Default for DetectorLayout {
    fn default() -> Self {
        let mut alice = Vec::new();
        for (i, basis) in AliceBasis::ALL.into_iter().enumerate() {
            for (j, outcome) in [Outcome::Plus, Outcome::Minus].into_iter().enumerate() {
                alice.push(AliceChannel {
                    channel: (2 * i + j) as u8,
                    basis,
                    outcome,
                });
            }
        }
        DetectorLayout {
            name: "six-two".to_string(),
            alice,
            bob: vec![
                BobChannel {
                    channel: 6,
                    outcome: Outcome::Plus,
                },
                BobChannel {
                    channel: 7,
                    outcome: Outcome::Minus,
                },
            ],
        }
    }
}

impl DetectorLayout {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(char::is_whitespace) {
            return Err(Error::InvalidLayout("name must be a non-empty word".into()));
        }
        let mut seen = [false; 256];
        for ch in self
            .alice
            .iter()
            .map(|a| a.channel)
            .chain(self.bob.iter().map(|b| b.channel))
        {
            if std::mem::replace(&mut seen[ch as usize], true) {
                return Err(Error::InvalidLayout(format!("channel {ch} assigned twice")));
            }
        }
        for basis in AliceBasis::ALL {
            for outcome in [Outcome::Plus, Outcome::Minus] {
                let n = self
                    .alice
                    .iter()
                    .filter(|a| a.basis == basis && a.outcome == outcome)
                    .count();
                if n != 1 {
                    return Err(Error::InvalidLayout(format!(
                        "Alice {basis:?}{outcome:?} needs exactly one channel, found {n}"
                    )));
                }
            }
        }
        if self.alice.len() != 6 {
            return Err(Error::InvalidLayout("Alice needs exactly six channels".into()));
        }
        let bob_outcomes: Vec<Outcome> = self.bob.iter().map(|b| b.outcome).collect();
        if self.bob.len() != 2 || bob_outcomes[0] == bob_outcomes[1] {
            return Err(Error::InvalidLayout("Bob needs one channel per analyzer port".into()));
        }
        Ok(())
    }

    pub fn alice_channel(&self, basis: AliceBasis, outcome: Outcome) -> u8 {
        self.alice
            .iter()
            .find(|a| a.basis == basis && a.outcome == outcome)
            .map(|a| a.channel)
            .expect("validated layout")
    }

    pub fn bob_channel(&self, port: Outcome) -> u8 {
        self.bob
            .iter()
            .find(|b| b.outcome == port)
            .map(|b| b.channel)
            .expect("validated layout")
    }

    pub fn is_alice(&self, channel: u8) -> bool {
        self.alice.iter().any(|a| a.channel == channel)
    }

    pub fn is_bob(&self, channel: u8) -> bool {
        self.bob.iter().any(|b| b.channel == channel)
    }

    /// Dense lookup from channel id to role.
    pub fn role_table(&self) -> [Option<ChannelRole>; 256] {
        let mut table = [None; 256];
        for a in &self.alice {
            table[a.channel as usize] = Some(ChannelRole::Alice(a.basis, a.outcome));
        }
        for b in &self.bob {
            table[b.channel as usize] = Some(ChannelRole::Bob(b.outcome));
        }
        table
    }
}

/// Ground truth collected while generating, for checking the analysis chain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truth {
    /// Pairs with at least one detected photon.
    pub detected_pairs: u64,
    /// Pairs detected on both sides.
    pub coincident_pairs: u64,
    pub alice_photon_tags: u64,
    /// Photon tags on Bob's side by arrival slot.
    pub bob_slot_tags: [u64; 3],
    pub dark_tags: u64,
    /// Coincident pairs by basis pair, in `BasisPair::ALL` order.
    pub coincidences_by_pair: [u64; 6],
}

impl Truth {
    fn add(&mut self, o: &Truth) {
        self.detected_pairs += o.detected_pairs;
        self.coincident_pairs += o.coincident_pairs;
        self.alice_photon_tags += o.alice_photon_tags;
        self.dark_tags += o.dark_tags;
        for k in 0..3 {
            self.bob_slot_tags[k] += o.bob_slot_tags[k];
        }
        for k in 0..6 {
            self.coincidences_by_pair[k] += o.coincidences_by_pair[k];
        }
    }
}

/// A sorted piece of both streams. Every later chunk starts at or after
/// the end of this one.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagChunk {
    pub alice: Vec<TimeTag>,
    pub bob: Vec<TimeTag>,
    /// No later tag in either stream is earlier than this.
    pub watermark: Option<u64>,
}

struct Shard {
    alice: Vec<TimeTag>,
    bob: Vec<TimeTag>,
    truth: Truth,
}

/// Streaming generator over both tag streams.
pub struct TagSimulator {
    src: SourceModel,
    ch: ChannelModel,
    layout: DetectorLayout,
    seed: u64,
    duration_ps: u64,
    shard_ps: u64,
    n_shards: u64,
    next_shard: u64,
    ready: VecDeque<Shard>,
    pending: TagChunk,
    truth: Truth,
    finished: bool,
}

impl TagSimulator {
    pub fn new(duration: f64, src: SourceModel, ch: ChannelModel, layout: DetectorLayout, seed: u64) -> Result<Self> {
        if !(duration >= 0.0 && duration.is_finite()) {
            return Err(invalid("duration", "must be finite and non-negative"));
        }
        src.validate()?;
        ch.validate()?;
        layout.validate()?;
        let duration_ps = (duration * PS_PER_S).round() as u64;
        let shard_ps = (SHARD_SECONDS * PS_PER_S) as u64;
        Ok(TagSimulator {
            src,
            ch,
            layout,
            seed,
            duration_ps,
            shard_ps,
            n_shards: duration_ps.div_ceil(shard_ps),
            next_shard: 0,
            ready: VecDeque::new(),
            pending: TagChunk::default(),
            truth: Truth::default(),
            finished: false,
        })
    }

    /// Totals over the shards generated so far.
    pub fn truth(&self) -> &Truth {
        &self.truth
    }

    pub fn layout(&self) -> &DetectorLayout {
        &self.layout
    }

    fn refill(&mut self) {
        let batch = (2 * rayon::current_num_threads()).max(4) as u64;
        let end = (self.next_shard + batch).min(self.n_shards);
        let shards: Vec<Shard> = (self.next_shard..end)
            .into_par_iter()
            .map(|k| self.generate_shard(k))
            .collect();
        self.next_shard = end;
        self.ready.extend(shards);
    }

    fn generate_shard(&self, k: u64) -> Shard {
        let mut rng = substream(self.seed, Domain::Photonics, k);
        let start_ps = k * self.shard_ps;
        let end_ps = ((k + 1) * self.shard_ps).min(self.duration_ps);
        let mut gen = ShardGen::new(&self.src, &self.ch, &self.layout, start_ps);

        let (eta_a, eta_b) = (self.ch.alice_total_efficiency, self.ch.bob_total_efficiency);
        let p_any = 1.0 - (1.0 - eta_a) * (1.0 - eta_b);
        let event_rate = self.src.pair_rate * p_any / PS_PER_S;
        if event_rate > 0.0 {
            let gap = Exp::new(event_rate).expect("positive rate");
            let mut t = start_ps as f64;
            loop {
                t += gap.sample(&mut rng);
                if t >= end_ps as f64 {
                    break;
                }
                let u = rng.random::<f64>() * p_any;
                let (alice, bob) = if u < eta_a * eta_b {
                    (true, true)
                } else if u < eta_a {
                    (true, false)
                } else {
                    (false, true)
                };
                gen.emit(&mut rng, t, alice, bob);
            }
        }
        if self.ch.dark_count_rate > 0.0 && end_ps > start_ps {
            let span = (end_ps - start_ps) as f64;
            let mean = self.ch.dark_count_rate * span / PS_PER_S;
            let channels: Vec<(u8, bool)> = self
                .layout
                .alice
                .iter()
                .map(|a| (a.channel, true))
                .chain(self.layout.bob.iter().map(|b| (b.channel, false)))
                .collect();
            let poisson = Poisson::new(mean).expect("positive mean");
            for (channel, is_alice) in channels {
                let n = poisson.sample(&mut rng) as u64;
                for _ in 0..n {
                    let ts = start_ps + (rng.random::<f64>() * span) as u64;
                    let tag = TimeTag::new(ts, channel);
                    if is_alice {
                        gen.alice.push(tag);
                    } else {
                        gen.bob.push(tag);
                    }
                }
                gen.truth.dark_tags += n;
            }
        }
        gen.alice.sort_unstable();
        gen.bob.sort_unstable();
        Shard {
            alice: gen.alice,
            bob: gen.bob,
            truth: gen.truth,
        }
    }

    /// Next sorted chunk, or `None` once both streams are exhausted.
    pub fn next_chunk(&mut self) -> Option<TagChunk> {
        if self.finished {
            return None;
        }
        if self.ready.is_empty() && self.next_shard < self.n_shards {
            self.refill();
        }
        match self.ready.pop_front() {
            Some(shard) => {
                self.truth.add(&shard.truth);
                let watermark = (self.next_shard - self.ready.len() as u64) * self.shard_ps;
                let last = self.ready.is_empty() && self.next_shard == self.n_shards;
                let alice = merge_sorted(std::mem::take(&mut self.pending.alice), shard.alice);
                let bob = merge_sorted(std::mem::take(&mut self.pending.bob), shard.bob);
                if last {
                    self.finished = true;
                    return Some(TagChunk {
                        alice,
                        bob,
                        watermark: None,
                    });
                }
                let (alice, keep_a) = split_at_watermark(alice, watermark);
                let (bob, keep_b) = split_at_watermark(bob, watermark);
                self.pending = TagChunk {
                    alice: keep_a,
                    bob: keep_b,
                    watermark: None,
                };
                Some(TagChunk {
                    alice,
                    bob,
                    watermark: Some(watermark),
                })
            }
            None => {
                self.finished = true;
                let rest = std::mem::take(&mut self.pending);
                (!rest.alice.is_empty() || !rest.bob.is_empty()).then_some(rest)
            }
        }
    }
}

impl Iterator for TagSimulator {
    type Item = TagChunk;

    fn next(&mut self) -> Option<TagChunk> {
        self.next_chunk()
    }
}

fn merge_sorted(a: Vec<TimeTag>, b: Vec<TimeTag>) -> Vec<TimeTag> {
    if a.is_empty() {
        return b;
    }
    if b.is_empty() {
        return a;
    }
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if b[j] < a[i] {
            out.push(b[j]);
            j += 1;
        } else {
            out.push(a[i]);
            i += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

fn split_at_watermark(mut tags: Vec<TimeTag>, watermark: u64) -> (Vec<TimeTag>, Vec<TimeTag>) {
    let k = tags.partition_point(|t| t.timestamp < watermark);
    let rest = tags.split_off(k);
    (tags, rest)
}

struct ShardGen<'a> {
    src: &'a SourceModel,
    layout: &'a DetectorLayout,
    floor_ps: u64,
    alice_delay: f64,
    bob_delay: f64,
    spacing: f64,
    smear: f64,
    jitter: Option<Normal<f64>>,
    alice: Vec<TimeTag>,
    bob: Vec<TimeTag>,
    truth: Truth,
}

impl<'a> ShardGen<'a> {
    fn new(src: &'a SourceModel, ch: &ChannelModel, layout: &'a DetectorLayout, floor_ps: u64) -> Self {
        ShardGen {
            src,
            layout,
            floor_ps,
            alice_delay: ch.alice_delay,
            bob_delay: ch.bob_delay,
            spacing: ch.slot_spacing_ps(),
            smear: ch.dispersion_smear(),
            jitter: (ch.detector_jitter_sigma > 0.0).then(|| Normal::new(0.0, ch.detector_jitter_sigma).unwrap()),
            alice: Vec::new(),
            bob: Vec::new(),
            truth: Truth::default(),
        }
    }

    fn stamp(&self, rng: &mut SimRng, t: f64) -> u64 {
        let j = self.jitter.map_or(0.0, |n| n.sample(rng));
        let ts = (t + j).round();
        if ts <= self.floor_ps as f64 {
            self.floor_ps
        } else {
            ts as u64
        }
    }

    fn emit(&mut self, rng: &mut SimRng, t_ps: f64, alice_seen: bool, bob_seen: bool) {
        self.truth.detected_pairs += 1;
        let alice_basis = AliceBasis::ALL[rng.random_range(0..3)];
        let bob_basis = if rng.random::<bool>() { BobBasis::Z } else { BobBasis::X };
        let pair = BasisPair::new(alice_basis, bob_basis);
        let (a, b) = if alice_seen && bob_seen {
            self.truth.coincident_pairs += 1;
            self.truth.coincidences_by_pair[pair.index()] += 1;
            let state = self.src.state_at(t_ps / PS_PER_S);
            state.outcome_probabilities(pair).sample(rng.random::<f64>())
        } else {
            let coin = |r: &mut SimRng| {
                if r.random::<bool>() {
                    Outcome::Plus
                } else {
                    Outcome::Minus
                }
            };
            (coin(rng), coin(rng))
        };
        if alice_seen {
            let ts = self.stamp(rng, t_ps + self.alice_delay);
            self.alice
                .push(TimeTag::new(ts, self.layout.alice_channel(alice_basis, a)));
            self.truth.alice_photon_tags += 1;
        }
        if bob_seen {
            let (slot, port) = match bob_basis {
                BobBasis::Z => {
                    let slot = if b == Outcome::Plus { 0 } else { 2 };
                    let port = if rng.random::<bool>() {
                        Outcome::Plus
                    } else {
                        Outcome::Minus
                    };
                    (slot, port)
                }
                BobBasis::X => (1, b),
            };
            let smear = if self.smear > 0.0 {
                rng.random::<f64>() * self.smear
            } else {
                0.0
            };
            let ts = self.stamp(rng, t_ps + self.bob_delay + slot as f64 * self.spacing + smear);
            self.bob.push(TimeTag::new(ts, self.layout.bob_channel(port)));
            self.truth.bob_slot_tags[slot] += 1;
        }
    }
}

/// Generate both complete streams in memory.
pub fn simulate_tagstream(
    duration: f64,
    src: &SourceModel,
    ch: &ChannelModel,
    layout: &DetectorLayout,
    seed: u64,
) -> Result<(Vec<TimeTag>, Vec<TimeTag>)> {
    let (alice, bob, _) = simulate_with_truth(duration, src, ch, layout, seed)?;
    Ok((alice, bob))
}

pub fn simulate_with_truth(
    duration: f64,
    src: &SourceModel,
    ch: &ChannelModel,
    layout: &DetectorLayout,
    seed: u64,
) -> Result<(Vec<TimeTag>, Vec<TimeTag>, Truth)> {
    let mut sim = TagSimulator::new(duration, src.clone(), ch.clone(), layout.clone(), seed)?;
    let (mut alice, mut bob) = (Vec::new(), Vec::new());
    while let Some(chunk) = sim.next_chunk() {
        alice.extend(chunk.alice);
        bob.extend(chunk.bob);
    }
    Ok((alice, bob, *sim.truth()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lossless() -> ChannelModel {
        ChannelModel {
            alice_total_efficiency: 1.0,
            bob_total_efficiency: 1.0,
            detector_jitter_sigma: 0.0,
            dark_count_rate: 0.0,
            fiber_length: 0.0,
            ..ChannelModel::default()
        }
    }

    #[test]
    fn coincidence_rate_examples() {
        let (src, ch) = (SourceModel::default(), ChannelModel::default());
        assert!((expected_coincidence_rate(&src, &ch) - 10_230.0).abs() < 1e-6);
        let dead = ChannelModel {
            bob_total_efficiency: 0.0,
            ..ch.clone()
        };
        assert_eq!(expected_coincidence_rate(&src, &dead), 0.0);
        let doubled = SourceModel {
            pair_rate: 2e7,
            ..src.clone()
        };
        assert_eq!(
            expected_coincidence_rate(&doubled, &ch),
            2.0 * expected_coincidence_rate(&src, &ch)
        );
    }

    #[test]
    fn derived_channel_quantities() {
        let ch = ChannelModel::default();
        assert!((ch.adjusted_ptc_throughput() - 0.708).abs() < 1e-12);
        assert!((ch.dispersion_smear() - 5.295).abs() < 1e-12);
        assert_eq!(ch.slot_spacing_ps(), 2200.0);
        assert_eq!(ch.base_delay_ps(), 75_000.0);
    }

    #[test]
    fn layout_validation() {
        let ok = DetectorLayout::default();
        ok.validate().unwrap();
        let mut dup = ok.clone();
        dup.bob[1].channel = 3;
        assert!(matches!(dup.validate(), Err(Error::InvalidLayout(_))));
        let mut missing = ok.clone();
        missing.alice[5].outcome = Outcome::Plus;
        assert!(missing.validate().is_err());
        let mut same_port = ok.clone();
        same_port.bob[1].outcome = Outcome::Plus;
        assert!(same_port.validate().is_err());
        let table = ok.role_table();
        assert_eq!(table[4], Some(ChannelRole::Alice(AliceBasis::Y, Outcome::Plus)));
        assert_eq!(table[7], Some(ChannelRole::Bob(Outcome::Minus)));
        assert_eq!(table[8], None);
    }

    #[test]
    fn tabulated_trajectory_interpolates_and_holds() {
        let t = PhaseTrajectory::Tabulated {
            times: vec![0.0, 1.0, 3.0],
            phases: vec![0.0, 1.0, 0.0],
        };
        t.validate().unwrap();
        assert_eq!(t.phase_at(-1.0), 0.0);
        assert_eq!(t.phase_at(0.5), 0.5);
        assert_eq!(t.phase_at(2.0), 0.5);
        assert_eq!(t.phase_at(9.0), 0.0);
        let bad = PhaseTrajectory::Tabulated {
            times: vec![0.0, 0.0],
            phases: vec![0.0, 1.0],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn lossless_run_gives_deterministic_slots() {
        let src = SourceModel {
            pair_rate: 2e5,
            ..SourceModel::default()
        };
        let ch = lossless();
        let layout = DetectorLayout::default();
        let (alice, bob, truth) = simulate_with_truth(0.25, &src, &ch, &layout, 3).unwrap();
        assert_eq!(alice.len(), bob.len());
        assert_eq!(alice.len() as u64, truth.coincident_pairs);
        // Pair every tag by emission order: with no jitter, offsets are exact.
        let mut a_sorted: Vec<u64> = alice.iter().map(|t| t.timestamp).collect();
        a_sorted.sort_unstable();
        for tag in &bob {
            let ok = [0u64, 2200, 4400].iter().any(|off| {
                let emitted = tag.timestamp - 75_000 - off;
                a_sorted.binary_search(&emitted).is_ok()
            });
            assert!(ok);
        }
    }

    #[test]
    fn streams_are_sorted_and_sharding_is_invisible() {
        let src = SourceModel {
            pair_rate: 5e5,
            ..SourceModel::default()
        };
        let ch = ChannelModel {
            alice_total_efficiency: 0.5,
            bob_total_efficiency: 0.3,
            dark_count_rate: 5e3,
            ..ChannelModel::default()
        };
        let layout = DetectorLayout::default();
        let (a, b) = simulate_tagstream(0.35, &src, &ch, &layout, 9).unwrap();
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert!(b.windows(2).all(|w| w[0] <= w[1]));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let (a1, b1) = pool.install(|| simulate_tagstream(0.35, &src, &ch, &layout, 9).unwrap());
        assert_eq!(a, a1);
        assert_eq!(b, b1);
        let mut sim = TagSimulator::new(0.35, src, ch, layout, 9).unwrap();
        let mut last = 0;
        while let Some(c) = sim.next_chunk() {
            let lo = c.alice.iter().chain(&c.bob).map(|t| t.timestamp).min().unwrap_or(last);
            assert!(lo >= last);
            last = c.alice.iter().chain(&c.bob).map(|t| t.timestamp).max().unwrap_or(last);
        }
    }

    #[test]
    fn zero_duration_is_empty() {
        let (a, b) = simulate_tagstream(
            0.0,
            &SourceModel::default(),
            &ChannelModel::default(),
            &DetectorLayout::default(),
            1,
        )
        .unwrap();
        assert!(a.is_empty() && b.is_empty());
    }

    #[test]
    fn one_second_counts_match_poisson_budget() {
        let src = SourceModel::default();
        let ch = ChannelModel {
            dark_count_rate: 0.0,
            ..ChannelModel::default()
        };
        let (_, bob, truth) = simulate_with_truth(1.0, &src, &ch, &DetectorLayout::default(), 21).unwrap();
        let want_bob = src.pair_rate * ch.bob_total_efficiency;
        assert!((bob.len() as f64 - want_bob).abs() < 3.0 * want_bob.sqrt());
        let want_c = expected_coincidence_rate(&src, &ch);
        assert!((truth.coincident_pairs as f64 - want_c).abs() < 3.0 * want_c.sqrt());
        let n = bob.len() as f64;
        let interference = truth.bob_slot_tags[1] as f64 / n;
        assert!((interference - 0.5).abs() < 3.0 * (0.25 / n).sqrt());
    }

    #[test]
    fn dark_counts_are_uniform_per_channel() {
        let ch = ChannelModel {
            alice_total_efficiency: 0.0,
            bob_total_efficiency: 0.0,
            dark_count_rate: 20_000.0,
            ..ChannelModel::default()
        };
        let (a, b) = simulate_tagstream(1.0, &SourceModel::default(), &ch, &DetectorLayout::default(), 2).unwrap();
        for (tags, n_ch) in [(&a, 6.0), (&b, 2.0)] {
            let want = 20_000.0 * n_ch;
            assert!((tags.len() as f64 - want).abs() < 3.0 * f64::sqrt(want));
            let early = tags.iter().filter(|t| t.timestamp < 500_000_000_000).count() as f64;
            assert!((early / tags.len() as f64 - 0.5).abs() < 3.0 * (0.25 / tags.len() as f64).sqrt());
        }
    }
}
