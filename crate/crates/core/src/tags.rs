//! Coincidence finding, basis classification and per-block accumulation over
//! sorted time-tag streams.
//!
//! Pairing rule: Bob tags are taken in stream order. Each one pairs with the
//! unused Alice tag whose delay `bob - alice` lies in
//! `[d0 - W, d0 + 2S + W]` and is closest to one of the slot centers
//! `d0, d0 + S, d0 + 2S`; ties go to the earlier Alice tag. Output is ordered
//! by Alice stream position.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::photonics::{ChannelRole, DetectorLayout, PS_PER_S};
use crate::qstate::{BasisPair, BobBasis, Outcome};
use crate::stats::BasisPairCounts;

/// One detection event. Ordered by timestamp, then channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeTag {
    /// ps
    pub timestamp: u64,
    pub channel: u8,
}

impl TimeTag {
    pub const fn new(timestamp: u64, channel: u8) -> Self {
        TimeTag { timestamp, channel }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoincidenceConfig {
    /// Delay of the early slot, `d0`, ps.
    pub base_delay: i64,
    /// ps
    pub slot_spacing: i64,
    /// ps
    pub slot_halfwidth: i64,
    /// Extra acceptance on either side of the outer slot centers, ps.
    pub window_halfwidth: i64,
    pub layout: DetectorLayout,
}

impl Default for CoincidenceConfig {
    fn default() -> Self {
        CoincidenceConfig {
            base_delay: 75_000,
            slot_spacing: 2200,
            slot_halfwidth: 500,
            window_halfwidth: 500,
            layout: DetectorLayout::default(),
        }
    }
}

impl CoincidenceConfig {
    /// Slot and window half-widths set together.
    pub fn with_halfwidth(self, halfwidth: i64) -> Self {
        CoincidenceConfig {
            slot_halfwidth: halfwidth,
            window_halfwidth: halfwidth,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.slot_spacing <= 0 {
            return Err(invalid("slot_spacing", "must be positive"));
        }
        if self.slot_halfwidth < 0 || 2 * self.slot_halfwidth >= self.slot_spacing {
            return Err(invalid("slot_halfwidth", "slots would overlap"));
        }
        if self.window_halfwidth < self.slot_halfwidth {
            return Err(invalid("window_halfwidth", "must cover the slot half-width"));
        }
        self.layout.validate()
    }

    pub fn slot_centers(&self) -> [i64; 3] {
        [
            self.base_delay,
            self.base_delay + self.slot_spacing,
            self.base_delay + 2 * self.slot_spacing,
        ]
    }

    /// Inclusive delay range accepted by the matcher.
    pub fn delay_window(&self) -> (i64, i64) {
        (
            self.base_delay - self.window_halfwidth,
            self.base_delay + 2 * self.slot_spacing + self.window_halfwidth,
        )
    }

    /// Distance from `delay` to the nearest slot center.
    pub fn slot_distance(&self, delay: i64) -> i64 {
        self.slot_centers().iter().map(|c| (delay - c).abs()).min().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Coincidence {
    pub alice: TimeTag,
    pub bob: TimeTag,
    /// `bob - alice`, ps
    pub delay: i64,
}

struct Candidate {
    tag: TimeTag,
    partner: Option<(TimeTag, i64)>,
}

/// Streaming one-to-one matcher. Feed sorted chunks of both streams, then
/// call [`CoincidenceMatcher::finish`]; memory stays bounded by the delay
/// window as long as both streams advance.
pub struct CoincidenceMatcher {
    lo: i64,
    hi: i64,
    centers: [i64; 3],
    window: VecDeque<Candidate>,
    alice_pending: VecDeque<TimeTag>,
    bob_pending: VecDeque<TimeTag>,
    last_alice: Option<u64>,
    last_bob: Option<u64>,
    watermark: u64,
    n_alice: u64,
    n_bob: u64,
}

impl CoincidenceMatcher {
    pub fn new(cfg: &CoincidenceConfig) -> Result<Self> {
        cfg.validate()?;
        let (lo, hi) = cfg.delay_window();
        Ok(CoincidenceMatcher {
            lo,
            hi,
            centers: cfg.slot_centers(),
            window: VecDeque::new(),
            alice_pending: VecDeque::new(),
            bob_pending: VecDeque::new(),
            last_alice: None,
            last_bob: None,
            watermark: 0,
            n_alice: 0,
            n_bob: 0,
        })
    }

    fn check_sorted(stream: &'static str, tags: &[TimeTag], last: &mut Option<u64>, count: &mut u64) -> Result<()> {
        for t in tags {
            if let Some(prev) = *last {
                if t.timestamp < prev {
                    return Err(Error::UnsortedInput {
                        stream,
                        index: *count,
                        previous: prev,
                        current: t.timestamp,
                    });
                }
            }
            *last = Some(t.timestamp);
            *count += 1;
        }
        Ok(())
    }

    /// Add the next pieces of both streams. `watermark`, when given, promises
    /// that no later tag in either stream is earlier than it.
    pub fn push(
        &mut self,
        alice: &[TimeTag],
        bob: &[TimeTag],
        watermark: Option<u64>,
        out: &mut Vec<Coincidence>,
    ) -> Result<()> {
        Self::check_sorted("alice", alice, &mut self.last_alice, &mut self.n_alice)?;
        Self::check_sorted("bob", bob, &mut self.last_bob, &mut self.n_bob)?;
        self.alice_pending.extend(alice);
        self.bob_pending.extend(bob);
        if let Some(w) = watermark {
            self.watermark = self.watermark.max(w);
        }
        self.process(false, out);
        Ok(())
    }

    pub fn finish(mut self, out: &mut Vec<Coincidence>) {
        self.process(true, out);
        for c in self.window.drain(..) {
            if let Some((bob, delay)) = c.partner {
                out.push(Coincidence {
                    alice: c.tag,
                    bob,
                    delay,
                });
            }
        }
    }

    fn evict_before(&mut self, bound: i64, out: &mut Vec<Coincidence>) {
        while let Some(front) = self.window.front() {
            if front.tag.timestamp as i64 >= bound {
                break;
            }
            let c = self.window.pop_front().unwrap();
            if let Some((bob, delay)) = c.partner {
                out.push(Coincidence {
                    alice: c.tag,
                    bob,
                    delay,
                });
            }
        }
    }

    fn process(&mut self, last: bool, out: &mut Vec<Coincidence>) {
        // Alice tags earlier than this are all present.
        let alice_horizon = self.watermark.max(self.last_alice.unwrap_or(0)) as i64;
        while let Some(&b) = self.bob_pending.front() {
            let bt = b.timestamp as i64;
            if !last && bt - self.lo >= alice_horizon {
                break;
            }
            self.bob_pending.pop_front();
            while let Some(&a) = self.alice_pending.front() {
                if a.timestamp as i64 > bt - self.lo {
                    break;
                }
                self.alice_pending.pop_front();
                self.window.push_back(Candidate { tag: a, partner: None });
            }
            self.evict_before(bt - self.hi, out);

            let mut best: Option<(usize, i64, i64)> = None;
            for (k, c) in self.window.iter().enumerate() {
                if c.partner.is_some() {
                    continue;
                }
                let delay = bt - c.tag.timestamp as i64;
                if delay < self.lo || delay > self.hi {
                    continue;
                }
                let score = self.centers.iter().map(|s| (delay - s).abs()).min().unwrap();
                if best.is_none_or(|(_, s, _)| score < s) {
                    best = Some((k, score, delay));
                }
            }
            if let Some((k, _, delay)) = best {
                self.window[k].partner = Some((b, delay));
            }
        }
        if last {
            return;
        }
        // Bob tags still to come are no earlier than this.
        let bob_floor = match self.bob_pending.front() {
            Some(b) => b.timestamp,
            None => self.watermark.max(self.last_bob.unwrap_or(0)),
        } as i64;
        let bound = bob_floor - self.hi;
        self.evict_before(bound, out);
        if self.window.is_empty() {
            while let Some(a) = self.alice_pending.front() {
                if a.timestamp as i64 >= bound {
                    break;
                }
                self.alice_pending.pop_front();
            }
        }
    }
}

/// Match two complete sorted streams.
pub fn find_coincidences(alice: &[TimeTag], bob: &[TimeTag], cfg: &CoincidenceConfig) -> Result<Vec<Coincidence>> {
    let mut m = CoincidenceMatcher::new(cfg)?;
    let mut out = Vec::with_capacity(bob.len().min(alice.len()));
    m.push(alice, bob, None, &mut out)?;
    m.finish(&mut out);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Unclassified {
    BetweenSlots,
    UnknownChannel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    Pair {
        pair: BasisPair,
        alice: Outcome,
        bob: Outcome,
        slot: u8,
    },
    Unclassified(Unclassified),
}

/// Precomputed channel roles and slot geometry.
pub struct Classifier {
    roles: [Option<ChannelRole>; 256],
    centers: [i64; 3],
    halfwidth: i64,
}

impl Classifier {
    pub fn new(cfg: &CoincidenceConfig) -> Self {
        Classifier {
            roles: cfg.layout.role_table(),
            centers: cfg.slot_centers(),
            halfwidth: cfg.slot_halfwidth,
        }
    }

    pub fn classify(&self, c: &Coincidence) -> Classification {
        let (alice_basis, alice_outcome) = match self.roles[c.alice.channel as usize] {
            Some(ChannelRole::Alice(b, o)) => (b, o),
            _ => return Classification::Unclassified(Unclassified::UnknownChannel),
        };
        let port = match self.roles[c.bob.channel as usize] {
            Some(ChannelRole::Bob(o)) => o,
            _ => return Classification::Unclassified(Unclassified::UnknownChannel),
        };
        let slot = match self.centers.iter().position(|s| (c.delay - s).abs() <= self.halfwidth) {
            Some(k) => k,
            None => return Classification::Unclassified(Unclassified::BetweenSlots),
        };
        let (bob_basis, bob_outcome) = match slot {
            0 => (BobBasis::Z, Outcome::Plus),
            1 => (BobBasis::X, port),
            _ => (BobBasis::Z, Outcome::Minus),
        };
        Classification::Pair {
            pair: BasisPair::new(alice_basis, bob_basis),
            alice: alice_outcome,
            bob: bob_outcome,
            slot: slot as u8,
        }
    }
}

pub fn classify(c: &Coincidence, cfg: &CoincidenceConfig) -> Classification {
    Classifier::new(cfg).classify(c)
}

/// Bins classified coincidences into blocks by Alice timestamp. Block `k`
/// covers `[origin + k T, origin + (k + 1) T)`.
pub struct BlockAccumulator {
    block_ps: u64,
    block_duration: f64,
    origin: Option<u64>,
    blocks: Vec<BasisPairCounts>,
}

impl BlockAccumulator {
    /// Blocks aligned to the first event seen.
    pub fn new(block_duration: f64) -> Result<Self> {
        Self::build(block_duration, None)
    }

    /// Blocks aligned to a fixed origin, ps.
    pub fn with_origin(block_duration: f64, origin: u64) -> Result<Self> {
        Self::build(block_duration, Some(origin))
    }

    fn build(block_duration: f64, origin: Option<u64>) -> Result<Self> {
        if !(block_duration > 0.0 && block_duration.is_finite()) {
            return Err(invalid("block_duration", "must be positive"));
        }
        let block_ps = (block_duration * PS_PER_S).round().max(1.0) as u64;
        Ok(BlockAccumulator {
            block_ps,
            block_duration,
            origin,
            blocks: Vec::new(),
        })
    }

    fn block(&mut self, alice_ts: u64) -> &mut BasisPairCounts {
        let origin = *self.origin.get_or_insert(alice_ts / self.block_ps * self.block_ps);
        let k = (alice_ts.saturating_sub(origin) / self.block_ps) as usize;
        self.ensure(k + 1);
        &mut self.blocks[k]
    }

    fn ensure(&mut self, n: usize) {
        let origin = self.origin.unwrap_or(0);
        while self.blocks.len() < n {
            let start = (origin + self.blocks.len() as u64 * self.block_ps) as f64 / PS_PER_S;
            self.blocks
                .push(BasisPairCounts::new(start, self.block_duration).expect("validated duration"));
        }
    }

    pub fn add(&mut self, c: &Coincidence, class: Classification) {
        let block = self.block(c.alice.timestamp);
        match class {
            Classification::Pair { pair, alice, bob, .. } => block.record(pair, alice, bob),
            Classification::Unclassified(_) => block.unclassified += 1,
        }
    }

    /// Pad with empty blocks so the series covers `[origin, origin + span)`.
    pub fn cover(&mut self, span_ps: u64) {
        if self.origin.is_none() {
            self.origin = Some(0);
        }
        self.ensure(span_ps.div_ceil(self.block_ps) as usize);
    }

    pub fn finish(self) -> Vec<BasisPairCounts> {
        self.blocks
    }
}

pub fn accumulate(
    classified: impl IntoIterator<Item = (Coincidence, Classification)>,
    block_duration: f64,
) -> Result<Vec<BasisPairCounts>> {
    let mut acc = BlockAccumulator::new(block_duration)?;
    for (c, class) in classified {
        acc.add(&c, class);
    }
    Ok(acc.finish())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayHistogram {
    /// Lower edge of bin 0, ps.
    pub lo: i64,
    pub bin_width: i64,
    pub counts: Vec<u64>,
}

impl DelayHistogram {
    pub fn bin_center(&self, k: usize) -> f64 {
        self.lo as f64 + (k as f64 + 0.5) * self.bin_width as f64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Calls `f` with every `bob - alice` delay in `[lo, hi)` over all pairs.
fn for_each_delay(alice: &[TimeTag], bob: &[TimeTag], lo: i64, hi: i64, mut f: impl FnMut(i64)) {
    let mut start = 0;
    for b in bob {
        let bt = b.timestamp as i64;
        while start < alice.len() && (alice[start].timestamp as i64) <= bt - hi {
            start += 1;
        }
        for a in &alice[start..] {
            let d = bt - a.timestamp as i64;
            if d < lo {
                break;
            }
            if d < hi {
                f(d);
            }
        }
    }
}

/// Histogram of all-pairs delays in `[range.0, range.1)`.
pub fn delay_histogram(
    alice: &[TimeTag],
    bob: &[TimeTag],
    range: (i64, i64),
    bin_width: i64,
) -> Result<DelayHistogram> {
    check_range(range, bin_width)?;
    let n_bins = ((range.1 - range.0) as u64).div_ceil(bin_width as u64) as usize;
    let mut counts = vec![0u64; n_bins];
    for_each_delay(alice, bob, range.0, range.1, |d| {
        counts[((d - range.0) / bin_width) as usize] += 1;
    });
    Ok(DelayHistogram {
        lo: range.0,
        bin_width,
        counts,
    })
}

pub fn collect_delays(alice: &[TimeTag], bob: &[TimeTag], range: (i64, i64)) -> Vec<i64> {
    let mut out = Vec::new();
    for_each_delay(alice, bob, range.0, range.1, |d| out.push(d));
    out
}

fn check_range(range: (i64, i64), bin_width: i64) -> Result<()> {
    if bin_width <= 0 {
        return Err(invalid("bin_width", "must be positive"));
    }
    if range.1 <= range.0 {
        return Err(invalid("range", "upper edge must exceed lower edge"));
    }
    Ok(())
}

pub fn histogram_from_delays(delays: &[i64], range: (i64, i64), bin_width: i64) -> Result<DelayHistogram> {
    check_range(range, bin_width)?;
    let n_bins = ((range.1 - range.0) as u64).div_ceil(bin_width as u64) as usize;
    let mut counts = vec![0u64; n_bins];
    for &d in delays {
        if d >= range.0 && d < range.1 {
            counts[((d - range.0) / bin_width) as usize] += 1;
        }
    }
    Ok(DelayHistogram {
        lo: range.0,
        bin_width,
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// ps
    pub center: f64,
    /// Robust standard deviation (scaled MAD), ps.
    pub width: f64,
    /// Background-subtracted count.
    pub area: f64,
    pub background: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub peaks: [Peak; 3],
    /// Mean of the two peak separations, ps.
    pub spacing: f64,
    pub base_delay: f64,
    pub histogram: DelayHistogram,
}

impl Calibration {
    /// Coincidence settings using the fitted early-slot delay.
    pub fn apply(&self, cfg: &CoincidenceConfig) -> CoincidenceConfig {
        CoincidenceConfig {
            base_delay: self.base_delay.round() as i64,
            ..cfg.clone()
        }
    }
}

/// Locate the slot triplet in a set of raw delays.
///
/// The coarse position maximizes the summed counts of three windows `S`
/// apart; each center is then refined as the background-corrected mean of
/// the raw delays in a window that starts at `S/2` and shrinks to a few
/// peak widths. Areas count everything within `S/2` of the refined center
/// minus the flat background measured in the sidebands.
pub fn calibrate(delays: &[i64], range: (i64, i64), bin_width: i64, spacing: i64) -> Result<Calibration> {
    if spacing <= 0 {
        return Err(invalid("spacing", "must be positive"));
    }
    let hist = histogram_from_delays(delays, range, bin_width)?;
    let n = hist.counts.len();
    let step = (spacing as f64 / bin_width as f64).round() as usize;
    // Narrower than S/2 so the triplet sum peaks when the windows sit on the slots.
    let half = (step / 4).max(1);
    if n < 2 * step + 2 * half + 1 {
        return Err(Error::NoPeaks("delay range too short for three slots".into()));
    }
    let mut prefix = vec![0u64; n + 1];
    for (k, c) in hist.counts.iter().enumerate() {
        prefix[k + 1] = prefix[k] + c;
    }
    let win = |center: usize| prefix[(center + half).min(n - 1) + 1] - prefix[center.saturating_sub(half)];
    let (best, _) = (step + half..n - step - half)
        .map(|c| (c, win(c - step) + win(c) + win(c + step)))
        .fold((0, 0), |b, x| if x.1 > b.1 { x } else { b });

    // Background from the sidebands outside the triplet; the median bin is a
    // fallback and runs low when bins hold only a few counts.
    let span = (best.saturating_sub(step + step / 2), (best + step + step / 2).min(n));
    let side: Vec<u64> = hist
        .counts
        .iter()
        .enumerate()
        .filter(|(k, _)| *k < span.0 || *k >= span.1)
        .map(|(_, &c)| c)
        .collect();
    let bg_per_bin = if side.len() >= 20 {
        side.iter().sum::<u64>() as f64 / side.len() as f64
    } else {
        let mut sorted = hist.counts.clone();
        sorted.sort_unstable();
        sorted[n / 2] as f64
    };
    let bg_per_ps = bg_per_bin / bin_width as f64;

    let coarse = hist.bin_center(best);
    let mut sorted_delays: Vec<f64> = delays.iter().map(|&d| d as f64).collect();
    sorted_delays.sort_by(f64::total_cmp);
    let window = |lo: f64, hi: f64| {
        let a = sorted_delays.partition_point(|&d| d < lo);
        let b = sorted_delays.partition_point(|&d| d < hi);
        &sorted_delays[a..b]
    };
    let mut peaks = [Peak {
        center: 0.0,
        width: 0.0,
        area: 0.0,
        background: 0.0,
    }; 3];
    let mut total_in = 0.0;
    let mut total_area = 0.0;
    let s = spacing as f64;
    for (k, offset) in [-1.0, 0.0, 1.0].into_iter().enumerate() {
        let slot = coarse + offset * s;
        // Background-corrected mean and MAD width, shrinking the window onto
        // the peak so flat background pulls the estimate less.
        let (mut center, mut width, mut half_w) = (slot, 0.0, s / 2.0);
        for _ in 0..4 {
            let inside = window(center - half_w, center + half_w);
            let bg = bg_per_ps * 2.0 * half_w;
            let signal = inside.len() as f64 - bg;
            if signal <= 0.0 {
                break;
            }
            center = (inside.iter().sum::<f64>() - bg * center) / signal;
            let mut dev: Vec<f64> = inside.iter().map(|d| (d - center).abs()).collect();
            dev.sort_by(f64::total_cmp);
            width = 1.482_602_218_505_602 * dev[dev.len() / 2];
            half_w = (4.0 * width).max(2.0 * bin_width as f64).min(s / 2.0);
        }
        let count = window(center - s / 2.0, center + s / 2.0).len() as f64;
        let background = bg_per_ps * s;
        let area = count - background;
        peaks[k] = Peak {
            center,
            width,
            area,
            background,
        };
        total_in += count;
        total_area += area;
    }
    let significance = total_area / total_in.max(1.0).sqrt();
    if !(significance > 8.0) || peaks.iter().any(|p| p.area <= 0.0) {
        return Err(Error::NoPeaks(format!(
            "no significant slot triplet (significance {significance:.1})"
        )));
    }
    let spacing_fit = (peaks[2].center - peaks[0].center) / 2.0;
    Ok(Calibration {
        base_delay: peaks[0].center,
        spacing: spacing_fit,
        peaks,
        histogram: hist,
    })
}
