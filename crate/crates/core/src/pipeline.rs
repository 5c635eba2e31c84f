//! Streaming analysis chain: tags -> coincidences -> classified counts per
//! block -> estimates and key rates.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::keyrate::{finite_key, ChannelEstimate, KeyResult, SecurityParams};
use crate::photonics::{TagSimulator, Truth, PS_PER_S};
use crate::stats::{block_estimate, time_series, BasisPairCounts, BlockEstimate, SeriesPoint};
use crate::tagfile::{Side, TagReader};
use crate::tags::{
    BlockAccumulator, Classification, Classifier, Coincidence, CoincidenceConfig, CoincidenceMatcher, TimeTag,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub alice_tags: u64,
    pub bob_tags: u64,
    pub coincidences: u64,
    pub unclassified: u64,
    /// Classified coincidences by Bob arrival slot.
    pub slots: [u64; 3],
}

pub struct Analyzer {
    matcher: Option<CoincidenceMatcher>,
    classifier: Classifier,
    acc: BlockAccumulator,
    buf: Vec<Coincidence>,
    counters: Counters,
}

impl Analyzer {
    /// Blocks are aligned to time zero of the tag clock.
    pub fn new(cfg: &CoincidenceConfig, block_duration: f64) -> Result<Self> {
        Ok(Analyzer {
            matcher: Some(CoincidenceMatcher::new(cfg)?),
            classifier: Classifier::new(cfg),
            acc: BlockAccumulator::with_origin(block_duration, 0)?,
            buf: Vec::new(),
            counters: Counters::default(),
        })
    }

    pub fn feed(&mut self, alice: &[TimeTag], bob: &[TimeTag], watermark: Option<u64>) -> Result<()> {
        self.counters.alice_tags += alice.len() as u64;
        self.counters.bob_tags += bob.len() as u64;
        let m = self.matcher.as_mut().expect("not finished");
        m.push(alice, bob, watermark, &mut self.buf)?;
        self.drain();
        Ok(())
    }

    fn drain(&mut self) {
        for c in self.buf.drain(..) {
            let class = self.classifier.classify(&c);
            self.counters.coincidences += 1;
            match class {
                Classification::Pair { slot, .. } => self.counters.slots[slot as usize] += 1,
                Classification::Unclassified(_) => self.counters.unclassified += 1,
            }
            self.acc.add(&c, class);
        }
    }

    /// Flush and pad the block series to cover `span` seconds when given.
    pub fn finish(mut self, span: Option<f64>) -> Analysis {
        if let Some(m) = self.matcher.take() {
            m.finish(&mut self.buf);
        }
        self.drain();
        let mut acc = self.acc;
        if let Some(s) = span {
            acc.cover((s * PS_PER_S).round() as u64);
        }
        let blocks = acc.finish();
        let series = time_series(&blocks);
        Analysis {
            blocks,
            series,
            counters: self.counters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub blocks: Vec<BasisPairCounts>,
    pub series: Vec<SeriesPoint>,
    pub counters: Counters,
}

impl Analysis {
    pub fn total_counts(&self) -> Option<BasisPairCounts> {
        BasisPairCounts::aggregate(&self.blocks)
    }

    /// Estimate over the whole run treated as one block.
    pub fn run_estimate(&self) -> Option<BlockEstimate> {
        block_estimate(&self.total_counts()?).ok()
    }

    pub fn channel_estimate(&self) -> Option<ChannelEstimate> {
        self.run_estimate().map(|e| ChannelEstimate::from_block(&e))
    }

    /// Finite-size key for the whole run; `None` when a needed basis is empty.
    pub fn key_report(&self, sp: &SecurityParams) -> Result<Option<KeyResult>> {
        match self.channel_estimate() {
            Some(est) => finite_key(&est, sp).map(Some),
            None => Ok(None),
        }
    }

    pub fn estimates(&self) -> impl Iterator<Item = &BlockEstimate> {
        self.series.iter().filter_map(|p| p.estimate.as_ref())
    }
}

/// Simulate and analyze in one pass without materializing the streams.
pub fn analyze_simulation(cfg: &RunConfig, seed: u64) -> Result<(Analysis, Truth)> {
    let mut sim = TagSimulator::new(
        cfg.duration,
        cfg.source.clone(),
        cfg.channel.clone(),
        cfg.coincidence.layout.clone(),
        seed,
    )?;
    let mut an = Analyzer::new(&cfg.coincidence, cfg.block_duration)?;
    while let Some(chunk) = sim.next_chunk() {
        an.feed(&chunk.alice, &chunk.bob, chunk.watermark)?;
    }
    let truth = *sim.truth();
    Ok((an.finish(Some(cfg.duration)), truth))
}

/// Analyze a pair of tag files, reading both in step so memory stays bounded.
pub fn analyze_files(alice: &Path, bob: &Path, cfg: &CoincidenceConfig, block_duration: f64) -> Result<Analysis> {
    let mut ra = TagReader::open(alice)?;
    let mut rb = TagReader::open(bob)?;
    for (r, side, path) in [(&ra, Side::Alice, alice), (&rb, Side::Bob, bob)] {
        let h = r.header();
        if let Some(s) = h.side {
            if s != side {
                return Err(Error::Format(format!(
                    "{}: holds {s} tags, expected {side}",
                    path.display()
                )));
            }
        }
        if h.side.is_some() && h.layout != cfg.layout.name {
            return Err(Error::Format(format!(
                "{}: layout `{}` does not match configured layout `{}`",
                path.display(),
                h.layout,
                cfg.layout.name
            )));
        }
    }
    let mut an = Analyzer::new(cfg, block_duration)?;
    const CHUNK: usize = 1 << 20;
    let mut bob_done = false;
    let mut bob_last = 0u64;
    loop {
        let a = ra.read_chunk(CHUNK)?;
        let a_end = a.last().map(|t| t.timestamp);
        let mut b = Vec::new();
        // Keep Bob level with Alice so neither side piles up in the matcher.
        while !bob_done && (a_end.is_none() || bob_last <= a_end.unwrap()) {
            let more = rb.read_chunk(CHUNK / 8)?;
            match more.last() {
                Some(t) => bob_last = t.timestamp,
                None => bob_done = true,
            }
            b.extend(more);
        }
        if a.is_empty() && b.is_empty() {
            break;
        }
        an.feed(&a, &b, None)?;
    }
    Ok(an.finish(None))
}
