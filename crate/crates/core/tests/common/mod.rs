use tbrfi_core::tags::{Coincidence, CoincidenceConfig, TimeTag};

/// All-pairs reference: each Bob tag in stream order takes the unused Alice
/// tag in the delay window nearest a slot center, earliest on ties.
pub fn oracle(alice: &[TimeTag], bob: &[TimeTag], cfg: &CoincidenceConfig) -> Vec<Coincidence> {
    let (lo, hi) = cfg.delay_window();
    let centers = cfg.slot_centers();
    let mut partner: Vec<Option<(TimeTag, i64)>> = vec![None; alice.len()];
    for b in bob {
        let mut best: Option<(usize, i64)> = None;
        for (i, a) in alice.iter().enumerate() {
            let d = b.timestamp as i64 - a.timestamp as i64;
            if partner[i].is_some() || d < lo || d > hi {
                continue;
            }
            let score = centers.iter().map(|c| (d - c).abs()).min().unwrap();
            if best.is_none_or(|(_, s)| score < s) {
                best = Some((i, score));
            }
        }
        if let Some((i, _)) = best {
            partner[i] = Some((*b, b.timestamp as i64 - alice[i].timestamp as i64));
        }
    }
    alice
        .iter()
        .zip(partner)
        .filter_map(|(a, p)| p.map(|(bob, delay)| Coincidence { alice: *a, bob, delay }))
        .collect()
}
