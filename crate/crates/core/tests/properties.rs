use proptest::prelude::*;

use tbrfi_core::keyrate::{asymptotic_rate, eve_information, finite_key, ChannelEstimate, SecurityParams};
use tbrfi_core::tags::{find_coincidences, CoincidenceConfig, CoincidenceMatcher, TimeTag};

mod common;
use common::oracle;

fn streams() -> impl Strategy<Value = (Vec<TimeTag>, Vec<TimeTag>)> {
    let tag = |lo: u8, hi: u8| (0u64..400_000, lo..hi).prop_map(|(t, c)| TimeTag::new(t, c));
    (
        prop::collection::vec(tag(0, 6), 0..300),
        // bob tags offset so most land near a slot of some alice tag
        prop::collection::vec((tag(6, 8), 0u64..3, 0u64..1500), 0..300).prop_map(|v| {
            v.into_iter()
                .map(|(t, s, j)| TimeTag::new(t.timestamp + 74_300 + 2200 * s + j, t.channel))
                .collect()
        }),
    )
        .prop_map(|(mut a, mut b): (Vec<TimeTag>, Vec<TimeTag>)| {
            a.sort_unstable();
            b.sort_unstable();
            (a, b)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn streamed_matching_equals_the_oracle((a, b) in streams(), cuts in prop::collection::vec(0u64..500_000, 0..6)) {
        let cfg = CoincidenceConfig::default();
        let expected = oracle(&a, &b, &cfg);
        prop_assert_eq!(&find_coincidences(&a, &b, &cfg).unwrap(), &expected);

        // feed in time-ordered pieces, promising each cut as a watermark
        let mut cuts = cuts;
        cuts.sort_unstable();
        let mut m = CoincidenceMatcher::new(&cfg).unwrap();
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        for t in cuts {
            let ni = a.partition_point(|x| x.timestamp < t).max(i);
            let nj = b.partition_point(|x| x.timestamp < t).max(j);
            m.push(&a[i..ni], &b[j..nj], Some(t), &mut out).unwrap();
            (i, j) = (ni, nj);
        }
        m.push(&a[i..], &b[j..], None, &mut out).unwrap();
        m.finish(&mut out);
        let mut expected = expected;
        expected.sort_unstable();
        out.sort_unstable();
        prop_assert_eq!(&out, &expected);
        prop_assert!(out.len() <= a.len().min(b.len()));
    }

    #[test]
    fn eve_information_is_a_fraction(q in 0.0f64..=0.5, c in 0.0f64..=1.0) {
        let ie = eve_information(q, c).unwrap();
        prop_assert!((0.0..=1.0).contains(&ie));
        let r = asymptotic_rate(q, c);
        prop_assert!((0.0..=1.0 / 6.0).contains(&r));
    }

    #[test]
    fn rate_never_falls_with_c(q in 0.0f64..=0.5, c in 0.0f64..0.99, dc in 0.0f64..0.01) {
        prop_assert!(asymptotic_rate(q, c + dc) >= asymptotic_rate(q, c) - 1e-15);
    }

    #[test]
    fn finite_key_is_bounded_by_asymptotic(
        q in 0.0f64..0.2, c in 0.5f64..=1.0, log_n in 3.0f64..14.0, f in 1.0f64..1.5, phase in prop::option::of(-3.2f64..3.2)
    ) {
        let est = ChannelEstimate { phase, ..ChannelEstimate::from_totals(10f64.powf(log_n) as u64, q, c) };
        let sp = SecurityParams { f, ..SecurityParams::default() };
        let k = finite_key(&est, &sp).unwrap();
        prop_assert!(k.rate <= asymptotic_rate(q, c) + 1e-15);
        prop_assert!(k.rate >= 0.0);
    }
}
