use proptest::prelude::*;
use rand::seq::SliceRandom;
use zonepred_core::plant::inject_gaps;
use zonepred_core::series::{
    admissible_segments, extract_trajectories, ingest_reader, resample, BoundsMode, ChannelKind, ChannelSchema,
    Schema, SeriesSet,
};

const T0: i64 = 1_600_000_200;

fn schema() -> Schema {
    Schema::new(vec![
        ChannelSchema::new("heat", ChannelKind::Control, "kW", 0.0, 100.0),
        ChannelSchema::new("amb", ChannelKind::Disturbance, "degC", -50.0, 50.0),
        ChannelSchema::new("zone", ChannelKind::Output, "degC", 0.0, 50.0),
    ])
    .unwrap()
}

/// Deterministic but non-constant values.
fn series(len: usize, dt: i64) -> SeriesSet {
    let f = |a: f64, b: f64| (0..len).map(|k| a + b * ((k as f64) * 0.37).sin()).collect::<Vec<_>>();
    SeriesSet::new(schema(), T0, dt, vec![f(5.0, 4.0), f(10.0, 8.0), f(21.0, 2.0)]).unwrap()
}

fn csv_rows(s: &SeriesSet) -> (String, Vec<String>) {
    let mut buf = Vec::new();
    s.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines().map(str::to_string);
    let header = lines.next().unwrap();
    (header, lines.collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trajectories_after_gap_injection_are_gap_free(
        len in 150usize..600,
        fraction in 0.0f64..0.4,
        mean_len in 1.0f64..20.0,
        seed in any::<u64>(),
        window in 5usize..60,
    ) {
        let gappy = inject_gaps(&series(len, 900), fraction, mean_len, seed).unwrap();
        let segments = admissible_segments(&gappy, window);
        let mut total = 0;
        for seg in &segments {
            prop_assert!(seg.length >= window);
            prop_assert!((seg.start_index..seg.end()).all(|k| gappy.step_is_valid(k)));
            let trajectories = extract_trajectories(seg, &gappy, window).unwrap();
            prop_assert_eq!(trajectories.len(), seg.length - window + 1);
            for tr in &trajectories {
                prop_assert_eq!(tr.len(), window);
                let all = tr.u_block.iter().chain(&tr.w_block).chain(&tr.y_block);
                for ch in all {
                    prop_assert!(ch.iter().all(|v| v.is_finite()));
                }
            }
            total += trajectories.len();
        }
        // Count from the validity mask alone.
        let valid = gappy.validity();
        let mut expected = 0;
        let mut run: usize = 0;
        for k in 0..=valid.len() {
            if k < valid.len() && valid[k] {
                run += 1;
            } else {
                expected += (run + 1).saturating_sub(window);
                run = 0;
            }
        }
        prop_assert_eq!(total, expected);
    }

    #[test]
    fn segments_are_maximal_sorted_and_disjoint(
        len in 50usize..400,
        fraction in 0.0f64..0.5,
        seed in any::<u64>(),
        min_len in 1usize..40,
    ) {
        let gappy = inject_gaps(&series(len, 900), fraction, 4.0, seed).unwrap();
        let segments = admissible_segments(&gappy, min_len);
        for pair in segments.windows(2) {
            prop_assert!(pair[0].end() < pair[1].start_index);
        }
        for seg in &segments {
            prop_assert!(seg.start_index == 0 || !gappy.step_is_valid(seg.start_index - 1));
            prop_assert!(seg.end() == len || !gappy.step_is_valid(seg.end()));
        }
    }

    #[test]
    fn ingest_ignores_row_order(len in 8usize..120, fraction in 0.0f64..0.3, seed in any::<u64>()) {
        let original = inject_gaps(&series(len, 900), fraction, 3.0, seed).unwrap();
        let (header, mut rows) = csv_rows(&original);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        rows.shuffle(&mut rng);
        let shuffled = format!("{header}\n{}\n", rows.join("\n"));
        let sorted = format!("{header}\n{}\n", csv_rows(&original).1.join("\n"));
        let a = ingest_reader(shuffled.as_bytes(), &schema(), 900, BoundsMode::Mask).unwrap();
        let b = ingest_reader(sorted.as_bytes(), &schema(), 900, BoundsMode::Mask).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&a, &original);
    }

    #[test]
    fn resampling_constant_is_constant(ratio in 1usize..8, blocks in 1usize..40, c in 5.0f64..30.0) {
        let raw = SeriesSet::new(schema(), T0, 60, vec![vec![c; ratio * blocks]; 3]).unwrap();
        let coarse = resample(&raw, 60 * ratio as i64).unwrap();
        prop_assert_eq!(coarse.len(), blocks);
        for ch in 0..3 {
            prop_assert!(coarse.channel(ch).iter().all(|&v| (v - c).abs() < 1e-12));
        }
    }
}

#[test]
fn segment_examples() {
    let mut s = series(300, 900);
    assert_eq!(admissible_segments(&s, 108).len(), 1);
    s.mark_gap(150);
    let segs = admissible_segments(&s, 108);
    assert_eq!(segs.len(), 2);
    assert_eq!((segs[0].start_index, segs[0].length), (0, 150));
    assert_eq!((segs[1].start_index, segs[1].length), (151, 149));
    assert!(admissible_segments(&series(100, 900), 108).is_empty());
}

#[test]
fn trajectory_counts_over_two_segments() {
    let mut s = series(251, 900);
    s.mark_gap(120);
    let segs = admissible_segments(&s, 108);
    let total: usize = segs.iter().map(|g| extract_trajectories(g, &s, 108).unwrap().len()).sum();
    assert_eq!(total, 13 + 23);
}

#[test]
fn resample_mean_and_gap_rule() {
    let vals = |v: Vec<f64>| vec![v.clone(), v.clone(), v.iter().map(|x| x + 10.0).collect()];
    let raw = SeriesSet::new(schema(), T0, 300, vals(vec![1.0, 2.0, 3.0])).unwrap();
    let coarse = resample(&raw, 900).unwrap();
    assert_eq!(coarse.channel(0), &[2.0]);

    let mut minutes = SeriesSet::new(schema(), T0, 60, vals(vec![4.0; 15])).unwrap();
    minutes.mark_gap(7);
    assert!(!resample(&minutes, 900).unwrap().step_is_valid(0));
    assert!(resample(&minutes, 90).is_err());
}
