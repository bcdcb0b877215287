//! Oracle comparisons shared by the integration suites and the acceptance target.

use engagekit::dataset::SessionKey;
use engagekit::metrics::auroc;
use engagekit::models::{
    fit_tree, predict_table, train_gbdt, FeatureMatrix, GbdtConfig, TreeParams,
};
use engagekit::policy::{
    evaluate_policy, run_policy, timeline_segments, Attribution, PolicyParams, Timeline,
};
use engagekit::preprocess::{window_aggregate, WindowConfig};
use engagekit::sequences::{segment_labels, sequence_stats, SeqKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::frames;

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

pub const STRIDE: f64 = 0.5;

pub fn random_set(rng: &mut impl Rng, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let y = x
        .iter()
        .map(|r| {
            let z: f64 = r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + (r[0] * 3.0).sin();
            u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-2.0 * z).exp()))
        })
        .collect();
    (x, y)
}

pub fn random_timelines(rng: &mut impl Rng) -> Vec<Timeline> {
    (0..rng.random_range(1..4))
        .map(|s| {
            let n = rng.random_range(5..200);
            let labels = super::random_runs(rng, n, 25);
            let noise = rng.random_range(0.05..0.6);
            let probs = labels
                .iter()
                .map(|&y| {
                    (0.25 + 0.5 * f64::from(y) + noise * (rng.random::<f64>() - 0.5))
                        .clamp(0.0, 1.0)
                })
                .collect();
            Timeline {
                key: SessionKey::new("P1", format!("S{s}")),
                session_index: s,
                starts: (0..n).map(|i| i as f64 * STRIDE).collect(),
                probs,
                labels,
            }
        })
        .collect()
}

/// Per-bag training loss never rises over `cases` random sets of up to 2000 rows.
pub fn gbdt_loss_monotone(cases: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..cases {
        let n = rng.random_range(50..=2000);
        let (x, y) = random_set(&mut rng, n, 4);
        let cfg = GbdtConfig {
            seed: case,
            ..GbdtConfig::default()
        };
        let m = train_gbdt(&super::table_from(&x, &y), &cfg).map_err(|e| e.to_string())?;
        for bag in &m.bags {
            ensure!(
                bag.train_loss.len() == bag.trees.len() + 1,
                "case {case}: loss trace length"
            );
            ensure!(
                bag.train_loss.windows(2).all(|w| w[1] <= w[0]),
                "case {case}: loss rose"
            );
            ensure!(
                !bag.trees.is_empty() && bag.trees.len() <= cfg.n_trees,
                "case {case}: tree count"
            );
        }
    }
    Ok(())
}

pub fn gbdt_xor(reps: usize) -> Check {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for _ in 0..reps {
        for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
            x.push(vec![a, b]);
            y.push(u8::from(a != b));
        }
    }
    let t = super::table_from(&x, &y);
    let m = train_gbdt(&t, &GbdtConfig::default()).map_err(|e| e.to_string())?;
    let p = predict_table(&m, &t).map_err(|e| e.to_string())?;
    let correct = p
        .iter()
        .zip(&y)
        .filter(|(p, &y)| (**p >= 0.5) == (y == 1))
        .count();
    ensure!(
        correct == y.len(),
        "XOR training accuracy {correct}/{}",
        y.len()
    );
    Ok(())
}

/// A depth-0 tree's leaf equals sum(y - p0) / (n p0 (1 - p0) + lambda).
pub fn gbdt_newton_leaf(cases: usize, tol: f64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..cases {
        let n = 10;
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random()]).collect();
        let y: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..2u8)))
            .collect();
        let p0: f64 = rng.random_range(0.05..0.95);
        let g: Vec<f64> = y.iter().map(|y| p0 - y).collect();
        let h = vec![p0 * (1.0 - p0); n];
        let lambda = 1.0;
        let params = TreeParams {
            max_depth: 0,
            lambda,
            ..TreeParams::default()
        };
        let (tree, _) = fit_tree(&FeatureMatrix::from_rows(&x, 1), &g, &h, &params);
        let expect = y.iter().map(|y| y - p0).sum::<f64>() / (n as f64 * p0 * (1.0 - p0) + lambda);
        let got = tree.predict(&x[0]);
        ensure!(
            (got - expect).abs() < tol,
            "case {case}: leaf {got} vs {expect}"
        );
    }
    Ok(())
}

/// Rank AUROC equals the pairwise oracle bit for bit, with heavy ties in two thirds of cases.
pub fn auroc_matches_pairwise(cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    while checked < cases {
        let n = rng.random_range(2..=200);
        let levels = [3, 10, 1000][checked % 3];
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let scores: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..levels)) / 7.0)
            .collect();
        let Some(expect) = super::auroc_pairwise(&labels, &scores) else {
            continue;
        };
        let got = auroc(&labels, &scores).map_err(|e| e.to_string())?;
        ensure!(got == expect, "instance {checked}: {got} vs {expect}");
        checked += 1;
    }
    Ok(())
}

/// Window counts, aggregates and labels agree with the integer-tick oracle.
pub fn windows_match_oracle(cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for case in 0..cases {
        let n_ticks = rng.random_range(20..400);
        let offset = rng.random_range(0..40);
        let keep = if case % 3 == 0 {
            1.0
        } else {
            rng.random_range(0.5..1.0)
        };
        let ticks: Vec<usize> = (offset..offset + n_ticks)
            .filter(|_| rng.random::<f64>() < keep)
            .collect();
        if ticks.is_empty() {
            continue;
        }
        let feats: Vec<Vec<f64>> = ticks
            .iter()
            .map(|_| {
                let x = if rng.random::<f64>() < 0.05 {
                    f64::NAN
                } else {
                    rng.random_range(-3.0..3.0)
                };
                let conf = rng.random::<f64>();
                let k = f64::from(rng.random_range(0..3u8))
                    * f64::from(u8::from(rng.random::<f64>() < 0.3));
                vec![x, conf, k]
            })
            .collect();
        let labels: Vec<u8> = ticks
            .iter()
            .map(|_| u8::from(rng.random::<f64>() < 0.6))
            .collect();
        let t = frames::table(&ticks, &feats, &labels);
        let w = window_aggregate(&t, &WindowConfig::default()).map_err(|e| e.to_string())?;
        let o = frames::oracle(&ticks, &feats, &labels);
        ensure!(
            w.n_rows() == o.len(),
            "case {case}: {} windows vs {}",
            w.n_rows(),
            o.len()
        );
        for (r, e) in w.rows().iter().zip(&o) {
            ensure!(
                (r.t_start_s - e.start_tick as f64 / 30.0).abs() < 1e-9,
                "case {case}: start"
            );
            ensure!(r.n_frames == e.n, "case {case}: frame count");
            ensure!(r.engaged == e.label, "case {case}: label");
            for (a, b) in r.features.iter().zip(&e.features) {
                ensure!(frames::same(*a, *b), "case {case}: {a} vs {b}");
            }
        }
        if keep == 1.0 {
            // Gapless: floor((span - window) / stride) + 1 windows from a grid-aligned start.
            let first = ticks[0] / 15 * 15;
            let span = (ticks.last().unwrap() + 1 - first) as f64 / 30.0;
            let expect = if span >= 1.0 {
                ((span - 1.0) / 0.5 + 1e-9).floor() as usize + 1
            } else {
                0
            };
            ensure!(w.n_rows() == expect, "case {case}: gapless count");
        }
    }
    Ok(())
}

pub fn window_label_tie() -> Check {
    let ticks: Vec<usize> = (0..30).collect();
    let feats = vec![vec![0.0, 0.9, 0.0]; 30];
    let labels: Vec<u8> = (0..30).map(|k| u8::from(k < 15)).collect();
    let w = window_aggregate(
        &frames::table(&ticks, &feats, &labels),
        &WindowConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        w.rows()[0].engaged == 0,
        "15/30 engaged frames labelled engaged"
    );
    Ok(())
}

pub fn segments_match_rle(cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..cases {
        let n = rng.random_range(1..300);
        let labels = if case % 2 == 0 {
            (0..n).map(|_| rng.random_range(0..2u8)).collect()
        } else {
            super::random_runs(&mut rng, n, 40)
        };
        let t = super::labelled_table(&[vec![labels.clone()]], 1, &mut rng);
        let segs = segment_labels(&t);
        let runs = super::rle(&labels);
        ensure!(
            segs.len() == runs.len(),
            "case {case}: {} segments vs {} runs",
            segs.len(),
            runs.len()
        );
        for (s, &(y, start, len)) in segs.iter().zip(&runs) {
            let kind = if y == 1 {
                SeqKind::Engaged
            } else {
                SeqKind::Disengaged
            };
            ensure!(
                s.kind == kind && s.first_row == start && s.n_windows == len,
                "case {case}: run at {start}"
            );
            ensure!(
                s.t_start_s == start as f64 * 0.5 && s.duration_s == len as f64 * 0.5,
                "case {case}: times"
            );
        }
    }
    Ok(())
}

/// Tiling and time-share closure on random multi-session tables.
pub fn segments_tile(cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for case in 0..cases {
        let sessions: Vec<Vec<Vec<u8>>> = (0..rng.random_range(1..4))
            .map(|_| {
                (0..rng.random_range(1..3))
                    .map(|_| {
                        let n = rng.random_range(1..120);
                        super::random_runs(&mut rng, n, 20)
                    })
                    .collect()
            })
            .collect();
        let t = super::labelled_table(&sessions, 1, &mut rng);
        let segs = segment_labels(&t);
        for range in t.session_ranges() {
            let rows = &t.rows()[range.clone()];
            let mine: Vec<_> = segs.iter().filter(|g| g.key == rows[0].key).collect();
            let total: f64 = mine.iter().map(|g| g.duration_s).sum();
            let span = rows.last().unwrap().t_start_s + 0.5 - rows[0].t_start_s;
            ensure!(
                (total - span).abs() < 1e-9,
                "case {case}: durations do not cover the session"
            );
            ensure!(
                mine.iter().map(|g| g.n_windows).sum::<usize>() == range.len(),
                "case {case}: window count"
            );
        }
        let st = sequence_stats(&segs);
        if st.ds.is_some() {
            let sum = st.long_ds_time_share.unwrap()
                + st.mid_ds_time_share.unwrap()
                + st.short_ds_time_share.unwrap();
            ensure!(
                (sum - 1.0).abs() <= 1e-9,
                "case {case}: DS time shares sum to {sum}"
            );
        }
    }
    Ok(())
}

fn same_opt(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() < 1e-9,
        (None, None) => true,
        _ => false,
    }
}

pub fn policy_matches_simulator(cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..cases {
        let tl = random_timelines(&mut rng);
        let segs = timeline_segments(&tl, STRIDE);
        let stats = sequence_stats(&segs);
        let params = PolicyParams {
            window_s: f64::from(rng.random_range(1..=12u8)) * 0.5,
            threshold: f64::from(rng.random_range(1..=19u8)) * 0.05,
        };
        for mode in [Attribution::AnyTickBelow, Attribution::EventInSegment] {
            let events = run_policy(&tl, &params, STRIDE);
            let got =
                evaluate_policy(params, &events, &segs, &stats, mode).map_err(|e| e.to_string())?;
            let want = super::simulate_policy(&tl, &segs, &stats, params, STRIDE, mode);
            ensure!(got.n_events == want.n_events, "case {case}: event count");
            ensure!(
                (got.n_long_ds, got.n_es, got.n_short_ds, got.n_ds_with_ra)
                    == (
                        want.n_long_ds,
                        want.n_es,
                        want.n_short_ds,
                        want.n_ds_with_ra
                    ),
                "case {case} {mode:?}: counts"
            );
            ensure!(
                same_opt(got.pct_long_ds_with_ra, want.pct_long_ds_with_ra)
                    && same_opt(got.pct_es_with_ra, want.pct_es_with_ra)
                    && same_opt(got.pct_short_ds_with_ra, want.pct_short_ds_with_ra),
                "case {case} {mode:?}: percentages"
            );
            ensure!(
                same_opt(
                    got.median_ds_duration_with_ra_s,
                    want.median_ds_duration_with_ra_s
                ) && same_opt(
                    got.median_elapsed_before_ra_s,
                    want.median_elapsed_before_ra_s
                ),
                "case {case} {mode:?}: medians"
            );
        }
    }
    Ok(())
}

pub fn policy_monotone_in_threshold(cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..cases {
        let tl = random_timelines(&mut rng);
        let segs = timeline_segments(&tl, STRIDE);
        let stats = sequence_stats(&segs);
        let window_s = f64::from(rng.random_range(1..=10u8));
        let mut prev: Option<[Option<f64>; 3]> = None;
        for k in 1..=19 {
            let params = PolicyParams {
                window_s,
                threshold: f64::from(k) * 0.05,
            };
            let ev = run_policy(&tl, &params, STRIDE);
            let r = evaluate_policy(params, &ev, &segs, &stats, Attribution::AnyTickBelow)
                .map_err(|e| e.to_string())?;
            let cur = [
                r.pct_long_ds_with_ra,
                r.pct_es_with_ra,
                r.pct_short_ds_with_ra,
            ];
            if let Some(p) = prev {
                for (a, b) in p.iter().zip(&cur) {
                    if let (Some(a), Some(b)) = (a, b) {
                        ensure!(
                            b >= a,
                            "case {case}: {a} -> {b} at threshold {}",
                            params.threshold
                        );
                    }
                }
            }
            prev = Some(cur);
        }
    }
    Ok(())
}

pub fn policy_perfect_probabilities(cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..cases {
        let mut tl = random_timelines(&mut rng);
        for t in &mut tl {
            t.probs = t.labels.iter().map(|&y| f64::from(y)).collect();
        }
        let segs = timeline_segments(&tl, STRIDE);
        let stats = sequence_stats(&segs);
        let params = PolicyParams {
            window_s: STRIDE,
            threshold: 0.5,
        };
        let ev = run_policy(&tl, &params, STRIDE);
        let r = evaluate_policy(params, &ev, &segs, &stats, Attribution::AnyTickBelow)
            .map_err(|e| e.to_string())?;
        let n_ds = segs
            .iter()
            .filter(|s| s.kind == SeqKind::Disengaged)
            .count();
        ensure!(
            r.n_ds_with_ra == n_ds,
            "case {case}: {} of {n_ds} DS reached",
            r.n_ds_with_ra
        );
        ensure!(
            r.n_es == 0 || r.pct_es_with_ra == Some(0.0),
            "case {case}: RA during ES"
        );
    }
    Ok(())
}
