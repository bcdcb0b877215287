//! Brute-force oracles and fixtures shared by the integration suites.
#![allow(
    dead_code,
    unused_imports,
    unused_macros,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop
)]

use engagekit::dataset::{ColumnKind, Modality, SessionKey, SynthConfig};
use engagekit::policy::{Attribution, PolicyParams, PolicyReport, Timeline};
use engagekit::preprocess::{DerivedKind, WindowColumn, WindowConfig, WindowSample, WindowTable};
use engagekit::sequences::{DsClass, Segment, SeqKind, SequenceStats};
use rand::Rng;

/// Pairwise AUROC: wins plus half ties over all (positive, negative) pairs.
pub fn auroc_pairwise(labels: &[u8], scores: &[f64]) -> Option<f64> {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj != 0 {
                continue;
            }
            pairs += 1;
            twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    (pairs > 0).then(|| twice as f64 / (2 * pairs) as f64)
}

/// Run-length encoding as `(label, first index, length)`.
pub fn rle(labels: &[u8]) -> Vec<(u8, usize, usize)> {
    let mut out: Vec<(u8, usize, usize)> = Vec::new();
    for (i, &y) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.0 == y => last.2 += 1,
            _ => out.push((y, i, 1)),
        }
    }
    out
}

/// Single-session window table with columns `f0..` on a 0.5 s grid.
pub fn table_from(data: &[Vec<f64>], y: &[u8]) -> WindowTable {
    let d = data.first().map_or(0, Vec::len);
    let rows = data
        .iter()
        .zip(y)
        .enumerate()
        .map(|(i, (x, &y))| WindowSample {
            key: SessionKey::new("P1", "S01"),
            session_index: 0,
            t_start_s: i as f64 * 0.5,
            t_end_s: i as f64 * 0.5 + 1.0,
            features: x.clone(),
            engaged: y,
            n_frames: 30,
        })
        .collect();
    WindowTable::new(columns(d), rows, WindowConfig::default())
}

pub fn columns(d: usize) -> Vec<WindowColumn> {
    (0..d)
        .map(|j| WindowColumn {
            name: format!("f{j}"),
            base: format!("f{j}"),
            derived: DerivedKind::Median,
            kind: ColumnKind::Continuous,
            modality: Modality::Visual,
            key: None,
        })
        .collect()
}

/// Multi-participant table: `sessions[p][s]` holds the labels of one session.
pub fn labelled_table(sessions: &[Vec<Vec<u8>>], d: usize, rng: &mut impl Rng) -> WindowTable {
    let mut rows = Vec::new();
    for (p, ss) in sessions.iter().enumerate() {
        for (s, labels) in ss.iter().enumerate() {
            for (i, &y) in labels.iter().enumerate() {
                let features = (0..d)
                    .map(|_| f64::from(y) * 0.8 + rng.random::<f64>())
                    .collect();
                rows.push(WindowSample {
                    key: SessionKey::new(format!("P{}", p + 1), format!("S{:02}", s + 1)),
                    session_index: s,
                    t_start_s: i as f64 * 0.5,
                    t_end_s: i as f64 * 0.5 + 1.0,
                    features,
                    engaged: y,
                    n_frames: 30,
                });
            }
        }
    }
    WindowTable::new(columns(d), rows, WindowConfig::default())
}

/// Desk-scale generator settings shaped like the study data.
pub fn study_shaped(seed: u64) -> SynthConfig {
    SynthConfig {
        participants: 7,
        sessions_per_participant: 4,
        session_length_s: 120.0,
        seed,
        ..SynthConfig::default()
    }
}

/// Tick-by-tick policy simulator: smooths naively, then scans every tick of
/// every segment's session.
pub fn simulate_policy(
    timelines: &[Timeline],
    segments: &[Segment],
    stats: &SequenceStats,
    params: PolicyParams,
    stride: f64,
    attribution: Attribution,
) -> PolicyReport {
    let m = ((params.window_s / stride) - 1e-9).ceil().max(1.0) as usize;
    let (mut long, mut es, mut short) = ((0, 0), (0, 0), (0, 0));
    let mut durations = Vec::new();
    let mut elapsed = Vec::new();
    let mut n_events = 0;
    for t in timelines {
        let n = t.probs.len();
        let below: Vec<bool> = (0..n)
            .map(|i| {
                let lo = (i + 1).saturating_sub(m);
                let avg = t.probs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64;
                avg < params.threshold
            })
            .collect();
        let event: Vec<bool> = (0..n)
            .map(|i| below[i] && (i == 0 || !below[i - 1]))
            .collect();
        n_events += event.iter().filter(|&&e| e).count();
        for seg in segments.iter().filter(|s| s.key == t.key) {
            let mut first = None;
            for i in 0..n {
                let ts = t.starts[i];
                if ts < seg.t_start_s - 1e-9 || ts >= seg.t_end_s - 1e-9 {
                    continue;
                }
                let hit = match attribution {
                    Attribution::AnyTickBelow => below[i],
                    Attribution::EventInSegment => event[i],
                };
                if hit {
                    first = Some(ts);
                    break;
                }
            }
            let has = usize::from(first.is_some());
            match seg.kind {
                SeqKind::Engaged => {
                    es.0 += 1;
                    es.1 += has;
                }
                SeqKind::Disengaged => {
                    match stats.classify_ds(seg.duration_s) {
                        Some(DsClass::Long) => {
                            long.0 += 1;
                            long.1 += has;
                        }
                        Some(DsClass::Short) => {
                            short.0 += 1;
                            short.1 += has;
                        }
                        _ => {}
                    }
                    if let Some(f) = first {
                        durations.push(seg.duration_s);
                        elapsed.push(f - seg.t_start_s);
                    }
                }
            }
        }
    }
    let pct = |(n, k): (usize, usize)| (n > 0).then(|| 100.0 * k as f64 / n as f64);
    PolicyReport {
        params,
        pct_long_ds_with_ra: pct(long),
        pct_es_with_ra: pct(es),
        pct_short_ds_with_ra: pct(short),
        median_ds_duration_with_ra_s: naive_median(&durations),
        median_elapsed_before_ra_s: naive_median(&elapsed),
        n_events,
        n_long_ds: long.0,
        n_es: es.0,
        n_short_ds: short.0,
        n_ds_with_ra: durations.len(),
    }
}

pub fn naive_median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    Some(if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    })
}

/// Random labels with run lengths drawn from 1..=max_run.
pub fn random_runs(rng: &mut impl Rng, n: usize, max_run: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(n);
    let mut y = rng.random_range(0..2u8);
    while out.len() < n {
        let len = rng.random_range(1..=max_run).min(n - out.len());
        out.extend(std::iter::repeat_n(y, len));
        y = 1 - y;
    }
    out
}

pub mod checks;
pub mod frames;
