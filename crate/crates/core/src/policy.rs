//! Threshold re-engagement trigger on smoothed engagement probabilities.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dataset::SessionKey;
use crate::error::{Error, Result};
use crate::preprocess::WindowTable;
use crate::sequences::{median, segment_session, DsClass, Segment, SeqKind, SequenceStats};
use crate::stats::spearman;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub window_s: f64,
    pub threshold: f64,
}

/// How a segment is credited with a re-engagement action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribution {
    /// The segment overlaps a sub-threshold run, so the robot is acting
    /// during it. Monotone in the threshold.
    #[default]
    AnyTickBelow,
    /// A trigger event (the first tick of a run) lies inside the segment.
    EventInSegment,
}

/// One session of per-window predictions on the stride grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub key: SessionKey,
    pub session_index: usize,
    pub starts: Vec<f64>,
    pub probs: Vec<f64>,
    pub labels: Vec<u8>,
}

/// Groups scored rows of `windows` into per-session timelines in table order.
pub fn timelines_from(
    windows: &WindowTable,
    rows: &[usize],
    scores: &[f64],
) -> Result<Vec<Timeline>> {
    if rows.len() != scores.len() {
        return Err(Error::Config("rows and scores differ in length".into()));
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by_key(|&k| rows[k]);
    let mut out: Vec<Timeline> = Vec::new();
    for k in order {
        let w = &windows.rows()[rows[k]];
        match out.last_mut() {
            Some(t) if t.key == w.key => {
                t.starts.push(w.t_start_s);
                t.probs.push(scores[k]);
                t.labels.push(w.engaged);
            }
            _ => out.push(Timeline {
                key: w.key.clone(),
                session_index: w.session_index,
                starts: vec![w.t_start_s],
                probs: vec![scores[k]],
                labels: vec![w.engaged],
            }),
        }
    }
    Ok(out)
}

/// Ground-truth segments of the timelines' own labels.
pub fn timeline_segments(timelines: &[Timeline], stride_s: f64) -> Vec<Segment> {
    timelines
        .iter()
        .flat_map(|t| segment_session(&t.key, t.session_index, &t.starts, &t.labels, stride_s, 0))
        .collect()
}

pub fn window_ticks(window_s: f64, stride_s: f64) -> usize {
    ((window_s / stride_s) - EPS).ceil().max(1.0) as usize
}

/// Trailing moving average over `ceil(window / stride)` ticks; the first ticks
/// average the available prefix.
pub fn smooth(probs: &[f64], window_s: f64, stride_s: f64) -> Vec<f64> {
    let m = window_ticks(window_s, stride_s);
    (0..probs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(m);
            probs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub key: SessionKey,
    pub tick: usize,
    pub t_s: f64,
    /// End of the sub-threshold run the event opens (last tick plus a stride).
    pub run_end_s: f64,
}

/// One event per maximal run of ticks with `smoothed < threshold`.
pub fn triggers(
    key: &SessionKey,
    starts: &[f64],
    smoothed: &[f64],
    threshold: f64,
    stride_s: f64,
) -> Vec<TriggerEvent> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < smoothed.len() {
        if smoothed[i] < threshold {
            let mut j = i + 1;
            while j < smoothed.len() && smoothed[j] < threshold {
                j += 1;
            }
            out.push(TriggerEvent {
                key: key.clone(),
                tick: i,
                t_s: starts[i],
                run_end_s: starts[j - 1] + stride_s,
            });
            i = j;
        } else {
            i += 1;
        }
    }
    out
}

/// Smooths every timeline and collects its events.
pub fn run_policy(
    timelines: &[Timeline],
    params: &PolicyParams,
    stride_s: f64,
) -> Vec<TriggerEvent> {
    timelines
        .iter()
        .flat_map(|t| {
            let s = smooth(&t.probs, params.window_s, stride_s);
            triggers(&t.key, &t.starts, &s, params.threshold, stride_s)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub params: PolicyParams,
    /// Percentages in [0, 100]; `None` when the class has no segments.
    pub pct_long_ds_with_ra: Option<f64>,
    pub pct_es_with_ra: Option<f64>,
    pub pct_short_ds_with_ra: Option<f64>,
    /// Median duration of DS with at least one action.
    pub median_ds_duration_with_ra_s: Option<f64>,
    /// Median time from DS start to its first action.
    pub median_elapsed_before_ra_s: Option<f64>,
    pub n_events: usize,
    pub n_long_ds: usize,
    pub n_es: usize,
    pub n_short_ds: usize,
    pub n_ds_with_ra: usize,
}

/// Scores trigger events against ground-truth segments.
///
/// `stats` supplies the long and short DS thresholds. Events for sessions
/// absent from `segments` are an error.
pub fn evaluate_policy(
    params: PolicyParams,
    events: &[TriggerEvent],
    segments: &[Segment],
    stats: &SequenceStats,
    attribution: Attribution,
) -> Result<PolicyReport> {
    let known: HashSet<&SessionKey> = segments.iter().map(|s| &s.key).collect();
    if let Some(e) = events.iter().find(|e| !known.contains(&e.key)) {
        return Err(Error::Config(format!(
            "event for session {} has no segments",
            e.key
        )));
    }
    let mut by_session: BTreeMap<&SessionKey, Vec<&TriggerEvent>> = BTreeMap::new();
    for e in events {
        by_session.entry(&e.key).or_default().push(e);
    }

    let (mut long_n, mut long_ra, mut es_n, mut es_ra, mut short_n, mut short_ra) =
        (0, 0, 0, 0, 0, 0);
    let mut ds_durations = Vec::new();
    let mut elapsed = Vec::new();
    for seg in segments {
        let evs = by_session.get(&seg.key).map_or(&[][..], Vec::as_slice);
        let first = first_action(seg, evs, attribution);
        let has = first.is_some();
        match seg.kind {
            SeqKind::Engaged => {
                es_n += 1;
                es_ra += usize::from(has);
            }
            SeqKind::Disengaged => {
                match stats.classify_ds(seg.duration_s) {
                    Some(DsClass::Long) => {
                        long_n += 1;
                        long_ra += usize::from(has);
                    }
                    Some(DsClass::Short) => {
                        short_n += 1;
                        short_ra += usize::from(has);
                    }
                    _ => {}
                }
                if let Some(t) = first {
                    ds_durations.push(seg.duration_s);
                    elapsed.push(t - seg.t_start_s);
                }
            }
        }
    }
    let pct = |a: usize, n: usize| (n > 0).then(|| 100.0 * a as f64 / n as f64);
    Ok(PolicyReport {
        params,
        pct_long_ds_with_ra: pct(long_ra, long_n),
        pct_es_with_ra: pct(es_ra, es_n),
        pct_short_ds_with_ra: pct(short_ra, short_n),
        median_ds_duration_with_ra_s: median(&ds_durations),
        median_elapsed_before_ra_s: median(&elapsed),
        n_events: events.len(),
        n_long_ds: long_n,
        n_es: es_n,
        n_short_ds: short_n,
        n_ds_with_ra: ds_durations.len(),
    })
}

/// Time of the first action credited to `seg`, if any.
fn first_action(seg: &Segment, events: &[&TriggerEvent], attribution: Attribution) -> Option<f64> {
    let (a, b) = (seg.t_start_s, seg.t_end_s);
    events
        .iter()
        .filter_map(|e| match attribution {
            Attribution::EventInSegment => (e.t_s >= a - EPS && e.t_s < b - EPS).then_some(e.t_s),
            Attribution::AnyTickBelow => {
                (e.t_s < b - EPS && e.run_end_s > a + EPS).then(|| e.t_s.max(a))
            }
        })
        .min_by(f64::total_cmp)
}

/// Parameter grid for sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyGrid {
    pub points: Vec<PolicyParams>,
}

impl PolicyGrid {
    /// Thresholds 0.10..=0.50 at a 3 s window, then windows 1..=10 s at 0.35.
    pub fn standard() -> Self {
        Self::cross(
            3.0,
            &thresholds(),
            0.35,
            &(1..=10).map(f64::from).collect::<Vec<_>>(),
        )
    }

    pub fn cross(
        fixed_window: f64,
        thresholds: &[f64],
        fixed_threshold: f64,
        windows: &[f64],
    ) -> Self {
        let mut points: Vec<PolicyParams> = thresholds
            .iter()
            .map(|&threshold| PolicyParams {
                window_s: fixed_window,
                threshold,
            })
            .collect();
        points.extend(windows.iter().map(|&window_s| PolicyParams {
            window_s,
            threshold: fixed_threshold,
        }));
        PolicyGrid { points }
    }

    pub fn full(windows: &[f64], thresholds: &[f64]) -> Self {
        let points = windows
            .iter()
            .flat_map(|&window_s| {
                thresholds.iter().map(move |&threshold| PolicyParams {
                    window_s,
                    threshold,
                })
            })
            .collect();
        PolicyGrid { points }
    }
}

fn thresholds() -> Vec<f64> {
    (2..=10)
        .map(|k| f64::from(k) * 0.05)
        .map(|t| (t * 100.0).round() / 100.0)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCorrelation {
    /// `"window"` or `"threshold"`: the parameter held fixed.
    pub fixed: String,
    pub fixed_value: f64,
    pub metric: String,
    pub n_points: usize,
    pub r_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub reports: Vec<PolicyReport>,
    pub correlations: Vec<SweepCorrelation>,
}

pub fn policy_sweep(
    timelines: &[Timeline],
    segments: &[Segment],
    stats: &SequenceStats,
    grid: &PolicyGrid,
    stride_s: f64,
    attribution: Attribution,
) -> Result<SweepResult> {
    if grid.points.is_empty() {
        return Err(Error::Config("empty policy grid".into()));
    }
    let mut seen = Vec::new();
    let unique: Vec<PolicyParams> = grid
        .points
        .iter()
        .filter(|p| {
            let k = (p.window_s.to_bits(), p.threshold.to_bits());
            let fresh = !seen.contains(&k);
            seen.push(k);
            fresh
        })
        .copied()
        .collect();
    let reports: Vec<Result<PolicyReport>> = {
        use rayon::prelude::*;
        unique
            .par_iter()
            .map(|p| {
                let events = run_policy(timelines, p, stride_s);
                evaluate_policy(*p, &events, segments, stats, attribution)
            })
            .collect()
    };
    let reports: Vec<PolicyReport> = reports.into_iter().collect::<Result<_>>()?;
    let correlations = sweep_correlations(&reports);
    Ok(SweepResult {
        reports,
        correlations,
    })
}

type Metric = fn(&PolicyReport) -> Option<f64>;

const METRICS: [(&str, Metric); 5] = [
    ("long_ds", |r| r.pct_long_ds_with_ra),
    ("es", |r| r.pct_es_with_ra),
    ("short_ds", |r| r.pct_short_ds_with_ra),
    ("ds_length", |r| r.median_ds_duration_with_ra_s),
    ("reengage_point", |r| r.median_elapsed_before_ra_s),
];

/// Spearman correlation of the varied parameter against each metric, for
/// every fixed value shared by at least two grid points.
pub fn sweep_correlations(reports: &[PolicyReport]) -> Vec<SweepCorrelation> {
    let mut out = Vec::new();
    for fixed in ["threshold", "window"] {
        let key = |r: &PolicyReport| {
            if fixed == "threshold" {
                r.params.threshold
            } else {
                r.params.window_s
            }
        };
        let varied = |r: &PolicyReport| {
            if fixed == "threshold" {
                r.params.window_s
            } else {
                r.params.threshold
            }
        };
        let mut values: Vec<f64> = reports.iter().map(key).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for v in values {
            let group: Vec<&PolicyReport> = reports.iter().filter(|r| key(r) == v).collect();
            if group.len() < 2 {
                continue;
            }
            for (name, metric) in METRICS {
                let pairs: Vec<(f64, f64)> = group
                    .iter()
                    .filter_map(|r| metric(r).map(|m| (varied(r), m)))
                    .collect();
                let (x, y): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
                let r_s = if x.len() >= 2 {
                    spearman(&x, &y).ok().flatten()
                } else {
                    None
                };
                out.push(SweepCorrelation {
                    fixed: fixed.to_string(),
                    fixed_value: v,
                    metric: name.to_string(),
                    n_points: x.len(),
                    r_s,
                });
            }
        }
    }
    out
}

/// Sweep table with the published column layout; percentages and seconds.
pub fn sweep_csv(reports: &[PolicyReport]) -> String {
    let mut s = String::from("Window,Threshold,Long DS,ES,Short DS,DS Length,Re-engage Point\n");
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.1}"));
    for r in reports {
        s.push_str(&format!(
            "{:.1},{:.2},{},{},{},{},{}\n",
            r.params.window_s,
            r.params.threshold,
            cell(r.pct_long_ds_with_ra),
            cell(r.pct_es_with_ra),
            cell(r.pct_short_ds_with_ra),
            cell(r.median_ds_duration_with_ra_s),
            cell(r.median_elapsed_before_ra_s)
        ));
    }
    s
}
