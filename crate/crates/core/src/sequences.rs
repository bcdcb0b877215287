//! Engagement and disengagement sequences, their duration statistics and
//! engagement trends.

use serde::{Deserialize, Serialize};

use crate::dataset::{KeyFeature, SessionKey};
use crate::error::{Error, Result};
use crate::preprocess::{DerivedKind, WindowTable};
use crate::stats::{linear_regression, LinearFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SeqKind {
    #[serde(rename = "ES")]
    Engaged,
    #[serde(rename = "DS")]
    Disengaged,
}

impl SeqKind {
    pub fn from_label(y: u8) -> Self {
        if y == 1 {
            SeqKind::Engaged
        } else {
            SeqKind::Disengaged
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SeqKind::Engaged => "ES",
            SeqKind::Disengaged => "DS",
        }
    }
}

/// A maximal run of windows sharing one label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SeqKind,
    pub key: SessionKey,
    pub session_index: usize,
    pub t_start_s: f64,
    pub t_end_s: f64,
    /// Window count times the stride.
    pub duration_s: f64,
    pub n_windows: usize,
    /// Index of the first window in the source table.
    pub first_row: usize,
}

/// Run-length encodes one session's window labels. Each window contributes
/// one stride of duration, so segments tile the session's grid.
pub fn segment_session(
    key: &SessionKey,
    session_index: usize,
    starts: &[f64],
    labels: &[u8],
    stride_s: f64,
    first_row: usize,
) -> Vec<Segment> {
    assert_eq!(starts.len(), labels.len());
    let mut out = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        let mut j = i + 1;
        while j < labels.len() && labels[j] == labels[i] {
            j += 1;
        }
        let n = j - i;
        out.push(Segment {
            kind: SeqKind::from_label(labels[i]),
            key: key.clone(),
            session_index,
            t_start_s: starts[i],
            t_end_s: starts[j - 1] + stride_s,
            duration_s: n as f64 * stride_s,
            n_windows: n,
            first_row: first_row + i,
        });
        i = j;
    }
    out
}

pub fn segment_labels(windows: &WindowTable) -> Vec<Segment> {
    let stride = windows.config().stride_s;
    let rows = windows.rows();
    windows
        .session_ranges()
        .into_iter()
        .flat_map(|r| {
            let starts: Vec<f64> = rows[r.clone()].iter().map(|w| w.t_start_s).collect();
            let labels: Vec<u8> = rows[r.clone()].iter().map(|w| w.engaged).collect();
            let first = &rows[r.start];
            segment_session(
                &first.key,
                first.session_index,
                &starts,
                &labels,
                stride,
                r.start,
            )
        })
        .collect()
}

pub fn segments_csv(segments: &[Segment]) -> String {
    let mut s =
        String::from("participant_id,session_id,kind,t_start_s,t_end_s,duration_s,n_windows\n");
    for g in segments {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            g.key.participant,
            g.key.session,
            g.kind.as_str(),
            g.t_start_s,
            g.t_end_s,
            g.duration_s,
            g.n_windows
        ));
    }
    s
}

/// Linear-interpolation quantile (type 7) of sorted data.
pub fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    assert!(!v.is_empty());
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    Some(quantile_sorted(&s, 0.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Some(Quartiles {
            n: s.len(),
            min: s[0],
            q1: quantile_sorted(&s, 0.25),
            median: quantile_sorted(&s, 0.5),
            q3: quantile_sorted(&s, 0.75),
            max: s[s.len() - 1],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DsClass {
    /// Duration at or above the upper quartile.
    Long,
    Mid,
    /// Duration strictly below the lower quartile.
    Short,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceStats {
    pub es: Option<Quartiles>,
    pub ds: Option<Quartiles>,
    pub n_long_ds: usize,
    /// Long DS counted with a strict `>` upper-quartile comparison.
    pub n_long_ds_strict: usize,
    pub n_short_ds: usize,
    pub total_ds_time_s: f64,
    pub long_ds_time_share: Option<f64>,
    pub mid_ds_time_share: Option<f64>,
    pub short_ds_time_share: Option<f64>,
}

impl SequenceStats {
    pub fn long_ds_threshold_s(&self) -> Option<f64> {
        self.ds.map(|q| q.q3)
    }

    pub fn short_ds_threshold_s(&self) -> Option<f64> {
        self.ds.map(|q| q.q1)
    }

    pub fn classify_ds(&self, duration_s: f64) -> Option<DsClass> {
        let q = self.ds?;
        Some(if duration_s >= q.q3 - 1e-9 {
            DsClass::Long
        } else if duration_s < q.q1 - 1e-9 {
            DsClass::Short
        } else {
            DsClass::Mid
        })
    }
}

pub fn sequence_stats(segments: &[Segment]) -> SequenceStats {
    let dur = |k: SeqKind| -> Vec<f64> {
        segments
            .iter()
            .filter(|s| s.kind == k)
            .map(|s| s.duration_s)
            .collect()
    };
    let ds_d = dur(SeqKind::Disengaged);
    let mut st = SequenceStats {
        es: Quartiles::of(&dur(SeqKind::Engaged)),
        ds: Quartiles::of(&ds_d),
        n_long_ds: 0,
        n_long_ds_strict: 0,
        n_short_ds: 0,
        total_ds_time_s: ds_d.iter().sum(),
        long_ds_time_share: None,
        mid_ds_time_share: None,
        short_ds_time_share: None,
    };
    let Some(q) = st.ds else { return st };
    let (mut long_t, mut mid_t, mut short_t) = (0.0, 0.0, 0.0);
    for &d in &ds_d {
        match st.classify_ds(d).expect("ds stats present") {
            DsClass::Long => {
                st.n_long_ds += 1;
                long_t += d;
            }
            DsClass::Mid => mid_t += d,
            DsClass::Short => {
                st.n_short_ds += 1;
                short_t += d;
            }
        }
        if d > q.q3 + 1e-9 {
            st.n_long_ds_strict += 1;
        }
    }
    let total = long_t + mid_t + short_t;
    st.long_ds_time_share = Some(long_t / total);
    st.mid_ds_time_share = Some(mid_t / total);
    st.short_ds_time_share = Some(short_t / total);
    st
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantTrend {
    pub participant: String,
    /// Engagement rate per chronological bin; `None` for empty bins.
    pub rates: Vec<Option<f64>>,
    pub fit: Option<LinearFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub n_bins: usize,
    pub participants: Vec<ParticipantTrend>,
    /// Per-bin mean of participant rates.
    pub mean_rates: Vec<Option<f64>>,
    /// Regression of every (bin, participant rate) point on the bin index.
    pub pooled: LinearFit,
}

/// OLS trend of equally spaced rates, indexed `0..n`.
pub fn trend_of_rates(rates: &[f64]) -> Result<LinearFit> {
    let x: Vec<f64> = (0..rates.len()).map(|i| i as f64).collect();
    linear_regression(&x, rates)
}

/// Each participant's windows, in (session, time) order, are cut into
/// `n_bins` equal-count bins; bin rates are regressed on the bin index.
pub fn engagement_trend(windows: &WindowTable, n_bins: usize) -> Result<TrendReport> {
    if n_bins < 3 {
        return Err(Error::Config("trend needs at least three bins".into()));
    }
    let rows = windows.rows();
    let mut participants = Vec::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for p in windows.participants() {
        let mut idx = windows.participant_rows(&p);
        idx.sort_by(|&a, &b| {
            rows[a]
                .session_index
                .cmp(&rows[b].session_index)
                .then(rows[a].t_start_s.total_cmp(&rows[b].t_start_s))
        });
        let n = idx.len();
        let mut pos = vec![0usize; n_bins];
        let mut cnt = vec![0usize; n_bins];
        for (k, &i) in idx.iter().enumerate() {
            let b = k * n_bins / n;
            cnt[b] += 1;
            pos[b] += usize::from(rows[i].engaged);
        }
        let rates: Vec<Option<f64>> = (0..n_bins)
            .map(|b| (cnt[b] > 0).then(|| pos[b] as f64 / cnt[b] as f64))
            .collect();
        let (px, py): (Vec<f64>, Vec<f64>) = rates
            .iter()
            .enumerate()
            .filter_map(|(b, r)| r.map(|r| (b as f64, r)))
            .unzip();
        let fit = linear_regression(&px, &py).ok();
        xs.extend(px);
        ys.extend(py);
        participants.push(ParticipantTrend {
            participant: p,
            rates,
            fit,
        });
    }
    let mut distinct: Vec<f64> = xs.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InsufficientData(
            "fewer than three non-empty bins".into(),
        ));
    }
    let mean_rates = (0..n_bins)
        .map(|b| {
            let v: Vec<f64> = participants.iter().filter_map(|p| p.rates[b]).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    Ok(TrendReport {
        n_bins,
        participants,
        mean_rates,
        pooled: linear_regression(&xs, &ys)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeechConditioning {
    pub horizon_s: f64,
    /// Engagement rate where the robot spoke within the horizon.
    pub rate_recent: Option<f64>,
    pub rate_not_recent: Option<f64>,
    pub n_recent: usize,
    pub n_not_recent: usize,
}

/// Engagement rate split on the window median of time since the robot spoke.
pub fn engagement_by_robot_speech(
    windows: &WindowTable,
    horizon_s: f64,
) -> Result<SpeechConditioning> {
    let j = windows
        .columns()
        .iter()
        .position(|c| {
            c.key == Some(KeyFeature::RobotSpeechElapsed) && c.derived == DerivedKind::Median
        })
        .ok_or_else(|| Error::UnknownFeature("robot_speech_elapsed".into()))?;
    let (mut n_r, mut e_r, mut n_n, mut e_n) = (0usize, 0usize, 0usize, 0usize);
    for r in windows.rows() {
        let v = r.features[j];
        if v.is_nan() {
            continue;
        }
        if v <= horizon_s {
            n_r += 1;
            e_r += usize::from(r.engaged);
        } else {
            n_n += 1;
            e_n += usize::from(r.engaged);
        }
    }
    let rate = |e: usize, n: usize| (n > 0).then(|| e as f64 / n as f64);
    Ok(SpeechConditioning {
        horizon_s,
        rate_recent: rate(e_r, n_r),
        rate_not_recent: rate(e_n, n_n),
        n_recent: n_r,
        n_not_recent: n_n,
    })
}
