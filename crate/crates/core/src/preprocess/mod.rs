//! Overlapping-window feature space and training-only standardization.

mod scaler;
mod select;
mod table;

use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnKind, FrameRecord, FrameTable, SessionFrames};

pub use scaler::{apply_scaler, fit_scaler, Scaler};
pub use select::{select_features, FeatureGroup};
pub(crate) use table::fingerprint_str;
pub use table::{
    read_windows, write_windows, DerivedKind, WindowColumn, WindowSample, WindowTable,
};

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub window_s: f64,
    pub stride_s: f64,
    /// Nominal frame spacing; the last frame is taken to cover this long.
    pub frame_period_s: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_s: 1.0,
            stride_s: 0.5,
            frame_period_s: 1.0 / 30.0,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.window_s > 0.0 && self.stride_s > 0.0 && self.stride_s <= self.window_s) {
            return Err(crate::Error::Config(
                "need window_s > 0 and 0 < stride_s <= window_s".into(),
            ));
        }
        if self.frame_period_s.is_nan() || self.frame_period_s < 0.0 {
            return Err(crate::Error::Config("frame_period_s must be >= 0".into()));
        }
        Ok(())
    }

    /// Window starts `[s, s + window)` for a session spanning `first..=last`.
    ///
    /// Starts lie on the global `stride` grid, beginning at the grid point at
    /// or before the first frame; a window is kept only if it ends no later
    /// than `last + frame_period`.
    pub fn starts(&self, first: f64, last: f64) -> Vec<f64> {
        let k0 = ((first + EPS) / self.stride_s).floor() as i64;
        let end = last + self.frame_period_s;
        let mut out = Vec::new();
        let mut k = k0;
        loop {
            let s = k as f64 * self.stride_s;
            if s + self.window_s > end + EPS {
                break;
            }
            out.push(s);
            k += 1;
        }
        out
    }
}

/// Aggregates frames into overlapping windows: medians for every feature,
/// population variances for continuous features, change flags for discrete
/// and binary ones, and the median label (ties go to disengaged). Windows with
/// no frames are skipped; windows never cross session boundaries.
pub fn window_aggregate(frames: &FrameTable, cfg: &WindowConfig) -> crate::Result<WindowTable> {
    cfg.validate()?;
    let columns = WindowColumn::derive(frames.schema());
    let kinds: Vec<ColumnKind> = frames.schema().feature_columns().map(|c| c.kind).collect();

    let per_session: Vec<Vec<WindowSample>> = {
        use rayon::prelude::*;
        frames
            .sessions()
            .par_iter()
            .map(|s| window_session(s, &kinds, cfg))
            .collect()
    };
    let rows = per_session.into_iter().flatten().collect();
    Ok(WindowTable::new(columns, rows, *cfg))
}

fn window_session(
    s: &SessionFrames,
    kinds: &[ColumnKind],
    cfg: &WindowConfig,
) -> Vec<WindowSample> {
    let Some((first, last)) = s.span() else {
        return Vec::new();
    };
    let frames = &s.frames;
    let mut out = Vec::new();
    let mut lo = 0;
    for start in cfg.starts(first, last) {
        let end = start + cfg.window_s;
        while lo < frames.len() && frames[lo].timestamp_s < start - EPS {
            lo += 1;
        }
        let mut hi = lo;
        while hi < frames.len() && frames[hi].timestamp_s < end - EPS {
            hi += 1;
        }
        if hi == lo {
            continue;
        }
        let (features, engaged) = aggregate(&frames[lo..hi], kinds);
        out.push(WindowSample {
            key: s.key.clone(),
            session_index: s.session_index,
            t_start_s: start,
            t_end_s: end,
            features,
            engaged,
            n_frames: hi - lo,
        });
    }
    out
}

/// Aggregates one window's frames into derived features and a label.
pub(crate) fn aggregate(frames: &[FrameRecord], kinds: &[ColumnKind]) -> (Vec<f64>, u8) {
    let mut out = Vec::with_capacity(kinds.len() * 2);
    let mut values = Vec::with_capacity(frames.len());
    for (j, kind) in kinds.iter().enumerate() {
        values.clear();
        values.extend(frames.iter().map(|f| f.features[j]).filter(|v| !v.is_nan()));
        values.sort_by(f64::total_cmp);
        out.push(median_sorted(&values));
        match kind {
            ColumnKind::Continuous => out.push(population_variance(&values)),
            ColumnKind::Discrete | ColumnKind::Binary => {
                let changed = values.first() != values.last();
                out.push(if changed { 1.0 } else { 0.0 });
            }
            ColumnKind::Identifier => unreachable!("identifiers are not features"),
        }
    }
    let engaged = frames.iter().filter(|f| f.engaged == 1).count();
    let label = u8::from(2 * engaged > frames.len());
    (out, label)
}

/// Median of sorted values; mean of the two central values for even counts.
pub(crate) fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

fn population_variance(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}
