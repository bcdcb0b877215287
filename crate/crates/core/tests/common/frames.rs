//! Frame-stream fixtures and the integer-tick windowing oracle.

use engagekit::dataset::{FeatureSchema, FrameRecord, FrameTable, SessionFrames, SessionKey};

pub fn schema() -> FeatureSchema {
    FeatureSchema::from_toml_str(
        r#"
        [[columns]]
        name = "participant_id"
        role = "participant"
        kind = "identifier"
        modality = "meta"
        [[columns]]
        name = "session_id"
        role = "session"
        kind = "identifier"
        modality = "meta"
        [[columns]]
        name = "timestamp_s"
        role = "timestamp"
        kind = "continuous"
        modality = "meta"
        [[columns]]
        name = "engaged"
        role = "label"
        kind = "binary"
        modality = "meta"
        [[columns]]
        name = "x"
        kind = "continuous"
        modality = "visual"
        [[columns]]
        name = "face_confidence"
        kind = "continuous"
        modality = "visual"
        key = "face_confidence"
        [[columns]]
        name = "k"
        kind = "discrete"
        modality = "game"
        "#,
    )
    .unwrap()
}

/// Frames at integer ticks of 1/30 s.
pub fn table(ticks: &[usize], feats: &[Vec<f64>], labels: &[u8]) -> FrameTable {
    let frames = ticks
        .iter()
        .zip(feats)
        .zip(labels)
        .map(|((&k, f), &y)| FrameRecord {
            timestamp_s: k as f64 / 30.0,
            features: f.clone(),
            engaged: y,
        })
        .collect();
    FrameTable::new(
        schema(),
        vec![SessionFrames {
            key: SessionKey::new("p", "s"),
            session_index: 0,
            frames,
        }],
    )
    .unwrap()
}

pub struct OracleWindow {
    pub start_tick: usize,
    pub n: usize,
    pub features: Vec<f64>,
    pub label: u8,
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn pop_var(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

/// 1 s windows every 0.5 s, i.e. 30 ticks every 15, in integer arithmetic.
pub fn oracle(ticks: &[usize], feats: &[Vec<f64>], labels: &[u8]) -> Vec<OracleWindow> {
    let first = ticks[0];
    let last = *ticks.last().unwrap();
    let mut out = Vec::new();
    let mut j = first / 15;
    while 15 * j + 30 <= last + 1 {
        let (lo, hi) = (15 * j, 15 * j + 30);
        let idx: Vec<usize> = (0..ticks.len())
            .filter(|&i| ticks[i] >= lo && ticks[i] < hi)
            .collect();
        if !idx.is_empty() {
            let mut features = Vec::new();
            for c in 0..3 {
                let vals: Vec<f64> = idx
                    .iter()
                    .map(|&i| feats[i][c])
                    .filter(|v| !v.is_nan())
                    .collect();
                features.push(median(vals.clone()));
                if c < 2 {
                    features.push(pop_var(&vals));
                } else {
                    let changed = vals.iter().any(|v| *v != vals[0]);
                    features.push(f64::from(u8::from(changed)));
                }
            }
            let ones = idx.iter().filter(|&&i| labels[i] == 1).count();
            out.push(OracleWindow {
                start_tick: lo,
                n: idx.len(),
                features,
                label: u8::from(ones * 2 > idx.len()),
            });
        }
        j += 1;
    }
    out
}

pub fn same(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-9 * (1.0 + b.abs())
}
