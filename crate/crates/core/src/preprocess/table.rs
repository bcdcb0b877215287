use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::WindowConfig;
use crate::dataset::{format_f64, ColumnKind, FeatureSchema, KeyFeature, Modality, SessionKey};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivedKind {
    Median,
    Variance,
    Change,
}

impl DerivedKind {
    pub fn suffix(self) -> &'static str {
        match self {
            DerivedKind::Median => "",
            DerivedKind::Variance => "_var",
            DerivedKind::Change => "_chg",
        }
    }
}

/// One column of the window feature space and the frame column it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowColumn {
    pub name: String,
    pub base: String,
    pub derived: DerivedKind,
    pub kind: ColumnKind,
    pub modality: Modality,
    pub key: Option<KeyFeature>,
}

impl WindowColumn {
    /// Median column per feature, followed by `_var` (continuous) or `_chg`
    /// (discrete, binary).
    pub fn derive(schema: &FeatureSchema) -> Vec<WindowColumn> {
        let mut out = Vec::with_capacity(schema.n_features() * 2);
        for c in schema.feature_columns() {
            let second = match c.kind {
                ColumnKind::Continuous => DerivedKind::Variance,
                _ => DerivedKind::Change,
            };
            for derived in [DerivedKind::Median, second] {
                out.push(WindowColumn {
                    name: format!("{}{}", c.name, derived.suffix()),
                    base: c.name.clone(),
                    derived,
                    kind: c.kind,
                    modality: c.modality,
                    key: c.key,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub key: SessionKey,
    pub session_index: usize,
    pub t_start_s: f64,
    pub t_end_s: f64,
    pub features: Vec<f64>,
    pub engaged: u8,
    pub n_frames: usize,
}

/// Window rows in session order, chronological within each session.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowTable {
    columns: Vec<WindowColumn>,
    rows: Vec<WindowSample>,
    config: WindowConfig,
}

impl WindowTable {
    pub fn new(columns: Vec<WindowColumn>, rows: Vec<WindowSample>, config: WindowConfig) -> Self {
        debug_assert!(rows.iter().all(|r| r.features.len() == columns.len()));
        WindowTable {
            columns,
            rows,
            config,
        }
    }

    pub fn columns(&self) -> &[WindowColumn] {
        &self.columns
    }

    pub fn rows(&self) -> &[WindowSample] {
        &self.rows
    }

    pub fn config(&self) -> &WindowConfig {
        &self.config
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.engaged).collect()
    }

    /// Participants in order of first appearance.
    pub fn participants(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if out.last() != Some(&r.key.participant) && !out.contains(&r.key.participant) {
                out.push(r.key.participant.clone());
            }
        }
        out
    }

    /// Contiguous row ranges, one per session, in table order.
    pub fn session_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.rows.len() {
            if i == self.rows.len() || self.rows[i].key != self.rows[start].key {
                if i > start {
                    out.push(start..i);
                }
                start = i;
            }
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> WindowTable {
        WindowTable {
            columns: self.columns.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            config: self.config,
        }
    }

    pub fn participant_rows(&self, participant: &str) -> Vec<usize> {
        (0..self.rows.len())
            .filter(|&i| self.rows[i].key.participant == participant)
            .collect()
    }

    pub fn with_rows(&self, rows: Vec<WindowSample>) -> WindowTable {
        WindowTable::new(self.columns.clone(), rows, self.config)
    }

    pub(crate) fn with_columns(
        &self,
        columns: Vec<WindowColumn>,
        rows: Vec<WindowSample>,
    ) -> WindowTable {
        WindowTable::new(columns, rows, self.config)
    }

    /// Fingerprint of the ordered feature names.
    pub fn schema_fingerprint(&self) -> String {
        fingerprint(self.columns.iter().map(|c| c.name.as_str()))
    }
}

pub(crate) fn fingerprint<'a>(names: impl Iterator<Item = &'a str>) -> String {
    let mut buf = Vec::new();
    for n in names {
        buf.extend_from_slice(n.as_bytes());
        buf.push(0);
    }
    fingerprint_bytes(&buf)
}

pub(crate) fn fingerprint_str(s: &str) -> String {
    fingerprint_bytes(s.as_bytes())
}

fn fingerprint_bytes(b: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(&Sha256::digest(b)[..8])
}

const META: [&str; 7] = [
    "participant_id",
    "session_id",
    "session_index",
    "t_start_s",
    "t_end_s",
    "n_frames",
    "engaged",
];

pub fn write_windows<W: Write>(table: &WindowTable, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(
        META.iter()
            .copied()
            .chain(table.columns.iter().map(|c| c.name.as_str())),
    )?;
    let mut cells = Vec::with_capacity(META.len() + table.n_features());
    for r in &table.rows {
        cells.clear();
        cells.push(r.key.participant.clone());
        cells.push(r.key.session.clone());
        cells.push(r.session_index.to_string());
        cells.push(format_f64(r.t_start_s));
        cells.push(format_f64(r.t_end_s));
        cells.push(r.n_frames.to_string());
        cells.push(r.engaged.to_string());
        cells.extend(r.features.iter().map(|v| format_f64(*v)));
        wtr.write_record(&cells)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Reads a window CSV written by [`write_windows`]; `schema` supplies the
/// column metadata. Any subset of the derived columns is accepted.
pub fn read_windows<R: Read>(
    reader: R,
    schema: &FeatureSchema,
    config: WindowConfig,
) -> Result<WindowTable> {
    let all = WindowColumn::derive(schema);
    let by_name: HashMap<&str, &WindowColumn> = all.iter().map(|c| (c.name.as_str(), c)).collect();

    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    let mut pos: HashMap<&str, usize> = HashMap::new();
    let mut columns = Vec::new();
    let mut feature_pos = Vec::new();
    for (i, h) in header.iter().enumerate() {
        if META.contains(&h) {
            pos.insert(h, i);
        } else if let Some(c) = by_name.get(h) {
            columns.push((*c).clone());
            feature_pos.push(i);
        } else {
            return Err(Error::UnknownFeature(h.to_string()));
        }
    }
    let missing: Vec<String> = META
        .iter()
        .filter(|m| !pos.contains_key(*m))
        .map(|m| m.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::HeaderMismatch {
            missing,
            extra: Vec::new(),
        });
    }

    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = n + 1;
        let get = |name: &str| rec.get(pos[name]).unwrap_or("");
        let num = |name: &str| -> Result<f64> {
            let raw = get(name);
            raw.parse().map_err(|_| Error::Parse {
                row,
                column: name.to_string(),
                value: raw.to_string(),
            })
        };
        let engaged = match get("engaged") {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::InvalidLabel {
                    row,
                    value: other.to_string(),
                })
            }
        };
        let mut features = Vec::with_capacity(columns.len());
        for (&p, c) in feature_pos.iter().zip(&columns) {
            let raw = rec.get(p).unwrap_or("");
            features.push(if raw.is_empty() {
                f64::NAN
            } else {
                raw.parse().map_err(|_| Error::Parse {
                    row,
                    column: c.name.clone(),
                    value: raw.to_string(),
                })?
            });
        }
        rows.push(WindowSample {
            key: SessionKey::new(get("participant_id"), get("session_id")),
            session_index: num("session_index")? as usize,
            t_start_s: num("t_start_s")?,
            t_end_s: num("t_end_s")?,
            features,
            engaged,
            n_frames: num("n_frames")? as usize,
        });
    }
    Ok(WindowTable::new(columns, rows, config))
}
