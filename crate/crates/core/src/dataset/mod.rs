//! Frame-level multimodal logs: schema, CSV ingestion, game-bound truncation
//! and a synthetic generator with the same shape as the study logs.

mod schema;
mod synth;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use schema::{ColumnKind, ColumnRole, ColumnSpec, FeatureSchema, KeyFeature, Modality};
pub use synth::{generate_synthetic, NoiseScales, SynthConfig};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SessionKey {
    pub participant: String,
    pub session: String,
}

impl SessionKey {
    pub fn new(participant: impl Into<String>, session: impl Into<String>) -> Self {
        SessionKey {
            participant: participant.into(),
            session: session.into(),
        }
    }
}

impl std::fmt::Display for SessionKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.participant, self.session)
    }
}

/// One camera frame. `features` follows the schema's feature-column order;
/// missing cells are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub timestamp_s: f64,
    pub features: Vec<f64>,
    pub engaged: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionFrames {
    pub key: SessionKey,
    /// Chronological position of this session among the participant's sessions.
    pub session_index: usize,
    pub frames: Vec<FrameRecord>,
}

impl SessionFrames {
    pub fn span(&self) -> Option<(f64, f64)> {
        Some((
            self.frames.first()?.timestamp_s,
            self.frames.last()?.timestamp_s,
        ))
    }
}

/// Validated frame log, grouped by participant and session in order of first
/// appearance. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTable {
    schema: FeatureSchema,
    sessions: Vec<SessionFrames>,
}

impl FrameTable {
    pub fn new(schema: FeatureSchema, sessions: Vec<SessionFrames>) -> Result<Self> {
        let width = schema.n_features();
        let mut seen = HashSet::new();
        for s in &sessions {
            if s.frames.is_empty() {
                return Err(Error::InsufficientData(format!(
                    "session {} has no frames",
                    s.key
                )));
            }
            if !seen.insert(&s.key) {
                return Err(Error::Schema(format!("session {} appears twice", s.key)));
            }
            let mut prev: Option<f64> = None;
            for (i, f) in s.frames.iter().enumerate() {
                if f.features.len() != width {
                    return Err(Error::FeatureMismatch {
                        expected: width,
                        found: f.features.len(),
                    });
                }
                if f.engaged > 1 {
                    return Err(Error::InvalidLabel {
                        row: i,
                        value: f.engaged.to_string(),
                    });
                }
                if f.timestamp_s.is_nan() || f.timestamp_s < 0.0 {
                    return Err(Error::NegativeTimestamp {
                        row: i,
                        timestamp: f.timestamp_s,
                    });
                }
                if let Some(p) = prev {
                    if f.timestamp_s <= p {
                        return Err(Error::NonMonotonicTimestamp {
                            row: i,
                            participant: s.key.participant.clone(),
                            session: s.key.session.clone(),
                            timestamp: f.timestamp_s,
                            previous: p,
                        });
                    }
                }
                prev = Some(f.timestamp_s);
            }
        }
        Ok(FrameTable { schema, sessions })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn sessions(&self) -> &[SessionFrames] {
        &self.sessions
    }

    pub fn n_rows(&self) -> usize {
        self.sessions.iter().map(|s| s.frames.len()).sum()
    }

    pub fn participants(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for s in &self.sessions {
            if !out.contains(&s.key.participant.as_str()) {
                out.push(&s.key.participant);
            }
        }
        out
    }

    /// Fraction of frames labelled engaged.
    pub fn engaged_fraction(&self) -> f64 {
        let n = self.n_rows();
        if n == 0 {
            return f64::NAN;
        }
        let engaged: usize = self
            .sessions
            .iter()
            .flat_map(|s| &s.frames)
            .map(|f| f.engaged as usize)
            .sum();
        engaged as f64 / n as f64
    }

    /// Bounds spanning every session completely.
    pub fn full_span_bounds(&self) -> GameBounds {
        self.sessions
            .iter()
            .filter_map(|s| s.span().map(|span| (s.key.clone(), span)))
            .collect()
    }
}

/// Per-session `(first_game_start_s, last_game_end_s)`.
pub type GameBounds = BTreeMap<SessionKey, (f64, f64)>;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Sessions dropped at load time, e.g. tutorial sessions.
    #[serde(default)]
    pub exclude_sessions: Vec<SessionKey>,
}

pub fn load_frames(path: &Path, schema: &FeatureSchema) -> Result<FrameTable> {
    load_frames_with(path, schema, &LoadOptions::default())
}

pub fn load_frames_with(
    path: &Path,
    schema: &FeatureSchema,
    options: &LoadOptions,
) -> Result<FrameTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let table = read_frames(std::io::BufReader::new(file), schema, options)?;
    log::info!(
        "loaded {} frames in {} sessions from {}",
        table.n_rows(),
        table.sessions().len(),
        path.display()
    );
    Ok(table)
}

/// Parses a frame CSV. Row numbers in errors are 1-based data rows (the header
/// is row 0).
pub fn read_frames<R: Read>(
    reader: R,
    schema: &FeatureSchema,
    options: &LoadOptions,
) -> Result<FrameTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();

    let mut position: HashMap<&str, usize> = HashMap::new();
    let mut extra = Vec::new();
    for (i, h) in header.iter().enumerate() {
        if schema.column_names().any(|n| n == h) {
            if position.insert(h, i).is_some() {
                extra.push(h.to_string());
            }
        } else {
            extra.push(h.to_string());
        }
    }
    let missing: Vec<String> = schema
        .column_names()
        .filter(|n| !position.contains_key(n))
        .map(str::to_string)
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::HeaderMismatch { missing, extra });
    }

    let col = |role: ColumnRole| position[schema.role_column(role).name.as_str()];
    let (p_col, s_col, t_col, y_col) = (
        col(ColumnRole::Participant),
        col(ColumnRole::Session),
        col(ColumnRole::Timestamp),
        col(ColumnRole::Label),
    );
    let feature_cols: Vec<(usize, &str)> = schema
        .feature_columns()
        .map(|c| (position[c.name.as_str()], c.name.as_str()))
        .collect();
    let excluded: HashSet<&SessionKey> = options.exclude_sessions.iter().collect();

    let mut groups: Vec<SessionFrames> = Vec::new();
    let mut lookup: HashMap<SessionKey, usize> = HashMap::new();
    let mut per_participant: HashMap<String, usize> = HashMap::new();
    let mut record = csv::StringRecord::new();
    let mut row = 0usize;
    while rdr.read_record(&mut record)? {
        row += 1;
        let cell = |c: usize| record.get(c).unwrap_or("").trim();

        let participant = cell(p_col);
        let session = cell(s_col);
        if participant.is_empty() {
            return Err(parse_err(
                row,
                schema.role_column(ColumnRole::Participant),
                "",
            ));
        }
        if session.is_empty() {
            return Err(parse_err(row, schema.role_column(ColumnRole::Session), ""));
        }
        let key = SessionKey::new(participant, session);
        if excluded.contains(&key) {
            continue;
        }

        let t_raw = cell(t_col);
        let timestamp_s: f64 = t_raw
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite())
            .ok_or_else(|| parse_err(row, schema.role_column(ColumnRole::Timestamp), t_raw))?;
        if timestamp_s < 0.0 {
            return Err(Error::NegativeTimestamp {
                row,
                timestamp: timestamp_s,
            });
        }
        let engaged = match cell(y_col) {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::InvalidLabel {
                    row,
                    value: other.to_string(),
                })
            }
        };
        let mut features = Vec::with_capacity(feature_cols.len());
        for &(c, name) in &feature_cols {
            let raw = cell(c);
            if raw.is_empty() {
                features.push(f64::NAN);
            } else {
                let v: f64 = raw.parse().map_err(|_| Error::Parse {
                    row,
                    column: name.to_string(),
                    value: raw.to_string(),
                })?;
                features.push(v);
            }
        }

        let idx = match lookup.get(&key) {
            Some(&i) => i,
            None => {
                let n = per_participant.entry(key.participant.clone()).or_insert(0);
                groups.push(SessionFrames {
                    key: key.clone(),
                    session_index: *n,
                    frames: Vec::new(),
                });
                *n += 1;
                lookup.insert(key, groups.len() - 1);
                groups.len() - 1
            }
        };
        let group = &mut groups[idx];
        if let Some(prev) = group.frames.last() {
            if timestamp_s <= prev.timestamp_s {
                return Err(Error::NonMonotonicTimestamp {
                    row,
                    participant: group.key.participant.clone(),
                    session: group.key.session.clone(),
                    timestamp: timestamp_s,
                    previous: prev.timestamp_s,
                });
            }
        }
        group.frames.push(FrameRecord {
            timestamp_s,
            features,
            engaged,
        });
    }

    if groups.is_empty() {
        return Err(Error::EmptyTable);
    }
    FrameTable::new(schema.clone(), groups)
}

fn parse_err(row: usize, column: &ColumnSpec, value: &str) -> Error {
    Error::Parse {
        row,
        column: column.name.clone(),
        value: value.to_string(),
    }
}

pub fn save_frames(table: &FrameTable, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_frames(table, std::io::BufWriter::new(file))
}

/// Writes the table in schema column order. Numbers use the shortest
/// representation that parses back to the same `f64`; NaN becomes an empty cell.
pub fn write_frames<W: Write>(table: &FrameTable, writer: W) -> Result<()> {
    let schema = table.schema();
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(schema.column_names())?;

    let feature_slot: Vec<Option<usize>> = {
        let mut k = 0;
        schema
            .columns()
            .iter()
            .map(|c| {
                c.is_feature().then(|| {
                    k += 1;
                    k - 1
                })
            })
            .collect()
    };

    let mut cells: Vec<String> = Vec::with_capacity(schema.columns().len());
    for s in table.sessions() {
        for f in &s.frames {
            cells.clear();
            for (c, slot) in schema.columns().iter().zip(&feature_slot) {
                let cell = match (c.role, slot) {
                    (Some(ColumnRole::Participant), _) => s.key.participant.clone(),
                    (Some(ColumnRole::Session), _) => s.key.session.clone(),
                    (Some(ColumnRole::Timestamp), _) => format_f64(f.timestamp_s),
                    (Some(ColumnRole::Label), _) => f.engaged.to_string(),
                    (None, Some(k)) => format_f64(f.features[*k]),
                    (None, None) => unreachable!("feature column without slot"),
                };
                cells.push(cell);
            }
            wtr.write_record(&cells)?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub(crate) fn format_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Reads `participant_id,session_id,first_game_start_s,last_game_end_s` rows.
pub fn load_game_bounds(path: &Path) -> Result<GameBounds> {
    #[derive(Deserialize)]
    struct Row {
        participant_id: String,
        session_id: String,
        first_game_start_s: f64,
        last_game_end_s: f64,
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut out = GameBounds::new();
    for row in rdr.deserialize() {
        let r: Row = row?;
        if r.first_game_start_s.is_nan()
            || r.last_game_end_s.is_nan()
            || r.first_game_start_s > r.last_game_end_s
        {
            return Err(Error::Config(format!(
                "game bounds for {}/{} are inverted",
                r.participant_id, r.session_id
            )));
        }
        out.insert(
            SessionKey::new(r.participant_id, r.session_id),
            (r.first_game_start_s, r.last_game_end_s),
        );
    }
    Ok(out)
}

pub fn save_game_bounds(bounds: &GameBounds, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut wtr = csv::Writer::from_writer(file);
    wtr.write_record([
        "participant_id",
        "session_id",
        "first_game_start_s",
        "last_game_end_s",
    ])?;
    for (k, (a, b)) in bounds {
        wtr.write_record([
            k.participant.clone(),
            k.session.clone(),
            format_f64(*a),
            format_f64(*b),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Keeps only frames with `first_game_start <= t <= last_game_end`. Sessions
/// left without frames are dropped.
pub fn truncate_to_games(frames: &FrameTable, bounds: &GameBounds) -> Result<FrameTable> {
    let mut sessions = Vec::with_capacity(frames.sessions().len());
    for s in frames.sessions() {
        let &(start, end) = bounds.get(&s.key).ok_or_else(|| Error::MissingGameBounds {
            participant: s.key.participant.clone(),
            session: s.key.session.clone(),
        })?;
        let kept: Vec<FrameRecord> = s
            .frames
            .iter()
            .filter(|f| f.timestamp_s >= start && f.timestamp_s <= end)
            .cloned()
            .collect();
        if !kept.is_empty() {
            sessions.push(SessionFrames {
                key: s.key.clone(),
                session_index: s.session_index,
                frames: kept,
            });
        }
    }
    // Re-number so each participant's surviving sessions stay 0..n.
    let mut counters: HashMap<String, usize> = HashMap::new();
    for s in &mut sessions {
        let n = counters.entry(s.key.participant.clone()).or_insert(0);
        s.session_index = *n;
        *n += 1;
    }
    FrameTable::new(frames.schema().clone(), sessions)
}
