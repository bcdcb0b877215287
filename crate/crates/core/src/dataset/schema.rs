use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_SCHEMA: &str = include_str!("../../schema/default_schema.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Discrete,
    Binary,
    /// Free-form identifier, only valid for the participant and session columns.
    Identifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Visual,
    Audio,
    Game,
    Meta,
}

/// Bookkeeping columns that are not model features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Participant,
    Session,
    Timestamp,
    Label,
}

/// The seven features that carry most of the engagement signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyFeature {
    SessionElapsed,
    PeopleCount,
    GazeDirection,
    CameraDistance,
    RobotSpeechElapsed,
    IncorrectResponses,
    FaceConfidence,
}

impl KeyFeature {
    pub const ALL: [KeyFeature; 7] = [
        KeyFeature::SessionElapsed,
        KeyFeature::PeopleCount,
        KeyFeature::GazeDirection,
        KeyFeature::CameraDistance,
        KeyFeature::RobotSpeechElapsed,
        KeyFeature::IncorrectResponses,
        KeyFeature::FaceConfidence,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<ColumnRole>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<KeyFeature>,
}

impl ColumnSpec {
    pub fn feature(name: &str, kind: ColumnKind, modality: Modality) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind,
            modality,
            role: None,
            key: None,
        }
    }

    pub fn with_key(mut self, key: KeyFeature) -> Self {
        self.key = Some(key);
        self
    }

    pub fn is_feature(&self) -> bool {
        self.role.is_none()
    }
}

/// Ordered column inventory of a frame-level log.
///
/// Feature columns are every column without a `role`; their order here is the
/// order of [`FrameRecord::features`](super::FrameRecord::features).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeatureSchema {
    columns: Vec<ColumnSpec>,
    #[serde(skip)]
    features: Vec<usize>,
    #[serde(skip)]
    roles: [usize; 4],
}

#[derive(Deserialize)]
struct SchemaFile {
    columns: Vec<ColumnSpec>,
}

impl FeatureSchema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &columns {
            if c.name.is_empty() {
                return Err(Error::Schema("empty column name".into()));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
        }

        let mut roles = [usize::MAX; 4];
        for (i, c) in columns.iter().enumerate() {
            let Some(role) = c.role else {
                if c.kind == ColumnKind::Identifier {
                    return Err(Error::Schema(format!(
                        "feature column `{}` cannot be an identifier",
                        c.name
                    )));
                }
                if c.modality == Modality::Meta {
                    return Err(Error::Schema(format!(
                        "feature column `{}` has meta modality",
                        c.name
                    )));
                }
                continue;
            };
            let slot = role_slot(role);
            if roles[slot] != usize::MAX {
                return Err(Error::Schema(format!("more than one {role:?} column")));
            }
            if role == ColumnRole::Label && c.kind != ColumnKind::Binary {
                return Err(Error::Schema(format!(
                    "label column `{}` must be binary",
                    c.name
                )));
            }
            roles[slot] = i;
        }
        for (slot, idx) in roles.iter().enumerate() {
            if *idx == usize::MAX {
                return Err(Error::Schema(format!("missing {:?} column", ROLES[slot])));
            }
        }

        let features: Vec<usize> = columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_feature())
            .map(|(i, _)| i)
            .collect();
        if features.is_empty() {
            return Err(Error::Schema("schema has no feature columns".into()));
        }

        Ok(FeatureSchema {
            columns,
            features,
            roles,
        })
    }

    /// The 60-feature inventory of the in-home study logs.
    pub fn study_default() -> Self {
        Self::from_toml_str(DEFAULT_SCHEMA).expect("bundled schema is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SchemaFile = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        Self::new(file.columns)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            columns: &'a [ColumnSpec],
        }
        toml::to_string(&Out {
            columns: &self.columns,
        })
        .expect("schema serializes")
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn feature_columns(&self) -> impl ExactSizeIterator<Item = &ColumnSpec> + '_ {
        self.features.iter().map(move |&i| &self.columns[i])
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn role_column(&self, role: ColumnRole) -> &ColumnSpec {
        &self.columns[self.roles[role_slot(role)]]
    }

    /// Position among feature columns of the first column with this key tag.
    pub fn key_feature_index(&self, key: KeyFeature) -> Option<usize> {
        self.feature_columns().position(|c| c.key == Some(key))
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_columns().position(|c| c.name == name)
    }
}

const ROLES: [ColumnRole; 4] = [
    ColumnRole::Participant,
    ColumnRole::Session,
    ColumnRole::Timestamp,
    ColumnRole::Label,
];

fn role_slot(role: ColumnRole) -> usize {
    match role {
        ColumnRole::Participant => 0,
        ColumnRole::Session => 1,
        ColumnRole::Timestamp => 2,
        ColumnRole::Label => 3,
    }
}
