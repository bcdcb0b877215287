use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::WindowTable;
use crate::dataset::Modality;
use crate::error::{Error, Result};

/// Column subset used to train a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    All,
    Visual,
    Audio,
    Game,
    /// The seven tagged key features with their derived columns.
    Key,
    /// Window column names, or base frame column names that expand to every
    /// derived column of that base.
    Explicit(Vec<String>),
}

impl FromStr for FeatureGroup {
    type Err = Error;

    /// `all`, `visual`, `audio`, `game`, `key`, or a comma-separated column list.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "all" => FeatureGroup::All,
            "visual" => FeatureGroup::Visual,
            "audio" => FeatureGroup::Audio,
            "game" => FeatureGroup::Game,
            "key" => FeatureGroup::Key,
            "" => return Err(Error::Config("empty feature group".into())),
            list if list.contains(',') || !list.chars().all(|c| c.is_ascii_lowercase()) => {
                FeatureGroup::Explicit(list.split(',').map(|n| n.trim().to_string()).collect())
            }
            other => FeatureGroup::Explicit(vec![other.to_string()]),
        })
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureGroup::All => f.write_str("all"),
            FeatureGroup::Visual => f.write_str("visual"),
            FeatureGroup::Audio => f.write_str("audio"),
            FeatureGroup::Game => f.write_str("game"),
            FeatureGroup::Key => f.write_str("key"),
            FeatureGroup::Explicit(names) => f.write_str(&names.join(",")),
        }
    }
}

/// Projects `table` onto `group`, keeping column order and all row metadata.
pub fn select_features(table: &WindowTable, group: &FeatureGroup) -> Result<WindowTable> {
    let cols = table.columns();
    let keep: Vec<usize> = match group {
        FeatureGroup::All => return Ok(table.clone()),
        FeatureGroup::Visual => by_modality(table, Modality::Visual),
        FeatureGroup::Audio => by_modality(table, Modality::Audio),
        FeatureGroup::Game => by_modality(table, Modality::Game),
        FeatureGroup::Key => (0..cols.len()).filter(|&j| cols[j].key.is_some()).collect(),
        FeatureGroup::Explicit(names) => {
            let mut mask = vec![false; cols.len()];
            for n in names {
                let mut hit = false;
                for (j, c) in cols.iter().enumerate() {
                    if c.name == *n || c.base == *n {
                        mask[j] = true;
                        hit = true;
                    }
                }
                if !hit {
                    return Err(Error::UnknownFeature(n.clone()));
                }
            }
            (0..cols.len()).filter(|&j| mask[j]).collect()
        }
    };
    if keep.is_empty() {
        return Err(Error::Config(format!(
            "feature group '{group}' selects no columns"
        )));
    }
    let columns = keep.iter().map(|&j| cols[j].clone()).collect();
    let rows = table
        .rows()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.features = keep.iter().map(|&j| r.features[j]).collect();
            r
        })
        .collect();
    Ok(table.with_columns(columns, rows))
}

fn by_modality(table: &WindowTable, m: Modality) -> Vec<usize> {
    let cols = table.columns();
    (0..cols.len()).filter(|&j| cols[j].modality == m).collect()
}
