use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{SessionKey, SynthConfig};
use crate::error::{Error, Result};
use crate::models::GbdtConfig;
use crate::policy::{Attribution, PolicyGrid};
use crate::preprocess::{FeatureGroup, WindowConfig};
use crate::protocols::ModelSpec;

/// Prefix of environment variables that override config keys.
pub const ENV_PREFIX: &str = "ENGAGEKIT_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    /// Synthetic source; mutually exclusive with `data.frames`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    pub window: WindowConfig,
    pub model: ModelSpec,
    pub evaluate: EvaluateConfig,
    pub policy: PolicyConfig,
    pub stats: StatsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: None,
            data: DataConfig::default(),
            synth: None,
            window: WindowConfig::default(),
            model: ModelSpec::Gbdt(GbdtConfig::default()),
            evaluate: EvaluateConfig::default(),
            policy: PolicyConfig::default(),
            stats: StatsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub game_bounds: Option<PathBuf>,
    pub exclude_sessions: Vec<SessionKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Parsed with [`FeatureGroup`]'s `FromStr`.
    pub feature_group: String,
    pub threshold: f64,
    pub generalized_train_users: Vec<usize>,
    pub individualized_fractions: Vec<f64>,
    pub random_fractions: Vec<f64>,
    pub random_repeats: usize,
}

fn tenths() -> Vec<f64> {
    (1..=9).map(|k| f64::from(k) / 10.0).collect()
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            feature_group: "all".into(),
            threshold: 0.5,
            generalized_train_users: (1..=6).collect(),
            individualized_fractions: tenths(),
            random_fractions: tenths(),
            random_repeats: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Generalized training-set size whose held-out predictions drive the policy.
    pub train_users: usize,
    pub fixed_window_s: f64,
    pub thresholds: Vec<f64>,
    pub fixed_threshold: f64,
    pub windows_s: Vec<f64>,
    pub attribution: Attribution,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            train_users: 6,
            fixed_window_s: 3.0,
            thresholds: (2..=10).map(|k| f64::from(k) * 5.0 / 100.0).collect(),
            fixed_threshold: 0.35,
            windows_s: (1..=10).map(f64::from).collect(),
            attribution: Attribution::AnyTickBelow,
        }
    }
}

impl PolicyConfig {
    pub fn grid(&self) -> PolicyGrid {
        PolicyGrid::cross(
            self.fixed_window_s,
            &self.thresholds,
            self.fixed_threshold,
            &self.windows_s,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    /// Rows exported for plotting need a window-median face confidence at or above this.
    pub face_confidence_min: f64,
    pub pca_components: usize,
    pub trend_bins: usize,
    pub speech_horizon_s: f64,
    pub key_feature_min_abs_r: f64,
    /// CSV of binary codes, one column per rater and one row per item.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            face_confidence_min: 0.75,
            pca_components: 2,
            trend_bins: 10,
            speech_horizon_s: 5.0,
            key_feature_min_abs_r: 0.2,
            annotations: None,
        }
    }
}

impl RunConfig {
    /// Parses TOML text, then applies environment overrides.
    pub fn from_toml_with_env(
        text: &str,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {e}")))?;
        apply_env_overrides(&mut table, env)?;
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {e}")))?;
        Ok(cfg)
    }

    /// Reads a config file; relative data paths are resolved against its directory.
    pub fn load(path: &Path, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_with_env(&text, env)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.data.frames,
            &mut cfg.data.schema,
            &mut cfg.data.game_bounds,
            &mut cfg.stats.annotations,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Propagates the global seed to every seeded component and validates.
    pub fn resolve(mut self) -> Result<Self> {
        if self.data.frames.is_some() && self.synth.is_some() {
            return Err(Error::Config(
                "set either data.frames or [synth], not both".into(),
            ));
        }
        if self.data.frames.is_none() && self.synth.is_none() {
            self.synth = Some(SynthConfig::default());
        }
        if let Some(s) = &mut self.synth {
            s.seed = self.seed;
            s.validate()?;
        }
        if let ModelSpec::Gbdt(g) = &mut self.model {
            g.seed = self.seed;
            g.validate()?;
        }
        self.window.validate()?;
        self.feature_group()?;
        let e = &self.evaluate;
        if !(0.0..=1.0).contains(&e.threshold) {
            return Err(Error::Config(
                "evaluate.threshold must lie in [0, 1]".into(),
            ));
        }
        let fractions = e.individualized_fractions.iter().chain(&e.random_fractions);
        if fractions.into_iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::Config("train fractions must lie in (0, 1)".into()));
        }
        if e.random_repeats == 0 {
            return Err(Error::Config(
                "evaluate.random_repeats must be positive".into(),
            ));
        }
        let p = &self.policy;
        if p.windows_s
            .iter()
            .chain([&p.fixed_window_s])
            .any(|w| w.is_nan() || *w <= 0.0)
        {
            return Err(Error::Config("policy windows must be positive".into()));
        }
        if self.stats.pca_components == 0 {
            return Err(Error::Config(
                "stats.pca_components must be positive".into(),
            ));
        }
        Ok(self)
    }

    pub fn feature_group(&self) -> Result<FeatureGroup> {
        self.evaluate.feature_group.parse()
    }

    /// Hash of the resolved configuration, output directory excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        crate::preprocess::fingerprint_str(&serde_json::to_string(&c).expect("config serializes"))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Applies `ENGAGEKIT_<SECTION>__<KEY>=value` (any depth, `__`-separated) and
/// `ENGAGEKIT_SEED`. Values are parsed as TOML, falling back to a string.
/// Variables without a `__` other than `ENGAGEKIT_SEED` are ignored.
pub fn apply_env_overrides(
    table: &mut toml::Table,
    env: impl IntoIterator<Item = (String, String)>,
) -> Result<()> {
    let mut vars: Vec<(String, String)> = env
        .into_iter()
        .filter_map(|(k, v)| {
            k.strip_prefix(ENV_PREFIX)
                .map(|rest| (rest.to_ascii_lowercase(), v))
        })
        .filter(|(k, _)| k.contains("__") || k == "seed")
        .collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<&str> = key.split("__").collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!(
                "malformed override {ENV_PREFIX}{}",
                key.to_uppercase()
            )));
        }
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or(toml::Value::String(raw));
        let (last, parents) = path.split_last().expect("non-empty");
        let mut cur = &mut *table;
        for p in parents {
            let entry = cur
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cur = entry.as_table_mut().ok_or_else(|| {
                Error::Config(format!("override path `{key}` crosses a non-table value"))
            })?;
        }
        cur.insert(last.to_string(), value);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default().resolve().unwrap();
        let back = RunConfig::from_toml_with_env(&cfg.to_toml_string(), []).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.policy.grid().points.len(), 19);
    }

    #[test]
    fn env_overrides_apply() {
        let text = "seed = 1\n[model]\nkind = \"gbdt\"\nn_trees = 50\n";
        let cfg = RunConfig::from_toml_with_env(
            text,
            env(&[
                ("ENGAGEKIT_MODEL__N_TREES", "7"),
                ("ENGAGEKIT_MODEL__BAGGING__N_BAGS", "2"),
                ("ENGAGEKIT_SEED", "9"),
                ("ENGAGEKIT_EVALUATE__FEATURE_GROUP", "visual"),
                ("ENGAGEKIT_STUDY_CSV", "/elsewhere"),
                ("OTHER__X", "1"),
            ]),
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.evaluate.feature_group, "visual");
        let ModelSpec::Gbdt(g) = &cfg.model else {
            panic!()
        };
        assert_eq!((g.n_trees, g.bagging.n_bags), (7, 2));
    }

    #[test]
    fn invalid_configs() {
        assert!(RunConfig::from_toml_with_env("bogus = 1", []).is_err());
        let both = "[data]\nframes = \"x.csv\"\n[synth]\nparticipants = 3\n";
        let cfg = RunConfig::from_toml_with_env(both, []).unwrap();
        assert!(cfg.resolve().is_err());
        let bad =
            RunConfig::from_toml_with_env("[evaluate]\nrandom_fractions = [1.5]\n", []).unwrap();
        assert!(bad.resolve().is_err());
    }

    #[test]
    fn seed_reaches_components_and_hash() {
        let a = RunConfig {
            seed: 3,
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(a.synth.as_ref().unwrap().seed, 3);
        let b = RunConfig {
            seed: 4,
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_ne!(a.hash(), b.hash());
        let c = RunConfig {
            out: Some("elsewhere".into()),
            ..a.clone()
        };
        assert_eq!(a.hash(), c.hash());
    }
}
