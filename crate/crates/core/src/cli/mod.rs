//! Batch pipeline behind the `engagekit` binary.
//!
//! Each command computes what it needs in memory, writes its artifacts to the
//! output directory, and records them in `manifest.json`. `report.md` is
//! regenerated from whatever artifacts are present after every run.

mod config;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::dataset::{
    generate_synthetic, load_frames_with, load_game_bounds, truncate_to_games, FeatureSchema,
    FrameTable, KeyFeature, LoadOptions,
};
use crate::error::{Error, Result};
use crate::metrics::{feature_correlations, key_features, per_user_correlations};
use crate::policy::{policy_sweep, sweep_csv, timeline_segments, timelines_from};
use crate::preprocess::{
    apply_scaler, fit_scaler, select_features, window_aggregate, write_windows, DerivedKind,
    WindowTable,
};
use crate::protocols::{
    fit_rows, run_experiment, summary_table_csv, ExperimentConfig, ExperimentResult, SplitSpec,
};
use crate::sequences::{
    engagement_by_robot_speech, engagement_trend, segment_labels, segments_csv, sequence_stats,
};
use crate::stats::{anova_oneway, fleiss_kappa, pca_project, var_ftest, RaterMatrix};

pub use config::{
    apply_env_overrides, DataConfig, EvaluateConfig, PolicyConfig, RunConfig, StatsConfig,
    ENV_PREFIX,
};
pub use report::{csv_to_markdown, emit_report, NOT_RUN};

pub const MANIFEST: &str = "manifest.json";
pub const REPORT: &str = "report.md";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Synth,
    Preprocess,
    Train,
    Evaluate,
    Sequences,
    Policy,
    Stats,
    All,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Preprocess => "preprocess",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Sequences => "sequences",
            Command::Policy => "policy",
            Command::Stats => "stats",
            Command::All => "all",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub sha256: String,
    pub bytes: u64,
    pub command: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Option<Manifest>> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Some(serde_json::from_str(&text)?))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Runs `command` and returns the names of the artifacts it wrote.
pub fn run(command: Command, cfg: RunConfig, out: &Path) -> Result<Vec<String>> {
    let cfg = cfg.resolve()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut p = Pipeline::new(cfg, out)?;
    let steps = match command {
        Command::All => vec![
            Command::Synth,
            Command::Preprocess,
            Command::Train,
            Command::Evaluate,
            Command::Sequences,
            Command::Policy,
            Command::Stats,
        ],
        c => vec![c],
    };
    for step in steps {
        if step == Command::Synth && command == Command::All && p.cfg.synth.is_none() {
            continue;
        }
        p.command = step.as_str().to_string();
        let r = match step {
            Command::Synth => p.synth(),
            Command::Preprocess => p.preprocess(),
            Command::Train => p.train(),
            Command::Evaluate => p.evaluate(),
            Command::Sequences => p.sequences(),
            Command::Policy => p.policy(),
            Command::Stats => p.stats(),
            Command::All => unreachable!(),
        };
        r.map_err(|e| e.context(format!("command `{}`", step.as_str())))?;
    }
    p.finish()
}

struct Pipeline {
    cfg: RunConfig,
    out: PathBuf,
    command: String,
    manifest: Manifest,
    written: Vec<String>,
    frames: Option<FrameTable>,
    windows: Option<WindowTable>,
    generalized: BTreeMap<usize, ExperimentResult>,
}

impl Pipeline {
    fn new(cfg: RunConfig, out: &Path) -> Result<Self> {
        let hash = cfg.hash();
        let mut manifest = Manifest::load(out)?
            .filter(|m| m.config_hash == hash)
            .unwrap_or_else(|| Manifest {
                tool: env!("CARGO_PKG_NAME").to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash: hash,
                seed: cfg.seed,
                artifacts: BTreeMap::new(),
            });
        manifest.version = env!("CARGO_PKG_VERSION").to_string();
        Ok(Pipeline {
            cfg,
            out: out.to_path_buf(),
            command: String::new(),
            manifest,
            written: Vec::new(),
            frames: None,
            windows: None,
            generalized: BTreeMap::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest.artifacts.insert(
            name.to_string(),
            ArtifactEntry {
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
                command: self.command.clone(),
            },
        );
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn finish(mut self) -> Result<Vec<String>> {
        self.command = "config".into();
        let toml = self.cfg.to_toml_string();
        self.write("config.toml", toml.as_bytes())?;
        self.command = "report".into();
        let report = emit_report(&self.out, &self.manifest)?;
        self.write(REPORT, report.as_bytes())?;
        let manifest = self.manifest.clone();
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.out.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(self.written)
    }

    fn frames(&mut self) -> Result<&FrameTable> {
        if self.frames.is_none() {
            let d = &self.cfg.data;
            let table = match (&d.frames, &self.cfg.synth) {
                (Some(path), _) => {
                    let schema = match &d.schema {
                        Some(s) => FeatureSchema::from_file(s)?,
                        None => FeatureSchema::study_default(),
                    };
                    let opts = LoadOptions {
                        exclude_sessions: d.exclude_sessions.clone(),
                    };
                    load_frames_with(path, &schema, &opts)?
                }
                (None, Some(s)) => generate_synthetic(s)?,
                (None, None) => unreachable!("resolve() picks a source"),
            };
            let table = match &d.game_bounds {
                Some(b) => truncate_to_games(&table, &load_game_bounds(b)?)?,
                None => table,
            };
            self.frames = Some(table);
        }
        Ok(self.frames.as_ref().expect("set above"))
    }

    fn windows(&mut self) -> Result<&WindowTable> {
        if self.windows.is_none() {
            let cfg = self.cfg.window;
            let w = window_aggregate(self.frames()?, &cfg)?;
            if w.is_empty() {
                return Err(Error::EmptyTable);
            }
            self.windows = Some(w);
        }
        Ok(self.windows.as_ref().expect("set above"))
    }

    fn experiment(&self) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            model: self.cfg.model.clone(),
            feature_group: self.cfg.feature_group()?,
            threshold: self.cfg.evaluate.threshold,
        })
    }

    fn synth(&mut self) -> Result<()> {
        if self.cfg.synth.is_none() {
            return Err(Error::Config("`synth` needs a [synth] data source".into()));
        }
        let mut buf = Vec::new();
        crate::dataset::write_frames(self.frames()?, &mut buf)?;
        self.write("frames.csv", &buf)
    }

    fn preprocess(&mut self) -> Result<()> {
        let mut buf = Vec::new();
        write_windows(self.windows()?, &mut buf)?;
        self.write("windows.csv", &buf)
    }

    fn train(&mut self) -> Result<()> {
        let exp = self.experiment()?;
        let projected = select_features(self.windows()?, &exp.feature_group)?;
        let rows: Vec<usize> = (0..projected.n_rows()).collect();
        let (scaler, model) = fit_rows(&projected, &rows, &exp.model)?;
        self.write_json(
            "model.json",
            &json!({
                "feature_group": exp.feature_group.to_string(),
                "scaler": scaler,
                "model": model,
            }),
        )
    }

    fn generalized(&mut self, m: usize) -> Result<&ExperimentResult> {
        if !self.generalized.contains_key(&m) {
            let exp = self.experiment()?;
            let r = run_experiment(
                self.windows()?,
                &SplitSpec::Generalized { train_users: m },
                &exp,
            )?;
            self.generalized.insert(m, r);
        }
        Ok(&self.generalized[&m])
    }

    fn evaluate(&mut self) -> Result<()> {
        let exp = self.experiment()?;
        let e = self.cfg.evaluate.clone();
        let mut all: Vec<ExperimentResult> = Vec::new();
        let mut tables: Vec<(&str, Vec<_>)> = Vec::new();

        let mut gen = Vec::new();
        for &m in &e.generalized_train_users {
            let r = self.generalized(m)?.clone();
            gen.push(r.summary.clone());
            all.push(r);
        }
        tables.push(("eval_generalized.csv", gen));

        let windows = self.windows()?.clone();
        let mut run = |specs: Vec<SplitSpec>| -> Result<Vec<_>> {
            let mut out = Vec::new();
            for s in specs {
                let r = run_experiment(&windows, &s, &exp)?;
                out.push(r.summary.clone());
                all.push(r);
            }
            Ok(out)
        };
        let ind = run(e
            .individualized_fractions
            .iter()
            .map(|&f| SplitSpec::Individualized { train_fraction: f })
            .collect())?;
        let rnd = run(e
            .random_fractions
            .iter()
            .map(|&f| SplitSpec::RandomSample {
                train_fraction: f,
                seed: self.cfg.seed,
                repeats: e.random_repeats,
            })
            .collect())?;
        tables.push(("eval_individualized.csv", ind));
        tables.push(("eval_random.csv", rnd));

        for (name, rows) in tables {
            if !rows.is_empty() {
                self.write(name, summary_table_csv(&rows).as_bytes())?;
            }
        }
        let splits: Vec<_> = all
            .iter()
            .map(|r| json!({ "spec": r.spec, "summary": r.summary, "reports": r.reports }))
            .collect();
        self.write_json("eval_splits.json", &splits)
    }

    fn sequences(&mut self) -> Result<()> {
        let s = self.cfg.stats.clone();
        let windows = self.windows()?;
        let segments = segment_labels(windows);
        let stats = sequence_stats(&segments);
        let trend = optional(engagement_trend(windows, s.trend_bins))?;
        let speech = optional(engagement_by_robot_speech(windows, s.speech_horizon_s))?;
        let engaged = windows.rows().iter().filter(|r| r.engaged == 1).count();
        let n_windows = windows.n_rows();
        let rate = engaged as f64 / n_windows as f64;
        let csv = segments_csv(&segments);
        self.write("segments.csv", csv.as_bytes())?;
        self.write_json(
            "sequences.json",
            &json!({
                "n_windows": n_windows,
                "engagement_rate": rate,
                "n_segments": segments.len(),
                "stats": stats,
                "trend": trend,
                "robot_speech": speech,
            }),
        )
    }

    fn policy(&mut self) -> Result<()> {
        let pc = self.cfg.policy.clone();
        let stride = self.cfg.window.stride_s;
        let result = self.generalized(pc.train_users)?;
        // Rows scored by several splits get the mean of their scores.
        let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for p in &result.predictions {
            for (&r, &s) in p.rows.iter().zip(&p.scores) {
                let e = acc.entry(r).or_insert((0.0, 0));
                e.0 += s;
                e.1 += 1;
            }
        }
        let rows: Vec<usize> = acc.keys().copied().collect();
        let scores: Vec<f64> = acc.values().map(|(s, n)| s / *n as f64).collect();

        let windows = self.windows()?;
        let timelines = timelines_from(windows, &rows, &scores)?;
        let segments = timeline_segments(&timelines, stride);
        let stats = sequence_stats(&segment_labels(windows));
        let sweep = policy_sweep(
            &timelines,
            &segments,
            &stats,
            &pc.grid(),
            stride,
            pc.attribution,
        )?;

        let mut pred = String::from("row,participant_id,session_id,t_start_s,engaged,score\n");
        for (&r, s) in rows.iter().zip(&scores) {
            let w = &windows.rows()[r];
            pred.push_str(&format!(
                "{r},{},{},{},{},{s}\n",
                w.key.participant, w.key.session, w.t_start_s, w.engaged
            ));
        }
        let summary = json!({
            "train_users": pc.train_users,
            "attribution": pc.attribution,
            "long_ds_threshold_s": stats.long_ds_threshold_s(),
            "short_ds_threshold_s": stats.short_ds_threshold_s(),
            "reports": sweep.reports,
            "correlations": sweep.correlations,
        });
        self.write("predictions.csv", pred.as_bytes())?;
        self.write("policy_sweep.csv", sweep_csv(&sweep.reports).as_bytes())?;
        self.write_json("policy.json", &summary)
    }

    fn stats(&mut self) -> Result<()> {
        let sc = self.cfg.stats.clone();
        let group = self.cfg.feature_group()?;
        let windows = self.windows()?.clone();

        let corrs = feature_correlations(&windows)?;
        let per_user = optional(per_user_correlations(&windows))?;
        let keys = key_features(&corrs, sc.key_feature_min_abs_r);

        let projected = select_features(&windows, &group)?;
        let scaled = apply_scaler(&fit_scaler(&projected)?, &projected)?;
        let data: Vec<Vec<f64>> = scaled
            .rows()
            .iter()
            .map(|r| {
                r.features
                    .iter()
                    .map(|v| if v.is_nan() { 0.0 } else { *v })
                    .collect()
            })
            .collect();
        let pca = pca_project(&data, sc.pca_components)?;

        let rows = windows.rows();
        let by = |key: &dyn Fn(usize) -> String, pc: usize| -> Vec<Vec<f64>> {
            let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for (i, s) in pca.scores.iter().enumerate() {
                groups.entry(key(i)).or_default().push(s[pc]);
            }
            groups.into_values().collect()
        };
        let mut tests = Vec::new();
        for pc in 0..pca.axes.len().min(2) {
            let participants = by(&|i| rows[i].key.participant.clone(), pc);
            let sessions = by(&|i| rows[i].key.to_string(), pc);
            let states = by(&|i| rows[i].engaged.to_string(), pc);
            let mut within = BTreeMap::new();
            for p in windows.participants() {
                let g: Vec<Vec<f64>> = {
                    let mut m: BTreeMap<String, Vec<f64>> = BTreeMap::new();
                    for (i, s) in pca.scores.iter().enumerate() {
                        if rows[i].key.participant == p {
                            m.entry(rows[i].key.session.clone())
                                .or_default()
                                .push(s[pc]);
                        }
                    }
                    m.into_values().collect()
                };
                within.insert(p, optional(anova_oneway(&g))?);
            }
            let (dis, eng) = match states.as_slice() {
                [a, b] => (Some(a), Some(b)),
                _ => (None, None),
            };
            let variance = match (dis, eng) {
                (Some(d), Some(e)) => optional(var_ftest(d, e))?,
                _ => None,
            };
            let spread = |g: Option<&Vec<f64>>| {
                g.map(|v| {
                    let m = v.iter().sum::<f64>() / v.len() as f64;
                    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
                })
            };
            tests.push(json!({
                "component": pc + 1,
                "anova_participants": optional(anova_oneway(&participants))?,
                "anova_sessions": optional(anova_oneway(&sessions))?,
                "anova_sessions_within_participant": within,
                "anova_engagement": optional(anova_oneway(&states))?,
                "variance_engaged_vs_disengaged": variance,
                "variance_engaged": spread(eng),
                "variance_disengaged": spread(dis),
            }));
        }

        let face = windows.columns().iter().position(|c| {
            c.key == Some(KeyFeature::FaceConfidence) && c.derived == DerivedKind::Median
        });
        let mut export = String::from("pc1,pc2,participant,session,engaged\n");
        let mut exported = 0usize;
        for (i, s) in pca.scores.iter().enumerate() {
            let keep = face.is_none_or(|j| rows[i].features[j] >= sc.face_confidence_min);
            if keep {
                let pc2 = s.get(1).map_or(String::new(), |v| v.to_string());
                let pc1 = s.first().map_or(String::new(), |v| v.to_string());
                export.push_str(&format!(
                    "{pc1},{pc2},{},{},{}\n",
                    rows[i].key.participant, rows[i].key.session, rows[i].engaged
                ));
                exported += 1;
            }
        }

        let kappa = match &sc.annotations {
            Some(path) => Some(annotation_kappa(path)?),
            None => None,
        };

        self.write("correlations.csv", corrs.to_csv().as_bytes())?;
        if let Some(t) = &per_user {
            self.write("correlations_per_user.csv", t.to_csv().as_bytes())?;
        }
        self.write("pca_projection.csv", export.as_bytes())?;
        self.write_json(
            "stats.json",
            &json!({
                "feature_group": group.to_string(),
                "key_features": keys,
                "key_feature_min_abs_r": sc.key_feature_min_abs_r,
                "pca": {
                    "components": pca.axes.len(),
                    "explained": pca.explained,
                    "eigenvalues": pca.eigenvalues,
                    "total_variance": pca.total_variance,
                    "warning": pca.warning,
                },
                "tests": tests,
                "export": {
                    "face_confidence_min": sc.face_confidence_min,
                    "face_column_found": face.is_some(),
                    "rows": exported,
                },
                "fleiss_kappa": kappa,
            }),
        )
    }
}

/// Maps statistics that are undefined for this data to `None`.
fn optional<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Undefined(_) | Error::InsufficientData(_) | Error::UnknownFeature(_)) => {
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Fleiss' kappa of a CSV with one binary column per rater.
pub fn annotation_kappa(path: &Path) -> Result<f64> {
    let mut rdr = csv::Reader::from_path(path)?;
    let n_raters = rdr.headers()?.len();
    let mut labels: Vec<Vec<u8>> = vec![Vec::new(); n_raters];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (j, v) in rec.iter().enumerate() {
            let y = match v.trim() {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::InvalidLabel {
                        row: i + 1,
                        value: other.to_string(),
                    })
                }
            };
            labels[j].push(y);
        }
    }
    fleiss_kappa(&RaterMatrix::from_binary_labels(&labels)?)
}
