//! Acceptance criteria, one line each. Criteria 9 to 14 need the study frames
//! CSV in `ENGAGEKIT_STUDY_CSV` (optionally `ENGAGEKIT_STUDY_SCHEMA`) and are
//! skipped otherwise.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use common::checks::{self, Check};
use engagekit::cli::{self, Command, RunConfig};
use engagekit::dataset::{generate_synthetic, load_frames, FeatureSchema, KeyFeature};
use engagekit::metrics::{auroc, feature_correlations};
use engagekit::models::GbdtConfig;
use engagekit::preprocess::{window_aggregate, FeatureGroup, WindowConfig, WindowTable};
use engagekit::protocols::{
    fit_split, generalized_splits, run_experiment, splits_for, ExperimentConfig, ModelSpec,
    SplitSpec,
};
use engagekit::sequences::engagement_trend;
use engagekit::stats::{
    anova_oneway, fleiss_kappa, pca_project, spearman, t_test_equal_var, RaterMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const NEWTON_TOL: f64 = 1e-9;
const STATS_TOL: f64 = 1e-8;

const TREND_ALPHA: f64 = 0.01;
const TARGET_RATE: f64 = 0.65;
const RATE_TOL: f64 = 0.02;
const SYNTH_SEED: u64 = 8;

/// (target, tolerance) pairs for the study reproduction.
const GEN_M6_AUROC: (f64, f64) = (0.88, 0.03);
const GEN_M1_AUROC: (f64, f64) = (0.85, 0.03);
const IND_05_AUROC: (f64, f64) = (0.87, 0.03);
const IND_01_AUROC: (f64, f64) = (0.77, 0.04);
const RND_05_AUROC: (f64, f64) = (0.91, 0.02);
const ES_MEDIAN_S: (f64, f64) = (11.0, 1.0);
const DS_Q1_S: (f64, f64) = (2.5, 1.0);
const DS_Q3_S: (f64, f64) = (9.5, 1.0);
const LONG_DS_SHARE_PCT: (f64, f64) = (75.0, 5.0);
const POLICY_LONG_DS_PCT: (f64, f64) = (73.0, 7.0);
const POLICY_ES_PCT: (f64, f64) = (18.0, 5.0);
const RS_WINDOW_LONG_DS: (f64, f64) = (-0.74, 0.15);
const RS_WINDOW_ES: (f64, f64) = (-0.88, 0.10);
const KEY_MIN_ABS_R: f64 = 0.20;
const KEY_AUROC_GAP: f64 = 0.05;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(name: &str, got: Option<f64>, (target, tol): (f64, f64)) -> Check {
    match got {
        Some(v) if (v - target).abs() <= tol + 1e-12 => Ok(()),
        Some(v) => Err(format!("{name} = {v:.4}, expected {target} ± {tol}")),
        None => Err(format!("{name} undefined")),
    }
}

fn all(parts: &[(&str, Check)]) -> Check {
    let failed: Vec<String> = parts
        .iter()
        .filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}")))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(failed.join("; "))
    }
}

fn c1() -> Check {
    all(&[
        ("loss", checks::gbdt_loss_monotone(20)),
        ("xor", checks::gbdt_xor(50)),
        ("newton", checks::gbdt_newton_leaf(100, NEWTON_TOL)),
    ])
}

fn c2() -> Check {
    checks::auroc_matches_pairwise(1000)?;
    let perfect = auroc(&[0, 0, 1, 1], &[0.1, 0.2, 0.8, 0.9]).map_err(|e| e.to_string())?;
    let constant = auroc(&[0, 1, 0, 1], &[0.4; 4]).map_err(|e| e.to_string())?;
    ensure!(perfect == 1.0, "perfect separation gives {perfect}");
    ensure!(constant == 0.5, "constant scores give {constant}");
    Ok(())
}

fn c3() -> Check {
    all(&[
        ("oracle", checks::windows_match_oracle(200)),
        ("tie", checks::window_label_tie()),
    ])
}

fn c4() -> Check {
    all(&[
        ("rle", checks::segments_match_rle(1000)),
        ("tiling", checks::segments_tile(300)),
    ])
}

fn c5() -> Check {
    all(&[
        ("simulator", checks::policy_matches_simulator(500)),
        ("monotone", checks::policy_monotone_in_threshold(100)),
        ("perfect", checks::policy_perfect_probabilities(50)),
    ])
}

fn hygiene_table(rng: &mut ChaCha8Rng) -> WindowTable {
    let sessions: Vec<Vec<Vec<u8>>> = (0..5)
        .map(|_| {
            (0..2)
                .map(|_| {
                    let n = rng.random_range(20..60);
                    common::random_runs(rng, n, 8)
                })
                .collect()
        })
        .collect();
    common::labelled_table(&sessions, 3, rng)
}

fn c6() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let t = hygiene_table(&mut rng);
    let who = |rows: &[usize]| -> BTreeSet<String> {
        rows.iter()
            .map(|&r| t.rows()[r].key.participant.clone())
            .collect()
    };
    for m in 1..5 {
        for s in generalized_splits(&t, m).map_err(|e| e.to_string())? {
            ensure!(
                who(&s.train).is_disjoint(&who(&s.test)),
                "M={m}: participant on both sides"
            );
        }
    }
    for f in [0.1, 0.25, 0.5, 0.75, 0.9] {
        for s in splits_for(&t, &SplitSpec::Individualized { train_fraction: f })
            .map_err(|e| e.to_string())?
        {
            let key = |r: usize| (t.rows()[r].session_index, t.rows()[r].t_start_s);
            let last = s
                .train
                .iter()
                .map(|&r| key(r))
                .max_by(|a, b| a.partial_cmp(b).unwrap());
            let first = s
                .test
                .iter()
                .map(|&r| key(r))
                .min_by(|a, b| a.partial_cmp(b).unwrap());
            if let (Some(a), Some(b)) = (last, first) {
                ensure!(
                    a <= b,
                    "fraction {f}: train time {a:?} after test time {b:?}"
                );
            }
        }
    }
    let mut g = GbdtConfig {
        n_trees: 8,
        max_depth: 3,
        ..GbdtConfig::default()
    };
    g.bagging.n_bags = 2;
    let spec = ModelSpec::Gbdt(g);
    for split in generalized_splits(&t, 2)
        .map_err(|e| e.to_string())?
        .into_iter()
        .take(3)
    {
        let (scaler, model) = fit_split(&t, &split, &spec).map_err(|e| e.to_string())?;
        let test: BTreeSet<usize> = split.test.iter().copied().collect();
        let rows = t
            .rows()
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut r = r.clone();
                if test.contains(&i) {
                    r.features
                        .iter_mut()
                        .for_each(|v| *v = rng.random_range(-1e3..1e3));
                    r.engaged = 1 - r.engaged;
                }
                r
            })
            .collect();
        let (scaler2, model2) =
            fit_split(&t.with_rows(rows), &split, &spec).map_err(|e| e.to_string())?;
        ensure!(
            serde_json::to_string(&scaler).unwrap() == serde_json::to_string(&scaler2).unwrap(),
            "scaler depends on test rows"
        );
        ensure!(
            model.to_json() == model2.to_json(),
            "model depends on test rows"
        );
    }
    Ok(())
}

fn c7() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    for case in 0..200 {
        let sample = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let n = rng.random_range(2..40);
            (0..n).map(|_| rng.random_range(-50.0..50.0)).collect()
        };
        let (a, b) = (sample(&mut rng), sample(&mut rng));
        let f = anova_oneway(&[a.clone(), b.clone()]).map_err(|e| e.to_string())?;
        let t = t_test_equal_var(&a, &b).map_err(|e| e.to_string())?;
        ensure!(
            (f.statistic - t.statistic * t.statistic).abs() <= STATS_TOL * (1.0 + f.statistic),
            "case {case}: F {} vs t² {}",
            f.statistic,
            t.statistic * t.statistic
        );
        let n = rng.random_range(3..60);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rng.random_range(-10.0..10.0)).collect())
            .collect();
        let p = pca_project(&rows, 4).map_err(|e| e.to_string())?;
        let kept: f64 = p.eigenvalues.iter().sum();
        ensure!(
            (kept - p.total_variance).abs() <= STATS_TOL * (1.0 + p.total_variance),
            "case {case}: eigenvalues {kept} vs variance {}",
            p.total_variance
        );
    }
    let kappa = |rows: Vec<Vec<u32>>| {
        fleiss_kappa(&RaterMatrix::new(rows).unwrap()).map_err(|e| e.to_string())
    };
    let perfect = kappa(vec![vec![3, 0], vec![0, 3], vec![3, 0]])?;
    ensure!(perfect == 1.0, "perfect agreement kappa {perfect}");
    let four = kappa(vec![vec![3, 0], vec![0, 3], vec![2, 1], vec![1, 2]])?;
    ensure!(
        (four - 1.0 / 3.0).abs() < 1e-12,
        "4-item kappa {four}, expected 1/3"
    );
    let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).map_err(|e| e.to_string())?;
    ensure!(r == Some(0.6), "spearman {r:?}");
    Ok(())
}

fn c8() -> Check {
    let frames =
        generate_synthetic(&common::study_shaped(SYNTH_SEED)).map_err(|e| e.to_string())?;
    let w = window_aggregate(&frames, &WindowConfig::default()).map_err(|e| e.to_string())?;
    let trend = engagement_trend(&w, 10).map_err(|e| e.to_string())?.pooled;
    ensure!(
        trend.slope < 0.0 && trend.p_value < TREND_ALPHA,
        "trend slope {} p {}",
        trend.slope,
        trend.p_value
    );
    let rate = w.labels().iter().map(|&y| f64::from(y)).sum::<f64>() / w.n_rows() as f64;
    ensure!(
        (rate - TARGET_RATE).abs() <= RATE_TOL,
        "engagement rate {rate:.4}"
    );
    let mut g = GbdtConfig {
        n_trees: 30,
        ..GbdtConfig::default()
    };
    g.bagging.n_bags = 1;
    let cfg = ExperimentConfig {
        model: ModelSpec::Gbdt(g),
        ..ExperimentConfig::default()
    };
    let score = |spec: SplitSpec| -> Result<f64, String> {
        let r = run_experiment(&w, &spec, &cfg).map_err(|e| e.to_string())?;
        r.summary
            .auroc
            .ok_or_else(|| format!("{} AUROC undefined", spec.family()))
    };
    let ind = score(SplitSpec::Individualized {
        train_fraction: 0.5,
    })?;
    let rnd = score(SplitSpec::RandomSample {
        train_fraction: 0.5,
        seed: SYNTH_SEED,
        repeats: 3,
    })?;
    ensure!(
        rnd >= ind,
        "random AUROC {rnd:.4} below individualized {ind:.4}"
    );
    println!("      trend slope {:.4} p {:.2e}; rate {rate:.3}; AUROC random {rnd:.3} individualized {ind:.3}", trend.slope, trend.p_value);
    Ok(())
}

type StudyCheck = fn(&Study) -> Check;

struct Study {
    csv: PathBuf,
    schema: Option<PathBuf>,
    out: tempfile::TempDir,
}

impl Study {
    fn from_env() -> Option<Study> {
        let csv = PathBuf::from(std::env::var_os("ENGAGEKIT_STUDY_CSV")?);
        let schema = std::env::var_os("ENGAGEKIT_STUDY_SCHEMA").map(PathBuf::from);
        let out = tempfile::tempdir().ok()?;
        Some(Study { csv, schema, out })
    }

    fn run(&self) -> Check {
        let mut toml = format!("[data]\nframes = {:?}\n", self.csv);
        if let Some(s) = &self.schema {
            toml.push_str(&format!("schema = {s:?}\n"));
        }
        toml.push_str(
            "[evaluate]\ngeneralized_train_users = [1, 6]\nindividualized_fractions = [0.1, 0.5]\n\
             random_fractions = [0.5]\nrandom_repeats = 10\n",
        );
        let cfg =
            RunConfig::from_toml_with_env(&toml, std::iter::empty()).map_err(|e| e.to_string())?;
        cli::run(Command::All, cfg, self.out.path())
            .map(|_| ())
            .map_err(|e| e.to_string())
    }

    fn json(&self, name: &str) -> Result<Value, String> {
        let text = std::fs::read_to_string(self.out.path().join(name))
            .map_err(|e| format!("{name}: {e}"))?;
        serde_json::from_str(&text).map_err(|e| e.to_string())
    }

    fn summary_auroc(&self, protocol: &str, setting: f64) -> Result<Option<f64>, String> {
        let splits = self.json("eval_splits.json")?;
        Ok(splits
            .as_array()
            .into_iter()
            .flatten()
            .map(|s| &s["summary"])
            .find(|s| {
                s["protocol"] == protocol
                    && (s["setting"].as_f64().unwrap_or(f64::NAN) - setting).abs() < 1e-9
            })
            .and_then(|s| s["auroc"].as_f64()))
    }
}

fn c9(s: &Study) -> Check {
    all(&[
        (
            "M=6",
            within("AUROC", s.summary_auroc("generalized", 6.0)?, GEN_M6_AUROC),
        ),
        (
            "M=1",
            within("AUROC", s.summary_auroc("generalized", 1.0)?, GEN_M1_AUROC),
        ),
    ])
}

fn c10(s: &Study) -> Check {
    all(&[
        (
            "0.5",
            within(
                "AUROC",
                s.summary_auroc("individualized", 0.5)?,
                IND_05_AUROC,
            ),
        ),
        (
            "0.1",
            within(
                "AUROC",
                s.summary_auroc("individualized", 0.1)?,
                IND_01_AUROC,
            ),
        ),
    ])
}

fn c11(s: &Study) -> Check {
    within("AUROC", s.summary_auroc("random", 0.5)?, RND_05_AUROC)
}

fn c12(s: &Study) -> Check {
    let st = &s.json("sequences.json")?["stats"];
    all(&[
        (
            "ES median",
            within("s", st["es"]["median"].as_f64(), ES_MEDIAN_S),
        ),
        ("DS Q1", within("s", st["ds"]["q1"].as_f64(), DS_Q1_S)),
        ("DS Q3", within("s", st["ds"]["q3"].as_f64(), DS_Q3_S)),
        (
            "long DS share",
            within(
                "pp",
                st["long_ds_time_share"].as_f64().map(|v| 100.0 * v),
                LONG_DS_SHARE_PCT,
            ),
        ),
    ])
}

fn c13(s: &Study) -> Check {
    let p = s.json("policy.json")?;
    let point = p["reports"]
        .as_array()
        .into_iter()
        .flatten()
        .find(|r| {
            r["params"]["window_s"] == 3.0
                && (r["params"]["threshold"].as_f64().unwrap_or(0.0) - 0.35).abs() < 1e-9
        })
        .ok_or("no (3 s, 0.35) sweep point")?;
    let rs = |metric: &str| {
        p["correlations"]
            .as_array()
            .into_iter()
            .flatten()
            .find(|c| {
                c["fixed"] == "threshold"
                    && (c["fixed_value"].as_f64().unwrap_or(0.0) - 0.35).abs() < 1e-9
                    && c["metric"] == metric
            })
            .and_then(|c| c["r_s"].as_f64())
    };
    all(&[
        (
            "long DS with RA",
            within(
                "pp",
                point["pct_long_ds_with_ra"].as_f64(),
                POLICY_LONG_DS_PCT,
            ),
        ),
        (
            "ES with RA",
            within("pp", point["pct_es_with_ra"].as_f64(), POLICY_ES_PCT),
        ),
        (
            "r_s(window, long DS)",
            within("r_s", rs("long_ds"), RS_WINDOW_LONG_DS),
        ),
        ("r_s(window, ES)", within("r_s", rs("es"), RS_WINDOW_ES)),
    ])
}

fn c14(s: &Study) -> Check {
    let schema = match &s.schema {
        Some(p) => FeatureSchema::from_file(p).map_err(|e| e.to_string())?,
        None => FeatureSchema::study_default(),
    };
    let frames = load_frames(&s.csv, &schema).map_err(|e| e.to_string())?;
    let w = window_aggregate(&frames, &WindowConfig::default()).map_err(|e| e.to_string())?;
    let corrs = feature_correlations(&w).map_err(|e| e.to_string())?;
    let mut weak = Vec::new();
    for key in KeyFeature::ALL {
        let best = w
            .columns()
            .iter()
            .filter(|c| c.key == Some(key))
            .filter_map(|c| corrs.get(&c.name))
            .fold(0.0f64, |m, r| m.max(r.abs()));
        if best <= KEY_MIN_ABS_R {
            weak.push(format!("{key:?} |r|={best:.3}"));
        }
    }
    ensure!(
        weak.is_empty(),
        "below |r| {KEY_MIN_ABS_R}: {}",
        weak.join(", ")
    );
    let spec = SplitSpec::Generalized { train_users: 6 };
    let score = |group: FeatureGroup| -> Result<f64, String> {
        let cfg = ExperimentConfig {
            feature_group: group,
            ..ExperimentConfig::default()
        };
        let r = run_experiment(&w, &spec, &cfg).map_err(|e| e.to_string())?;
        r.summary.auroc.ok_or_else(|| "AUROC undefined".to_string())
    };
    let (full, key) = (score(FeatureGroup::All)?, score(FeatureGroup::Key)?);
    ensure!(
        (full - key).abs() <= KEY_AUROC_GAP,
        "key-only AUROC {key:.4} vs all {full:.4}"
    );
    Ok(())
}

fn main() -> ExitCode {
    let mut outcomes: Vec<(&str, Outcome)> = Vec::new();
    let mut record = |name: &'static str, f: &dyn Fn() -> Check| {
        let t = Instant::now();
        let o = match f() {
            Ok(()) => Outcome::Pass(format!("{:.1}s", t.elapsed().as_secs_f64())),
            Err(e) => Outcome::Fail(e),
        };
        print_line(name, &o);
        outcomes.push((name, o));
    };
    record("C1  GBDT loss monotone, XOR fit, Newton leaf", &c1);
    record("C2  AUROC equals pairwise oracle", &c2);
    record("C3  windowing equals brute-force oracle", &c3);
    record("C4  segmentation equals run-length oracle", &c4);
    record("C5  policy equals tick-scan simulator", &c5);
    record("C6  protocol hygiene", &c6);
    record("C7  statistics identities", &c7);
    record("C8  study-shaped synthetic end to end", &c8);

    let conditional: [(&'static str, StudyCheck); 6] = [
        ("C9  generalized AUROC", c9),
        ("C10 individualized AUROC", c10),
        ("C11 random-sampling AUROC", c11),
        ("C12 sequence statistics", c12),
        ("C13 re-engagement policy", c13),
        ("C14 key-feature recovery", c14),
    ];
    match Study::from_env() {
        None => {
            for (name, _) in conditional {
                let o = Outcome::Skip("ENGAGEKIT_STUDY_CSV not set".into());
                print_line(name, &o);
                outcomes.push((name, o));
            }
        }
        Some(study) => {
            let prepared = study.run();
            for (name, f) in conditional {
                let o = match prepared
                    .as_ref()
                    .map_err(Clone::clone)
                    .and_then(|_| f(&study))
                {
                    Ok(()) => Outcome::Pass(String::new()),
                    Err(e) => Outcome::Fail(e),
                };
                print_line(name, &o);
                outcomes.push((name, o));
            }
        }
    }

    let failed = outcomes
        .iter()
        .filter(|(_, o)| matches!(o, Outcome::Fail(_)))
        .count();
    let passed = outcomes
        .iter()
        .filter(|(_, o)| matches!(o, Outcome::Pass(_)))
        .count();
    println!(
        "acceptance: {passed} passed, {failed} failed, {} skipped",
        outcomes.len() - passed - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn print_line(name: &str, o: &Outcome) {
    match o {
        Outcome::Pass(d) => println!("PASS {name} {d}"),
        Outcome::Fail(d) => println!("FAIL {name}: {d}"),
        Outcome::Skip(d) => println!("SKIP {name} ({d})"),
    }
}
