use std::fmt::Write as _;
use std::path::Path;

use serde_json::Value;

use super::Manifest;
use crate::error::{Error, Result};

/// Marker for sections whose artifacts are absent.
pub const NOT_RUN: &str = "not run";

fn read(dir: &Path, name: &str) -> Result<Option<String>> {
    let path = dir.join(name);
    if !path.exists() {
        return Ok(None);
    }
    std::fs::read_to_string(&path)
        .map(Some)
        .map_err(|e| Error::io(&path, e))
}

fn read_json(dir: &Path, name: &str) -> Result<Option<Value>> {
    read(dir, name)?
        .map(|t| serde_json::from_str(&t).map_err(Error::from))
        .transpose()
}

/// Renders CSV text as a Markdown table.
pub fn csv_to_markdown(text: &str) -> String {
    let mut lines = text.lines().filter(|l| !l.is_empty());
    let Some(header) = lines.next() else {
        return String::new();
    };
    let cols: Vec<&str> = header.split(',').collect();
    let mut out = format!("| {} |\n|{}\n", cols.join(" | "), "---|".repeat(cols.len()));
    for l in lines {
        let cells: Vec<&str> = l
            .split(',')
            .map(|c| if c.is_empty() { "n/a" } else { c })
            .collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
    }
    out
}

fn not_run(missing: &[&str]) -> String {
    format!("_{NOT_RUN}_ (missing: {})\n", missing.join(", "))
}

fn num(v: &Value, digits: usize) -> String {
    v.as_f64().map_or("n/a".into(), |x| format!("{x:.digits$}"))
}

/// Builds `report.md` from the artifacts present in `dir`.
pub fn emit_report(dir: &Path, manifest: &Manifest) -> Result<String> {
    let mut r = String::from("# Engagement pipeline report\n\n");

    r.push_str("## Model evaluation\n\n");
    let evals = [
        ("Generalized", "eval_generalized.csv"),
        ("Individualized", "eval_individualized.csv"),
        ("Random sampling", "eval_random.csv"),
    ];
    let mut missing = Vec::new();
    for (title, name) in evals {
        match read(dir, name)? {
            Some(t) => {
                let _ = write!(r, "### {title}\n\n{}\n", csv_to_markdown(&t));
            }
            None => missing.push(name),
        }
    }
    if missing.len() == evals.len() {
        r.push_str(&not_run(&missing));
    } else if !missing.is_empty() {
        let _ = writeln!(r, "Tables not produced: {}.", missing.join(", "));
    }
    r.push('\n');

    r.push_str("## Engagement sequences\n\n");
    match read_json(dir, "sequences.json")? {
        Some(s) => {
            let _ = writeln!(r, "- windows: {}", s["n_windows"]);
            let _ = writeln!(r, "- engagement rate: {}", num(&s["engagement_rate"], 4));
            for (label, key) in [("ES", "es"), ("DS", "ds")] {
                let q = &s["stats"][key];
                if q.is_null() {
                    let _ = writeln!(r, "- {label} durations: none");
                } else {
                    let _ = writeln!(
                        r,
                        "- {label} durations (s): n={} Q1={} median={} Q3={}",
                        q["n"],
                        num(&q["q1"], 2),
                        num(&q["median"], 2),
                        num(&q["q3"], 2)
                    );
                }
            }
            let st = &s["stats"];
            let _ = writeln!(
                r,
                "- DS time share long/mid/short: {} / {} / {}",
                num(&st["long_ds_time_share"], 4),
                num(&st["mid_ds_time_share"], 4),
                num(&st["short_ds_time_share"], 4)
            );
            let t = &s["trend"]["pooled"];
            if !t.is_null() {
                let _ = writeln!(
                    r,
                    "- engagement trend: slope {} per bin, p = {}",
                    num(&t["slope"], 5),
                    num(&t["p_value"], 6)
                );
            }
            r.push('\n');
        }
        None => r.push_str(&not_run(&["sequences.json"])),
    }
    r.push('\n');

    r.push_str("## Re-engagement policy\n\n");
    match (
        read(dir, "policy_sweep.csv")?,
        read_json(dir, "policy.json")?,
    ) {
        (Some(csv), Some(p)) => {
            let _ = write!(
                r,
                "Predictions from generalized models with {} training users; attribution `{}`.\n\n{}\n",
                p["train_users"],
                p["attribution"].as_str().unwrap_or("?"),
                csv_to_markdown(&csv)
            );
            r.push_str("| Fixed | Value | Metric | n | Spearman r |\n|---|---|---|---|---|\n");
            for c in p["correlations"].as_array().into_iter().flatten() {
                let _ = writeln!(
                    r,
                    "| {} | {} | {} | {} | {} |",
                    c["fixed"].as_str().unwrap_or(""),
                    num(&c["fixed_value"], 2),
                    c["metric"].as_str().unwrap_or(""),
                    c["n_points"],
                    num(&c["r_s"], 3)
                );
            }
        }
        (csv, p) => {
            let mut m = Vec::new();
            if csv.is_none() {
                m.push("policy_sweep.csv");
            }
            if p.is_none() {
                m.push("policy.json");
            }
            r.push_str(&not_run(&m));
        }
    }
    r.push('\n');

    r.push_str("## Statistics\n\n");
    match read_json(dir, "stats.json")? {
        Some(s) => {
            let ex: Vec<String> = s["pca"]["explained"]
                .as_array()
                .into_iter()
                .flatten()
                .map(|v| num(v, 4))
                .collect();
            let _ = writeln!(r, "- PCA explained variance: {}", ex.join(", "));
            for t in s["tests"].as_array().into_iter().flatten() {
                let p = |k: &str| num(&t[k]["p_value"], 6);
                let _ = writeln!(
                    r,
                    "- PC{}: ANOVA p (participants) = {}, (sessions) = {}, (engagement) = {}; variance F-test p = {}",
                    t["component"],
                    p("anova_participants"),
                    p("anova_sessions"),
                    p("anova_engagement"),
                    p("variance_engaged_vs_disengaged")
                );
            }
            let keys: Vec<&str> = s["key_features"]
                .as_array()
                .into_iter()
                .flatten()
                .filter_map(Value::as_str)
                .collect();
            let _ = writeln!(
                r,
                "- features with |r| > {}: {}",
                num(&s["key_feature_min_abs_r"], 2),
                if keys.is_empty() {
                    "none".into()
                } else {
                    keys.join(", ")
                }
            );
            if let Some(k) = s["fleiss_kappa"].as_f64() {
                let _ = writeln!(r, "- Fleiss' kappa: {k:.4}");
            }
        }
        None => r.push_str(&not_run(&["stats.json"])),
    }
    r.push('\n');

    let _ = write!(
        r,
        "---\n{} {} | config {} | seed {}\n",
        manifest.tool, manifest.version, manifest.config_hash, manifest.seed
    );
    Ok(r)
}
