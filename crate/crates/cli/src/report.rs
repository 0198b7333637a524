//! Summary tables for run manifests and property reports.

use std::fmt::Write;

use liahr::engine::RunManifest;
use liahr::properties::PropertyReport;

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn rows(m: &RunManifest) -> Vec<(&'static str, String)> {
    let s = &m.summary;
    let mut rows = vec![
        ("verdicts", s.verdicts.to_string()),
        ("unparsed", s.unparsed.to_string()),
        ("flagged", s.flagged.to_string()),
        ("flag_rate", opt(s.flag_rate)),
        ("success_exact", opt(s.success_exact)),
        ("success_jaccard", opt(s.success_jaccard)),
    ];
    if let Some(mr) = &s.metrics {
        rows.extend([
            ("jaccard_samples", format!("{:.4}", mr.jaccard_samples)),
            ("jaccard_excluding_empty", opt(mr.jaccard_excluding_empty)),
            ("micro_f1", format!("{:.4}", mr.micro_f1)),
            ("macro_f1", format!("{:.4}", mr.macro_f1)),
            ("accuracy", format!("{:.4}", mr.accuracy)),
            ("roc_auc", opt(mr.roc_auc)),
            ("positive_f1", opt(mr.positive_f1)),
        ]);
    }
    rows
}

pub fn run_markdown(m: &RunManifest) -> String {
    let c = &m.config;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "## {} run, {} shots, source {}\n",
        c.mode, c.n_shots, c.source
    );
    let _ = writeln!(out, "model: {}", m.model);
    let _ = writeln!(
        out,
        "corpus: {} ({} examples, {})",
        m.corpus.source, m.corpus.examples, m.corpus.content_hash
    );
    let seeds: Vec<String> = c.seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(out, "seeds: {}", seeds.join(", "));
    let _ = writeln!(out, "complete: {}", m.complete);
    let _ = writeln!(out, "desirable success: {}\n", m.summary.desirable);
    out.push_str("| measure | value |\n|---|---|\n");
    for (k, v) in rows(m) {
        let _ = writeln!(out, "| {k} | {v} |");
    }
    for s in m.seeds.iter().filter(|s| s.error.is_some()) {
        let _ = writeln!(
            out,
            "\nseed {} stopped after {} of {}: {}",
            s.seed,
            s.completed,
            s.planned,
            s.error.as_deref().unwrap_or_default()
        );
    }
    out
}

pub fn run_csv(m: &RunManifest) -> String {
    let mut out = String::from("measure,value\n");
    for (k, v) in rows(m) {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}

pub fn properties_markdown(reports: &[PropertyReport]) -> String {
    reports
        .iter()
        .map(|r| r.summary_table())
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn properties_csv(reports: &[PropertyReport]) -> String {
    let mut out = String::from("property,score,value\n");
    for r in reports {
        out.push_str(&r.csv_rows());
    }
    out
}
