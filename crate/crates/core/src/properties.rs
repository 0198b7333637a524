//! Proxy properties of a verifier, computed from verdict logs.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, LabelKind, LabelSet, LabelSpace};
use crate::engine::{self, EngineError, QueryLabelSource, RunConfig, RunManifest, Verdict};
use crate::gateway::Gateway;
use crate::metrics::{per_label_counts, roc_auc_binary};
use crate::prompt::PromptMode;

#[derive(Debug, Error)]
pub enum PropertyError {
    #[error("runs do not match: {0}")]
    Mismatch(String),
    #[error("missing run: {0}")]
    MissingRun(String),
    #[error("run `{0}` does not use random or flipped query labels")]
    NotRandomized(String),
    #[error("run `{0}` has no parsed label predictions")]
    NoPredictions(String),
    #[error("runs `{0}` and `{1}` used different demos for the same query")]
    NonSharedDemos(String, String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Met,
    NotMet,
    /// Close to the threshold on the wrong side.
    Trend,
}

/// Decision thresholds. The defaults are toolkit choices, not values
/// taken from any study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Minimum gold-copy rate over ICL accuracy.
    pub gap: f64,
    /// Acceptable flag rate on gold labels, inclusive.
    pub flag_band: (f64, f64),
    /// Minimum drop from gold-label to random-label success.
    pub drop: f64,
    /// Maximum spread of success rates across annotators.
    pub spread: f64,
    /// Width below zero in which a rectification margin counts as a trend.
    pub trend_band: f64,
    /// Maximum range of success rates across query positions.
    pub position_range: f64,
    /// A label is singled out when its F1 falls this many standard
    /// deviations below the mean of the other labels...
    pub label_sigmas: f64,
    /// ...and at least this far below it.
    pub label_floor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            gap: 0.10,
            flag_band: (0.02, 0.30),
            drop: 0.25,
            spread: 0.15,
            trend_band: 0.05,
            position_range: 0.05,
            label_sigmas: 2.0,
            label_floor: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub property: String,
    /// Names of the runs consumed.
    pub inputs: Vec<String>,
    pub scores: BTreeMap<String, f64>,
    pub outcome: Outcome,
    /// Outcome under each similarity where more than one applies.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub outcomes: BTreeMap<String, Outcome>,
    pub thresholds: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl PropertyReport {
    fn new(property: &str, inputs: &[&RunLog]) -> Self {
        PropertyReport {
            property: property.to_string(),
            inputs: inputs.iter().map(|r| r.name.clone()).collect(),
            scores: BTreeMap::new(),
            outcome: Outcome::NotMet,
            outcomes: BTreeMap::new(),
            thresholds: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    fn score(&mut self, name: impl Into<String>, value: f64) {
        self.scores.insert(name.into(), value);
    }

    fn threshold(&mut self, name: &str, value: f64) {
        self.thresholds.insert(name.to_string(), value);
    }

    /// Markdown table of scores followed by the outcome.
    pub fn summary_table(&self) -> String {
        let mut out = format!("### {}\n\n| score | value |\n|---|---|\n", self.property);
        for (k, v) in &self.scores {
            let _ = writeln!(out, "| {k} | {v:.4} |");
        }
        let _ = writeln!(out, "\noutcome: {:?}", self.outcome);
        for (k, v) in &self.outcomes {
            let _ = writeln!(out, "outcome ({k}): {v:?}");
        }
        for (k, v) in &self.thresholds {
            let _ = writeln!(out, "threshold {k}: {v}");
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }

    /// `property,score,value` rows without a header.
    pub fn csv_rows(&self) -> String {
        self.scores
            .iter()
            .map(|(k, v)| format!("{},{k},{v}\n", self.property))
            .collect()
    }
}

/// A finished run as the properties see it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub name: String,
    pub config: RunConfig,
    pub corpus_hash: String,
    pub verdicts: Vec<Verdict>,
}

impl RunLog {
    pub fn new(
        name: impl Into<String>,
        config: RunConfig,
        corpus: &Corpus,
        verdicts: Vec<Verdict>,
    ) -> Self {
        RunLog {
            name: name.into(),
            config,
            corpus_hash: engine::corpus_hash(corpus),
            verdicts,
        }
    }

    /// Loads `manifest.json` and `verdicts.jsonl` from a run directory.
    pub fn load(dir: impl AsRef<Path>, space: &LabelSpace) -> Result<Self, PropertyError> {
        let dir = dir.as_ref();
        let manifest: RunManifest = engine::read_manifest(dir.join("manifest.json"))?;
        let path = dir.join("verdicts.jsonl");
        let text = std::fs::read_to_string(&path).map_err(|source| EngineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(RunLog {
            name: dir.display().to_string(),
            config: manifest.config,
            corpus_hash: manifest.corpus.content_hash,
            verdicts: engine::read_verdicts(&text, space)?,
        })
    }

    fn parsed(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| !v.unparsed)
    }

    fn mean(&self, f: impl Fn(&Verdict) -> Option<f64>) -> Option<f64> {
        let values: Vec<f64> = self.parsed().filter_map(f).collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }

    pub fn success_jaccard(&self) -> f64 {
        self.mean(Verdict::success_jaccard).unwrap_or(0.0)
    }

    pub fn success_exact(&self) -> f64 {
        self.mean(Verdict::success_exact).unwrap_or(0.0)
    }

    pub fn flag_rate(&self) -> f64 {
        self.mean(|v| Some(f64::from(u8::from(v.flagged))))
            .unwrap_or(0.0)
    }
}

fn same_setup(a: &RunLog, b: &RunLog) -> Result<(), PropertyError> {
    let mismatch = |what: &str| {
        Err(PropertyError::Mismatch(format!(
            "`{}` and `{}` differ in {what}",
            a.name, b.name
        )))
    };
    if a.corpus_hash != b.corpus_hash {
        return mismatch("corpus");
    }
    if a.config.seeds != b.config.seeds {
        return mismatch("seeds");
    }
    if a.config.n_shots != b.config.n_shots {
        return mismatch("shot count");
    }
    Ok(())
}

fn require_mode(run: &RunLog, modes: &[PromptMode]) -> Result<(), PropertyError> {
    if modes.contains(&run.config.mode) {
        Ok(())
    } else {
        Err(PropertyError::Mismatch(format!(
            "`{}` is a {} run, expected one of {modes:?}",
            run.name, run.config.mode
        )))
    }
}

/// Flags should be rare but not absent, and copying gold labels should beat
/// plain classification.
pub fn nonconformity(
    gold_run: &RunLog,
    icl_run: &RunLog,
    th: &Thresholds,
) -> Result<PropertyReport, PropertyError> {
    require_mode(gold_run, &[PromptMode::Liahr])?;
    require_mode(icl_run, &[PromptMode::Icl])?;
    same_setup(gold_run, icl_run)?;
    if gold_run.config.source.is_corrupted() {
        return Err(PropertyError::Mismatch(format!(
            "`{}` does not show gold labels",
            gold_run.name
        )));
    }
    let mut r = PropertyReport::new("nonconformity", &[gold_run, icl_run]);
    let (copy_j, copy_x) = (gold_run.success_jaccard(), gold_run.success_exact());
    let (icl_j, icl_x) = (icl_run.success_jaccard(), icl_run.success_exact());
    let flag_rate = gold_run.flag_rate();
    r.score("gold_copy_rate_jaccard", copy_j);
    r.score("gold_copy_rate_exact", copy_x);
    r.score("icl_rate_jaccard", icl_j);
    r.score("icl_rate_exact", icl_x);
    r.score("gap", copy_j - icl_j);
    r.score("gap_exact", copy_x - icl_x);
    r.score("flag_rate", flag_rate);
    r.threshold("gap", th.gap);
    r.threshold("flag_band_low", th.flag_band.0);
    r.threshold("flag_band_high", th.flag_band.1);
    let in_band = (th.flag_band.0..=th.flag_band.1).contains(&flag_rate);
    let met = |gap: f64| {
        if gap >= th.gap && in_band {
            Outcome::Met
        } else {
            Outcome::NotMet
        }
    };
    r.outcome = met(copy_j - icl_j);
    r.outcomes.insert("jaccard".into(), r.outcome);
    r.outcomes.insert("exact".into(), met(copy_x - icl_x));
    r.notes
        .push("ICL reference uses the same shot count as the copy run".into());
    Ok(r)
}

/// Success on random labels should drop well below success on gold labels.
pub fn noise_rejection(
    gold_run: &RunLog,
    random_run: &RunLog,
    th: &Thresholds,
) -> Result<PropertyReport, PropertyError> {
    require_mode(gold_run, &[PromptMode::Liahr, PromptMode::Baseline])?;
    same_setup(gold_run, random_run)?;
    if gold_run.config.mode != random_run.config.mode {
        return Err(PropertyError::Mismatch(
            "gold and random runs use different modes".into(),
        ));
    }
    if !random_run.config.source.is_corrupted() {
        return Err(PropertyError::NotRandomized(random_run.name.clone()));
    }
    let mut r = PropertyReport::new("noise_rejection", &[gold_run, random_run]);
    let (gj, rj) = (gold_run.success_jaccard(), random_run.success_jaccard());
    let (gx, rx) = (gold_run.success_exact(), random_run.success_exact());
    r.score("gold_success", gj);
    r.score("random_success", rj);
    r.score("degradation", gj - rj);
    r.score("gold_success_exact", gx);
    r.score("random_success_exact", rx);
    r.score("degradation_exact", gx - rx);
    r.threshold("drop", th.drop);
    let met = |d: f64| {
        if d >= th.drop {
            Outcome::Met
        } else {
            Outcome::NotMet
        }
    };
    r.outcome = met(gj - rj);
    r.outcomes.insert("jaccard".into(), r.outcome);
    r.outcomes.insert("exact".into(), met(gx - rx));
    Ok(r)
}

/// Alternatives proposed for random labels should sit closer to gold than
/// to the random label.
pub fn rectification(
    random_run: &RunLog,
    th: &Thresholds,
) -> Result<PropertyReport, PropertyError> {
    require_mode(random_run, &[PromptMode::Liahr])?;
    if !random_run.config.source.is_corrupted() {
        return Err(PropertyError::NotRandomized(random_run.name.clone()));
    }
    let predicted: Vec<(&LabelSet, &LabelSet, &LabelSet)> = random_run
        .parsed()
        .filter_map(|v| Some((v.predicted.as_ref()?, &v.gold, v.provided.as_ref()?)))
        .collect();
    if predicted.is_empty() {
        return Err(PropertyError::NoPredictions(random_run.name.clone()));
    }
    let n = predicted.len() as f64;
    let mean = |f: &dyn Fn(&(&LabelSet, &LabelSet, &LabelSet)) -> f64| {
        predicted.iter().map(f).sum::<f64>() / n
    };
    let to_gold = mean(&|(p, g, _)| p.jaccard(g));
    let to_random = mean(&|(p, _, s)| p.jaccard(s));
    let to_gold_x = mean(&|(p, g, _)| f64::from(u8::from(p == g)));
    let to_random_x = mean(&|(p, _, s)| f64::from(u8::from(p == s)));

    let mut r = PropertyReport::new("rectification", &[random_run]);
    r.score("sim_to_gold", to_gold);
    r.score("sim_to_random", to_random);
    r.score("margin", to_gold - to_random);
    r.score("sim_to_gold_exact", to_gold_x);
    r.score("sim_to_random_exact", to_random_x);
    r.score("margin_exact", to_gold_x - to_random_x);
    r.threshold("margin", 0.0);
    r.threshold("trend_band", th.trend_band);
    let judge = |m: f64| {
        if m > 0.0 {
            Outcome::Met
        } else if m > -th.trend_band {
            Outcome::Trend
        } else {
            Outcome::NotMet
        }
    };
    r.outcome = judge(to_gold - to_random);
    r.outcomes.insert("jaccard".into(), r.outcome);
    r.outcomes
        .insert("exact".into(), judge(to_gold_x - to_random_x));
    Ok(r)
}

/// Labels of different annotators should be accepted alike, and more
/// readily than random labels.
pub fn diversity(
    runs: &[RunLog],
    space: &LabelSpace,
    th: &Thresholds,
) -> Result<PropertyReport, PropertyError> {
    let first = runs
        .first()
        .ok_or_else(|| PropertyError::MissingRun("any".into()))?;
    for run in runs {
        same_setup(first, run)?;
        if run.config.mode != first.config.mode {
            return Err(PropertyError::Mismatch(
                "diversity runs use different modes".into(),
            ));
        }
    }
    for (i, a) in runs.iter().enumerate() {
        let demos: HashMap<(u64, &str), &Vec<String>> = a
            .verdicts
            .iter()
            .map(|v| ((v.seed, v.example_id.as_str()), &v.demo_ids))
            .collect();
        for b in &runs[i + 1..] {
            let clash = b.verdicts.iter().any(|v| {
                demos
                    .get(&(v.seed, v.example_id.as_str()))
                    .is_some_and(|d| **d != v.demo_ids)
            });
            if clash {
                return Err(PropertyError::NonSharedDemos(
                    a.name.clone(),
                    b.name.clone(),
                ));
            }
        }
    }
    let perspectives: Vec<&RunLog> = runs
        .iter()
        .filter(|r| {
            matches!(
                r.config.source,
                QueryLabelSource::Annotator(_) | QueryLabelSource::Alt(_)
            )
        })
        .collect();
    if perspectives.is_empty() {
        return Err(PropertyError::MissingRun(
            "annotator or alternative-label run".into(),
        ));
    }
    let contrast = runs
        .iter()
        .find(|r| r.config.source.is_corrupted())
        .ok_or_else(|| PropertyError::MissingRun("random or flipped run".into()))?;
    let aggregate = runs
        .iter()
        .find(|r| r.config.source == QueryLabelSource::Gold);

    let mut r = PropertyReport::new("diversity", &runs.iter().collect::<Vec<_>>());
    for run in runs {
        r.score(
            format!("success:{}", run.config.source),
            run.success_jaccard(),
        );
        r.score(
            format!("success_exact:{}", run.config.source),
            run.success_exact(),
        );
    }
    let rates: Vec<f64> = perspectives.iter().map(|p| p.success_jaccard()).collect();
    let max = rates.iter().copied().fold(f64::MIN, f64::max);
    let min = rates.iter().copied().fold(f64::MAX, f64::min);
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let contrast_rate = contrast.success_jaccard();
    r.score("annotator_spread", max - min);
    r.score("annotator_mean", mean);
    r.score(
        format!("annotator_mean_minus_{}", contrast.config.source),
        mean - contrast_rate,
    );
    if let Some(agg) = aggregate {
        r.score(
            "aggregate_minus_annotator_mean",
            agg.success_jaccard() - mean,
        );
    }
    if let Some(sim) = cross_similarity(&perspectives) {
        r.score("cross_annotator_jaccard", sim);
    }
    if space.kind == LabelKind::Binary {
        for run in runs {
            let pairs: Vec<(LabelSet, LabelSet)> =
                run.parsed().filter_map(Verdict::metric_pair).collect();
            if let Ok(auc) = roc_auc_binary(&pairs, space) {
                r.score(format!("roc_auc:{}", run.config.source), auc);
            }
        }
    }
    r.threshold("spread", th.spread);
    r.outcome = if rates.iter().all(|&s| s > contrast_rate) && max - min <= th.spread {
        Outcome::Met
    } else {
        Outcome::NotMet
    };
    Ok(r)
}

/// Mean pairwise Jaccard between the perspectives' reference labels over
/// the examples they share.
fn cross_similarity(perspectives: &[&RunLog]) -> Option<f64> {
    let maps: Vec<HashMap<&str, &LabelSet>> = perspectives
        .iter()
        .map(|p| {
            p.verdicts
                .iter()
                .map(|v| (v.example_id.as_str(), &v.reference))
                .collect()
        })
        .collect();
    let mut sims = Vec::new();
    for (i, a) in maps.iter().enumerate() {
        for b in &maps[i + 1..] {
            sims.extend(
                a.iter()
                    .filter_map(|(id, la)| b.get(id).map(|lb| la.jaccard(lb))),
            );
        }
    }
    (!sims.is_empty()).then(|| sims.iter().sum::<f64>() / sims.len() as f64)
}

/// Success across query positions of otherwise identical runs.
pub fn position_report(runs: &[RunLog], th: &Thresholds) -> Result<PropertyReport, PropertyError> {
    let first = runs
        .first()
        .ok_or_else(|| PropertyError::MissingRun("position run".into()))?;
    for run in runs {
        require_mode(run, &[PromptMode::Liahr])?;
        same_setup(first, run)?;
    }
    let mut r = PropertyReport::new("position_sweep", &runs.iter().collect::<Vec<_>>());
    let rates: Vec<f64> = runs.iter().map(RunLog::success_jaccard).collect();
    for (run, rate) in runs.iter().zip(&rates) {
        r.score(
            format!("success:position_{:02}", run.config.query_position),
            *rate,
        );
    }
    let range = rates.iter().copied().fold(f64::MIN, f64::max)
        - rates.iter().copied().fold(f64::MAX, f64::min);
    r.score("range", range);
    r.threshold("position_range", th.position_range);
    r.outcome = if range <= th.position_range {
        Outcome::Met
    } else {
        Outcome::NotMet
    };
    Ok(r)
}

/// Runs `base` at every query position and reports the success vector.
pub fn position_sweep(
    corpus: &Corpus,
    base: &RunConfig,
    gateway: &Gateway,
    th: &Thresholds,
) -> Result<(PropertyReport, Vec<RunLog>), PropertyError> {
    let mut logs = Vec::new();
    for position in 0..=base.n_shots {
        let config = base.clone().at_position(position);
        let out = engine::run_liahr(corpus, &config, gateway)?;
        logs.push(RunLog::new(
            format!("position_{position}"),
            config,
            corpus,
            out.verdicts,
        ));
    }
    Ok((position_report(&logs, th)?, logs))
}

/// Per-label F1 of predictions against the provided (LiaHR) or reference
/// (ICL) labels, singling out labels that lag the rest.
pub fn per_label_rates(
    run: &RunLog,
    space: &LabelSpace,
    th: &Thresholds,
) -> Result<PropertyReport, PropertyError> {
    require_mode(run, &[PromptMode::Liahr, PromptMode::Icl])?;
    let pairs: Vec<(LabelSet, LabelSet)> = run.parsed().filter_map(Verdict::metric_pair).collect();
    if pairs.is_empty() {
        return Err(PropertyError::NoPredictions(run.name.clone()));
    }
    let counts = per_label_counts(&pairs, space.len());
    let rated: Vec<(usize, f64)> = counts
        .iter()
        .enumerate()
        .filter(|(_, c)| c.has_support())
        .map(|(l, c)| (l, c.f1()))
        .collect();
    let mut r = PropertyReport::new("per_label_rates", &[run]);
    for &(l, f1) in &rated {
        r.score(format!("f1:{}", space.label(l)), f1);
    }
    let mut lagging = Vec::new();
    for &(l, f1) in &rated {
        let others: Vec<f64> = rated
            .iter()
            .filter(|(o, _)| *o != l)
            .map(|(_, f)| *f)
            .collect();
        if others.is_empty() {
            continue;
        }
        let mean = others.iter().sum::<f64>() / others.len() as f64;
        let var = others.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / others.len() as f64;
        let margin = (th.label_sigmas * var.sqrt()).max(th.label_floor);
        if f1 < mean - margin {
            lagging.push(space.label(l).to_string());
        }
    }
    r.score("lagging_labels", lagging.len() as f64);
    r.threshold("label_sigmas", th.label_sigmas);
    r.threshold("label_floor", th.label_floor);
    r.outcome = if lagging.is_empty() {
        Outcome::Met
    } else {
        Outcome::NotMet
    };
    r.notes
        .extend(lagging.into_iter().map(|l| format!("lagging label: {l}")));
    Ok(r)
}
