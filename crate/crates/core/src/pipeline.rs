//! Corrected corpora from verdict logs.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, LabelSet, LabelSpace, Split};
use crate::engine::Verdict;
use crate::prompt::PromptMode;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("mode {0} needs a {1} verdict log")]
    MissingLog(PipelineMode, &'static str),
    #[error("log `{log}` is a {found} run, expected {expected}")]
    WrongLog {
        log: String,
        found: PromptMode,
        expected: PromptMode,
    },
    #[error("log `{log}` misses {count} required examples (first: {first})")]
    CoverageGap {
        log: String,
        count: usize,
        first: String,
    },
    #[error("log `{log}` has more than one verdict for `{id}`; use a single-seed run")]
    DuplicateVerdict { log: String, id: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// Corpus unchanged.
    Original,
    /// Flagged examples take the proposed alternative, in every split.
    Replaced,
    /// As `Replaced`, training split only.
    ReplacedTrn,
    /// Flagged training examples are dropped.
    Filtered,
    /// Training examples judged unreasonable by the baseline are dropped.
    BslFiltered,
    /// Every label becomes the plain ICL prediction.
    Predictions,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 6] = [
        PipelineMode::Original,
        PipelineMode::Replaced,
        PipelineMode::ReplacedTrn,
        PipelineMode::Filtered,
        PipelineMode::BslFiltered,
        PipelineMode::Predictions,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineMode::Original => "original",
            PipelineMode::Replaced => "replaced",
            PipelineMode::ReplacedTrn => "replaced_trn",
            PipelineMode::Filtered => "filtered",
            PipelineMode::BslFiltered => "bsl_filtered",
            PipelineMode::Predictions => "predictions",
        }
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PipelineMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown pipeline mode `{s}`"))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NamedLog<'a> {
    pub name: &'a str,
    pub verdicts: &'a [Verdict],
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PipelineInputs<'a> {
    pub liahr: Option<NamedLog<'a>>,
    pub baseline: Option<NamedLog<'a>>,
    pub icl: Option<NamedLog<'a>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PipelineOptions {
    /// Leave the test split alone in `replaced` and `predictions`.
    pub exclude_test: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Kept,
    Replaced { old: Vec<String>, new: Vec<String> },
    Removed,
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Kept => "kept",
            Action::Replaced { .. } => "replaced",
            Action::Removed => "removed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeEntry {
    pub id: String,
    pub split: Split,
    #[serde(flatten)]
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeManifest {
    pub mode: String,
    /// Names of the verdict logs used.
    pub sources: Vec<String>,
    /// Splits whose labels or membership the mode may change.
    pub touched_splits: Vec<Split>,
    pub counts: BTreeMap<String, usize>,
    pub counts_by_split: BTreeMap<Split, BTreeMap<String, usize>>,
    pub warnings: usize,
    pub entries: Vec<ChangeEntry>,
}

impl ChangeManifest {
    /// Tallies `entries`, which must hold one entry per input example.
    pub fn from_entries(
        mode: impl Into<String>,
        sources: Vec<String>,
        touched_splits: Vec<Split>,
        entries: Vec<ChangeEntry>,
    ) -> Self {
        let mut counts: BTreeMap<String, usize> = ["kept", "replaced", "removed"]
            .iter()
            .map(|a| (a.to_string(), 0))
            .collect();
        let mut counts_by_split: BTreeMap<Split, BTreeMap<String, usize>> = BTreeMap::new();
        for e in &entries {
            *counts.entry(e.action.name().into()).or_default() += 1;
            *counts_by_split
                .entry(e.split)
                .or_default()
                .entry(e.action.name().into())
                .or_default() += 1;
        }
        ChangeManifest {
            mode: mode.into(),
            sources,
            touched_splits,
            counts,
            counts_by_split,
            warnings: entries.iter().filter(|e| e.warning.is_some()).count(),
            entries,
        }
    }

    pub fn count(&self, action: &str) -> usize {
        self.counts.get(action).copied().unwrap_or(0)
    }

    /// Markdown table of action counts by split.
    pub fn summary_table(&self) -> String {
        let mut out = format!(
            "mode: {}\n\n| split | kept | replaced | removed |\n|---|---|---|---|\n",
            self.mode
        );
        for (split, c) in &self.counts_by_split {
            let get = |a: &str| c.get(a).copied().unwrap_or(0);
            let _ = writeln!(
                out,
                "| {split} | {} | {} | {} |",
                get("kept"),
                get("replaced"),
                get("removed")
            );
        }
        let _ = writeln!(
            out,
            "| total | {} | {} | {} |",
            self.count("kept"),
            self.count("replaced"),
            self.count("removed")
        );
        if self.warnings > 0 {
            let _ = writeln!(out, "\n{} examples kept with warnings", self.warnings);
        }
        out
    }
}

/// Builds an `id -> verdict` index of `log`, checking mode, uniqueness and
/// coverage of `required`.
fn index<'a>(
    log: Option<NamedLog<'a>>,
    mode: PipelineMode,
    kind: PromptMode,
    required: &[&str],
) -> Result<(HashMap<&'a str, &'a Verdict>, String), PipelineError> {
    let what = match kind {
        PromptMode::Liahr => "LiaHR",
        PromptMode::Baseline => "baseline",
        PromptMode::Icl => "ICL",
    };
    let log = log.ok_or(PipelineError::MissingLog(mode, what))?;
    let mut map = HashMap::with_capacity(log.verdicts.len());
    for v in log.verdicts {
        if v.mode != kind {
            return Err(PipelineError::WrongLog {
                log: log.name.to_string(),
                found: v.mode,
                expected: kind,
            });
        }
        if map.insert(v.example_id.as_str(), v).is_some() {
            return Err(PipelineError::DuplicateVerdict {
                log: log.name.to_string(),
                id: v.example_id.clone(),
            });
        }
    }
    let missing: Vec<&&str> = required
        .iter()
        .filter(|id| !map.contains_key(**id))
        .collect();
    if let Some(first) = missing.first() {
        return Err(PipelineError::CoverageGap {
            log: log.name.to_string(),
            count: missing.len(),
            first: first.to_string(),
        });
    }
    Ok((map, log.name.to_string()))
}

fn names(space: &LabelSpace, set: &LabelSet) -> Vec<String> {
    space.names(set).into_iter().map(str::to_string).collect()
}

/// Applies `mode` to `corpus` using the verdict logs it needs.
///
/// Unparsed verdicts never change an example; it is kept with a warning.
/// `filtered` and `bsl_filtered` only remove training examples.
pub fn apply_pipeline(
    corpus: &Corpus,
    mode: PipelineMode,
    inputs: &PipelineInputs<'_>,
    options: &PipelineOptions,
) -> Result<(Corpus, ChangeManifest), PipelineError> {
    let space = corpus.space();
    let all_but_test: Vec<Split> = if options.exclude_test {
        vec![Split::Train, Split::Dev]
    } else {
        Split::ALL.to_vec()
    };
    let touched: Vec<Split> = match mode {
        PipelineMode::Original => vec![],
        PipelineMode::Replaced | PipelineMode::Predictions => all_but_test,
        PipelineMode::ReplacedTrn | PipelineMode::Filtered | PipelineMode::BslFiltered => {
            vec![Split::Train]
        }
    };
    let required: Vec<&str> = corpus
        .examples()
        .iter()
        .filter(|e| touched.contains(&e.split))
        .map(|e| e.id.as_str())
        .collect();
    let (verdicts, source) = match mode {
        PipelineMode::Original => (HashMap::new(), None),
        PipelineMode::Replaced | PipelineMode::ReplacedTrn | PipelineMode::Filtered => {
            let (m, s) = index(inputs.liahr, mode, PromptMode::Liahr, &required)?;
            (m, Some(s))
        }
        PipelineMode::BslFiltered => {
            let (m, s) = index(inputs.baseline, mode, PromptMode::Baseline, &required)?;
            (m, Some(s))
        }
        PipelineMode::Predictions => {
            let (m, s) = index(inputs.icl, mode, PromptMode::Icl, &required)?;
            (m, Some(s))
        }
    };

    let mut kept_examples = Vec::with_capacity(corpus.len());
    let mut entries = Vec::with_capacity(corpus.len());
    for ex in corpus.examples() {
        let mut entry = ChangeEntry {
            id: ex.id.clone(),
            split: ex.split,
            action: Action::Kept,
            warning: None,
        };
        let mut out = ex.clone();
        let verdict = verdicts
            .get(ex.id.as_str())
            .filter(|_| touched.contains(&ex.split));
        match verdict {
            Some(v) if v.unparsed => {
                entry.warning = Some(format!(
                    "unparsed model output, original labels kept: {:?}",
                    v.raw
                ));
            }
            Some(v) => match mode {
                PipelineMode::Replaced | PipelineMode::ReplacedTrn => {
                    if let (true, Some(alt)) = (v.flagged, &v.alternative) {
                        if *alt != ex.gold {
                            entry.action = Action::Replaced {
                                old: names(space, &ex.gold),
                                new: names(space, alt),
                            };
                            out.gold = alt.clone();
                        }
                    }
                }
                PipelineMode::Filtered | PipelineMode::BslFiltered => {
                    if v.flagged {
                        entry.action = Action::Removed;
                    }
                }
                PipelineMode::Predictions => {
                    if let Some(pred) = &v.predicted {
                        if *pred != ex.gold {
                            entry.action = Action::Replaced {
                                old: names(space, &ex.gold),
                                new: names(space, pred),
                            };
                            out.gold = pred.clone();
                        }
                    }
                }
                PipelineMode::Original => {}
            },
            None => {}
        }
        if entry.action != Action::Removed {
            kept_examples.push(out);
        }
        entries.push(entry);
    }
    let manifest = ChangeManifest::from_entries(
        mode.as_str(),
        source.into_iter().collect(),
        touched,
        entries,
    );
    Ok((corpus.with_examples(kept_examples)?, manifest))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap as Map;

    use super::*;
    use crate::corpus::{write_corpus_to_string, LabelKind};
    use crate::engine::{run, QueryLabelSource, RunConfig};
    use crate::gateway::{BackendConfig, Gateway, MockSpec};
    use crate::synth::{synthetic_corpus, SynthSpec};

    fn corpus() -> Corpus {
        let space = LabelSpace::new(
            "emo",
            LabelKind::Multilabel,
            ["anger", "joy", "fear", "love"],
        )
        .unwrap();
        let mut spec = SynthSpec::new(space, 60, 5);
        spec.train_share = 0.5;
        spec.dev_share = 0.3;
        synthetic_corpus(&spec).unwrap()
    }

    fn full_run(
        c: &Corpus,
        mode: PromptMode,
        source: QueryLabelSource,
        mock: MockSpec,
    ) -> Vec<Verdict> {
        let config = RunConfig::new(mode, 2)
            .with_source(source)
            .with_seeds([0])
            .full_corpus(&Split::ALL);
        let gw = Gateway::from_config(&BackendConfig::mock(mock), c.space()).unwrap();
        run(c, &config, &gw).unwrap().verdicts
    }

    fn liahr_inputs(log: &[Verdict]) -> PipelineInputs<'_> {
        PipelineInputs {
            liahr: Some(NamedLog {
                name: "liahr",
                verdicts: log,
            }),
            ..Default::default()
        }
    }

    #[test]
    fn original_is_identity_and_byte_stable() {
        let c = corpus();
        let (out, m) = apply_pipeline(
            &c,
            PipelineMode::Original,
            &PipelineInputs::default(),
            &Default::default(),
        )
        .unwrap();
        assert_eq!(write_corpus_to_string(&out), write_corpus_to_string(&c));
        assert_eq!(m.count("kept"), c.len());
        let (again, _) = apply_pipeline(
            &out,
            PipelineMode::Original,
            &PipelineInputs::default(),
            &Default::default(),
        )
        .unwrap();
        assert_eq!(write_corpus_to_string(&again), write_corpus_to_string(&c));
    }

    #[test]
    fn filtered_removes_one_flagged_train_example() {
        let c = corpus();
        let mut log = full_run(
            &c,
            PromptMode::Liahr,
            QueryLabelSource::Gold,
            MockSpec::EchoQueryLabel,
        );
        let victim = log
            .iter_mut()
            .find(|v| !v.gold.is_empty() && c.get(&v.example_id).unwrap().split == Split::Train)
            .unwrap();
        victim.flagged = true;
        let victim_id = victim.example_id.clone();
        // A flagged dev example must survive.
        log.iter_mut()
            .find(|v| c.get(&v.example_id).unwrap().split == Split::Dev)
            .unwrap()
            .flagged = true;
        let (out, m) = apply_pipeline(
            &c,
            PipelineMode::Filtered,
            &liahr_inputs(&log),
            &Default::default(),
        )
        .unwrap();
        assert_eq!(out.len(), c.len() - 1);
        assert_eq!(m.count("removed"), 1);
        assert!(out.get(&victim_id).is_none());
        assert_eq!(
            m.count("kept") + m.count("replaced") + m.count("removed"),
            c.len()
        );
        assert_eq!(m.touched_splits, vec![Split::Train]);
    }

    #[test]
    fn replaced_with_oracle_random_log_is_label_identical() {
        let c = corpus();
        let oracle = MockSpec::GoldOracle { truth: Map::new() };
        let log = full_run(&c, PromptMode::Liahr, QueryLabelSource::Random, oracle);
        assert!(log.iter().all(|v| v.flagged));
        let (out, m) = apply_pipeline(
            &c,
            PipelineMode::Replaced,
            &liahr_inputs(&log),
            &Default::default(),
        )
        .unwrap();
        assert_eq!(out.examples(), c.examples());
        assert_eq!(m.count("replaced"), 0);
    }

    #[test]
    fn replaced_trn_only_touches_train() {
        let c = corpus();
        let empty = MockSpec::Scripted {
            by_fingerprint: Map::new(),
            by_example: Map::new(),
            default: Some(r#"{"label": []}"#.into()),
        };
        let log = full_run(&c, PromptMode::Liahr, QueryLabelSource::Gold, empty);
        let (out, m) = apply_pipeline(
            &c,
            PipelineMode::ReplacedTrn,
            &liahr_inputs(&log),
            &Default::default(),
        )
        .unwrap();
        assert_eq!(out.len(), c.len());
        for (a, b) in c.examples().iter().zip(out.examples()) {
            if a.split == Split::Train {
                assert!(b.gold.is_empty());
            } else {
                assert_eq!(a.gold, b.gold);
            }
        }
        assert_eq!(
            m.counts_by_split[&Split::Train]["replaced"],
            c.in_split(Split::Train).count()
        );
        // Train-only log suffices for the train-only mode.
        let train_only: Vec<Verdict> = log
            .iter()
            .filter(|v| c.get(&v.example_id).unwrap().split == Split::Train)
            .cloned()
            .collect();
        assert!(apply_pipeline(
            &c,
            PipelineMode::ReplacedTrn,
            &liahr_inputs(&train_only),
            &Default::default()
        )
        .is_ok());
        assert!(matches!(
            apply_pipeline(
                &c,
                PipelineMode::Replaced,
                &liahr_inputs(&train_only),
                &Default::default()
            ),
            Err(PipelineError::CoverageGap { .. })
        ));
    }

    #[test]
    fn predictions_constant_empty() {
        let c = corpus();
        let empty = MockSpec::Scripted {
            by_fingerprint: Map::new(),
            by_example: Map::new(),
            default: Some(r#"{"label": []}"#.into()),
        };
        let log = full_run(&c, PromptMode::Icl, QueryLabelSource::Gold, empty);
        let inputs = PipelineInputs {
            icl: Some(NamedLog {
                name: "icl",
                verdicts: &log,
            }),
            ..Default::default()
        };
        let (out, _) =
            apply_pipeline(&c, PipelineMode::Predictions, &inputs, &Default::default()).unwrap();
        assert!(out.examples().iter().all(|e| e.gold.is_empty()));
        let guarded = PipelineOptions { exclude_test: true };
        let (out, m) = apply_pipeline(&c, PipelineMode::Predictions, &inputs, &guarded).unwrap();
        assert!(out.in_split(Split::Test).all(|e| !e.gold.is_empty()));
        assert!(!m.touched_splits.contains(&Split::Test));
    }

    #[test]
    fn bsl_filtered_uses_baseline_flags() {
        let c = corpus();
        let no = MockSpec::Scripted {
            by_fingerprint: Map::new(),
            by_example: Map::new(),
            default: Some("unreasonable".into()),
        };
        let log = full_run(&c, PromptMode::Baseline, QueryLabelSource::Gold, no);
        let inputs = PipelineInputs {
            baseline: Some(NamedLog {
                name: "bsl",
                verdicts: &log,
            }),
            ..Default::default()
        };
        let (out, m) =
            apply_pipeline(&c, PipelineMode::BslFiltered, &inputs, &Default::default()).unwrap();
        assert_eq!(out.in_split(Split::Train).count(), 0);
        assert_eq!(m.count("removed"), c.in_split(Split::Train).count());
        assert!(matches!(
            apply_pipeline(
                &c,
                PipelineMode::BslFiltered,
                &liahr_inputs(&log),
                &Default::default()
            ),
            Err(PipelineError::MissingLog(..))
        ));
    }

    #[test]
    fn unparsed_kept_with_warning() {
        let c = corpus();
        let mut log = full_run(
            &c,
            PromptMode::Liahr,
            QueryLabelSource::Gold,
            MockSpec::EchoQueryLabel,
        );
        let v = &mut log[0];
        v.unparsed = true;
        v.flagged = false;
        v.raw = "no idea".into();
        let (out, m) = apply_pipeline(
            &c,
            PipelineMode::Replaced,
            &liahr_inputs(&log),
            &Default::default(),
        )
        .unwrap();
        assert_eq!(out.examples(), c.examples());
        assert_eq!(m.warnings, 1);
        assert!(m.entries[0].warning.as_deref().unwrap().contains("no idea"));
    }

    #[test]
    fn log_errors() {
        let c = corpus();
        assert!(matches!(
            apply_pipeline(
                &c,
                PipelineMode::Filtered,
                &PipelineInputs::default(),
                &Default::default()
            ),
            Err(PipelineError::MissingLog(PipelineMode::Filtered, _))
        ));
        let mut log = full_run(
            &c,
            PromptMode::Liahr,
            QueryLabelSource::Gold,
            MockSpec::EchoQueryLabel,
        );
        log.push(log[0].clone());
        assert!(matches!(
            apply_pipeline(
                &c,
                PipelineMode::Filtered,
                &liahr_inputs(&log),
                &Default::default()
            ),
            Err(PipelineError::DuplicateVerdict { .. })
        ));
        assert_eq!(
            "bsl_filtered".parse::<PipelineMode>(),
            Ok(PipelineMode::BslFiltered)
        );
        assert!("nope".parse::<PipelineMode>().is_err());
    }

    #[test]
    fn manifest_json_shape() {
        let c = corpus();
        let oracle = MockSpec::GoldOracle { truth: Map::new() };
        let mut log = full_run(&c, PromptMode::Liahr, QueryLabelSource::Gold, oracle);
        let j = c.space().set_of(&["joy"]).unwrap();
        let target = log.iter_mut().find(|v| v.gold != j).unwrap();
        target.flagged = true;
        target.alternative = Some(j);
        let (_, m) = apply_pipeline(
            &c,
            PipelineMode::Replaced,
            &liahr_inputs(&log),
            &Default::default(),
        )
        .unwrap();
        let json = serde_json::to_value(&m).unwrap();
        let replaced: Vec<_> = json["entries"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|e| e["action"] == "replaced")
            .collect();
        assert_eq!(replaced.len(), 1);
        assert_eq!(replaced[0]["new"], serde_json::json!(["joy"]));
        assert!(m.summary_table().contains("| total |"));
    }
}
