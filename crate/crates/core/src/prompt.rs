//! Deterministic prompt rendering.
//!
//! Three families share one skeleton (`{instruction}`, `{demo_block}`,
//! `{query_block}`):
//!
//! * classification, for multilabel and single-label spaces:
//!   ``Input: `text` `` followed by `{"label": [...]}`;
//! * assessment, for binary spaces: ``Input: `text` `` followed by
//!   `Assessment: <label>`;
//! * reasonableness baseline: ``Input: `text` ``, `Label: a, b`,
//!   `Assessment: reasonable|unreasonable`.
//!
//! A label-in-a-haystack prompt is a classification prompt whose query also
//! sits among the demos, labeled with the candidate label.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{
    sample_donor_labels, AnnotatedExample, Corpus, CorpusError, LabelKind, LabelSet, LabelSpace,
    SeededSampler,
};

pub const BASELINE_INSTRUCTION: &str = "Assess the reasonableness of the provided label for each input. Namely, evaluate whether the label makes sense for its corresponding input, under some reasonable interpretation. Reply only with unreasonable and reasonable.";

pub const DEFAULT_TEMPLATE: &str = "{instruction}\n\n{demo_block}{query_block}";

/// Separates consecutive blocks; every demo block is followed by it.
const BLOCK_SEP: &str = "\n\n";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("query position {position} out of range 0..={max}")]
    PositionOutOfRange { position: usize, max: usize },
    #[error("plan mode {0} does not fit this renderer")]
    WrongMode(PromptMode),
    #[error("label-in-a-haystack plan without a query label")]
    MissingQueryLabel,
    #[error("baseline demos need an even shot count, got {0}")]
    OddShots(usize),
    #[error("baseline demo `{0}` has no assessment")]
    MissingAssessment(String),
    #[error("template is missing placeholder {0}")]
    Template(&'static str),
    #[error("io error reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Liahr,
    Baseline,
    Icl,
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptMode::Liahr => "liahr",
            PromptMode::Baseline => "baseline",
            PromptMode::Icl => "icl",
        })
    }
}

/// Answer of the reasonableness check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assessment {
    Reasonable,
    Unreasonable,
}

impl Assessment {
    pub fn as_str(self) -> &'static str {
        match self {
            Assessment::Reasonable => "reasonable",
            Assessment::Unreasonable => "unreasonable",
        }
    }

    /// Vocabulary in instruction order.
    pub const VOCABULARY: [&'static str; 2] = ["unreasonable", "reasonable"];
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemoSpec {
    pub example_id: String,
    pub label: LabelSet,
    /// Only for baseline demos.
    pub assessment: Option<Assessment>,
}

impl DemoSpec {
    pub fn labeled(example_id: impl Into<String>, label: LabelSet) -> Self {
        DemoSpec {
            example_id: example_id.into(),
            label,
            assessment: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPlan {
    pub mode: PromptMode,
    /// Overrides the instruction derived from the space.
    pub instruction: Option<String>,
    /// The `n_shots` demos, not counting the query's own copy.
    pub demos: Vec<DemoSpec>,
    pub query: String,
    /// Candidate label: in-prompt query label for LiaHR, the pair's label for
    /// the baseline, unused for plain ICL.
    pub query_label: Option<LabelSet>,
    /// Where the query's labeled copy goes among the demos, in
    /// `0..=demos.len()`.
    pub query_position: usize,
}

impl PromptPlan {
    pub fn liahr(demos: Vec<DemoSpec>, query: impl Into<String>, label: LabelSet) -> Self {
        PromptPlan {
            mode: PromptMode::Liahr,
            instruction: None,
            demos,
            query: query.into(),
            query_label: Some(label),
            query_position: 0,
        }
    }

    pub fn icl(demos: Vec<DemoSpec>, query: impl Into<String>) -> Self {
        PromptPlan {
            mode: PromptMode::Icl,
            instruction: None,
            demos,
            query: query.into(),
            query_label: None,
            query_position: 0,
        }
    }

    /// Baseline plan; demo labels and assessments are filled in by
    /// [`render_baseline_prompt`].
    pub fn baseline(demo_ids: Vec<String>, query: impl Into<String>, label: LabelSet) -> Self {
        PromptPlan {
            mode: PromptMode::Baseline,
            instruction: None,
            demos: demo_ids
                .into_iter()
                .map(|id| DemoSpec::labeled(id, LabelSet::empty()))
                .collect(),
            query: query.into(),
            query_label: Some(label),
            query_position: 0,
        }
    }

    pub fn at_position(mut self, position: usize) -> Self {
        self.query_position = position;
        self
    }

    pub fn n_shots(&self) -> usize {
        self.demos.len()
    }
}

/// Skeleton with `{instruction}`, `{demo_block}` and `{query_block}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            text: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        for ph in ["{instruction}", "{demo_block}", "{query_block}"] {
            if !text.contains(ph) {
                return Err(PromptError::Template(ph));
            }
        }
        Ok(PromptTemplate { text })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::new(text)
    }

    fn fill(&self, instruction: &str, demo_block: &str, query_block: &str) -> String {
        // Single pass so placeholder-like text inside documents is left alone.
        let mut out = String::with_capacity(self.text.len() + demo_block.len() + query_block.len());
        let mut rest = self.text.as_str();
        while let Some(start) = rest.find('{') {
            out.push_str(&rest[..start]);
            let tail = &rest[start..];
            let (value, len) = if tail.starts_with("{instruction}") {
                (instruction, "{instruction}".len())
            } else if tail.starts_with("{demo_block}") {
                (demo_block, "{demo_block}".len())
            } else if tail.starts_with("{query_block}") {
                (query_block, "{query_block}".len())
            } else {
                ("{", 1)
            };
            out.push_str(value);
            rest = &tail[len..];
        }
        out.push_str(rest);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub plan: PromptPlan,
    pub fingerprint: String,
    /// Empty by default; sent as a system message only when non-empty.
    pub system: String,
}

impl RenderedPrompt {
    fn new(text: String, plan: PromptPlan) -> Self {
        let fingerprint = fingerprint(&text);
        RenderedPrompt {
            text,
            plan,
            fingerprint,
            system: String::new(),
        }
    }
}

/// Hex SHA-256 of the prompt text.
pub fn fingerprint(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// `a`, `a and b`, `a, b and c`.
pub fn join_labels<S: AsRef<str>>(names: &[S]) -> String {
    match names {
        [] => String::new(),
        [only] => only.as_ref().to_string(),
        [init @ .., last] => {
            let head: Vec<&str> = init.iter().map(AsRef::as_ref).collect();
            format!("{} and {}", head.join(", "), last.as_ref())
        }
    }
}

/// `{"label": ["anger", "joy"]}`, labels in space order.
pub fn label_json(space: &LabelSpace, set: &LabelSet) -> String {
    let quoted: Vec<String> = space
        .names(set)
        .iter()
        .map(|n| serde_json::to_string(n).expect("strings serialize"))
        .collect();
    format!("{{\"label\": [{}]}}", quoted.join(", "))
}

/// Task instruction derived from the space.
pub fn task_instruction(space: &LabelSpace) -> String {
    let labels = join_labels(&space.labels);
    if let Some(custom) = &space.instruction {
        return custom
            .replace("{labels}", &labels)
            .replace("{noun}", space.noun());
    }
    match space.kind {
        LabelKind::Multilabel => format!(
            "Classify the following inputs into none, one, or multiple the following {} per input: {labels}.",
            space.noun()
        ),
        LabelKind::SingleLabel => format!(
            "Classify the following inputs into one of the following {}: {labels}.",
            space.noun()
        ),
        LabelKind::Binary => {
            let positive = space.binary_positive.as_deref().unwrap_or("harm");
            format!("Consider whether the following inputs present {positive} or not, and answer with: {labels}.")
        }
    }
}

fn input_line(text: &str) -> String {
    format!("Input: `{text}`")
}

fn task_demo(space: &LabelSpace, text: &str, label: &LabelSet) -> String {
    match space.kind {
        LabelKind::Binary => format!(
            "{}\nAssessment: {}",
            input_line(text),
            space.names(label).first().copied().unwrap_or_default()
        ),
        _ => format!("{}\n{}", input_line(text), label_json(space, label)),
    }
}

fn task_query(space: &LabelSpace, text: &str) -> String {
    match space.kind {
        LabelKind::Binary => format!("{}\nAssessment:", input_line(text)),
        _ => input_line(text),
    }
}

fn baseline_label(space: &LabelSpace, label: &LabelSet) -> String {
    if label.is_empty() {
        "none".to_string()
    } else {
        space.names(label).join(", ")
    }
}

fn resolve<'a>(corpus: &'a Corpus, id: &str) -> Result<&'a AnnotatedExample, PromptError> {
    Ok(corpus.require(id)?)
}

/// Renders a LiaHR or plain-ICL prompt with the default template.
pub fn render_task_prompt(
    plan: &PromptPlan,
    corpus: &Corpus,
) -> Result<RenderedPrompt, PromptError> {
    render_task_prompt_with(plan, corpus, &PromptTemplate::default())
}

pub fn render_task_prompt_with(
    plan: &PromptPlan,
    corpus: &Corpus,
    template: &PromptTemplate,
) -> Result<RenderedPrompt, PromptError> {
    let space = corpus.space();
    let query = resolve(corpus, &plan.query)?;
    let mut blocks = Vec::with_capacity(plan.demos.len() + 1);
    for demo in &plan.demos {
        let ex = resolve(corpus, &demo.example_id)?;
        space.check(&demo.label)?;
        blocks.push(task_demo(space, &ex.text, &demo.label));
    }
    match plan.mode {
        PromptMode::Liahr => {
            let label = plan
                .query_label
                .as_ref()
                .ok_or(PromptError::MissingQueryLabel)?;
            space.check(label)?;
            if plan.query_position > plan.demos.len() {
                return Err(PromptError::PositionOutOfRange {
                    position: plan.query_position,
                    max: plan.demos.len(),
                });
            }
            blocks.insert(plan.query_position, task_demo(space, &query.text, label));
        }
        PromptMode::Icl => {}
        PromptMode::Baseline => return Err(PromptError::WrongMode(plan.mode)),
    }
    let demo_block: String = blocks.iter().map(|b| format!("{b}{BLOCK_SEP}")).collect();
    let instruction = plan
        .instruction
        .clone()
        .unwrap_or_else(|| task_instruction(space));
    let text = template.fill(&instruction, &demo_block, &task_query(space, &query.text));
    Ok(RenderedPrompt::new(text, plan.clone()))
}

/// Fills a baseline plan's demos (half gold pairs marked reasonable, half
/// donor-sampled pairs marked unreasonable, interleaving shuffled by
/// `sampler`) and renders it.
pub fn render_baseline_prompt(
    plan: &PromptPlan,
    corpus: &Corpus,
    sampler: &mut SeededSampler,
) -> Result<RenderedPrompt, PromptError> {
    let resolved = assign_baseline_demos(plan, corpus, sampler)?;
    render_resolved_baseline(&resolved, corpus, &PromptTemplate::default())
}

/// Assigns labels and assessments to a baseline plan's demos.
pub fn assign_baseline_demos(
    plan: &PromptPlan,
    corpus: &Corpus,
    sampler: &mut SeededSampler,
) -> Result<PromptPlan, PromptError> {
    if plan.mode != PromptMode::Baseline {
        return Err(PromptError::WrongMode(plan.mode));
    }
    let n = plan.demos.len();
    if n % 2 == 1 {
        return Err(PromptError::OddShots(n));
    }
    let mut unreasonable: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
    sampler.shuffle(&mut unreasonable);
    let donors: Vec<(&str, &LabelSet)> = corpus
        .examples()
        .iter()
        .map(|e| (e.id.as_str(), &e.gold))
        .collect();
    let mut out = plan.clone();
    for (demo, random) in out.demos.iter_mut().zip(unreasonable) {
        let ex = resolve(corpus, &demo.example_id)?;
        if random {
            demo.label = sample_donor_labels(&donors, &ex.id, &ex.gold, sampler)?;
            demo.assessment = Some(Assessment::Unreasonable);
        } else {
            demo.label = ex.gold.clone();
            demo.assessment = Some(Assessment::Reasonable);
        }
    }
    Ok(out)
}

/// Renders a baseline plan whose demos already carry labels and
/// assessments.
pub fn render_resolved_baseline(
    plan: &PromptPlan,
    corpus: &Corpus,
    template: &PromptTemplate,
) -> Result<RenderedPrompt, PromptError> {
    if plan.mode != PromptMode::Baseline {
        return Err(PromptError::WrongMode(plan.mode));
    }
    if plan.demos.len() % 2 == 1 {
        return Err(PromptError::OddShots(plan.demos.len()));
    }
    let space = corpus.space();
    let query = resolve(corpus, &plan.query)?;
    let label = plan
        .query_label
        .as_ref()
        .ok_or(PromptError::MissingQueryLabel)?;
    space.check(label)?;
    let mut demo_block = String::new();
    for demo in &plan.demos {
        let ex = resolve(corpus, &demo.example_id)?;
        space.check(&demo.label)?;
        let assessment = demo
            .assessment
            .ok_or_else(|| PromptError::MissingAssessment(demo.example_id.clone()))?;
        demo_block.push_str(&format!(
            "{}\nLabel: {}\nAssessment: {}{BLOCK_SEP}",
            input_line(&ex.text),
            baseline_label(space, &demo.label),
            assessment.as_str()
        ));
    }
    let query_block = format!(
        "{}\nLabel: {}\nAssessment: ",
        input_line(&query.text),
        baseline_label(space, label)
    );
    let instruction = plan.instruction.as_deref().unwrap_or(BASELINE_INSTRUCTION);
    let text = template.fill(instruction, &demo_block, &query_block);
    Ok(RenderedPrompt::new(text, plan.clone()))
}

/// One plan per query position in `0..=n_shots`. Non-LiaHR plans have no
/// position and come back unchanged.
pub fn position_variants(plan: &PromptPlan) -> Vec<PromptPlan> {
    if plan.mode != PromptMode::Liahr {
        return vec![plan.clone()];
    }
    (0..=plan.demos.len())
        .map(|p| plan.clone().at_position(p))
        .collect()
}
