//! Per-example LiaHR, baseline and plain-ICL runs.

mod log;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    flip_binary_label, sample_demos_from, sample_random_labels, sample_uniform_labels,
    AnnotatedExample, Corpus, CorpusError, LabelKind, LabelSet, RandomLabelMode, SeededSampler,
    Split,
};
use crate::gateway::{
    parse_assessment, parse_prediction, CompletionRequest, Gateway, GatewayError, QueryContext,
};
use crate::metrics::MetricReport;
use crate::prompt::{
    assign_baseline_demos, render_resolved_baseline, render_task_prompt_with, Assessment, DemoSpec,
    PromptError, PromptMode, PromptPlan, PromptTemplate, RenderedPrompt,
};

pub use log::{
    corpus_hash, read_manifest, read_verdicts, write_manifest, write_verdicts, CorpusStamp,
    RunManifest, VerdictRecord, RUN_FORMAT,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("verdict log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Where the query's in-prompt label comes from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum QueryLabelSource {
    /// The aggregate gold label.
    Gold,
    /// A donor-sampled label (or uniform subset, see [`RandomLabelMode`]).
    Random,
    /// One annotator's labels; demos show the same annotator.
    Annotator(String),
    /// A named alternative gold, e.g. in-group and out-group harm labels.
    Alt(String),
    /// The opposite class of a binary gold label.
    Flipped,
}

impl QueryLabelSource {
    /// Whether a model that rejects this label is doing the right thing.
    pub fn is_corrupted(&self) -> bool {
        matches!(self, QueryLabelSource::Random | QueryLabelSource::Flipped)
    }
}

impl fmt::Display for QueryLabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryLabelSource::Gold => f.write_str("gold"),
            QueryLabelSource::Random => f.write_str("random"),
            QueryLabelSource::Annotator(k) => write!(f, "annotator:{k}"),
            QueryLabelSource::Alt(name) => write!(f, "alt:{name}"),
            QueryLabelSource::Flipped => f.write_str("flipped"),
        }
    }
}

impl FromStr for QueryLabelSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let named = |prefix: &str| {
            s.strip_prefix(prefix)
                .filter(|rest| !rest.is_empty())
                .map(str::to_string)
        };
        match s {
            "gold" | "aggregate" => Ok(QueryLabelSource::Gold),
            "random" => Ok(QueryLabelSource::Random),
            "flipped" => Ok(QueryLabelSource::Flipped),
            _ => {
                if let Some(k) = named("annotator:") {
                    Ok(QueryLabelSource::Annotator(k))
                } else if let Some(name) = named("alt:") {
                    Ok(QueryLabelSource::Alt(name))
                } else {
                    Err(format!(
                        "unknown label source `{s}` (expected gold, random, flipped, annotator:<id> or alt:<name>)"
                    ))
                }
            }
        }
    }
}

impl TryFrom<String> for QueryLabelSource {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<QueryLabelSource> for String {
    fn from(s: QueryLabelSource) -> Self {
        s.to_string()
    }
}

/// One LiaHR, baseline or ICL run over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: PromptMode,
    pub n_shots: usize,
    #[serde(default = "gold")]
    pub source: QueryLabelSource,
    /// Index of the query's labeled copy among the demos (LiaHR only).
    #[serde(default)]
    pub query_position: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_queries")]
    pub queries_per_seed: usize,
    /// Query every example of `query_splits` instead of sampling.
    #[serde(default)]
    pub full_corpus: bool,
    #[serde(default = "train")]
    pub demo_splits: Vec<Split>,
    #[serde(default = "dev")]
    pub query_splits: Vec<Split>,
    /// Flag when the similarity to the provided label drops below this;
    /// 1.0 flags any mismatch.
    #[serde(default = "one")]
    pub flag_tolerance: f64,
    /// Re-requests after an unparseable completion.
    #[serde(default = "one_u32")]
    pub parse_retries: u32,
    #[serde(default)]
    pub random_labels: RandomLabelMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    /// Prompt skeleton text with `{instruction}`, `{demo_block}` and
    /// `{query_block}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
}

fn gold() -> QueryLabelSource {
    QueryLabelSource::Gold
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}
fn default_queries() -> usize {
    100
}
fn train() -> Vec<Split> {
    vec![Split::Train]
}
fn dev() -> Vec<Split> {
    vec![Split::Dev]
}
fn one() -> f64 {
    1.0
}
fn one_u32() -> u32 {
    1
}

impl RunConfig {
    pub fn new(mode: PromptMode, n_shots: usize) -> Self {
        RunConfig {
            mode,
            n_shots,
            source: gold(),
            query_position: 0,
            seeds: default_seeds(),
            queries_per_seed: default_queries(),
            full_corpus: false,
            demo_splits: train(),
            query_splits: dev(),
            flag_tolerance: one(),
            parse_retries: one_u32(),
            random_labels: RandomLabelMode::Donor,
            instruction: None,
            template: None,
        }
    }

    pub fn with_source(mut self, source: QueryLabelSource) -> Self {
        self.source = source;
        self
    }

    pub fn with_seeds(mut self, seeds: impl IntoIterator<Item = u64>) -> Self {
        self.seeds = seeds.into_iter().collect();
        self
    }

    pub fn with_queries(mut self, queries_per_seed: usize) -> Self {
        self.queries_per_seed = queries_per_seed;
        self
    }

    pub fn at_position(mut self, position: usize) -> Self {
        self.query_position = position;
        self
    }

    pub fn full_corpus(mut self, splits: &[Split]) -> Self {
        self.full_corpus = true;
        self.query_splits = splits.to_vec();
        self
    }

    /// Checks the config on its own and against `corpus`.
    pub fn validate(&self, corpus: &Corpus) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::Config(msg));
        if self.queries_per_seed == 0 {
            return bad("queries_per_seed must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad(format!("duplicate seeds in {:?}", self.seeds));
        }
        if self.demo_splits.is_empty() || self.query_splits.is_empty() {
            return bad("demo and query splits must be non-empty".into());
        }
        if !(self.flag_tolerance > 0.0 && self.flag_tolerance <= 1.0) {
            return bad(format!(
                "flag_tolerance {} outside (0, 1]",
                self.flag_tolerance
            ));
        }
        match self.mode {
            PromptMode::Liahr if self.query_position > self.n_shots => {
                return bad(format!(
                    "query_position {} exceeds n_shots {}",
                    self.query_position, self.n_shots
                ));
            }
            PromptMode::Baseline if self.n_shots % 2 == 1 => {
                return bad(format!(
                    "baseline needs an even shot count, got {}",
                    self.n_shots
                ));
            }
            PromptMode::Icl if self.source.is_corrupted() => {
                return bad(format!(
                    "plain ICL shows no query label, so source {} is meaningless",
                    self.source
                ));
            }
            _ => {}
        }
        match &self.source {
            QueryLabelSource::Annotator(k) if !corpus.annotators().contains(&k.as_str()) => {
                bad(format!("annotator `{k}` does not occur in the corpus"))
            }
            QueryLabelSource::Alt(name) if !corpus.alt_names().contains(&name.as_str()) => bad(
                format!("alternative label set `{name}` does not occur in the corpus"),
            ),
            QueryLabelSource::Flipped if corpus.space().kind != LabelKind::Binary => bad(format!(
                "flipped labels need a binary space, `{}` is not",
                corpus.space().name
            )),
            _ => Ok(()),
        }
    }

    fn prompt_template(&self) -> Result<PromptTemplate, EngineError> {
        match &self.template {
            Some(text) => Ok(PromptTemplate::new(text.clone())?),
            None => Ok(PromptTemplate::default()),
        }
    }
}

/// Per-example outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub example_id: String,
    pub seed: u64,
    pub mode: PromptMode,
    pub source: QueryLabelSource,
    pub query_position: usize,
    pub demo_ids: Vec<String>,
    /// Label shown for the query (LiaHR) or the pair's label (baseline).
    pub provided: Option<LabelSet>,
    /// Parsed label prediction; `None` for baseline runs and unparsed output.
    pub predicted: Option<LabelSet>,
    pub assessment: Option<Assessment>,
    /// Aggregate gold of the example.
    pub gold: LabelSet,
    /// Label under the run's perspective: the annotator's or alternative
    /// set for those sources, the gold otherwise.
    pub reference: LabelSet,
    pub copied_exact: Option<bool>,
    pub jaccard_to_provided: Option<f64>,
    pub jaccard_to_gold: Option<f64>,
    pub flagged: bool,
    pub alternative: Option<LabelSet>,
    pub unparsed: bool,
    pub parse_error: Option<String>,
    pub unknown_labels: usize,
    /// Completions requested, counting parse retries.
    pub attempts: u32,
    pub fingerprint: String,
    pub raw: String,
}

impl Verdict {
    /// 1 or 0 for whether the run "accepted" the query: exact copy for
    /// LiaHR, exact match with the reference for ICL, a `reasonable`
    /// assessment for the baseline.
    pub fn success_exact(&self) -> Option<f64> {
        self.copied_exact.map(|c| f64::from(u8::from(c)))
    }

    /// Soft success: Jaccard to the provided label (LiaHR) or reference
    /// (ICL); the baseline has no partial credit.
    pub fn success_jaccard(&self) -> Option<f64> {
        match self.mode {
            PromptMode::Liahr => self.jaccard_to_provided,
            PromptMode::Icl => self.predicted.as_ref().map(|p| p.jaccard(&self.reference)),
            PromptMode::Baseline => self.success_exact(),
        }
    }

    /// The pair the metrics compare: prediction against the shown label for
    /// LiaHR, against the reference for ICL.
    pub fn metric_pair(&self) -> Option<(LabelSet, LabelSet)> {
        let predicted = self.predicted.clone()?;
        match self.mode {
            PromptMode::Liahr => Some((predicted, self.provided.clone()?)),
            PromptMode::Icl => Some((predicted, self.reference.clone())),
            PromptMode::Baseline => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub planned: usize,
    pub completed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Aggregates over the parsed verdicts of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub verdicts: usize,
    pub unparsed: usize,
    pub flagged: usize,
    /// Flagged share of parsed verdicts.
    pub flag_rate: Option<f64>,
    pub success_exact: Option<f64>,
    pub success_jaccard: Option<f64>,
    /// `higher` when accepting the label is the desirable outcome, `lower`
    /// for corrupted label sources.
    pub desirable: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricReport>,
}

impl RunSummary {
    pub fn compute(verdicts: &[Verdict], source: &QueryLabelSource, corpus: &Corpus) -> Self {
        let parsed: Vec<&Verdict> = verdicts.iter().filter(|v| !v.unparsed).collect();
        let mean = |values: Vec<f64>| {
            (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
        };
        let flagged = parsed.iter().filter(|v| v.flagged).count();
        let pairs: Vec<(LabelSet, LabelSet)> =
            parsed.iter().filter_map(|v| v.metric_pair()).collect();
        let unparsed = verdicts.len() - parsed.len();
        RunSummary {
            verdicts: verdicts.len(),
            unparsed,
            flagged,
            flag_rate: (!parsed.is_empty()).then(|| flagged as f64 / parsed.len() as f64),
            success_exact: mean(parsed.iter().filter_map(|v| v.success_exact()).collect()),
            success_jaccard: mean(parsed.iter().filter_map(|v| v.success_jaccard()).collect()),
            desirable: if source.is_corrupted() {
                "lower"
            } else {
                "higher"
            }
            .to_string(),
            metrics: MetricReport::compute(&pairs, corpus.space(), unparsed).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// Ordered by seed position in the config, then example id.
    pub verdicts: Vec<Verdict>,
    pub seeds: Vec<SeedReport>,
}

impl RunOutput {
    /// Every planned query of every seed produced a verdict.
    pub fn is_complete(&self) -> bool {
        self.seeds
            .iter()
            .all(|s| s.error.is_none() && s.completed == s.planned)
    }

    pub fn summary(&self, config: &RunConfig, corpus: &Corpus) -> RunSummary {
        RunSummary::compute(&self.verdicts, &config.source, corpus)
    }
}

/// A rendered query ready to send.
struct Planned {
    example_id: String,
    prompt: RenderedPrompt,
    context: QueryContext,
    demo_ids: Vec<String>,
    label: Option<LabelSet>,
}

/// The label `example` carries under the perspective of `source`.
fn perspective_label(example: &AnnotatedExample, source: &QueryLabelSource) -> Option<LabelSet> {
    match source {
        QueryLabelSource::Annotator(k) => example.annotator_labels.get(k).cloned(),
        QueryLabelSource::Alt(name) => example.alt_gold.get(name).cloned(),
        _ => Some(example.gold.clone()),
    }
}

/// Rewrites gold labels to the perspective of `source`, keeping only
/// examples that carry that perspective.
fn perspective_view(corpus: &Corpus, source: &QueryLabelSource) -> Result<Corpus, EngineError> {
    if !matches!(
        source,
        QueryLabelSource::Annotator(_) | QueryLabelSource::Alt(_)
    ) {
        return Ok(corpus.clone());
    }
    let examples = corpus
        .examples()
        .iter()
        .filter_map(|e| {
            perspective_label(e, source).map(|labels| AnnotatedExample {
                gold: labels,
                ..e.clone()
            })
        })
        .collect();
    Ok(corpus.with_examples(examples)?)
}

fn plan_seed(
    view: &Corpus,
    config: &RunConfig,
    template: &PromptTemplate,
    seed: u64,
) -> Result<Vec<Planned>, EngineError> {
    let space = view.space();
    let query_pool: Vec<&AnnotatedExample> = view.in_splits(&config.query_splits).collect();
    if query_pool.is_empty() {
        return Err(CorpusError::InsufficientPool {
            needed: 1,
            available: 0,
        }
        .into());
    }
    let mut queries = if config.full_corpus {
        query_pool
    } else {
        let k = config.queries_per_seed.min(query_pool.len());
        SeededSampler::new(seed, "queries").choose_k(&query_pool, k)
    };
    queries.sort_by(|a, b| a.id.cmp(&b.id));

    let demo_pool: Vec<&AnnotatedExample> = view.in_splits(&config.demo_splits).collect();
    let mut planned = Vec::with_capacity(queries.len());
    for query in queries {
        let exclude = HashSet::from([query.id.as_str()]);
        let mut demo_rng = SeededSampler::new(seed, format!("demos:{}", query.id));
        let demos = sample_demos_from(&demo_pool, config.n_shots, &exclude, &mut demo_rng)?;
        let demo_ids: Vec<String> = demos.iter().map(|d| d.id.clone()).collect();

        let label = match &config.source {
            QueryLabelSource::Random => {
                let mut rng = SeededSampler::new(seed, format!("random:{}", query.id));
                match config.random_labels {
                    RandomLabelMode::Donor => sample_random_labels(view, query, &mut rng)?,
                    RandomLabelMode::UniformSubset => {
                        sample_uniform_labels(space, &query.gold, &mut rng)
                    }
                }
            }
            QueryLabelSource::Flipped => flip_binary_label(&query.gold, space)?,
            _ => query.gold.clone(),
        };

        let (prompt, shown) = match config.mode {
            PromptMode::Liahr | PromptMode::Icl => {
                let specs = demos
                    .iter()
                    .map(|d| DemoSpec::labeled(d.id.clone(), d.gold.clone()))
                    .collect();
                let mut plan = if config.mode == PromptMode::Liahr {
                    PromptPlan::liahr(specs, query.id.clone(), label.clone())
                        .at_position(config.query_position)
                } else {
                    PromptPlan::icl(specs, query.id.clone())
                };
                plan.instruction = config.instruction.clone();
                let shown = (config.mode == PromptMode::Liahr).then(|| label.clone());
                (render_task_prompt_with(&plan, view, template)?, shown)
            }
            PromptMode::Baseline => {
                let mut plan =
                    PromptPlan::baseline(demo_ids.clone(), query.id.clone(), label.clone());
                plan.instruction = config.instruction.clone();
                let mut rng = SeededSampler::new(seed, format!("baseline:{}", query.id));
                let resolved = assign_baseline_demos(&plan, view, &mut rng)?;
                (
                    render_resolved_baseline(&resolved, view, template)?,
                    Some(label.clone()),
                )
            }
        };
        planned.push(Planned {
            example_id: query.id.clone(),
            context: QueryContext {
                example_id: query.id.clone(),
                mode: config.mode,
                shown,
                reference: query.gold.clone(),
            },
            prompt,
            demo_ids,
            label: (config.mode != PromptMode::Icl).then_some(label),
        });
    }
    Ok(planned)
}

/// Renders every prompt the run would send, without calling a backend.
pub fn plan_prompts(
    corpus: &Corpus,
    config: &RunConfig,
) -> Result<Vec<(u64, RenderedPrompt)>, EngineError> {
    config.validate(corpus)?;
    let view = perspective_view(corpus, &config.source)?;
    let template = config.prompt_template()?;
    let mut out = Vec::new();
    for &seed in &config.seeds {
        out.extend(
            plan_seed(&view, config, &template, seed)?
                .into_iter()
                .map(|p| (seed, p.prompt)),
        );
    }
    Ok(out)
}

enum Parsed {
    Labels { labels: LabelSet, unknown: usize },
    Assessed(Assessment),
}

struct Answer {
    raw: String,
    parsed: Result<Parsed, String>,
    attempts: u32,
}

fn parse_answer(mode: PromptMode, text: &str, corpus: &Corpus) -> Result<Parsed, String> {
    match mode {
        PromptMode::Baseline => parse_assessment(text, Assessment::VOCABULARY)
            .map(|i| {
                Parsed::Assessed(if i == 0 {
                    Assessment::Unreasonable
                } else {
                    Assessment::Reasonable
                })
            })
            .map_err(|e| e.to_string()),
        _ => parse_prediction(text, corpus.space())
            .map(|p| Parsed::Labels {
                labels: p.labels,
                unknown: p.unknown,
            })
            .map_err(|e| e.to_string()),
    }
}

fn build_verdict(
    planned: Planned,
    answer: Answer,
    seed: u64,
    config: &RunConfig,
    gold: LabelSet,
) -> Verdict {
    let mut v = Verdict {
        example_id: planned.example_id,
        seed,
        mode: config.mode,
        source: config.source.clone(),
        query_position: if config.mode == PromptMode::Liahr {
            config.query_position
        } else {
            0
        },
        demo_ids: planned.demo_ids,
        provided: planned.label,
        predicted: None,
        assessment: None,
        gold,
        reference: planned.context.reference,
        copied_exact: None,
        jaccard_to_provided: None,
        jaccard_to_gold: None,
        flagged: false,
        alternative: None,
        unparsed: false,
        parse_error: None,
        unknown_labels: 0,
        attempts: answer.attempts,
        fingerprint: planned.prompt.fingerprint,
        raw: answer.raw,
    };
    match answer.parsed {
        Err(e) => {
            v.unparsed = true;
            v.parse_error = Some(e);
        }
        Ok(Parsed::Assessed(a)) => {
            v.assessment = Some(a);
            v.copied_exact = Some(a == Assessment::Reasonable);
            v.flagged = a == Assessment::Unreasonable;
        }
        Ok(Parsed::Labels { labels, unknown }) => {
            v.unknown_labels = unknown;
            v.jaccard_to_gold = Some(labels.jaccard(&v.gold));
            let target = match config.mode {
                PromptMode::Liahr => v
                    .provided
                    .clone()
                    .expect("LiaHR verdicts carry the shown label"),
                _ => v.reference.clone(),
            };
            let similarity = labels.jaccard(&target);
            v.copied_exact = Some(labels == target);
            v.flagged = similarity < config.flag_tolerance;
            if config.mode == PromptMode::Liahr {
                v.jaccard_to_provided = Some(similarity);
                v.alternative = Some(labels.clone());
            }
            v.predicted = Some(labels);
        }
    }
    v
}

fn execute_seed(
    corpus: &Corpus,
    config: &RunConfig,
    gateway: &Gateway,
    planned: Vec<Planned>,
    seed: u64,
) -> (Vec<Verdict>, Option<String>) {
    let space = corpus.space();
    let mut answers: Vec<Option<Answer>> = planned.iter().map(|_| None).collect();
    let mut pending: Vec<usize> = (0..planned.len()).collect();
    let mut error = None;
    let mut attempt = 0u32;
    while !pending.is_empty() {
        let requests: Vec<CompletionRequest<'_>> = pending
            .iter()
            .map(|&i| CompletionRequest {
                prompt: &planned[i].prompt,
                context: &planned[i].context,
                space,
                attempt,
            })
            .collect();
        let results = gateway.complete_many(&requests);
        let mut retry = Vec::new();
        for (&i, result) in pending.iter().zip(results) {
            match result {
                Err(e) => {
                    ::log::warn!("seed {seed}, example {}: {e}", planned[i].example_id);
                    error.get_or_insert_with(|| format!("{}: {e}", planned[i].example_id));
                }
                Ok(completion) => {
                    let parsed = parse_answer(config.mode, &completion.text, corpus);
                    if parsed.is_err() && attempt < config.parse_retries {
                        retry.push(i);
                    }
                    answers[i] = Some(Answer {
                        raw: completion.text,
                        parsed,
                        attempts: attempt + 1,
                    });
                }
            }
        }
        if error.is_some() {
            break;
        }
        pending = retry;
        attempt += 1;
    }
    let verdicts = planned
        .into_iter()
        .zip(answers)
        .filter_map(|(p, a)| {
            let a = a?;
            let gold = corpus.get(&p.example_id).map(|e| e.gold.clone())?;
            Some(build_verdict(p, a, seed, config, gold))
        })
        .collect();
    (verdicts, error)
}

/// Runs `config` over `corpus`. Config problems fail the whole call; a
/// sampling or transport failure aborts only its seed, which is reported
/// in [`RunOutput::seeds`] alongside the verdicts gathered before it.
pub fn run(
    corpus: &Corpus,
    config: &RunConfig,
    gateway: &Gateway,
) -> Result<RunOutput, EngineError> {
    config.validate(corpus)?;
    let view = perspective_view(corpus, &config.source)?;
    let template = config.prompt_template()?;
    let mut verdicts = Vec::new();
    let mut seeds = Vec::new();
    for &seed in &config.seeds {
        let planned = match plan_seed(&view, config, &template, seed) {
            Ok(p) => p,
            Err(e) => {
                ::log::warn!("seed {seed} aborted while planning: {e}");
                seeds.push(SeedReport {
                    seed,
                    planned: 0,
                    completed: 0,
                    error: Some(e.to_string()),
                });
                continue;
            }
        };
        let n = planned.len();
        let (mut got, error) = execute_seed(corpus, config, gateway, planned, seed);
        seeds.push(SeedReport {
            seed,
            planned: n,
            completed: got.len(),
            error,
        });
        verdicts.append(&mut got);
    }
    Ok(RunOutput { verdicts, seeds })
}

fn run_mode(
    corpus: &Corpus,
    config: &RunConfig,
    gateway: &Gateway,
    mode: PromptMode,
) -> Result<RunOutput, EngineError> {
    if config.mode != mode {
        return Err(EngineError::Config(format!(
            "config mode is {}, expected {mode}",
            config.mode
        )));
    }
    run(corpus, config, gateway)
}

pub fn run_liahr(
    corpus: &Corpus,
    config: &RunConfig,
    gateway: &Gateway,
) -> Result<RunOutput, EngineError> {
    run_mode(corpus, config, gateway, PromptMode::Liahr)
}

pub fn run_baseline(
    corpus: &Corpus,
    config: &RunConfig,
    gateway: &Gateway,
) -> Result<RunOutput, EngineError> {
    run_mode(corpus, config, gateway, PromptMode::Baseline)
}

pub fn run_icl(
    corpus: &Corpus,
    config: &RunConfig,
    gateway: &Gateway,
) -> Result<RunOutput, EngineError> {
    run_mode(corpus, config, gateway, PromptMode::Icl)
}

#[cfg(test)]
mod tests;
