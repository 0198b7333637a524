use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EngineError, QueryLabelSource, RunConfig, RunOutput, RunSummary, SeedReport, Verdict};
use crate::corpus::{write_corpus_to_string, Corpus, LabelSet, LabelSpace};
use crate::prompt::{Assessment, PromptMode};

pub const RUN_FORMAT: &str = "liahr-run/1";

/// One verdict-log line. Label sets are written as names in space order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictRecord {
    pub example_id: String,
    pub seed: u64,
    pub mode: PromptMode,
    pub source: QueryLabelSource,
    pub query_position: usize,
    pub demo_ids: Vec<String>,
    pub provided: Option<Vec<String>>,
    pub predicted: Option<Vec<String>>,
    pub assessment: Option<Assessment>,
    pub gold: Vec<String>,
    pub reference: Vec<String>,
    pub copied_exact: Option<bool>,
    pub jaccard_to_provided: Option<f64>,
    pub jaccard_to_gold: Option<f64>,
    pub flagged: bool,
    pub alternative: Option<Vec<String>>,
    pub unparsed: bool,
    pub parse_error: Option<String>,
    pub unknown_labels: usize,
    pub attempts: u32,
    pub fingerprint: String,
    pub raw: String,
}

fn names(space: &LabelSpace, set: &LabelSet) -> Vec<String> {
    space.names(set).into_iter().map(str::to_string).collect()
}

impl VerdictRecord {
    pub fn from_verdict(v: &Verdict, space: &LabelSpace) -> Self {
        let opt = |s: &Option<LabelSet>| s.as_ref().map(|s| names(space, s));
        VerdictRecord {
            example_id: v.example_id.clone(),
            seed: v.seed,
            mode: v.mode,
            source: v.source.clone(),
            query_position: v.query_position,
            demo_ids: v.demo_ids.clone(),
            provided: opt(&v.provided),
            predicted: opt(&v.predicted),
            assessment: v.assessment,
            gold: names(space, &v.gold),
            reference: names(space, &v.reference),
            copied_exact: v.copied_exact,
            jaccard_to_provided: v.jaccard_to_provided,
            jaccard_to_gold: v.jaccard_to_gold,
            flagged: v.flagged,
            alternative: opt(&v.alternative),
            unparsed: v.unparsed,
            parse_error: v.parse_error.clone(),
            unknown_labels: v.unknown_labels,
            attempts: v.attempts,
            fingerprint: v.fingerprint.clone(),
            raw: v.raw.clone(),
        }
    }

    pub fn into_verdict(self, space: &LabelSpace) -> Result<Verdict, String> {
        let set = |n: Vec<String>| space.set_of(&n).map_err(|e| e.to_string());
        let opt = |n: Option<Vec<String>>| n.map(set).transpose();
        Ok(Verdict {
            example_id: self.example_id,
            seed: self.seed,
            mode: self.mode,
            source: self.source,
            query_position: self.query_position,
            demo_ids: self.demo_ids,
            provided: opt(self.provided)?,
            predicted: opt(self.predicted)?,
            assessment: self.assessment,
            gold: set(self.gold)?,
            reference: set(self.reference)?,
            copied_exact: self.copied_exact,
            jaccard_to_provided: self.jaccard_to_provided,
            jaccard_to_gold: self.jaccard_to_gold,
            flagged: self.flagged,
            alternative: opt(self.alternative)?,
            unparsed: self.unparsed,
            parse_error: self.parse_error,
            unknown_labels: self.unknown_labels,
            attempts: self.attempts,
            fingerprint: self.fingerprint,
            raw: self.raw,
        })
    }
}

/// Writes one JSON record per verdict, each ending in a newline.
pub fn write_verdicts<W: Write>(
    mut out: W,
    verdicts: &[Verdict],
    space: &LabelSpace,
) -> Result<(), EngineError> {
    let io = |source| EngineError::Io {
        path: "<verdict log>".into(),
        source,
    };
    for v in verdicts {
        let line = serde_json::to_string(&VerdictRecord::from_verdict(v, space))?;
        out.write_all(line.as_bytes()).map_err(io)?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_verdicts(text: &str, space: &LabelSpace) -> Result<Vec<Verdict>, EngineError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let err = |message: String| EngineError::Log {
                line: i + 1,
                message,
            };
            let record: VerdictRecord = serde_json::from_str(l).map_err(|e| err(e.to_string()))?;
            record.into_verdict(space).map_err(err)
        })
        .collect()
}

/// SHA-256 over `blob <len>\0<canonical corpus>`, the git object hashing
/// scheme applied to the canonical serialization.
pub fn corpus_hash(corpus: &Corpus) -> String {
    let body = write_corpus_to_string(corpus);
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", body.len()).as_bytes());
    h.update(body.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStamp {
    pub source: String,
    pub space: String,
    pub examples: usize,
    pub content_hash: String,
}

impl CorpusStamp {
    pub fn of(corpus: &Corpus) -> Self {
        CorpusStamp {
            source: corpus.provenance().source.clone(),
            space: corpus.space().name.clone(),
            examples: corpus.len(),
            content_hash: corpus_hash(corpus),
        }
    }
}

/// Everything needed to reproduce a run with a mock backend. Holds no
/// timestamps or latencies, so repeated mock runs stamp identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub model: String,
    pub config: RunConfig,
    pub corpus: CorpusStamp,
    pub seeds: Vec<SeedReport>,
    pub complete: bool,
    pub summary: RunSummary,
}

impl RunManifest {
    pub fn new(
        output: &RunOutput,
        config: &RunConfig,
        corpus: &Corpus,
        model: impl Into<String>,
    ) -> Self {
        RunManifest {
            format: RUN_FORMAT.to_string(),
            model: model.into(),
            config: config.clone(),
            corpus: CorpusStamp::of(corpus),
            seeds: output.seeds.clone(),
            complete: output.is_complete(),
            summary: output.summary(config, corpus),
        }
    }
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &RunManifest) -> Result<(), EngineError> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| EngineError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<RunManifest, EngineError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| EngineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}
