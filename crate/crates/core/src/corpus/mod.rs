//! Annotated corpora, label spaces and seeded sampling.
//!
//! Corpora live on disk as one JSON record per line:
//!
//! ```text
//! {"id": "a", "text": "...", "labels": ["anger"], "annotators": {"w1": ["joy"]}, "split": "dev"}
//! ```
//!
//! `labels` may also be a bare string. `annotators`, `alt_labels` and `split`
//! are optional; a missing split means `train`.

mod convert;
mod io;
mod sampler;
mod space;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use convert::{convert_csv, CsvLabels, CsvOptions, LabelMap};
pub use io::{load_corpus, parse_corpus, write_corpus, write_corpus_to_string};
pub use sampler::SeededSampler;
pub use space::{LabelKind, LabelSet, LabelSpace};

pub const FORMAT_VERSION: &str = "liahr-corpus/1";

/// Donor draws are rejected when empty or equal to the target's gold; after
/// this many rejections the draw falls back to the explicit eligible list.
pub const MAX_DONOR_ATTEMPTS: usize = 1000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid label space: {0}")]
    InvalidSpace(String),
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {source}")]
    Record {
        line: usize,
        #[source]
        source: Box<CorpusError>,
    },
    #[error("line {line}: duplicate id `{id}` (first seen on line {first_line})")]
    DuplicateId {
        id: String,
        line: usize,
        first_line: usize,
    },
    #[error("unknown label `{label}` for space `{space}`")]
    UnknownLabel { label: String, space: String },
    #[error("{kind} space requires exactly one label, got {got}")]
    Cardinality { kind: LabelKind, got: usize },
    #[error("empty text")]
    EmptyText,
    #[error("unknown split `{0}`")]
    UnknownSplit(String),
    #[error("unknown example id `{0}`")]
    UnknownId(String),
    #[error("demo pool too small: need {needed}, have {available}")]
    InsufficientPool { needed: usize, available: usize },
    #[error("no eligible donor for random labels of `{0}`")]
    NoEligibleDonor(String),
    #[error("operation needs a binary label space, `{0}` is {1}")]
    NotBinary(String, LabelKind),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(CorpusError::UnknownSplit(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedExample {
    pub id: String,
    pub text: String,
    /// Aggregate label.
    pub gold: LabelSet,
    pub annotator_labels: BTreeMap<String, LabelSet>,
    /// Named alternative labelings, e.g. in-group vs out-group harm.
    pub alt_gold: BTreeMap<String, LabelSet>,
    pub split: Split,
}

impl AnnotatedExample {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        gold: LabelSet,
        split: Split,
    ) -> Self {
        AnnotatedExample {
            id: id.into(),
            text: text.into(),
            gold,
            annotator_labels: BTreeMap::new(),
            alt_gold: BTreeMap::new(),
            split,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub format_version: String,
}

/// A validated, immutable corpus. Iteration order is file order.
#[derive(Debug, Clone)]
pub struct Corpus {
    space: LabelSpace,
    examples: Vec<AnnotatedExample>,
    provenance: Provenance,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(
        space: LabelSpace,
        examples: Vec<AnnotatedExample>,
        source: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        space.validate()?;
        let mut by_id = HashMap::with_capacity(examples.len());
        for (pos, ex) in examples.iter().enumerate() {
            let line = pos + 1;
            let wrap = |source| CorpusError::Record {
                line,
                source: Box::new(source),
            };
            if let Some(&first) = by_id.get(&ex.id) {
                return Err(CorpusError::DuplicateId {
                    id: ex.id.clone(),
                    line,
                    first_line: first + 1,
                });
            }
            if ex.text.is_empty() {
                return Err(wrap(CorpusError::EmptyText));
            }
            space.check(&ex.gold).map_err(wrap)?;
            for set in ex.annotator_labels.values().chain(ex.alt_gold.values()) {
                space.check(set).map_err(wrap)?;
            }
            by_id.insert(ex.id.clone(), pos);
        }
        Ok(Corpus {
            space,
            examples,
            provenance: Provenance {
                source: source.into(),
                format_version: FORMAT_VERSION.to_string(),
            },
            by_id,
        })
    }

    pub fn space(&self) -> &LabelSpace {
        &self.space
    }

    pub fn examples(&self) -> &[AnnotatedExample] {
        &self.examples
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&AnnotatedExample> {
        self.by_id.get(id).map(|&i| &self.examples[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn require(&self, id: &str) -> Result<&AnnotatedExample, CorpusError> {
        self.get(id)
            .ok_or_else(|| CorpusError::UnknownId(id.to_string()))
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &AnnotatedExample> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn in_splits<'a>(
        &'a self,
        splits: &'a [Split],
    ) -> impl Iterator<Item = &'a AnnotatedExample> {
        self.examples
            .iter()
            .filter(move |e| splits.contains(&e.split))
    }

    /// Annotator ids in sorted order.
    pub fn annotators(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self
            .examples
            .iter()
            .flat_map(|e| e.annotator_labels.keys().map(String::as_str))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn alt_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self
            .examples
            .iter()
            .flat_map(|e| e.alt_gold.keys().map(String::as_str))
            .collect();
        names.sort_unstable();
        names.dedup();
        names
    }

    /// The same corpus with different examples; provenance is kept.
    pub fn with_examples(&self, examples: Vec<AnnotatedExample>) -> Result<Corpus, CorpusError> {
        let mut out = Corpus::new(self.space.clone(), examples, self.provenance.source.clone())?;
        out.provenance = self.provenance.clone();
        Ok(out)
    }

    pub fn into_examples(self) -> Vec<AnnotatedExample> {
        self.examples
    }
}

/// Draws `n_shots` distinct demos from the train split, excluding `exclude`.
pub fn sample_demos<'a>(
    corpus: &'a Corpus,
    n_shots: usize,
    exclude: &HashSet<&str>,
    sampler: &mut SeededSampler,
) -> Result<Vec<&'a AnnotatedExample>, CorpusError> {
    let pool: Vec<&AnnotatedExample> = corpus.in_split(Split::Train).collect();
    sample_demos_from(&pool, n_shots, exclude, sampler)
}

/// Draws `n_shots` distinct demos uniformly without replacement from `pool`,
/// preserving draw order.
pub fn sample_demos_from<'a>(
    pool: &[&'a AnnotatedExample],
    n_shots: usize,
    exclude: &HashSet<&str>,
    sampler: &mut SeededSampler,
) -> Result<Vec<&'a AnnotatedExample>, CorpusError> {
    let eligible: Vec<&AnnotatedExample> = pool
        .iter()
        .copied()
        .filter(|e| !exclude.contains(e.id.as_str()))
        .collect();
    if eligible.len() < n_shots {
        return Err(CorpusError::InsufficientPool {
            needed: n_shots,
            available: eligible.len(),
        });
    }
    Ok(sampler.choose_k(&eligible, n_shots))
}

/// How random labels are produced for noise-rejection runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomLabelMode {
    /// Gold labels of another uniformly drawn example.
    #[default]
    Donor,
    /// Uniform non-empty subset (multilabel) or uniform other class.
    UniformSubset,
}

/// Donor-sampled random labels for `target`: the gold set of another
/// example, never empty and never equal to `target.gold`.
pub fn sample_random_labels(
    corpus: &Corpus,
    target: &AnnotatedExample,
    sampler: &mut SeededSampler,
) -> Result<LabelSet, CorpusError> {
    let donors: Vec<(&str, &LabelSet)> = corpus
        .examples()
        .iter()
        .map(|e| (e.id.as_str(), &e.gold))
        .collect();
    sample_donor_labels(&donors, &target.id, &target.gold, sampler)
}

/// Donor sampling over an arbitrary `(id, labels)` pool.
pub fn sample_donor_labels(
    donors: &[(&str, &LabelSet)],
    target_id: &str,
    target_labels: &LabelSet,
    sampler: &mut SeededSampler,
) -> Result<LabelSet, CorpusError> {
    let eligible = |(id, set): &(&str, &LabelSet)| {
        *id != target_id && !set.is_empty() && *set != target_labels
    };
    if !donors.iter().any(eligible) {
        return Err(CorpusError::NoEligibleDonor(target_id.to_string()));
    }
    for _ in 0..MAX_DONOR_ATTEMPTS {
        let pick = &donors[sampler.index(donors.len())];
        if eligible(pick) {
            return Ok(pick.1.clone());
        }
    }
    // Rejection from a uniform draw is uniform over the eligible donors, so
    // drawing from them directly keeps the distribution.
    let pool: Vec<&(&str, &LabelSet)> = donors.iter().filter(|d| eligible(d)).collect();
    Ok(pool[sampler.index(pool.len())].1.clone())
}

/// Uniform alternative: a non-empty subset (multilabel) or another class,
/// different from `target_labels`.
pub fn sample_uniform_labels(
    space: &LabelSpace,
    target_labels: &LabelSet,
    sampler: &mut SeededSampler,
) -> LabelSet {
    match space.kind {
        LabelKind::Multilabel => loop {
            let set: LabelSet = (0..space.len()).filter(|_| sampler.coin()).collect();
            if !set.is_empty() && set != *target_labels {
                return set;
            }
        },
        LabelKind::SingleLabel | LabelKind::Binary => {
            let current = target_labels.first();
            let others: Vec<usize> = (0..space.len()).filter(|&i| Some(i) != current).collect();
            LabelSet::from_indices([others[sampler.index(others.len())]])
        }
    }
}

/// The opposite label of a binary space.
pub fn flip_binary_label(label: &LabelSet, space: &LabelSpace) -> Result<LabelSet, CorpusError> {
    if space.kind != LabelKind::Binary {
        return Err(CorpusError::NotBinary(space.name.clone(), space.kind));
    }
    space.check(label)?;
    let current = label.first().expect("binary label sets hold one label");
    Ok(LabelSet::from_indices([1 - current]))
}
