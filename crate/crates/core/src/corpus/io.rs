use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnnotatedExample, Corpus, CorpusError, LabelKind, LabelSet, LabelSpace, Split};

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum LabelsField {
    Many(Vec<String>),
    One(String),
}

impl LabelsField {
    fn to_set(&self, space: &LabelSpace) -> Result<LabelSet, CorpusError> {
        match self {
            LabelsField::Many(names) => space.set_of(names),
            LabelsField::One(name) => space.set_of(std::slice::from_ref(name)),
        }
    }

    fn canonical(set: &LabelSet, space: &LabelSpace) -> Self {
        let names = space.names(set);
        match space.kind {
            LabelKind::Multilabel => {
                LabelsField::Many(names.into_iter().map(String::from).collect())
            }
            _ => LabelsField::One(names.first().copied().unwrap_or_default().to_string()),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    text: String,
    labels: LabelsField,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    annotators: BTreeMap<String, LabelsField>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    alt_labels: BTreeMap<String, LabelsField>,
    #[serde(default)]
    split: Option<Split>,
}

fn labels_map(
    raw: &BTreeMap<String, LabelsField>,
    space: &LabelSpace,
) -> Result<BTreeMap<String, LabelSet>, CorpusError> {
    raw.iter()
        .map(|(k, v)| Ok((k.clone(), v.to_set(space)?)))
        .collect()
}

/// Parses canonical line-delimited records. Blank lines are skipped; line
/// numbers in errors are 1-based file lines.
pub fn parse_corpus(text: &str, space: &LabelSpace, source: &str) -> Result<Corpus, CorpusError> {
    space.validate()?;
    let mut examples = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
            line,
            message: e.to_string(),
        })?;
        if let Some(&first_line) = seen.get(&record.id) {
            return Err(CorpusError::DuplicateId {
                id: record.id,
                line,
                first_line,
            });
        }
        let wrap = |source| CorpusError::Record {
            line,
            source: Box::new(source),
        };
        if record.text.is_empty() {
            return Err(wrap(CorpusError::EmptyText));
        }
        let gold = record.labels.to_set(space).map_err(wrap)?;
        let annotator_labels = labels_map(&record.annotators, space).map_err(wrap)?;
        let alt_gold = labels_map(&record.alt_labels, space).map_err(wrap)?;
        seen.insert(record.id.clone(), line);
        examples.push(AnnotatedExample {
            id: record.id,
            text: record.text,
            gold,
            annotator_labels,
            alt_gold,
            split: record.split.unwrap_or(Split::Train),
        });
    }
    Corpus::new(space.clone(), examples, source)
}

pub fn load_corpus(path: impl AsRef<Path>, space: &LabelSpace) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&text, space, &path.display().to_string())
}

/// Canonical serialization: one record per line in corpus order, labels in
/// space order, maps sorted by key, split always present.
pub fn write_corpus_to_string(corpus: &Corpus) -> String {
    let space = corpus.space();
    let mut out = String::new();
    for ex in corpus.examples() {
        let canon = |m: &BTreeMap<String, LabelSet>| {
            m.iter()
                .map(|(k, v)| (k.clone(), LabelsField::canonical(v, space)))
                .collect()
        };
        let record = Record {
            id: ex.id.clone(),
            text: ex.text.clone(),
            labels: LabelsField::canonical(&ex.gold, space),
            annotators: canon(&ex.annotator_labels),
            alt_labels: canon(&ex.alt_gold),
            split: Some(ex.split),
        };
        out.push_str(&serde_json::to_string(&record).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    fs::write(path, write_corpus_to_string(corpus)).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}
