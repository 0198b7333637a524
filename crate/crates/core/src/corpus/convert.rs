use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use super::{AnnotatedExample, Corpus, CorpusError, LabelSet, LabelSpace, Split};

/// Raw label name to target label; `None` drops the raw label. Used for
/// precomputed cluster maps such as 27 fine emotions onto 7 coarse ones.
#[derive(Debug, Clone, Default)]
pub struct LabelMap(HashMap<String, Option<String>>);

impl LabelMap {
    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let raw: HashMap<String, Option<String>> =
            serde_json::from_str(text).map_err(|e| CorpusError::Csv(format!("label map: {e}")))?;
        Ok(LabelMap(
            raw.into_iter()
                .map(|(k, v)| (k.trim().to_lowercase(), v))
                .collect(),
        ))
    }

    fn apply<'a>(&'a self, raw: &'a str) -> Option<&'a str> {
        match self.0.get(&raw.trim().to_lowercase()) {
            Some(Some(target)) => Some(target.as_str()),
            Some(None) => None,
            None => Some(raw),
        }
    }
}

#[derive(Debug, Clone)]
pub enum CsvLabels {
    /// One column holding `sep`-separated label names.
    Delimited { column: String, sep: char },
    /// One 0/1 column per label, named by the label.
    OneHot { columns: Vec<String> },
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub id_column: Option<String>,
    pub text_column: String,
    pub labels: CsvLabels,
    pub split_column: Option<String>,
    pub label_map: Option<LabelMap>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize, CorpusError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CorpusError::Csv(format!("missing column `{name}`")))
}

/// Converts a headed CSV table into a corpus. Rows without an id column get
/// their 1-based row number as id.
pub fn convert_csv<R: Read>(
    reader: R,
    space: &LabelSpace,
    options: &CsvOptions,
    source: &str,
) -> Result<Corpus, CorpusError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CorpusError::Csv(e.to_string()))?
        .clone();
    let id_idx = options
        .id_column
        .as_deref()
        .map(|c| column(&headers, c))
        .transpose()?;
    let text_idx = column(&headers, &options.text_column)?;
    let split_idx = options
        .split_column
        .as_deref()
        .map(|c| column(&headers, c))
        .transpose()?;
    let label_cols: Vec<(usize, String)> = match &options.labels {
        CsvLabels::Delimited { column: c, .. } => vec![(column(&headers, c)?, c.clone())],
        CsvLabels::OneHot { columns } => columns
            .iter()
            .map(|c| Ok((column(&headers, c)?, c.clone())))
            .collect::<Result<_, CorpusError>>()?,
    };
    let map = options.label_map.clone().unwrap_or_default();

    let mut examples = Vec::new();
    for (row_no, row) in rdr.records().enumerate() {
        let line = row_no + 2;
        let row = row.map_err(|e| CorpusError::Csv(e.to_string()))?;
        let field = |i: usize| row.get(i).unwrap_or("").to_string();
        let raw_names: Vec<String> = match &options.labels {
            CsvLabels::Delimited { sep, .. } => field(label_cols[0].0)
                .split(*sep)
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect(),
            CsvLabels::OneHot { .. } => label_cols
                .iter()
                .filter(|(i, _)| matches!(field(*i).trim(), "1" | "1.0" | "true" | "True"))
                .map(|(_, name)| name.clone())
                .collect(),
        };
        let mut indices = Vec::new();
        for raw in &raw_names {
            if let Some(target) = map.apply(raw) {
                let idx = space.index_of(target).ok_or_else(|| CorpusError::Record {
                    line,
                    source: Box::new(CorpusError::UnknownLabel {
                        label: target.to_string(),
                        space: space.name.clone(),
                    }),
                })?;
                indices.push(idx);
            }
        }
        let gold = LabelSet::from_indices(indices);
        space.check(&gold).map_err(|e| CorpusError::Record {
            line,
            source: Box::new(e),
        })?;
        let split = match split_idx {
            Some(i) => field(i)
                .trim()
                .parse::<Split>()
                .map_err(|e| CorpusError::Record {
                    line,
                    source: Box::new(e),
                })?,
            None => Split::Train,
        };
        let id = match id_idx {
            Some(i) => field(i),
            None => (row_no + 1).to_string(),
        };
        examples.push(AnnotatedExample {
            id,
            text: field(text_idx),
            gold,
            annotator_labels: BTreeMap::new(),
            alt_gold: BTreeMap::new(),
            split,
        });
    }
    Corpus::new(space.clone(), examples, source)
}
