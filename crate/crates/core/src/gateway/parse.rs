use thiserror::Error;

use crate::corpus::{LabelKind, LabelSet, LabelSpace};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no JSON object with a \"label\" key in output")]
    NoLabelObject,
    #[error("no recognized label in output")]
    NoRecognizedLabel,
    #[error("none of the expected answers ({0}) in output")]
    NoAnswer(String),
}

/// A parsed label prediction and the number of label names that were not in
/// the space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedLabels {
    pub labels: LabelSet,
    pub unknown: usize,
}

/// Byte ranges of balanced `{...}` spans, in order of their opening brace.
/// Braces inside JSON strings do not count.
fn balanced_objects(text: &str) -> impl Iterator<Item = &str> {
    let bytes = text.as_bytes();
    (0..bytes.len())
        .filter(move |&i| bytes[i] == b'{')
        .filter_map(move |start| {
            let mut depth = 0usize;
            let mut in_str = false;
            let mut escaped = false;
            for (offset, &b) in bytes[start..].iter().enumerate() {
                if in_str {
                    match b {
                        _ if escaped => escaped = false,
                        b'\\' => escaped = true,
                        b'"' => in_str = false,
                        _ => {}
                    }
                    continue;
                }
                match b {
                    b'"' => in_str = true,
                    b'{' => depth += 1,
                    b'}' => {
                        depth -= 1;
                        if depth == 0 {
                            return Some(&text[start..=start + offset]);
                        }
                    }
                    _ => {}
                }
            }
            None
        })
}

/// Extracts the first balanced JSON object carrying a `"label"` key and maps
/// its names onto `space`. Matching trims and ignores case; unknown names are
/// dropped and counted. Single-label spaces keep the first recognized label.
pub fn parse_label_output(text: &str, space: &LabelSpace) -> Result<ParsedLabels, ParseError> {
    let value = balanced_objects(text)
        .filter_map(|span| serde_json::from_str::<serde_json::Value>(span).ok())
        .find_map(|v| match v {
            serde_json::Value::Object(mut map) => map.remove("label"),
            _ => None,
        })
        .ok_or(ParseError::NoLabelObject)?;

    let raw: Vec<serde_json::Value> = match value {
        serde_json::Value::Array(items) => items,
        serde_json::Value::Null => Vec::new(),
        other => vec![other],
    };
    let mut recognized = Vec::new();
    let mut unknown = 0;
    for item in &raw {
        match item.as_str().and_then(|s| space.index_of(s)) {
            Some(idx) => recognized.push(idx),
            None => unknown += 1,
        }
    }
    let labels = match space.kind {
        LabelKind::Multilabel => LabelSet::from_indices(recognized),
        LabelKind::SingleLabel | LabelKind::Binary => match recognized.first() {
            Some(&first) => LabelSet::from_indices([first]),
            None => return Err(ParseError::NoRecognizedLabel),
        },
    };
    Ok(ParsedLabels { labels, unknown })
}

/// Finds which of two answers the output gives.
///
/// Scans the lowercased text left to right; at each position the longer
/// answer is tried first, and the first position with a match wins. So
/// `unreasonable` is never read as `reasonable`, and `no harm` never as
/// `harm`. Returns the index into `vocabulary`.
pub fn parse_assessment(text: &str, vocabulary: [&str; 2]) -> Result<usize, ParseError> {
    let lowered = text.to_lowercase();
    let mut order = [0usize, 1];
    order.sort_by_key(|&i| std::cmp::Reverse(vocabulary[i].len()));
    for (pos, _) in lowered.char_indices() {
        let rest = &lowered[pos..];
        if let Some(&hit) = order.iter().find(|&&i| rest.starts_with(vocabulary[i])) {
            return Ok(hit);
        }
    }
    Err(ParseError::NoAnswer(vocabulary.join(", ")))
}

/// Parses a task prediction for any space kind: JSON label objects for
/// multilabel and single-label spaces, a bare answer for binary ones.
pub fn parse_prediction(text: &str, space: &LabelSpace) -> Result<ParsedLabels, ParseError> {
    match space.kind {
        LabelKind::Binary => {
            let vocab = [space.labels[0].as_str(), space.labels[1].as_str()];
            let idx = parse_assessment(text, vocab)?;
            Ok(ParsedLabels {
                labels: LabelSet::from_indices([idx]),
                unknown: 0,
            })
        }
        _ => parse_label_output(text, space),
    }
}
