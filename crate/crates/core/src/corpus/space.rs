use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// How many labels a document may carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Multilabel,
    SingleLabel,
    Binary,
}

impl LabelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelKind::Multilabel => "multilabel",
            LabelKind::SingleLabel => "single_label",
            LabelKind::Binary => "binary",
        }
    }
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The label vocabulary of a task.
///
/// `labels` keeps the order from the space file; every rendering and every
/// serialized label list follows it, so set-equal label sets always print
/// the same way.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub name: String,
    pub kind: LabelKind,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binary_positive: Option<String>,
    /// Plural noun used by the classification instruction ("emotions",
    /// "moral foundations"). Defaults to "labels".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noun: Option<String>,
    /// Overrides the default task instruction. `{labels}` and `{noun}` are
    /// substituted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
}

impl LabelSpace {
    pub fn new(
        name: impl Into<String>,
        kind: LabelKind,
        labels: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self, CorpusError> {
        let space = LabelSpace {
            name: name.into(),
            kind,
            labels: labels.into_iter().map(Into::into).collect(),
            binary_positive: None,
            noun: None,
            instruction: None,
        };
        space.validate()?;
        Ok(space)
    }

    pub fn binary(
        name: impl Into<String>,
        labels: [&str; 2],
        positive: &str,
    ) -> Result<Self, CorpusError> {
        let space = LabelSpace {
            name: name.into(),
            kind: LabelKind::Binary,
            labels: labels.iter().map(|s| s.to_string()).collect(),
            binary_positive: Some(positive.to_string()),
            noun: None,
            instruction: None,
        };
        space.validate()?;
        Ok(space)
    }

    pub fn with_noun(mut self, noun: impl Into<String>) -> Self {
        self.noun = Some(noun.into());
        self
    }

    pub fn with_instruction(mut self, instruction: impl Into<String>) -> Self {
        self.instruction = Some(instruction.into());
        self
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let space: LabelSpace =
            serde_json::from_str(text).map_err(|e| CorpusError::InvalidSpace(e.to_string()))?;
        space.validate()?;
        Ok(space)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |msg: String| Err(CorpusError::InvalidSpace(msg));
        if self.labels.len() < 2 {
            return bad(format!("space `{}` needs at least two labels", self.name));
        }
        for (i, label) in self.labels.iter().enumerate() {
            if label.trim().is_empty() {
                return bad(format!("space `{}` has an empty label", self.name));
            }
            if *label != label.to_lowercase() {
                return bad(format!("label `{label}` is not lowercase"));
            }
            if self.labels[..i].contains(label) {
                return bad(format!("label `{label}` appears twice"));
            }
        }
        match (self.kind, &self.binary_positive) {
            (LabelKind::Binary, Some(pos)) => {
                if self.labels.len() != 2 {
                    return bad("binary spaces have exactly two labels".into());
                }
                if !self.labels.contains(pos) {
                    return bad(format!("binary_positive `{pos}` is not a label"));
                }
            }
            (LabelKind::Binary, None) => return bad("binary space without binary_positive".into()),
            _ => {}
        }
        if self.labels.len() > u16::MAX as usize {
            return bad("too many labels".into());
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn noun(&self) -> &str {
        self.noun.as_deref().unwrap_or("labels")
    }

    /// Case-insensitive, whitespace-trimmed lookup.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        let needle = name.trim().to_lowercase();
        self.labels.iter().position(|l| *l == needle)
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn positive_index(&self) -> Option<usize> {
        self.binary_positive
            .as_deref()
            .and_then(|p| self.index_of(p))
    }

    /// Builds a label set from names, enforcing the kind's cardinality.
    pub fn set_of<S: AsRef<str>>(&self, names: &[S]) -> Result<LabelSet, CorpusError> {
        let mut indices = Vec::with_capacity(names.len());
        for name in names {
            let idx = self
                .index_of(name.as_ref())
                .ok_or_else(|| CorpusError::UnknownLabel {
                    label: name.as_ref().to_string(),
                    space: self.name.clone(),
                })?;
            indices.push(idx);
        }
        let set = LabelSet::from_indices(indices);
        self.check(&set)?;
        Ok(set)
    }

    pub fn single(&self, name: &str) -> Result<LabelSet, CorpusError> {
        self.set_of(&[name])
    }

    /// Checks membership and cardinality of `set` against this space.
    pub fn check(&self, set: &LabelSet) -> Result<(), CorpusError> {
        if let Some(&bad) = set
            .indices()
            .iter()
            .find(|&&i| i as usize >= self.labels.len())
        {
            return Err(CorpusError::UnknownLabel {
                label: format!("#{bad}"),
                space: self.name.clone(),
            });
        }
        if self.kind != LabelKind::Multilabel && set.len() != 1 {
            return Err(CorpusError::Cardinality {
                kind: self.kind,
                got: set.len(),
            });
        }
        Ok(())
    }

    pub fn names<'a>(&'a self, set: &LabelSet) -> Vec<&'a str> {
        set.iter().map(|i| self.labels[i].as_str()).collect()
    }

    /// Every label, as a set. Multilabel only in practice.
    pub fn full_set(&self) -> LabelSet {
        LabelSet::from_indices(0..self.labels.len())
    }
}

/// A subset of a [`LabelSpace`], stored as sorted label indices.
///
/// The set does not carry its space; validity is checked with
/// [`LabelSpace::check`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelSet(Vec<u16>);

impl LabelSet {
    pub fn empty() -> Self {
        LabelSet(Vec::new())
    }

    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<u16> = indices.into_iter().map(|i| i as u16).collect();
        v.sort_unstable();
        v.dedup();
        LabelSet(v)
    }

    pub fn indices(&self) -> &[u16] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().map(|&i| i as usize)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&(index as u16)).is_ok()
    }

    pub fn first(&self) -> Option<usize> {
        self.0.first().map(|&i| i as usize)
    }

    pub fn intersection_len(&self, other: &LabelSet) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    pub fn union_len(&self, other: &LabelSet) -> usize {
        self.len() + other.len() - self.intersection_len(other)
    }

    /// |A ∩ B| / |A ∪ B|, with two empty sets counted as full agreement.
    pub fn jaccard(&self, other: &LabelSet) -> f64 {
        let union = self.union_len(other);
        if union == 0 {
            1.0
        } else {
            self.intersection_len(other) as f64 / union as f64
        }
    }

    pub fn is_subset(&self, other: &LabelSet) -> bool {
        self.intersection_len(other) == self.len()
    }

    pub fn union(&self, other: &LabelSet) -> LabelSet {
        LabelSet::from_indices(self.iter().chain(other.iter()))
    }

    pub fn without(&self, index: usize) -> LabelSet {
        LabelSet::from_indices(self.iter().filter(|&i| i != index))
    }
}

impl FromIterator<usize> for LabelSet {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        LabelSet::from_indices(iter)
    }
}
