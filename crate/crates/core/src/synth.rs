//! Synthetic corpora with known ground truth, for harness checks and
//! benchmarks.

use std::collections::BTreeSet;

use crate::corpus::{
    sample_random_labels, AnnotatedExample, Corpus, CorpusError, LabelKind, LabelSet, LabelSpace,
    SeededSampler, Split,
};

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub space: LabelSpace,
    pub examples: usize,
    /// Per-label inclusion probability (multilabel) or class weight
    /// (single-label and binary). Empty means uniform.
    pub prior: Vec<f64>,
    /// Train, dev and test shares; the remainder after train and dev goes
    /// to test.
    pub train_share: f64,
    pub dev_share: f64,
    /// Annotator ids to simulate.
    pub annotators: Vec<String>,
    /// Per-label flip probability for multilabel annotators, relabel
    /// probability otherwise.
    pub annotator_noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(space: LabelSpace, examples: usize, seed: u64) -> Self {
        SynthSpec {
            space,
            examples,
            prior: Vec::new(),
            train_share: 0.6,
            dev_share: 0.4,
            annotators: Vec::new(),
            annotator_noise: 0.0,
            seed,
        }
    }

    fn weight(&self, l: usize) -> f64 {
        match self.space.kind {
            LabelKind::Multilabel => self.prior.get(l).copied().unwrap_or(0.3),
            _ => self.prior.get(l).copied().unwrap_or(1.0),
        }
    }
}

fn draw_class(weights: &[f64], rng: &mut SeededSampler) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.unit() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn draw_gold(spec: &SynthSpec, rng: &mut SeededSampler) -> LabelSet {
    let n = spec.space.len();
    match spec.space.kind {
        LabelKind::Multilabel => {
            // Mostly non-empty sets, like emotion corpora.
            for _ in 0..8 {
                let set: LabelSet = (0..n).filter(|&l| rng.bernoulli(spec.weight(l))).collect();
                if !set.is_empty() {
                    return set;
                }
            }
            LabelSet::from_indices([rng.index(n)])
        }
        _ => {
            let weights: Vec<f64> = (0..n).map(|l| spec.weight(l)).collect();
            LabelSet::from_indices([draw_class(&weights, rng)])
        }
    }
}

fn perturb(space: &LabelSpace, gold: &LabelSet, noise: f64, rng: &mut SeededSampler) -> LabelSet {
    match space.kind {
        LabelKind::Multilabel => (0..space.len())
            .filter(|&l| gold.contains(l) != rng.bernoulli(noise))
            .collect(),
        _ => {
            if rng.bernoulli(noise) {
                LabelSet::from_indices([rng.index(space.len())])
            } else {
                gold.clone()
            }
        }
    }
}

/// Builds a corpus from `spec`. Ids are zero-padded so that id order is
/// corpus order.
pub fn synthetic_corpus(spec: &SynthSpec) -> Result<Corpus, CorpusError> {
    let mut rng = SeededSampler::new(spec.seed, "synth");
    let width = spec.examples.max(1).to_string().len();
    let train_cut = (spec.examples as f64 * spec.train_share).round() as usize;
    let dev_cut = train_cut + (spec.examples as f64 * spec.dev_share).round() as usize;
    let examples = (0..spec.examples)
        .map(|i| {
            let gold = draw_gold(spec, &mut rng);
            let split = if i < train_cut {
                Split::Train
            } else if i < dev_cut {
                Split::Dev
            } else {
                Split::Test
            };
            let mut ex = AnnotatedExample::new(
                format!("s{i:0width$}"),
                format!("Synthetic document number {i}."),
                gold.clone(),
                split,
            );
            for a in &spec.annotators {
                let labels = perturb(&spec.space, &gold, spec.annotator_noise, &mut rng);
                ex.annotator_labels.insert(a.clone(), labels);
            }
            ex
        })
        .collect();
    Corpus::new(
        spec.space.clone(),
        examples,
        format!("synthetic:{}", spec.seed),
    )
}

/// Replaces the gold labels of `round(fraction * n)` uniformly chosen
/// examples with donor-sampled labels. Returns the corrupted corpus and the
/// ids that were changed.
pub fn corrupt(
    corpus: &Corpus,
    fraction: f64,
    seed: u64,
) -> Result<(Corpus, BTreeSet<String>), CorpusError> {
    let mut rng = SeededSampler::new(seed, "corrupt");
    let k = (corpus.len() as f64 * fraction).round() as usize;
    let all: Vec<&AnnotatedExample> = corpus.examples().iter().collect();
    let picked: BTreeSet<String> = rng
        .choose_k(&all, k.min(all.len()))
        .into_iter()
        .map(|e| e.id.clone())
        .collect();
    let mut examples = corpus.examples().to_vec();
    for ex in examples.iter_mut().filter(|e| picked.contains(&e.id)) {
        ex.gold = sample_random_labels(corpus, ex, &mut rng)?;
    }
    Ok((corpus.with_examples(examples)?, picked))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> LabelSpace {
        LabelSpace::new(
            "emo",
            LabelKind::Multilabel,
            ["anger", "joy", "fear", "love"],
        )
        .unwrap()
    }

    #[test]
    fn deterministic_and_split() {
        let spec = SynthSpec::new(space(), 50, 3);
        let a = synthetic_corpus(&spec).unwrap();
        let b = synthetic_corpus(&spec).unwrap();
        assert_eq!(a.examples(), b.examples());
        assert_eq!(a.in_split(Split::Train).count(), 30);
        assert_eq!(a.in_split(Split::Dev).count(), 20);
        assert!(a.examples().iter().all(|e| !e.gold.is_empty()));
    }

    #[test]
    fn annotators_present() {
        let mut spec = SynthSpec::new(space(), 20, 1);
        spec.annotators = vec!["a1".into(), "a2".into()];
        spec.annotator_noise = 0.2;
        let c = synthetic_corpus(&spec).unwrap();
        assert_eq!(c.annotators(), vec!["a1", "a2"]);
    }

    #[test]
    fn corruption_changes_exactly_the_picked() {
        let c = synthetic_corpus(&SynthSpec::new(space(), 100, 9)).unwrap();
        let (bad, ids) = corrupt(&c, 0.1, 4).unwrap();
        assert_eq!(ids.len(), 10);
        for (orig, new) in c.examples().iter().zip(bad.examples()) {
            assert_eq!(orig.gold != new.gold, ids.contains(&orig.id));
        }
    }
}
