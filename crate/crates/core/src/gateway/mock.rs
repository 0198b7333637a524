use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Backend, Completion, CompletionRequest, GatewayError, Usage};
use crate::corpus::{LabelKind, LabelSet, LabelSpace, SeededSampler};
use crate::prompt::{label_json, Assessment, PromptMode};

/// Deterministic local backends for harness testing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockSpec {
    /// Copies the query label shown in the prompt.
    EchoQueryLabel,
    /// Answers with the reference labels of the query. `truth` overrides
    /// the reference per example id (synthetic-noise harnesses).
    GoldOracle {
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        truth: BTreeMap<String, Vec<String>>,
    },
    /// Fixed outputs looked up by prompt fingerprint, then example id, then
    /// `default`.
    Scripted {
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        by_fingerprint: BTreeMap<String, String>,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        by_example: BTreeMap<String, String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        default: Option<String>,
    },
    /// Prior-pull model, see [`PriorBiased`].
    PriorBiased(PriorBiased),
}

/// A mock whose output mixes the label shown in the prompt with its own
/// prior belief.
///
/// For every label `l` the mock holds a belief
/// `b_l = gold_affinity * [l in reference] + (1 - gold_affinity) * prior[l]`,
/// draws `z_l ~ Bernoulli(b_l)` from a stream keyed by the prompt
/// fingerprint, and scores `s_l = mix * [l shown] + (1 - mix) * z_l`.
/// Multilabel output is `{l : s_l >= threshold}`; single-label and binary
/// output is the highest-scoring label (lowest index on ties).
///
/// `mix = 1` copies the shown label whenever `threshold <= 1`; `mix = 0`
/// ignores it. Because the stream is keyed by the prompt, sweeps over `mix`
/// see the same draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorBiased {
    /// Per-label base rates; empty means 0.5 everywhere.
    #[serde(default)]
    pub prior: Vec<f64>,
    #[serde(default = "one")]
    pub gold_affinity: f64,
    pub mix: f64,
    #[serde(default = "half")]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

impl PriorBiased {
    pub fn validate(&self, space: &LabelSpace) -> Result<(), GatewayError> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.mix) || !unit(self.gold_affinity) {
            return Err(GatewayError::Config(
                "mix and gold_affinity must lie in [0, 1]".into(),
            ));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(GatewayError::Config("threshold must lie in (0, 1]".into()));
        }
        if !self.prior.is_empty() && self.prior.len() != space.len() {
            return Err(GatewayError::Config(format!(
                "prior has {} entries, space has {} labels",
                self.prior.len(),
                space.len()
            )));
        }
        if !self.prior.iter().copied().all(unit) {
            return Err(GatewayError::Config(
                "prior entries must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    fn prior_of(&self, label: usize) -> f64 {
        self.prior.get(label).copied().unwrap_or(0.5)
    }

    /// The mock's decision for one prompt.
    pub fn decide(
        &self,
        space: &LabelSpace,
        reference: &LabelSet,
        shown: Option<&LabelSet>,
        fingerprint: &str,
        attempt: u32,
    ) -> LabelSet {
        let mut rng =
            SeededSampler::new(self.seed, format!("prior-biased/{fingerprint}/{attempt}"));
        let scores: Vec<f64> = (0..space.len())
            .map(|l| {
                let belief = self.gold_affinity * f64::from(u8::from(reference.contains(l)))
                    + (1.0 - self.gold_affinity) * self.prior_of(l);
                let z = f64::from(u8::from(rng.bernoulli(belief)));
                let in_prompt = shown.is_some_and(|s| s.contains(l));
                self.mix * f64::from(u8::from(in_prompt)) + (1.0 - self.mix) * z
            })
            .collect();
        match space.kind {
            LabelKind::Multilabel => (0..space.len())
                .filter(|&l| scores[l] >= self.threshold)
                .collect(),
            LabelKind::SingleLabel | LabelKind::Binary => {
                let mut best = 0;
                for (l, &s) in scores.iter().enumerate() {
                    if s > scores[best] {
                        best = l;
                    }
                }
                LabelSet::from_indices([best])
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    spec: MockSpec,
    truth: BTreeMap<String, LabelSet>,
}

impl MockBackend {
    pub fn new(spec: MockSpec, space: &LabelSpace) -> Result<Self, GatewayError> {
        let mut truth = BTreeMap::new();
        match &spec {
            MockSpec::GoldOracle { truth: raw } => {
                for (id, names) in raw {
                    let set = space.set_of(names).map_err(|e| {
                        GatewayError::Config(format!("oracle truth for `{id}`: {e}"))
                    })?;
                    truth.insert(id.clone(), set);
                }
            }
            MockSpec::PriorBiased(p) => p.validate(space)?,
            _ => {}
        }
        Ok(MockBackend { spec, truth })
    }

    pub fn spec(&self) -> &MockSpec {
        &self.spec
    }

    fn render_labels(space: &LabelSpace, set: &LabelSet) -> String {
        match space.kind {
            LabelKind::Binary => space
                .names(set)
                .first()
                .copied()
                .unwrap_or_default()
                .to_string(),
            _ => label_json(space, set),
        }
    }

    fn answer(&self, req: &CompletionRequest<'_>) -> Result<String, GatewayError> {
        let ctx = req.context;
        let space = req.space;
        let shown = ctx.shown.as_ref();
        let reference = self.truth.get(&ctx.example_id).unwrap_or(&ctx.reference);
        let assess = |ok: bool| {
            if ok {
                Assessment::Reasonable
            } else {
                Assessment::Unreasonable
            }
            .as_str()
            .to_string()
        };
        let text = match &self.spec {
            MockSpec::EchoQueryLabel => match ctx.mode {
                PromptMode::Baseline => assess(true),
                _ => {
                    let echoed = match (shown, space.kind) {
                        (Some(s), _) => s.clone(),
                        (None, LabelKind::Multilabel) => LabelSet::empty(),
                        (None, _) => LabelSet::from_indices([0]),
                    };
                    Self::render_labels(space, &echoed)
                }
            },
            MockSpec::GoldOracle { .. } => match ctx.mode {
                PromptMode::Baseline => assess(shown == Some(reference)),
                _ => Self::render_labels(space, reference),
            },
            MockSpec::Scripted {
                by_fingerprint,
                by_example,
                default,
            } => by_fingerprint
                .get(&req.prompt.fingerprint)
                .or_else(|| by_example.get(&ctx.example_id))
                .or(default.as_ref())
                .cloned()
                .ok_or_else(|| GatewayError::Script(ctx.example_id.clone()))?,
            MockSpec::PriorBiased(p) => {
                let decided = p.decide(
                    space,
                    reference,
                    shown,
                    &req.prompt.fingerprint,
                    req.attempt,
                );
                match ctx.mode {
                    PromptMode::Baseline => assess(Some(&decided) == shown),
                    _ => Self::render_labels(space, &decided),
                }
            }
        };
        Ok(text)
    }
}

impl Backend for MockBackend {
    fn model_id(&self) -> String {
        let kind = match self.spec {
            MockSpec::EchoQueryLabel => "echo_query_label",
            MockSpec::GoldOracle { .. } => "gold_oracle",
            MockSpec::Scripted { .. } => "scripted",
            MockSpec::PriorBiased(_) => "prior_biased",
        };
        format!("mock:{kind}")
    }

    fn complete(&self, req: &CompletionRequest<'_>) -> Result<Completion, GatewayError> {
        let text = self.answer(req)?;
        Ok(Completion {
            text,
            usage: Usage::default(),
            latency_ms: 0,
            attempts: 1,
            cached: false,
        })
    }
}
