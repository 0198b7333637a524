use std::collections::BTreeMap;

use super::*;
use crate::gateway::{Backend, BackendConfig, Completion, MockSpec, PriorBiased};
use crate::synth::{synthetic_corpus, SynthSpec};

fn space() -> crate::corpus::LabelSpace {
    crate::corpus::LabelSpace::new(
        "emo",
        LabelKind::Multilabel,
        ["anger", "joy", "fear", "love", "trust"],
    )
    .unwrap()
}

fn corpus(n: usize) -> Corpus {
    let mut spec = SynthSpec::new(space(), n, 11);
    spec.annotators = vec!["a1".into(), "a2".into()];
    spec.annotator_noise = 0.15;
    synthetic_corpus(&spec).unwrap()
}

fn gateway(spec: MockSpec, c: &Corpus) -> Gateway {
    Gateway::from_config(&BackendConfig::mock(spec), c.space()).unwrap()
}

fn liahr(source: QueryLabelSource) -> RunConfig {
    RunConfig::new(PromptMode::Liahr, 4)
        .with_source(source)
        .with_queries(20)
}

#[test]
fn echo_gold_copies_everything() {
    let c = corpus(80);
    let out = run_liahr(
        &c,
        &liahr(QueryLabelSource::Gold),
        &gateway(MockSpec::EchoQueryLabel, &c),
    )
    .unwrap();
    assert!(out.is_complete());
    assert_eq!(out.verdicts.len(), 60);
    for v in &out.verdicts {
        assert_eq!(v.copied_exact, Some(true));
        assert!(!v.flagged);
        assert_eq!(v.jaccard_to_provided, v.jaccard_to_gold);
        assert_eq!(v.alternative, v.predicted);
    }
}

#[test]
fn echo_random_copies_the_random_label() {
    let c = corpus(80);
    let out = run_liahr(
        &c,
        &liahr(QueryLabelSource::Random),
        &gateway(MockSpec::EchoQueryLabel, &c),
    )
    .unwrap();
    for v in &out.verdicts {
        assert_eq!(v.copied_exact, Some(true));
        assert_ne!(v.provided.as_ref(), Some(&v.gold));
        assert!(v.jaccard_to_gold.unwrap() < 1.0);
    }
}

#[test]
fn oracle_rejects_random_labels() {
    let c = corpus(80);
    let oracle = MockSpec::GoldOracle {
        truth: BTreeMap::new(),
    };
    let out = run_liahr(&c, &liahr(QueryLabelSource::Random), &gateway(oracle, &c)).unwrap();
    for v in &out.verdicts {
        assert!(v.flagged);
        assert_eq!(v.alternative.as_ref(), Some(&v.gold));
        assert_eq!(v.jaccard_to_gold, Some(1.0));
    }
}

#[test]
fn baseline_scripted_assessments() {
    let c = corpus(60);
    let config = RunConfig::new(PromptMode::Baseline, 4)
        .with_seeds([0])
        .with_queries(10);
    let script = |default: &str| MockSpec::Scripted {
        by_fingerprint: BTreeMap::new(),
        by_example: BTreeMap::new(),
        default: Some(default.into()),
    };
    let out = run_baseline(&c, &config, &gateway(script("reasonable"), &c)).unwrap();
    assert_eq!(out.verdicts.iter().filter(|v| v.flagged).count(), 0);
    let out = run_baseline(
        &c,
        &config,
        &gateway(script("Assessment: unreasonable"), &c),
    )
    .unwrap();
    assert_eq!(out.verdicts.iter().filter(|v| v.flagged).count(), 10);
    assert!(out.verdicts.iter().all(|v| v.alternative.is_none()));

    let ids: Vec<String> = out.verdicts.iter().map(|v| v.example_id.clone()).collect();
    let by_example = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            (
                id.clone(),
                if i < 6 { "reasonable" } else { "unreasonable" }.to_string(),
            )
        })
        .collect();
    let mixed = MockSpec::Scripted {
        by_fingerprint: BTreeMap::new(),
        by_example,
        default: None,
    };
    let out = run_baseline(&c, &config, &gateway(mixed, &c)).unwrap();
    assert_eq!(out.verdicts.iter().filter(|v| v.flagged).count(), 4);
}

#[test]
fn icl_oracle_predicts_gold() {
    let c = corpus(60);
    let config = RunConfig::new(PromptMode::Icl, 4).with_queries(10);
    let out = run_icl(
        &c,
        &config,
        &gateway(
            MockSpec::GoldOracle {
                truth: BTreeMap::new(),
            },
            &c,
        ),
    )
    .unwrap();
    assert!(out
        .verdicts
        .iter()
        .all(|v| v.predicted.as_ref() == Some(&v.gold) && !v.flagged));
    assert!(out.verdicts.iter().all(|v| v.provided.is_none()));
}

#[test]
fn prior_biased_empty_rate_matches_closed_form() {
    // No gold pull, no shown label: each of 5 labels fires with p = 0.2 and
    // the prediction is empty with probability 0.8^5.
    let c = corpus(500);
    let mock = MockSpec::PriorBiased(PriorBiased {
        prior: vec![0.2; 5],
        gold_affinity: 0.0,
        mix: 0.0,
        threshold: 0.5,
        seed: 5,
    });
    let config = RunConfig::new(PromptMode::Icl, 2)
        .with_seeds([0, 1])
        .with_queries(200);
    let out = run_icl(&c, &config, &gateway(mock, &c)).unwrap();
    let n = out.verdicts.len() as f64;
    let empty = out
        .verdicts
        .iter()
        .filter(|v| v.predicted.as_ref().unwrap().is_empty())
        .count() as f64;
    let p = 0.8f64.powi(5);
    let sd = (p * (1.0 - p) / n).sqrt();
    assert!(
        (empty / n - p).abs() < 4.0 * sd,
        "empty rate {} vs {p}",
        empty / n
    );
}

#[test]
fn unparsed_completion_is_carried_not_counted() {
    let c = corpus(250);
    let config = liahr(QueryLabelSource::Gold)
        .with_seeds([0])
        .with_queries(100);
    let planned = plan_prompts(&c, &config).unwrap();
    assert_eq!(planned.len(), 100);
    let odd_one = planned[37].1.plan.query.clone();
    let mock = MockSpec::Scripted {
        by_fingerprint: BTreeMap::new(),
        by_example: BTreeMap::from([(odd_one.clone(), "I would rather not say.".to_string())]),
        default: Some(r#"{"label": ["joy"]}"#.into()),
    };
    let out = run_liahr(&c, &config, &gateway(mock, &c)).unwrap();
    let summary = out.summary(&config, &c);
    assert_eq!(summary.verdicts, 100);
    assert_eq!(summary.unparsed, 1);
    assert_eq!(summary.metrics.as_ref().unwrap().n, 99);
    assert_eq!(summary.metrics.as_ref().unwrap().n_unparsed, 1);
    let v = out
        .verdicts
        .iter()
        .find(|v| v.example_id == odd_one)
        .unwrap();
    assert!(v.unparsed && !v.flagged && v.copied_exact.is_none());
    assert_eq!(v.attempts, 2);
}

#[test]
fn modes_share_demo_draws() {
    let c = corpus(80);
    let oracle = MockSpec::GoldOracle {
        truth: BTreeMap::new(),
    };
    let mut demos = Vec::new();
    for mode in [PromptMode::Liahr, PromptMode::Icl, PromptMode::Baseline] {
        let config = RunConfig::new(mode, 4).with_queries(15);
        let out = run(&c, &config, &gateway(oracle.clone(), &c)).unwrap();
        demos.push(
            out.verdicts
                .iter()
                .map(|v| (v.seed, v.example_id.clone(), v.demo_ids.clone()))
                .collect::<Vec<_>>(),
        );
    }
    assert_eq!(demos[0], demos[1]);
    assert_eq!(demos[0], demos[2]);
}

#[test]
fn concurrency_does_not_change_output() {
    let c = corpus(80);
    let mock = MockSpec::PriorBiased(PriorBiased {
        prior: vec![],
        gold_affinity: 0.7,
        mix: 0.4,
        threshold: 0.5,
        seed: 1,
    });
    let mut serial = BackendConfig::mock(mock.clone());
    serial.concurrency = 1;
    let mut wide = BackendConfig::mock(mock);
    wide.concurrency = 8;
    let config = liahr(QueryLabelSource::Random);
    let a = run(
        &c,
        &config,
        &Gateway::from_config(&serial, c.space()).unwrap(),
    )
    .unwrap();
    let b = run(
        &c,
        &config,
        &Gateway::from_config(&wide, c.space()).unwrap(),
    )
    .unwrap();
    assert_eq!(a, b);
    let keys: Vec<(usize, &str)> = a
        .verdicts
        .iter()
        .map(|v| {
            (
                config.seeds.iter().position(|&s| s == v.seed).unwrap(),
                v.example_id.as_str(),
            )
        })
        .collect();
    assert!(keys.windows(2).all(|w| w[0] < w[1]));
}

struct FailOn(String);

impl Backend for FailOn {
    fn model_id(&self) -> String {
        "fail-on".into()
    }

    fn complete(&self, req: &CompletionRequest<'_>) -> Result<Completion, GatewayError> {
        if req.context.example_id == self.0 {
            return Err(GatewayError::Exhausted {
                attempts: 4,
                last: "connection reset".into(),
            });
        }
        Ok(Completion {
            text: r#"{"label": []}"#.into(),
            usage: Default::default(),
            latency_ms: 0,
            attempts: 1,
            cached: false,
        })
    }
}

#[test]
fn transport_failure_aborts_only_its_seed() {
    let c = corpus(80);
    let config = liahr(QueryLabelSource::Gold).with_seeds([0, 1]);
    let seed0 = plan_prompts(&c, &config.clone().with_seeds([0])).unwrap();
    let seed1 = plan_prompts(&c, &config.clone().with_seeds([1])).unwrap();
    let victim = seed0
        .iter()
        .map(|(_, p)| p.plan.query.clone())
        .find(|id| seed1.iter().all(|(_, p)| &p.plan.query != id))
        .expect("some query unique to seed 0");
    let gw = Gateway::with_backend(Box::new(FailOn(victim.clone())), 1);
    let out = run_liahr(&c, &config, &gw).unwrap();
    assert!(!out.is_complete());
    assert!(out.seeds[0].error.as_deref().unwrap().contains(&victim));
    assert!(out.seeds[0].completed < out.seeds[0].planned);
    assert_eq!(out.seeds[1].error, None);
    assert_eq!(out.seeds[1].completed, 20);
}

#[test]
fn annotator_perspective_reaches_demos_and_reference() {
    let c = corpus(80);
    let oracle = MockSpec::GoldOracle {
        truth: BTreeMap::new(),
    };
    let config = liahr(QueryLabelSource::Annotator("a1".into()));
    let out = run_liahr(&c, &config, &gateway(oracle, &c)).unwrap();
    let mut differs = 0;
    for v in &out.verdicts {
        let ex = c.get(&v.example_id).unwrap();
        assert_eq!(v.reference, ex.annotator_labels["a1"]);
        assert_eq!(v.provided.as_ref(), Some(&v.reference));
        assert!(!v.flagged);
        differs += usize::from(v.reference != v.gold);
    }
    assert!(differs > 0);
    let prompts = plan_prompts(&c, &config).unwrap();
    let (_, first) = &prompts[0];
    let demo = c.get(&first.plan.demos[0].example_id).unwrap();
    assert_eq!(first.plan.demos[0].label, demo.annotator_labels["a1"]);
}

#[test]
fn flag_tolerance_softens_flags() {
    let c = corpus(80);
    let mock = MockSpec::PriorBiased(PriorBiased {
        prior: vec![],
        gold_affinity: 1.0,
        mix: 0.5,
        threshold: 0.5,
        seed: 0,
    });
    let strict = liahr(QueryLabelSource::Random);
    let mut lenient = strict.clone();
    lenient.flag_tolerance = 0.3;
    let a = run(&c, &strict, &gateway(mock.clone(), &c)).unwrap();
    let b = run(&c, &lenient, &gateway(mock, &c)).unwrap();
    let flags = |o: &RunOutput| o.verdicts.iter().filter(|v| v.flagged).count();
    assert!(flags(&b) <= flags(&a));
    for v in &b.verdicts {
        assert_eq!(v.flagged, v.jaccard_to_provided.unwrap() < 0.3);
    }
}

#[test]
fn config_validation() {
    let c = corpus(40);
    let bad = |cfg: RunConfig| matches!(cfg.validate(&c), Err(EngineError::Config(_)));
    assert!(bad(liahr(QueryLabelSource::Gold).with_queries(0)));
    assert!(bad(liahr(QueryLabelSource::Gold).with_seeds([1, 1])));
    assert!(bad(liahr(QueryLabelSource::Gold).at_position(5)));
    assert!(!bad(liahr(QueryLabelSource::Gold).at_position(4)));
    assert!(bad(RunConfig::new(PromptMode::Baseline, 3)));
    assert!(bad(
        RunConfig::new(PromptMode::Icl, 2).with_source(QueryLabelSource::Random)
    ));
    assert!(bad(liahr(QueryLabelSource::Annotator("a9".into()))));
    assert!(bad(liahr(QueryLabelSource::Alt("in_group".into()))));
    assert!(bad(liahr(QueryLabelSource::Flipped)));
    let gw = gateway(MockSpec::EchoQueryLabel, &c);
    assert!(run_icl(&c, &liahr(QueryLabelSource::Gold), &gw).is_err());
}

#[test]
fn source_strings() {
    for s in ["gold", "random", "flipped", "annotator:a1", "alt:in_group"] {
        assert_eq!(s.parse::<QueryLabelSource>().unwrap().to_string(), s);
    }
    assert_eq!(
        "aggregate".parse::<QueryLabelSource>(),
        Ok(QueryLabelSource::Gold)
    );
    assert!("annotator:".parse::<QueryLabelSource>().is_err());
    assert!("oracle".parse::<QueryLabelSource>().is_err());
}

#[test]
fn config_json_defaults() {
    let cfg: RunConfig =
        serde_json::from_str(r#"{"mode": "liahr", "n_shots": 10, "source": "alt:out_group"}"#)
            .unwrap();
    assert_eq!(cfg.seeds, vec![0, 1, 2]);
    assert_eq!(cfg.queries_per_seed, 100);
    assert_eq!(cfg.demo_splits, vec![Split::Train]);
    assert_eq!(cfg.query_splits, vec![Split::Dev]);
    assert_eq!(cfg.source, QueryLabelSource::Alt("out_group".into()));
    assert!(
        serde_json::from_str::<RunConfig>(r#"{"mode": "liahr", "n_shots": 1, "shots": 2}"#)
            .is_err()
    );
}

#[test]
fn verdict_log_round_trip() {
    let c = corpus(80);
    let mock = MockSpec::PriorBiased(PriorBiased {
        prior: vec![],
        gold_affinity: 0.6,
        mix: 0.3,
        threshold: 0.5,
        seed: 2,
    });
    let config = liahr(QueryLabelSource::Random);
    let out = run(&c, &config, &gateway(mock, &c)).unwrap();
    let mut buf = Vec::new();
    write_verdicts(&mut buf, &out.verdicts, c.space()).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), out.verdicts.len());
    assert!(!text.contains("latency"));
    let back = read_verdicts(&text, c.space()).unwrap();
    assert_eq!(back, out.verdicts);
    assert!(matches!(
        read_verdicts("{\"example_id\": 1}\n", c.space()),
        Err(EngineError::Log { line: 1, .. })
    ));
}

#[test]
fn manifest_is_stable() {
    let c = corpus(80);
    let config = liahr(QueryLabelSource::Gold);
    let gw = gateway(MockSpec::EchoQueryLabel, &c);
    let a = RunManifest::new(&run(&c, &config, &gw).unwrap(), &config, &c, gw.model_id());
    let b = RunManifest::new(&run(&c, &config, &gw).unwrap(), &config, &c, gw.model_id());
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    assert_eq!(a.corpus.content_hash.len(), 64);
    assert_eq!(a.summary.success_exact, Some(1.0));
    assert_eq!(a.summary.desirable, "higher");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    write_manifest(&path, &a).unwrap();
    assert_eq!(read_manifest(&path).unwrap(), a);
}
