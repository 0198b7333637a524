#![allow(dead_code)]

use std::path::PathBuf;

use liahr::corpus::{AnnotatedExample, Corpus, LabelSpace, Split};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// A bundled label space by file stem.
pub fn space(name: &str) -> LabelSpace {
    LabelSpace::load(data_dir().join("spaces").join(format!("{name}.json"))).unwrap()
}

/// A handful of documents for prompt rendering, labeled with nothing.
pub fn fixture_corpus(space_name: &str) -> Corpus {
    let space = space(space_name);
    let texts = [
        ("meals", "Skipping meals is the national way of showing disappointment and . wiz"),
        ("sober", "But guess what ? I'm sober"),
        ("meeting", "Meeting moved to Thursday at ten."),
        ("orleans", "Is this in New Orleans?? I really feel like this is New Orleans."),
        ("bang", "BANG motherfucker!"),
        ("lepen", "Le Pen was absolutely terrible. That's pretty much all we can take out of this debate."),
        ("capitalism", "It\u{2019}s just capitalism is a pure distillation of those bad traits"),
        ("ew", "fags ew"),
        ("dyke", "went from edm junkie to college dyke way too quick"),
        ("capital", "What is the capital of Peru?"),
        ("inventor", "Who invented the telephone?"),
    ];
    let empty = space
        .set_of::<&str>(&[])
        .unwrap_or_else(|_| space.single(&space.labels[0]).unwrap());
    let examples = texts
        .iter()
        .map(|(id, text)| AnnotatedExample::new(*id, *text, empty.clone(), Split::Train))
        .collect();
    Corpus::new(space, examples, "fixture").unwrap()
}

pub mod oracle {
    //! Slow, exact reference implementations.

    use std::collections::BTreeSet;

    use num_bigint::{BigInt, BigUint};
    use num_rational::BigRational;
    use num_traits::{One, ToPrimitive, Zero};

    pub type Set = BTreeSet<usize>;

    fn ratio(num: usize, den: usize) -> BigRational {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    fn f(r: &BigRational) -> f64 {
        r.to_f64().unwrap()
    }

    /// Mean per-pair |A ∩ B| / |A ∪ B|, with two empty sets scoring 1.
    pub fn jaccard(pairs: &[(Set, Set)]) -> f64 {
        let mut total = BigRational::zero();
        for (a, b) in pairs {
            let union = a.union(b).count();
            total += if union == 0 {
                BigRational::one()
            } else {
                ratio(a.intersection(b).count(), union)
            };
        }
        f(&(total / BigRational::from_integer(BigInt::from(pairs.len()))))
    }

    fn counts(pairs: &[(Set, Set)], label: Option<usize>) -> (usize, usize, usize) {
        let keep = |l: &usize| label.is_none_or(|x| x == *l);
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for (pred, gold) in pairs {
            tp += pred.intersection(gold).filter(|l| keep(l)).count();
            fp += pred.difference(gold).filter(|l| keep(l)).count();
            fn_ += gold.difference(pred).filter(|l| keep(l)).count();
        }
        (tp, fp, fn_)
    }

    /// Pooled F1; 1 when nothing is predicted or expected anywhere.
    pub fn micro_f1(pairs: &[(Set, Set)]) -> f64 {
        let (tp, fp, fn_) = counts(pairs, None);
        if tp + fp + fn_ == 0 {
            return 1.0;
        }
        f(&ratio(2 * tp, 2 * tp + fp + fn_))
    }

    /// Unweighted mean of per-label F1 over every label; 0/0 counts as 0.
    pub fn macro_f1(pairs: &[(Set, Set)], n_labels: usize) -> f64 {
        let mut total = BigRational::zero();
        for l in 0..n_labels {
            let (tp, fp, fn_) = counts(pairs, Some(l));
            if tp + fp + fn_ > 0 {
                total += ratio(2 * tp, 2 * tp + fp + fn_);
            }
        }
        f(&(total / BigRational::from_integer(BigInt::from(n_labels))))
    }

    /// Exact-match share.
    pub fn accuracy(pairs: &[(Set, Set)]) -> f64 {
        f(&ratio(
            pairs.iter().filter(|(a, b)| a == b).count(),
            pairs.len(),
        ))
    }

    fn choose(n: u64, k: u64) -> BigUint {
        let mut c = BigUint::one();
        for i in 0..k {
            c = c * BigUint::from(n - i) / BigUint::from(i + 1);
        }
        c
    }

    /// min(1, 2 P(X >= k)) for X ~ Bin(n, 1/2), in exact arithmetic.
    pub fn binomial_doubled(k: u64, n: u64) -> f64 {
        let tail: BigUint = (k..=n).map(|i| choose(n, i)).sum();
        let p = BigRational::new(
            BigInt::from(tail) * BigInt::from(2),
            BigInt::from(BigUint::one() << n as usize),
        );
        f(&p).min(1.0)
    }

    /// Yates-corrected statistic of a 2x2 table.
    pub fn yates_statistic(t: [[u64; 2]; 2]) -> f64 {
        let [[a, b], [c, d]] = t.map(|r| r.map(BigInt::from));
        let n = &a + &b + &c + &d;
        let diff = (&a * &d - &b * &c).magnitude().clone();
        let two_diff = BigInt::from(diff) * 2;
        let excess = if two_diff > n {
            two_diff - &n
        } else {
            BigInt::zero()
        };
        let num = &n * &excess * &excess;
        let den = (&a + &b) * (&c + &d) * (&a + &c) * (&b + &d) * 4;
        f(&BigRational::new(num, den))
    }
}

pub mod prompts {
    use std::path::PathBuf;

    use liahr::corpus::Corpus;
    use liahr::prompt::{
        render_resolved_baseline, render_task_prompt, Assessment, DemoSpec, PromptPlan,
        PromptTemplate,
    };

    use super::fixture_corpus;

    pub fn golden_path(name: &str) -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("tests/golden/v1")
            .join(name)
    }

    fn labeled(c: &Corpus, id: &str, names: &[&str]) -> DemoSpec {
        DemoSpec::labeled(id, c.space().set_of(names).unwrap())
    }

    /// Every checked-in prompt, rendered fresh: `(file name, text)`.
    pub fn golden_prompts() -> Vec<(&'static str, String)> {
        let mut out = Vec::new();

        let c = fixture_corpus("semeval");
        let plan = PromptPlan::liahr(
            vec![
                labeled(&c, "meals", &["anger", "disgust", "sadness"]),
                labeled(&c, "meeting", &[]),
            ],
            "sober",
            c.space().set_of(&["joy", "optimism"]).unwrap(),
        )
        .at_position(1);
        out.push((
            "liahr_semeval.txt",
            render_task_prompt(&plan, &c).unwrap().text,
        ));

        let mut plan = PromptPlan::baseline(
            vec!["meals".into(), "meeting".into()],
            "sober",
            c.space().set_of(&["joy"]).unwrap(),
        );
        plan.demos[0].label = c.space().set_of(&["surprise", "optimism"]).unwrap();
        plan.demos[0].assessment = Some(Assessment::Unreasonable);
        plan.demos[1].assessment = Some(Assessment::Reasonable);
        let text = render_resolved_baseline(&plan, &c, &PromptTemplate::default())
            .unwrap()
            .text;
        out.push(("baseline_semeval.txt", text));

        let c = fixture_corpus("goemotions");
        let plan = PromptPlan::icl(vec![labeled(&c, "orleans", &[])], "bang");
        out.push((
            "icl_goemotions.txt",
            render_task_prompt(&plan, &c).unwrap().text,
        ));

        let c = fixture_corpus("mfrc");
        let plan = PromptPlan::icl(vec![labeled(&c, "lepen", &[])], "capitalism");
        out.push(("icl_mfrc.txt", render_task_prompt(&plan, &c).unwrap().text));

        let c = fixture_corpus("queer_reclaim");
        let plan = PromptPlan::icl(vec![labeled(&c, "ew", &["no harm"])], "dyke");
        out.push((
            "binary_queer_reclaim.txt",
            render_task_prompt(&plan, &c).unwrap().text,
        ));
        let plan = PromptPlan::liahr(
            vec![labeled(&c, "ew", &["no harm"])],
            "dyke",
            c.space().set_of(&["harm"]).unwrap(),
        );
        out.push((
            "liahr_queer_reclaim.txt",
            render_task_prompt(&plan, &c).unwrap().text,
        ));

        let c = fixture_corpus("trec");
        let plan = PromptPlan::liahr(
            vec![labeled(&c, "capital", &["location"])],
            "inventor",
            c.space().set_of(&["human"]).unwrap(),
        );
        out.push((
            "liahr_trec.txt",
            render_task_prompt(&plan, &c).unwrap().text,
        ));
        out
    }
}
