//! Rendered prompts against checked-in files. Set `LIAHR_BLESS=1` to
//! rewrite the files after an intended change.

mod common;

use std::collections::BTreeMap;

use common::prompts::{golden_path, golden_prompts};

fn rendered() -> BTreeMap<&'static str, String> {
    golden_prompts().into_iter().collect()
}

#[test]
fn files_match_rendering() {
    let bless = std::env::var_os("LIAHR_BLESS").is_some();
    for (name, text) in golden_prompts() {
        let path = golden_path(name);
        if bless {
            std::fs::write(&path, &text).unwrap();
        }
        let want =
            std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(text, want, "{name} drifted");
    }
}

#[test]
fn multilabel_fragments() {
    let r = rendered();
    let liahr = &r["liahr_semeval.txt"];
    assert!(liahr.contains(r#"{"label": ["anger", "disgust", "sadness"]}"#));
    assert!(liahr.contains(r#"{"label": []}"#));
    // The labeled copy of the query sits after the first demo.
    let copy = liahr
        .find("Input: `But guess what ? I'm sober`\n{\"label\": [\"joy\", \"optimism\"]}")
        .unwrap();
    assert!(
        liahr.find("Skipping meals").unwrap() < copy && copy < liahr.find("Meeting moved").unwrap()
    );
    assert!(liahr.ends_with("\n\nInput: `But guess what ? I'm sober`"));

    assert_eq!(
        r["icl_goemotions.txt"],
        "Classify the following inputs into none, one, or multiple the following emotions per input: joy, optimism, \
         admiration, surprise, fear, sadness and anger.\n\nInput: `Is this in New Orleans?? I really feel like this is \
         New Orleans.`\n{\"label\": []}\n\nInput: `BANG motherfucker!`"
    );
    assert!(r["icl_mfrc.txt"].starts_with(
        "Classify the following inputs into none, one, or multiple the following moral foundations per input: \
         authority, care, equality, loyalty, proportionality and purity."
    ));
}

#[test]
fn baseline_fragments() {
    let text = &rendered()["baseline_semeval.txt"];
    assert!(text.starts_with(
        "Assess the reasonableness of the provided label for each input. Namely, evaluate whether the label makes \
         sense for its corresponding input, under some reasonable interpretation. Reply only with unreasonable and \
         reasonable.\n\nInput: `Skipping meals is the national way of showing disappointment and . wiz`\nLabel: \
         optimism, surprise\nAssessment: unreasonable\n\n"
    ));
    assert!(text.contains("Label: none\nAssessment: reasonable"));
    assert!(text.ends_with("Input: `But guess what ? I'm sober`\nLabel: joy\nAssessment: "));
}

#[test]
fn binary_fragments() {
    let r = rendered();
    assert_eq!(
        r["binary_queer_reclaim.txt"],
        "Consider whether the following inputs present harm or not to the mentioned LGBTQ group, and answer with: no \
         harm and harm.\n\nInput: `fags ew`\nAssessment: no harm\n\nInput: `went from edm junkie to college dyke way \
         too quick`\nAssessment:"
    );
    assert!(
        r["liahr_queer_reclaim.txt"].contains("college dyke way too quick`\nAssessment: harm\n\n")
    );
}

#[test]
fn single_label_renders_one_name() {
    let text = &rendered()["liahr_trec.txt"];
    assert!(
        text.starts_with("Classify the following inputs into one of the following question types:")
    );
    assert!(text.contains("{\"label\": [\"human\"]}"));
}
