#[path = "support/oracles.rs"]
mod oracles;

use cxr_core::clinical::clinical_eval;
use cxr_core::nlg_metrics::{bleu, cider, meteor, meteor_pair, rouge_l, rouge_l_pair};
use cxr_core::{evaluate_nlg, EvalPair, LabelState, LabelVector, Labeler, TokenSeq};
use proptest::prelude::*;

const TOL: f64 = 1e-6;

fn to_eval(pairs: &[oracles::Pair]) -> Vec<EvalPair> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, (c, r))| {
            EvalPair::new(
                format!("p{i}"),
                TokenSeq::new(c.iter().copied()),
                TokenSeq::new(r.iter().copied()),
            )
        })
        .collect()
}

fn seq(s: &str) -> TokenSeq {
    TokenSeq::new(s.split_whitespace())
}

fn close(label: &str, got: f64, want: f64) {
    assert!(
        (got - want).abs() < TOL,
        "{label}: got {got}, oracle {want}"
    );
}

#[test]
fn fixture_matches_oracles() {
    let pairs = oracles::fixture_pairs();
    let eval = to_eval(&pairs);
    for n in 1..=4 {
        close(
            &format!("BLEU-{n}"),
            bleu(&eval, n).unwrap(),
            oracles::bleu(&pairs, n),
        );
    }
    close("ROUGE-L", rouge_l(&eval).unwrap(), oracles::rouge_l(&pairs));
    close("METEOR", meteor(&eval).unwrap(), oracles::meteor(&pairs));
    close("CIDEr-D", cider(&eval).unwrap(), oracles::cider(&pairs));
}

// Values produced by the oracles on the fixture, frozen so that a change in
// both implementations at once is still noticed.
#[test]
fn fixture_frozen_values() {
    let scores = evaluate_nlg(&to_eval(&oracles::fixture_pairs())).unwrap();
    let frozen = [
        ("BLEU-1", scores.bleu[0], FROZEN[0]),
        ("BLEU-2", scores.bleu[1], FROZEN[1]),
        ("BLEU-3", scores.bleu[2], FROZEN[2]),
        ("BLEU-4", scores.bleu[3], FROZEN[3]),
        ("ROUGE-L", scores.rouge_l, FROZEN[4]),
        ("METEOR", scores.meteor, FROZEN[5]),
        ("CIDEr-D", scores.cider.unwrap(), FROZEN[6]),
    ];
    for (label, got, want) in frozen {
        close(label, got, want);
    }
}

const FROZEN: [f64; 7] = [
    0.6302327977,
    0.4864119404,
    0.3820263831,
    0.2316181325,
    0.6116570689,
    0.5800241664,
    3.3086505434,
];

#[test]
fn hand_values() {
    let one = [EvalPair::new("a", seq("the cat"), seq("the cat sat"))];
    close(
        "BLEU-1 brevity",
        bleu(&one, 1).unwrap(),
        (1.0f64 - 1.5).exp(),
    );
    close(
        "ROUGE-L P=R",
        rouge_l_pair(&seq("a b c"), &seq("a c d")),
        2.0 / 3.0,
    );
    close(
        "METEOR identical",
        meteor_pair(&seq("a b c"), &seq("a b c")),
        1.0 - 0.5 / 27.0,
    );
    close(
        "METEOR swapped",
        meteor_pair(&seq("cat the"), &seq("the cat")),
        0.5,
    );
    close(
        "METEOR stem stage",
        meteor_pair(&seq("effusions"), &seq("effusion")),
        0.5,
    );
}

#[test]
fn cider_unique_identical_pair_scores_ten() {
    let pairs = [
        EvalPair::new(
            "a",
            seq("alpha beta gamma delta"),
            seq("alpha beta gamma delta"),
        ),
        EvalPair::new("b", seq("one two three four"), seq("one two three four")),
        EvalPair::new(
            "c",
            seq("red green blue white"),
            seq("red green blue white"),
        ),
    ];
    close("CIDEr-D", cider(&pairs).unwrap(), 10.0);
}

#[test]
fn identity_corpus() {
    let pairs = to_eval(
        &oracles::FIXTURE
            .iter()
            .map(|(_, r)| {
                (
                    r.split_whitespace().collect(),
                    r.split_whitespace().collect(),
                )
            })
            .collect::<Vec<oracles::Pair>>(),
    );
    let s = evaluate_nlg(&pairs).unwrap();
    for (n, b) in s.bleu.iter().enumerate() {
        close(&format!("BLEU-{}", n + 1), *b, 1.0);
    }
    close("ROUGE-L", s.rouge_l, 1.0);
    let expected = pairs
        .iter()
        .map(|p| 1.0 - 0.5 * (1.0 / p.reference.len() as f64).powi(3))
        .sum::<f64>()
        / pairs.len() as f64;
    close("METEOR", s.meteor, expected);

    let labeler = Labeler::default();
    let refs: Vec<LabelVector> = oracles::FIXTURE
        .iter()
        .enumerate()
        .map(|(i, (_, r))| labeler.label_text(&format!("p{i}"), r))
        .collect();
    let clinical = clinical_eval(&refs, &refs).unwrap();
    close("P", clinical.precision, 1.0);
    close("R", clinical.recall, 1.0);
    close("macro-F1", clinical.macro_f1, 1.0);
}

#[test]
fn zero_overlap_corpus() {
    let pairs = [
        EvalPair::new("a", seq("alpha beta"), seq("gamma delta epsilon")),
        EvalPair::new("b", seq("one two three"), seq("four five")),
    ];
    let s = evaluate_nlg(&pairs).unwrap();
    assert!(s.bleu.iter().all(|b| *b == 0.0));
    assert_eq!(s.rouge_l, 0.0);
    assert_eq!(s.meteor, 0.0);

    let with = |id: &str, c: usize| {
        let mut v = LabelVector::absent(id);
        v.states[c] = LabelState::Positive;
        v
    };
    let labeler = Labeler::default();
    let edema = labeler.categories().index_of("Edema").unwrap();
    let pneumonia = labeler.categories().index_of("Pneumonia").unwrap();
    let clinical = clinical_eval(&[with("a", edema)], &[with("a", pneumonia)]).unwrap();
    assert_eq!(
        (clinical.precision, clinical.recall, clinical.macro_f1),
        (0.0, 0.0, 0.0)
    );
}

#[test]
fn clinical_hand_value() {
    let labeler = Labeler::default();
    let idx = |n: &str| labeler.categories().index_of(n).unwrap();
    let mut cand = LabelVector::absent("r");
    cand.states[idx("Edema")] = LabelState::Positive;
    cand.states[idx("Pneumonia")] = LabelState::Positive;
    let mut refr = LabelVector::absent("r");
    refr.states[idx("Edema")] = LabelState::Positive;
    refr.states[idx("Pneumothorax")] = LabelState::Positive;
    let s = clinical_eval(&[cand], &[refr]).unwrap();
    close("P", s.precision, 0.5);
    close("R", s.recall, 0.5);
    close("macro-F1", s.macro_f1, 1.0 / 3.0);
    assert_eq!(s.per_class.iter().flatten().count(), 3);
}

const WORDS: [&str; 6] = ["lung", "lungs", "clear", "effusion", "effusions", "no"];

fn arb_seq() -> impl Strategy<Value = Vec<&'static str>> {
    prop::collection::vec(prop::sample::select(&WORDS[..]), 1..9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_corpora_match_oracles(raw in prop::collection::vec((arb_seq(), arb_seq()), 2..6)) {
        let pairs: Vec<oracles::Pair> = raw;
        let eval = to_eval(&pairs);
        for n in 1..=4 {
            prop_assert!((bleu(&eval, n).unwrap() - oracles::bleu(&pairs, n)).abs() < TOL);
        }
        prop_assert!((rouge_l(&eval).unwrap() - oracles::rouge_l(&pairs)).abs() < TOL);
        prop_assert!((meteor(&eval).unwrap() - oracles::meteor(&pairs)).abs() < TOL);
        prop_assert!((cider(&eval).unwrap() - oracles::cider(&pairs)).abs() < TOL);
    }

    #[test]
    fn pair_scores_in_unit_range(c in arb_seq(), r in arb_seq()) {
        let (c, r) = (TokenSeq::new(c), TokenSeq::new(r));
        let lcs = rouge_l_pair(&c, &r);
        let m = meteor_pair(&c, &r);
        prop_assert!((0.0..=1.0).contains(&lcs));
        prop_assert!((0.0..=1.0).contains(&m));
    }
}
