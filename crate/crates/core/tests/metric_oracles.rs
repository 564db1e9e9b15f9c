use std::collections::BTreeSet;

use hts_core::metrics::{
    auc_roc, bleu, classification_score, levenshtein, levenshtein_norm, rouge, tanimoto, Fingerprint, Fingerprinter,
    MetricId, RougeVariant, Tokenizer,
};
use hts_core::smiles;
use proptest::prelude::*;

/// Full-matrix edit distance.
fn dp_oracle(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut m = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in m.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in m[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = m[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            m[i][j] = sub.min(m[i - 1][j] + 1).min(m[i][j - 1] + 1);
        }
    }
    m[a.len()][b.len()]
}

/// Pairwise AUC: fraction of positive/negative pairs ordered correctly,
/// ties counting one half.
fn pairwise_auc(preds: &[(f64, u8)]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for p in preds.iter().filter(|p| p.1 == 1) {
        for n in preds.iter().filter(|p| p.1 == 0) {
            den += 1.0;
            num += if p.0 > n.0 {
                1.0
            } else if p.0 == n.0 {
                0.5
            } else {
                0.0
            };
        }
    }
    num / den
}

fn labelled_set() -> impl Strategy<Value = Vec<(f64, u8)>> {
    // Scores on a coarse grid so ties are common.
    prop::collection::vec(((0u8..=10).prop_map(|s| f64::from(s) / 10.0), 0u8..=1), 2..40)
        .prop_filter("needs both classes", |v| {
            v.iter().any(|p| p.1 == 1) && v.iter().any(|p| p.1 == 0)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn levenshtein_matches_dp(a in "[a-dC()=1é]{0,12}", b in "[a-dC()=1é]{0,12}") {
        prop_assert_eq!(levenshtein(&a, &b), dp_oracle(&a, &b));
    }

    #[test]
    fn levenshtein_axioms(a in "[abc]{0,8}", b in "[abc]{0,8}", c in "[abc]{0,8}") {
        prop_assert_eq!(levenshtein(&a, &a), 0);
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        let n = levenshtein_norm(&a, &b);
        prop_assert!((0.0..=1.0).contains(&n));
    }

    #[test]
    fn tanimoto_matches_sets(
        a in prop::collection::btree_set(0usize..64, 0..20),
        b in prop::collection::btree_set(0usize..64, 0..20),
    ) {
        let fa = Fingerprint::from_bits(64, "t", a.iter().copied());
        let fb = Fingerprint::from_bits(64, "t", b.iter().copied());
        let inter = a.intersection(&b).count();
        let union = a.union(&b).count();
        let want = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        prop_assert_eq!(tanimoto(&fa, &fb).unwrap(), want);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auc_flip_sums_to_one(preds in labelled_set()) {
        let flipped: Vec<(f64, u8)> = preds.iter().map(|&(s, l)| (s, 1 - l)).collect();
        let total = auc_roc(&preds).unwrap() + auc_roc(&flipped).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_matches_pairwise(preds in labelled_set()) {
        prop_assert!((auc_roc(&preds).unwrap() - pairwise_auc(&preds)).abs() < 1e-12);
    }
}

#[test]
fn levenshtein_cases() {
    assert_eq!(levenshtein("kitten", "sitting"), 3);
    assert_eq!(levenshtein("", "abc"), 3);
    assert_eq!(levenshtein("C1CC1", "C1CC1"), 0);
}

#[test]
fn bleu_cases() {
    let hand = bleu("C C O", &["C C N"], 2, Tokenizer::Whitespace, false);
    assert!((hand - (1.0f64 / 3.0).sqrt()).abs() < 1e-9, "{hand}");
    // p1 = 2/3 and p2 = 1/2 from clipped counts, no brevity penalty.
    let p1: f64 = 2.0 / 3.0;
    let p2: f64 = 1.0 / 2.0;
    assert!((hand - (p1 * p2).sqrt()).abs() < 1e-12);
    assert_eq!(bleu("a b c d", &["a b c d"], 2, Tokenizer::Whitespace, false), 1.0);
    assert_eq!(bleu("", &["a b"], 2, Tokenizer::Whitespace, false), 0.0);
}

#[test]
fn tanimoto_cases() {
    let f = |bits: &[usize]| Fingerprint::from_bits(8, "t", bits.iter().copied());
    assert_eq!(tanimoto(&f(&[1, 2, 3]), &f(&[2, 3, 4])).unwrap(), 0.5);
    assert_eq!(tanimoto(&f(&[1, 2]), &f(&[1, 2])).unwrap(), 1.0);
    assert_eq!(tanimoto(&f(&[1]), &f(&[2])).unwrap(), 0.0);
    assert!(tanimoto(&f(&[1]), &Fingerprint::from_bits(16, "t", [1])).is_err());
}

#[test]
fn auc_cases() {
    let v = auc_roc(&[(0.9, 1), (0.8, 0), (0.8, 1), (0.1, 0)]).unwrap();
    assert!((v - 0.875).abs() < 1e-12);
    assert_eq!(auc_roc(&[(0.9, 1), (0.1, 0)]).unwrap(), 1.0);
    assert_eq!(auc_roc(&[(0.1, 1), (0.9, 0)]).unwrap(), 0.0);
    assert!(auc_roc(&[(0.1, 1), (0.9, 1)]).is_err());
}

#[test]
fn rouge_cases() {
    assert!((rouge("a b c", "a c", RougeVariant::L) - 0.8).abs() < 1e-12);
    for v in [RougeVariant::One, RougeVariant::Two, RougeVariant::L] {
        assert_eq!(rouge("x y z", "x y z", v), 1.0);
        assert_eq!(rouge("x y z", "p q r", v), 0.0);
    }
}

#[test]
fn classification_answers() {
    assert_eq!(classification_score("Yes").unwrap(), (1, 1.0));
    assert_eq!(classification_score("No (0.2)").unwrap(), (0, 0.2));
    assert!(classification_score("maybe").is_err());
}

fn bigram_set(s: &str) -> BTreeSet<(String, String)> {
    let toks: Vec<String> = smiles::tokenize(s).unwrap().into_iter().map(|t| t.text).collect();
    toks.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect()
}

#[test]
fn fingerprint_similarity_matches_bigram_sets() {
    for (a, b) in [
        ("CCO", "CCN"),
        ("C1CC1", "CC1CC1"),
        ("c1ccccc1O", "c1ccccc1N"),
        ("CC(=O)O", "CC(=O)N"),
    ] {
        let (sa, sb) = (bigram_set(a), bigram_set(b));
        let want = sa.intersection(&sb).count() as f64 / sa.union(&sb).count() as f64;
        let got = MetricId::Tanimoto(Fingerprinter::RdkLike).score(a, b);
        assert!((got - want).abs() < 1e-12, "{a} vs {b}: {got} != {want}");
    }
    assert_eq!(MetricId::Tanimoto(Fingerprinter::RdkLike).score("C1CC1", "C1CC1"), 1.0);
}

#[test]
fn metric_names_round_trip() {
    for name in [
        "exact",
        "bleu2:char",
        "bleu4:whitespace",
        "rouge1",
        "rouge2",
        "rougeL",
        "levenshtein_norm",
        "validity",
        "tanimoto:maccs_like",
        "tanimoto:rdk_like",
        "tanimoto:morgan_like",
        "accuracy",
        "auc_roc",
    ] {
        let m: MetricId = name.parse().unwrap();
        assert_eq!(m.to_string(), name);
    }
}
