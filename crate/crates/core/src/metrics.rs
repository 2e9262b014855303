//! Relation-extraction metrics: TACRED-style micro F1 and SemEval-style directed macro F1.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::num::Real;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassScores<F> {
    pub precision: F,
    pub recall: F,
    pub f1: F,
    pub predicted: usize,
    pub gold: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport<F> {
    pub precision: F,
    pub recall: F,
    pub f1: F,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class: Option<BTreeMap<String, ClassScores<F>>>,
    pub predicted_positive: usize,
    pub gold_positive: usize,
    pub correct_positive: usize,
}

/// Precision, recall and F1 from counts; any zero denominator yields zero.
pub fn prf_from_counts<F: Real>(correct: usize, predicted: usize, gold: usize) -> (F, F, F) {
    let ratio = |n: usize, d: usize| {
        if d == 0 {
            F::zero()
        } else {
            F::from_count(n) / F::from_count(d)
        }
    };
    let p = ratio(correct, predicted);
    let r = ratio(correct, gold);
    let f1 = if p + r > F::zero() {
        (F::one() + F::one()) * p * r / (p + r)
    } else {
        F::zero()
    };
    (p, r, f1)
}

fn check_lengths<A, B>(preds: &[A], golds: &[B]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch {
            predictions: preds.len(),
            golds: golds.len(),
        });
    }
    Ok(())
}

/// Micro P/R/F1 over positive labels; NA predictions and NA golds only enter as misses.
pub fn micro_f1<F: Real, S: AsRef<str>, T: AsRef<str>>(
    preds: &[S],
    golds: &[T],
    na_label: &str,
) -> Result<EvalReport<F>> {
    check_lengths(preds, golds)?;
    let (mut predicted, mut gold, mut correct) = (0, 0, 0);
    for (p, g) in preds.iter().zip(golds) {
        let (p, g) = (p.as_ref(), g.as_ref());
        if p != na_label {
            predicted += 1;
        }
        if g != na_label {
            gold += 1;
        }
        if p != na_label && p == g {
            correct += 1;
        }
    }
    let (precision, recall, f1) = prf_from_counts(correct, predicted, gold);
    Ok(EvalReport {
        precision,
        recall,
        f1,
        per_class: None,
        predicted_positive: predicted,
        gold_positive: gold,
        correct_positive: correct,
    })
}

/// Base class of a directed label such as `Cause-Effect(e1,e2)`; `None` for the other label.
pub fn directed_base<'a>(label: &'a str, other_label: &str) -> Result<Option<&'a str>> {
    if label == other_label {
        return Ok(None);
    }
    let base = label
        .strip_suffix("(e1,e2)")
        .or_else(|| label.strip_suffix("(e2,e1)"))
        .filter(|b| !b.is_empty() && !b.contains('('))
        .ok_or_else(|| Error::InvalidLabel(label.to_string()))?;
    Ok(Some(base))
}

/// Macro-averaged scores over base classes, with the direction required for a hit.
///
/// Classes are the base classes present in either sequence, `other_label` excluded. The
/// reported F1 is the mean of per-class F1 values, as the official SemEval scorer does.
pub fn macro_f1_directed<F: Real, S: AsRef<str>, T: AsRef<str>>(
    preds: &[S],
    golds: &[T],
    other_label: &str,
) -> Result<EvalReport<F>> {
    check_lengths(preds, golds)?;
    let mut counts: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for (p, g) in preds.iter().zip(golds) {
        let (p, g) = (p.as_ref(), g.as_ref());
        let pb = directed_base(p, other_label)?;
        let gb = directed_base(g, other_label)?;
        if let Some(b) = pb {
            counts.entry(b).or_default().0 += 1;
        }
        if let Some(b) = gb {
            counts.entry(b).or_default().1 += 1;
            if p == g {
                counts.entry(b).or_default().2 += 1;
            }
        }
    }
    let classes: BTreeSet<&str> = counts.keys().copied().collect();
    let mut per_class = BTreeMap::new();
    let (mut sp, mut sr, mut sf) = (F::zero(), F::zero(), F::zero());
    let (mut tp, mut tg, mut tc) = (0, 0, 0);
    for class in &classes {
        let (predicted, gold, correct) = counts[class];
        let (precision, recall, f1) = prf_from_counts::<F>(correct, predicted, gold);
        sp = sp + precision;
        sr = sr + recall;
        sf = sf + f1;
        tp += predicted;
        tg += gold;
        tc += correct;
        per_class.insert(
            class.to_string(),
            ClassScores {
                precision,
                recall,
                f1,
                predicted,
                gold,
                correct,
            },
        );
    }
    let n = F::from_count(classes.len().max(1));
    Ok(EvalReport {
        precision: sp / n,
        recall: sr / n,
        f1: sf / n,
        per_class: Some(per_class),
        predicted_positive: tp,
        gold_positive: tg,
        correct_positive: tc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_and_all_na() {
        let golds = ["a", "NA", "b"];
        let r: EvalReport<f64> = micro_f1(&golds, &golds, "NA").unwrap();
        assert_eq!(r.f1, 1.0);
        let r: EvalReport<f64> = micro_f1(&["NA", "NA", "NA"], &golds, "NA").unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        assert!(micro_f1::<f64, _, _>(&["a"], &["a", "b"], "NA").is_err());
    }

    #[test]
    fn directed_labels() {
        assert_eq!(
            directed_base("Cause-Effect(e1,e2)", "Other").unwrap(),
            Some("Cause-Effect")
        );
        assert_eq!(directed_base("Other", "Other").unwrap(), None);
        assert!(directed_base("Cause-Effect", "Other").is_err());
        assert!(directed_base("(e1,e2)", "Other").is_err());
    }

    #[test]
    fn wrong_direction_scores_zero() {
        let golds = ["Cause-Effect(e1,e2)", "Message-Topic(e2,e1)"];
        let preds = ["Cause-Effect(e2,e1)", "Message-Topic(e1,e2)"];
        let r: EvalReport<f64> = macro_f1_directed(&preds, &golds, "Other").unwrap();
        assert_eq!(r.f1, 0.0);
        let r: EvalReport<f64> = macro_f1_directed(&golds, &golds, "Other").unwrap();
        assert_eq!(r.f1, 1.0);
    }

    fn label() -> impl Strategy<Value = String> {
        prop_oneof![
            Just("NA".to_string()),
            Just("a".to_string()),
            Just("b".to_string()),
            Just("c".to_string())
        ]
    }

    fn directed() -> impl Strategy<Value = String> {
        prop_oneof![
            Just("Other".to_string()),
            Just("X(e1,e2)".to_string()),
            Just("X(e2,e1)".to_string()),
        ]
    }

    proptest! {
        #[test]
        fn micro_is_permutation_invariant(pairs in prop::collection::vec((label(), label()), 0..30), seed in any::<u64>()) {
            let (p, g): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let base: EvalReport<f64> = micro_f1(&p, &g, "NA").unwrap();
            let mut shuffled = pairs.clone();
            // deterministic rotation + reversal as a permutation
            let k = if shuffled.is_empty() { 0 } else { (seed as usize) % shuffled.len() };
            shuffled.rotate_left(k);
            shuffled.reverse();
            let (p2, g2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            let other: EvalReport<f64> = micro_f1(&p2, &g2, "NA").unwrap();
            prop_assert_eq!(base, other);
        }

        #[test]
        fn na_na_pair_changes_nothing(pairs in prop::collection::vec((label(), label()), 0..30)) {
            let (mut p, mut g): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let before: EvalReport<f64> = micro_f1(&p, &g, "NA").unwrap();
            p.push("NA".into());
            g.push("NA".into());
            prop_assert_eq!(before, micro_f1(&p, &g, "NA").unwrap());
        }

        #[test]
        fn f1_is_harmonic_mean_and_counts_bounded(pairs in prop::collection::vec((label(), label()), 0..30)) {
            let (p, g): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let r: EvalReport<f64> = micro_f1(&p, &g, "NA").unwrap();
            prop_assert!(r.correct_positive <= r.predicted_positive.min(r.gold_positive));
            let expected = if r.precision + r.recall > 0.0 { 2.0 * r.precision * r.recall / (r.precision + r.recall) } else { 0.0 };
            prop_assert!((r.f1 - expected).abs() < 1e-15);
        }

        #[test]
        fn single_class_macro_equals_micro(pairs in prop::collection::vec((directed(), directed()), 1..30)) {
            let (p, g): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let macro_r: EvalReport<f64> = macro_f1_directed(&p, &g, "Other").unwrap();
            let micro_r: EvalReport<f64> = micro_f1(&p, &g, "Other").unwrap();
            prop_assert!((macro_r.f1 - micro_r.f1).abs() < 1e-12);
            prop_assert!((macro_r.precision - micro_r.precision).abs() < 1e-12);
            prop_assert!((macro_r.recall - micro_r.recall).abs() < 1e-12);
        }
    }
}
