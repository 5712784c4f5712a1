//! HotpotQA-style answer normalization and token-level F1.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercases, strips ASCII punctuation, drops the articles a/an/the and
/// collapses whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

impl F1Score {
    const ZERO: Self = Self {
        f1: 0.0,
        precision: 0.0,
        recall: 0.0,
    };
}

/// Bag-of-tokens F1 between normalized prediction and reference.
pub fn token_f1(prediction: &str, reference: &str) -> F1Score {
    let pred = normalize_answer(prediction);
    let refr = normalize_answer(reference);
    let pred: Vec<&str> = pred.split_whitespace().collect();
    let refr: Vec<&str> = refr.split_whitespace().collect();
    if pred.is_empty() || refr.is_empty() {
        return F1Score::ZERO;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for w in &refr {
        *counts.entry(w).or_default() += 1;
    }
    let mut overlap = 0usize;
    for w in &pred {
        if let Some(c) = counts.get_mut(w) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return F1Score::ZERO;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / refr.len() as f64;
    F1Score {
        f1: 2.0 * precision * recall / (precision + recall),
        precision,
        recall,
    }
}

/// Score against the reference with the highest F1 (first one on ties).
pub fn best_f1<S: AsRef<str>>(prediction: &str, references: &[S]) -> Result<F1Score> {
    let mut best: Option<F1Score> = None;
    for r in references {
        let s = token_f1(prediction, r.as_ref());
        if best.is_none_or(|b| s.f1 > b.f1) {
            best = Some(s);
        }
    }
    best.ok_or(Error::EmptyReferences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("The  Eiffel Tower."), "eiffel tower");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("An apple a day"), "apple day");
        assert_eq!(normalize_answer("theatre, THE end"), "theatre end");
    }

    #[test]
    fn f1_examples() {
        let s = token_f1("paris", "paris");
        assert_eq!((s.f1, s.precision, s.recall), (1.0, 1.0, 1.0));
        assert_eq!(token_f1("london", "paris"), F1Score::ZERO);
        let s = token_f1("new york city", "york city");
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.recall, 1.0);
        assert!((s.f1 - 0.8).abs() < 1e-15);
        assert_eq!(token_f1("the", "paris"), F1Score::ZERO);
    }

    #[test]
    fn multiplicity_counts() {
        // bag overlap: one x and one y are shared
        let s = token_f1("x x y", "x y y");
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn best_reference() {
        let s = best_f1("paris", &["paris", "london"]).unwrap();
        assert_eq!((s.f1, s.precision), (1.0, 1.0));
        assert_eq!(best_f1("york", &["new york"]).unwrap(), token_f1("york", "new york"));
        assert!(matches!(best_f1::<&str>("x", &[]), Err(Error::EmptyReferences)));
    }

    fn words() -> impl Strategy<Value = String> {
        proptest::collection::vec(
            prop_oneof![Just("the"), Just("a"), Just("Paris"), Just("city,"), Just("new"), Just("York!"), Just("an")],
            0..8,
        )
        .prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn f1_symmetric(a in words(), b in words()) {
            let ab = token_f1(&a, &b);
            let ba = token_f1(&b, &a);
            prop_assert!((ab.f1 - ba.f1).abs() < 1e-15);
            prop_assert_eq!(ab.precision, ba.recall);
        }

        #[test]
        fn normalization_idempotent(a in "[ A-Za-z.,!'-]{0,40}") {
            let once = normalize_answer(&a);
            prop_assert_eq!(normalize_answer(&once), once.clone());
        }

        #[test]
        fn perfect_f1_iff_equal_bags(a in words(), b in words()) {
            let mut x: Vec<String> = normalize_answer(&a).split_whitespace().map(String::from).collect();
            let mut y: Vec<String> = normalize_answer(&b).split_whitespace().map(String::from).collect();
            x.sort();
            y.sort();
            let equal = !x.is_empty() && x == y;
            prop_assert_eq!(token_f1(&a, &b).f1 == 1.0, equal);
        }
    }
}
