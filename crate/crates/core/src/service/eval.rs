use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercases, strips ASCII and Unicode punctuation, drops the articles
/// `a`, `an`, `the`, and collapses whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !c.is_ascii_punctuation() && !is_unicode_punct(*c)).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_unicode_punct(c: char) -> bool {
    matches!(c, '\u{2018}'..='\u{201f}' | '\u{2010}'..='\u{2015}' | '\u{2026}' | '\u{00a1}' | '\u{00bf}' | '\u{00ab}' | '\u{00bb}')
}

pub fn exact_match(prediction: &str, gold: &str) -> bool {
    normalize_answer(prediction) == normalize_answer(gold)
}

/// Token-overlap F1 of normalized strings; 1 when both are empty.
pub fn f1_score(prediction: &str, gold: &str) -> f64 {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return if pt == gt { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub em: f64,
    pub f1: f64,
}

/// Best EM and F1 of one prediction over its gold set.
pub fn score_question(prediction: &str, golds: &[String]) -> Result<QuestionScore> {
    if golds.is_empty() {
        return Err(Error::EmptyGold(0));
    }
    let em = golds.iter().any(|g| exact_match(prediction, g));
    let f1 = golds.iter().map(|g| f1_score(prediction, g)).fold(0.0, f64::max);
    Ok(QuestionScore {
        em: if em { 1.0 } else { 0.0 },
        f1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmF1 {
    pub em: f64,
    pub f1: f64,
    pub n_questions: usize,
}

/// Mean EM and F1; `predictions[k]` is scored against `golds[k]`.
pub fn eval_em_f1(predictions: &[String], golds: &[Vec<String>]) -> Result<EmF1> {
    if predictions.len() != golds.len() {
        return Err(Error::Shape(format!("{} predictions for {} questions", predictions.len(), golds.len())));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyQaSet);
    }
    let mut em = 0.0;
    let mut f1 = 0.0;
    for (k, (p, g)) in predictions.iter().zip(golds).enumerate() {
        let s = score_question(p, g).map_err(|_| Error::EmptyGold(k))?;
        em += s.em;
        f1 += s.f1;
    }
    let n = predictions.len() as f64;
    Ok(EmF1 {
        em: em / n,
        f1: f1 / n,
        n_questions: predictions.len(),
    })
}
