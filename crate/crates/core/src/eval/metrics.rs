//! Task metrics. Every function is pure and permutation-equivariant over
//! jointly permuted `(prediction, gold)` pairs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricName {
    #[serde(rename = "pearson")]
    Pearson,
    #[serde(rename = "jaccard")]
    Jaccard,
    #[serde(rename = "f1_macro")]
    F1Macro,
    #[serde(rename = "f1_micro")]
    F1Micro,
    #[serde(rename = "f1_weighted")]
    F1Weighted,
    #[serde(rename = "accuracy")]
    Accuracy,
    #[serde(rename = "rouge1")]
    Rouge1,
    #[serde(rename = "rouge2")]
    Rouge2,
    #[serde(rename = "rougeL")]
    RougeL,
    #[serde(rename = "bleu")]
    Bleu,
    #[serde(rename = "em")]
    Em,
    #[serde(rename = "qa_f1")]
    QaF1,
    #[serde(rename = "alue_avg")]
    AlueAvg,
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("metric name serializes");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: MetricName,
    pub value: f64,
    pub support: usize,
    /// Set when the value is a convention rather than a measurement
    /// (e.g. Pearson with a constant input).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl MetricValue {
    pub fn new(name: MetricName, value: f64, support: usize) -> Self {
        MetricValue {
            name,
            value,
            support,
            degenerate: false,
        }
    }

    /// Value on the 0-100 scale with one decimal.
    pub fn percent(&self) -> String {
        render_one_decimal(self.value * 100.0)
    }
}

/// Rounds half away from zero at one decimal, after discarding float noise
/// below 1e-9.
pub fn render_one_decimal(v: f64) -> String {
    let cleaned = (v * 1e9).round() / 1e9;
    let r = (cleaned * 10.0).round() / 10.0;
    format!("{r:.1}")
}

fn check_lengths(a: usize, b: usize, min: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidInput(format!(
            "{a} predictions but {b} golds"
        )));
    }
    if a < min {
        return Err(Error::InvalidInput(format!("need at least {min} samples, got {a}")));
    }
    Ok(())
}

/// Sample Pearson correlation. A constant input gives 0 with `degenerate` set.
pub fn pearson(preds: &[f64], golds: &[f64]) -> Result<MetricValue> {
    check_lengths(preds.len(), golds.len(), 2)?;
    let n = preds.len() as f64;
    let mx = preds.iter().sum::<f64>() / n;
    let my = golds.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in preds.iter().zip(golds) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(MetricValue {
            degenerate: true,
            ..MetricValue::new(MetricName::Pearson, 0.0, preds.len())
        });
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok(MetricValue::new(MetricName::Pearson, r, preds.len()))
}

/// Mean per-sample `|P ∩ G| / |P ∪ G|`; a sample with both sets empty scores 1.
pub fn jaccard_multilabel<T: Ord>(preds: &[BTreeSet<T>], golds: &[BTreeSet<T>]) -> Result<MetricValue> {
    check_lengths(preds.len(), golds.len(), 0)?;
    if preds.is_empty() {
        return Ok(MetricValue::new(MetricName::Jaccard, 0.0, 0));
    }
    let total: f64 = preds
        .iter()
        .zip(golds)
        .map(|(p, g)| {
            let inter = p.intersection(g).count();
            let union = p.len() + g.len() - inter;
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        })
        .sum();
    Ok(MetricValue::new(MetricName::Jaccard, total / preds.len() as f64, preds.len()))
}

pub fn accuracy<T: PartialEq>(preds: &[T], golds: &[T]) -> Result<MetricValue> {
    check_lengths(preds.len(), golds.len(), 1)?;
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(MetricValue::new(
        MetricName::Accuracy,
        hits as f64 / preds.len() as f64,
        preds.len(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Average {
    #[default]
    Macro,
    Micro,
    Weighted,
}

/// Per-class F1 over the classes present in `golds`. Macro averages them
/// unweighted, weighted by gold support, micro pools the counts.
pub fn f1_score<T: Ord + Clone>(preds: &[T], golds: &[T], average: F1Average) -> Result<MetricValue> {
    check_lengths(preds.len(), golds.len(), 1)?;
    // class -> (tp, fp, fn, support)
    let mut stats: BTreeMap<&T, (usize, usize, usize, usize)> = BTreeMap::new();
    for g in golds {
        stats.entry(g).or_default().3 += 1;
    }
    for (p, g) in preds.iter().zip(golds) {
        if p == g {
            stats.get_mut(g).expect("gold class").0 += 1;
        } else {
            if let Some(s) = stats.get_mut(p) {
                s.1 += 1;
            }
            stats.get_mut(g).expect("gold class").2 += 1;
        }
    }
    let f1 = |tp: usize, fp: usize, fn_: usize| {
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    };
    let (name, value) = match average {
        F1Average::Macro => (
            MetricName::F1Macro,
            stats.values().map(|&(tp, fp, fn_, _)| f1(tp, fp, fn_)).sum::<f64>() / stats.len() as f64,
        ),
        F1Average::Weighted => (
            MetricName::F1Weighted,
            stats
                .values()
                .map(|&(tp, fp, fn_, s)| f1(tp, fp, fn_) * s as f64)
                .sum::<f64>()
                / golds.len() as f64,
        ),
        F1Average::Micro => {
            let (tp, fp, fn_) = stats
                .values()
                .fold((0, 0, 0), |a, &(tp, fp, fn_, _)| (a.0 + tp, a.1 + fp, a.2 + fn_));
            (MetricName::F1Micro, f1(tp, fp, fn_))
        }
    };
    Ok(MetricValue::new(name, value, preds.len()))
}

pub fn f1_macro<T: Ord + Clone>(preds: &[T], golds: &[T]) -> Result<MetricValue> {
    f1_score(preds, golds, F1Average::Macro)
}

#[inline]
fn is_arabic_diacritic(c: char) -> bool {
    matches!(c as u32, 0x064B..=0x065F | 0x0670 | 0x06D6..=0x06ED)
}

/// Answer normalization for extractive QA: lowercase, drop Arabic diacritics
/// and tatweel, unify alef variants and ta marbuta, replace punctuation with
/// spaces, then split on whitespace.
pub fn normalize_answer(text: &str) -> Vec<String> {
    let mapped: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|&c| !is_arabic_diacritic(c) && c != '\u{0640}')
        .map(|c| match c {
            '\u{0622}' | '\u{0623}' | '\u{0625}' | '\u{0671}' => '\u{0627}',
            '\u{0629}' => '\u{0647}',
            c if crate::filter::is_punct(c) => ' ',
            c => c,
        })
        .collect();
    mapped.split_whitespace().map(str::to_string).collect()
}

fn token_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred == gold { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for g in gold {
        *counts.entry(g).or_insert(0) += 1;
    }
    let mut common = 0usize;
    for p in pred {
        if let Some(c) = counts.get_mut(p.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// `(exact match, token F1)` of one answer against its gold answers, each the
/// best over the golds.
pub fn qa_em_f1(pred: &str, golds: &[impl AsRef<str>]) -> Result<(f64, f64)> {
    if golds.is_empty() {
        return Err(Error::InvalidInput("no gold answers".into()));
    }
    let p = normalize_answer(pred);
    let mut em: f64 = 0.0;
    let mut f1: f64 = 0.0;
    for g in golds {
        let g = normalize_answer(g.as_ref());
        if p == g {
            em = 1.0;
        }
        f1 = f1.max(token_f1(&p, &g));
    }
    Ok((em, f1))
}

/// Dataset-level EM and F1: the means of the per-question scores.
pub fn qa_scores(preds: &[String], golds: &[Vec<String>]) -> Result<(MetricValue, MetricValue)> {
    check_lengths(preds.len(), golds.len(), 1)?;
    let (mut em, mut f1) = (0.0, 0.0);
    for (p, g) in preds.iter().zip(golds) {
        let (e, f) = qa_em_f1(p, g)?;
        em += e;
        f1 += f;
    }
    let n = preds.len() as f64;
    Ok((
        MetricValue::new(MetricName::Em, em / n, preds.len()),
        MetricValue::new(MetricName::QaF1, f1 / n, preds.len()),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RougeVariant {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "L")]
    L,
}

impl RougeVariant {
    pub fn metric(self) -> MetricName {
        match self {
            RougeVariant::One => MetricName::Rouge1,
            RougeVariant::Two => MetricName::Rouge2,
            RougeVariant::L => MetricName::RougeL,
        }
    }
}

fn ngram_counts<'a, 'b>(tokens: &'b [&'a str], n: usize) -> HashMap<&'b [&'a str], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn clipped_overlap(pred: &HashMap<&[&str], usize>, reference: &HashMap<&[&str], usize>) -> usize {
    pred.iter()
        .map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0)))
        .sum()
}

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

fn f_measure(overlap: usize, pred_len: usize, ref_len: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred_len as f64;
    let r = overlap as f64 / ref_len as f64;
    2.0 * p * r / (p + r)
}

/// ROUGE F-measure over whitespace tokens.
pub fn rouge(pred: &str, reference: &str, variant: RougeVariant) -> MetricValue {
    let p: Vec<&str> = pred.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    let value = match (p.is_empty(), r.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => match variant {
            RougeVariant::L => f_measure(lcs_len(&p, &r), p.len(), r.len()),
            RougeVariant::One | RougeVariant::Two => {
                let n = if variant == RougeVariant::One { 1 } else { 2 };
                let (pc, rc) = (ngram_counts(&p, n), ngram_counts(&r, n));
                let (pn, rn) = (p.len().saturating_sub(n - 1), r.len().saturating_sub(n - 1));
                if pn == 0 || rn == 0 {
                    // Too short for this order: only an exact match counts.
                    if p == r { 1.0 } else { 0.0 }
                } else {
                    f_measure(clipped_overlap(&pc, &rc), pn, rn)
                }
            }
        },
    };
    MetricValue::new(variant.metric(), value, 1)
}

/// Mean per-pair ROUGE.
pub fn rouge_corpus(preds: &[String], refs: &[String], variant: RougeVariant) -> Result<MetricValue> {
    check_lengths(preds.len(), refs.len(), 1)?;
    let total: f64 = preds
        .iter()
        .zip(refs)
        .map(|(p, r)| rouge(p, r, variant).value)
        .sum();
    Ok(MetricValue::new(variant.metric(), total / preds.len() as f64, preds.len()))
}

pub const BLEU_MAX_ORDER: usize = 4;

/// Corpus BLEU-4 with brevity penalty; precisions of order 2..4 use add-one
/// smoothing. Result in `[0, 1]`.
pub fn bleu(preds: &[String], refs: &[String]) -> Result<MetricValue> {
    check_lengths(preds.len(), refs.len(), 1)?;
    let mut matches = [0usize; BLEU_MAX_ORDER];
    let mut totals = [0usize; BLEU_MAX_ORDER];
    let (mut pred_len, mut ref_len) = (0usize, 0usize);
    for (p, r) in preds.iter().zip(refs) {
        let p: Vec<&str> = p.split_whitespace().collect();
        let r: Vec<&str> = r.split_whitespace().collect();
        pred_len += p.len();
        ref_len += r.len();
        for n in 1..=BLEU_MAX_ORDER {
            let pc = ngram_counts(&p, n);
            let rc = ngram_counts(&r, n);
            matches[n - 1] += clipped_overlap(&pc, &rc);
            totals[n - 1] += p.len().saturating_sub(n - 1);
        }
    }
    let support = preds.len();
    if pred_len == 0 || matches[0] == 0 {
        return Ok(MetricValue::new(MetricName::Bleu, 0.0, support));
    }
    let mut log_sum = (matches[0] as f64 / totals[0] as f64).ln();
    for n in 1..BLEU_MAX_ORDER {
        log_sum += ((matches[n] + 1) as f64 / (totals[n] + 1) as f64).ln();
    }
    let bp = if pred_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / pred_len as f64).exp()
    };
    let value = (bp * (log_sum / BLEU_MAX_ORDER as f64).exp()).clamp(0.0, 1.0);
    Ok(MetricValue::new(MetricName::Bleu, value, support))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[i32]) -> BTreeSet<i32> {
        xs.iter().copied().collect()
    }

    #[test]
    fn pearson_examples() {
        let g = [1.0, 2.0, 4.0, 7.0];
        let p: Vec<f64> = g.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((pearson(&p, &g).unwrap().value - 1.0).abs() < 1e-12);
        let p: Vec<f64> = g.iter().map(|x| -x).collect();
        assert!((pearson(&p, &g).unwrap().value + 1.0).abs() < 1e-12);

        // Closed-form sums for preds [1,2,3,5], golds [1,2,3,4]:
        // n=4, Σx=11, Σy=10, Σxy=34, Σx²=39, Σy²=30
        // r = (4*34 - 110) / sqrt((4*39 - 121)(4*30 - 100)) = 26 / sqrt(35*20)
        let r = pearson(&[1.0, 2.0, 3.0, 5.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((r.value - 26.0 / (700.0f64).sqrt()).abs() < 1e-12);

        let d = pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.value, 0.0);
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn jaccard_examples() {
        let s = vec![set(&[1, 2]), set(&[3])];
        assert_eq!(jaccard_multilabel(&s, &s).unwrap().value, 1.0);
        let v = jaccard_multilabel(&[set(&[1, 2])], &[set(&[2, 3])]).unwrap();
        assert!((v.value - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard_multilabel(&[set(&[])], &[set(&[])]).unwrap().value, 1.0);
    }

    #[test]
    fn classification_examples() {
        let golds = ["A", "A", "B", "B"];
        let preds = ["A", "B", "B", "B"];
        assert_eq!(accuracy(&preds, &golds).unwrap().value, 0.75);
        let f1 = f1_macro(&preds, &golds).unwrap().value;
        assert!((f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
        assert_eq!(f1_macro(&golds, &golds).unwrap().value, 1.0);
        assert_eq!(accuracy(&["A"; 4], &golds).unwrap().value, 0.5);
        // Pooled counts equal accuracy for single-label data.
        assert_eq!(f1_score(&preds, &golds, F1Average::Micro).unwrap().value, 0.75);
    }

    #[test]
    fn qa_examples() {
        assert_eq!(qa_em_f1("الملك فهد", &["الملك فهد"]).unwrap(), (1.0, 1.0));
        assert_eq!(qa_em_f1("مكة", &["الرياض"]).unwrap(), (0.0, 0.0));
        let (em, f1) = qa_em_f1("الملك فهد", &["فهد"]).unwrap();
        assert_eq!(em, 0.0);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-15);
        // Alef and ta-marbuta variants and diacritics normalize away.
        assert_eq!(qa_em_f1("أَحْمَد مدرسة", &["احمد مدرسه"]).unwrap().0, 1.0);
        assert!(qa_em_f1("x", &[] as &[&str]).is_err());
    }

    #[test]
    fn rouge_examples() {
        for v in [RougeVariant::One, RougeVariant::Two, RougeVariant::L] {
            assert_eq!(rouge("a b c", "a b c", v).value, 1.0);
            assert_eq!(rouge("a b", "c d", v).value, 0.0);
            assert_eq!(rouge("", "", v).value, 1.0);
            assert_eq!(rouge("", "a", v).value, 0.0);
        }
        assert!((rouge("a b c", "a c d", RougeVariant::One).value - 2.0 / 3.0).abs() < 1e-15);
        assert!((rouge("a b c", "a c d", RougeVariant::L).value - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rouge("a", "a", RougeVariant::Two).value, 1.0);
    }

    #[test]
    fn bleu_examples() {
        let refs = vec!["a b c d e".to_string(), "x y z".to_string()];
        assert!((bleu(&refs, &refs).unwrap().value - 1.0).abs() < 1e-12);
        assert_eq!(bleu(&["p q".into()], &["a b".into()]).unwrap().value, 0.0);
        // p1 = 3/4, p2 = 3/4, p3 = 2/3, p4 = 1/2 (add-one on orders 2..4), no brevity penalty.
        let v = bleu(&["a b c d".into()], &["a b c e".into()]).unwrap().value;
        let expect = (0.75f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn rendering() {
        assert_eq!(render_one_decimal(79.75), "79.8");
        assert_eq!(render_one_decimal(50.0), "50.0");
        assert_eq!(MetricValue::new(MetricName::Bleu, 1.0, 1).percent(), "100.0");
    }
}
