//! Rule-based quality filtering and original-vs-clean size accounting.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Document, Source};
use crate::util::open_file;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_chars: usize,
    pub max_chars: usize,
    pub min_arabic_ratio: f64,
    pub max_digit_ratio: f64,
    pub max_punct_ratio: f64,
    pub max_repeated_line_ratio: f64,
    pub max_top_word_ratio: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_chars: 64,
            max_chars: 1_000_000,
            min_arabic_ratio: 0.60,
            max_digit_ratio: 0.20,
            max_punct_ratio: 0.20,
            max_repeated_line_ratio: 0.30,
            max_top_word_ratio: 0.10,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_chars > self.max_chars {
            return Err(Error::Config(format!(
                "min_chars {} exceeds max_chars {}",
                self.min_chars, self.max_chars
            )));
        }
        for (name, v) in [
            ("min_arabic_ratio", self.min_arabic_ratio),
            ("max_digit_ratio", self.max_digit_ratio),
            ("max_punct_ratio", self.max_punct_ratio),
            ("max_repeated_line_ratio", self.max_repeated_line_ratio),
            ("max_top_word_ratio", self.max_top_word_ratio),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let cfg: FilterConfig = serde_json::from_reader(std::io::BufReader::new(open_file(path)?))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Filter rules in canonical evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    MinChars,
    MaxChars,
    MinArabicRatio,
    MaxDigitRatio,
    MaxPunctRatio,
    MaxRepeatedLineRatio,
    MaxTopWordRatio,
}

impl Rule {
    pub const ORDER: [Rule; 7] = [
        Rule::MinChars,
        Rule::MaxChars,
        Rule::MinArabicRatio,
        Rule::MaxDigitRatio,
        Rule::MaxPunctRatio,
        Rule::MaxRepeatedLineRatio,
        Rule::MaxTopWordRatio,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::MinChars => "min_chars",
            Rule::MaxChars => "max_chars",
            Rule::MinArabicRatio => "min_arabic_ratio",
            Rule::MaxDigitRatio => "max_digit_ratio",
            Rule::MaxPunctRatio => "max_punct_ratio",
            Rule::MaxRepeatedLineRatio => "max_repeated_line_ratio",
            Rule::MaxTopWordRatio => "max_top_word_ratio",
        }
    }

    fn passes(self, value: f64, cfg: &FilterConfig) -> bool {
        match self {
            Rule::MinChars => value >= cfg.min_chars as f64,
            Rule::MaxChars => value <= cfg.max_chars as f64,
            Rule::MinArabicRatio => value >= cfg.min_arabic_ratio,
            Rule::MaxDigitRatio => value <= cfg.max_digit_ratio,
            Rule::MaxPunctRatio => value <= cfg.max_punct_ratio,
            Rule::MaxRepeatedLineRatio => value <= cfg.max_repeated_line_ratio,
            Rule::MaxTopWordRatio => value <= cfg.max_top_word_ratio,
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Keep,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub doc_id: crate::util::Fingerprint,
    pub verdict: Verdict,
    pub failed_rule: Option<Rule>,
    pub rule_values: BTreeMap<Rule, f64>,
}

impl FilterDecision {
    pub fn is_keep(&self) -> bool {
        self.verdict == Verdict::Keep
    }
}

pub fn is_digit(c: char) -> bool {
    c.is_ascii_digit() || matches!(c as u32, 0x0660..=0x0669 | 0x06F0..=0x06F9)
}

/// ASCII punctuation, Arabic punctuation marks, guillemets and the
/// General Punctuation block (excluding its spaces and format controls).
pub fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c as u32,
            0x060C | 0x061B | 0x061E | 0x061F | 0x066A..=0x066D | 0x06D4
            | 0x00A1 | 0x00AB | 0x00B7 | 0x00BB | 0x00BF
            | 0x2010..=0x2027 | 0x2030..=0x205E)
}

fn measure(rule: Rule, doc: &Document) -> f64 {
    let n = doc.char_count.max(1) as f64;
    match rule {
        Rule::MinChars | Rule::MaxChars => doc.char_count as f64,
        Rule::MinArabicRatio => doc.arabic_ratio,
        Rule::MaxDigitRatio => doc.text.chars().filter(|&c| is_digit(c)).count() as f64 / n,
        Rule::MaxPunctRatio => doc.text.chars().filter(|&c| is_punct(c)).count() as f64 / n,
        Rule::MaxRepeatedLineRatio => repeated_line_ratio(&doc.text),
        Rule::MaxTopWordRatio => top_word_ratio(&doc.text),
    }
}

/// Share of lines that repeat an earlier line of the same text.
pub fn repeated_line_ratio(text: &str) -> f64 {
    let mut seen = HashSet::new();
    let (mut total, mut repeats) = (0usize, 0usize);
    for line in text.lines() {
        total += 1;
        if !seen.insert(line) {
            repeats += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        repeats as f64 / total as f64
    }
}

/// Count of the most frequent whitespace token over the token count.
pub fn top_word_ratio(text: &str) -> f64 {
    let mut counts: rustc_hash::FxHashMap<&str, u32> = Default::default();
    let mut total = 0u32;
    let mut top = 0u32;
    for w in text.split_whitespace() {
        total += 1;
        let c = counts.entry(w).or_insert(0);
        *c += 1;
        top = top.max(*c);
    }
    if total == 0 {
        0.0
    } else {
        top as f64 / total as f64
    }
}

/// Evaluates the rules in canonical order and stops at the first violation.
pub fn apply_filters(doc: &Document, config: &FilterConfig) -> FilterDecision {
    let mut rule_values = BTreeMap::new();
    for rule in Rule::ORDER {
        let value = measure(rule, doc);
        rule_values.insert(rule, value);
        if !rule.passes(value, config) {
            return FilterDecision {
                doc_id: doc.doc_id,
                verdict: Verdict::Drop,
                failed_rule: Some(rule),
                rule_values,
            };
        }
    }
    FilterDecision {
        doc_id: doc.doc_id,
        verdict: Verdict::Keep,
        failed_rule: None,
        rule_values,
    }
}

/// One row of the size table. Percentages are kept unrounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub source: String,
    pub original_bytes: u64,
    pub clean_bytes: u64,
    pub filtering_pct: f64,
}

impl StatsRow {
    pub fn new(source: impl Into<String>, original_bytes: u64, clean_bytes: u64) -> Result<Self> {
        let source = source.into();
        if original_bytes == 0 {
            return Err(Error::InvalidInput(format!("source {source} has zero original bytes")));
        }
        if clean_bytes > original_bytes {
            return Err(Error::InvalidInput(format!(
                "source {source}: clean bytes {clean_bytes} exceed original {original_bytes}"
            )));
        }
        let filtering_pct = 100.0 * (1.0 - clean_bytes as f64 / original_bytes as f64);
        Ok(StatsRow {
            source,
            original_bytes,
            clean_bytes,
            filtering_pct,
        })
    }

    /// Filtering percentage rounded to the nearest integer, e.g. `"94%"`.
    pub fn rendered_pct(&self) -> String {
        format!("{}%", self.filtering_pct.round() as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub rows: Vec<StatsRow>,
    pub total: StatsRow,
}

impl CorpusStats {
    /// Builds the table from `(source label, original, clean)` rows; the total
    /// row sums the byte columns.
    pub fn from_rows<S: Into<String>>(rows: impl IntoIterator<Item = (S, u64, u64)>) -> Result<Self> {
        let rows = rows
            .into_iter()
            .map(|(s, o, c)| StatsRow::new(s, o, c))
            .collect::<Result<Vec<_>>>()?;
        let original: u64 = rows.iter().map(|r| r.original_bytes).sum();
        let clean: u64 = rows.iter().map(|r| r.clean_bytes).sum();
        let total = StatsRow::new("TOTAL", original, clean)?;
        Ok(CorpusStats { rows, total })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    pub fn render_table(&self) -> String {
        let mut lines = vec![
            format!("{:<10} | {:>9} | {:>9} | {:>11}", "Source", "Original", "Clean", "Filtering %"),
            format!("{:-<10}-+-{:->9}-+-{:->9}-+-{:->11}", "", "", "", ""),
        ];
        let row = |r: &StatsRow| {
            format!(
                "{:<10} | {:>9} | {:>9} | {:>11}",
                r.source,
                human_bytes(r.original_bytes),
                human_bytes(r.clean_bytes),
                r.rendered_pct()
            )
        };
        lines.extend(self.rows.iter().map(row));
        lines.push(format!("{:-<10}-+-{:->9}-+-{:->9}-+-{:->11}", "", "", "", ""));
        lines.push(row(&self.total));
        lines.join("\n") + "\n"
    }
}

/// Decimal byte sizes in the style `8.8TB`, `529GB`, `16GB`.
pub fn human_bytes(bytes: u64) -> String {
    const UNITS: [&str; 5] = ["TB", "GB", "MB", "KB", "B"];
    let mut scale = 1e12;
    for unit in UNITS {
        let v = bytes as f64 / scale;
        if v >= 1.0 || unit == "B" {
            return if v < 10.0 && unit != "B" {
                format!("{v:.1}{unit}")
            } else {
                format!("{v:.0}{unit}")
            };
        }
        scale /= 1e3;
    }
    unreachable!()
}

/// Mergeable per-source byte counters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsAccumulator {
    pub per_source: BTreeMap<Source, (u64, u64)>,
}

impl StatsAccumulator {
    pub fn add(&mut self, source: Source, bytes: u64, kept: bool) {
        let e = self.per_source.entry(source).or_default();
        e.0 += bytes;
        if kept {
            e.1 += bytes;
        }
    }

    /// Commutative, associative merge of two partial aggregations.
    pub fn merge(&mut self, other: &StatsAccumulator) {
        for (s, (o, c)) in &other.per_source {
            let e = self.per_source.entry(*s).or_default();
            e.0 += o;
            e.1 += c;
        }
    }

    pub fn finish(&self) -> Result<CorpusStats> {
        CorpusStats::from_rows(
            self.per_source
                .iter()
                .map(|(s, (o, c))| (s.as_str().to_string(), *o, *c)),
        )
    }
}

/// Per-source original/clean accounting of filter decisions. Byte sizes are
/// UTF-8 sizes of the normalized text.
pub fn aggregate_stats<'a>(
    decisions: impl IntoIterator<Item = (&'a Document, &'a FilterDecision)>,
) -> Result<CorpusStats> {
    let mut acc = StatsAccumulator::default();
    for (doc, decision) in decisions {
        acc.add(doc.source, doc.byte_len() as u64, decision.is_keep());
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::document_from_text;

    const GB: u64 = 1_000_000_000;

    fn arabic_words(n_words: usize, word_len: usize) -> String {
        // Distinct words built from a base-28 counter over Arabic letters.
        let letters: Vec<char> = ('\u{0628}'..='\u{063A}').collect();
        (0..n_words)
            .map(|i| {
                let mut k = i;
                (0..word_len)
                    .map(|_| {
                        let c = letters[k % letters.len()];
                        k /= letters.len();
                        c
                    })
                    .collect::<String>()
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    #[test]
    fn short_doc_fails_min_chars() {
        let doc = document_from_text("قصير", Source::Cc).unwrap();
        let d = apply_filters(&doc, &FilterConfig::default());
        assert_eq!(d.verdict, Verdict::Drop);
        assert_eq!(d.failed_rule, Some(Rule::MinChars));
        assert_eq!(d.rule_values.len(), 1);
    }

    #[test]
    fn clean_arabic_doc_is_kept() {
        let text = arabic_words(200, 5);
        let doc = document_from_text(&text, Source::Cc).unwrap();
        assert_eq!(doc.text.chars().filter(|c| *c != ' ').count(), 1000);
        let d = apply_filters(&doc, &FilterConfig::default());
        assert_eq!(d.verdict, Verdict::Keep, "{d:?}");
        assert!(d.failed_rule.is_none());
        assert_eq!(d.rule_values.len(), Rule::ORDER.len());
    }

    #[test]
    fn low_arabic_ratio_reports_measured_value() {
        let text = format!("{}{}", "بتث".repeat(10), "abcdefghij".repeat(7));
        let doc = document_from_text(&text, Source::Cc).unwrap();
        let brute = doc.text.chars().filter(|&c| crate::ingest::is_arabic(c)).count() as f64
            / doc.text.chars().count() as f64;
        assert!((brute - 0.30).abs() < 1e-12);
        let d = apply_filters(&doc, &FilterConfig::default());
        assert_eq!(d.verdict, Verdict::Drop);
        assert_eq!(d.failed_rule, Some(Rule::MinArabicRatio));
        assert_eq!(d.rule_values[&Rule::MinArabicRatio], brute);
    }

    #[test]
    fn repeated_lines_and_top_words() {
        assert_eq!(repeated_line_ratio("a\nb\na\na"), 0.5);
        assert_eq!(top_word_ratio("x y x z"), 0.5);
        assert_eq!(top_word_ratio(""), 0.0);
    }

    #[test]
    fn reference_corpus_rows() {
        let stats = CorpusStats::from_rows([("CC", 8_800 * GB, 529 * GB)]).unwrap();
        assert_eq!(stats.rows[0].rendered_pct(), "94%");
        let stats = CorpusStats::from_rows([("ELKHEIR", 16 * GB, 13 * GB)]).unwrap();
        assert_eq!(stats.rows[0].rendered_pct(), "19%");
        let stats = CorpusStats::from_rows([("NEWS", 100, 100)]).unwrap();
        assert_eq!(stats.rows[0].rendered_pct(), "0%");
        assert!(CorpusStats::from_rows([("NEWS", 0, 0)]).is_err());
    }

    #[test]
    fn table_and_json_render() {
        let stats = CorpusStats::from_rows([
            ("CC", 8_700 * GB, 439 * GB),
            ("NEWS", 21 * GB, 14 * GB),
        ])
        .unwrap();
        let table = stats.render_table();
        assert!(table.contains("8.7TB"));
        assert!(table.contains("439GB"));
        let json: serde_json::Value = serde_json::from_str(&stats.to_json()).unwrap();
        let row = &json["rows"][1];
        for key in ["source", "original_bytes", "clean_bytes", "filtering_pct"] {
            assert!(row.get(key).is_some(), "missing {key}");
        }
        assert_eq!(json["total"]["original_bytes"], 8_721 * GB);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = FilterConfig {
            min_chars: 10,
            max_chars: 5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = FilterConfig {
            max_digit_ratio: 1.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
