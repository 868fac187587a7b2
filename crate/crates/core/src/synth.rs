//! Deterministic pseudo-Arabic corpora with planted exact duplicates,
//! near-duplicates and low-quality documents. The generator records what it
//! planted so tests can check the pipeline against ground truth.

use std::collections::VecDeque;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{JsonlRecord, RawRecord, Source, WetWriter};
use crate::util::{create_dir_all, create_file};

/// Base Arabic letters; all are NFKC-stable.
const LETTERS: &[char] = &[
    'ا', 'ب', 'ت', 'ث', 'ج', 'ح', 'خ', 'د', 'ذ', 'ر', 'ز', 'س', 'ش', 'ص', 'ض', 'ط', 'ظ', 'ع',
    'غ', 'ف', 'ق', 'ك', 'ل', 'م', 'ن', 'ه', 'و', 'ي',
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    /// Generation stops once this many payload bytes have been produced.
    pub target_bytes: u64,
    pub vocab_size: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub words_per_line: usize,
    pub exact_dup_rate: f64,
    pub near_dup_rate: f64,
    pub noise_rate: f64,
    /// Words replaced in a near-duplicate.
    pub near_dup_edits: usize,
    /// How far back duplicates may reach, in originals.
    pub window: usize,
    pub source: Source,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            target_bytes: 4 << 20,
            vocab_size: 20_000,
            min_words: 600,
            max_words: 900,
            words_per_line: 14,
            exact_dup_rate: 0.05,
            near_dup_rate: 0.05,
            noise_rate: 0.04,
            near_dup_edits: 4,
            window: 256,
            source: Source::Cc,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = self.exact_dup_rate + self.near_dup_rate + self.noise_rate;
        if !(0.0..1.0).contains(&rates) || self.exact_dup_rate < 0.0 || self.near_dup_rate < 0.0 || self.noise_rate < 0.0 {
            return Err(Error::Config(format!("planting rates must be >= 0 and sum below 1, got {rates}")));
        }
        if self.vocab_size < 100 || self.min_words < 20 || self.max_words < self.min_words || self.words_per_line == 0 {
            return Err(Error::Config("synthetic corpus shape is degenerate".into()));
        }
        if self.near_dup_edits == 0 || self.near_dup_edits * 50 > self.min_words {
            return Err(Error::Config("near_dup_edits must be in 1..=min_words/50".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Latin-script text; fails the Arabic-ratio rule.
    Latin,
    /// Mostly digits.
    Digits,
    /// The same line over and over.
    Repeated,
    /// Below the minimum length.
    Short,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Planted {
    Original,
    ExactDuplicate { of: u64 },
    NearDuplicate { of: u64 },
    Noise { noise: NoiseKind },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDoc {
    pub index: u64,
    pub text: String,
    pub planted: Planted,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub documents: u64,
    pub originals: u64,
    pub exact_duplicates: u64,
    pub near_duplicates: u64,
    pub noise: u64,
    pub bytes: u64,
}

impl GroundTruth {
    fn record(&mut self, doc: &SynthDoc) {
        self.documents += 1;
        self.bytes += doc.text.len() as u64;
        match doc.planted {
            Planted::Original => self.originals += 1,
            Planted::ExactDuplicate { .. } => self.exact_duplicates += 1,
            Planted::NearDuplicate { .. } => self.near_duplicates += 1,
            Planted::Noise { .. } => self.noise += 1,
        }
    }
}

/// Zipf-like sampler with an offset so no single word dominates a document.
struct Vocabulary {
    words: Vec<String>,
    cdf: Vec<u64>,
}

impl Vocabulary {
    fn new(size: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut words = Vec::with_capacity(size);
        let mut seen = std::collections::HashSet::with_capacity(size);
        while words.len() < size {
            let len = rng.random_range(2..=8);
            let w: String = (0..len).map(|_| LETTERS[rng.random_range(0..LETTERS.len())]).collect();
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
        let mut acc = 0f64;
        let weights: Vec<f64> = (0..size).map(|r| 1.0 / (r as f64 + 20.0)).collect();
        let total: f64 = weights.iter().sum();
        let cdf = weights
            .iter()
            .map(|w| {
                acc += w / total;
                (acc.min(1.0) * u64::MAX as f64) as u64
            })
            .collect();
        Vocabulary { words, cdf }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: u64 = rng.random();
        self.cdf.partition_point(|&c| c < u).min(self.words.len() - 1)
    }
}

/// Iterator over the synthetic stream. Duplicates always follow their original.
pub struct SynthCorpus {
    config: SynthConfig,
    rng: ChaCha8Rng,
    vocab: Vocabulary,
    /// Recent originals as word-index lists.
    recent: VecDeque<(u64, Vec<usize>)>,
    next_index: u64,
    truth: GroundTruth,
}

impl SynthCorpus {
    pub fn new(config: SynthConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let vocab = Vocabulary::new(config.vocab_size, &mut rng);
        Ok(SynthCorpus {
            recent: VecDeque::with_capacity(config.window),
            config,
            rng,
            vocab,
            next_index: 0,
            truth: GroundTruth::default(),
        })
    }

    pub fn truth(&self) -> GroundTruth {
        self.truth
    }

    fn render(&self, words: &[usize]) -> String {
        let mut out = String::with_capacity(words.len() * 10);
        for (i, &w) in words.iter().enumerate() {
            if i > 0 {
                out.push(if i % self.config.words_per_line == 0 { '\n' } else { ' ' });
            }
            out.push_str(&self.vocab.words[w]);
        }
        out
    }

    fn original(&mut self) -> Vec<usize> {
        let n = self.rng.random_range(self.config.min_words..=self.config.max_words);
        (0..n).map(|_| self.vocab.sample(&mut self.rng)).collect()
    }

    fn noise(&mut self) -> (NoiseKind, String) {
        let kind = match self.rng.random_range(0..4) {
            0 => NoiseKind::Latin,
            1 => NoiseKind::Digits,
            2 => NoiseKind::Repeated,
            _ => NoiseKind::Short,
        };
        let tag = self.next_index;
        let text = match kind {
            NoiseKind::Latin => (0..300)
                .map(|i| format!("lorem{} ipsum{}", (tag + i) % 977, i % 13))
                .collect::<Vec<_>>()
                .join(" "),
            NoiseKind::Digits => (0..200)
                .map(|i| format!("{} {}", tag * 7 + i, self.vocab.words[i as usize % 50]))
                .collect::<Vec<_>>()
                .join(" "),
            NoiseKind::Repeated => {
                let line = format!("{} {}", self.vocab.words[(tag % 97) as usize], self.vocab.words[200]);
                let mut lines = vec![line; 40];
                lines.push(format!("{tag}"));
                lines.join("\n")
            }
            NoiseKind::Short => format!("{} {}", self.vocab.words[(tag % 50) as usize], tag),
        };
        (kind, text)
    }
}

impl Iterator for SynthCorpus {
    type Item = SynthDoc;

    fn next(&mut self) -> Option<SynthDoc> {
        if self.truth.bytes >= self.config.target_bytes {
            return None;
        }
        let index = self.next_index;
        let u: f64 = self.rng.random();
        let c = &self.config;
        let (text, planted) = if !self.recent.is_empty() && u < c.exact_dup_rate {
            let (of, words) = &self.recent[self.rng.random_range(0..self.recent.len())];
            (self.render(words), Planted::ExactDuplicate { of: *of })
        } else if !self.recent.is_empty() && u < c.exact_dup_rate + c.near_dup_rate {
            let pick = self.rng.random_range(0..self.recent.len());
            let (of, mut words) = self.recent[pick].clone();
            // Spread the edits so each touches different shingles.
            let stride = words.len() / c.near_dup_edits;
            for e in 0..c.near_dup_edits {
                let pos = e * stride + self.rng.random_range(0..stride);
                let old = words[pos];
                let mut new = self.vocab.sample(&mut self.rng);
                while new == old {
                    new = self.rng.random_range(0..self.vocab.words.len());
                }
                words[pos] = new;
            }
            (self.render(&words), Planted::NearDuplicate { of })
        } else if u < c.exact_dup_rate + c.near_dup_rate + c.noise_rate {
            let (noise, text) = self.noise();
            (text, Planted::Noise { noise })
        } else {
            let words = self.original();
            let text = self.render(&words);
            if self.recent.len() == self.config.window {
                self.recent.pop_front();
            }
            self.recent.push_back((index, words));
            (text, Planted::Original)
        };
        self.next_index += 1;
        let doc = SynthDoc { index, text, planted };
        self.truth.record(&doc);
        Some(doc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureFormat {
    Wet,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub files: Vec<PathBuf>,
    pub format: FixtureFormat,
    pub truth: GroundTruth,
}

/// Writes the corpus as shards of roughly `shard_bytes` each.
pub fn write_fixture(config: &SynthConfig, dir: &Path, format: FixtureFormat, shard_bytes: u64) -> Result<Fixture> {
    create_dir_all(dir)?;
    let mut corpus = SynthCorpus::new(config.clone())?;
    let ext = match format {
        FixtureFormat::Wet => "warc.wet",
        FixtureFormat::Jsonl => "jsonl",
    };
    let mut files = Vec::new();
    let mut pending = corpus.next();
    while pending.is_some() {
        let mut shard = Vec::new();
        let mut size = 0u64;
        while let Some(d) = pending.take() {
            size += d.text.len() as u64;
            shard.push(d);
            pending = corpus.next();
            if size >= shard_bytes {
                break;
            }
        }
        let path = dir.join(format!("shard-{:05}.{ext}", files.len()));
        let mut w = create_file(&path)?;
        match format {
            FixtureFormat::Wet => {
                let mut wet = WetWriter::new(&mut w);
                wet.write_info("software: arcurate-synth\r\n")?;
                for d in shard {
                    wet.write_record(&RawRecord {
                        record_id: format!("<urn:synth:{}>", d.index),
                        uri: Some(format!("https://synth.example/{}", d.index)),
                        capture_time: None,
                        declared_length: d.text.len() as u64,
                        payload: d.text.into_bytes(),
                    })?;
                }
            }
            FixtureFormat::Jsonl => {
                for d in shard {
                    let rec = JsonlRecord {
                        text: d.text,
                        id: Some(d.index.to_string()),
                        url: None,
                        source: None,
                    };
                    serde_json::to_writer(&mut w, &rec)?;
                    w.write_all(b"\n")?;
                }
            }
        }
        w.flush().map_err(|e| Error::io_at(&path, e))?;
        files.push(path);
    }
    Ok(Fixture {
        files,
        format,
        truth: corpus.truth(),
    })
}
