//! Span-corruption examples for encoder-decoder pretraining.
//!
//! A sequence of `n` tokens gets `round(n * density)` tokens corrupted
//! (clamped to `[1, n - 1]`), split into `max(1, round(noise / mean_span))`
//! spans whose lengths differ by at most one. Spans are placed uniformly among
//! the gaps between kept tokens with at most one span per gap, so no two spans
//! touch. Each span is replaced in the input by the next sentinel; the target
//! lists each sentinel followed by the tokens it replaced, then `eos`.

use std::io::{self, BufRead, Read, Write};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub noise_density: f64,
    pub mean_span_length: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            noise_density: 0.15,
            mean_span_length: 3.0,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_density > 0.0 && self.noise_density < 1.0) {
            return Err(Error::Config(format!(
                "noise_density {} must be in (0, 1)",
                self.noise_density
            )));
        }
        if self.mean_span_length.is_nan() || self.mean_span_length <= 0.0 {
            return Err(Error::Config(format!(
                "mean_span_length {} must be positive",
                self.mean_span_length
            )));
        }
        Ok(())
    }

    /// `(corrupted tokens, spans)` for a sequence of `len` tokens.
    pub fn budget(&self, len: usize) -> (usize, usize) {
        let noise = ((len as f64 * self.noise_density).round() as usize).clamp(1, len.saturating_sub(1).max(1));
        let spans = ((noise as f64 / self.mean_span_length).round() as usize).max(1);
        // At most one span per gap between kept tokens, and at least one token per span.
        let spans = spans.min(noise).min(len - noise + 1);
        (noise, spans)
    }
}

/// Sentinel ids and the end-of-sequence id used to build examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialTokens {
    pub pad: u32,
    pub eos: u32,
    /// Id of `<extra_id_0>`; sentinel `i` is `sentinel_base - i`.
    pub sentinel_base: u32,
    pub num_sentinels: usize,
}

impl SpecialTokens {
    pub fn for_vocab(vocab: &crate::tokenizer::SubwordVocab) -> Self {
        SpecialTokens {
            pad: crate::tokenizer::PAD_ID,
            eos: crate::tokenizer::EOS_ID,
            sentinel_base: (vocab.size() - 1) as u32,
            num_sentinels: vocab.num_sentinels(),
        }
    }

    pub fn sentinel(&self, i: usize) -> u32 {
        self.sentinel_base - i as u32
    }

    pub fn sentinel_index(&self, id: u32) -> Option<usize> {
        let lowest = self.sentinel_base + 1 - self.num_sentinels as u32;
        (id >= lowest && id <= self.sentinel_base).then(|| (self.sentinel_base - id) as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanCorruptionExample {
    pub input_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
}

impl SpanCorruptionExample {
    /// Number of target tokens that are corrupted input tokens.
    pub fn corrupted_len(&self, specials: &SpecialTokens) -> usize {
        self.target_ids
            .iter()
            .filter(|&&t| t != specials.eos && specials.sentinel_index(t).is_none())
            .count()
    }

    pub fn num_spans(&self, specials: &SpecialTokens) -> usize {
        self.input_ids
            .iter()
            .filter(|&&t| specials.sentinel_index(t).is_some())
            .count()
    }
}

/// Corrupts `tokens`; the draw is a pure function of `(tokens, spec.seed, counter)`.
pub fn corrupt(
    tokens: &[u32],
    spec: &NoiseSpec,
    counter: u64,
    specials: &SpecialTokens,
) -> Result<SpanCorruptionExample> {
    let n = tokens.len();
    if n < 2 {
        return Err(Error::SequenceTooShort(n));
    }
    let (noise, spans) = spec.budget(n);
    if spans > specials.num_sentinels {
        return Err(Error::SentinelBudget {
            spans,
            sentinels: specials.num_sentinels,
        });
    }
    let keep = n - noise;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(counter);

    let mut lengths: Vec<usize> = (0..spans)
        .map(|i| noise / spans + usize::from(i < noise % spans))
        .collect();
    lengths.shuffle(&mut rng);
    // Gap g sits before kept token g (gap `keep` is after the last one).
    let mut gaps = index::sample(&mut rng, keep + 1, spans).into_vec();
    gaps.sort_unstable();

    let mut input = Vec::with_capacity(keep + spans);
    let mut target = Vec::with_capacity(noise + spans + 1);
    let mut pos = 0usize;
    let mut kept_seen = 0usize;
    for (s, (&gap, &len)) in gaps.iter().zip(&lengths).enumerate() {
        let run = gap - kept_seen;
        input.extend_from_slice(&tokens[pos..pos + run]);
        pos += run;
        kept_seen = gap;
        let sentinel = specials.sentinel(s);
        input.push(sentinel);
        target.push(sentinel);
        target.extend_from_slice(&tokens[pos..pos + len]);
        pos += len;
    }
    input.extend_from_slice(&tokens[pos..]);
    target.push(specials.eos);

    Ok(SpanCorruptionExample {
        input_ids: input,
        target_ids: target,
    })
}

/// Rebuilds the original sequence by putting each target span back at its
/// sentinel. Fails on any structural violation.
pub fn splice(example: &SpanCorruptionExample, specials: &SpecialTokens) -> Result<Vec<u32>> {
    let target = &example.target_ids;
    if target.last() != Some(&specials.eos) {
        return Err(Error::InvalidInput("target not terminated by eos".into()));
    }
    let body = &target[..target.len() - 1];
    let mut spans: Vec<&[u32]> = Vec::new();
    let mut i = 0;
    while i < body.len() {
        let Some(s) = specials.sentinel_index(body[i]) else {
            return Err(Error::InvalidInput(format!("target position {i} is not a sentinel")));
        };
        if s != spans.len() {
            return Err(Error::InvalidInput(format!("target sentinel {s} out of order")));
        }
        let start = i + 1;
        let mut end = start;
        while end < body.len() && specials.sentinel_index(body[end]).is_none() {
            end += 1;
        }
        if end == start {
            return Err(Error::InvalidInput(format!("empty span for sentinel {s}")));
        }
        spans.push(&body[start..end]);
        i = end;
    }

    let mut out = Vec::new();
    let mut next = 0usize;
    let mut prev_was_sentinel = false;
    for &t in &example.input_ids {
        if t == specials.pad {
            break;
        }
        match specials.sentinel_index(t) {
            Some(s) => {
                if s != next {
                    return Err(Error::InvalidInput(format!("input sentinel {s} out of order")));
                }
                if prev_was_sentinel {
                    return Err(Error::InvalidInput("adjacent corrupted spans".into()));
                }
                let span = spans
                    .get(s)
                    .ok_or_else(|| Error::InvalidInput(format!("sentinel {s} missing from target")))?;
                out.extend_from_slice(span);
                next += 1;
                prev_was_sentinel = true;
            }
            None => {
                out.push(t);
                prev_was_sentinel = false;
            }
        }
    }
    if next != spans.len() {
        return Err(Error::InvalidInput("target has unused spans".into()));
    }
    Ok(out)
}

/// Longest raw chunk whose corrupted input fits in `seq_len` tokens.
pub fn max_chunk_len(seq_len: usize, spec: &NoiseSpec) -> usize {
    let mut best = seq_len.min(2);
    let mut n = 2;
    while n <= seq_len * 4 {
        let (noise, spans) = spec.budget(n);
        if n - noise + spans <= seq_len {
            best = n;
        }
        n += 1;
    }
    best
}

/// Splits a token sequence into chunks of at most `chunk_len` tokens (see
/// [`max_chunk_len`]). A trailing chunk shorter than 2 tokens is dropped.
pub fn chunk_tokens(tokens: &[u32], chunk_len: usize) -> impl Iterator<Item = &[u32]> {
    tokens.chunks(chunk_len.max(2)).filter(|c| c.len() >= 2)
}

/// One fixed-length training row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedExample {
    /// Exactly `seq_len` ids; real tokens first, then `pad`.
    pub input_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    pub pad_count: usize,
}

pub const MIN_SEQ_LEN: usize = 16;

/// Cuts an example whose input exceeds `seq_len` at positions between input
/// tokens; sentinels are renumbered from 0 in each part.
pub fn split_example(
    example: &SpanCorruptionExample,
    seq_len: usize,
    specials: &SpecialTokens,
) -> Result<Vec<SpanCorruptionExample>> {
    if example.input_ids.len() <= seq_len {
        return Ok(vec![example.clone()]);
    }
    // Target spans by sentinel index.
    let body = &example.target_ids[..example.target_ids.len().saturating_sub(1)];
    let mut spans: Vec<&[u32]> = Vec::new();
    let mut i = 0;
    while i < body.len() {
        let start = i + 1;
        let mut end = start;
        while end < body.len() && specials.sentinel_index(body[end]).is_none() {
            end += 1;
        }
        spans.push(&body[start..end]);
        i = end;
    }

    let mut parts = Vec::new();
    for chunk in example.input_ids.chunks(seq_len) {
        let mut input = Vec::with_capacity(chunk.len());
        let mut target = Vec::new();
        let mut local = 0usize;
        for &t in chunk {
            match specials.sentinel_index(t) {
                Some(s) => {
                    let span = spans
                        .get(s)
                        .ok_or_else(|| Error::InvalidInput(format!("sentinel {s} missing from target")))?;
                    let sentinel = specials.sentinel(local);
                    input.push(sentinel);
                    target.push(sentinel);
                    target.extend_from_slice(span);
                    local += 1;
                }
                None => input.push(t),
            }
        }
        target.push(specials.eos);
        parts.push(SpanCorruptionExample {
            input_ids: input,
            target_ids: target,
        });
    }
    Ok(parts)
}

/// Pads every input to `seq_len`, splitting over-long examples first.
pub fn pack_examples<I>(
    examples: I,
    seq_len: usize,
    specials: SpecialTokens,
) -> Result<impl Iterator<Item = Result<PackedExample>>>
where
    I: IntoIterator<Item = SpanCorruptionExample>,
{
    if seq_len < MIN_SEQ_LEN {
        return Err(Error::Config(format!(
            "seq_len {seq_len} is below the minimum of {MIN_SEQ_LEN}"
        )));
    }
    Ok(examples.into_iter().flat_map(move |ex| {
        let parts = match split_example(&ex, seq_len, &specials) {
            Ok(p) => p,
            Err(e) => return vec![Err(e)],
        };
        parts
            .into_iter()
            .map(|p| {
                let pad_count = seq_len - p.input_ids.len();
                let mut input_ids = p.input_ids;
                input_ids.resize(seq_len, specials.pad);
                Ok(PackedExample {
                    input_ids,
                    target_ids: p.target_ids,
                    pad_count,
                })
            })
            .collect()
    }))
}

pub const RECORD_MAGIC: &[u8; 8] = b"ARCSPAN1";

/// Writes length-prefixed records: `u32 LE` input length, input ids, `u32 LE`
/// target length, target ids, all ids `u32 LE`. The stream starts with
/// [`RECORD_MAGIC`].
pub struct RecordWriter<W: Write> {
    inner: W,
    records: u64,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(mut inner: W) -> io::Result<Self> {
        inner.write_all(RECORD_MAGIC)?;
        Ok(RecordWriter { inner, records: 0 })
    }

    pub fn write(&mut self, input_ids: &[u32], target_ids: &[u32]) -> io::Result<()> {
        for ids in [input_ids, target_ids] {
            self.inner.write_all(&(ids.len() as u32).to_le_bytes())?;
            let mut buf = Vec::with_capacity(ids.len() * 4);
            for id in ids {
                buf.extend_from_slice(&id.to_le_bytes());
            }
            self.inner.write_all(&buf)?;
        }
        self.records += 1;
        Ok(())
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Reads the records written by [`RecordWriter`].
pub struct RecordReader<R: Read> {
    inner: R,
}

impl<R: Read> RecordReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        inner.read_exact(&mut magic)?;
        if &magic != RECORD_MAGIC {
            return Err(Error::InvalidInput("not a span-corruption record file".into()));
        }
        Ok(RecordReader { inner })
    }

    fn read_ids(&mut self) -> io::Result<Option<Vec<u32>>> {
        let mut len = [0u8; 4];
        match self.inner.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e),
        }
        let n = u32::from_le_bytes(len) as usize;
        let mut buf = vec![0u8; n * 4];
        self.inner.read_exact(&mut buf)?;
        Ok(Some(
            buf.chunks_exact(4)
                .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        ))
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<SpanCorruptionExample>;

    fn next(&mut self) -> Option<Self::Item> {
        let input = match self.read_ids() {
            Ok(Some(v)) => v,
            Ok(None) => return None,
            Err(e) => return Some(Err(e.into())),
        };
        match self.read_ids() {
            Ok(Some(target)) => Some(Ok(SpanCorruptionExample {
                input_ids: input,
                target_ids: target,
            })),
            Ok(None) => Some(Err(Error::InvalidInput("record missing target".into()))),
            Err(e) => Some(Err(e.into())),
        }
    }
}

/// JSON sidecar describing a record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub spec: NoiseSpec,
    pub seed: u64,
    pub seq_len: usize,
    pub examples: u64,
    pub input_tokens: u64,
    pub corrupted_tokens: u64,
    pub spans: u64,
    pub files: Vec<String>,
}

/// One line of the human-readable debug format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DebugRecord {
    pub input_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_text: Option<String>,
}

pub fn write_debug_jsonl(w: &mut impl Write, record: &DebugRecord) -> Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_debug_jsonl(r: impl BufRead) -> Result<Vec<DebugRecord>> {
    r.lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}
