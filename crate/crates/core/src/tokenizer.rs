//! Byte-pair subword vocabulary: training, encoding and decoding.
//!
//! Text is pretokenized on whitespace and every word gets the boundary marker
//! `▁` prepended. Training starts from the observed characters and repeatedly
//! merges the most frequent adjacent pair (ties go to the lexicographically
//! smallest merged string, then the smallest left piece).
//!
//! Id layout: `pad = 0`, `eos = 1`, `unk = 2`, then the pieces in rank order,
//! then the sentinels counting down from the top id (`<extra_id_0>` is the
//! last id).

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rustc_hash::{FxHashMap as HashMap, FxHashSet as HashSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{open_file, write_atomic, Fingerprint};

pub const WORD_MARKER: char = '▁';
pub const PAD_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
pub const NUM_RESERVED: usize = 3;
pub const DEFAULT_NUM_SENTINELS: usize = 100;
/// Vocabulary size of the full-scale model; desk runs use smaller targets.
pub const REFERENCE_VOCAB_SIZE: usize = 64_000;

const VOCAB_FORMAT: &str = "arcurate-bpe";

/// Word frequencies gathered from a corpus. Partial counts from different
/// partitions merge by addition.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordCounts {
    counts: HashMap<String, u64>,
}

impl WordCounts {
    pub fn add_text(&mut self, text: &str) {
        for w in text.split_whitespace() {
            match self.counts.get_mut(w) {
                Some(c) => *c += 1,
                None => {
                    self.counts.insert(w.to_string(), 1);
                }
            }
        }
    }

    pub fn merge(&mut self, other: WordCounts) {
        if self.counts.is_empty() {
            self.counts = other.counts;
            return;
        }
        for (w, c) in other.counts {
            *self.counts.entry(w).or_insert(0) += c;
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Bounded word-to-ids memo for [`SubwordVocab::encode_cached`].
#[derive(Debug, Clone)]
pub struct EncodeCache {
    words: HashMap<String, Vec<u32>>,
    capacity: usize,
}

impl EncodeCache {
    pub fn new(capacity: usize) -> Self {
        EncodeCache {
            words: HashMap::default(),
            capacity,
        }
    }
}

impl EncodeCache {
    /// Adds entries collected by [`SubwordVocab::encode_shared`], up to capacity.
    pub fn absorb(&mut self, entries: impl IntoIterator<Item = (String, Vec<u32>)>) {
        for (word, ids) in entries {
            if self.words.len() >= self.capacity {
                break;
            }
            self.words.entry(word).or_insert(ids);
        }
    }
}

impl Default for EncodeCache {
    fn default() -> Self {
        EncodeCache::new(1 << 20)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub pad: u32,
    pub eos: u32,
    pub unk: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabHeader {
    format: String,
    version: u32,
    target_size: usize,
    specials: SpecialIds,
    num_sentinels: usize,
}

/// A trained subword inventory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordVocab {
    pieces: Vec<String>,
    num_sentinels: usize,
    target_size: usize,
    piece_ids: HashMap<String, u32>,
    /// Rank of a multi-character piece, used to order merges while encoding.
    merge_rank: HashMap<String, u32>,
    /// Learned merges in order, as pairs of piece ranks.
    merges: Vec<(u32, u32)>,
}

impl SubwordVocab {
    fn from_pieces(
        pieces: Vec<String>,
        merges: Vec<(u32, u32)>,
        num_sentinels: usize,
        target_size: usize,
    ) -> Result<Self> {
        if pieces.len() + NUM_RESERVED + num_sentinels > target_size {
            return Err(Error::InvalidVocab(format!(
                "{} pieces + {} specials exceed target size {target_size}",
                pieces.len(),
                NUM_RESERVED + num_sentinels
            )));
        }
        let mut piece_ids = HashMap::with_capacity_and_hasher(pieces.len(), Default::default());
        let mut merge_rank = HashMap::default();
        for (rank, p) in pieces.iter().enumerate() {
            if p.is_empty() || p.contains(['\t', '\n', '\r']) {
                return Err(Error::InvalidVocab(format!("bad piece {p:?} at rank {rank}")));
            }
            if piece_ids.insert(p.clone(), (rank + NUM_RESERVED) as u32).is_some() {
                return Err(Error::InvalidVocab(format!("duplicate piece {p:?}")));
            }
            if p.chars().nth(1).is_some() {
                merge_rank.insert(p.clone(), rank as u32);
            }
        }
        Ok(SubwordVocab {
            pieces,
            num_sentinels,
            target_size,
            piece_ids,
            merge_rank,
            merges,
        })
    }

    /// Total number of ids: reserved specials, pieces and sentinels.
    pub fn size(&self) -> usize {
        NUM_RESERVED + self.pieces.len() + self.num_sentinels
    }

    pub fn target_size(&self) -> usize {
        self.target_size
    }

    pub fn num_pieces(&self) -> usize {
        self.pieces.len()
    }

    pub fn num_sentinels(&self) -> usize {
        self.num_sentinels
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    /// Merges learned during training, in order. Empty for loaded vocabularies.
    pub fn merges(&self) -> Vec<(String, String)> {
        self.merges
            .iter()
            .map(|&(l, r)| (self.pieces[l as usize].clone(), self.pieces[r as usize].clone()))
            .collect()
    }

    pub fn specials(&self) -> SpecialIds {
        SpecialIds {
            pad: PAD_ID,
            eos: EOS_ID,
            unk: UNK_ID,
        }
    }

    pub fn piece_id(&self, piece: &str) -> Option<u32> {
        self.piece_ids.get(piece).copied()
    }

    pub fn sentinel_id(&self, index: usize) -> Option<u32> {
        (index < self.num_sentinels).then(|| (self.size() - 1 - index) as u32)
    }

    /// Index of the sentinel with this id, if it is one.
    pub fn sentinel_index(&self, id: u32) -> Option<usize> {
        let first = (NUM_RESERVED + self.pieces.len()) as u32;
        let size = self.size() as u32;
        (id >= first && id < size).then(|| (size - 1 - id) as usize)
    }

    pub fn is_sentinel(&self, id: u32) -> bool {
        self.sentinel_index(id).is_some()
    }

    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        let mut w = String::with_capacity(word.len() + WORD_MARKER.len_utf8());
        w.push(WORD_MARKER);
        w.push_str(word);
        // Symbols partition `w`, so adjacent symbols are one contiguous slice.
        let mut bounds: Vec<usize> = w.char_indices().map(|(i, _)| i).collect();
        bounds.push(w.len());
        loop {
            let mut best: Option<u32> = None;
            for win in bounds.windows(3) {
                if let Some(&rank) = self.merge_rank.get(&w[win[0]..win[2]]) {
                    if best.is_none_or(|r| rank < r) {
                        best = Some(rank);
                    }
                }
            }
            let Some(rank) = best else { break };
            let target = self.pieces[rank as usize].as_str();
            // Merge every non-overlapping occurrence, left to right.
            let mut merged = Vec::with_capacity(bounds.len());
            merged.push(0);
            let mut i = 0;
            while i + 1 < bounds.len() {
                if i + 2 < bounds.len() && &w[bounds[i]..bounds[i + 2]] == target {
                    merged.push(bounds[i + 2]);
                    i += 2;
                } else {
                    merged.push(bounds[i + 1]);
                    i += 1;
                }
            }
            bounds = merged;
        }
        out.extend(
            bounds
                .windows(2)
                .map(|b| self.piece_ids.get(&w[b[0]..b[1]]).copied().unwrap_or(UNK_ID)),
        );
    }

    /// Encodes whitespace-pretokenized text. Unknown characters map to `unk`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            self.encode_word(word, &mut out);
        }
        out
    }

    /// Same ids as [`encode`](Self::encode), appended to `out`, memoizing
    /// per-word results in `cache`.
    pub fn encode_cached(&self, text: &str, cache: &mut EncodeCache, out: &mut Vec<u32>) {
        for word in text.split_whitespace() {
            match cache.words.get(word) {
                Some(ids) => out.extend_from_slice(ids),
                None => {
                    let start = out.len();
                    self.encode_word(word, out);
                    if cache.words.len() < cache.capacity {
                        cache.words.insert(word.to_string(), out[start..].to_vec());
                    }
                }
            }
        }
    }

    /// Like [`encode_cached`](Self::encode_cached) with a read-only cache, so
    /// it can be shared between threads. Words not in the cache are pushed to
    /// `misses` for a later [`EncodeCache::absorb`].
    pub fn encode_shared(
        &self,
        text: &str,
        cache: &EncodeCache,
        out: &mut Vec<u32>,
        misses: &mut Vec<(String, Vec<u32>)>,
    ) {
        for word in text.split_whitespace() {
            match cache.words.get(word) {
                Some(ids) => out.extend_from_slice(ids),
                None => {
                    let start = out.len();
                    self.encode_word(word, out);
                    if cache.words.len() + misses.len() < cache.capacity {
                        misses.push((word.to_string(), out[start..].to_vec()));
                    }
                }
            }
        }
    }

    /// Renders ids back to text. `pad` and `eos` render as nothing, `unk` as
    /// `<unk>`, sentinels as `<extra_id_N>`.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut raw = String::new();
        for &id in ids {
            let idx = id as usize;
            if idx >= self.size() {
                return Err(Error::TokenOutOfRange {
                    id,
                    size: self.size(),
                });
            }
            match id {
                PAD_ID | EOS_ID => {}
                UNK_ID => raw.push_str("<unk>"),
                _ => match self.sentinel_index(id) {
                    Some(s) => {
                        raw.push_str("<extra_id_");
                        raw.push_str(&s.to_string());
                        raw.push('>');
                    }
                    None => raw.push_str(&self.pieces[idx - NUM_RESERVED]),
                },
            }
        }
        let text = raw.replace(WORD_MARKER, " ");
        Ok(text.strip_prefix(' ').map(str::to_string).unwrap_or(text))
    }

    /// Id-to-piece rendering of a single id, for debugging output.
    pub fn id_to_piece(&self, id: u32) -> Option<String> {
        match id {
            PAD_ID => Some("<pad>".into()),
            EOS_ID => Some("</s>".into()),
            UNK_ID => Some("<unk>".into()),
            _ if (id as usize) >= self.size() => None,
            _ => Some(match self.sentinel_index(id) {
                Some(s) => format!("<extra_id_{s}>"),
                None => self.pieces[id as usize - NUM_RESERVED].clone(),
            }),
        }
    }

    pub fn to_text(&self) -> String {
        let header = VocabHeader {
            format: VOCAB_FORMAT.into(),
            version: 1,
            target_size: self.target_size,
            specials: self.specials(),
            num_sentinels: self.num_sentinels,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for (rank, p) in self.pieces.iter().enumerate() {
            out.push_str(p);
            out.push('\t');
            out.push_str(&rank.to_string());
            out.push('\n');
        }
        out
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of(self.to_text().as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(open_file(path)?))
    }

    /// Parses the text format, rejecting files that break the vocabulary invariants.
    pub fn read_from(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::InvalidVocab("empty file".into()))??;
        let header: VocabHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::InvalidVocab(format!("bad header: {e}")))?;
        if header.format != VOCAB_FORMAT || header.version != 1 {
            return Err(Error::InvalidVocab(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        if header.specials.pad != PAD_ID || header.specials.eos != EOS_ID || header.specials.unk != UNK_ID {
            return Err(Error::InvalidVocab("unexpected special ids".into()));
        }
        let mut pieces = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (piece, rank) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::InvalidVocab(format!("line {}: missing tab", i + 2)))?;
            let rank: usize = rank
                .parse()
                .map_err(|_| Error::InvalidVocab(format!("line {}: bad rank {rank:?}", i + 2)))?;
            if rank != pieces.len() {
                return Err(Error::InvalidVocab(format!(
                    "line {}: rank {rank} out of order",
                    i + 2
                )));
            }
            pieces.push(piece.to_string());
        }
        // Every multi-character piece must be reachable by merging earlier pieces.
        let vocab = SubwordVocab::from_pieces(pieces, Vec::new(), header.num_sentinels, header.target_size)?;
        for (rank, p) in vocab.pieces.iter().enumerate() {
            let chars: Vec<(usize, char)> = p.char_indices().collect();
            if chars.len() < 2 {
                continue;
            }
            let splittable = chars[1..].iter().any(|&(at, _)| {
                let (l, r) = p.split_at(at);
                matches!((vocab.piece_ids.get(l), vocab.piece_ids.get(r)),
                    (Some(&a), Some(&b)) if (a as usize) < rank + NUM_RESERVED && (b as usize) < rank + NUM_RESERVED)
            });
            if !splittable {
                return Err(Error::InvalidVocab(format!("piece {p:?} is not a merge of earlier pieces")));
            }
        }
        Ok(vocab)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Candidate {
    count: u64,
    merged: String,
    left: String,
    pair: (u32, u32),
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| other.merged.cmp(&self.merged))
            .then_with(|| other.left.cmp(&self.left))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Trains a vocabulary over a stream of texts.
pub fn train_vocab<'a>(
    corpus: impl IntoIterator<Item = &'a str>,
    target_size: usize,
    num_sentinels: usize,
) -> Result<SubwordVocab> {
    let mut counts = WordCounts::default();
    let mut any = false;
    for text in corpus {
        any = true;
        counts.add_text(text);
    }
    if !any || counts.is_empty() {
        return Err(Error::InvalidInput("training corpus is empty".into()));
    }
    train_from_counts(&counts, target_size, num_sentinels)
}

/// Trains from precomputed word counts.
pub fn train_from_counts(
    counts: &WordCounts,
    target_size: usize,
    num_sentinels: usize,
) -> Result<SubwordVocab> {
    if counts.is_empty() {
        return Err(Error::InvalidInput("training corpus is empty".into()));
    }
    // Deterministic word order regardless of hash-map iteration order.
    let mut entries: Vec<(&String, &u64)> = counts.counts.iter().collect();
    entries.sort_unstable();

    let mut alphabet: Vec<char> = entries
        .iter()
        .flat_map(|(w, _)| w.chars())
        .chain(std::iter::once(WORD_MARKER))
        .collect::<HashSet<char>>()
        .into_iter()
        .collect();
    alphabet.sort_unstable();

    let specials = NUM_RESERVED + num_sentinels;
    if target_size <= alphabet.len() + specials {
        return Err(Error::Config(format!(
            "target size {target_size} too small for {} characters + {specials} specials",
            alphabet.len()
        )));
    }
    let max_pieces = target_size - specials;

    let mut pieces: Vec<String> = alphabet.iter().map(|c| c.to_string()).collect();
    let char_id: HashMap<char, u32> = alphabet
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i as u32))
        .collect();

    let mut words: Vec<Vec<u32>> = Vec::with_capacity(entries.len());
    let mut freqs: Vec<u64> = Vec::with_capacity(entries.len());
    for (w, &c) in &entries {
        words.push(
            std::iter::once(WORD_MARKER)
                .chain(w.chars())
                .map(|ch| char_id[&ch])
                .collect(),
        );
        freqs.push(c);
    }

    let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::default();
    let mut where_: HashMap<(u32, u32), HashSet<usize>> = HashMap::default();
    for (wi, w) in words.iter().enumerate() {
        for p in w.windows(2) {
            let pair = (p[0], p[1]);
            *pair_counts.entry(pair).or_insert(0) += freqs[wi];
            where_.entry(pair).or_default().insert(wi);
        }
    }

    let candidate = |pieces: &[String], pair: (u32, u32), count: u64| Candidate {
        count,
        merged: format!("{}{}", pieces[pair.0 as usize], pieces[pair.1 as usize]),
        left: pieces[pair.0 as usize].clone(),
        pair,
    };
    let mut heap: BinaryHeap<Candidate> = pair_counts
        .iter()
        .filter(|(_, &c)| c >= 2)
        .map(|(&p, &c)| candidate(&pieces, p, c))
        .collect();

    let mut merges = Vec::new();
    let mut seen_pieces: HashMap<String, u32> = pieces
        .iter()
        .enumerate()
        .map(|(i, p)| (p.clone(), i as u32))
        .collect();
    while pieces.len() < max_pieces {
        let Some(top) = heap.pop() else { break };
        let current = pair_counts.get(&top.pair).copied().unwrap_or(0);
        if current != top.count || current < 2 {
            continue;
        }
        // A string already learned from another split reuses its piece.
        let new_id = match seen_pieces.get(&top.merged) {
            Some(&id) => id,
            None => {
                let id = pieces.len() as u32;
                pieces.push(top.merged.clone());
                seen_pieces.insert(top.merged, id);
                id
            }
        };
        merges.push(top.pair);

        let affected: Vec<usize> = {
            let mut v: Vec<usize> = where_.remove(&top.pair).unwrap_or_default().into_iter().collect();
            v.sort_unstable();
            v
        };
        let mut touched: HashSet<(u32, u32)> = HashSet::default();
        for wi in affected {
            let f = freqs[wi];
            let w = &mut words[wi];
            if !w.windows(2).any(|p| (p[0], p[1]) == top.pair) {
                continue;
            }
            for p in w.windows(2) {
                let pair = (p[0], p[1]);
                if let Some(c) = pair_counts.get_mut(&pair) {
                    *c -= f;
                }
                touched.insert(pair);
            }
            let mut merged = Vec::with_capacity(w.len());
            let mut i = 0;
            while i < w.len() {
                if i + 1 < w.len() && (w[i], w[i + 1]) == top.pair {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(w[i]);
                    i += 1;
                }
            }
            *w = merged;
            for p in w.windows(2) {
                let pair = (p[0], p[1]);
                *pair_counts.entry(pair).or_insert(0) += f;
                where_.entry(pair).or_default().insert(wi);
                touched.insert(pair);
            }
        }
        pair_counts.remove(&top.pair);
        let mut touched: Vec<(u32, u32)> = touched.into_iter().collect();
        touched.sort_unstable();
        for pair in touched {
            match pair_counts.get(&pair).copied() {
                Some(0) => {
                    pair_counts.remove(&pair);
                }
                Some(c) if c >= 2 && pair != top.pair => heap.push(candidate(&pieces, pair, c)),
                _ => {}
            }
        }
    }

    SubwordVocab::from_pieces(pieces, merges, num_sentinels, target_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_merge_of_tiny_corpus() {
        // Oracle: pair counts of "▁ab" x3 are (▁,a)=3, (a,b)=3; tie broken by
        // merged string: "ab" < "▁a".
        let vocab = train_vocab(["ab ab ab"], 200, 100).unwrap();
        let merges = vocab.merges();
        assert_eq!(merges[0], ("a".to_string(), "b".to_string()));
        assert!(vocab.piece_id("ab").is_some());
    }

    #[test]
    fn size_never_exceeds_target() {
        for target in [114, 120, 400] {
            let vocab = train_vocab(["abc abd abe xyz xyw abc"], target, 100).unwrap();
            assert!(vocab.size() <= target);
        }
        let vocab = train_vocab(["abc abd abe xyz xyw abc"], 114, 100).unwrap();
        assert_eq!(vocab.size(), 114);
    }

    #[test]
    fn target_too_small() {
        assert!(matches!(
            train_vocab(["abcdef"], 105, 100),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn encode_decode_basics() {
        let vocab = train_vocab(["السلام عليكم ورحمة الله", "السلام عليكم"], 200, 100).unwrap();
        assert!(vocab.encode("").is_empty());
        let ids = vocab.encode("السلام عليكم");
        assert!(!ids.contains(&UNK_ID));
        assert_eq!(vocab.decode(&ids).unwrap(), "السلام عليكم");
        assert_eq!(vocab.decode(&[vocab.sentinel_id(0).unwrap()]).unwrap(), "<extra_id_0>");
        assert_eq!(vocab.sentinel_id(0).unwrap() as usize, vocab.size() - 1);
        assert!(matches!(
            vocab.decode(&[vocab.size() as u32]),
            Err(Error::TokenOutOfRange { .. })
        ));
        assert_eq!(vocab.encode("zz"), vec![vocab.piece_id("▁").unwrap(), UNK_ID, UNK_ID]);
    }

    #[test]
    fn text_format_round_trip_and_validation() {
        let vocab = train_vocab(["ab ab abc abc abd"], 120, 10).unwrap();
        let text = vocab.to_text();
        let loaded = SubwordVocab::read_from(text.as_bytes()).unwrap();
        assert_eq!(loaded.pieces(), vocab.pieces());
        assert_eq!(loaded.size(), vocab.size());
        assert_eq!(loaded.encode("abc ab"), vocab.encode("abc ab"));

        let dup = text.clone() + "a\t999\n";
        assert!(SubwordVocab::read_from(dup.as_bytes()).is_err());
        let mut lines: Vec<&str> = text.lines().collect();
        lines.push("zzq\t");
        assert!(SubwordVocab::read_from(lines.join("\n").as_bytes()).is_err());
        let bad_header = text.replacen("arcurate-bpe", "other", 1);
        assert!(SubwordVocab::read_from(bad_header.as_bytes()).is_err());
    }
}
