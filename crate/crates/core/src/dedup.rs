//! Exact and near-duplicate removal.
//!
//! Exact duplicates are caught by the 128-bit fingerprint of the normalized
//! text. Near duplicates use MinHash signatures over word n-gram shingles,
//! bucketed by LSH banding; a candidate sharing a bucket with an earlier kept
//! document is dropped when the signature-estimated Jaccard similarity reaches
//! the threshold. The first occurrence always wins.

use std::io::{BufReader, Read, Write};
use std::path::Path;

use rustc_hash::{FxHashMap as HashMap, FxHashSet as HashSet};
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::error::{Error, Result};
use crate::ingest::Document;
use crate::util::{create_dir_all, create_file, derive_seed, mix64, open_file, Fingerprint};

/// Version of the on-disk index snapshot layout.
pub const INDEX_FORMAT_VERSION: u32 = 3;
const FINGERPRINT_MAGIC: &[u8; 8] = b"ARCFP\0\0\x01";
const BUCKET_MAGIC: &[u8; 8] = b"ARCLSH\0\x03";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupParams {
    pub k: usize,
    pub bands: usize,
    pub rows: usize,
    pub shingle_n: usize,
    pub jaccard_threshold: f64,
    /// Seed of the permutation family.
    pub seed: u64,
    /// Confirm candidates with exact shingle Jaccard instead of the estimate.
    pub exact_verification: bool,
    /// Also drop paragraphs already seen verbatim in earlier documents.
    pub paragraph_level: bool,
}

impl Default for DedupParams {
    fn default() -> Self {
        DedupParams {
            k: 256,
            bands: 32,
            rows: 8,
            shingle_n: 5,
            jaccard_threshold: 0.8,
            seed: 0x5eed,
            exact_verification: false,
            paragraph_level: false,
        }
    }
}

impl DedupParams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 16 {
            return Err(Error::Config(format!("k = {} must be at least 16", self.k)));
        }
        if self.bands * self.rows != self.k {
            return Err(Error::Config(format!(
                "bands x rows = {} x {} does not equal k = {}",
                self.bands, self.rows, self.k
            )));
        }
        if self.shingle_n == 0 {
            return Err(Error::Config("shingle_n must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.jaccard_threshold) {
            return Err(Error::Config(format!(
                "jaccard_threshold {} outside [0, 1]",
                self.jaccard_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHashSignature {
    pub k: usize,
    pub values: Vec<u32>,
    pub shingle_n: usize,
}

impl MinHashSignature {
    /// Fraction of positions where the two signatures agree.
    pub fn similarity(&self, other: &MinHashSignature) -> f64 {
        assert_eq!(self.k, other.k, "signatures of different width");
        let equal = self
            .values
            .iter()
            .zip(&other.values)
            .filter(|(a, b)| a == b)
            .count();
        equal as f64 / self.k as f64
    }
}

/// Fingerprint of the normalized text; equal texts give equal digests.
pub fn exact_fingerprint(doc: &Document) -> Fingerprint {
    Fingerprint::of(doc.text.as_bytes())
}

/// Hashes of all word `n`-gram shingles of `text`, in order of appearance
/// (duplicates included).
pub fn shingle_hashes(text: &str, n: usize) -> Result<Vec<u64>> {
    let words: Vec<u64> = text
        .split_whitespace()
        .map(|w| xxh3_64_with_seed(w.as_bytes(), 0x51_6e_67))
        .collect();
    if words.len() < n || n == 0 {
        return Err(Error::TooShortToShingle {
            words: words.len(),
            shingle_n: n,
        });
    }
    Ok(words
        .windows(n)
        .map(|win| {
            win.iter()
                .fold(n as u64, |acc, &w| mix64(acc.rotate_left(23) ^ w))
        })
        .collect())
}

/// The seeded family of `k` hash functions `h_i(s) = a_i * s + b_i` mod 2^32
/// over the high 32 bits of each shingle hash, with odd `a_i`.
#[derive(Debug, Clone)]
pub struct MinHasher {
    shingle_n: usize,
    mul: Vec<u32>,
    add: Vec<u32>,
}

impl MinHasher {
    pub fn new(params: &DedupParams) -> Self {
        let k = params.k as u64;
        MinHasher {
            shingle_n: params.shingle_n,
            mul: (0..k).map(|i| derive_seed(params.seed, 2 * i) as u32 | 1).collect(),
            add: (0..k).map(|i| derive_seed(params.seed, 2 * i + 1) as u32).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.mul.len()
    }

    pub fn signature_of_hashes(&self, shingles: &[u64]) -> MinHashSignature {
        let mut values = vec![u32::MAX; self.mul.len()];
        for &s in shingles {
            let s = (s >> 32) as u32;
            for ((v, &a), &b) in values.iter_mut().zip(&self.mul).zip(&self.add) {
                *v = (*v).min(a.wrapping_mul(s).wrapping_add(b));
            }
        }
        MinHashSignature {
            k: self.mul.len(),
            values,
            shingle_n: self.shingle_n,
        }
    }

    pub fn signature(&self, text: &str) -> Result<MinHashSignature> {
        let mut shingles = shingle_hashes(text, self.shingle_n)?;
        shingles.sort_unstable();
        shingles.dedup();
        Ok(self.signature_of_hashes(&shingles))
    }
}

/// MinHash signature of a document's shingle set.
pub fn minhash_signature(doc: &Document, params: &DedupParams) -> Result<MinHashSignature> {
    MinHasher::new(params).signature(&doc.text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DedupOutcome {
    Kept,
    ExactDuplicate,
    /// Near duplicate of the kept document at `witness` (its position among kept documents).
    NearDuplicate { witness: usize, similarity_milli: u32 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    pub exact_dropped: u64,
    pub near_dropped: u64,
    pub kept: u64,
}

impl DedupReport {
    pub fn total(&self) -> u64 {
        self.exact_dropped + self.near_dropped + self.kept
    }

    fn record(&mut self, outcome: &DedupOutcome) {
        match outcome {
            DedupOutcome::Kept => self.kept += 1,
            DedupOutcome::ExactDuplicate => self.exact_dropped += 1,
            DedupOutcome::NearDuplicate { .. } => self.near_dropped += 1,
        }
    }
}

/// Work that can be done for a document without touching the index.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub fingerprint: Fingerprint,
    pub signature: Option<MinHashSignature>,
    shingles: Option<Vec<u64>>,
}

/// Seen-fingerprint set plus LSH buckets over kept documents.
#[derive(Debug, Clone)]
pub struct DedupIndex {
    params: DedupParams,
    hasher: MinHasher,
    exact_set: HashSet<Fingerprint>,
    paragraphs: HashSet<Fingerprint>,
    bands: Vec<HashMap<u64, Vec<u32>>>,
    /// Signatures of kept documents, `k` values each, kept-order.
    signatures: Vec<u32>,
    kept_ids: Vec<Fingerprint>,
    exact_shingles: Vec<HashSet<u64>>,
}

impl DedupIndex {
    pub fn new(params: DedupParams) -> Result<Self> {
        params.validate()?;
        Ok(DedupIndex {
            hasher: MinHasher::new(&params),
            bands: vec![HashMap::default(); params.bands],
            params,
            exact_set: HashSet::default(),
            paragraphs: HashSet::default(),
            signatures: Vec::new(),
            kept_ids: Vec::new(),
            exact_shingles: Vec::new(),
        })
    }

    pub fn params(&self) -> &DedupParams {
        &self.params
    }

    pub fn kept_len(&self) -> usize {
        self.kept_ids.len()
    }

    pub fn contains_exact(&self, fp: &Fingerprint) -> bool {
        self.exact_set.contains(fp)
    }

    /// Pure per-document work: fingerprint and signature. Safe to run in parallel.
    pub fn prepare(&self, doc: &Document) -> Prepared {
        let fingerprint = exact_fingerprint(doc);
        let shingles = shingle_hashes(&doc.text, self.params.shingle_n).ok().map(|mut s| {
            s.sort_unstable();
            s.dedup();
            s
        });
        let signature = shingles.as_ref().map(|s| self.hasher.signature_of_hashes(s));
        Prepared {
            fingerprint,
            signature,
            shingles: if self.params.exact_verification { shingles } else { None },
        }
    }

    fn band_key(&self, values: &[u32], band: usize) -> u64 {
        let rows = &values[band * self.params.rows..(band + 1) * self.params.rows];
        rows.iter()
            .fold(band as u64, |acc, &v| mix64(acc.rotate_left(17) ^ v as u64))
    }

    fn kept_signature(&self, idx: usize) -> &[u32] {
        let k = self.params.k;
        &self.signatures[idx * k..(idx + 1) * k]
    }

    /// Atomic check-and-insert: classifies the document and, if it is new,
    /// records it. Documents must be committed in input order for results
    /// to be deterministic.
    pub fn insert_if_absent(&mut self, prepared: Prepared) -> DedupOutcome {
        if !self.exact_set.insert(prepared.fingerprint) {
            return DedupOutcome::ExactDuplicate;
        }
        let Some(sig) = prepared.signature else {
            // Too short to shingle: exact dedup only.
            self.kept_ids.push(prepared.fingerprint);
            self.signatures.extend(std::iter::repeat_n(u32::MAX, self.params.k));
            self.exact_shingles.push(HashSet::default());
            return DedupOutcome::Kept;
        };

        let keys: Vec<u64> = (0..self.params.bands)
            .map(|b| self.band_key(&sig.values, b))
            .collect();
        let mut candidates: Vec<u32> = keys
            .iter()
            .enumerate()
            .filter_map(|(b, key)| self.bands[b].get(key))
            .flatten()
            .copied()
            .collect();
        candidates.sort_unstable();
        candidates.dedup();

        for &c in &candidates {
            let other = self.kept_signature(c as usize);
            let equal = sig.values.iter().zip(other).filter(|(a, b)| a == b).count();
            let estimate = equal as f64 / self.params.k as f64;
            if estimate < self.params.jaccard_threshold {
                continue;
            }
            if self.params.exact_verification {
                let exact = match &prepared.shingles {
                    Some(s) => exact_jaccard_sorted(s, &self.exact_shingles[c as usize]),
                    None => 0.0,
                };
                if exact < self.params.jaccard_threshold {
                    continue;
                }
            }
            return DedupOutcome::NearDuplicate {
                witness: c as usize,
                similarity_milli: (estimate * 1000.0).round() as u32,
            };
        }

        let idx = self.kept_ids.len() as u32;
        for (b, key) in keys.into_iter().enumerate() {
            self.bands[b].entry(key).or_default().push(idx);
        }
        self.kept_ids.push(prepared.fingerprint);
        self.signatures.extend_from_slice(&sig.values);
        if self.params.exact_verification {
            self.exact_shingles
                .push(prepared.shingles.unwrap_or_default().into_iter().collect());
        }
        DedupOutcome::Kept
    }

    /// Removes paragraphs (lines) already seen in earlier documents. Returns
    /// `None` when nothing new remains.
    pub fn strip_seen_paragraphs(&mut self, doc: &Document) -> Option<Document> {
        let mut kept_lines = Vec::new();
        let mut changed = false;
        for line in doc.text.lines() {
            if self.paragraphs.insert(Fingerprint::of(line.as_bytes())) {
                kept_lines.push(line);
            } else {
                changed = true;
            }
        }
        if kept_lines.is_empty() {
            return None;
        }
        if !changed {
            return Some(doc.clone());
        }
        crate::ingest::document_from_text(&kept_lines.join("\n"), doc.source).ok()
    }

    /// Classifies one document, committing it to the index.
    pub fn process(&mut self, doc: &Document) -> (DedupOutcome, Option<Document>) {
        if self.params.paragraph_level {
            if self.exact_set.contains(&exact_fingerprint(doc)) {
                return (DedupOutcome::ExactDuplicate, None);
            }
            let Some(stripped) = self.strip_seen_paragraphs(doc) else {
                self.exact_set.insert(exact_fingerprint(doc));
                return (DedupOutcome::ExactDuplicate, None);
            };
            let original = exact_fingerprint(doc);
            let prepared = self.prepare(&stripped);
            let outcome = self.insert_if_absent(prepared);
            self.exact_set.insert(original);
            let out = matches!(outcome, DedupOutcome::Kept).then_some(stripped);
            return (outcome, out);
        }
        let prepared = self.prepare(doc);
        let outcome = self.insert_if_absent(prepared);
        let out = matches!(outcome, DedupOutcome::Kept).then(|| doc.clone());
        (outcome, out)
    }

    /// Writes the index as a sorted fingerprint file plus an LSH bucket file.
    pub fn save(&self, dir: &Path) -> Result<()> {
        create_dir_all(dir)?;
        let mut fps: Vec<Fingerprint> = self.exact_set.iter().copied().collect();
        fps.sort_unstable();
        let mut w = create_file(&dir.join("fingerprints.bin"))?;
        w.write_all(FINGERPRINT_MAGIC)?;
        w.write_all(&(fps.len() as u64).to_le_bytes())?;
        for fp in &fps {
            w.write_all(&fp.to_be_bytes())?;
        }
        w.flush()?;

        let mut w = create_file(&dir.join("lsh_buckets.bin"))?;
        w.write_all(BUCKET_MAGIC)?;
        let header = serde_json::to_vec(&self.params)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.kept_ids.len() as u64).to_le_bytes())?;
        for (i, id) in self.kept_ids.iter().enumerate() {
            w.write_all(&id.to_be_bytes())?;
            for v in self.kept_signature(i) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a snapshot written by [`DedupIndex::save`]; buckets are rebuilt
    /// from the stored signatures.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut r = BufReader::new(open_file(&dir.join("lsh_buckets.bin"))?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BUCKET_MAGIC {
            return Err(Error::InvalidInput("not an LSH bucket file".into()));
        }
        let header_len = read_u32(&mut r)? as usize;
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header)?;
        let params: DedupParams = serde_json::from_slice(&header)?;
        let mut index = DedupIndex::new(params)?;
        let kept = read_u64(&mut r)?;
        for _ in 0..kept {
            let id = read_fp(&mut r)?;
            let mut values = Vec::with_capacity(index.params.k);
            for _ in 0..index.params.k {
                values.push(read_u32(&mut r)?);
            }
            let idx = index.kept_ids.len() as u32;
            if values.iter().any(|&v| v != u32::MAX) {
                for b in 0..index.params.bands {
                    let key = index.band_key(&values, b);
                    index.bands[b].entry(key).or_default().push(idx);
                }
            }
            index.kept_ids.push(id);
            index.signatures.extend(values);
            index.exact_shingles.push(HashSet::default());
        }

        let mut r = BufReader::new(open_file(&dir.join("fingerprints.bin"))?);
        r.read_exact(&mut magic)?;
        if &magic != FINGERPRINT_MAGIC {
            return Err(Error::InvalidInput("not a fingerprint file".into()));
        }
        let n = read_u64(&mut r)?;
        let mut prev: Option<Fingerprint> = None;
        for _ in 0..n {
            let fp = read_fp(&mut r)?;
            if prev.is_some_and(|p| p >= fp) {
                return Err(Error::InvalidInput("fingerprint file not sorted".into()));
            }
            prev = Some(fp);
            index.exact_set.insert(fp);
        }
        Ok(index)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_fp(r: &mut impl Read) -> Result<Fingerprint> {
    let mut b = [0u8; 16];
    r.read_exact(&mut b)?;
    Ok(Fingerprint(u128::from_be_bytes(b)))
}

fn exact_jaccard_sorted(a: &[u64], b: &HashSet<u64>) -> f64 {
    let inter = a.iter().filter(|x| b.contains(x)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Iterator adapter yielding the documents that survive deduplication.
pub struct DedupStream<'a, I> {
    docs: I,
    index: &'a mut DedupIndex,
    report: DedupReport,
}

impl<'a, I> DedupStream<'a, I> {
    pub fn report(&self) -> DedupReport {
        self.report
    }
}

impl<I: Iterator<Item = Document>> Iterator for DedupStream<'_, I> {
    type Item = Document;

    fn next(&mut self) -> Option<Document> {
        for doc in self.docs.by_ref() {
            let (outcome, kept) = self.index.process(&doc);
            self.report.record(&outcome);
            if kept.is_some() {
                return kept;
            }
        }
        None
    }
}

/// Streams `docs` through `index`; read the counts from
/// [`DedupStream::report`] once the stream is drained.
pub fn dedup_stream<I: IntoIterator<Item = Document>>(
    docs: I,
    index: &mut DedupIndex,
) -> DedupStream<'_, I::IntoIter> {
    DedupStream {
        docs: docs.into_iter(),
        index,
        report: DedupReport::default(),
    }
}

/// Ordered-commit deduplication of a batch: signatures are computed on the
/// rayon pool, commits happen in input order.
pub fn dedup_batch(
    docs: Vec<Document>,
    index: &mut DedupIndex,
    report: &mut DedupReport,
) -> Vec<Document> {
    use rayon::prelude::*;
    if index.params.paragraph_level {
        return docs
            .into_iter()
            .filter_map(|d| {
                let (o, kept) = index.process(&d);
                report.record(&o);
                kept
            })
            .collect();
    }
    let prepared: Vec<Prepared> = {
        let idx = &*index;
        docs.par_iter().map(|d| idx.prepare(d)).collect()
    };
    docs.into_iter()
        .zip(prepared)
        .filter_map(|(doc, p)| {
            let o = index.insert_if_absent(p);
            report.record(&o);
            matches!(o, DedupOutcome::Kept).then_some(doc)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{document_from_text, Source};

    fn doc(text: &str) -> Document {
        document_from_text(text, Source::Cc).unwrap()
    }

    fn words(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn brute_jaccard(a: &str, b: &str, n: usize) -> f64 {
        fn set(t: &str, n: usize) -> HashSet<Vec<&str>> {
            let w: Vec<&str> = t.split_whitespace().collect();
            w.windows(n).map(|s| s.to_vec()).collect::<HashSet<Vec<&str>>>()
        }
        let (sa, sb) = (set(a, n), set(b, n));
        sa.intersection(&sb).count() as f64 / sa.union(&sb).count() as f64
    }

    #[test]
    fn fingerprints() {
        let a = doc("نص واحد");
        let b = doc("نص واحد");
        let c = doc("نص واحدة");
        assert_eq!(exact_fingerprint(&a), exact_fingerprint(&b));
        assert_ne!(exact_fingerprint(&a), exact_fingerprint(&c));
        // Presentation forms (isolated beh, lam-alef ligature) vs base letters.
        let pres = doc("\u{FE8F}\u{FEFB}");
        let base = doc("\u{0628}\u{0644}\u{0627}");
        assert_eq!(crate::ingest::normalize_text("\u{FE8F}\u{FEFB}"), "\u{0628}\u{0644}\u{0627}");
        assert_eq!(exact_fingerprint(&pres), exact_fingerprint(&base));
    }

    #[test]
    fn identical_docs_identical_signatures() {
        let p = DedupParams::default();
        let t = words("w", 40).join(" ");
        let a = minhash_signature(&doc(&t), &p).unwrap();
        let b = minhash_signature(&doc(&t), &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.similarity(&b), 1.0);
        assert_eq!(a.values.len(), 256);
    }

    #[test]
    fn disjoint_docs_near_zero() {
        let p = DedupParams::default();
        let a = minhash_signature(&doc(&words("a", 300).join(" ")), &p).unwrap();
        let b = minhash_signature(&doc(&words("b", 300).join(" ")), &p).unwrap();
        assert!(a.similarity(&b) <= 0.05);
    }

    #[test]
    fn half_overlap_estimate() {
        // Shared run of s words plus private runs; shingle sets are built so
        // the exact Jaccard is 0.5.
        let n = 5;
        let shared = words("s", 204);
        let mut a = shared.clone();
        a.extend(words("x", 100));
        let mut b = shared;
        b.extend(words("y", 100));
        let (a, b) = (a.join(" "), b.join(" "));
        let exact = brute_jaccard(&a, &b, n);
        assert!((exact - 0.5).abs() < 1e-12, "{exact}");
        let p = DedupParams::default();
        let sa = minhash_signature(&doc(&a), &p).unwrap();
        let sb = minhash_signature(&doc(&b), &p).unwrap();
        assert!((sa.similarity(&sb) - exact).abs() <= 0.10);
    }

    #[test]
    fn too_short_to_shingle() {
        let p = DedupParams::default();
        assert!(matches!(
            minhash_signature(&doc("a b c"), &p),
            Err(Error::TooShortToShingle { words: 3, shingle_n: 5 })
        ));
    }

    #[test]
    fn same_doc_five_times() {
        let d = doc(&words("w", 100).join(" "));
        let mut idx = DedupIndex::new(DedupParams::default()).unwrap();
        let mut stream = dedup_stream(vec![d.clone(); 5], &mut idx);
        let kept: Vec<_> = stream.by_ref().collect();
        let report = stream.report();
        assert_eq!(kept.len(), 1);
        assert_eq!(
            report,
            DedupReport {
                exact_dropped: 4,
                near_dropped: 0,
                kept: 1
            }
        );
    }

    #[test]
    fn appended_word_is_near_duplicate() {
        let base = words("w", 500);
        let mut longer = base.clone();
        longer.push("extra".into());
        let (a, b) = (base.join(" "), longer.join(" "));
        assert!(brute_jaccard(&a, &b, 5) > 0.8);
        let mut idx = DedupIndex::new(DedupParams::default()).unwrap();
        let mut stream = dedup_stream(vec![doc(&a), doc(&b)], &mut idx);
        let kept: Vec<_> = stream.by_ref().collect();
        assert_eq!(kept.len(), 1);
        assert_eq!(stream.report().near_dropped, 1);
    }

    #[test]
    fn unrelated_docs_both_kept() {
        let mut idx = DedupIndex::new(DedupParams::default()).unwrap();
        let docs = vec![doc(&words("a", 80).join(" ")), doc(&words("b", 80).join(" "))];
        let mut stream = dedup_stream(docs, &mut idx);
        assert_eq!(stream.by_ref().count(), 2);
        assert_eq!(stream.report().kept, 2);
    }

    #[test]
    fn short_docs_only_exact_deduped() {
        let mut idx = DedupIndex::new(DedupParams::default()).unwrap();
        let docs = vec![doc("a b"), doc("a b"), doc("a c")];
        let mut stream = dedup_stream(docs, &mut idx);
        assert_eq!(stream.by_ref().count(), 2);
        assert_eq!(stream.report().exact_dropped, 1);
    }

    #[test]
    fn exact_verification_rejects_estimate_only_matches() {
        let base = words("w", 500);
        let mut longer = base.clone();
        longer.push("extra".into());
        let params = DedupParams {
            exact_verification: true,
            ..Default::default()
        };
        let mut idx = DedupIndex::new(params).unwrap();
        let mut stream = dedup_stream(vec![doc(&base.join(" ")), doc(&longer.join(" "))], &mut idx);
        assert_eq!(stream.by_ref().count(), 1);
        assert_eq!(stream.report().near_dropped, 1);
    }

    #[test]
    fn paragraph_mode_strips_seen_paragraphs() {
        let p1 = words("p", 20).join(" ");
        let p2 = words("q", 20).join(" ");
        let p3 = words("r", 20).join(" ");
        let params = DedupParams {
            paragraph_level: true,
            ..Default::default()
        };
        let mut idx = DedupIndex::new(params).unwrap();
        let docs = vec![
            doc(&format!("{p1}\n{p2}")),
            doc(&format!("{p2}\n{p3}")),
            doc(&p1),
        ];
        let mut stream = dedup_stream(docs, &mut idx);
        let kept: Vec<_> = stream.by_ref().collect();
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[1].text, p3);
        assert_eq!(stream.report().exact_dropped, 1);
    }

    #[test]
    fn bad_params_rejected() {
        let p = DedupParams {
            bands: 30,
            ..Default::default()
        };
        assert!(DedupIndex::new(p).is_err());
        let p = DedupParams {
            k: 8,
            bands: 8,
            rows: 1,
            ..Default::default()
        };
        assert!(DedupIndex::new(p).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut idx = DedupIndex::new(DedupParams::default()).unwrap();
        let a = doc(&words("a", 100).join(" "));
        let b = doc(&words("b", 100).join(" "));
        let _ = dedup_stream(vec![a.clone(), b.clone()], &mut idx).count();
        idx.save(dir.path()).unwrap();
        let mut loaded = DedupIndex::load(dir.path()).unwrap();
        assert_eq!(loaded.kept_len(), 2);
        let mut more = a.text.clone();
        more.push_str(" tail");
        let mut stream = dedup_stream(vec![a, doc(&more)], &mut loaded);
        assert_eq!(stream.by_ref().count(), 0);
        assert_eq!(stream.report().exact_dropped, 1);
        assert_eq!(stream.report().near_dropped, 1);
    }
}
