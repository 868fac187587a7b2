//! End-to-end batch pipeline: ingest, filter, dedup, tokenizer training and
//! span corruption, with a manifest that makes every run resumable.
//!
//! Layout of an output directory:
//!
//! ```text
//! manifest.json
//! ingest/docs-NNNNN.jsonl       normalized documents
//! filtered/docs-NNNNN.jsonl     documents that passed the quality rules
//! filtered/decisions.jsonl      one decision per ingested document
//! clean/docs-NNNNN.jsonl        deduplicated documents
//! dedup_index/                  index snapshot (optional)
//! tokenizer/vocab.txt
//! corrupt/examples-NNNNN.bin    span-corruption records
//! corrupt/sidecar.json
//! corrupt/debug.jsonl
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dedup::{dedup_batch, DedupIndex, DedupParams, DedupReport};
use crate::error::{Error, Result};
use crate::filter::{apply_filters, CorpusStats, FilterConfig, FilterDecision};
use crate::ingest::{open_maybe_gzip, to_document, Document, JsonlReader, RawRecord, Source, WetReader};
use crate::span::{
    corrupt, max_chunk_len, pack_examples, write_debug_jsonl, DebugRecord, NoiseSpec, RecordWriter, Sidecar,
    SpanCorruptionExample, SpecialTokens, MIN_SEQ_LEN,
};
use crate::tokenizer::{train_from_counts, EncodeCache, SubwordVocab, WordCounts, DEFAULT_NUM_SENTINELS, NUM_RESERVED};
use crate::util::{create_dir_all, create_file, derive_seed, hash_file, open_file, write_atomic, Fingerprint};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_SHARD_BYTES: u64 = 256 * 1024 * 1024;
/// Environment variable naming a stage to abort in after its first batch.
/// Used by crash-recovery tests.
pub const FAULT_ENV: &str = "ARCURATE_FAULT_STAGE";

const BATCH_DOCS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    Wet,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub path: PathBuf,
    pub format: SourceFormat,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerParams {
    pub target_size: usize,
    pub num_sentinels: usize,
}

impl Default for TokenizerParams {
    fn default() -> Self {
        TokenizerParams {
            target_size: 8_000,
            num_sentinels: DEFAULT_NUM_SENTINELS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sources: Vec<SourceSpec>,
    pub filter: FilterConfig,
    pub dedup: DedupParams,
    pub tokenizer: TokenizerParams,
    pub noise: NoiseSpec,
    pub seq_len: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub workers: usize,
    /// Upper bound on a JSONL document shard.
    pub shard_bytes: u64,
    /// Span-corruption records per `.bin` file.
    pub examples_per_file: u64,
    /// Leading examples mirrored to `corrupt/debug.jsonl` with decoded text.
    pub debug_examples: usize,
    pub save_dedup_index: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sources: Vec::new(),
            filter: FilterConfig::default(),
            dedup: DedupParams::default(),
            tokenizer: TokenizerParams::default(),
            noise: NoiseSpec::default(),
            seq_len: 512,
            output_dir: PathBuf::from("out"),
            seed: 0,
            workers: 1,
            shard_bytes: DEFAULT_SHARD_BYTES,
            examples_per_file: 65_536,
            debug_examples: 16,
            save_dedup_index: true,
        }
    }
}

impl PipelineConfig {
    /// Loads a JSON config; relative paths are resolved against the config
    /// file's directory.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut cfg.sources {
            if s.path.is_relative() {
                s.path = base.join(&s.path);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::Config("no sources configured".into()));
        }
        for s in &self.sources {
            if !s.path.is_file() {
                return Err(Error::Config(format!("source {} does not exist", s.path.display())));
            }
        }
        self.filter.validate()?;
        self.dedup.validate()?;
        self.noise.validate()?;
        if self.seq_len < MIN_SEQ_LEN {
            return Err(Error::Config(format!("seq_len {} is below {MIN_SEQ_LEN}", self.seq_len)));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.shard_bytes == 0 || self.examples_per_file == 0 {
            return Err(Error::Config("shard_bytes and examples_per_file must be positive".into()));
        }
        let t = &self.tokenizer;
        if t.target_size <= NUM_RESERVED + t.num_sentinels {
            return Err(Error::Config(format!(
                "tokenizer target_size {} leaves no room for pieces",
                t.target_size
            )));
        }
        let (_, spans) = self.noise.budget(max_chunk_len(self.seq_len, &self.noise));
        if spans > t.num_sentinels {
            return Err(Error::Config(format!(
                "seq_len {} needs {spans} sentinels, only {} configured",
                self.seq_len, t.num_sentinels
            )));
        }
        Ok(())
    }

    /// Hash of everything that affects outputs; `workers` and `output_dir`
    /// are excluded.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("workers");
            m.remove("output_dir");
        }
        Fingerprint::of(v.to_string().as_bytes()).to_hex()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Filter,
    Dedup,
    TrainTokenizer,
    Corrupt,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Ingest, Stage::Filter, Stage::Dedup, Stage::TrainTokenizer, Stage::Corrupt];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Filter => "filter",
            Stage::Dedup => "dedup",
            Stage::TrainTokenizer => "train_tokenizer",
            Stage::Corrupt => "corrupt",
        }
    }

    fn position(self) -> usize {
        Stage::ALL.iter().position(|&s| s == self).expect("stage listed")
    }

    /// Directories owned by the stage, relative to the output directory.
    fn dirs(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &["ingest"],
            Stage::Filter => &["filtered"],
            Stage::Dedup => &["clean", "dedup_index"],
            Stage::TrainTokenizer => &["tokenizer"],
            Stage::Corrupt => &["corrupt"],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s || st.as_str().replace('_', "-") == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the output directory, or absolute for inputs.
    pub path: String,
    pub bytes: u64,
    pub hash: Fingerprint,
}

impl FileRecord {
    fn of(path: &Path, shown: String) -> Result<Self> {
        let bytes = fs::metadata(path).map_err(|e| Error::io_at(path, e))?.len();
        Ok(FileRecord {
            path: shown,
            bytes,
            hash: hash_file(path)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    /// Units entering the stage (records for ingest, documents afterwards).
    pub input_count: u64,
    pub output_count: u64,
    /// Units dropped, by reason. `input_count = output_count + sum(dropped)`.
    pub dropped: BTreeMap<String, u64>,
    pub input_bytes: u64,
    pub output_bytes: u64,
    /// Document bytes written, by source tag.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub output_bytes_by_source: BTreeMap<String, u64>,
    /// Stage-specific counters.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub counters: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl StageRecord {
    fn new(stage: Stage) -> Self {
        StageRecord {
            stage,
            status: StageStatus::Failed,
            input_count: 0,
            output_count: 0,
            dropped: BTreeMap::new(),
            input_bytes: 0,
            output_bytes: 0,
            output_bytes_by_source: BTreeMap::new(),
            counters: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seconds: 0.0,
            error: None,
        }
    }

    fn drop_one(&mut self, reason: &str) {
        *self.dropped.entry(reason.to_string()).or_insert(0) += 1;
    }

    pub fn dropped_total(&self) -> u64 {
        self.dropped.values().sum()
    }

    fn output_paths(&self, out_dir: &Path, prefix: &str) -> Vec<PathBuf> {
        self.outputs
            .iter()
            .filter(|f| f.path.starts_with(prefix))
            .map(|f| out_dir.join(&f.path))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_stats: Option<CorpusStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dedup_report: Option<DedupReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokenizer_fingerprint: Option<Fingerprint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<Stage>,
}

impl RunManifest {
    fn new(config: &PipelineConfig) -> Self {
        RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: config.config_hash(),
            seed: config.seed,
            config: config.clone(),
            stages: Vec::new(),
            corpus_stats: None,
            dedup_report: None,
            tokenizer_fingerprint: None,
            failed_stage: None,
        }
    }

    pub fn load(output_dir: &Path) -> Result<Self> {
        let path = output_dir.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(Error::InvalidInput(format!("no manifest at {}", path.display())));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io_at(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn save(&self, output_dir: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        write_atomic(&output_dir.join(MANIFEST_FILE), json.as_bytes())
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    pub fn is_complete(&self) -> bool {
        Stage::ALL
            .iter()
            .all(|s| self.stage(*s).is_some_and(|r| r.status == StageStatus::Complete))
    }

    /// Copy with wall-clock fields and run-local settings blanked, for
    /// comparing runs.
    pub fn comparable(&self) -> RunManifest {
        let mut m = self.clone();
        m.config.workers = 0;
        m.config.output_dir = PathBuf::new();
        for s in &mut m.stages {
            s.seconds = 0.0;
        }
        m
    }

    /// Checks `input = output + dropped` inside each stage and that each
    /// document stage consumes exactly what the previous one produced.
    pub fn check_conservation(&self) -> Result<()> {
        let mut prev: Option<&StageRecord> = None;
        for rec in &self.stages {
            if rec.input_count != rec.output_count + rec.dropped_total() {
                return Err(Error::InvalidInput(format!(
                    "stage {}: {} in != {} out + {} dropped",
                    rec.stage,
                    rec.input_count,
                    rec.output_count,
                    rec.dropped_total()
                )));
            }
            if let Some(p) = prev {
                if p.status == StageStatus::Complete && rec.input_count != p.output_count {
                    return Err(Error::InvalidInput(format!(
                        "stage {} consumed {} documents but {} produced {}",
                        rec.stage, rec.input_count, p.stage, p.output_count
                    )));
                }
            }
            prev = Some(rec);
        }
        Ok(())
    }

    fn refresh_summaries(&mut self) {
        let done = |r: &&StageRecord| r.status == StageStatus::Complete;
        let dedup = self.stage(Stage::Dedup).filter(done);
        let dedup_report = dedup.map(|d| DedupReport {
            exact_dropped: d.dropped.get("exact_duplicate").copied().unwrap_or(0),
            near_dropped: d.dropped.get("near_duplicate").copied().unwrap_or(0),
            kept: d.output_count,
        });
        let corpus_stats = match (self.stage(Stage::Ingest), dedup) {
            (Some(ing), Some(d)) => {
                let rows: Vec<(String, u64, u64)> = ing
                    .output_bytes_by_source
                    .iter()
                    .filter(|(_, &o)| o > 0)
                    .map(|(s, &o)| (s.clone(), o, d.output_bytes_by_source.get(s).copied().unwrap_or(0)))
                    .collect();
                if rows.is_empty() {
                    None
                } else {
                    CorpusStats::from_rows(rows).ok()
                }
            }
            _ => None,
        };
        let tokenizer_fingerprint = self
            .stage(Stage::TrainTokenizer)
            .filter(done)
            .and_then(|t| t.outputs.first().map(|f| f.hash));
        self.dedup_report = dedup_report;
        self.corpus_stats = corpus_stats;
        self.tokenizer_fingerprint = tokenizer_fingerprint;
    }
}

struct Ctx<'a> {
    config: &'a PipelineConfig,
    out: &'a Path,
    fault: Option<Stage>,
}

impl Ctx<'_> {
    fn maybe_fault(&self, stage: Stage) {
        if self.fault == Some(stage) {
            warn!("fault injection: aborting in stage {stage}");
            std::process::abort();
        }
    }
}

/// Rolling JSONL shard writer.
struct ShardWriter {
    dir: PathBuf,
    prefix: &'static str,
    max_bytes: u64,
    current: Option<(std::io::BufWriter<fs::File>, u64)>,
    files: Vec<PathBuf>,
}

impl ShardWriter {
    fn new(dir: PathBuf, prefix: &'static str, max_bytes: u64) -> Self {
        ShardWriter {
            dir,
            prefix,
            max_bytes,
            current: None,
            files: Vec::new(),
        }
    }

    fn write_line(&mut self, line: &[u8]) -> Result<()> {
        let len = line.len() as u64 + 1;
        if let Some((w, size)) = &mut self.current {
            if *size > 0 && *size + len > self.max_bytes {
                w.flush()?;
                self.current = None;
            }
        }
        if self.current.is_none() {
            let path = self.dir.join(format!("{}-{:05}.jsonl", self.prefix, self.files.len()));
            self.current = Some((create_file(&path)?, 0));
            self.files.push(path);
        }
        let (w, size) = self.current.as_mut().expect("open shard");
        w.write_all(line)?;
        w.write_all(b"\n")?;
        *size += len;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if let Some((w, _)) = &mut self.current {
            w.flush()?;
        }
        Ok(())
    }

    fn finish(mut self) -> Result<Vec<PathBuf>> {
        self.flush()?;
        Ok(self.files)
    }
}

fn write_docs(writer: &mut ShardWriter, docs: &[Document], rec: &mut StageRecord) -> Result<()> {
    let lines: Vec<Vec<u8>> = docs
        .par_iter()
        .map(serde_json::to_vec)
        .collect::<std::result::Result<_, _>>()?;
    for (doc, line) in docs.iter().zip(&lines) {
        writer.write_line(line)?;
        rec.output_count += 1;
        rec.output_bytes += doc.byte_len() as u64;
        *rec
            .output_bytes_by_source
            .entry(doc.source.as_str().to_string())
            .or_insert(0) += doc.byte_len() as u64;
    }
    Ok(())
}

fn parse_docs(lines: &mut Vec<String>) -> Result<Vec<Document>> {
    let docs = lines
        .par_iter()
        .map(|l| serde_json::from_str::<Document>(l))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    lines.clear();
    Ok(docs)
}

/// Reads document shards in order and hands them over in batches.
fn for_each_doc_batch(files: &[PathBuf], mut f: impl FnMut(Vec<Document>) -> Result<()>) -> Result<()> {
    let mut lines = Vec::with_capacity(BATCH_DOCS);
    for path in files {
        let reader = BufReader::with_capacity(1 << 20, open_file(path)?);
        for line in reader.lines() {
            let line = line.map_err(|e| Error::io_at(path, e))?;
            if line.is_empty() {
                continue;
            }
            lines.push(line);
            if lines.len() == BATCH_DOCS {
                f(parse_docs(&mut lines)?)?;
            }
        }
    }
    if !lines.is_empty() {
        f(parse_docs(&mut lines)?)?;
    }
    Ok(())
}

fn previous(manifest: &RunManifest, stage: Stage) -> Result<&StageRecord> {
    manifest
        .stage(stage)
        .filter(|r| r.status == StageStatus::Complete)
        .ok_or_else(|| Error::InvalidInput(format!("stage {stage} has not completed")))
}

fn stage_ingest(ctx: &Ctx, _: &RunManifest, rec: &mut StageRecord) -> Result<()> {
    let dir = ctx.out.join("ingest");
    let mut writer = ShardWriter::new(dir, "docs", ctx.config.shard_bytes);
    let mut batch: Vec<(RawRecord, Source)> = Vec::with_capacity(BATCH_DOCS);
    let mut flushed = false;

    let mut flush = |batch: &mut Vec<(RawRecord, Source)>, rec: &mut StageRecord, writer: &mut ShardWriter| -> Result<()> {
        let results: Vec<Result<Document>> = batch.par_iter().map(|(r, s)| to_document(r, *s)).collect();
        let mut docs = Vec::with_capacity(results.len());
        for r in results {
            match r {
                Ok(d) => docs.push(d),
                Err(Error::EmptyDocument) => rec.drop_one("empty"),
                Err(Error::TooManyReplacements { .. }) => rec.drop_one("bad_encoding"),
                Err(e) => return Err(e),
            }
        }
        batch.clear();
        write_docs(writer, &docs, rec)?;
        if !flushed {
            flushed = true;
            writer.flush()?;
            ctx.maybe_fault(Stage::Ingest);
        }
        Ok(())
    };

    for spec in &ctx.config.sources {
        rec.inputs
            .push(FileRecord::of(&spec.path, spec.path.display().to_string())?);
        rec.input_bytes += rec.inputs.last().expect("pushed").bytes;
        let stream = open_maybe_gzip(&spec.path)?;
        let handle = |item: Result<(RawRecord, Source)>, rec: &mut StageRecord, batch: &mut Vec<_>| -> Result<()> {
            rec.input_count += 1;
            match item {
                Ok(pair) => batch.push(pair),
                Err(Error::MalformedRecord { offset, reason }) => {
                    warn!("{}: malformed record at {offset}: {reason}", spec.path.display());
                    rec.drop_one("malformed");
                }
                Err(Error::TruncatedRecord { offset, .. }) => {
                    warn!("{}: truncated record at {offset}", spec.path.display());
                    rec.drop_one("truncated");
                }
                Err(e) => return Err(e),
            }
            Ok(())
        };
        match spec.format {
            SourceFormat::Wet => {
                for item in WetReader::new(stream) {
                    handle(item.map(|r| (r, spec.source)), rec, &mut batch)?;
                    if batch.len() == BATCH_DOCS {
                        flush(&mut batch, rec, &mut writer)?;
                    }
                }
            }
            SourceFormat::Jsonl => {
                for item in JsonlReader::new(stream) {
                    let item = item.map(|(line_no, j)| {
                        let source = j
                            .source
                            .as_deref()
                            .and_then(|s| s.parse().ok())
                            .unwrap_or(spec.source);
                        (j.into_raw(line_no), source)
                    });
                    handle(item, rec, &mut batch)?;
                    if batch.len() == BATCH_DOCS {
                        flush(&mut batch, rec, &mut writer)?;
                    }
                }
            }
        }
    }
    if !batch.is_empty() {
        flush(&mut batch, rec, &mut writer)?;
    }
    finish_outputs(ctx, rec, writer.finish()?)
}

fn finish_outputs(ctx: &Ctx, rec: &mut StageRecord, files: Vec<PathBuf>) -> Result<()> {
    for path in files {
        let shown = path
            .strip_prefix(ctx.out)
            .unwrap_or(&path)
            .to_string_lossy()
            .replace('\\', "/");
        rec.outputs.push(FileRecord::of(&path, shown)?);
    }
    Ok(())
}

fn stage_filter(ctx: &Ctx, manifest: &RunManifest, rec: &mut StageRecord) -> Result<()> {
    let inputs = previous(manifest, Stage::Ingest)?.output_paths(ctx.out, "ingest/");
    let dir = ctx.out.join("filtered");
    let mut writer = ShardWriter::new(dir.clone(), "docs", ctx.config.shard_bytes);
    let decisions_path = dir.join("decisions.jsonl");
    let mut decisions = create_file(&decisions_path)?;
    let mut first = true;
    for_each_doc_batch(&inputs, |docs| {
        let verdicts: Vec<FilterDecision> = docs.par_iter().map(|d| apply_filters(d, &ctx.config.filter)).collect();
        let mut kept = Vec::with_capacity(docs.len());
        for (doc, decision) in docs.into_iter().zip(&verdicts) {
            rec.input_count += 1;
            rec.input_bytes += doc.byte_len() as u64;
            serde_json::to_writer(&mut decisions, decision)?;
            decisions.write_all(b"\n")?;
            match decision.failed_rule {
                None => kept.push(doc),
                Some(rule) => rec.drop_one(rule.as_str()),
            }
        }
        write_docs(&mut writer, &kept, rec)?;
        if std::mem::take(&mut first) {
            writer.flush()?;
            ctx.maybe_fault(Stage::Filter);
        }
        Ok(())
    })?;
    decisions.flush()?;
    drop(decisions);
    let mut files = writer.finish()?;
    files.push(decisions_path);
    finish_outputs(ctx, rec, files)
}

fn stage_dedup(ctx: &Ctx, manifest: &RunManifest, rec: &mut StageRecord) -> Result<()> {
    let inputs = previous(manifest, Stage::Filter)?.output_paths(ctx.out, "filtered/docs-");
    let mut writer = ShardWriter::new(ctx.out.join("clean"), "docs", ctx.config.shard_bytes);
    let mut index = DedupIndex::new(ctx.config.dedup.clone())?;
    let mut report = DedupReport::default();
    let mut first = true;
    for_each_doc_batch(&inputs, |docs| {
        rec.input_count += docs.len() as u64;
        rec.input_bytes += docs.iter().map(|d| d.byte_len() as u64).sum::<u64>();
        let kept = dedup_batch(docs, &mut index, &mut report);
        write_docs(&mut writer, &kept, rec)?;
        if std::mem::take(&mut first) {
            writer.flush()?;
            ctx.maybe_fault(Stage::Dedup);
        }
        Ok(())
    })?;
    // Paragraph mode may keep a stripped document, so count from the report.
    rec.dropped.insert("exact_duplicate".into(), report.exact_dropped);
    rec.dropped.insert("near_duplicate".into(), report.near_dropped);
    rec.dropped.retain(|_, v| *v > 0);
    let mut files = writer.finish()?;
    if ctx.config.save_dedup_index {
        let dir = ctx.out.join("dedup_index");
        index.save(&dir)?;
        files.push(dir.join("fingerprints.bin"));
        files.push(dir.join("lsh_buckets.bin"));
    }
    finish_outputs(ctx, rec, files)
}

fn stage_tokenizer(ctx: &Ctx, manifest: &RunManifest, rec: &mut StageRecord) -> Result<()> {
    let inputs = previous(manifest, Stage::Dedup)?.output_paths(ctx.out, "clean/");
    let mut counts = WordCounts::default();
    for_each_doc_batch(&inputs, |docs| {
        rec.input_count += docs.len() as u64;
        rec.output_count += docs.len() as u64;
        rec.input_bytes += docs.iter().map(|d| d.byte_len() as u64).sum::<u64>();
        let partial = docs
            .par_iter()
            .fold(WordCounts::default, |mut wc, d| {
                wc.add_text(&d.text);
                wc
            })
            .reduce(WordCounts::default, |mut a, b| {
                a.merge(b);
                a
            });
        counts.merge(partial);
        Ok(())
    })?;
    ctx.maybe_fault(Stage::TrainTokenizer);
    let t = &ctx.config.tokenizer;
    let vocab = train_from_counts(&counts, t.target_size, t.num_sentinels)?;
    rec.counters.insert("distinct_words".into(), counts.len() as u64);
    rec.counters.insert("vocab_size".into(), vocab.size() as u64);
    rec.counters.insert("pieces".into(), vocab.num_pieces() as u64);
    let dir = ctx.out.join("tokenizer");
    create_dir_all(&dir)?;
    let path = dir.join("vocab.txt");
    vocab.save(&path)?;
    rec.output_bytes = fs::metadata(&path).map_err(|e| Error::io_at(&path, e))?.len();
    finish_outputs(ctx, rec, vec![path])
}

struct RecordFiles {
    dir: PathBuf,
    per_file: u64,
    current: Option<RecordWriter<std::io::BufWriter<fs::File>>>,
    files: Vec<PathBuf>,
}

impl RecordFiles {
    fn write(&mut self, input: &[u32], target: &[u32]) -> Result<()> {
        if self.current.as_ref().is_some_and(|w| w.records() >= self.per_file) {
            let mut w = self.current.take().expect("open").finish()?;
            w.flush()?;
        }
        if self.current.is_none() {
            let path = self.dir.join(format!("examples-{:05}.bin", self.files.len()));
            self.current = Some(RecordWriter::new(create_file(&path)?)?);
            self.files.push(path);
        }
        self.current.as_mut().expect("open").write(input, target)?;
        Ok(())
    }

    fn finish(mut self) -> Result<Vec<PathBuf>> {
        if let Some(w) = self.current.take() {
            w.finish()?.flush()?;
        }
        Ok(self.files)
    }
}

fn stage_corrupt(ctx: &Ctx, manifest: &RunManifest, rec: &mut StageRecord) -> Result<()> {
    let inputs = previous(manifest, Stage::Dedup)?.output_paths(ctx.out, "clean/");
    let vocab_path = previous(manifest, Stage::TrainTokenizer)?.output_paths(ctx.out, "tokenizer/vocab.txt");
    let vocab = SubwordVocab::load(vocab_path.first().ok_or_else(|| Error::InvalidInput("no vocabulary".into()))?)?;
    let specials = SpecialTokens::for_vocab(&vocab);
    let spec = NoiseSpec {
        seed: derive_seed(ctx.config.seed, ctx.config.noise.seed),
        ..ctx.config.noise.clone()
    };
    let seq_len = ctx.config.seq_len;
    let chunk_len = max_chunk_len(seq_len, &spec);
    let dir = ctx.out.join("corrupt");
    create_dir_all(&dir)?;
    let mut files = RecordFiles {
        dir: dir.clone(),
        per_file: ctx.config.examples_per_file,
        current: None,
        files: Vec::new(),
    };
    let debug_path = dir.join("debug.jsonl");
    let mut debug = create_file(&debug_path)?;
    let mut sidecar = Sidecar {
        spec: spec.clone(),
        seed: ctx.config.seed,
        seq_len,
        examples: 0,
        input_tokens: 0,
        corrupted_tokens: 0,
        spans: 0,
        files: Vec::new(),
    };
    let mut stream: Vec<u32> = Vec::new();
    let mut cache = EncodeCache::default();
    let mut counter = 0u64;
    let mut first = true;

    let mut emit = |chunks: Vec<&[u32]>, sidecar: &mut Sidecar, files: &mut RecordFiles, counter: &mut u64| -> Result<()> {
        let base = *counter;
        let examples: Vec<SpanCorruptionExample> = chunks
            .par_iter()
            .enumerate()
            .map(|(i, c)| corrupt(c, &spec, base + i as u64, &specials))
            .collect::<Result<_>>()?;
        *counter += examples.len() as u64;
        for (c, ex) in chunks.iter().zip(&examples) {
            sidecar.input_tokens += c.len() as u64;
            sidecar.corrupted_tokens += ex.corrupted_len(&specials) as u64;
            sidecar.spans += ex.num_spans(&specials) as u64;
        }
        for packed in pack_examples(examples, seq_len, specials)? {
            let packed = packed?;
            if (sidecar.examples as usize) < ctx.config.debug_examples {
                write_debug_jsonl(
                    &mut debug,
                    &DebugRecord {
                        input_text: Some(vocab.decode(&packed.input_ids)?),
                        target_text: Some(vocab.decode(&packed.target_ids)?),
                        input_ids: packed.input_ids.clone(),
                        target_ids: packed.target_ids.clone(),
                    },
                )?;
            }
            files.write(&packed.input_ids, &packed.target_ids)?;
            sidecar.examples += 1;
        }
        Ok(())
    };

    for_each_doc_batch(&inputs, |docs| {
        rec.input_count += docs.len() as u64;
        rec.output_count += docs.len() as u64;
        rec.input_bytes += docs.iter().map(|d| d.byte_len() as u64).sum::<u64>();
        let encoded: Vec<_> = docs
            .par_iter()
            .map(|d| {
                let mut ids = Vec::with_capacity(d.text.len() / 4);
                let mut misses = Vec::new();
                vocab.encode_shared(&d.text, &cache, &mut ids, &mut misses);
                ids.push(specials.eos);
                (ids, misses)
            })
            .collect();
        for (ids, misses) in encoded {
            stream.extend_from_slice(&ids);
            cache.absorb(misses);
        }
        let full = stream.len() / chunk_len * chunk_len;
        if full > 0 {
            emit(stream[..full].chunks(chunk_len).collect(), &mut sidecar, &mut files, &mut counter)?;
            stream.drain(..full);
        }
        if std::mem::take(&mut first) {
            ctx.maybe_fault(Stage::Corrupt);
        }
        Ok(())
    })?;
    if stream.len() >= 2 {
        emit(vec![&stream[..]], &mut sidecar, &mut files, &mut counter)?;
    }
    debug.flush()?;
    drop(debug);
    let mut out_files = files.finish()?;
    sidecar.files = out_files
        .iter()
        .map(|p| p.file_name().expect("file").to_string_lossy().into_owned())
        .collect();
    let sidecar_path = dir.join("sidecar.json");
    write_atomic(&sidecar_path, serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
    rec.counters.insert("examples".into(), sidecar.examples);
    rec.counters.insert("input_tokens".into(), sidecar.input_tokens);
    rec.counters.insert("corrupted_tokens".into(), sidecar.corrupted_tokens);
    rec.counters.insert("spans".into(), sidecar.spans);
    out_files.push(sidecar_path);
    out_files.push(debug_path);
    finish_outputs(ctx, rec, out_files)?;
    rec.output_bytes = rec.outputs.iter().map(|f| f.bytes).sum();
    Ok(())
}

fn run_stage(stage: Stage, ctx: &Ctx, manifest: &RunManifest, rec: &mut StageRecord) -> Result<()> {
    match stage {
        Stage::Ingest => stage_ingest(ctx, manifest, rec),
        Stage::Filter => stage_filter(ctx, manifest, rec),
        Stage::Dedup => stage_dedup(ctx, manifest, rec),
        Stage::TrainTokenizer => stage_tokenizer(ctx, manifest, rec),
        Stage::Corrupt => stage_corrupt(ctx, manifest, rec),
    }
}

fn verify_stage(out: &Path, rec: &StageRecord) -> bool {
    if rec.status != StageStatus::Complete {
        return false;
    }
    let inputs_ok = rec.inputs.iter().all(|f| {
        let p = Path::new(&f.path);
        fs::metadata(p).is_ok_and(|m| m.len() == f.bytes) && hash_file(p).is_ok_and(|h| h == f.hash)
    });
    inputs_ok
        && rec.outputs.iter().all(|f| {
            let p = out.join(&f.path);
            fs::metadata(&p).is_ok_and(|m| m.len() == f.bytes) && hash_file(&p).is_ok_and(|h| h == f.hash)
        })
}

fn remove_stage_dirs(out: &Path, stage: Stage) -> Result<()> {
    for d in stage.dirs() {
        let p = out.join(d);
        if p.exists() {
            fs::remove_dir_all(&p).map_err(|e| Error::io_at(&p, e))?;
        }
    }
    for d in stage.dirs() {
        if *d != "dedup_index" {
            create_dir_all(&out.join(d))?;
        }
    }
    Ok(())
}

fn execute(config: &PipelineConfig, prior: Option<RunManifest>, through: Stage) -> Result<RunManifest> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| execute_in_pool(config, prior, through))
}

fn execute_in_pool(config: &PipelineConfig, prior: Option<RunManifest>, through: Stage) -> Result<RunManifest> {
    let out = config.output_dir.as_path();
    create_dir_all(out)?;
    let fault = std::env::var(FAULT_ENV).ok().and_then(|s| s.parse().ok());
    let ctx = Ctx { config, out, fault };

    let mut manifest = match prior {
        Some(m) if m.config_hash == config.config_hash() => m,
        _ => RunManifest::new(config),
    };
    manifest.config = config.clone();
    manifest.failed_stage = None;
    let mut keep = 0;
    while keep < manifest.stages.len()
        && manifest.stages[keep].stage == Stage::ALL[keep]
        && verify_stage(out, &manifest.stages[keep])
    {
        keep += 1;
    }
    if keep > 0 {
        info!("reusing {keep} verified stage(s)");
    }
    manifest.stages.truncate(keep);
    manifest.refresh_summaries();
    manifest.save(out)?;

    for &stage in &Stage::ALL[keep..=through.position()] {
        remove_stage_dirs(out, stage)?;
        info!("stage {stage}: start");
        let started = Instant::now();
        let mut rec = StageRecord::new(stage);
        let result = run_stage(stage, &ctx, &manifest, &mut rec);
        rec.seconds = started.elapsed().as_secs_f64();
        match result {
            Ok(()) => {
                rec.status = StageStatus::Complete;
                info!(
                    "stage {stage}: {} in, {} out, {} dropped, {:.1}s",
                    rec.input_count,
                    rec.output_count,
                    rec.dropped_total(),
                    rec.seconds
                );
                manifest.stages.push(rec);
                manifest.refresh_summaries();
                manifest.save(out)?;
            }
            Err(e) => {
                rec.error = Some(e.to_string());
                manifest.failed_stage = Some(stage);
                manifest.stages.push(rec);
                manifest.save(out)?;
                return Err(Error::Stage {
                    stage: stage.to_string(),
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(manifest)
}

/// Runs every stage from scratch.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunManifest> {
    execute(config, None, Stage::Corrupt)
}

/// Runs up to and including `through`, reusing verified stages of a prior
/// run in the same output directory when the config hash matches.
pub fn run_through(config: &PipelineConfig, through: Stage) -> Result<RunManifest> {
    config.validate()?;
    let prior = RunManifest::load(&config.output_dir).ok();
    execute(config, prior, through)
}

/// Continues a prior run. With `config`, its hash must match the recorded
/// one; without, the recorded config is reused.
pub fn resume(output_dir: &Path, config: Option<&PipelineConfig>) -> Result<RunManifest> {
    let prior = RunManifest::load(output_dir)?;
    let mut cfg = match config {
        Some(c) => {
            let current = c.config_hash();
            if current != prior.config_hash {
                return Err(Error::ConfigMismatch {
                    recorded: prior.config_hash.clone(),
                    current,
                });
            }
            c.clone()
        }
        None => prior.config.clone(),
    };
    cfg.output_dir = output_dir.to_path_buf();
    execute(&cfg, Some(prior), Stage::Corrupt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub json: String,
}

/// Human-readable summary plus the manifest as JSON.
pub fn emit_report(manifest: &RunManifest) -> Result<Report> {
    let mut text = format!(
        "run {} (arcurate {}, seed {})\n",
        manifest.config_hash, manifest.tool_version, manifest.seed
    );
    if let Some(stats) = &manifest.corpus_stats {
        text.push('\n');
        text.push_str(&stats.render_table());
    }
    if let Some(d) = &manifest.dedup_report {
        text.push_str(&format!(
            "\ndedup: {} kept, {} exact duplicates, {} near duplicates\n",
            d.kept, d.exact_dropped, d.near_dropped
        ));
    }
    if let Some(fp) = &manifest.tokenizer_fingerprint {
        text.push_str(&format!("tokenizer: {fp}\n"));
    }
    text.push_str(&format!(
        "\n{:<16} {:>8} {:>10} {:>10} {:>10} {:>9}\n",
        "stage", "status", "in", "out", "dropped", "seconds"
    ));
    for s in &manifest.stages {
        let status = match s.status {
            StageStatus::Complete => "ok",
            StageStatus::Failed => "FAILED",
        };
        text.push_str(&format!(
            "{:<16} {:>8} {:>10} {:>10} {:>10} {:>9.2}\n",
            s.stage.as_str(),
            status,
            s.input_count,
            s.output_count,
            s.dropped_total(),
            s.seconds
        ));
        if let Some(e) = &s.error {
            text.push_str(&format!("  error: {e}\n"));
        }
    }
    let json = serde_json::to_string_pretty(manifest)? + "\n";
    Ok(Report { text, json })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{write_fixture, FixtureFormat, SynthConfig};

    fn fixture(dir: &Path, bytes: u64) -> (PipelineConfig, crate::synth::GroundTruth) {
        let synth = SynthConfig {
            seed: 3,
            target_bytes: bytes,
            exact_dup_rate: 0.08,
            near_dup_rate: 0.08,
            noise_rate: 0.08,
            ..SynthConfig::default()
        };
        let fx = write_fixture(&synth, &dir.join("src"), FixtureFormat::Wet, bytes / 3).unwrap();
        let cfg = PipelineConfig {
            sources: fx
                .files
                .iter()
                .map(|p| SourceSpec {
                    path: p.clone(),
                    format: SourceFormat::Wet,
                    source: Source::Cc,
                })
                .collect(),
            tokenizer: TokenizerParams {
                target_size: 600,
                num_sentinels: 100,
            },
            seq_len: 128,
            output_dir: dir.join("out"),
            shard_bytes: 200_000,
            examples_per_file: 100,
            ..PipelineConfig::default()
        };
        (cfg, fx.truth)
    }

    #[test]
    fn empty_sources_rejected() {
        let e = run_pipeline(&PipelineConfig::default()).unwrap_err();
        assert!(e.is_validation(), "{e}");
        assert!(!Path::new("out").exists());
    }

    #[test]
    fn end_to_end_counts() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, truth) = fixture(dir.path(), 600_000);
        let m = run_pipeline(&cfg).unwrap();
        assert!(m.is_complete());
        m.check_conservation().unwrap();
        let d = m.dedup_report.unwrap();
        assert_eq!(d.exact_dropped, truth.exact_duplicates);
        assert_eq!(d.near_dropped, truth.near_duplicates);
        assert_eq!(m.stage(Stage::Filter).unwrap().dropped_total(), truth.noise);
        assert_eq!(m.stage(Stage::Ingest).unwrap().input_count, truth.documents);
        let stats = m.corpus_stats.as_ref().unwrap();
        assert_eq!(stats.rows.len(), 1);

        // A finished run resumes as a no-op.
        let again = resume(&cfg.output_dir, None).unwrap();
        assert_eq!(again.comparable(), m.comparable());
        assert_eq!(again.stages, m.stages);

        let rep = emit_report(&m).unwrap();
        let back: RunManifest = serde_json::from_str(&rep.json).unwrap();
        assert_eq!(back, m);
        assert!(rep.text.contains("dedup"));
    }

    #[test]
    fn resume_rejects_edited_config() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, _) = fixture(dir.path(), 200_000);
        run_through(&cfg, Stage::Filter).unwrap();
        let edited = PipelineConfig { seed: 99, ..cfg.clone() };
        assert!(matches!(
            resume(&cfg.output_dir, Some(&edited)).unwrap_err(),
            Error::ConfigMismatch { .. }
        ));
        // Workers do not change the hash.
        let more = PipelineConfig { workers: 3, ..cfg.clone() };
        let m = resume(&cfg.output_dir, Some(&more)).unwrap();
        assert!(m.is_complete());
    }

    #[test]
    fn tampered_output_reruns_stage() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, _) = fixture(dir.path(), 200_000);
        let m = run_pipeline(&cfg).unwrap();
        let victim = cfg.output_dir.join(&m.stage(Stage::Dedup).unwrap().outputs[0].path);
        fs::write(&victim, b"junk\n").unwrap();
        let again = resume(&cfg.output_dir, None).unwrap();
        assert_eq!(again.comparable(), m.comparable());
    }

    #[test]
    fn stage_failure_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let (mut cfg, _) = fixture(dir.path(), 200_000);
        // Too small for the alphabet: training fails after counting.
        cfg.tokenizer.target_size = 110;
        let e = run_pipeline(&cfg).unwrap_err();
        assert!(matches!(e, Error::Stage { .. }), "{e}");
        let m = RunManifest::load(&cfg.output_dir).unwrap();
        assert_eq!(m.failed_stage, Some(Stage::TrainTokenizer));
        let last = m.stages.last().unwrap();
        assert_eq!(last.status, StageStatus::Failed);
        assert!(last.input_count > 0);
        assert!(emit_report(&m).unwrap().text.contains("FAILED"));
    }

    #[test]
    fn config_hash_ignores_run_local_fields() {
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            workers: 8,
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), PipelineConfig { seed: 1, ..a }.config_hash());
    }
}
