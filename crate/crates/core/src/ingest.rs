//! Raw-record readers and text normalization.
//!
//! Two source formats are supported: WET-style extracted-text shards (plain or
//! gzip) and JSONL files with one `{"text": ...}` object per line. Both are
//! read record by record, so memory stays bounded by the largest record.

use std::borrow::Cow;
use std::fmt;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};
use unicode_normalization::{is_nfkc_quick, IsNormalized, UnicodeNormalization};

use crate::error::{Error, Result};
use crate::util::{open_file, Fingerprint};

/// Documents whose normalized text has more than this share of U+FFFD are rejected.
pub const MAX_REPLACEMENT_RATIO: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "CC")]
    Cc,
    #[serde(rename = "DIALECT")]
    Dialect,
    #[serde(rename = "NEWS")]
    News,
    #[serde(rename = "ELKHEIR", alias = "EL-KHEIR")]
    ElKheir,
    #[serde(rename = "OTHER")]
    Other,
}

impl Source {
    pub const ALL: [Source; 5] = [
        Source::Cc,
        Source::Dialect,
        Source::News,
        Source::ElKheir,
        Source::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Cc => "CC",
            Source::Dialect => "DIALECT",
            Source::News => "NEWS",
            Source::ElKheir => "ELKHEIR",
            Source::Other => "OTHER",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace(['-', '_'], "").as_str() {
            "CC" => Ok(Source::Cc),
            "DIALECT" => Ok(Source::Dialect),
            "NEWS" => Ok(Source::News),
            "ELKHEIR" | "ELKHAIR" => Ok(Source::ElKheir),
            "OTHER" | "OTHERS" => Ok(Source::Other),
            _ => Err(Error::InvalidInput(format!("unknown source tag {s:?}"))),
        }
    }
}

/// One undecoded record as found in a shard.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub record_id: String,
    pub uri: Option<String>,
    pub capture_time: Option<DateTime<Utc>>,
    pub payload: Vec<u8>,
    pub declared_length: u64,
}

/// A normalized, source-tagged unit of text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: Fingerprint,
    pub source: Source,
    pub text: String,
    pub char_count: usize,
    pub arabic_ratio: f64,
}

impl Document {
    /// UTF-8 size of the normalized text.
    pub fn byte_len(&self) -> usize {
        self.text.len()
    }
}

/// Arabic script blocks, including the presentation forms.
#[inline]
pub fn is_arabic(c: char) -> bool {
    matches!(c as u32,
        0x0600..=0x06FF | 0x0750..=0x077F | 0x08A0..=0x08FF | 0xFB50..=0xFDFF | 0xFE70..=0xFEFF)
}

/// Share of characters of `text` that are Arabic; 0 for empty text.
pub fn arabic_ratio(text: &str) -> f64 {
    let (mut arabic, mut total) = (0usize, 0usize);
    for c in text.chars() {
        total += 1;
        arabic += is_arabic(c) as usize;
    }
    if total == 0 {
        0.0
    } else {
        arabic as f64 / total as f64
    }
}

/// NFKC-normalizes `text`, strips control characters other than `\n`,
/// collapses whitespace runs inside each line to one space, trims lines and
/// drops empty ones. The result is a fixed point of this function.
pub fn normalize_text(text: &str) -> String {
    // Controls go before NFKC so that removing them cannot expose new
    // composition pairs afterwards.
    let cleaned: String = text
        .chars()
        .filter_map(|c| match c {
            '\n' => Some('\n'),
            c if c.is_whitespace() => Some(' '),
            c if c.is_control() || c == '\u{FEFF}' => None,
            c => Some(c),
        })
        .collect();

    let mut out = String::with_capacity(cleaned.len());
    let mut line = String::new();
    let flush = |line: &mut String, out: &mut String| {
        let mut first = true;
        for word in line.split_whitespace() {
            if first {
                if !out.is_empty() {
                    out.push('\n');
                }
                first = false;
            } else {
                out.push(' ');
            }
            out.push_str(word);
        }
        line.clear();
    };
    let mut push = |c: char| match c {
        '\n' => flush(&mut line, &mut out),
        c if c.is_whitespace() => line.push(' '),
        c if c.is_control() || c == '\u{FEFF}' => {}
        c => line.push(c),
    };
    // ASCII and the Arabic base letters are NFKC-stable starters; anything
    // else goes through the table-driven quick check.
    let stable = cleaned
        .chars()
        .all(|c| c.is_ascii() || matches!(c, '\u{0621}'..='\u{063A}' | '\u{0641}'..='\u{064A}'));
    if stable || is_nfkc_quick(cleaned.chars()) == IsNormalized::Yes {
        cleaned.chars().for_each(&mut push);
    } else {
        cleaned.nfkc().for_each(&mut push);
    }
    flush(&mut line, &mut out);
    out
}

/// Decodes, normalizes and fingerprints a raw record.
pub fn to_document(record: &RawRecord, source: Source) -> Result<Document> {
    document_from_bytes(&record.payload, source)
}

pub fn document_from_bytes(payload: &[u8], source: Source) -> Result<Document> {
    let decoded: Cow<'_, str> = String::from_utf8_lossy(payload);
    document_from_text(&decoded, source)
}

pub fn document_from_text(text: &str, source: Source) -> Result<Document> {
    let text = normalize_text(text);
    let mut char_count = 0usize;
    let mut arabic = 0usize;
    let mut replacement = 0usize;
    for c in text.chars() {
        char_count += 1;
        arabic += is_arabic(c) as usize;
        replacement += (c == char::REPLACEMENT_CHARACTER) as usize;
    }
    if char_count == 0 {
        return Err(Error::EmptyDocument);
    }
    if replacement as f64 > MAX_REPLACEMENT_RATIO * char_count as f64 {
        return Err(Error::TooManyReplacements {
            replacement,
            chars: char_count,
        });
    }
    Ok(Document {
        doc_id: Fingerprint::of(text.as_bytes()),
        source,
        arabic_ratio: arabic as f64 / char_count as f64,
        char_count,
        text,
    })
}

/// Opens a file for reading, transparently decompressing gzip content.
pub fn open_maybe_gzip(path: &Path) -> Result<Box<dyn BufRead + Send>> {
    let file = open_file(path)?;
    maybe_gunzip(file).map_err(|e| Error::io_at(path, e))
}

/// Wraps `stream` in a gzip decoder when it starts with the gzip magic bytes.
pub fn maybe_gunzip<R: Read + Send + 'static>(stream: R) -> io::Result<Box<dyn BufRead + Send>> {
    let mut reader = BufReader::with_capacity(1 << 16, stream);
    let head = reader.fill_buf()?;
    if head.len() >= 2 && head[0] == 0x1f && head[1] == 0x8b {
        Ok(Box::new(BufReader::with_capacity(
            1 << 16,
            MultiGzDecoder::new(reader),
        )))
    } else {
        Ok(Box::new(reader))
    }
}

/// Reads WET-style records from `stream`, which may be gzip-compressed.
pub fn read_wet_shard<R: Read + Send + 'static>(stream: R) -> Result<WetReader<Box<dyn BufRead + Send>>> {
    Ok(WetReader::new(maybe_gunzip(stream)?))
}

/// Iterator over the conversion records of a WET stream.
///
/// Errors are per record: after a [`Error::MalformedRecord`] the reader
/// resynchronises on the next `WARC/` version line. A [`Error::TruncatedRecord`]
/// ends the stream.
pub struct WetReader<R> {
    inner: R,
    offset: u64,
    line: Vec<u8>,
    /// A version line already consumed while scanning past the previous record.
    pending_version: Option<u64>,
    resync: bool,
    done: bool,
}

struct Header {
    offset: u64,
    record_type: Option<String>,
    record_id: Option<String>,
    uri: Option<String>,
    date: Option<String>,
    length: Option<String>,
}

impl<R: BufRead> WetReader<R> {
    pub fn new(inner: R) -> Self {
        WetReader {
            inner,
            offset: 0,
            line: Vec::new(),
            pending_version: None,
            resync: false,
            done: false,
        }
    }

    /// Byte offset of the next unread byte in the decompressed stream.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    fn read_line(&mut self) -> Result<bool> {
        self.line.clear();
        let n = self.inner.read_until(b'\n', &mut self.line)?;
        self.offset += n as u64;
        Ok(n > 0)
    }

    fn line_is_blank(&self) -> bool {
        self.line.iter().all(|b| matches!(b, b'\r' | b'\n' | b' ' | b'\t'))
    }

    fn line_is_version(&self) -> bool {
        self.line.starts_with(b"WARC/")
    }

    /// Skips padding (or garbage when resynchronising) up to the next record
    /// start. Returns the record's offset, or `None` at end of stream.
    fn seek_record(&mut self) -> Result<Option<u64>> {
        if let Some(at) = self.pending_version.take() {
            self.resync = false;
            return Ok(Some(at));
        }
        loop {
            let start = self.offset;
            if !self.read_line()? {
                return Ok(None);
            }
            if self.line_is_blank() {
                continue;
            }
            if self.line_is_version() {
                self.resync = false;
                return Ok(Some(start));
            }
            if self.resync {
                continue;
            }
            // Header without a version line: treat this line as the first field.
            return Ok(Some(start));
        }
    }

    fn read_header(&mut self, offset: u64) -> Result<Header> {
        let mut header = Header {
            offset,
            record_type: None,
            record_id: None,
            uri: None,
            date: None,
            length: None,
        };
        let mut first = true;
        loop {
            if !first && !self.read_line()? {
                return Err(Error::MalformedRecord {
                    offset,
                    reason: "end of stream inside header".into(),
                });
            }
            if !first && self.line_is_blank() {
                return Ok(header);
            }
            let is_version = first && self.line_is_version();
            first = false;
            if is_version {
                continue;
            }
            let text = String::from_utf8_lossy(&self.line);
            let text = text.trim_end_matches(['\r', '\n']);
            let Some((key, value)) = text.split_once(':') else {
                return Err(Error::MalformedRecord {
                    offset,
                    reason: format!("header line without ':' ({text:?})"),
                });
            };
            let value = value.trim().to_string();
            match key.trim().to_ascii_lowercase().as_str() {
                "warc-type" => header.record_type = Some(value),
                "warc-record-id" => header.record_id = Some(value),
                "warc-target-uri" => header.uri = Some(value),
                "warc-date" => header.date = Some(value),
                "content-length" => header.length = Some(value),
                _ => {}
            }
        }
    }

    /// After a body, only blank padding may precede the next version line.
    fn check_trailer(&mut self) -> Result<bool> {
        loop {
            let start = self.offset;
            if !self.read_line()? {
                return Ok(true);
            }
            if self.line_is_blank() {
                continue;
            }
            if self.line_is_version() {
                self.pending_version = Some(start);
                return Ok(true);
            }
            return Ok(false);
        }
    }

    fn next_record(&mut self) -> Result<Option<RawRecord>> {
        loop {
            let Some(offset) = self.seek_record()? else {
                return Ok(None);
            };
            let header = match self.read_header(offset) {
                Ok(h) => h,
                Err(e) => {
                    self.resync = true;
                    return Err(e);
                }
            };
            let Some(length) = header.length.as_deref() else {
                self.resync = true;
                return Err(Error::MalformedRecord {
                    offset,
                    reason: "missing Content-Length".into(),
                });
            };
            let declared: u64 = match length.parse() {
                Ok(n) => n,
                Err(_) => {
                    self.resync = true;
                    return Err(Error::MalformedRecord {
                        offset,
                        reason: format!("bad Content-Length {length:?}"),
                    });
                }
            };

            let mut payload = Vec::with_capacity(declared.min(1 << 24) as usize);
            let got = (&mut self.inner).take(declared).read_to_end(&mut payload)? as u64;
            self.offset += got;
            if got < declared {
                self.done = true;
                return Err(Error::TruncatedRecord {
                    offset: header.offset,
                    expected: declared,
                    available: got,
                });
            }
            if !self.check_trailer()? {
                self.resync = true;
                return Err(Error::MalformedRecord {
                    offset: header.offset,
                    reason: format!("declared length {declared} does not match body"),
                });
            }

            let is_conversion = header
                .record_type
                .as_deref()
                .is_none_or(|t| t.eq_ignore_ascii_case("conversion"));
            if !is_conversion || payload.is_empty() {
                continue;
            }
            let capture_time = header
                .date
                .as_deref()
                .and_then(|d| DateTime::parse_from_rfc3339(d).ok())
                .map(|d| d.with_timezone(&Utc));
            return Ok(Some(RawRecord {
                record_id: header
                    .record_id
                    .unwrap_or_else(|| format!("offset-{}", header.offset)),
                uri: header.uri,
                capture_time,
                declared_length: declared,
                payload,
            }));
        }
    }
}

impl<R: BufRead> Iterator for WetReader<R> {
    type Item = Result<RawRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(r)) => Some(Ok(r)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                if matches!(e, Error::Io(_)) {
                    self.done = true;
                }
                Some(Err(e))
            }
        }
    }
}

/// Writes conversion records in the layout [`WetReader`] reads.
pub struct WetWriter<W: Write> {
    inner: W,
}

impl<W: Write> WetWriter<W> {
    pub fn new(inner: W) -> Self {
        WetWriter { inner }
    }

    pub fn write_record(&mut self, record: &RawRecord) -> io::Result<()> {
        let w = &mut self.inner;
        write!(w, "WARC/1.0\r\nWARC-Type: conversion\r\n")?;
        if let Some(uri) = &record.uri {
            write!(w, "WARC-Target-URI: {uri}\r\n")?;
        }
        if let Some(t) = &record.capture_time {
            write!(w, "WARC-Date: {}\r\n", t.format("%Y-%m-%dT%H:%M:%SZ"))?;
        }
        write!(w, "WARC-Record-ID: {}\r\n", record.record_id)?;
        write!(w, "Content-Type: text/plain\r\n")?;
        write!(w, "Content-Length: {}\r\n\r\n", record.payload.len())?;
        w.write_all(&record.payload)?;
        w.write_all(b"\r\n\r\n")
    }

    /// Writes a `warcinfo` record, which readers skip.
    pub fn write_info(&mut self, body: &str) -> io::Result<()> {
        let w = &mut self.inner;
        write!(
            w,
            "WARC/1.0\r\nWARC-Type: warcinfo\r\nContent-Type: application/warc-fields\r\nContent-Length: {}\r\n\r\n{body}\r\n\r\n",
            body.len()
        )
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// One line of a JSONL source file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonlRecord {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl JsonlRecord {
    pub fn into_raw(self, line_no: u64) -> RawRecord {
        let payload = self.text.into_bytes();
        RawRecord {
            record_id: self.id.unwrap_or_else(|| format!("line-{line_no}")),
            uri: self.url,
            capture_time: None,
            declared_length: payload.len() as u64,
            payload,
        }
    }
}

/// Line-by-line JSONL reader; blank lines are skipped, bad lines are per-line errors.
pub struct JsonlReader<R> {
    inner: R,
    line: Vec<u8>,
    line_no: u64,
    offset: u64,
}

impl<R: BufRead> JsonlReader<R> {
    pub fn new(inner: R) -> Self {
        JsonlReader {
            inner,
            line: Vec::new(),
            line_no: 0,
            offset: 0,
        }
    }

    /// 1-based number of the line last returned.
    pub fn line_no(&self) -> u64 {
        self.line_no
    }
}

impl<R: BufRead> Iterator for JsonlReader<R> {
    type Item = Result<(u64, JsonlRecord)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line.clear();
            let start = self.offset;
            match self.inner.read_until(b'\n', &mut self.line) {
                Ok(0) => return None,
                Ok(n) => self.offset += n as u64,
                Err(e) => return Some(Err(e.into())),
            }
            self.line_no += 1;
            if self.line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            return Some(
                serde_json::from_slice::<JsonlRecord>(&self.line)
                    .map(|r| (self.line_no, r))
                    .map_err(|e| Error::MalformedRecord {
                        offset: start,
                        reason: format!("line {}: {e}", self.line_no),
                    }),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn record(id: &str, body: &str) -> RawRecord {
        RawRecord {
            record_id: id.into(),
            uri: Some(format!("http://example.com/{id}")),
            capture_time: None,
            payload: body.as_bytes().to_vec(),
            declared_length: body.len() as u64,
        }
    }

    fn read_all(bytes: Vec<u8>) -> Vec<Result<RawRecord>> {
        read_wet_shard(Cursor::new(bytes)).unwrap().collect()
    }

    #[test]
    fn empty_stream_yields_nothing() {
        assert!(read_all(Vec::new()).is_empty());
    }

    #[test]
    fn hand_built_fixture_skips_metadata() {
        // Two conversion records around one metadata record, byte counts by hand.
        let fixture = concat!(
            "WARC/1.0\r\n",
            "WARC-Type: conversion\r\n",
            "WARC-Record-ID: <urn:a>\r\n",
            "Content-Length: 10\r\n",
            "\r\n",
            "مرحبا", // 5 letters x 2 bytes
            "\r\n\r\n",
            "WARC/1.0\r\n",
            "WARC-Type: metadata\r\n",
            "Content-Length: 3\r\n",
            "\r\n",
            "x=1",
            "\r\n\r\n",
            "WARC/1.0\r\n",
            "WARC-Type: conversion\r\n",
            "WARC-Record-ID: <urn:b>\r\n",
            "Content-Length: 5\r\n",
            "\r\n",
            "hello",
            "\r\n\r\n\n\n",
        );
        let out: Vec<RawRecord> = read_all(fixture.as_bytes().to_vec())
            .into_iter()
            .map(|r| r.unwrap())
            .collect();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].record_id, "<urn:a>");
        assert_eq!(out[0].payload, "مرحبا".as_bytes());
        assert_eq!(out[1].record_id, "<urn:b>");
        assert_eq!(out[1].payload, b"hello");
        for r in &out {
            assert_eq!(r.declared_length, r.payload.len() as u64);
        }
    }

    #[test]
    fn declared_length_too_long_is_truncation_at_offset_zero() {
        let s = "WARC/1.0\r\nWARC-Type: conversion\r\nContent-Length: 50\r\n\r\nshort body";
        let out = read_all(s.as_bytes().to_vec());
        assert_eq!(out.len(), 1);
        match &out[0] {
            Err(Error::TruncatedRecord {
                offset,
                expected,
                available,
            }) => {
                assert_eq!(*offset, 0);
                assert_eq!(*expected, 50);
                assert_eq!(*available, 10);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn declared_length_too_short_is_error_at_offset_zero() {
        let s = "WARC/1.0\r\nWARC-Type: conversion\r\nContent-Length: 4\r\n\r\nlonger body text\r\n\r\n";
        let out = read_all(s.as_bytes().to_vec());
        assert_eq!(out.len(), 1);
        assert!(matches!(out[0], Err(Error::MalformedRecord { offset: 0, .. })));
    }

    #[test]
    fn missing_length_is_recoverable() {
        let mut bytes = b"WARC/1.0\r\nWARC-Type: conversion\r\n\r\nno length here\r\n\r\n".to_vec();
        let good_at = bytes.len() as u64;
        let mut w = WetWriter::new(Vec::new());
        w.write_record(&record("ok", "body")).unwrap();
        bytes.extend(w.into_inner());
        let out = read_all(bytes);
        assert_eq!(out.len(), 2);
        assert!(matches!(out[0], Err(Error::MalformedRecord { offset: 0, .. })));
        let ok = out[1].as_ref().unwrap();
        assert_eq!(ok.record_id, "ok");
        assert!(good_at > 0);
    }

    #[test]
    fn gzip_and_plain_read_the_same() {
        use flate2::write::GzEncoder;
        let mut w = WetWriter::new(Vec::new());
        w.write_info("software: test").unwrap();
        for i in 0..5 {
            w.write_record(&record(&format!("r{i}"), &"نص ".repeat(i + 1))).unwrap();
        }
        let plain = w.into_inner();
        let mut gz = GzEncoder::new(Vec::new(), flate2::Compression::fast());
        gz.write_all(&plain).unwrap();
        let gz = gz.finish().unwrap();
        let a: Vec<_> = read_all(plain).into_iter().map(|r| r.unwrap()).collect();
        let b: Vec<_> = read_all(gz).into_iter().map(|r| r.unwrap()).collect();
        assert_eq!(a.len(), 5);
        assert_eq!(a, b);
    }

    #[test]
    fn all_arabic_ratio_is_one() {
        let d = document_from_text("ابجد", Source::Cc).unwrap();
        assert_eq!(d.arabic_ratio, 1.0);
        assert_eq!(d.char_count, 4);
    }

    #[test]
    fn mixed_ratio_matches_per_code_point_count() {
        let text = "abcاب";
        let brute = text
            .chars()
            .filter(|&c| ('\u{0600}'..='\u{06FF}').contains(&c))
            .count() as f64
            / text.chars().count() as f64;
        let d = document_from_text(text, Source::Cc).unwrap();
        assert_eq!(brute, 0.4);
        assert_eq!(d.arabic_ratio, brute);
    }

    #[test]
    fn whitespace_only_is_empty_document() {
        assert!(matches!(
            document_from_text(" \t\n\r\n  ", Source::Cc),
            Err(Error::EmptyDocument)
        ));
    }

    #[test]
    fn normalization_collapses_and_strips() {
        assert_eq!(normalize_text("  a \t b\u{0}c \r\n\n  d  "), "a bc\nd");
        // Presentation-form lam-alef ligature maps to two base letters.
        assert_eq!(normalize_text("\u{FEFB}"), "\u{0644}\u{0627}");
        assert_eq!(normalize_text("a\u{00A0}\u{00A0}b"), "a b");
    }

    #[test]
    fn invalid_utf8_counts_replacements() {
        let mut payload = "ا".repeat(50).into_bytes();
        payload.push(0xff);
        assert!(document_from_bytes(&payload, Source::Cc).is_err());
        let mut payload = "ا".repeat(200).into_bytes();
        payload.push(0xff);
        let d = document_from_bytes(&payload, Source::Cc).unwrap();
        assert_eq!(d.char_count, 201);
        assert!((d.arabic_ratio - 200.0 / 201.0).abs() < 1e-12);
    }

    #[test]
    fn jsonl_reader_reports_bad_lines() {
        let data = "{\"text\":\"نص\",\"id\":\"a\"}\n\n not json\n{\"text\":\"b\",\"source\":\"NEWS\"}\n";
        let out: Vec<_> = JsonlReader::new(Cursor::new(data)).collect();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].as_ref().unwrap().1.id.as_deref(), Some("a"));
        assert!(out[1].is_err());
        let (line, rec) = out[2].as_ref().unwrap();
        assert_eq!(*line, 4);
        assert_eq!(rec.source.as_deref(), Some("NEWS"));
    }

    #[test]
    fn source_tags_parse() {
        assert_eq!("EL-KHEIR".parse::<Source>().unwrap(), Source::ElKheir);
        assert_eq!("cc".parse::<Source>().unwrap(), Source::Cc);
        assert!("nope".parse::<Source>().is_err());
    }
}
