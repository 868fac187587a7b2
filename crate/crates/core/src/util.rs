use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use xxhash_rust::xxh3::{xxh3_128, Xxh3};

use crate::error::{Error, Result};

/// 128-bit content fingerprint (XXH3-128), rendered as 32 lowercase hex digits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(pub u128);

/// Identifies the hash function behind [`Fingerprint`] in manifests.
pub const FINGERPRINT_ALGORITHM: &str = "xxh3-128";

impl Fingerprint {
    pub fn of(bytes: &[u8]) -> Self {
        Fingerprint(xxh3_128(bytes))
    }

    pub fn to_hex(self) -> String {
        format!("{:032x}", self.0)
    }

    pub fn to_be_bytes(self) -> [u8; 16] {
        self.0.to_be_bytes()
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({:032x})", self.0)
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl FromStr for Fingerprint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() != 32 {
            return Err(Error::InvalidInput(format!("fingerprint must be 32 hex digits: {s:?}")));
        }
        u128::from_str_radix(s, 16)
            .map(Fingerprint)
            .map_err(|e| Error::InvalidInput(format!("bad fingerprint {s:?}: {e}")))
    }
}

impl Serialize for Fingerprint {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Fingerprint {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// SplitMix64 finalizer.
#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the `index`-th 64-bit value of a seeded counter stream.
#[inline]
pub(crate) fn derive_seed(seed: u64, index: u64) -> u64 {
    mix64(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// Streams a file through XXH3-128.
pub(crate) fn hash_file(path: &Path) -> Result<Fingerprint> {
    let mut file = fs::File::open(path).map_err(|e| Error::io_at(path, e))?;
    let mut hasher = Xxh3::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io_at(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(Fingerprint(hasher.digest128()))
}

/// Writes `bytes` to `path` via a sibling temp file and rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io_at(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io_at(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io_at(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io_at(path, e))
}

pub(crate) fn create_dir_all(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io_at(path, e))
}

pub(crate) fn open_file(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::io_at(path, e))
}

pub(crate) fn create_file(path: &Path) -> Result<io::BufWriter<fs::File>> {
    let f = fs::File::create(path).map_err(|e| Error::io_at(path, e))?;
    Ok(io::BufWriter::with_capacity(1 << 20, f))
}
