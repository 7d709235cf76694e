//! Knowledge-base file format (little-endian):
//!
//! ```text
//! "DQKB" | u32 version
//! grid block: u8 env | u32 dims | dims × (f64 lower, f64 upper, u32 bins) | u32 actions
//! u64 grid fingerprint | f64 log floor | u8 std convention (0 = population M2/n)
//! u32 n_tasks
//! f64 mean[cells] | f64 m2[cells] | f64 max[cells] | f64 log_sum[cells]
//! u32 n_tasks_with_value[cells] | u64 source visits[cells]
//! u32 CRC32 of all preceding bytes
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{KbError, KnowledgeBase};
use crate::env::EnvId;
use crate::grid::GridCodec;

pub const MAGIC: [u8; 4] = *b"DQKB";
pub const FORMAT_VERSION: u32 = 1;
const STD_POPULATION: u8 = 0;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KbError + '_ {
    move |source| KbError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Appends the CRC32 of `body` and writes the file through a temporary
/// sibling, so readers never observe a partial file.
pub(crate) fn write_with_crc(path: &Path, mut body: Vec<u8>) -> Result<(), KbError> {
    let crc = crc32fast::hash(&body);
    body.extend(crc.to_le_bytes());
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(&body).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Reads a file, checks magic, version and CRC, and returns the bytes
/// between the version field and the CRC.
pub(crate) fn read_checked(path: &Path, magic: [u8; 4], version: u32) -> Result<Vec<u8>, KbError> {
    let data = fs::read(path).map_err(io_err(path))?;
    let corrupt = |reason: &str| KbError::Corrupt {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if data.len() < 12 {
        return Err(corrupt("file too short"));
    }
    if data[..4] != magic {
        return Err(corrupt("bad magic bytes"));
    }
    let found = u32::from_le_bytes(data[4..8].try_into().unwrap());
    if found != version {
        return Err(KbError::UnsupportedVersion {
            path: path.to_path_buf(),
            found,
            supported: version,
        });
    }
    let (content, crc) = data.split_at(data.len() - 4);
    if crc32fast::hash(content) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(corrupt("checksum mismatch (truncated or modified file)"));
    }
    Ok(content[8..].to_vec())
}

pub fn kb_save(kb: &KnowledgeBase, path: &Path) -> Result<(), KbError> {
    let cells = kb.total_cells();
    let mut out = Vec::with_capacity(64 + cells * 44);
    out.extend(MAGIC);
    out.extend(FORMAT_VERSION.to_le_bytes());
    out.extend(kb.codec().config_bytes());
    out.extend(kb.codec().fingerprint().to_le_bytes());
    out.extend(kb.log_floor().to_le_bytes());
    out.push(STD_POPULATION);
    out.extend(kb.n_tasks().to_le_bytes());
    for array in [kb.mean(), kb.m2(), kb.max(), kb.log_sum()] {
        for v in array {
            out.extend(v.to_le_bytes());
        }
    }
    for n in kb.n_with_value() {
        out.extend(n.to_le_bytes());
    }
    for n in kb.visits() {
        out.extend(n.to_le_bytes());
    }
    write_with_crc(path, out)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let slice = self.data.get(self.pos..end)?;
        self.pos = end;
        Some(slice)
    }
    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Option<Vec<f64>> {
        let raw = self.take(n.checked_mul(8)?)?;
        Some(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Loads a knowledge base. When `expected` is given, the file's grid must
/// have the same fingerprint.
pub fn kb_load(path: &Path, expected: Option<&GridCodec>) -> Result<KnowledgeBase, KbError> {
    let body = read_checked(path, MAGIC, FORMAT_VERSION)?;
    let corrupt = |reason: String| KbError::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let mut c = Cursor { data: &body, pos: 0 };
    let short = || "file ends inside the header".to_string();

    let env_code = c.u8().ok_or_else(short).map_err(corrupt)?;
    let env_id = EnvId::from_code(env_code).ok_or_else(|| corrupt(format!("unknown env code {env_code}")))?;
    let dims = c.u32().ok_or_else(short).map_err(corrupt)? as usize;
    if dims > 16 {
        return Err(corrupt(format!("implausible grid dimension count {dims}")));
    }
    let (mut lower, mut upper, mut bins) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..dims {
        lower.push(c.f64().ok_or_else(short).map_err(corrupt)?);
        upper.push(c.f64().ok_or_else(short).map_err(corrupt)?);
        bins.push(c.u32().ok_or_else(short).map_err(corrupt)?);
    }
    let actions = c.u32().ok_or_else(short).map_err(corrupt)?;
    let codec = GridCodec::new(env_id, lower, upper, bins, actions)
        .map_err(|e| corrupt(format!("invalid grid block: {e}")))?;
    let stored_fp = c.u64().ok_or_else(short).map_err(corrupt)?;
    if stored_fp != codec.fingerprint() {
        return Err(corrupt(format!(
            "stored fingerprint {stored_fp:016x} does not match grid block {:016x}",
            codec.fingerprint()
        )));
    }
    if let Some(expected) = expected {
        if expected.fingerprint() != codec.fingerprint() {
            return Err(KbError::FingerprintMismatch {
                expected: expected.to_string(),
                found: codec.to_string(),
            });
        }
    }
    let log_floor = c.f64().ok_or_else(short).map_err(corrupt)?;
    let convention = c.u8().ok_or_else(short).map_err(corrupt)?;
    if convention != STD_POPULATION {
        return Err(corrupt(format!("unknown std convention {convention}")));
    }
    let n_tasks = c.u32().ok_or_else(short).map_err(corrupt)?;
    let cells = codec.total_cells();
    let expected_rest = cells * (4 * 8 + 4 + 8);
    if body.len() - c.pos != expected_rest {
        return Err(corrupt(format!(
            "statistics section is {} bytes, grid needs {expected_rest}",
            body.len() - c.pos
        )));
    }
    let arrays = c.f64s(cells * 4).expect("length checked");
    let mut chunks = arrays.chunks_exact(cells).map(<[f64]>::to_vec);
    let (mean, m2, max, log_sum) = (
        chunks.next().unwrap(),
        chunks.next().unwrap(),
        chunks.next().unwrap(),
        chunks.next().unwrap(),
    );
    let n_with_value = (0..cells).map(|_| c.u32().unwrap()).collect();
    let visits = (0..cells).map(|_| c.u64().unwrap()).collect();
    Ok(KnowledgeBase::from_parts(
        codec,
        log_floor,
        n_tasks,
        mean,
        m2,
        max,
        log_sum,
        n_with_value,
        visits,
    ))
}
