//! Readers and writers for interaction logs and embedding tables, plus
//! mean-pooling of chunk-level embeddings into track-level vectors.
//!
//! The canonical embedding container is a small little-endian binary format:
//!
//! ```text
//! "PARE" | version: u8 = 1 | n_items: u32 | dim: u32
//! n_items x { len: u16 | utf-8 item id }
//! n_items * dim x f32 (row-major)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;

use crate::domain::{EmbeddingTable, Event, InteractionLog, Interner};
use crate::error::{Error, Result};

pub const PARE_MAGIC: &[u8; 4] = b"PARE";
pub const PARE_VERSION: u8 = 1;

/// Maximum share of malformed rows tolerated when loading interactions.
pub const MAX_SKIPPED_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    Tsv,
    Csv,
}

impl Delimiter {
    pub fn byte(self) -> u8 {
        match self {
            Delimiter::Tsv => b'\t',
            Delimiter::Csv => b',',
        }
    }

    /// Guesses from the file extension; anything but `.csv` is tab-separated.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Delimiter::Csv,
            _ => Delimiter::Tsv,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedLog {
    pub log: InteractionLog,
    pub skipped_rows: usize,
}

pub fn load_interactions(path: impl AsRef<Path>, format: Delimiter) -> Result<LoadedLog> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_interactions(BufReader::new(file), format)
}

/// Parses `user_id,item_id,timestamp` rows. Fractional timestamps are
/// truncated to whole seconds; unparseable rows are skipped with a warning.
pub fn read_interactions<R: Read>(reader: R, format: Delimiter) -> Result<LoadedLog> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.byte())
        .flexible(true)
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names != ["user_id", "item_id", "timestamp"] {
        return Err(Error::Parse(format!(
            "expected header `user_id,item_id,timestamp`, found `{}`",
            names.join(",")
        )));
    }

    let mut interner = Interner::default();
    let mut events = Vec::new();
    let mut skipped = 0usize;
    let mut total = 0usize;
    for (line, record) in rdr.records().enumerate() {
        total += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                warn!("row {}: {e}; skipped", line + 2);
                skipped += 1;
                continue;
            }
        };
        if record.len() != 3 {
            warn!("row {}: expected 3 fields, found {}; skipped", line + 2, record.len());
            skipped += 1;
            continue;
        }
        let Some(ts) = parse_timestamp(record[2].trim()) else {
            warn!("row {}: bad timestamp `{}`; skipped", line + 2, &record[2]);
            skipped += 1;
            continue;
        };
        events.push(Event {
            user: interner.intern(record[0].trim()),
            item: interner.intern(record[1].trim()),
            timestamp: ts,
        });
    }
    if total > 0 && skipped as f64 > MAX_SKIPPED_FRACTION * total as f64 {
        return Err(Error::Parse(format!(
            "{skipped} of {total} rows malformed (more than {:.0}%)",
            MAX_SKIPPED_FRACTION * 100.0
        )));
    }
    if skipped > 0 {
        warn!("{skipped} of {total} interaction rows skipped");
    }
    Ok(LoadedLog {
        log: InteractionLog::new(events)?,
        skipped_rows: skipped,
    })
}

fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(v) = s.parse::<i64>() {
        return (v >= 0).then_some(v);
    }
    let v = s.parse::<f64>().ok()?;
    (v.is_finite() && v >= 0.0 && v < i64::MAX as f64).then(|| v.trunc() as i64)
}

pub fn write_interactions<'a, I>(path: impl AsRef<Path>, events: I, format: Delimiter) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a str, i64)>,
{
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .delimiter(format.byte())
        .from_writer(BufWriter::new(file));
    w.write_record(["user_id", "item_id", "timestamp"])?;
    for (u, i, t) in events {
        w.write_record([u, i, &t.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Loads a `.csv` table (`item_id` first column) or a PARE binary file.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    if Delimiter::from_path(path) == Delimiter::Csv {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        return read_embeddings_csv(BufReader::new(file));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pare(&bytes)
}

pub fn write_embeddings(path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_pare(table)?).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn encode_pare(table: &EmbeddingTable) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(13 + table.matrix().len() * 4);
    out.extend_from_slice(PARE_MAGIC);
    out.push(PARE_VERSION);
    out.extend_from_slice(&(table.n_items() as u32).to_le_bytes());
    out.extend_from_slice(&(table.dim() as u32).to_le_bytes());
    for id in table.ids().ids() {
        let len = u16::try_from(id.len())
            .map_err(|_| Error::InvalidInput(format!("item id longer than 65535 bytes: `{id}`")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    for v in table.matrix() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Little-endian cursor that reports the byte offset of any failure.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                reason: format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.buf.len() - self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn str(&mut self, len: usize, what: &str) -> Result<&'a str> {
        let at = self.offset();
        std::str::from_utf8(self.take(len, what)?).map_err(|e| Error::Format {
            offset: at,
            reason: format!("{what} is not utf-8: {e}"),
        })
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format {
            offset: self.pos as u64,
            reason: format!("{what} size overflows"),
        })?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn is_at_end(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn decode_pare(bytes: &[u8]) -> Result<EmbeddingTable> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.take(4, "magic")?;
    if magic != PARE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: format!("bad magic {magic:?}, expected \"PARE\""),
        });
    }
    let version = cur.u8("version")?;
    if version != PARE_VERSION {
        return Err(Error::Format {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let n_items = cur.u32("n_items")? as usize;
    let dim = cur.u32("dim")? as usize;
    if dim == 0 {
        return Err(Error::Format {
            offset: 9,
            reason: "dim is zero".into(),
        });
    }
    let mut ids = Vec::with_capacity(n_items.min(1 << 20));
    for _ in 0..n_items {
        let len = cur.u16("id length")? as usize;
        ids.push(cur.str(len, "item id")?);
    }
    let matrix_offset = cur.offset();
    let matrix = cur.f32s(n_items * dim, "embedding matrix")?;
    if !cur.is_at_end() {
        return Err(Error::Format {
            offset: cur.offset(),
            reason: "trailing bytes after matrix".into(),
        });
    }
    EmbeddingTable::new(&ids, matrix, dim).map_err(|e| match e {
        Error::NonFinite { row, context } => Error::NonFinite {
            row,
            context: format!("{context}, row starts at byte {}", matrix_offset + (row * dim * 4) as u64),
        },
        other => other,
    })
}

pub fn read_embeddings_csv<R: Read>(reader: R) -> Result<EmbeddingTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0).map(str::trim) != Some("item_id") || headers.len() < 2 {
        return Err(Error::Parse("embedding csv must start with an `item_id` column followed by values".into()));
    }
    let dim = headers.len() - 1;
    let mut ids = Vec::new();
    let mut matrix = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        ids.push(record[0].trim().to_string());
        for field in record.iter().skip(1) {
            let v: f32 = field
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("row {row}: bad value `{field}`")))?;
            matrix.push(v);
        }
    }
    EmbeddingTable::new(&ids, matrix, dim)
}

/// Per-chunk embeddings of one track: `n_chunks` rows of `dim` values.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkEmbeddingSet {
    pub item_id: String,
    pub dim: usize,
    pub chunks: Vec<f32>,
}

impl ChunkEmbeddingSet {
    pub fn n_chunks(&self) -> usize {
        self.chunks.len().checked_div(self.dim).unwrap_or(0)
    }
}

/// Track-level vector as the arithmetic mean over chunks, accumulated in f64.
pub fn pool_chunks(set: &ChunkEmbeddingSet) -> Result<Vec<f32>> {
    let n = set.n_chunks();
    if n == 0 {
        return Err(Error::Empty("chunk set"));
    }
    if set.chunks.len() != n * set.dim {
        return Err(Error::InvalidInput(format!(
            "chunk matrix of `{}` is ragged",
            set.item_id
        )));
    }
    let mut acc = vec![0f64; set.dim];
    for (t, row) in set.chunks.chunks_exact(set.dim).enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: t,
                context: format!("chunk of `{}`", set.item_id),
            });
        }
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    Ok(acc.into_iter().map(|a| (a / n as f64) as f32).collect())
}

/// Reads chunk rows (`item_id,v1..vd`); consecutive or scattered rows with the
/// same id are chunks of one track. Tracks keep first-appearance order.
pub fn read_chunk_csv<R: Read>(reader: R) -> Result<Vec<ChunkEmbeddingSet>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0).map(str::trim) != Some("item_id") || headers.len() < 2 {
        return Err(Error::Parse("chunk csv must start with an `item_id` column".into()));
    }
    let dim = headers.len() - 1;
    let mut order: Vec<ChunkEmbeddingSet> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let id = record[0].trim();
        let slot = *index.entry(id.to_string()).or_insert_with(|| {
            order.push(ChunkEmbeddingSet {
                item_id: id.to_string(),
                dim,
                chunks: Vec::new(),
            });
            order.len() - 1
        });
        for field in record.iter().skip(1) {
            let v: f32 = field
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("row {row}: bad value `{field}`")))?;
            order[slot].chunks.push(v);
        }
    }
    Ok(order)
}

pub fn pool_table(sets: &[ChunkEmbeddingSet]) -> Result<EmbeddingTable> {
    let dim = sets.first().map(|s| s.dim).ok_or(Error::Empty("chunk file"))?;
    let mut ids = Vec::with_capacity(sets.len());
    let mut matrix = Vec::with_capacity(sets.len() * dim);
    for s in sets {
        ids.push(s.item_id.as_str());
        matrix.extend(pool_chunks(s)?);
    }
    EmbeddingTable::new(&ids, matrix, dim)
}
