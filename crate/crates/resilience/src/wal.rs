//! Write-ahead log of pipeline stage transactions.
//!
//! ```text
//! "DWAL" 0x01 { len:u32 | body | crc32(body):u32 }*
//! body = status:u8 txn:u64 timestamp:u64 stage:str digest:[u8;32]
//! ```
//!
//! Every append is flushed to disk before the call returns. A record cut
//! short at the end of the file is a torn write and is truncated on open;
//! damage anywhere else is reported as corruption.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use eduction_core::codec::{Decoder, Encoder};

use crate::error::ResilienceError;

pub const MAGIC: &[u8; 4] = b"DWAL";
pub const WAL_VERSION: u8 = 0x01;
pub const MAX_UNCOMMITTED: usize = 1000;
const HEADER_LEN: usize = 5;
/// Records appended since the last rewrite before committed pairs are dropped.
const COMPACT_AFTER: usize = 8 * MAX_UNCOMMITTED;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxnStatus {
    Begun,
    Committed,
}

impl TxnStatus {
    fn tag(self) -> u8 {
        match self {
            TxnStatus::Begun => 1,
            TxnStatus::Committed => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalRecord {
    pub txn_id: u64,
    pub timestamp: u64,
    pub stage: String,
    pub payload_digest: [u8; 32],
    pub status: TxnStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayEntry {
    pub txn_id: u64,
    pub stage: String,
    pub payload_digest: [u8; 32],
}

fn header() -> Vec<u8> {
    let mut h = MAGIC.to_vec();
    h.push(WAL_VERSION);
    h
}

fn encode_record(r: &WalRecord) -> Vec<u8> {
    let mut body = Encoder::new();
    body.u8(r.status.tag())
        .u64(r.txn_id)
        .u64(r.timestamp)
        .str(&r.stage)
        .raw(&r.payload_digest);
    let body = body.finish();
    let mut out = Encoder::with_capacity(body.len() + 8);
    out.bytes(&body).u32(crc32fast::hash(&body));
    out.finish()
}

fn decode_body(body: &[u8]) -> Result<WalRecord, String> {
    let mut dec = Decoder::new(body);
    let parse = |dec: &mut Decoder| -> Result<WalRecord, eduction_core::codec::DecodeError> {
        let status = match dec.u8()? {
            1 => TxnStatus::Begun,
            2 => TxnStatus::Committed,
            value => {
                return Err(eduction_core::codec::DecodeError::Tag {
                    field: "status",
                    value,
                })
            }
        };
        Ok(WalRecord {
            status,
            txn_id: dec.u64()?,
            timestamp: dec.u64()?,
            stage: dec.str()?.to_owned(),
            payload_digest: dec.array()?,
        })
    };
    let r = parse(&mut dec).map_err(|e| e.to_string())?;
    dec.finish().map_err(|e| e.to_string())?;
    Ok(r)
}

/// Result of scanning a log image.
#[derive(Debug, Default)]
struct Scan {
    records: Vec<WalRecord>,
    /// Length of the intact prefix; shorter than the input on a torn tail.
    valid_len: usize,
}

fn corrupt(offset: usize, reason: impl Into<String>) -> ResilienceError {
    ResilienceError::CorruptLog {
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn scan(buf: &[u8]) -> Result<Scan, ResilienceError> {
    let h = header();
    if buf.len() < HEADER_LEN {
        return if h.starts_with(buf) {
            Ok(Scan::default())
        } else {
            Err(corrupt(0, "bad magic"))
        };
    }
    if buf[..HEADER_LEN] != h[..] {
        return Err(corrupt(0, "bad magic or version"));
    }
    let mut out = Scan {
        records: Vec::new(),
        valid_len: HEADER_LEN,
    };
    let mut pos = HEADER_LEN;
    let mut open = std::collections::BTreeSet::new();
    let mut last_begun = 0u64;
    while pos < buf.len() {
        let rest = &buf[pos..];
        if rest.len() < 4 {
            break;
        }
        let len = u32::from_be_bytes(rest[..4].try_into().unwrap()) as usize;
        let end = 4 + len + 4;
        if rest.len() < end {
            break;
        }
        let body = &rest[4..4 + len];
        let crc = u32::from_be_bytes(rest[4 + len..end].try_into().unwrap());
        if crc != crc32fast::hash(body) {
            if pos + end == buf.len() {
                break;
            }
            return Err(corrupt(pos, "checksum mismatch"));
        }
        let rec = decode_body(body).map_err(|e| corrupt(pos, e))?;
        match rec.status {
            TxnStatus::Begun => {
                if rec.txn_id <= last_begun {
                    return Err(corrupt(pos, "transaction ids not increasing"));
                }
                last_begun = rec.txn_id;
                open.insert(rec.txn_id);
            }
            TxnStatus::Committed => {
                if !open.remove(&rec.txn_id) {
                    return Err(corrupt(pos, "commit without a matching begin"));
                }
            }
        }
        out.records.push(rec);
        pos += end;
        out.valid_len = pos;
    }
    Ok(out)
}

pub struct WalLog {
    path: PathBuf,
    file: File,
    max_entries: usize,
    next_txn: u64,
    uncommitted: BTreeMap<u64, ReplayEntry>,
    highest_committed: Option<ReplayEntry>,
    appended: usize,
}

impl std::fmt::Debug for WalLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WalLog")
            .field("path", &self.path)
            .field("next_txn", &self.next_txn)
            .field("uncommitted", &self.uncommitted.len())
            .finish()
    }
}

fn now_ms() -> u64 {
    chrono::Utc::now().timestamp_millis().max(0) as u64
}

impl WalLog {
    /// Opens or creates a log, truncating a torn final record.
    pub fn open(path: impl AsRef<Path>) -> Result<WalLog, ResilienceError> {
        Self::open_with_capacity(path, MAX_UNCOMMITTED)
    }

    pub fn open_with_capacity(path: impl AsRef<Path>, max_entries: usize) -> Result<WalLog, ResilienceError> {
        let path = path.as_ref().to_path_buf();
        let buf = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let scan = scan(&buf)?;
        if scan.valid_len < HEADER_LEN {
            fs::write(&path, header())?;
            File::open(&path)?.sync_all()?;
        } else if scan.valid_len < buf.len() {
            log::warn!(
                "write-ahead log {}: dropping {} bytes of torn tail",
                path.display(),
                buf.len() - scan.valid_len
            );
            let f = OpenOptions::new().write(true).open(&path)?;
            f.set_len(scan.valid_len as u64)?;
            f.sync_all()?;
        }
        let mut log = WalLog {
            file: OpenOptions::new().append(true).open(&path)?,
            path,
            max_entries,
            next_txn: 1,
            uncommitted: BTreeMap::new(),
            highest_committed: None,
            appended: scan.records.len(),
        };
        for r in scan.records {
            log.apply(&r);
        }
        Ok(log)
    }

    fn apply(&mut self, r: &WalRecord) {
        let entry = ReplayEntry {
            txn_id: r.txn_id,
            stage: r.stage.clone(),
            payload_digest: r.payload_digest,
        };
        match r.status {
            TxnStatus::Begun => {
                self.next_txn = self.next_txn.max(r.txn_id + 1);
                self.uncommitted.insert(r.txn_id, entry);
            }
            TxnStatus::Committed => {
                self.uncommitted.remove(&r.txn_id);
                if self.highest_committed.as_ref().map_or(true, |h| h.txn_id < r.txn_id) {
                    self.highest_committed = Some(entry);
                }
            }
        }
    }

    fn append(&mut self, r: &WalRecord) -> Result<(), ResilienceError> {
        self.file.write_all(&encode_record(r))?;
        self.file.sync_data()?;
        self.appended += 1;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn uncommitted_len(&self) -> usize {
        self.uncommitted.len()
    }

    pub fn begin(&mut self, stage: &str, payload_digest: [u8; 32]) -> Result<u64, ResilienceError> {
        if self.uncommitted.len() >= self.max_entries {
            return Err(ResilienceError::WalFull {
                max: self.max_entries,
            });
        }
        let rec = WalRecord {
            txn_id: self.next_txn,
            timestamp: now_ms(),
            stage: stage.to_owned(),
            payload_digest,
            status: TxnStatus::Begun,
        };
        self.append(&rec)?;
        self.apply(&rec);
        Ok(rec.txn_id)
    }

    pub fn commit(&mut self, txn_id: u64) -> Result<(), ResilienceError> {
        let Some(entry) = self.uncommitted.get(&txn_id).cloned() else {
            return Err(if txn_id > 0 && txn_id < self.next_txn {
                ResilienceError::DoubleCommit(txn_id)
            } else {
                ResilienceError::UnknownTxn(txn_id)
            });
        };
        let rec = WalRecord {
            txn_id,
            timestamp: now_ms(),
            stage: entry.stage,
            payload_digest: entry.payload_digest,
            status: TxnStatus::Committed,
        };
        self.append(&rec)?;
        self.apply(&rec);
        if self.appended > COMPACT_AFTER {
            self.compact()?;
        }
        Ok(())
    }

    /// Begun-without-Committed transactions in id order.
    pub fn recover(&self) -> Vec<ReplayEntry> {
        self.uncommitted.values().cloned().collect()
    }

    /// Rewrites the log keeping only open transactions, plus the newest
    /// committed pair so ids keep increasing across restarts.
    pub fn compact(&mut self) -> Result<(), ResilienceError> {
        let mut out = header();
        let as_record = |e: &ReplayEntry, status| WalRecord {
            txn_id: e.txn_id,
            timestamp: now_ms(),
            stage: e.stage.clone(),
            payload_digest: e.payload_digest,
            status,
        };
        let mut keep: Vec<WalRecord> = self
            .uncommitted
            .values()
            .map(|e| as_record(e, TxnStatus::Begun))
            .collect();
        let newest_open = self.uncommitted.keys().next_back().copied().unwrap_or(0);
        if let Some(h) = self.highest_committed.as_ref().filter(|h| h.txn_id > newest_open) {
            keep.push(as_record(h, TxnStatus::Begun));
            keep.push(as_record(h, TxnStatus::Committed));
        }
        for r in &keep {
            out.extend(encode_record(r));
        }
        let tmp = self.path.with_extension("compact");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&out)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        self.file = OpenOptions::new().append(true).open(&self.path)?;
        self.appended = keep.len();
        Ok(())
    }
}

/// Every intact record of a log file, without modifying it.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<WalRecord>, ResilienceError> {
    Ok(scan(&fs::read(path)?)?.records)
}

/// Replay set of a log image, tolerating a torn tail.
pub fn recover_bytes(buf: &[u8]) -> Result<Vec<ReplayEntry>, ResilienceError> {
    let mut open = BTreeMap::new();
    for r in scan(buf)?.records {
        match r.status {
            TxnStatus::Begun => {
                open.insert(
                    r.txn_id,
                    ReplayEntry {
                        txn_id: r.txn_id,
                        stage: r.stage,
                        payload_digest: r.payload_digest,
                    },
                );
            }
            TxnStatus::Committed => {
                open.remove(&r.txn_id);
            }
        }
    }
    Ok(open.into_values().collect())
}
