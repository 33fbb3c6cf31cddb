//! Explicit persistence of a demand store.
//!
//! File layout: version byte `0x01`, then a sequence of entries, each a
//! 4-byte big-endian length followed by the encoded entry. Written to a
//! temporary sibling and renamed into place.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use uuid::Uuid;

use crate::codec::{Decoder, Encoder};
use crate::demand::{Demand, DemandState};
use crate::error::StoreError;
use crate::store::{DemandStore, DispatchEntry, Inner, StoreConfig, WarehouseEntry};

pub const SNAPSHOT_VERSION: u8 = 0x01;

fn encode_entry(entry: &DispatchEntry, warehouse: Option<&WarehouseEntry>) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.raw(entry.global_id.as_bytes())
        .u64(entry.seq)
        .u8(entry.state.tag());
    match &entry.owner {
        Some(o) => enc.u8(1).str(o),
        None => enc.u8(0),
    };
    match entry.lease_deadline {
        Some(d) => enc.u8(1).u64(d),
        None => enc.u8(0),
    };
    match (&entry.value, warehouse) {
        (Some(_), Some(w)) => enc
            .u8(1)
            .bytes(&w.value)
            .u64(w.stored_at)
            .u64(w.last_hit)
            .u64(w.hits),
        _ => enc.u8(0),
    };
    enc.raw(&entry.demand.encode());
    enc.finish()
}

fn decode_entry(buf: &[u8]) -> Result<(DispatchEntry, Option<WarehouseEntry>), StoreError> {
    let corrupt = |e: crate::codec::DecodeError| StoreError::CorruptSnapshot(e.to_string());
    let mut dec = Decoder::new(buf);
    let gid = Uuid::from_bytes(dec.array().map_err(corrupt)?);
    let seq = dec.u64().map_err(corrupt)?;
    let state = DemandState::from_tag(dec.u8().map_err(corrupt)?).map_err(corrupt)?;
    let owner = match dec.u8().map_err(corrupt)? {
        0 => None,
        _ => Some(dec.str().map_err(corrupt)?.to_owned()),
    };
    let lease_deadline = match dec.u8().map_err(corrupt)? {
        0 => None,
        _ => Some(dec.u64().map_err(corrupt)?),
    };
    let warehouse = match dec.u8().map_err(corrupt)? {
        0 => None,
        _ => Some(WarehouseEntry {
            value: dec.bytes().map_err(corrupt)?.to_vec(),
            stored_at: dec.u64().map_err(corrupt)?,
            last_hit: dec.u64().map_err(corrupt)?,
            hits: dec.u64().map_err(corrupt)?,
        }),
    };
    let demand = Demand::decode_from(&mut dec)?;
    dec.finish().map_err(corrupt)?;
    let consistent = match state {
        DemandState::Computed => warehouse.is_some(),
        DemandState::Processing => owner.is_some() && lease_deadline.is_some(),
        DemandState::Pending => warehouse.is_none() && owner.is_none(),
    };
    if !consistent || demand.state() != state {
        return Err(StoreError::CorruptSnapshot(format!(
            "entry {gid} violates state invariants"
        )));
    }
    Ok((
        DispatchEntry {
            global_id: gid,
            signature: demand.signature(),
            demand,
            state,
            value: warehouse.as_ref().map(|w| w.value.clone()),
            owner,
            lease_deadline,
            seq,
        },
        warehouse,
    ))
}

impl DemandStore {
    pub fn write_snapshot(&self, path: &Path) -> Result<(), StoreError> {
        let mut out = Encoder::new();
        out.u8(SNAPSHOT_VERSION);
        {
            let inner = self.lock();
            let mut entries: Vec<_> = inner.entries.values().collect();
            entries.sort_by_key(|e| e.seq);
            for e in entries {
                out.bytes(&encode_entry(e, inner.warehouse.get(&e.signature)));
            }
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&out.finish())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load_snapshot(path: &Path, config: StoreConfig) -> Result<DemandStore, StoreError> {
        let buf = fs::read(path)?;
        let mut dec = Decoder::new(&buf);
        dec.expect_version(SNAPSHOT_VERSION)
            .map_err(|e| StoreError::CorruptSnapshot(e.to_string()))?;
        let mut inner = Inner::new(config.warehouse_capacity);
        while dec.remaining() > 0 {
            let raw = dec
                .bytes()
                .map_err(|e| StoreError::CorruptSnapshot(e.to_string()))?;
            let (entry, wh) = decode_entry(raw)?;
            if inner.by_signature.contains_key(&entry.signature) {
                return Err(StoreError::CorruptSnapshot(format!(
                    "duplicate signature {}",
                    entry.signature
                )));
            }
            inner.next_seq = inner.next_seq.max(entry.seq + 1);
            if entry.state == DemandState::Pending {
                inner.pending.insert(entry.seq, entry.global_id);
            }
            if let Some(w) = wh {
                inner.warehouse.entries_mut().insert(entry.signature, w);
            }
            inner.by_signature.insert(entry.signature, entry.global_id);
            inner.entries.insert(entry.global_id, entry);
        }
        Ok(DemandStore::from_inner(config, inner))
    }
}
