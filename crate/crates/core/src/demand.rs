//! Demands: the unit of work exchanged between tiers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::context::Context;
use crate::error::DemandError;

/// Milliseconds since the Unix epoch.
pub type Millis = u64;

pub const ENCODING_VERSION: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DemandKind {
    Intensional,
    Procedural,
    Resource,
    System,
}

impl DemandKind {
    pub const ALL: [DemandKind; 4] = [
        DemandKind::Intensional,
        DemandKind::Procedural,
        DemandKind::Resource,
        DemandKind::System,
    ];

    pub fn tag(self) -> u8 {
        match self {
            DemandKind::Intensional => 0x01,
            DemandKind::Procedural => 0x02,
            DemandKind::Resource => 0x03,
            DemandKind::System => 0x04,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self, DecodeError> {
        Ok(match tag {
            0x01 => DemandKind::Intensional,
            0x02 => DemandKind::Procedural,
            0x03 => DemandKind::Resource,
            0x04 => DemandKind::System,
            value => {
                return Err(DecodeError::Tag {
                    field: "demand kind",
                    value,
                })
            }
        })
    }
}

/// Content hash identifying a demand. Equal requests share a signature.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DemandSignature(pub [u8; 32]);

impl DemandSignature {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Hash of arbitrary bytes; used for correlation ids that are not demands.
    pub fn digest_of(bytes: &[u8]) -> Self {
        Self(Sha256::digest(bytes).into())
    }
}

impl fmt::Display for DemandSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for DemandSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DemandSignature({})", &self.to_hex()[..16])
    }
}

impl FromStr for DemandSignature {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Self(out))
    }
}

impl Serialize for DemandSignature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for DemandSignature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemandState {
    Pending,
    Processing,
    Computed,
}

impl DemandState {
    pub fn tag(self) -> u8 {
        match self {
            DemandState::Pending => 0,
            DemandState::Processing => 1,
            DemandState::Computed => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self, DecodeError> {
        Ok(match tag {
            0 => DemandState::Pending,
            1 => DemandState::Processing,
            2 => DemandState::Computed,
            value => {
                return Err(DecodeError::Tag {
                    field: "demand state",
                    value,
                })
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DemandEvent {
    Dispatch,
    ResultStored,
    WorkerLost,
}

/// The legal-edge table of the demand lifecycle.
pub fn transition(state: DemandState, event: DemandEvent) -> Result<DemandState, DemandError> {
    use DemandEvent::*;
    use DemandState::*;
    match (state, event) {
        (Pending, Dispatch) => Ok(Processing),
        (Processing, ResultStored) => Ok(Computed),
        (Processing, WorkerLost) => Ok(Pending),
        (state, event) => Err(DemandError::IllegalTransition { state, event }),
    }
}

/// Canonical encoding of the identifying fields of a demand.
///
/// Layout: version `0x01`, kind byte, length-prefixed UTF-8 program id,
/// 4-byte dimension count followed by length-prefixed names and 8-byte
/// big-endian indexes (sorted by name), 4-byte payload length and payload.
pub fn canonical_bytes(
    kind: DemandKind,
    program_id: &str,
    context: &Context,
    payload: &[u8],
) -> Vec<u8> {
    let ctx = context.sorted();
    let mut enc = Encoder::with_capacity(16 + program_id.len() + payload.len());
    enc.u8(ENCODING_VERSION).u8(kind.tag()).str(program_id);
    enc.u32(ctx.len() as u32);
    for (name, index) in ctx.dims() {
        enc.str(name).i64(*index);
    }
    enc.bytes(payload);
    enc.finish()
}

pub fn compute_signature(
    kind: DemandKind,
    program_id: &str,
    context: &Context,
    payload: &[u8],
) -> DemandSignature {
    DemandSignature::digest_of(&canonical_bytes(kind, program_id, context, payload))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub tier_id: String,
    pub at: Millis,
}

/// A request for a value. Identity fields are fixed at construction; only the
/// lifecycle fields (state, timeline, access counter) change afterwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demand {
    signature: DemandSignature,
    kind: DemandKind,
    program_id: String,
    context: Context,
    payload: Vec<u8>,
    timeline: Vec<TimelineEntry>,
    access_number: u64,
    state: DemandState,
}

impl Demand {
    pub fn new(
        kind: DemandKind,
        program_id: impl Into<String>,
        context: Context,
        payload: Vec<u8>,
    ) -> Result<Self, DemandError> {
        let program_id = program_id.into();
        let context = context.canonicalize()?;
        let signature = compute_signature(kind, &program_id, &context, &payload);
        Ok(Self {
            signature,
            kind,
            program_id,
            context,
            payload,
            timeline: Vec::new(),
            access_number: 0,
            state: DemandState::Pending,
        })
    }

    pub fn signature(&self) -> DemandSignature {
        self.signature
    }

    pub fn kind(&self) -> DemandKind {
        self.kind
    }

    pub fn program_id(&self) -> &str {
        &self.program_id
    }

    pub fn context(&self) -> &Context {
        &self.context
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn timeline(&self) -> &[TimelineEntry] {
        &self.timeline
    }

    pub fn access_number(&self) -> u64 {
        self.access_number
    }

    pub fn state(&self) -> DemandState {
        self.state
    }

    pub fn apply(&mut self, event: DemandEvent) -> Result<DemandState, DemandError> {
        self.state = transition(self.state, event)?;
        Ok(self.state)
    }

    pub fn append_timeline(&mut self, tier_id: &str, now: Millis) -> Result<(), DemandError> {
        if let Some(last) = self.timeline.last() {
            if now < last.at {
                return Err(DemandError::ClockRegression { last: last.at, now });
            }
        }
        self.timeline.push(TimelineEntry {
            tier_id: tier_id.to_owned(),
            at: now,
        });
        Ok(())
    }

    /// Appends, clamping `now` up to the last recorded timestamp. Used where
    /// timestamps come from several hosts' clocks.
    pub fn append_timeline_clamped(&mut self, tier_id: &str, now: Millis) {
        let last = self.timeline.last().map_or(0, |e| e.at);
        // Infallible: the timestamp is at least `last`.
        let _ = self.append_timeline(tier_id, now.max(last));
    }

    pub(crate) fn record_access(&mut self) {
        self.access_number += 1;
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical_bytes(self.kind, &self.program_id, &self.context, &self.payload)
    }

    /// Full wire form: the canonical body followed by state, access counter
    /// and timeline.
    pub fn encode(&self) -> Vec<u8> {
        let body = self.canonical_bytes();
        let mut enc = Encoder::with_capacity(body.len() + 16 + self.timeline.len() * 24);
        enc.bytes(&body)
            .u8(self.state.tag())
            .u64(self.access_number)
            .u32(self.timeline.len() as u32);
        for e in &self.timeline {
            enc.str(&e.tier_id).u64(e.at);
        }
        enc.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, DemandError> {
        let mut outer = Decoder::new(buf);
        let demand = Self::decode_from(&mut outer)?;
        outer.finish()?;
        Ok(demand)
    }

    pub fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DemandError> {
        let body = dec.bytes()?;
        let mut b = Decoder::new(body);
        b.expect_version(ENCODING_VERSION)?;
        let kind = DemandKind::from_tag(b.u8()?)?;
        let program_id = b.str()?.to_owned();
        let n = b.u32()? as usize;
        let mut dims = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let name = b.str()?.to_owned();
            dims.push((name, b.i64()?));
        }
        let payload = b.bytes()?.to_vec();
        b.finish()?;
        let mut demand = Demand::new(kind, program_id, Context::from_dims(dims), payload)?;
        demand.state = DemandState::from_tag(dec.u8()?)?;
        demand.access_number = dec.u64()?;
        let entries = dec.u32()? as usize;
        for _ in 0..entries {
            let tier_id = dec.str()?.to_owned();
            let at = dec.u64()?;
            demand.timeline.push(TimelineEntry { tier_id, at });
        }
        Ok(demand)
    }
}

/// Tags for the structured payload fields of resource and system demands.
pub mod payload_tag {
    pub const RESOURCE_TYPE_ID: u8 = 0x01;
    pub const RESOURCE_ID: u8 = 0x02;
    pub const DESTINATION_TIER_ID: u8 = 0x03;
    pub const SYSTEM_DEMAND_TYPE_ID: u8 = 0x04;
}

/// Encodes `(tag, value)` pairs as tag byte + length-prefixed value.
pub fn encode_tagged(fields: &[(u8, &[u8])]) -> Vec<u8> {
    let mut enc = Encoder::new();
    for (tag, value) in fields {
        enc.u8(*tag).bytes(value);
    }
    enc.finish()
}

pub fn decode_tagged(buf: &[u8]) -> Result<Vec<(u8, Vec<u8>)>, DecodeError> {
    let mut dec = Decoder::new(buf);
    let mut out = Vec::new();
    while dec.remaining() > 0 {
        let tag = dec.u8()?;
        out.push((tag, dec.bytes()?.to_vec()));
    }
    Ok(out)
}

pub fn resource_payload(resource_type_id: &str, resource_id: &str) -> Vec<u8> {
    encode_tagged(&[
        (payload_tag::RESOURCE_TYPE_ID, resource_type_id.as_bytes()),
        (payload_tag::RESOURCE_ID, resource_id.as_bytes()),
    ])
}

pub fn system_payload(destination_tier_id: &str, system_demand_type_id: &str) -> Vec<u8> {
    encode_tagged(&[
        (payload_tag::DESTINATION_TIER_ID, destination_tier_id.as_bytes()),
        (payload_tag::SYSTEM_DEMAND_TYPE_ID, system_demand_type_id.as_bytes()),
    ])
}
