//! Admission control: only envelopes carrying a valid MAC reach the tiers.

use std::sync::atomic::{AtomicU64, Ordering};

use eduction_transport::{MacKey, TransportEnvelope, WIRE_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtectionEvent {
    MessageIsComing,
    MessageSecure,
    MessageInsecure,
}

impl ProtectionEvent {
    pub fn name(self) -> &'static str {
        match self {
            ProtectionEvent::MessageIsComing => "message_is_coming",
            ProtectionEvent::MessageSecure => "message_secure",
            ProtectionEvent::MessageInsecure => "message_insecure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    BadMac,
    BadVersion(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl Verdict {
    pub fn accepted(self) -> bool {
        self == Verdict::Accept
    }
}

pub fn protect_check(
    envelope: &TransportEnvelope,
    key: &MacKey,
    mut on_event: impl FnMut(ProtectionEvent),
) -> Verdict {
    on_event(ProtectionEvent::MessageIsComing);
    let verdict = if envelope.version != WIRE_VERSION {
        Verdict::Reject(RejectReason::BadVersion(envelope.version))
    } else if !envelope.verify(key) {
        Verdict::Reject(RejectReason::BadMac)
    } else {
        Verdict::Accept
    };
    on_event(if verdict.accepted() {
        ProtectionEvent::MessageSecure
    } else {
        ProtectionEvent::MessageInsecure
    });
    verdict
}

/// Shared admission point with running counts.
#[derive(Debug)]
pub struct Guard {
    key: MacKey,
    accepted: AtomicU64,
    rejected: AtomicU64,
}

impl Guard {
    pub fn new(key: MacKey) -> Self {
        Self {
            key,
            accepted: AtomicU64::new(0),
            rejected: AtomicU64::new(0),
        }
    }

    pub fn admit(&self, envelope: &TransportEnvelope, on_event: impl FnMut(ProtectionEvent)) -> Verdict {
        let v = protect_check(envelope, &self.key, on_event);
        let counter = if v.accepted() { &self.accepted } else { &self.rejected };
        counter.fetch_add(1, Ordering::Relaxed);
        v
    }

    pub fn accepted(&self) -> u64 {
        self.accepted.load(Ordering::Relaxed)
    }

    pub fn rejected(&self) -> u64 {
        self.rejected.load(Ordering::Relaxed)
    }
}
