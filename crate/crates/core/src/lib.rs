//! Demand model and demand store for the eductive multi-tier runtime.
//!
//! A [`Demand`] names a value by `(kind, program, context, payload)`; its
//! [`DemandSignature`] is a content hash, so identical requests collapse onto
//! one [`DispatchEntry`] in the [`DemandStore`] and are computed once.

pub mod codec;
pub mod context;
pub mod demand;
pub mod error;
pub mod snapshot;
pub mod store;

pub use context::Context;
pub use demand::{
    compute_signature, transition, Demand, DemandEvent, DemandKind, DemandSignature, DemandState,
    Millis, TimelineEntry,
};
pub use error::{DemandError, StoreError};
pub use store::{
    Checkout, Claim, Deposit, DemandStore, DispatchEntry, GcPolicy, GlobalId, StateChange,
    StoreConfig, StoreStats, Warehouse, WarehouseEntry,
};

/// Current wall-clock time in milliseconds since the Unix epoch.
pub fn now_ms() -> Millis {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as Millis)
        .unwrap_or(0)
}
