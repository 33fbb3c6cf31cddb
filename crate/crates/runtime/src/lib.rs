//! The multi-tier runtime: topology and manager, demand generators with
//! eductive evaluation, the store tier, workers, and the recognition
//! pipeline running over them.

pub mod cluster;
pub mod dgt;
pub mod dst;
pub mod dwt;
pub mod error;
pub mod events;
pub mod gmt;
pub mod marf;
pub mod program;
pub mod store_api;
pub mod topology;

pub use cluster::{Cluster, ClusterConfig};
pub use dgt::{Dgt, Submitted};
pub use dst::{DstService, STORE_QUEUE};
pub use dwt::{Dwt, FunctionTable, WorkerCtx, WorkerFn};
pub use error::{RuntimeError, StoreFault};
pub use events::{Event, EventBus, EventKind};
pub use gmt::{Gmt, GmtService, TierLauncher};
pub use marf::{CrashPoint, MarfClient, Replicas};
pub use program::{Program, HAMMING_PROGRAM};
pub use store_api::{LocalStore, RemoteStore, StoreApi};
pub use topology::{NodeDescriptor, NodeStatus, TierDescriptor, TierState, TierType, Topology};
