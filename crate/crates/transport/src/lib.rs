//! Transport agents for the eductive runtime.
//!
//! Envelopes are framed, MAC-protected messages. Agents publish them to named
//! queues on a broker and fail over to a warm secondary broker when the
//! primary stops answering.

pub mod agent;
pub mod broker;
pub mod envelope;
pub mod error;
pub mod inproc;
pub mod tcp;

pub use agent::{
    create_agent, reply, sync_call, BrokerRole, EndpointConfig, FailoverAgent, RpcClient, TransportAgent,
    IMPLEMENTATION_KEY,
};
pub use broker::{BrokerCore, Delivery, MessageId, QueueMode};
pub use envelope::{EnvelopeKind, MacKey, TransportEnvelope, DEFAULT_MAX_PAYLOAD, HEADER_LEN, WIRE_VERSION};
pub use error::{FrameError, TransportError};
pub use tcp::server::TcpBroker;
