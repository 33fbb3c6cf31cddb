//! In-process brokers, addressed by name within one process.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use crate::agent::{BrokerRole, Connector, EndpointConfig, FailoverAgent, Link, PRIMARY_KEY, SECONDARY_KEY, INPROC};
use crate::broker::{BrokerCore, Delivery, Message, MessageId, QueueMode, SessionId};
use crate::error::TransportError;

pub const DEFAULT_BROKER: &str = "default";

fn registry() -> &'static Mutex<HashMap<String, Arc<BrokerCore>>> {
    static REGISTRY: OnceLock<Mutex<HashMap<String, Arc<BrokerCore>>>> = OnceLock::new();
    REGISTRY.get_or_init(Default::default)
}

fn next_session() -> SessionId {
    static NEXT: AtomicU64 = AtomicU64::new(1);
    NEXT.fetch_add(1, Ordering::Relaxed)
}

/// Starts (or restarts, if the previous one was killed) a named broker.
pub fn start_broker(name: &str) -> Arc<BrokerCore> {
    let mut reg = registry().lock().unwrap();
    match reg.get(name) {
        Some(b) if b.is_alive() => b.clone(),
        _ => {
            let b = Arc::new(BrokerCore::new(name));
            reg.insert(name.to_owned(), b.clone());
            b
        }
    }
}

/// Starts a primary that mirrors every change to a warm secondary.
pub fn start_pair(primary: &str, secondary: &str) -> (Arc<BrokerCore>, Arc<BrokerCore>) {
    let p = start_broker(primary);
    let s = start_broker(secondary);
    p.set_mirror(s.clone());
    (p, s)
}

pub fn broker(name: &str) -> Option<Arc<BrokerCore>> {
    registry().lock().unwrap().get(name).cloned()
}

/// Crashes a named broker; connected agents see it as unresponsive.
pub fn kill_broker(name: &str) {
    if let Some(b) = registry().lock().unwrap().remove(name) {
        b.kill();
    }
}

struct InprocConnector {
    primary: String,
    secondary: Option<String>,
}

impl Connector for InprocConnector {
    fn connect(&self, role: BrokerRole) -> Result<Arc<dyn Link>, TransportError> {
        let name = match role {
            BrokerRole::Primary => &self.primary,
            BrokerRole::Secondary => self
                .secondary
                .as_ref()
                .ok_or_else(|| TransportError::BrokerDown("secondary".into()))?,
        };
        let core = match broker(name) {
            Some(b) if b.is_alive() => b,
            _ if name == DEFAULT_BROKER => start_broker(name),
            _ => return Err(TransportError::BrokerDown(name.clone())),
        };
        Ok(Arc::new(InprocLink {
            core,
            session: next_session(),
        }))
    }

    fn has(&self, role: BrokerRole) -> bool {
        role == BrokerRole::Primary || self.secondary.is_some()
    }
}

struct InprocLink {
    core: Arc<BrokerCore>,
    session: SessionId,
}

impl Link for InprocLink {
    fn subscribe(&self, queue: &str, consumer: &str, mode: QueueMode) -> Result<(), TransportError> {
        self.core.subscribe(self.session, queue, consumer, mode)
    }

    fn unsubscribe(&self, queue: &str, consumer: &str) -> Result<(), TransportError> {
        self.core.unsubscribe(queue, consumer)
    }

    fn publish(&self, queue: &str, message: Message) -> Result<(), TransportError> {
        self.core.publish(queue, message)
    }

    fn receive(
        &self,
        queue: &str,
        consumer: &str,
        timeout: Duration,
    ) -> Result<Option<Delivery>, TransportError> {
        self.core.receive(queue, consumer, timeout)
    }

    fn ack(&self, queue: &str, consumer: &str, id: MessageId) -> Result<(), TransportError> {
        self.core.ack(queue, consumer, id)
    }

    fn heartbeat(&self, _timeout: Duration) -> Result<(), TransportError> {
        if self.core.is_alive() {
            Ok(())
        } else {
            Err(TransportError::BrokerDown(self.core.name().to_owned()))
        }
    }

    fn close(&self) {
        self.core.disconnect(self.session);
    }
}

pub(crate) fn agent(config: &EndpointConfig) -> FailoverAgent {
    let connector = InprocConnector {
        primary: config.get(PRIMARY_KEY).unwrap_or(DEFAULT_BROKER).to_owned(),
        secondary: config.get(SECONDARY_KEY).map(str::to_owned),
    };
    FailoverAgent::new(INPROC, config, Box::new(connector))
}
