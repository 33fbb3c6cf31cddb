//! Client side of the TCP broker protocol.

use std::collections::HashMap;
use std::net::{Shutdown, SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crate::agent::{
    BrokerRole, Connector, EndpointConfig, FailoverAgent, Link, PRIMARY_KEY, SECONDARY_KEY, TCP_BROKER,
};
use crate::broker::{Delivery, Message, MessageId, QueueMode};
use crate::envelope::MacKey;
use crate::error::TransportError;
use crate::tcp::{decode_response, encode_request, read_control, write_control, Request, Response};

const CONNECT_TIMEOUT: Duration = Duration::from_secs(1);
const CALL_TIMEOUT: Duration = Duration::from_secs(5);

type Pending = Arc<Mutex<HashMap<u64, Sender<Response>>>>;

/// One authenticated connection to a TCP broker.
pub struct TcpLink {
    stream: TcpStream,
    key: MacKey,
    next_req: AtomicU64,
    pending: Pending,
    dead: Arc<AtomicBool>,
    write: Mutex<()>,
}

fn io(e: impl ToString) -> TransportError {
    TransportError::Io(e.to_string())
}

fn resolve(addr: &str) -> Result<SocketAddr, TransportError> {
    addr.to_socket_addrs()
        .map_err(io)?
        .next()
        .ok_or_else(|| io(format!("cannot resolve {addr}")))
}

impl TcpLink {
    pub fn connect(addr: &str, key: MacKey, max_payload: usize) -> Result<TcpLink, TransportError> {
        let stream = TcpStream::connect_timeout(&resolve(addr)?, CONNECT_TIMEOUT).map_err(io)?;
        stream.set_nodelay(true).map_err(io)?;
        let pending: Pending = Arc::default();
        let dead = Arc::new(AtomicBool::new(false));
        let reader = stream.try_clone().map_err(io)?;
        {
            let (pending, dead, key) = (pending.clone(), dead.clone(), key.clone());
            thread::Builder::new()
                .name("broker-link".into())
                .spawn(move || read_loop(reader, key, max_payload, pending, dead))
                .map_err(io)?;
        }
        Ok(TcpLink {
            stream,
            key,
            next_req: AtomicU64::new(1),
            pending,
            dead,
            write: Mutex::new(()),
        })
    }

    pub(crate) fn call(&self, req: &Request, timeout: Duration) -> Result<Response, TransportError> {
        if self.dead.load(Ordering::SeqCst) {
            return Err(io("connection closed"));
        }
        let id = self.next_req.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = mpsc::channel();
        self.pending.lock().unwrap().insert(id, tx);
        let sent = {
            let _guard = self.write.lock().unwrap();
            write_control(&self.stream, &self.key, encode_request(id, req))
        };
        if let Err(e) = sent {
            self.pending.lock().unwrap().remove(&id);
            return Err(e);
        }
        match rx.recv_timeout(timeout) {
            Ok(Response::Failed(e)) => Err(e),
            Ok(resp) => Ok(resp),
            Err(RecvTimeoutError::Timeout) => {
                self.pending.lock().unwrap().remove(&id);
                Err(io("broker did not answer in time"))
            }
            Err(RecvTimeoutError::Disconnected) => Err(io("connection closed")),
        }
    }

    fn expect_done(&self, req: Request) -> Result<(), TransportError> {
        self.call(&req, CALL_TIMEOUT).map(|_| ())
    }
}

fn read_loop(stream: TcpStream, key: MacKey, max_payload: usize, pending: Pending, dead: Arc<AtomicBool>) {
    loop {
        let parsed = read_control(&stream, &key, max_payload).and_then(|p| Ok(decode_response(&p)?));
        match parsed {
            Ok((id, resp)) => {
                if let Some(tx) = pending.lock().unwrap().remove(&id) {
                    let _ = tx.send(resp);
                }
            }
            Err(e) => {
                log::debug!("broker link closed: {e}");
                break;
            }
        }
    }
    dead.store(true, Ordering::SeqCst);
    // Dropping the senders wakes every waiting caller.
    pending.lock().unwrap().clear();
}

impl Link for TcpLink {
    fn subscribe(&self, queue: &str, consumer: &str, mode: QueueMode) -> Result<(), TransportError> {
        self.expect_done(Request::Subscribe {
            queue: queue.to_owned(),
            consumer: consumer.to_owned(),
            mode,
        })
    }

    fn unsubscribe(&self, queue: &str, consumer: &str) -> Result<(), TransportError> {
        self.expect_done(Request::Unsubscribe {
            queue: queue.to_owned(),
            consumer: consumer.to_owned(),
        })
    }

    fn publish(&self, queue: &str, message: Message) -> Result<(), TransportError> {
        self.expect_done(Request::Publish {
            queue: queue.to_owned(),
            message,
        })
    }

    fn receive(
        &self,
        queue: &str,
        consumer: &str,
        timeout: Duration,
    ) -> Result<Option<Delivery>, TransportError> {
        let req = Request::Receive {
            queue: queue.to_owned(),
            consumer: consumer.to_owned(),
            timeout_ms: timeout.as_millis() as u64,
        };
        match self.call(&req, timeout + CALL_TIMEOUT)? {
            Response::Delivered(d) => Ok(d),
            other => Err(TransportError::Remote(format!("unexpected response {other:?}"))),
        }
    }

    fn ack(&self, queue: &str, consumer: &str, id: MessageId) -> Result<(), TransportError> {
        self.expect_done(Request::Ack {
            queue: queue.to_owned(),
            consumer: consumer.to_owned(),
            id,
        })
    }

    fn heartbeat(&self, timeout: Duration) -> Result<(), TransportError> {
        self.call(&Request::Heartbeat, timeout).map(|_| ())
    }

    fn close(&self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

impl Drop for TcpLink {
    fn drop(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

struct TcpConnector {
    primary: String,
    secondary: Option<String>,
    key: MacKey,
    max_payload: usize,
}

impl Connector for TcpConnector {
    fn connect(&self, role: BrokerRole) -> Result<Arc<dyn Link>, TransportError> {
        let addr = match role {
            BrokerRole::Primary => &self.primary,
            BrokerRole::Secondary => self
                .secondary
                .as_ref()
                .ok_or_else(|| TransportError::BrokerDown("secondary".into()))?,
        };
        let link = TcpLink::connect(addr, self.key.clone(), self.max_payload)?;
        link.heartbeat(CONNECT_TIMEOUT)?;
        Ok(Arc::new(link))
    }

    fn has(&self, role: BrokerRole) -> bool {
        role == BrokerRole::Primary || self.secondary.is_some()
    }
}

pub(crate) fn agent(config: &EndpointConfig) -> Result<FailoverAgent, TransportError> {
    let connector = TcpConnector {
        primary: config.require(PRIMARY_KEY)?.to_owned(),
        secondary: config.get(SECONDARY_KEY).map(str::to_owned),
        key: config.mac_key(),
        max_payload: config.max_payload(),
    };
    Ok(FailoverAgent::new(TCP_BROKER, config, Box::new(connector)))
}
