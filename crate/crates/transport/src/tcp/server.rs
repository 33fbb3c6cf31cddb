//! A broker process reachable over TCP.

use std::io;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crate::broker::{BrokerCore, Message, MessageId, Mirror, SessionId};
use crate::envelope::MacKey;
use crate::error::TransportError;
use crate::tcp::client::TcpLink;
use crate::tcp::{decode_request, encode_response, read_control, write_control, Request, Response};

struct ServerState {
    core: Arc<BrokerCore>,
    key: MacKey,
    max_payload: usize,
    stop: AtomicBool,
    connections: Mutex<Vec<TcpStream>>,
    next_session: AtomicU64,
}

/// Handle to a running TCP broker. Dropping it does not stop the broker;
/// call [`TcpBroker::kill`].
pub struct TcpBroker {
    addr: SocketAddr,
    state: Arc<ServerState>,
}

impl TcpBroker {
    pub fn start(
        addr: impl ToSocketAddrs,
        name: &str,
        key: MacKey,
        max_payload: usize,
    ) -> io::Result<TcpBroker> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let state = Arc::new(ServerState {
            core: Arc::new(BrokerCore::new(name)),
            key,
            max_payload,
            stop: AtomicBool::new(false),
            connections: Mutex::new(Vec::new()),
            next_session: AtomicU64::new(1),
        });
        let st = state.clone();
        thread::Builder::new()
            .name(format!("broker-{name}"))
            .spawn(move || accept_loop(listener, st))?;
        Ok(TcpBroker { addr, state })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn core(&self) -> &Arc<BrokerCore> {
        &self.state.core
    }

    /// Mirrors every publish and acknowledgement to a standby broker.
    pub fn mirror_to(&self, standby: &str) -> Result<(), TransportError> {
        let link = TcpLink::connect(standby, self.state.key.clone(), self.state.max_payload)?;
        self.state.core.set_mirror(Arc::new(TcpMirror { link }));
        Ok(())
    }

    /// Stops accepting, drops every connection and loses all queued state.
    pub fn kill(&self) {
        self.state.stop.store(true, Ordering::SeqCst);
        self.state.core.kill();
        for c in self.state.connections.lock().unwrap().drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
    }

    pub fn is_alive(&self) -> bool {
        !self.state.stop.load(Ordering::SeqCst)
    }
}

fn accept_loop(listener: TcpListener, st: Arc<ServerState>) {
    while !st.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_nodelay(true);
                if let Ok(clone) = stream.try_clone() {
                    st.connections.lock().unwrap().push(clone);
                }
                let session = st.next_session.fetch_add(1, Ordering::Relaxed);
                let st = st.clone();
                thread::spawn(move || serve(stream, session, st));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(10));
            }
            Err(e) => {
                log::error!("broker accept failed: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn serve(stream: TcpStream, session: SessionId, st: Arc<ServerState>) {
    let writer = Arc::new(Mutex::new(()));
    loop {
        let payload = match read_control(&stream, &st.key, st.max_payload) {
            Ok(p) => p,
            Err(TransportError::Io(_)) => break,
            Err(e) => {
                log::warn!("broker dropping connection: {e}");
                break;
            }
        };
        let (req_id, req) = match decode_request(&payload) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("broker dropping connection: {e}");
                break;
            }
        };
        if st.stop.load(Ordering::SeqCst) {
            break;
        }
        if let Request::Receive { queue, consumer, timeout_ms } = req {
            // Blocking receives must not stall the connection.
            let Ok(out) = stream.try_clone() else { break };
            let (st, writer) = (st.clone(), writer.clone());
            thread::spawn(move || {
                let resp = match st
                    .core
                    .receive(&queue, &consumer, Duration::from_millis(timeout_ms))
                {
                    Ok(d) => Response::Delivered(d),
                    Err(e) => Response::Failed(e),
                };
                let _guard = writer.lock().unwrap();
                let _ = write_control(&out, &st.key, encode_response(req_id, &resp));
            });
            continue;
        }
        let resp = match handle(&st.core, session, req) {
            Ok(()) => Response::Done,
            Err(e) => Response::Failed(e),
        };
        let _guard = writer.lock().unwrap();
        if write_control(&stream, &st.key, encode_response(req_id, &resp)).is_err() {
            break;
        }
    }
    st.core.disconnect(session);
    let _ = stream.shutdown(Shutdown::Both);
}

fn handle(core: &BrokerCore, session: SessionId, req: Request) -> Result<(), TransportError> {
    match req {
        Request::Subscribe { queue, consumer, mode } => core.subscribe(session, &queue, &consumer, mode),
        Request::Unsubscribe { queue, consumer } => core.unsubscribe(&queue, &consumer),
        Request::Publish { queue, message } => core.publish(&queue, message),
        Request::Ack { queue, consumer, id } => core.ack(&queue, &consumer, id),
        Request::Heartbeat => {
            if core.is_alive() {
                Ok(())
            } else {
                Err(TransportError::BrokerDown(core.name().to_owned()))
            }
        }
        Request::ReplicaPublish { queue, message } => core.apply_publish(&queue, message),
        Request::ReplicaRemove { queue, id } => core.apply_remove(&queue, id),
        Request::Receive { .. } => unreachable!("receive is served on its own thread"),
    }
}

struct TcpMirror {
    link: TcpLink,
}

impl Mirror for TcpMirror {
    fn replicate_publish(&self, queue: &str, message: &Message) {
        let req = Request::ReplicaPublish {
            queue: queue.to_owned(),
            message: message.clone(),
        };
        if let Err(e) = self.link.call(&req, Duration::from_secs(2)) {
            log::warn!("standby broker missed a publish: {e}");
        }
    }

    fn replicate_remove(&self, queue: &str, id: MessageId) {
        let req = Request::ReplicaRemove {
            queue: queue.to_owned(),
            id,
        };
        if let Err(e) = self.link.call(&req, Duration::from_secs(2)) {
            log::warn!("standby broker missed an acknowledgement: {e}");
        }
    }
}
