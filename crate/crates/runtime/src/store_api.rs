//! How DGTs and DWTs reach the demand store: in-process or over the
//! transport, with the same contract.

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use eduction_core::codec::{Decoder, Encoder};
use eduction_core::{now_ms, Claim, Demand, DemandSignature, DemandStore, Deposit, GlobalId};
use eduction_transport::{EnvelopeKind, RpcClient, TransportAgent, TransportEnvelope, TransportError};
use uuid::Uuid;

use crate::error::{RuntimeError, StoreFault};

/// Computed values carry a one-byte outcome tag.
pub mod outcome {
    pub const OK: u8 = 0;
    pub const FAILED: u8 = 1;

    pub fn ok(value: &[u8]) -> Vec<u8> {
        let mut v = Vec::with_capacity(value.len() + 1);
        v.push(OK);
        v.extend_from_slice(value);
        v
    }

    pub fn failed(reason: &str) -> Vec<u8> {
        let mut v = Vec::with_capacity(reason.len() + 1);
        v.push(FAILED);
        v.extend_from_slice(reason.as_bytes());
        v
    }

    /// Splits a stored value into the function result or its error text.
    pub fn split(stored: &[u8]) -> Result<&[u8], String> {
        match stored.split_first() {
            Some((&OK, rest)) => Ok(rest),
            Some((&FAILED, rest)) => Err(String::from_utf8_lossy(rest).into_owned()),
            _ => Err("malformed stored value".into()),
        }
    }
}

pub trait StoreApi: Send + Sync {
    fn lookup(&self, signature: &DemandSignature) -> Result<Option<Vec<u8>>, RuntimeError>;
    fn deposit(&self, demand: &Demand) -> Result<Deposit, RuntimeError>;
    /// Takes one entry for `worker`. Claiming an entry the worker already
    /// holds returns it again, so retried claims are harmless.
    fn claim(&self, global_id: GlobalId, worker: &str) -> Result<Claim, RuntimeError>;
    fn complete(&self, global_id: GlobalId, worker: &str, value: &[u8]) -> Result<(), RuntimeError>;
    /// Blocks up to `timeout` for the entry's value.
    fn wait_computed(&self, global_id: GlobalId, timeout: Duration) -> Result<Option<Vec<u8>>, RuntimeError>;
}

pub(crate) fn claim_reentrant(store: &DemandStore, gid: GlobalId, worker: &str) -> Result<Claim, RuntimeError> {
    match store.claim(gid, worker, now_ms())? {
        Claim::Busy { owner } if owner == worker => match store.get(gid) {
            Some(e) => Ok(Claim::Claimed(e.demand)),
            None => Err(RuntimeError::Store {
                fault: StoreFault::UnknownEntry,
                message: format!("unknown dispatch entry {gid}"),
            }),
        },
        other => Ok(other),
    }
}

/// Direct calls on a store in the same address space.
#[derive(Debug, Clone)]
pub struct LocalStore(pub Arc<DemandStore>);

impl StoreApi for LocalStore {
    fn lookup(&self, signature: &DemandSignature) -> Result<Option<Vec<u8>>, RuntimeError> {
        Ok(self.0.lookup(signature, now_ms()))
    }

    fn deposit(&self, demand: &Demand) -> Result<Deposit, RuntimeError> {
        Ok(self.0.deposit(demand.clone())?)
    }

    fn claim(&self, global_id: GlobalId, worker: &str) -> Result<Claim, RuntimeError> {
        claim_reentrant(&self.0, global_id, worker)
    }

    fn complete(&self, global_id: GlobalId, worker: &str, value: &[u8]) -> Result<(), RuntimeError> {
        Ok(self.0.complete(global_id, worker, value.to_vec(), now_ms())?)
    }

    fn wait_computed(&self, global_id: GlobalId, timeout: Duration) -> Result<Option<Vec<u8>>, RuntimeError> {
        Ok(self.0.wait_computed(global_id, timeout))
    }
}

const WIRE_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Lookup(DemandSignature),
    Deposit(Demand),
    Claim { global_id: GlobalId, worker: String },
    Complete { global_id: GlobalId, worker: String, value: Vec<u8> },
    Wait { global_id: GlobalId, millis: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Value(Option<Vec<u8>>),
    Deposited(Deposit),
    Claimed(Claim),
    Done,
    Failed { fault: StoreFault, message: String },
}

fn put_opt(enc: &mut Encoder, v: &Option<Vec<u8>>) {
    match v {
        Some(b) => {
            enc.u8(1).bytes(b);
        }
        None => {
            enc.u8(0);
        }
    }
}

fn get_opt(dec: &mut Decoder<'_>) -> Result<Option<Vec<u8>>, RuntimeError> {
    Ok(match dec.u8()? {
        0 => None,
        1 => Some(dec.bytes()?.to_vec()),
        t => return Err(RuntimeError::Protocol(format!("bad option tag {t}"))),
    })
}

fn get_gid(dec: &mut Decoder<'_>) -> Result<GlobalId, RuntimeError> {
    Ok(Uuid::from_bytes(dec.array()?))
}

impl Request {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u8(WIRE_VERSION);
        match self {
            Request::Lookup(sig) => {
                enc.u8(1).raw(sig.as_bytes());
            }
            Request::Deposit(d) => {
                enc.u8(2).bytes(&d.encode());
            }
            Request::Claim { global_id, worker } => {
                enc.u8(3).raw(global_id.as_bytes()).str(worker);
            }
            Request::Complete { global_id, worker, value } => {
                enc.u8(4).raw(global_id.as_bytes()).str(worker).bytes(value);
            }
            Request::Wait { global_id, millis } => {
                enc.u8(5).raw(global_id.as_bytes()).u64(*millis);
            }
        }
        enc.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Request, RuntimeError> {
        let mut dec = Decoder::new(buf);
        dec.expect_version(WIRE_VERSION)?;
        let req = match dec.u8()? {
            1 => Request::Lookup(DemandSignature(dec.array()?)),
            2 => Request::Deposit(Demand::decode(dec.bytes()?)?),
            3 => Request::Claim {
                global_id: get_gid(&mut dec)?,
                worker: dec.str()?.to_owned(),
            },
            4 => Request::Complete {
                global_id: get_gid(&mut dec)?,
                worker: dec.str()?.to_owned(),
                value: dec.bytes()?.to_vec(),
            },
            5 => Request::Wait {
                global_id: get_gid(&mut dec)?,
                millis: dec.u64()?,
            },
            t => return Err(RuntimeError::Protocol(format!("unknown request tag {t}"))),
        };
        dec.finish()?;
        Ok(req)
    }
}

impl Response {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u8(WIRE_VERSION);
        match self {
            Response::Value(v) => {
                enc.u8(1);
                put_opt(&mut enc, v);
            }
            Response::Deposited(d) => {
                enc.u8(2).raw(d.global_id.as_bytes()).u8(d.created as u8);
                put_opt(&mut enc, &d.already_computed);
            }
            Response::Claimed(c) => {
                enc.u8(3);
                match c {
                    Claim::Claimed(d) => enc.u8(0).bytes(&d.encode()),
                    Claim::Busy { owner } => enc.u8(1).str(owner),
                    Claim::Computed(v) => enc.u8(2).bytes(v),
                };
            }
            Response::Done => {
                enc.u8(4);
            }
            Response::Failed { fault, message } => {
                enc.u8(5).u8(fault.tag()).str(message);
            }
        }
        enc.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Response, RuntimeError> {
        let mut dec = Decoder::new(buf);
        dec.expect_version(WIRE_VERSION)?;
        let resp = match dec.u8()? {
            1 => Response::Value(get_opt(&mut dec)?),
            2 => {
                let global_id = get_gid(&mut dec)?;
                let created = dec.u8()? == 1;
                Response::Deposited(Deposit {
                    global_id,
                    already_computed: get_opt(&mut dec)?,
                    created,
                })
            }
            3 => Response::Claimed(match dec.u8()? {
                0 => Claim::Claimed(Demand::decode(dec.bytes()?)?),
                1 => Claim::Busy {
                    owner: dec.str()?.to_owned(),
                },
                2 => Claim::Computed(dec.bytes()?.to_vec()),
                t => return Err(RuntimeError::Protocol(format!("unknown claim tag {t}"))),
            }),
            4 => Response::Done,
            5 => Response::Failed {
                fault: StoreFault::from_tag(dec.u8()?),
                message: dec.str()?.to_owned(),
            },
            t => return Err(RuntimeError::Protocol(format!("unknown response tag {t}"))),
        };
        dec.finish()?;
        Ok(resp)
    }
}

/// Serves one request against a store. `Wait` blocks for at most its budget.
pub fn handle(store: &DemandStore, req: Request) -> Response {
    let result = match req {
        Request::Lookup(sig) => Ok(Response::Value(store.lookup(&sig, now_ms()))),
        Request::Deposit(d) => store.deposit(d).map(Response::Deposited).map_err(RuntimeError::from),
        Request::Claim { global_id, worker } => claim_reentrant(store, global_id, &worker).map(Response::Claimed),
        Request::Complete { global_id, worker, value } => store
            .complete(global_id, &worker, value, now_ms())
            .map(|()| Response::Done)
            .map_err(RuntimeError::from),
        Request::Wait { global_id, millis } => Ok(Response::Value(
            store.wait_computed(global_id, Duration::from_millis(millis)),
        )),
    };
    result.unwrap_or_else(|e| match e {
        RuntimeError::Store { fault, message } => Response::Failed { fault, message },
        other => Response::Failed {
            fault: StoreFault::Other,
            message: other.to_string(),
        },
    })
}

/// Store calls carried as request/response envelopes to the DST queue.
pub struct RemoteStore {
    rpc: RpcClient,
    queue: String,
    attempt_timeout: Duration,
    attempts: u32,
    /// Server-side wait budget of one `Wait` request.
    wait_slice: Duration,
}

impl RemoteStore {
    pub fn new(agent: Arc<dyn TransportAgent>, queue: &str, attempt_timeout: Duration) -> Result<Self, RuntimeError> {
        Ok(Self {
            rpc: RpcClient::new(agent)?,
            queue: queue.to_owned(),
            attempt_timeout,
            attempts: 4,
            wait_slice: Duration::from_millis(250),
        })
    }

    fn call(&self, req: Request) -> Result<Response, RuntimeError> {
        let payload = req.encode();
        let agent = self.rpc.agent();
        let mut last = None;
        for _ in 0..self.attempts {
            let env = TransportEnvelope::seal(EnvelopeKind::Demand, rand::random(), payload.clone(), agent.key());
            match self.rpc.call(&self.queue, &env, self.attempt_timeout) {
                Ok(reply) => {
                    if !reply.verify(agent.key()) {
                        return Err(RuntimeError::Protocol("reply failed authentication".into()));
                    }
                    return match Response::decode(&reply.payload)? {
                        Response::Failed { fault, message } => Err(RuntimeError::Store { fault, message }),
                        ok => Ok(ok),
                    };
                }
                Err(e @ TransportError::Timeout(_)) => last = Some(e),
                Err(e) if e.is_connection_loss() => {
                    last = Some(e);
                    thread::sleep(Duration::from_millis(50));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(last.map(RuntimeError::from).unwrap_or_else(|| RuntimeError::Timeout("store".into())))
    }

    fn unexpected(r: Response) -> RuntimeError {
        RuntimeError::Protocol(format!("unexpected response {r:?}"))
    }
}

impl StoreApi for RemoteStore {
    fn lookup(&self, signature: &DemandSignature) -> Result<Option<Vec<u8>>, RuntimeError> {
        match self.call(Request::Lookup(*signature))? {
            Response::Value(v) => Ok(v),
            r => Err(Self::unexpected(r)),
        }
    }

    fn deposit(&self, demand: &Demand) -> Result<Deposit, RuntimeError> {
        match self.call(Request::Deposit(demand.clone()))? {
            Response::Deposited(d) => Ok(d),
            r => Err(Self::unexpected(r)),
        }
    }

    fn claim(&self, global_id: GlobalId, worker: &str) -> Result<Claim, RuntimeError> {
        match self.call(Request::Claim {
            global_id,
            worker: worker.to_owned(),
        })? {
            Response::Claimed(c) => Ok(c),
            r => Err(Self::unexpected(r)),
        }
    }

    fn complete(&self, global_id: GlobalId, worker: &str, value: &[u8]) -> Result<(), RuntimeError> {
        match self.call(Request::Complete {
            global_id,
            worker: worker.to_owned(),
            value: value.to_vec(),
        })? {
            Response::Done => Ok(()),
            r => Err(Self::unexpected(r)),
        }
    }

    fn wait_computed(&self, global_id: GlobalId, timeout: Duration) -> Result<Option<Vec<u8>>, RuntimeError> {
        let millis = timeout.min(self.wait_slice).as_millis() as u64;
        match self.call(Request::Wait { global_id, millis })? {
            Response::Value(v) => Ok(v),
            r => Err(Self::unexpected(r)),
        }
    }
}
