//! TCP broker protocol.
//!
//! Every frame on a broker connection is a CONTROL envelope sealed with the
//! instance key. Its payload is an operation record; data envelopes travel
//! inside it as complete encoded frames.

pub mod client;
pub mod server;

use std::io::Write;
use std::net::TcpStream;

use eduction_core::codec::{DecodeError, Decoder, Encoder};

use crate::broker::{Delivery, Message, MessageId, QueueMode};
use crate::envelope::{EnvelopeKind, MacKey, TransportEnvelope};
use crate::error::{FrameError, TransportError};

/// Room for the operation record around an embedded data frame.
pub(crate) const CONTROL_OVERHEAD: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Request {
    Subscribe { queue: String, consumer: String, mode: QueueMode },
    Unsubscribe { queue: String, consumer: String },
    Publish { queue: String, message: Message },
    Ack { queue: String, consumer: String, id: MessageId },
    Heartbeat,
    Receive { queue: String, consumer: String, timeout_ms: u64 },
    ReplicaPublish { queue: String, message: Message },
    ReplicaRemove { queue: String, id: MessageId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Response {
    Done,
    Failed(TransportError),
    Delivered(Option<Delivery>),
}

fn bad(e: DecodeError) -> FrameError {
    FrameError::Control(e.to_string())
}

fn put_id(enc: &mut Encoder, id: MessageId) {
    enc.u64((id >> 64) as u64).u64(id as u64);
}

fn get_id(dec: &mut Decoder) -> Result<MessageId, DecodeError> {
    Ok(((dec.u64()? as u128) << 64) | dec.u64()? as u128)
}

fn put_opt(enc: &mut Encoder, v: Option<&str>) {
    match v {
        Some(s) => enc.u8(1).str(s),
        None => enc.u8(0),
    };
}

fn get_opt(dec: &mut Decoder) -> Result<Option<String>, DecodeError> {
    Ok(match dec.u8()? {
        0 => None,
        _ => Some(dec.str()?.to_owned()),
    })
}

fn get_envelope(dec: &mut Decoder) -> Result<TransportEnvelope, FrameError> {
    TransportEnvelope::decode(dec.bytes().map_err(bad)?, usize::MAX)
}

fn put_message(enc: &mut Encoder, m: &Message) {
    put_id(enc, m.id);
    put_opt(enc, m.reply_to.as_deref());
    enc.bytes(&m.envelope.encode());
}

fn get_message(dec: &mut Decoder) -> Result<Message, FrameError> {
    let id = get_id(dec).map_err(bad)?;
    let reply_to = get_opt(dec).map_err(bad)?;
    Ok(Message {
        id,
        envelope: get_envelope(dec)?,
        reply_to,
    })
}

pub(crate) fn encode_request(req_id: u64, req: &Request) -> Vec<u8> {
    let mut enc = Encoder::new();
    match req {
        Request::Subscribe { queue, consumer, mode } => {
            enc.u8(1).u64(req_id).str(queue).str(consumer).u8(mode.tag());
        }
        Request::Unsubscribe { queue, consumer } => {
            enc.u8(2).u64(req_id).str(queue).str(consumer);
        }
        Request::Publish { queue, message } => {
            enc.u8(3).u64(req_id).str(queue);
            put_message(&mut enc, message);
        }
        Request::Ack { queue, consumer, id } => {
            enc.u8(4).u64(req_id).str(queue).str(consumer);
            put_id(&mut enc, *id);
        }
        Request::Heartbeat => {
            enc.u8(5).u64(req_id);
        }
        Request::Receive { queue, consumer, timeout_ms } => {
            enc.u8(6).u64(req_id).str(queue).str(consumer).u64(*timeout_ms);
        }
        Request::ReplicaPublish { queue, message } => {
            enc.u8(7).u64(req_id).str(queue);
            put_message(&mut enc, message);
        }
        Request::ReplicaRemove { queue, id } => {
            enc.u8(8).u64(req_id).str(queue);
            put_id(&mut enc, *id);
        }
    }
    enc.finish()
}

pub(crate) fn decode_request(buf: &[u8]) -> Result<(u64, Request), FrameError> {
    let mut dec = Decoder::new(buf);
    let op = dec.u8().map_err(bad)?;
    let req_id = dec.u64().map_err(bad)?;
    let s = |dec: &mut Decoder| dec.str().map(str::to_owned).map_err(bad);
    let req = match op {
        1 => Request::Subscribe {
            queue: s(&mut dec)?,
            consumer: s(&mut dec)?,
            mode: QueueMode::from_tag(dec.u8().map_err(bad)?),
        },
        2 => Request::Unsubscribe {
            queue: s(&mut dec)?,
            consumer: s(&mut dec)?,
        },
        3 => Request::Publish {
            queue: s(&mut dec)?,
            message: get_message(&mut dec)?,
        },
        4 => Request::Ack {
            queue: s(&mut dec)?,
            consumer: s(&mut dec)?,
            id: get_id(&mut dec).map_err(bad)?,
        },
        5 => Request::Heartbeat,
        6 => Request::Receive {
            queue: s(&mut dec)?,
            consumer: s(&mut dec)?,
            timeout_ms: dec.u64().map_err(bad)?,
        },
        7 => Request::ReplicaPublish {
            queue: s(&mut dec)?,
            message: get_message(&mut dec)?,
        },
        8 => Request::ReplicaRemove {
            queue: s(&mut dec)?,
            id: get_id(&mut dec).map_err(bad)?,
        },
        other => return Err(FrameError::Control(format!("unknown operation {other}"))),
    };
    dec.finish().map_err(bad)?;
    Ok((req_id, req))
}

fn encode_error(enc: &mut Encoder, e: &TransportError) {
    match e {
        TransportError::NotSubscribed { queue, consumer } => enc.u8(1).str(queue).str(consumer),
        TransportError::ExclusiveQueue(q) => enc.u8(2).str(q).str(""),
        TransportError::BrokerDown(name) => enc.u8(3).str(name).str(""),
        other => enc.u8(0).str(&other.to_string()).str(""),
    };
}

fn decode_error(dec: &mut Decoder) -> Result<TransportError, DecodeError> {
    let tag = dec.u8()?;
    let a = dec.str()?.to_owned();
    let b = dec.str()?.to_owned();
    Ok(match tag {
        1 => TransportError::NotSubscribed { queue: a, consumer: b },
        2 => TransportError::ExclusiveQueue(a),
        3 => TransportError::BrokerDown(a),
        _ => TransportError::Remote(a),
    })
}

pub(crate) fn encode_response(req_id: u64, resp: &Response) -> Vec<u8> {
    let mut enc = Encoder::new();
    match resp {
        Response::Done => {
            enc.u8(16).u64(req_id);
        }
        Response::Failed(e) => {
            enc.u8(17).u64(req_id);
            encode_error(&mut enc, e);
        }
        Response::Delivered(None) => {
            enc.u8(18).u64(req_id).u8(0);
        }
        Response::Delivered(Some(d)) => {
            enc.u8(18).u64(req_id).u8(1).str(&d.queue);
            put_message(
                &mut enc,
                &Message {
                    id: d.id,
                    envelope: d.envelope.clone(),
                    reply_to: d.reply_to.clone(),
                },
            );
        }
    }
    enc.finish()
}

pub(crate) fn decode_response(buf: &[u8]) -> Result<(u64, Response), FrameError> {
    let mut dec = Decoder::new(buf);
    let op = dec.u8().map_err(bad)?;
    let req_id = dec.u64().map_err(bad)?;
    let resp = match op {
        16 => Response::Done,
        17 => Response::Failed(decode_error(&mut dec).map_err(bad)?),
        18 => match dec.u8().map_err(bad)? {
            0 => Response::Delivered(None),
            _ => {
                let queue = dec.str().map_err(bad)?.to_owned();
                let m = get_message(&mut dec)?;
                Response::Delivered(Some(Delivery {
                    id: m.id,
                    queue,
                    envelope: m.envelope,
                    reply_to: m.reply_to,
                }))
            }
        },
        other => return Err(FrameError::Control(format!("unknown response {other}"))),
    };
    dec.finish().map_err(bad)?;
    Ok((req_id, resp))
}

pub(crate) fn write_control(
    mut stream: &TcpStream,
    key: &MacKey,
    payload: Vec<u8>,
) -> Result<(), TransportError> {
    let frame = TransportEnvelope::seal(EnvelopeKind::Control, [0; 32], payload, key).encode();
    stream
        .write_all(&frame)
        .map_err(|e| TransportError::Io(e.to_string()))
}

/// Reads one authenticated control frame and returns its payload.
pub(crate) fn read_control(
    mut stream: &TcpStream,
    key: &MacKey,
    max_payload: usize,
) -> Result<Vec<u8>, TransportError> {
    let env = TransportEnvelope::read_from(&mut stream, max_payload + CONTROL_OVERHEAD)?;
    if env.kind != EnvelopeKind::Control {
        return Err(FrameError::Control("expected a control frame".into()).into());
    }
    if !env.verify(key) {
        return Err(FrameError::Control("control frame failed authentication".into()).into());
    }
    Ok(env.payload)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> TransportEnvelope {
        TransportEnvelope::seal(EnvelopeKind::Demand, [3; 32], b"abc".to_vec(), &MacKey::from_secret("k"))
    }

    #[test]
    fn requests_round_trip() {
        let message = Message {
            id: (7u128 << 64) | 9,
            envelope: env(),
            reply_to: Some("r".into()),
        };
        let cases = [
            Request::Subscribe { queue: "q".into(), consumer: "c".into(), mode: QueueMode::Exclusive },
            Request::Unsubscribe { queue: "q".into(), consumer: "c".into() },
            Request::Publish { queue: "q".into(), message: message.clone() },
            Request::Ack { queue: "q".into(), consumer: "c".into(), id: u128::MAX },
            Request::Heartbeat,
            Request::Receive { queue: "q".into(), consumer: "c".into(), timeout_ms: 250 },
            Request::ReplicaPublish { queue: "q".into(), message },
            Request::ReplicaRemove { queue: "q".into(), id: 1 },
        ];
        for (i, req) in cases.into_iter().enumerate() {
            let back = decode_request(&encode_request(i as u64, &req)).unwrap();
            assert_eq!(back, (i as u64, req));
        }
    }

    #[test]
    fn responses_round_trip() {
        let cases = [
            Response::Done,
            Response::Failed(TransportError::NotSubscribed { queue: "q".into(), consumer: "c".into() }),
            Response::Failed(TransportError::BrokerDown("b".into())),
            Response::Delivered(None),
            Response::Delivered(Some(Delivery {
                id: 42,
                queue: "q".into(),
                envelope: env(),
                reply_to: None,
            })),
        ];
        for resp in cases {
            assert_eq!(decode_response(&encode_response(5, &resp)).unwrap(), (5, resp));
        }
    }

    #[test]
    fn unknown_operation_rejected() {
        assert!(decode_request(&[99, 0, 0, 0, 0, 0, 0, 0, 0]).is_err());
    }
}
