//! The operator command language:
//!
//! ```text
//! start GMT <file>
//! start node <NodeID>        stop node <NodeID>
//! allocate <NodeID> <TierType> <count>
//! deallocate <NodeID> <TierType> <TierID>+
//! save network <file>        load network <file>
//! status
//! ```
//!
//! Tokens are separated by whitespace; `TierType` is one of DGT, DST, DWT, GMT.

use std::fmt;

use eduction_runtime::TierType;
use serde::{Deserialize, Serialize};

use crate::error::ParseError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verb", rename_all = "snake_case")]
pub enum Command {
    StartGmt { file: String },
    StartNode { node_id: String },
    StopNode { node_id: String },
    Allocate { node_id: String, tier_type: TierType, count: u32 },
    Deallocate { node_id: String, tier_type: TierType, tier_ids: Vec<String> },
    SaveNetwork { file: String },
    LoadNetwork { file: String },
    Status,
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    next: usize,
    end: usize,
}

impl<'a> Tokens<'a> {
    fn new(line: &'a str) -> Self {
        let items = line
            .split_whitespace()
            .map(|t| (t.as_ptr() as usize - line.as_ptr() as usize, t))
            .collect();
        Tokens { items, next: 0, end: line.len() }
    }

    fn position(&self) -> usize {
        self.items.get(self.next).map_or(self.end, |(p, _)| *p)
    }

    fn fail<T>(&self, expected: &str) -> Result<T, ParseError> {
        Err(ParseError {
            position: self.position(),
            expected: expected.to_owned(),
        })
    }

    fn peek(&self) -> Option<&'a str> {
        self.items.get(self.next).map(|(_, t)| *t)
    }

    fn any(&mut self, expected: &str) -> Result<&'a str, ParseError> {
        match self.peek() {
            Some(t) => {
                self.next += 1;
                Ok(t)
            }
            None => self.fail(expected),
        }
    }

    fn word(&mut self, word: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(t) if t == word => {
                self.next += 1;
                Ok(())
            }
            _ => self.fail(&format!("`{word}`")),
        }
    }

    fn tier_type(&mut self) -> Result<TierType, ParseError> {
        const EXPECTED: &str = "a tier type (DGT, DST, DWT or GMT)";
        match self.peek().map(|t| t.parse::<TierType>()) {
            Some(Ok(t)) => {
                self.next += 1;
                Ok(t)
            }
            _ => self.fail(EXPECTED),
        }
    }

    fn count(&mut self) -> Result<u32, ParseError> {
        const EXPECTED: &str = "a positive count";
        match self.peek() {
            Some(t) if !t.starts_with('0') && t.bytes().all(|b| b.is_ascii_digit()) => match t.parse::<u32>() {
                Ok(n) => {
                    self.next += 1;
                    Ok(n)
                }
                Err(_) => self.fail(EXPECTED),
            },
            _ => self.fail(EXPECTED),
        }
    }

    fn done(&self) -> Result<(), ParseError> {
        match self.peek() {
            None => Ok(()),
            Some(_) => self.fail("end of command"),
        }
    }
}

pub fn parse_command(line: &str) -> Result<Command, ParseError> {
    let mut t = Tokens::new(line);
    let verb = t.peek();
    let cmd = match verb {
        Some("start") | Some("stop") => {
            t.next += 1;
            let start = verb == Some("start");
            match t.peek() {
                Some("GMT") if start => {
                    t.next += 1;
                    Command::StartGmt {
                        file: t.any("a configuration file")?.to_owned(),
                    }
                }
                Some("node") => {
                    t.next += 1;
                    let node_id = t.any("a node id")?.to_owned();
                    if start {
                        Command::StartNode { node_id }
                    } else {
                        Command::StopNode { node_id }
                    }
                }
                _ if start => return t.fail("`GMT` or `node`"),
                _ => return t.fail("`node`"),
            }
        }
        Some("allocate") => {
            t.next += 1;
            Command::Allocate {
                node_id: t.any("a node id")?.to_owned(),
                tier_type: t.tier_type()?,
                count: t.count()?,
            }
        }
        Some("deallocate") => {
            t.next += 1;
            let node_id = t.any("a node id")?.to_owned();
            let tier_type = t.tier_type()?;
            let mut tier_ids = vec![t.any("a tier id")?.to_owned()];
            while let Some(id) = t.peek() {
                tier_ids.push(id.to_owned());
                t.next += 1;
            }
            Command::Deallocate { node_id, tier_type, tier_ids }
        }
        Some("save") | Some("load") => {
            t.next += 1;
            t.word("network")?;
            let file = t.any("a network file")?.to_owned();
            if verb == Some("save") {
                Command::SaveNetwork { file }
            } else {
                Command::LoadNetwork { file }
            }
        }
        Some("status") => {
            t.next += 1;
            Command::Status
        }
        _ => return t.fail("one of start, stop, allocate, deallocate, save, load, status"),
    };
    t.done()?;
    Ok(cmd)
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Command::StartGmt { file } => write!(f, "start GMT {file}"),
            Command::StartNode { node_id } => write!(f, "start node {node_id}"),
            Command::StopNode { node_id } => write!(f, "stop node {node_id}"),
            Command::Allocate { node_id, tier_type, count } => write!(f, "allocate {node_id} {tier_type} {count}"),
            Command::Deallocate { node_id, tier_type, tier_ids } => {
                write!(f, "deallocate {node_id} {tier_type} {}", tier_ids.join(" "))
            }
            Command::SaveNetwork { file } => write!(f, "save network {file}"),
            Command::LoadNetwork { file } => write!(f, "load network {file}"),
            Command::Status => f.write_str("status"),
        }
    }
}
