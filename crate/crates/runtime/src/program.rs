//! Demand programs: declarative identifier graphs evaluated by a DGT.
//!
//! Text format, one definition per line:
//!
//! ```text
//! eduction-program 1
//! program <program-id>
//! dim <dimension>
//! <id> = <op>(<arg>, ...) [@ <dimension>+<k> | @ <dimension>-<k>]
//! <id> = proc <worker-function>(<arg>, ...)
//! ```
//!
//! An argument is an identifier or an integer literal. `#` starts a comment.
//! Operators: `id(x)`, `fby(x, y)`, `at(x, i)`, `add`, `sub`, `mul`, `eq`
//! (two arguments each) and `min`, `max` (one or more). `fby` and `at` act on
//! the program's dimension; a trailing `@` shifts the context the right-hand
//! side is evaluated in.

use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest, Sha256};

use crate::error::RuntimeError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Id,
    Fby,
    At,
    Add,
    Sub,
    Mul,
    Eq,
    Min,
    Max,
}

impl Op {
    fn parse(name: &str) -> Option<Op> {
        Some(match name {
            "id" => Op::Id,
            "fby" => Op::Fby,
            "at" => Op::At,
            "add" => Op::Add,
            "sub" => Op::Sub,
            "mul" => Op::Mul,
            "eq" => Op::Eq,
            "min" => Op::Min,
            "max" => Op::Max,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Op::Id => "id",
            Op::Fby => "fby",
            Op::At => "at",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Eq => "eq",
            Op::Min => "min",
            Op::Max => "max",
        }
    }

    fn arity_ok(self, n: usize) -> bool {
        match self {
            Op::Id => n == 1,
            Op::Min | Op::Max => n >= 1,
            _ => n == 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Arg {
    Ident(String),
    Int(i64),
}

impl fmt::Display for Arg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arg::Ident(s) => f.write_str(s),
            Arg::Int(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Definition {
    Operator { op: Op, args: Vec<Arg>, shift: i64 },
    Procedural { function: String, args: Vec<Arg> },
}

impl Definition {
    pub fn args(&self) -> &[Arg] {
        match self {
            Definition::Operator { args, .. } | Definition::Procedural { args, .. } => args,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub program_id: String,
    pub dimension: String,
    pub defs: BTreeMap<String, Definition>,
}

fn syntax(line: usize, message: impl Into<String>) -> RuntimeError {
    RuntimeError::ProgramSyntax {
        line,
        message: message.into(),
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn parse_arg(s: &str, line: usize) -> Result<Arg, RuntimeError> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Ok(Arg::Int(v));
    }
    if is_ident(s) {
        return Ok(Arg::Ident(s.to_owned()));
    }
    Err(syntax(line, format!("bad argument `{s}`")))
}

/// Splits `name(a, b)` into the name and its arguments.
fn parse_call(s: &str, line: usize) -> Result<(String, Vec<Arg>), RuntimeError> {
    let s = s.trim();
    let open = s.find('(').ok_or_else(|| syntax(line, "expected `(`"))?;
    if !s.ends_with(')') {
        return Err(syntax(line, "expected `)` at end of call"));
    }
    let name = s[..open].trim();
    if !is_ident(name) {
        return Err(syntax(line, format!("bad name `{name}`")));
    }
    let inner = &s[open + 1..s.len() - 1];
    let args = if inner.trim().is_empty() {
        Vec::new()
    } else {
        inner.split(',').map(|a| parse_arg(a, line)).collect::<Result<_, _>>()?
    };
    Ok((name.to_owned(), args))
}

fn parse_shift(s: &str, dim: &str, line: usize) -> Result<i64, RuntimeError> {
    let s = s.trim();
    let at = s
        .find(['+', '-'])
        .ok_or_else(|| syntax(line, "expected `+k` or `-k` after the dimension"))?;
    if s[..at].trim() != dim {
        return Err(syntax(line, format!("unknown dimension `{}`", s[..at].trim())));
    }
    let k: i64 = s[at + 1..]
        .trim()
        .parse()
        .map_err(|_| syntax(line, "bad shift amount"))?;
    Ok(if &s[at..at + 1] == "-" { -k } else { k })
}

impl Program {
    pub fn parse(text: &str) -> Result<Program, RuntimeError> {
        let mut header: Option<u32> = None;
        let mut program_id = None;
        let mut dimension: Option<String> = None;
        let mut defs = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if header.is_none() {
                let v = body
                    .strip_prefix("eduction-program ")
                    .and_then(|v| v.trim().parse().ok())
                    .ok_or_else(|| syntax(line, "expected `eduction-program <version>`"))?;
                if v != FORMAT_VERSION {
                    return Err(syntax(line, format!("unsupported format version {v}")));
                }
                header = Some(v);
                continue;
            }
            if let Some(id) = body.strip_prefix("program ") {
                program_id = Some(id.trim().to_owned());
                continue;
            }
            if let Some(d) = body.strip_prefix("dim ") {
                let d = d.trim();
                if !is_ident(d) {
                    return Err(syntax(line, format!("bad dimension `{d}`")));
                }
                dimension = Some(d.to_owned());
                continue;
            }
            let (lhs, rhs) = body
                .split_once('=')
                .ok_or_else(|| syntax(line, "expected `<id> = ...`"))?;
            let name = lhs.trim();
            if !is_ident(name) {
                return Err(syntax(line, format!("bad identifier `{name}`")));
            }
            let rhs = rhs.trim();
            let def = if let Some(call) = rhs.strip_prefix("proc ") {
                let (function, args) = parse_call(call, line)?;
                Definition::Procedural { function, args }
            } else {
                let dim = dimension
                    .as_deref()
                    .ok_or_else(|| syntax(line, "`dim` must precede operator definitions"))?;
                let (call, shift) = match rhs.split_once('@') {
                    Some((c, s)) => (c, parse_shift(s, dim, line)?),
                    None => (rhs, 0),
                };
                let (op_name, args) = parse_call(call, line)?;
                let op = Op::parse(&op_name).ok_or_else(|| syntax(line, format!("unknown operator `{op_name}`")))?;
                if !op.arity_ok(args.len()) {
                    return Err(syntax(line, format!("wrong number of arguments for `{op_name}`")));
                }
                Definition::Operator { op, args, shift }
            };
            if defs.insert(name.to_owned(), def).is_some() {
                return Err(syntax(line, format!("`{name}` defined twice")));
            }
        }
        if header.is_none() {
            return Err(syntax(0, "empty program"));
        }
        let program = Program {
            program_id: program_id.ok_or_else(|| syntax(0, "missing `program` line"))?,
            dimension: dimension.unwrap_or_else(|| "n".into()),
            defs,
        };
        program.validate()?;
        Ok(program)
    }

    /// Every identifier argument must name a definition.
    pub fn validate(&self) -> Result<(), RuntimeError> {
        for def in self.defs.values() {
            for arg in def.args() {
                if let Arg::Ident(name) = arg {
                    if !self.defs.contains_key(name) {
                        return Err(RuntimeError::UnresolvedReference(name.clone()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Canonical text: header, then definitions sorted by identifier.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "eduction-program {FORMAT_VERSION}\nprogram {}\ndim {}\n",
            self.program_id, self.dimension
        );
        for (name, def) in &self.defs {
            let join = |args: &[Arg]| args.iter().map(Arg::to_string).collect::<Vec<_>>().join(", ");
            match def {
                Definition::Operator { op, args, shift } => {
                    out.push_str(&format!("{name} = {}({})", op.name(), join(args)));
                    if *shift != 0 {
                        out.push_str(&format!(" @ {}{:+}", self.dimension, shift));
                    }
                }
                Definition::Procedural { function, args } => {
                    out.push_str(&format!("{name} = proc {function}({})", join(args)));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn body_digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }
}

/// The built-in workload: the n-th Hamming number (n from 1) as a merge of
/// the stream scaled by 2, 3 and 5, each scaled stream advancing its own
/// index whenever it supplied the merged minimum.
pub const HAMMING_PROGRAM: &str = "\
eduction-program 1
program hamming
dim n
hamming = id(h) @ n-1
h = fby(1, next)
next = min(c2, c3, c5)
c2 = proc scale2(h2)
c3 = proc scale3(h3)
c5 = proc scale5(h5)
h2 = at(h, k2)
h3 = at(h, k3)
h5 = at(h, k5)
k2 = fby(0, k2n)
k3 = fby(0, k3n)
k5 = fby(0, k5n)
k2n = add(k2, e2)
k3n = add(k3, e3)
k5n = add(k5, e5)
e2 = eq(c2, next)
e3 = eq(c3, next)
e5 = eq(c5, next)
";

pub fn hamming() -> Program {
    Program::parse(HAMMING_PROGRAM).expect("built-in program parses")
}
