//! Demand Generator Tier: eductive evaluation of registered programs.
//!
//! Each `(identifier, context)` becomes an intensional demand that the DGT
//! computes itself; procedural definitions become procedural demands served
//! by DWTs. Every demand is looked up by signature first, so a value is
//! computed once per instance no matter how often it is asked for.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use eduction_core::{now_ms, Claim, Context, Demand, DemandKind, DemandSignature, GlobalId};

use crate::dwt::{decode_int, encode_int, procedure_payload};
use crate::error::RuntimeError;
use crate::program::{Arg, Definition, Op, Program};
use crate::store_api::{outcome, StoreApi};

/// A procedural demand handed to the store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submitted {
    pub global_id: GlobalId,
    pub signature: DemandSignature,
    /// Already stored value (outcome-tagged), when the store had one.
    pub stored: Option<Vec<u8>>,
    pub created: bool,
}

pub struct Dgt {
    tier_id: String,
    store: Arc<dyn StoreApi>,
    programs: RwLock<BTreeMap<String, Arc<Program>>>,
    dispatches: AtomicU64,
    timeout: Duration,
}

impl fmt::Debug for Dgt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dgt").field("tier_id", &self.tier_id).finish()
    }
}

const POLL_SLICE: Duration = Duration::from_millis(250);
const MAX_BACKOFF: Duration = Duration::from_millis(200);

impl Dgt {
    pub fn new(tier_id: &str, store: Arc<dyn StoreApi>, timeout: Duration) -> Dgt {
        Dgt {
            tier_id: tier_id.to_owned(),
            store,
            programs: RwLock::new(BTreeMap::new()),
            dispatches: AtomicU64::new(0),
            timeout,
        }
    }

    pub fn tier_id(&self) -> &str {
        &self.tier_id
    }

    /// Registering an identical body again is a no-op.
    pub fn register_program(&self, program: Program) -> Result<(), RuntimeError> {
        program.validate()?;
        let mut programs = self.programs.write().unwrap();
        if let Some(existing) = programs.get(&program.program_id) {
            return if existing.body_digest() == program.body_digest() {
                Ok(())
            } else {
                Err(RuntimeError::ProgramConflict(program.program_id))
            };
        }
        programs.insert(program.program_id.clone(), Arc::new(program));
        Ok(())
    }

    pub fn programs(&self) -> Vec<Arc<Program>> {
        self.programs.read().unwrap().values().cloned().collect()
    }

    /// New procedural entries this DGT has created.
    pub fn procedural_dispatches(&self) -> u64 {
        self.dispatches.load(Ordering::SeqCst)
    }

    /// Value of `identifier` at `context`, as 8 big-endian bytes.
    pub fn evaluate(&self, program_id: &str, identifier: &str, context: &Context) -> Result<Vec<u8>, RuntimeError> {
        self.evaluate_int(program_id, identifier, context).map(encode_int)
    }

    pub fn evaluate_int(&self, program_id: &str, identifier: &str, context: &Context) -> Result<i64, RuntimeError> {
        let program = self
            .programs
            .read()
            .unwrap()
            .get(program_id)
            .cloned()
            .ok_or_else(|| RuntimeError::UnknownProgram(program_id.to_owned()))?;
        let mut stack = Vec::new();
        self.eval(&program, identifier, context, &mut stack)
    }

    fn eval(
        &self,
        p: &Program,
        ident: &str,
        ctx: &Context,
        stack: &mut Vec<DemandSignature>,
    ) -> Result<i64, RuntimeError> {
        let def = p
            .defs
            .get(ident)
            .ok_or_else(|| RuntimeError::UndefinedIdentifier(ident.to_owned()))?;
        let mut demand = Demand::new(DemandKind::Intensional, p.program_id.as_str(), ctx.clone(), ident.as_bytes().to_vec())?;
        let sig = demand.signature();
        if stack.contains(&sig) {
            return Err(RuntimeError::CyclicDefinition(ident.to_owned()));
        }
        if let Definition::Procedural { function, args } = def {
            stack.push(sig);
            let values = args
                .iter()
                .map(|a| self.arg(p, a, ctx, stack).map(encode_int))
                .collect::<Result<Vec<_>, _>>();
            stack.pop();
            let v = self.call_procedure(&p.program_id, function, values?, ctx)?;
            return decode_int(&v).map_err(RuntimeError::EvaluationFailure);
        }
        if let Some(v) = self.store.lookup(&sig)? {
            return decode_stored(&v);
        }
        demand.append_timeline(&self.tier_id, now_ms())?;
        let dep = self.store.deposit(&demand)?;
        if let Some(v) = dep.already_computed {
            return decode_stored(&v);
        }
        match self.store.claim(dep.global_id, &self.tier_id)? {
            Claim::Computed(v) => decode_stored(&v),
            Claim::Busy { .. } => decode_stored(&self.await_stored(dep.global_id, ident)?),
            Claim::Claimed(_) => {
                stack.push(sig);
                let result = self.compute(p, ident, def, ctx, stack);
                stack.pop();
                let stored = match &result {
                    Ok(v) => outcome::ok(&encode_int(*v)),
                    // left to lease expiry so a later evaluation retries
                    Err(e) if is_transient(e) => return result,
                    Err(e) => outcome::failed(&e.to_string()),
                };
                self.store.complete(dep.global_id, &self.tier_id, &stored)?;
                result
            }
        }
    }

    fn arg(&self, p: &Program, a: &Arg, ctx: &Context, stack: &mut Vec<DemandSignature>) -> Result<i64, RuntimeError> {
        match a {
            Arg::Int(v) => Ok(*v),
            Arg::Ident(id) => self.eval(p, id, ctx, stack),
        }
    }

    fn compute(
        &self,
        p: &Program,
        ident: &str,
        def: &Definition,
        ctx: &Context,
        stack: &mut Vec<DemandSignature>,
    ) -> Result<i64, RuntimeError> {
        let Definition::Operator { op, args, shift } = def else {
            unreachable!("procedural definitions are dispatched before compute");
        };
        let dim = p.dimension.as_str();
        let at = |index: i64| -> Result<Context, RuntimeError> {
            if index < 0 {
                return Err(RuntimeError::IndexOutOfRange {
                    identifier: ident.to_owned(),
                    index,
                });
            }
            Ok(ctx.with(dim, index))
        };
        let here = ctx.get(dim).ok_or_else(|| {
            RuntimeError::EvaluationFailure(format!("context of `{ident}` lacks dimension `{dim}`"))
        })?;
        let index = here + shift;
        let ctx = at(index)?;
        let overflow = || RuntimeError::EvaluationFailure(format!("integer overflow in `{ident}`"));
        match op {
            Op::Id => self.arg(p, &args[0], &ctx, stack),
            Op::Fby => {
                if index == 0 {
                    self.arg(p, &args[0], &ctx, stack)
                } else {
                    self.arg(p, &args[1], &at(index - 1)?, stack)
                }
            }
            Op::At => {
                let k = self.arg(p, &args[1], &ctx, stack)?;
                self.arg(p, &args[0], &at(k)?, stack)
            }
            Op::Add | Op::Sub | Op::Mul | Op::Eq => {
                let a = self.arg(p, &args[0], &ctx, stack)?;
                let b = self.arg(p, &args[1], &ctx, stack)?;
                match op {
                    Op::Add => a.checked_add(b).ok_or_else(overflow),
                    Op::Sub => a.checked_sub(b).ok_or_else(overflow),
                    Op::Mul => a.checked_mul(b).ok_or_else(overflow),
                    _ => Ok(i64::from(a == b)),
                }
            }
            Op::Min | Op::Max => {
                let mut best: Option<i64> = None;
                for a in args {
                    let v = self.arg(p, a, &ctx, stack)?;
                    best = Some(match (best, op) {
                        (None, _) => v,
                        (Some(b), Op::Min) => b.min(v),
                        (Some(b), _) => b.max(v),
                    });
                }
                Ok(best.expect("arity checked at parse time"))
            }
        }
    }

    /// Deposits a procedural demand without waiting for it.
    pub fn submit(
        &self,
        program_id: &str,
        function: &str,
        args: Vec<Vec<u8>>,
        context: &Context,
    ) -> Result<Submitted, RuntimeError> {
        let mut demand = Demand::new(
            DemandKind::Procedural,
            program_id,
            context.clone(),
            procedure_payload(function, &args),
        )?;
        let signature = demand.signature();
        demand.append_timeline(&self.tier_id, now_ms())?;
        let dep = self.store.deposit(&demand)?;
        if dep.created {
            self.dispatches.fetch_add(1, Ordering::SeqCst);
        }
        Ok(Submitted {
            global_id: dep.global_id,
            signature,
            stored: dep.already_computed,
            created: dep.created,
        })
    }

    /// Function result of a submitted demand; a worker-side failure becomes
    /// `EvaluationFailure`.
    pub fn await_value(&self, s: &Submitted) -> Result<Vec<u8>, RuntimeError> {
        let stored = match &s.stored {
            Some(v) => v.clone(),
            None => self.await_stored(s.global_id, &s.signature.to_hex())?,
        };
        outcome::split(&stored)
            .map(<[u8]>::to_vec)
            .map_err(RuntimeError::EvaluationFailure)
    }

    pub fn call_procedure(
        &self,
        program_id: &str,
        function: &str,
        args: Vec<Vec<u8>>,
        context: &Context,
    ) -> Result<Vec<u8>, RuntimeError> {
        let sig = Demand::new(
            DemandKind::Procedural,
            program_id,
            context.clone(),
            procedure_payload(function, &args),
        )?
        .signature();
        if let Some(v) = self.store.lookup(&sig)? {
            return outcome::split(&v)
                .map(<[u8]>::to_vec)
                .map_err(RuntimeError::EvaluationFailure);
        }
        let s = self.submit(program_id, function, args, context)?;
        self.await_value(&s)
    }

    /// Waits on the store's completion notification, backing off between
    /// polls that came back empty.
    fn await_stored(&self, gid: GlobalId, what: &str) -> Result<Vec<u8>, RuntimeError> {
        let deadline = Instant::now() + self.timeout;
        let mut backoff = Duration::from_millis(5);
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if let Some(v) = self.store.wait_computed(gid, left.min(POLL_SLICE))? {
                return Ok(v);
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(RuntimeError::Timeout(what.to_owned()));
            }
            thread::sleep(backoff.min(left));
            backoff = (backoff * 2).min(MAX_BACKOFF);
        }
    }
}

fn decode_stored(v: &[u8]) -> Result<i64, RuntimeError> {
    let raw = outcome::split(v).map_err(RuntimeError::EvaluationFailure)?;
    decode_int(raw).map_err(RuntimeError::EvaluationFailure)
}

fn is_transient(e: &RuntimeError) -> bool {
    matches!(
        e,
        RuntimeError::Timeout(_) | RuntimeError::Transport(_) | RuntimeError::Store { .. } | RuntimeError::Protocol(_)
    )
}
