//! Queue engine shared by the in-process broker and the TCP broker server.
//!
//! Shared queues assign each published message to the next registered
//! consumer in rotation at publish time; messages published while a queue has
//! no consumers wait in the backlog and go to whichever consumer asks first.
//! A message is in exactly one of backlog, a consumer's assigned list, or a
//! consumer's in-flight set until it is acknowledged.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use crate::envelope::TransportEnvelope;
use crate::error::TransportError;

pub type MessageId = u128;
pub type SessionId = u64;

const DEDUP_WINDOW: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QueueMode {
    #[default]
    Shared,
    /// At most one consumer at a time.
    Exclusive,
}

impl QueueMode {
    pub fn tag(self) -> u8 {
        match self {
            QueueMode::Shared => 0,
            QueueMode::Exclusive => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Self {
        if tag == 1 {
            QueueMode::Exclusive
        } else {
            QueueMode::Shared
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub id: MessageId,
    pub envelope: TransportEnvelope,
    pub reply_to: Option<String>,
}

/// A message handed to a consumer; acknowledged by `id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub id: MessageId,
    pub queue: String,
    pub envelope: TransportEnvelope,
    pub reply_to: Option<String>,
}

/// Receives a copy of every state change a primary broker applies.
pub trait Mirror: Send + Sync {
    fn replicate_publish(&self, queue: &str, message: &Message);
    fn replicate_remove(&self, queue: &str, id: MessageId);
}

#[derive(Debug, Default)]
struct Queue {
    mode: QueueMode,
    consumers: Vec<String>,
    cursor: usize,
    backlog: VecDeque<Message>,
    assigned: HashMap<String, VecDeque<Message>>,
    inflight: HashMap<String, BTreeMap<MessageId, Message>>,
}

impl Queue {
    fn enqueue(&mut self, msg: Message) {
        if self.consumers.is_empty() {
            self.backlog.push_back(msg);
            return;
        }
        let target = self.consumers[self.cursor % self.consumers.len()].clone();
        self.cursor = (self.cursor + 1) % self.consumers.len();
        self.assigned.entry(target).or_default().push_back(msg);
    }

    fn remove(&mut self, id: MessageId) -> bool {
        if let Some(pos) = self.backlog.iter().position(|m| m.id == id) {
            self.backlog.remove(pos);
            return true;
        }
        for list in self.assigned.values_mut() {
            if let Some(pos) = list.iter().position(|m| m.id == id) {
                list.remove(pos);
                return true;
            }
        }
        self.inflight.values_mut().any(|set| set.remove(&id).is_some())
    }

    fn detach(&mut self, consumer: &str) -> Vec<Message> {
        self.consumers.retain(|c| c != consumer);
        if self.consumers.is_empty() {
            self.cursor = 0;
        } else {
            self.cursor %= self.consumers.len();
        }
        let mut orphans: Vec<Message> = self
            .inflight
            .remove(consumer)
            .map(|m| m.into_values().collect())
            .unwrap_or_default();
        orphans.extend(self.assigned.remove(consumer).unwrap_or_default());
        orphans
    }

    fn depth(&self) -> usize {
        self.backlog.len()
            + self.assigned.values().map(VecDeque::len).sum::<usize>()
            + self.inflight.values().map(BTreeMap::len).sum::<usize>()
    }
}

#[derive(Debug, Default)]
struct State {
    queues: HashMap<String, Queue>,
    owners: HashMap<(String, String), SessionId>,
    seen: HashSet<MessageId>,
    seen_order: VecDeque<MessageId>,
}

impl State {
    fn remember(&mut self, id: MessageId) -> bool {
        if !self.seen.insert(id) {
            return false;
        }
        self.seen_order.push_back(id);
        if self.seen_order.len() > DEDUP_WINDOW {
            if let Some(old) = self.seen_order.pop_front() {
                self.seen.remove(&old);
            }
        }
        true
    }
}

/// Per-queue counters, for tests and the management surface.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QueueStats {
    pub consumers: Vec<String>,
    pub depth: usize,
}

pub struct BrokerCore {
    name: String,
    alive: AtomicBool,
    state: Mutex<State>,
    ready: Condvar,
    mirror: Mutex<Option<Arc<dyn Mirror>>>,
}

impl std::fmt::Debug for BrokerCore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BrokerCore")
            .field("name", &self.name)
            .field("alive", &self.is_alive())
            .finish()
    }
}

impl BrokerCore {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            alive: AtomicBool::new(true),
            state: Mutex::new(State::default()),
            ready: Condvar::new(),
            mirror: Mutex::new(None),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_alive(&self) -> bool {
        self.alive.load(Ordering::SeqCst)
    }

    /// Forward every publish and acknowledgement to a standby broker.
    pub fn set_mirror(&self, mirror: Arc<dyn Mirror>) {
        *self.mirror.lock().unwrap() = Some(mirror);
    }

    /// Simulates a crash: all queued state is lost and every call fails.
    pub fn kill(&self) {
        self.alive.store(false, Ordering::SeqCst);
        *self.lock() = State::default();
        *self.mirror.lock().unwrap() = None;
        self.ready.notify_all();
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn check_alive(&self) -> Result<(), TransportError> {
        if self.is_alive() {
            Ok(())
        } else {
            Err(TransportError::BrokerDown(self.name.clone()))
        }
    }

    fn mirror(&self) -> Option<Arc<dyn Mirror>> {
        self.mirror.lock().unwrap().clone()
    }

    pub fn subscribe(
        &self,
        session: SessionId,
        queue: &str,
        consumer: &str,
        mode: QueueMode,
    ) -> Result<(), TransportError> {
        self.check_alive()?;
        let mut st = self.lock();
        let q = st.queues.entry(queue.to_owned()).or_default();
        if q.consumers.iter().any(|c| c == consumer) {
            st.owners.insert((queue.to_owned(), consumer.to_owned()), session);
            return Ok(());
        }
        if mode == QueueMode::Exclusive {
            q.mode = QueueMode::Exclusive;
        }
        if q.mode == QueueMode::Exclusive && !q.consumers.is_empty() {
            return Err(TransportError::ExclusiveQueue(queue.to_owned()));
        }
        q.consumers.push(consumer.to_owned());
        st.owners
            .insert((queue.to_owned(), consumer.to_owned()), session);
        drop(st);
        self.ready.notify_all();
        Ok(())
    }

    /// Removes a consumer; its unacknowledged messages go to the remaining
    /// consumers (or the backlog).
    pub fn unsubscribe(&self, queue: &str, consumer: &str) -> Result<(), TransportError> {
        self.check_alive()?;
        let mut st = self.lock();
        st.owners.remove(&(queue.to_owned(), consumer.to_owned()));
        if let Some(q) = st.queues.get_mut(queue) {
            for m in q.detach(consumer) {
                q.enqueue(m);
            }
        }
        drop(st);
        self.ready.notify_all();
        Ok(())
    }

    /// Drops every consumer owned by a session (connection loss).
    pub fn disconnect(&self, session: SessionId) {
        let mut st = self.lock();
        let owned: Vec<(String, String)> = st
            .owners
            .iter()
            .filter(|(_, s)| **s == session)
            .map(|(k, _)| k.clone())
            .collect();
        for (queue, consumer) in owned {
            st.owners.remove(&(queue.clone(), consumer.clone()));
            if let Some(q) = st.queues.get_mut(&queue) {
                for m in q.detach(&consumer) {
                    q.enqueue(m);
                }
            }
        }
        drop(st);
        self.ready.notify_all();
    }

    /// Enqueues once per message id; replays of a known id are acknowledged
    /// without enqueueing again.
    pub fn publish(&self, queue: &str, message: Message) -> Result<(), TransportError> {
        self.check_alive()?;
        if let Some(m) = self.mirror() {
            m.replicate_publish(queue, &message);
        }
        self.apply_publish(queue, message)
    }

    /// Publish received from a primary broker; not mirrored further.
    pub fn apply_publish(&self, queue: &str, message: Message) -> Result<(), TransportError> {
        self.check_alive()?;
        let mut st = self.lock();
        if !st.remember(message.id) {
            return Ok(());
        }
        st.queues.entry(queue.to_owned()).or_default().enqueue(message);
        drop(st);
        self.ready.notify_all();
        Ok(())
    }

    pub fn apply_remove(&self, queue: &str, id: MessageId) -> Result<(), TransportError> {
        self.check_alive()?;
        let mut st = self.lock();
        st.remember(id);
        if let Some(q) = st.queues.get_mut(queue) {
            q.remove(id);
        }
        Ok(())
    }

    pub fn receive(
        &self,
        queue: &str,
        consumer: &str,
        timeout: Duration,
    ) -> Result<Option<Delivery>, TransportError> {
        let deadline = Instant::now() + timeout;
        let mut st = self.lock();
        loop {
            self.check_alive()?;
            let q = st
                .queues
                .get_mut(queue)
                .filter(|q| q.consumers.iter().any(|c| c == consumer))
                .ok_or_else(|| TransportError::NotSubscribed {
                    queue: queue.to_owned(),
                    consumer: consumer.to_owned(),
                })?;
            let next = q
                .assigned
                .get_mut(consumer)
                .and_then(VecDeque::pop_front)
                .or_else(|| q.backlog.pop_front());
            if let Some(m) = next {
                let delivery = Delivery {
                    id: m.id,
                    queue: queue.to_owned(),
                    envelope: m.envelope.clone(),
                    reply_to: m.reply_to.clone(),
                };
                q.inflight
                    .entry(consumer.to_owned())
                    .or_default()
                    .insert(m.id, m);
                return Ok(Some(delivery));
            }
            let Some(left) = deadline.checked_duration_since(Instant::now()) else {
                return Ok(None);
            };
            st = self
                .ready
                .wait_timeout(st, left)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    pub fn ack(&self, queue: &str, consumer: &str, id: MessageId) -> Result<(), TransportError> {
        self.check_alive()?;
        let mut st = self.lock();
        st.remember(id);
        // An id unknown to this consumer can come from a delivery made by a
        // broker that has since failed; drop the replicated copy wherever it is.
        let removed = st.queues.get_mut(queue).is_some_and(|q| {
            q.inflight
                .get_mut(consumer)
                .and_then(|set| set.remove(&id))
                .is_some()
                || q.remove(id)
        });
        drop(st);
        if removed {
            if let Some(m) = self.mirror() {
                m.replicate_remove(queue, id);
            }
        }
        Ok(())
    }

    pub fn queue_stats(&self, queue: &str) -> QueueStats {
        let st = self.lock();
        st.queues
            .get(queue)
            .map(|q| QueueStats {
                consumers: q.consumers.clone(),
                depth: q.depth(),
            })
            .unwrap_or_default()
    }
}

impl Mirror for BrokerCore {
    fn replicate_publish(&self, queue: &str, message: &Message) {
        let _ = self.apply_publish(queue, message.clone());
    }

    fn replicate_remove(&self, queue: &str, id: MessageId) {
        let _ = self.apply_remove(queue, id);
    }
}
