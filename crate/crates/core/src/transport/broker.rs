use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex, MutexGuard, Weak};
use std::time::Instant;

use bytes::Bytes;

use super::{topic_matches, validate_pattern, Topic, TransportError};

pub const DEFAULT_CAPACITY: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub topic: String,
    pub payload: Bytes,
}

#[derive(Debug)]
struct Queue {
    items: Mutex<VecDeque<Message>>,
    ready: Condvar,
}

#[derive(Debug)]
struct Entry {
    id: u64,
    pattern: String,
    queue: Arc<Queue>,
}

#[derive(Debug)]
struct Inner {
    capacity: usize,
    subs: Mutex<(u64, Vec<Entry>)>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    // A panicking holder cannot leave a queue half-updated: every critical
    // section is a single push, pop or scan.
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// In-process publish/subscribe broker.
///
/// Each subscription owns a bounded FIFO queue. A publish either enqueues on
/// every matching subscription or, if any of them is full, on none and
/// reports backpressure. Publishes are serialized, so all subscribers see
/// the same relative order of messages they share.
#[derive(Clone, Debug)]
pub struct Broker {
    inner: Arc<Inner>,
}

impl Default for Broker {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY)
    }
}

impl Broker {
    pub fn new(capacity: usize) -> Self {
        Self {
            inner: Arc::new(Inner {
                capacity: capacity.max(1),
                subs: Mutex::new((0, Vec::new())),
            }),
        }
    }

    pub fn subscribe(&self, pattern: &str) -> Result<Subscription, TransportError> {
        validate_pattern(pattern)?;
        let queue = Arc::new(Queue {
            items: Mutex::new(VecDeque::new()),
            ready: Condvar::new(),
        });
        let mut subs = lock(&self.inner.subs);
        let id = subs.0;
        subs.0 += 1;
        subs.1.push(Entry {
            id,
            pattern: pattern.to_string(),
            queue: Arc::clone(&queue),
        });
        Ok(Subscription {
            id,
            queue,
            broker: Arc::downgrade(&self.inner),
        })
    }

    /// Delivers `payload` to every matching subscription; returns how many.
    pub fn publish(&self, topic: &Topic, payload: Bytes) -> Result<usize, TransportError> {
        let topic = topic.to_string();
        let subs = lock(&self.inner.subs);
        let targets: Vec<&Entry> = subs.1.iter().filter(|e| topic_matches(&e.pattern, &topic)).collect();
        let mut guards: Vec<MutexGuard<'_, VecDeque<Message>>> = targets.iter().map(|e| lock(&e.queue.items)).collect();
        if let Some(full) = guards.iter().position(|q| q.len() >= self.inner.capacity) {
            return Err(TransportError::Backpressure {
                topic,
                subscriber: targets[full].id,
            });
        }
        for q in guards.iter_mut() {
            q.push_back(Message {
                topic: topic.clone(),
                payload: payload.clone(),
            });
        }
        drop(guards);
        for e in &targets {
            e.queue.ready.notify_one();
        }
        Ok(targets.len())
    }

    pub fn subscriber_count(&self) -> usize {
        lock(&self.inner.subs).1.len()
    }
}

/// Single-consumer handle on one queue; unsubscribes on drop.
#[derive(Debug)]
pub struct Subscription {
    id: u64,
    queue: Arc<Queue>,
    broker: Weak<Inner>,
}

impl Subscription {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn try_poll(&self) -> Option<Message> {
        lock(&self.queue.items).pop_front()
    }

    /// Blocks until a message arrives or `deadline` passes.
    pub fn poll(&self, deadline: Instant) -> Result<Message, TransportError> {
        let mut items = lock(&self.queue.items);
        loop {
            if let Some(m) = items.pop_front() {
                return Ok(m);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(TransportError::Timeout);
            }
            items = self
                .queue
                .ready
                .wait_timeout(items, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    pub fn pending(&self) -> usize {
        lock(&self.queue.items).len()
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        if let Some(inner) = self.broker.upgrade() {
            lock(&inner.subs).1.retain(|e| e.id != self.id);
        }
    }
}
