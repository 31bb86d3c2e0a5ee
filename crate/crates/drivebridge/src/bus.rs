//! In-process publish/subscribe middleware.
//!
//! A [`Bus`] owns a registry of topics. Nodes register as publishers or
//! subscribers by name; publishing stamps a per-publisher sequence number
//! onto a [`MessageEnvelope`] and synchronously appends it to every
//! subscriber's bounded queue (oldest message dropped on overflow, with a
//! per-subscriber drop counter). There is no replay or latching: a
//! subscriber only sees messages published after it registered.
//!
//! Delivery is deterministic: subscribers receive messages in registration
//! order within a publish call, and each subscriber's queue preserves the
//! global publish order.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perception::{Detection, WeatherState};
use crate::plant::{DriveCommand, VehicleStateMsg};

/// Queue capacity used when a subscriber does not choose one.
pub const DEFAULT_QUEUE_CAPACITY: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum BusError {
    #[error("invalid topic name {0:?}: must start with '/' and consist of non-empty, whitespace-free segments")]
    InvalidTopic(String),
    #[error("subscriber queue capacity must be at least 1")]
    ZeroCapacity,
    #[error("publish time {now} is earlier than this publisher's previous publish time {previous}")]
    ClockRegression { now: f64, previous: f64 },
    #[error("publish time must be finite, got {0}")]
    NonFiniteTime(f64),
    #[error("handle for node {node:?} on topic {topic} is no longer registered")]
    StaleHandle { node: String, topic: String },
}

/// Validated topic path, e.g. `/detections`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TopicName(String);

impl TopicName {
    /// Accepts `/seg` and `/seg/seg/...` with non-empty, whitespace-free
    /// segments.
    pub fn new(path: &str) -> Result<Self, BusError> {
        let well_formed = path.len() > 1
            && path.starts_with('/')
            && !path.chars().any(char::is_whitespace)
            && path[1..].split('/').all(|segment| !segment.is_empty());
        if well_formed {
            Ok(Self(path.to_string()))
        } else {
            Err(BusError::InvalidTopic(path.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Every message kind that travels over the bus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "snake_case")]
pub enum Payload {
    Detection(Detection),
    DriveCommand(DriveCommand),
    Weather(WeatherState),
    VehicleState(VehicleStateMsg),
}

/// A published message together with its delivery metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageEnvelope {
    pub topic: TopicName,
    /// Node that published the message.
    pub publisher: String,
    /// Per-publisher sequence number, starting at 0.
    pub seq: u64,
    pub publish_time_s: f64,
    pub payload: Payload,
}

/// Registry view of one topic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegistryRecord {
    pub topic: TopicName,
    pub publishers: BTreeSet<String>,
    pub subscribers: BTreeSet<String>,
}

struct PublisherEntry {
    node_id: String,
    next_seq: u64,
    last_publish_time_s: Option<f64>,
}

struct SubscriberEntry {
    id: u64,
    node_id: String,
    capacity: usize,
    queue: VecDeque<MessageEnvelope>,
    dropped: u64,
}

#[derive(Default)]
struct TopicState {
    publishers: Vec<PublisherEntry>,
    subscribers: Vec<SubscriberEntry>,
}

#[derive(Default)]
struct BusState {
    topics: HashMap<TopicName, TopicState>,
    next_subscriber_id: u64,
}

/// The middleware itself. Clones share the same underlying registry.
#[derive(Clone, Default)]
pub struct Bus {
    inner: Arc<Mutex<BusState>>,
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, BusState> {
        self.inner.lock().expect("bus lock poisoned")
    }

    /// Register `node_id` as a publisher on `topic`. Registering the same
    /// pair twice is idempotent: the existing registration (and its
    /// sequence counter) is reused.
    pub fn register_publisher(&self, node_id: &str, topic: TopicName) -> PublisherHandle {
        let mut state = self.lock();
        let topic_state = state.topics.entry(topic.clone()).or_default();
        if !topic_state.publishers.iter().any(|p| p.node_id == node_id) {
            topic_state.publishers.push(PublisherEntry {
                node_id: node_id.to_string(),
                next_seq: 0,
                last_publish_time_s: None,
            });
        }
        PublisherHandle {
            bus: self.clone(),
            topic,
            node_id: node_id.to_string(),
        }
    }

    /// Register `node_id` as a subscriber on `topic` with a bounded queue.
    /// Registering the same pair twice is idempotent and keeps the existing
    /// queue. Only messages published after registration are delivered.
    pub fn register_subscriber(
        &self,
        node_id: &str,
        topic: TopicName,
        queue_capacity: usize,
    ) -> Result<SubscriptionHandle, BusError> {
        if queue_capacity == 0 {
            return Err(BusError::ZeroCapacity);
        }
        let mut state = self.lock();
        let next_id = state.next_subscriber_id;
        let topic_state = state.topics.entry(topic.clone()).or_default();
        let id = match topic_state.subscribers.iter().find(|s| s.node_id == node_id) {
            Some(existing) => existing.id,
            None => {
                topic_state.subscribers.push(SubscriberEntry {
                    id: next_id,
                    node_id: node_id.to_string(),
                    capacity: queue_capacity,
                    queue: VecDeque::new(),
                    dropped: 0,
                });
                state.next_subscriber_id += 1;
                next_id
            }
        };
        Ok(SubscriptionHandle {
            bus: self.clone(),
            topic,
            subscriber_id: id,
            node_id: node_id.to_string(),
        })
    }

    /// Directory lookup: who publishes and who subscribes on `topic`.
    /// Unknown topics yield an empty record.
    pub fn lookup(&self, topic: &TopicName) -> RegistryRecord {
        let state = self.lock();
        let (publishers, subscribers) = match state.topics.get(topic) {
            Some(t) => (
                t.publishers.iter().map(|p| p.node_id.clone()).collect(),
                t.subscribers.iter().map(|s| s.node_id.clone()).collect(),
            ),
            None => (BTreeSet::new(), BTreeSet::new()),
        };
        RegistryRecord {
            topic: topic.clone(),
            publishers,
            subscribers,
        }
    }

    /// All topics that have at least one registration, sorted by name.
    pub fn topics(&self) -> Vec<TopicName> {
        let state = self.lock();
        let mut names: Vec<TopicName> = state.topics.keys().cloned().collect();
        names.sort();
        names
    }

    /// Remove every registration `node_id` holds, dropping any queued
    /// messages. Outstanding handles for the node become stale.
    pub fn unregister_node(&self, node_id: &str) {
        let mut state = self.lock();
        state.topics.retain(|_, topic_state| {
            topic_state.publishers.retain(|p| p.node_id != node_id);
            topic_state.subscribers.retain(|s| s.node_id != node_id);
            !(topic_state.publishers.is_empty() && topic_state.subscribers.is_empty())
        });
    }
}

/// Write side of a registration; create with [`Bus::register_publisher`].
#[derive(Clone)]
pub struct PublisherHandle {
    bus: Bus,
    topic: TopicName,
    node_id: String,
}

impl PublisherHandle {
    pub fn topic(&self) -> &TopicName {
        &self.topic
    }

    /// Publish `payload` at time `now_s`: stamp the next sequence number,
    /// then synchronously append the envelope to every subscriber queue in
    /// registration order, dropping each queue's oldest message on
    /// overflow. Returns the envelope as delivered.
    pub fn publish(&self, payload: Payload, now_s: f64) -> Result<MessageEnvelope, BusError> {
        if !now_s.is_finite() {
            return Err(BusError::NonFiniteTime(now_s));
        }
        let mut state = self.bus.lock();
        let topic_state = state
            .topics
            .get_mut(&self.topic)
            .ok_or_else(|| self.stale())?;
        let publisher = topic_state
            .publishers
            .iter_mut()
            .find(|p| p.node_id == self.node_id)
            .ok_or_else(|| self.stale())?;
        if let Some(previous) = publisher.last_publish_time_s {
            if now_s < previous {
                return Err(BusError::ClockRegression { now: now_s, previous });
            }
        }
        publisher.last_publish_time_s = Some(now_s);
        let seq = publisher.next_seq;
        publisher.next_seq += 1;

        let envelope = MessageEnvelope {
            topic: self.topic.clone(),
            publisher: self.node_id.clone(),
            seq,
            publish_time_s: now_s,
            payload,
        };
        for subscriber in &mut topic_state.subscribers {
            if subscriber.queue.len() == subscriber.capacity {
                subscriber.queue.pop_front();
                subscriber.dropped += 1;
            }
            subscriber.queue.push_back(envelope.clone());
        }
        Ok(envelope)
    }

    fn stale(&self) -> BusError {
        BusError::StaleHandle {
            node: self.node_id.clone(),
            topic: self.topic.to_string(),
        }
    }
}

/// Read side of a registration; create with [`Bus::register_subscriber`].
pub struct SubscriptionHandle {
    bus: Bus,
    topic: TopicName,
    subscriber_id: u64,
    node_id: String,
}

impl std::fmt::Debug for SubscriptionHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubscriptionHandle")
            .field("topic", &self.topic)
            .field("subscriber_id", &self.subscriber_id)
            .field("node_id", &self.node_id)
            .finish()
    }
}

impl SubscriptionHandle {
    pub fn topic(&self) -> &TopicName {
        &self.topic
    }

    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    fn with_entry<T>(&self, f: impl FnOnce(&mut SubscriberEntry) -> T) -> Option<T> {
        let mut state = self.bus.lock();
        let topic_state = state.topics.get_mut(&self.topic)?;
        let entry = topic_state
            .subscribers
            .iter_mut()
            .find(|s| s.id == self.subscriber_id)?;
        Some(f(entry))
    }

    /// Pop the oldest queued message, if any. Returns `None` once the
    /// queue is empty or the subscription has been unregistered.
    pub fn try_recv(&self) -> Option<MessageEnvelope> {
        self.with_entry(|entry| entry.queue.pop_front()).flatten()
    }

    /// Drain the whole queue in arrival order.
    pub fn drain(&self) -> Vec<MessageEnvelope> {
        self.with_entry(|entry| entry.queue.drain(..).collect())
            .unwrap_or_default()
    }

    /// Messages currently queued.
    pub fn pending(&self) -> usize {
        self.with_entry(|entry| entry.queue.len()).unwrap_or(0)
    }

    /// Messages dropped so far because this queue overflowed.
    pub fn dropped(&self) -> u64 {
        self.with_entry(|entry| entry.dropped).unwrap_or(0)
    }
}
