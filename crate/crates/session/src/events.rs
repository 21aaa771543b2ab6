//! Fan-out of timestamped session events to any number of subscribers.
//!
//! Each kind has its own sequence counter and strictly increasing
//! timestamps. A subscriber receives a snapshot (latest STATE plus every
//! POINT_RESULT so far) taken atomically with its registration, then live
//! events, so no POINT_RESULT is seen twice or missed. Queues are bounded for
//! FRAME events only: when a consumer falls behind, frames are dropped and a
//! gap marker takes their place. Every other kind is always delivered.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Condvar, Mutex, Weak};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::sync::Notify;

use crate::store::{io_err, write_atomic, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Frame,
    ForcePoint,
    AudioChunk,
    PointResult,
    State,
}

impl EventKind {
    pub const ALL: [EventKind; 5] = [
        EventKind::Frame,
        EventKind::ForcePoint,
        EventKind::AudioChunk,
        EventKind::PointResult,
        EventKind::State,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Frame => "FRAME",
            EventKind::ForcePoint => "FORCE_POINT",
            EventKind::AudioChunk => "AUDIO_CHUNK",
            EventKind::PointResult => "POINT_RESULT",
            EventKind::State => "STATE",
        }
    }

    /// Kinds written to the session's event log.
    pub fn is_logged(self) -> bool {
        matches!(self, EventKind::PointResult | EventKind::State)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown event kind '{s}'"))
    }
}

/// Parse a comma-separated kind list; empty means all kinds.
pub fn parse_kinds(s: &str) -> Result<HashSet<EventKind>, String> {
    let kinds: HashSet<EventKind> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(EventKind::from_str)
        .collect::<Result<_, _>>()?;
    Ok(if kinds.is_empty() {
        EventKind::ALL.into_iter().collect()
    } else {
        kinds
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub kind: EventKind,
    /// Per-kind sequence number, starting at 1.
    pub seq: u64,
    /// Rig clock, ns.
    pub t_ns: u64,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Delivery {
    Event(StreamEvent),
    /// Events of `kind` with sequence numbers `first_seq..=last_seq` were
    /// dropped for this subscriber.
    Gap {
        kind: EventKind,
        first_seq: u64,
        last_seq: u64,
        dropped: u64,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub state: Option<StreamEvent>,
    pub point_results: Vec<StreamEvent>,
}

#[derive(Default)]
struct QueueInner {
    items: VecDeque<Delivery>,
    frames: usize,
    closed: bool,
}

struct SubQueue {
    kinds: HashSet<EventKind>,
    frame_capacity: usize,
    inner: Mutex<QueueInner>,
    cv: Condvar,
    notify: Notify,
}

impl SubQueue {
    fn push(&self, ev: &StreamEvent) {
        if !self.kinds.contains(&ev.kind) {
            return;
        }
        let mut q = self.inner.lock().expect("queue lock");
        if ev.kind == EventKind::Frame && q.frames >= self.frame_capacity {
            if let Some(Delivery::Gap {
                kind: EventKind::Frame,
                last_seq,
                dropped,
                ..
            }) = q.items.back_mut()
            {
                *last_seq = ev.seq;
                *dropped += 1;
            } else {
                q.items.push_back(Delivery::Gap {
                    kind: EventKind::Frame,
                    first_seq: ev.seq,
                    last_seq: ev.seq,
                    dropped: 1,
                });
            }
        } else {
            if ev.kind == EventKind::Frame {
                q.frames += 1;
            }
            q.items.push_back(Delivery::Event(ev.clone()));
        }
        drop(q);
        self.cv.notify_all();
        self.notify.notify_one();
    }

    fn pop(q: &mut QueueInner) -> Option<Delivery> {
        let d = q.items.pop_front()?;
        if matches!(&d, Delivery::Event(e) if e.kind == EventKind::Frame) {
            q.frames -= 1;
        }
        Some(d)
    }

    fn close(&self) {
        self.inner.lock().expect("queue lock").closed = true;
        self.cv.notify_all();
        self.notify.notify_one();
    }
}

pub struct Subscription {
    pub snapshot: Snapshot,
    queue: Arc<SubQueue>,
}

impl Subscription {
    pub fn try_recv(&self) -> Option<Delivery> {
        SubQueue::pop(&mut self.queue.inner.lock().expect("queue lock"))
    }

    /// `None` on timeout or once the bus is closed and drained.
    pub fn recv_timeout(&self, timeout: Duration) -> Option<Delivery> {
        let deadline = Instant::now() + timeout;
        let mut q = self.queue.inner.lock().expect("queue lock");
        loop {
            if let Some(d) = SubQueue::pop(&mut q) {
                return Some(d);
            }
            let now = Instant::now();
            if q.closed || now >= deadline {
                return None;
            }
            q = self.queue.cv.wait_timeout(q, deadline - now).expect("queue lock").0;
        }
    }

    /// `None` once the bus is closed and drained.
    pub async fn recv(&self) -> Option<Delivery> {
        loop {
            {
                let mut q = self.queue.inner.lock().expect("queue lock");
                if let Some(d) = SubQueue::pop(&mut q) {
                    return Some(d);
                }
                if q.closed {
                    return None;
                }
            }
            self.queue.notify.notified().await;
        }
    }

    pub fn pending(&self) -> usize {
        self.queue.inner.lock().expect("queue lock").items.len()
    }
}

#[derive(Default, Clone, Copy)]
struct Counter {
    seq: u64,
    last_t: u64,
}

#[derive(Default)]
struct BusInner {
    counters: HashMap<EventKind, Counter>,
    state: Option<StreamEvent>,
    point_results: Vec<StreamEvent>,
    subs: Vec<Weak<SubQueue>>,
    log: Option<(PathBuf, File)>,
    closed: bool,
}

pub const DEFAULT_FRAME_CAPACITY: usize = 8;

#[derive(Default)]
pub struct EventBus {
    inner: Mutex<BusInner>,
}

impl EventBus {
    pub fn new() -> Self {
        Self::default()
    }

    /// A bus appending STATE and POINT_RESULT events to `path` (JSON lines).
    /// An existing log is replayed to restore counters and the snapshot; a
    /// torn final line from an interrupted write is discarded.
    pub fn with_log(path: &Path) -> Result<Self, StoreError> {
        let mut inner = BusInner::default();
        if path.exists() {
            let f = File::open(path).map_err(io_err(path))?;
            let mut good = Vec::new();
            let mut torn = false;
            for line in BufReader::new(f).split(b'\n') {
                let line = line.map_err(io_err(path))?;
                match serde_json::from_slice::<StreamEvent>(&line) {
                    Ok(ev) => {
                        let c = inner.counters.entry(ev.kind).or_default();
                        c.seq = ev.seq;
                        c.last_t = ev.t_ns;
                        match ev.kind {
                            EventKind::PointResult => inner.point_results.push(ev),
                            EventKind::State => inner.state = Some(ev),
                            _ => {}
                        }
                        good.extend_from_slice(&line);
                        good.push(b'\n');
                    }
                    Err(_) => torn = true,
                }
            }
            if torn {
                write_atomic(path, &good)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
        inner.log = Some((path.to_path_buf(), file));
        Ok(Self {
            inner: Mutex::new(inner),
        })
    }

    pub fn publish(&self, kind: EventKind, t_ns: u64, payload: serde_json::Value) -> Result<StreamEvent, StoreError> {
        let mut inner = self.inner.lock().expect("bus lock");
        let c = inner.counters.entry(kind).or_default();
        let t = if c.seq == 0 { t_ns } else { t_ns.max(c.last_t + 1) };
        c.seq += 1;
        c.last_t = t;
        let ev = StreamEvent {
            kind,
            seq: c.seq,
            t_ns: t,
            payload,
        };
        if kind.is_logged() {
            if let Some((path, file)) = &mut inner.log {
                let mut line = serde_json::to_vec(&ev).expect("event serializes");
                line.push(b'\n');
                file.write_all(&line).and_then(|_| file.flush()).map_err(io_err(path))?;
            }
        }
        match kind {
            EventKind::PointResult => inner.point_results.push(ev.clone()),
            EventKind::State => inner.state = Some(ev.clone()),
            _ => {}
        }
        inner.subs.retain(|w| match w.upgrade() {
            Some(q) => {
                q.push(&ev);
                true
            }
            None => false,
        });
        Ok(ev)
    }

    pub fn subscribe(&self, kinds: HashSet<EventKind>) -> Subscription {
        self.subscribe_with_capacity(kinds, DEFAULT_FRAME_CAPACITY)
    }

    pub fn subscribe_with_capacity(&self, kinds: HashSet<EventKind>, frame_capacity: usize) -> Subscription {
        let mut inner = self.inner.lock().expect("bus lock");
        let snapshot = Snapshot {
            state: inner.state.clone(),
            point_results: if kinds.contains(&EventKind::PointResult) {
                inner.point_results.clone()
            } else {
                Vec::new()
            },
        };
        let queue = Arc::new(SubQueue {
            kinds,
            frame_capacity,
            inner: Mutex::new(QueueInner {
                closed: inner.closed,
                ..QueueInner::default()
            }),
            cv: Condvar::new(),
            notify: Notify::new(),
        });
        inner.subs.push(Arc::downgrade(&queue));
        Subscription { snapshot, queue }
    }

    /// Whether any live subscriber takes `kind`; lets producers skip
    /// encoding work nobody will see.
    pub fn wants(&self, kind: EventKind) -> bool {
        self.inner
            .lock()
            .expect("bus lock")
            .subs
            .iter()
            .filter_map(Weak::upgrade)
            .any(|q| q.kinds.contains(&kind))
    }

    pub fn snapshot(&self) -> Snapshot {
        let inner = self.inner.lock().expect("bus lock");
        Snapshot {
            state: inner.state.clone(),
            point_results: inner.point_results.clone(),
        }
    }

    /// Plan indices that already have a POINT_RESULT.
    pub fn result_indices(&self) -> Vec<usize> {
        self.inner
            .lock()
            .expect("bus lock")
            .point_results
            .iter()
            .filter_map(|e| e.payload.get("index")?.as_u64().map(|i| i as usize))
            .collect()
    }

    pub fn last_t(&self, kind: EventKind) -> u64 {
        self.inner.lock().expect("bus lock").counters.get(&kind).map_or(0, |c| c.last_t)
    }

    /// Wake every subscriber; they drain what is queued and then end.
    pub fn close(&self) {
        let mut inner = self.inner.lock().expect("bus lock");
        inner.closed = true;
        for q in inner.subs.iter().filter_map(Weak::upgrade) {
            q.close();
        }
    }
}
