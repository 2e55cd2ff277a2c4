//! Future-event list, simulation clock, seeded random streams and the
//! optional JSON-lines event trace.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    TaskArrival,
    ServiceComplete,
    UplinkDelivered,
    DownlinkDelivered,
    SlotTick,
}

#[derive(Debug, Clone)]
pub struct Event<P> {
    pub time: f64,
    pub kind: EventKind,
    pub payload: P,
    pub seq: u64,
}

// Min-heap order on (time, seq).
struct Entry<P>(Event<P>);

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<P> Eq for Entry<P> {}

impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Entry<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .time
            .total_cmp(&self.0.time)
            .then_with(|| other.0.seq.cmp(&self.0.seq))
    }
}

/// Future-event list plus the simulation clock.
pub struct Scheduler<P> {
    heap: BinaryHeap<Entry<P>>,
    clock: f64,
    next_seq: u64,
}

impl<P> Default for Scheduler<P> {
    fn default() -> Self {
        Self {
            heap: BinaryHeap::new(),
            clock: 0.0,
            next_seq: 0,
        }
    }
}

impl<P> Scheduler<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.0.time)
    }

    /// Inserts an event; events in the past are a causality bug and rejected.
    pub fn schedule(&mut self, time: f64, kind: EventKind, payload: P) -> Result<u64> {
        if !time.is_finite() || time < self.clock {
            return Err(Error::Causality {
                time,
                clock: self.clock,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry(Event {
            time,
            kind,
            payload,
            seq,
        }));
        Ok(seq)
    }

    pub fn schedule_in(&mut self, delay: f64, kind: EventKind, payload: P) -> Result<u64> {
        self.schedule(self.clock + delay, kind, payload)
    }

    /// Removes the next event if it is due at or before `t_end` and advances
    /// the clock to it.
    pub fn pop_due(&mut self, t_end: f64) -> Option<Event<P>> {
        if self.heap.peek()?.0.time > t_end {
            return None;
        }
        let ev = self.heap.pop()?.0;
        self.clock = ev.time;
        Some(ev)
    }

    fn advance_to(&mut self, t: f64) {
        if t.is_finite() && t > self.clock {
            self.clock = t;
        }
    }
}

/// Counters reported at the end of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub events: u64,
    pub arrivals: u64,
    pub completed: u64,
    pub failed: u64,
    pub in_system: u64,
    pub updates: u64,
}

/// A model driven by the event loop.
pub trait Process {
    type Payload;

    fn handle(&mut self, ev: Event<Self::Payload>, sched: &mut Scheduler<Self::Payload>) -> Result<()>;

    fn stats(&self) -> EpisodeStats;

    /// Entity id written to the event trace.
    fn entity(&self, payload: &Self::Payload) -> u64;
}

/// Processes every event due at or before `t_end`, then moves the clock to
/// `t_end` (when finite). An empty event list ends the loop early.
pub fn run_until<M: Process>(
    sched: &mut Scheduler<M::Payload>,
    model: &mut M,
    t_end: f64,
    mut trace: Option<&mut EventTrace>,
) -> Result<EpisodeStats> {
    while let Some(ev) = sched.pop_due(t_end) {
        if let Some(tr) = trace.as_deref_mut() {
            tr.record(ev.time, ev.kind, model.entity(&ev.payload), ev.seq)?;
        }
        model.handle(ev, sched)?;
    }
    sched.advance_to(t_end);
    Ok(model.stats())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub kind: EventKind,
    pub id: u64,
    pub seq: u64,
}

/// Line-delimited JSON log of processed events.
pub struct EventTrace {
    out: Box<dyn Write + Send>,
    records: u64,
}

impl EventTrace {
    pub fn new(out: impl Write + Send + 'static) -> Self {
        Self {
            out: Box::new(out),
            records: 0,
        }
    }

    pub fn record(&mut self, t: f64, kind: EventKind, id: u64, seq: u64) -> Result<()> {
        serde_json::to_writer(&mut self.out, &TraceRecord { t, kind, id, seq })?;
        self.out.write_all(b"\n")?;
        self.records += 1;
        Ok(())
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Independent random streams derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Arrivals = 0,
    Workloads = 1,
    LinkJitter = 2,
    Exploration = 3,
    Training = 4,
}

#[derive(Debug, Clone, Copy)]
pub struct RngStreams {
    pub master: u64,
}

impl RngStreams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn get(&self, stream: Stream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(stream as u64);
        rng
    }
}
