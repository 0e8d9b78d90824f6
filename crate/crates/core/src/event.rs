//! Time-ordered event queue with FIFO tie-breaking.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::ScheduleError;

/// Simulation time in microseconds.
pub type SimTime = u64;

struct Queued<E> {
    time: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Queued<E> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}

impl<E> Eq for Queued<E> {}

impl<E> PartialOrd for Queued<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Queued<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

/// Pops events in `(time, insertion sequence)` order and tracks the clock.
pub struct EventQueue<E> {
    heap: BinaryHeap<Queued<E>>,
    next_seq: u64,
    now: SimTime,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            next_seq: 0,
            now: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, time: SimTime, event: E) -> Result<(), ScheduleError> {
        if time < self.now {
            return Err(ScheduleError::InPast { at: time, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Queued { time, seq, event });
        Ok(())
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|q| q.time)
    }

    /// Pop the next event and advance the clock to it.
    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        let q = self.heap.pop()?;
        self.now = q.time;
        Some((q.time, q.event))
    }

    /// Pop the next event only if it is due at or before `limit`.
    pub fn pop_until(&mut self, limit: SimTime) -> Option<(SimTime, E)> {
        match self.peek_time() {
            Some(t) if t <= limit => self.pop(),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn equal_times_pop_in_insertion_order() {
        let mut q = EventQueue::new();
        q.schedule(5, "a").unwrap();
        q.schedule(5, "b").unwrap();
        q.schedule(1, "c").unwrap();
        assert_eq!(q.pop(), Some((1, "c")));
        assert_eq!(q.pop(), Some((5, "a")));
        assert_eq!(q.pop(), Some((5, "b")));
        assert_eq!(q.pop(), None);
    }

    #[test]
    fn rejects_past_events() {
        let mut q = EventQueue::new();
        q.schedule(10, ()).unwrap();
        q.pop();
        assert_eq!(q.schedule(9, ()), Err(ScheduleError::InPast { at: 9, now: 10 }));
        assert!(q.schedule(10, ()).is_ok());
    }

    #[test]
    fn pops_match_sort_oracle() {
        let mut rng = crate::rng::stream(3, 0);
        let mut q = EventQueue::new();
        let mut oracle = Vec::new();
        for i in 0..100_000u64 {
            let t = rng.random_range(0..5_000u64);
            q.schedule(t, i).unwrap();
            oracle.push((t, i));
        }
        oracle.sort();
        let popped: Vec<_> = std::iter::from_fn(|| q.pop()).collect();
        assert_eq!(popped, oracle);
    }

    #[test]
    fn pop_until_respects_limit() {
        let mut q = EventQueue::new();
        q.schedule(3, 'x').unwrap();
        q.schedule(8, 'y').unwrap();
        assert_eq!(q.pop_until(5), Some((3, 'x')));
        assert_eq!(q.pop_until(5), None);
        assert_eq!(q.len(), 1);
    }
}
