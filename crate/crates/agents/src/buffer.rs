//! Replay storage.

use std::collections::{BTreeMap, VecDeque};

use rismeta_core::{Rng, Transition};

use crate::{AgentError, Result};

/// Fixed-capacity ring of transitions. Besides uniform sampling it keeps,
/// per task, the ring slots of that task's transitions in insertion order so
/// recent-context windows are cheap.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    slots: Vec<Transition>,
    next: usize,
    by_task: BTreeMap<u64, VecDeque<usize>>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(AgentError::Config("buffer capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            slots: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            by_task: BTreeMap::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn add(&mut self, tr: Transition) {
        let slot = self.next;
        if self.slots.len() < self.capacity {
            self.slots.push(tr);
        } else {
            let old = self.slots[slot].task_id;
            if let Some(q) = self.by_task.get_mut(&old) {
                // the evicted slot is the oldest entry of its task
                let front = q.pop_front();
                debug_assert_eq!(front, Some(slot));
                if q.is_empty() {
                    self.by_task.remove(&old);
                }
            }
            self.slots[slot] = tr;
        }
        self.by_task.entry(self.slots[slot].task_id).or_default().push_back(slot);
        self.next = (slot + 1) % self.capacity;
    }

    pub fn get(&self, slot: usize) -> Option<&Transition> {
        self.slots.get(slot)
    }

    pub fn get_mut(&mut self, slot: usize) -> Option<&mut Transition> {
        self.slots.get_mut(slot)
    }

    /// Slots from oldest to newest.
    pub fn chronological_slots(&self) -> impl Iterator<Item = usize> + '_ {
        let n = self.slots.len();
        let start = if n < self.capacity { 0 } else { self.next };
        (0..n).map(move |i| (start + i) % n.max(1))
    }

    pub fn task_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.by_task.keys().copied()
    }

    /// Slots of one task, oldest first.
    pub fn task_slots(&self, task_id: u64) -> Result<&VecDeque<usize>> {
        self.by_task.get(&task_id).ok_or(AgentError::UnknownTask(task_id))
    }

    /// `batch` slots drawn uniformly with replacement.
    pub fn sample_slots(&self, batch: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        if self.slots.is_empty() {
            return Err(AgentError::EmptyBuffer);
        }
        Ok((0..batch).map(|_| rng.below(self.slots.len())).collect())
    }

    /// `batch` transitions drawn uniformly with replacement.
    pub fn sample(&self, batch: usize, rng: &mut Rng) -> Result<Vec<&Transition>> {
        Ok(self.sample_slots(batch, rng)?.into_iter().map(|s| &self.slots[s]).collect())
    }

    /// `batch` slots drawn uniformly from one task.
    pub fn sample_task_slots(&self, task_id: u64, batch: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        let q = self.task_slots(task_id)?;
        Ok((0..batch).map(|_| q[rng.below(q.len())]).collect())
    }

    /// The most recent `len` transitions of a task, oldest first.
    pub fn context_sample(&self, task_id: u64, len: usize) -> Result<Vec<&Transition>> {
        let q = self.task_slots(task_id)?;
        let skip = q.len().saturating_sub(len);
        Ok(q.iter().skip(skip).map(|&s| &self.slots[s]).collect())
    }

    /// Per-task index matches the ring contents.
    pub fn index_consistent(&self) -> bool {
        let mut seen = 0;
        for (&task, q) in &self.by_task {
            if q.iter().any(|&s| s >= self.slots.len() || self.slots[s].task_id != task) {
                return false;
            }
            seen += q.len();
        }
        seen == self.slots.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rismeta_core::{ActionVector, Observation};

    fn tr(task_id: u64, t: u64) -> Transition {
        Transition {
            task_id,
            t,
            s: Observation(vec![t as f64]),
            a: ActionVector(vec![0.0]),
            r: t as f64,
            s_next: Observation(vec![t as f64 + 1.0]),
            done: false,
            annotation: None,
        }
    }

    #[test]
    fn sample_full_batch_covers_contents() {
        let mut buf = ReplayBuffer::new(10).unwrap();
        for t in 0..3 {
            buf.add(tr(0, t));
        }
        let mut rng = Rng::new(1);
        // with replacement: a large batch sees every element
        let mut seen: Vec<u64> = buf.sample(200, &mut rng).unwrap().iter().map(|t| t.t).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen, vec![0, 1, 2]);
        // chronological slots enumerate the multiset exactly
        let mut all: Vec<u64> = buf.chronological_slots().map(|s| buf.get(s).unwrap().t).collect();
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut buf = ReplayBuffer::new(2).unwrap();
        for t in 0..3 {
            buf.add(tr(t % 2, t));
        }
        assert_eq!(buf.len(), 2);
        let ts: Vec<u64> = buf.chronological_slots().map(|s| buf.get(s).unwrap().t).collect();
        assert_eq!(ts, vec![1, 2]);
        assert!(buf.index_consistent());
    }

    #[test]
    fn context_is_recent_and_ordered() {
        let mut buf = ReplayBuffer::new(50).unwrap();
        for t in 0..20 {
            buf.add(tr(t % 2, t));
        }
        let ctx = buf.context_sample(1, 5).unwrap();
        let ts: Vec<u64> = ctx.iter().map(|t| t.t).collect();
        assert_eq!(ts, vec![11, 13, 15, 17, 19]);
        assert!(ts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empty_errors() {
        let buf = ReplayBuffer::new(4).unwrap();
        let mut rng = Rng::new(0);
        assert!(matches!(buf.sample(1, &mut rng), Err(AgentError::EmptyBuffer)));
        assert!(matches!(buf.context_sample(3, 1), Err(AgentError::UnknownTask(3))));
        assert!(ReplayBuffer::new(0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn capacity_and_index_hold(cap in 1usize..16, tasks in proptest::collection::vec(0u64..4, 0..64)) {
                let mut buf = ReplayBuffer::new(cap).unwrap();
                for (t, &task) in tasks.iter().enumerate() {
                    buf.add(tr(task, t as u64));
                    prop_assert!(buf.len() <= cap);
                    prop_assert!(buf.index_consistent());
                }
                for task in buf.task_ids().collect::<Vec<_>>() {
                    let ts: Vec<u64> = buf.context_sample(task, cap).unwrap().iter().map(|t| t.t).collect();
                    prop_assert!(ts.windows(2).all(|w| w[0] < w[1]));
                }
            }
        }
    }
}
