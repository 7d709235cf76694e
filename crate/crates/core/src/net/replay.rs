use ndarray::Array2;
use rand::Rng;

use crate::env::Transition;

/// A sampled minibatch, one transition per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    /// True terminal transitions; truncated ones still bootstrap.
    pub terminals: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Fixed-capacity FIFO experience store with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    states: Vec<f64>,
    next_states: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    terminals: Vec<bool>,
    head: usize,
    len: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            state_dim,
            states: Vec::new(),
            next_states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminals: Vec::new(),
            head: 0,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stores a transition reward as given; evicts the oldest item when full.
    pub fn push(&mut self, t: &Transition) {
        self.push_parts(t.state.as_slice(), t.action, t.reward, t.next_state.as_slice(), t.done);
    }

    pub fn push_parts(&mut self, state: &[f64], action: usize, reward: f64, next_state: &[f64], terminal: bool) {
        assert_eq!(state.len(), self.state_dim, "state dimension");
        assert_eq!(next_state.len(), self.state_dim, "next state dimension");
        let d = self.state_dim;
        if self.len < self.capacity {
            self.states.extend_from_slice(state);
            self.next_states.extend_from_slice(next_state);
            self.actions.push(action);
            self.rewards.push(reward);
            self.terminals.push(terminal);
            self.len += 1;
        } else {
            let i = self.head;
            self.states[i * d..(i + 1) * d].copy_from_slice(state);
            self.next_states[i * d..(i + 1) * d].copy_from_slice(next_state);
            self.actions[i] = action;
            self.rewards[i] = reward;
            self.terminals[i] = terminal;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Stored item `i` in insertion order (0 = oldest).
    pub fn get(&self, i: usize) -> Option<(&[f64], usize, f64, &[f64], bool)> {
        if i >= self.len {
            return None;
        }
        let slot = (self.head + i) % self.capacity.max(1);
        let slot = if self.len < self.capacity { i } else { slot };
        Some(self.slot(slot))
    }

    fn slot(&self, slot: usize) -> (&[f64], usize, f64, &[f64], bool) {
        let d = self.state_dim;
        (
            &self.states[slot * d..(slot + 1) * d],
            self.actions[slot],
            self.rewards[slot],
            &self.next_states[slot * d..(slot + 1) * d],
            self.terminals[slot],
        )
    }

    /// Storage slots of a uniform sample with replacement, or `None` while
    /// fewer than `batch_size` items are stored.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Option<Vec<usize>> {
        if batch_size == 0 || self.len < batch_size {
            return None;
        }
        Some((0..batch_size).map(|_| rng.gen_range(0..self.len)).collect())
    }

    pub fn gather(&self, slots: &[usize]) -> Batch {
        let d = self.state_dim;
        let n = slots.len();
        let mut states = Array2::zeros((n, d));
        let mut next_states = Array2::zeros((n, d));
        let mut actions = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        let mut terminals = Vec::with_capacity(n);
        for (row, &slot) in slots.iter().enumerate() {
            let (s, a, r, s2, term) = self.slot(slot);
            states.row_mut(row).assign(&ndarray::ArrayView1::from(s));
            next_states.row_mut(row).assign(&ndarray::ArrayView1::from(s2));
            actions.push(a);
            rewards.push(r);
            terminals.push(term);
        }
        Batch {
            states,
            actions,
            rewards,
            next_states,
            terminals,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Option<Batch> {
        self.sample_indices(batch_size, rng).map(|slots| self.gather(&slots))
    }
}
