//! Experience replay.

use std::collections::VecDeque;

use rand::Rng;

use crate::observation::LocalMap;

/// A binary local map packed one bit per pixel, in network input order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedMap {
    len: usize,
    bits: Box<[u64]>,
}

impl PackedMap {
    pub fn pack(map: &LocalMap) -> Self {
        Self::from_input(&encode_local_map(map))
    }

    pub fn from_input(input: &[f64]) -> Self {
        let mut bits = vec![0u64; input.len().div_ceil(64)];
        for (i, &v) in input.iter().enumerate() {
            if v != 0.0 {
                bits[i / 64] |= 1 << (i % 64);
            }
        }
        Self { len: input.len(), bits: bits.into_boxed_slice() }
    }

    /// Raw network input with set pixels at 255.
    pub fn unpack(&self) -> Vec<f64> {
        (0..self.len)
            .map(|i| if self.bits[i / 64] >> (i % 64) & 1 == 1 { 255.0 } else { 0.0 })
            .collect()
    }
}

/// Interleaves the channels of a local map as `(y * W + x) * 3 + c`.
/// Non-zero pixels are treated as set (255), matching the binary channels.
pub fn encode_local_map(map: &LocalMap) -> Vec<f64> {
    let chans = map.channels();
    let n = chans[0].pixels().len();
    let mut out = Vec::with_capacity(3 * n);
    for i in 0..n {
        for ch in chans {
            out.push(if ch.pixels()[i] != 0 { 255.0 } else { 0.0 });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: PackedMap,
    pub action: usize,
    pub reward: f64,
    pub next_obs: PackedMap,
    /// True only for terminal states; the TD target does not bootstrap from them.
    pub done: bool,
}

/// Turns single steps into n-step transitions.
///
/// A terminal step closes every pending window. Windows still open when an
/// episode is truncated have no n-step bootstrap and are dropped.
#[derive(Debug, Clone)]
pub struct NStepWindow {
    n: usize,
    gamma: f64,
    pending: VecDeque<(PackedMap, usize, f64)>,
}

impl NStepWindow {
    pub fn new(n: usize, gamma: f64) -> Self {
        Self { n: n.max(1), gamma, pending: VecDeque::with_capacity(n.max(1)) }
    }

    /// Records one step and returns the transitions it completes.
    pub fn step(
        &mut self,
        obs: PackedMap,
        action: usize,
        reward: f64,
        next_obs: &PackedMap,
        terminal: bool,
        episode_over: bool,
    ) -> Vec<Transition> {
        self.pending.push_back((obs, action, reward));
        let mut out = Vec::new();
        while !self.pending.is_empty() && (terminal || self.pending.len() == self.n) {
            let reward = self.pending.iter().rev().fold(0.0, |acc, p| p.2 + self.gamma * acc);
            let (obs, action, _) = self.pending.pop_front().expect("non-empty");
            out.push(Transition { obs, action, reward, next_obs: next_obs.clone(), done: terminal });
        }
        if episode_over {
            self.pending.clear();
        }
        out
    }
}

/// Fixed-capacity ring; the oldest item is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    next: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: Vec::new(), next: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// Uniform sampling with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&T> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect()
    }
}
