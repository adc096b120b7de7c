use std::collections::VecDeque;

use rand::Rng;

/// One stored experience. Channel-lookahead agents keep the SNR coefficients
/// because their relative value depends on them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transition {
    Basic { battery: f64, reward: f64, next_battery: f64 },
    WithGamma { battery: f64, gamma: f64, reward: f64, next_battery: f64, next_gamma: f64 },
}

impl Transition {
    pub fn reward(&self) -> f64 {
        match *self {
            Transition::Basic { reward, .. } | Transition::WithGamma { reward, .. } => reward,
        }
    }

    pub fn battery(&self) -> f64 {
        match *self {
            Transition::Basic { battery, .. } | Transition::WithGamma { battery, .. } => battery,
        }
    }

    pub fn next_battery(&self) -> f64 {
        match *self {
            Transition::Basic { next_battery, .. } | Transition::WithGamma { next_battery, .. } => {
                next_battery
            }
        }
    }

    /// `(gamma, next_gamma)`, or `None` for basic records.
    pub fn gammas(&self) -> Option<(f64, f64)> {
        match *self {
            Transition::Basic { .. } => None,
            Transition::WithGamma { gamma, next_gamma, .. } => Some((gamma, next_gamma)),
        }
    }
}

/// Bounded FIFO replay memory with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    entries: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "replay memory capacity must be positive");
        Self { entries: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends `t`, evicting the oldest entry when full.
    pub fn push(&mut self, t: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.entries.iter()
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, n: usize, rng: &mut R, out: &mut Vec<Transition>) {
        out.clear();
        if self.entries.is_empty() {
            return;
        }
        let len = self.entries.len();
        out.extend((0..n).map(|_| self.entries[rng.random_range(0..len)]));
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Transition> {
        let mut out = Vec::with_capacity(n);
        self.sample_into(n, rng, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;

    fn t(i: usize) -> Transition {
        Transition::Basic { battery: i as f64, reward: 0.0, next_battery: 0.0 }
    }

    #[test]
    fn sampling_draws_from_stored_entries() {
        let mut m = ReplayMemory::new(4);
        let mut rng = substream(0, &[]);
        assert!(m.sample(3, &mut rng).is_empty());
        for i in 0..3 {
            m.push(t(i));
        }
        let batch = m.sample(64, &mut rng);
        assert_eq!(batch.len(), 64);
        assert!(batch.iter().all(|x| x.battery() < 3.0));
        // With replacement: 64 draws out of 3 entries must repeat.
        let distinct: std::collections::BTreeSet<u64> =
            batch.iter().map(|x| x.battery().to_bits()).collect();
        assert_eq!(distinct.len(), 3);
    }

    proptest! {
        #[test]
        fn fifo_eviction_keeps_last_entries(cap in 1usize..50, k in 0usize..200) {
            let mut m = ReplayMemory::new(cap);
            for i in 0..k {
                m.push(t(i));
                prop_assert!(m.len() <= cap);
            }
            let kept: Vec<f64> = m.iter().map(|x| x.battery()).collect();
            let expect: Vec<f64> = (k.saturating_sub(cap)..k).map(|i| i as f64).collect();
            prop_assert_eq!(kept, expect);
        }
    }
}
