use rand::Rng;

use super::Transition;
use crate::error::{Error, Result};

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    write_index: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay buffer capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            write_index: 0,
        })
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

    /// Appends, overwriting the oldest transition once full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.write_index] = t;
        }
        self.write_index = (self.write_index + 1) % self.capacity;
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.items.len() < n || self.items.is_empty() {
            return Err(Error::InsufficientData {
                needed: n.max(1),
                available: self.items.len(),
            });
        }
        Ok((0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> + '_ {
        let split = if self.items.len() < self.capacity {
            0
        } else {
            self.write_index
        };
        self.items[split..].iter().chain(self.items[..split].iter())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{MuscleAction, Observation};
    use crate::seeding;

    fn t(reward: f64) -> Transition {
        Transition {
            obs: Observation([0.0; 4]),
            action: MuscleAction::uniform(0.5),
            reward,
            next_obs: Observation([0.0; 4]),
            done: false,
        }
    }

    #[test]
    fn fifo_overwrite() {
        let mut buf = ReplayBuffer::new(2).unwrap();
        for r in [1.0, 2.0, 3.0] {
            buf.push(t(r));
        }
        assert_eq!(buf.len(), 2);
        let kept: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        assert_eq!(kept, vec![2.0, 3.0]);
        buf.push(t(4.0));
        let kept: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        assert_eq!(kept, vec![3.0, 4.0]);
    }

    #[test]
    fn empty_sample_is_an_error() {
        let buf = ReplayBuffer::new(4).unwrap();
        let mut rng = seeding::stream(0, 0);
        assert!(matches!(buf.sample(1, &mut rng), Err(Error::InsufficientData { .. })));
        let mut one = ReplayBuffer::new(4).unwrap();
        one.push(t(1.0));
        assert!(one.sample(2, &mut rng).is_err());
    }

    #[test]
    fn seeded_sampling_is_deterministic() {
        let mut buf = ReplayBuffer::new(16).unwrap();
        for r in 0..10 {
            buf.push(t(r as f64));
        }
        let draw = |seed| {
            let mut rng = seeding::stream(seed, 3);
            (0..20)
                .map(|_| buf.sample(1, &mut rng).unwrap()[0].reward)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }
}
