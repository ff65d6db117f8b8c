use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct Transition {
    pub obs: [f32; 8],
    pub action: [f32; 2],
    pub reward: f32,
    pub next_obs: [f32; 8],
    /// True task termination only; horizon timeouts bootstrap.
    pub terminal: bool,
}

/// Uniform ring-buffer replay.
pub struct ReplayBuffer {
    data: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        ReplayBuffer {
            data: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            next: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample<'a>(&'a self, rng: &mut ChaCha8Rng, batch: usize) -> Vec<&'a Transition> {
        (0..batch)
            .map(|_| &self.data[rng.random_range(0..self.data.len())])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_from;

    #[test]
    fn ring_overwrites_oldest() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(Transition {
                obs: [i as f32; 8],
                action: [0.0; 2],
                reward: 0.0,
                next_obs: [0.0; 8],
                terminal: false,
            });
        }
        assert_eq!(buf.len(), 3);
        let mut rng = rng_from(0);
        let sample = buf.sample(&mut rng, 10);
        assert!(sample.iter().all(|t| t.obs[0] >= 2.0));
    }
}
