//! Bounded FIFO replay of whole trajectories.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use sacx_core::trajectory::Trajectory;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("replay buffer is empty")]
    Empty,
    #[error("trajectory has no steps")]
    EmptyTrajectory,
    #[error("step {step} has behavior log density {value}")]
    Provenance { step: usize, value: f64 },
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Arc<Trajectory>>,
    appended: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self { capacity, items: VecDeque::with_capacity(capacity.min(4096)), appended: 0 }
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

    /// Trajectories ever appended, including evicted ones.
    pub fn total_appended(&self) -> u64 {
        self.appended
    }

    /// Appends a trajectory and returns the evicted oldest one at capacity.
    /// Steps must carry a finite behavior log density.
    pub fn append(&mut self, trajectory: Arc<Trajectory>) -> Result<Option<Arc<Trajectory>>, ReplayError> {
        if trajectory.is_empty() {
            return Err(ReplayError::EmptyTrajectory);
        }
        if let Some((step, s)) = trajectory.steps.iter().enumerate().find(|(_, s)| !s.behavior_log_density.is_finite())
        {
            return Err(ReplayError::Provenance { step, value: s.behavior_log_density });
        }
        let evicted = if self.items.len() == self.capacity { self.items.pop_front() } else { None };
        self.items.push_back(trajectory);
        self.appended += 1;
        Ok(evicted)
    }

    /// `n` trajectories drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<Arc<Trajectory>>, ReplayError> {
        if self.items.is_empty() {
            return Err(ReplayError::Empty);
        }
        Ok((0..n).map(|_| self.items[rng.random_range(0..self.items.len())].clone()).collect())
    }

    /// The current contents, oldest first.
    pub fn snapshot(&self) -> Vec<Arc<Trajectory>> {
        self.items.iter().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.items.iter().map(|t| t.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use sacx_core::trajectory::Transition;

    fn traj(episode: u64) -> Arc<Trajectory> {
        let step = Transition {
            observation: vec![0.0],
            action: vec![0.0],
            rewards: vec![0.0],
            behavior_task: 0,
            behavior_log_density: -1.0,
        };
        Arc::new(Trajectory { steps: vec![step], final_observation: vec![0.0], terminal: true, actor: 0, episode })
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(2);
        b.append(traj(0)).unwrap();
        b.append(traj(1)).unwrap();
        let evicted = b.append(traj(2)).unwrap().unwrap();
        assert_eq!(evicted.episode, 0);
        assert_eq!(b.iter().map(|t| t.episode).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(b.total_appended(), 3);
    }

    #[test]
    fn sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = ReplayBuffer::new(10);
        assert_eq!(b.sample(&mut rng, 1), Err(ReplayError::Empty));
        b.append(traj(4)).unwrap();
        let s = b.sample(&mut rng, 5).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|t| t.episode == 4));
    }

    #[test]
    fn rejects_missing_provenance() {
        let mut b = ReplayBuffer::new(3);
        let mut t = (*traj(0)).clone();
        t.steps[0].behavior_log_density = f64::NEG_INFINITY;
        assert!(matches!(b.append(Arc::new(t)), Err(ReplayError::Provenance { step: 0, .. })));
        let empty = Trajectory { steps: vec![], final_observation: vec![], terminal: true, actor: 0, episode: 0 };
        assert_eq!(b.append(Arc::new(empty)), Err(ReplayError::EmptyTrajectory));
    }
}
