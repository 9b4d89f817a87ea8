//! Class-balanced episodic memory with per-class reservoir replacement.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPartition<S> {
    /// Number of samples of this class offered so far.
    pub seen: u64,
    pub items: Vec<S>,
}

/// Fixed-capacity store split evenly across classes: each class owns
/// `capacity / num_classes` slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer<S> {
    capacity: usize,
    slots_per_class: usize,
    classes: Vec<ClassPartition<S>>,
}

impl<S: Clone> ReplayBuffer<S> {
    pub fn new(capacity: usize, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument("replay buffer needs at least one class".into()));
        }
        Ok(Self {
            capacity,
            slots_per_class: capacity / num_classes,
            classes: (0..num_classes).map(|_| ClassPartition { seen: 0, items: Vec::new() }).collect(),
        })
    }

    /// Rebuilds a buffer from saved partitions.
    pub fn from_parts(capacity: usize, classes: Vec<ClassPartition<S>>) -> Result<Self> {
        let mut buf = Self::new(capacity, classes.len())?;
        if classes.iter().any(|c| c.items.len() > buf.slots_per_class) {
            return Err(Error::InvalidArgument("partition exceeds its slot count".into()));
        }
        buf.classes = classes;
        Ok(buf)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn slots_per_class(&self) -> usize {
        self.slots_per_class
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn len(&self) -> usize {
        self.classes.iter().map(|c| c.items.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_len(&self, label: usize) -> usize {
        self.classes.get(label).map_or(0, |c| c.items.len())
    }

    pub fn partitions(&self) -> &[ClassPartition<S>] {
        &self.classes
    }

    /// Offers a sample. Fills free slots first; once the class partition is
    /// full, the `m`-th sample replaces a uniformly chosen slot with
    /// probability `slots / m`.
    pub fn insert<R: Rng + ?Sized>(&mut self, sample: S, label: usize, rng: &mut R) -> Result<()> {
        let num_classes = self.classes.len();
        let slots = self.slots_per_class;
        let part = self.classes.get_mut(label).ok_or(Error::LabelOutOfRange { label, num_classes })?;
        part.seen += 1;
        if part.items.len() < slots {
            part.items.push(sample);
        } else if slots > 0 {
            let j = rng.random_range(0..part.seen);
            if j < slots as u64 {
                part.items[j as usize] = sample;
            }
        }
        Ok(())
    }

    fn get_flat(&self, mut i: usize) -> (&S, usize) {
        for (label, part) in self.classes.iter().enumerate() {
            if i < part.items.len() {
                return (&part.items[i], label);
            }
            i -= part.items.len();
        }
        unreachable!("flat index within len()")
    }

    /// Draws `n` stored items uniformly: without replacement when `n` fits,
    /// with replacement otherwise.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<(S, usize)>> {
        let stored = self.len();
        if stored == 0 {
            return Err(Error::EmptyBuffer);
        }
        let pick = |i| {
            let (s, label) = self.get_flat(i);
            (s.clone(), label)
        };
        if n <= stored {
            Ok(index::sample(rng, stored, n).into_iter().map(pick).collect())
        } else {
            Ok((0..n).map(|_| pick(rng.random_range(0..stored))).collect())
        }
    }
}

/// Appends a replay draw of the same size as `current` (capped by what the
/// buffer holds). An empty buffer leaves the batch unchanged.
pub fn compose_batch<S: Clone, R: Rng + ?Sized>(
    mut current: Vec<(S, usize)>,
    buffer: &ReplayBuffer<S>,
    rng: &mut R,
) -> Result<Vec<(S, usize)>> {
    if buffer.is_empty() {
        return Ok(current);
    }
    let n = current.len().min(buffer.len());
    current.extend(buffer.sample(n, rng)?);
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mnist_preset_slot_count() {
        let buf = ReplayBuffer::<u32>::new(2000, 10).unwrap();
        assert_eq!(buf.slots_per_class(), 200);
        assert_eq!(ReplayBuffer::<u32>::new(500, 10).unwrap().slots_per_class(), 50);
    }

    #[test]
    fn single_slot_replacement_is_uniform() {
        // One slot per class: after m offers, each offer survives w.p. 1/m.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut counts = [0u32; 4];
        let trials = 40_000;
        for _ in 0..trials {
            let mut buf = ReplayBuffer::new(10, 10).unwrap();
            for i in 0..4 {
                buf.insert(i, 3, &mut rng).unwrap();
            }
            counts[buf.partitions()[3].items[0]] += 1;
        }
        for c in counts {
            let p = f64::from(c) / f64::from(trials);
            assert!((p - 0.25).abs() < 4.0 * (0.25 * 0.75 / f64::from(trials)).sqrt(), "{counts:?}");
        }
    }

    #[test]
    fn rejects_unknown_label() {
        let mut buf = ReplayBuffer::new(10, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(buf.insert(1, 2, &mut rng), Err(Error::LabelOutOfRange { label: 2, .. })));
    }

    #[test]
    fn sampling_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut buf = ReplayBuffer::new(10, 2).unwrap();
        assert!(matches!(buf.sample(1, &mut rng), Err(Error::EmptyBuffer)));
        buf.insert(42u32, 1, &mut rng).unwrap();
        assert!(buf.sample(0, &mut rng).unwrap().is_empty());
        assert_eq!(buf.sample(3, &mut rng).unwrap(), vec![(42, 1); 3]);
    }

    #[test]
    fn sampling_without_replacement_has_distinct_items() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut buf = ReplayBuffer::new(20, 2).unwrap();
        for i in 0..20u32 {
            buf.insert(i, (i % 2) as usize, &mut rng).unwrap();
        }
        let mut drawn: Vec<u32> = buf.sample(20, &mut rng).unwrap().into_iter().map(|(s, _)| s).collect();
        drawn.sort_unstable();
        assert_eq!(drawn, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn sampling_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut buf = ReplayBuffer::new(10, 5).unwrap();
        for i in 0..10u32 {
            buf.insert(i, (i / 2) as usize, &mut rng).unwrap();
        }
        let mut counts = [0u32; 10];
        for _ in 0..100_000 {
            counts[buf.sample(1, &mut rng).unwrap()[0].0 as usize] += 1;
        }
        for c in counts {
            assert!((f64::from(c) / 1e5 - 0.1).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn compose_doubles_batch_when_buffer_is_full_enough() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let empty = ReplayBuffer::<u32>::new(100, 10).unwrap();
        let current: Vec<(u32, usize)> = (0..64).map(|i| (i, 8)).collect();
        assert_eq!(compose_batch(current.clone(), &empty, &mut rng).unwrap(), current);

        let mut buf = ReplayBuffer::new(100, 10).unwrap();
        for i in 0..100u32 {
            buf.insert(1000 + i, (i % 4) as usize, &mut rng).unwrap();
        }
        let out = compose_batch(current.clone(), &buf, &mut rng).unwrap();
        assert_eq!(out.len(), 104);
        assert_eq!(&out[..64], current.as_slice());
        assert!(out[64..].iter().all(|&(_, l)| l < 4));

        for i in 0..200u32 {
            buf.insert(2000 + i, 4 + (i % 6) as usize, &mut rng).unwrap();
        }
        assert_eq!(compose_batch(current, &buf, &mut rng).unwrap().len(), 128);
    }

    #[test]
    fn saturated_buffer_is_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut buf = ReplayBuffer::new(57, 5).unwrap();
        for i in 0..500u32 {
            buf.insert(i, rng.random_range(0..5), &mut rng).unwrap();
        }
        for c in 0..5 {
            assert_eq!(buf.class_len(c), 11);
        }
        assert_eq!(buf.len(), 55);
    }

    proptest! {
        #[test]
        fn never_exceeds_capacity(capacity in 0usize..60, classes in 1usize..12,
                                  labels in prop::collection::vec(0usize..12, 0..300), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut buf = ReplayBuffer::new(capacity, classes).unwrap();
            for (i, l) in labels.into_iter().enumerate() {
                let _ = buf.insert(i, l, &mut rng);
                prop_assert!(buf.len() <= capacity);
                for c in 0..classes {
                    prop_assert!(buf.class_len(c) <= buf.slots_per_class());
                }
            }
        }
    }
}
