use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, LabeledSet, Result};
use crate::tensor::Tensor;

/// One training step's data. Target samples carry no labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBatch {
    pub xs: Tensor,
    pub ys: Vec<usize>,
    pub xt: Tensor,
}

/// Endless stream of index draws over one domain. Each epoch is a fresh
/// permutation; a batch that crosses an epoch boundary takes the tail of one
/// permutation and the head of the next.
#[derive(Debug, Clone)]
struct Epochs {
    order: Vec<usize>,
    cursor: usize,
}

impl Epochs {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, cursor: 0 }
    }

    fn take(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            let m = (k - out.len()).min(self.order.len() - self.cursor);
            out.extend_from_slice(&self.order[self.cursor..self.cursor + m]);
            self.cursor += m;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct BatchIter<'a> {
    source: &'a LabeledSet,
    target: &'a LabeledSet,
    batch: usize,
    rng: ChaCha8Rng,
    src: Epochs,
    tgt: Epochs,
}

/// Infinite iterator of paired source/target batches.
pub fn batch_iter<'a>(source: &'a LabeledSet, target: &'a LabeledSet, batch: usize, seed: u64) -> Result<BatchIter<'a>> {
    if batch == 0 {
        return Err(DataError::Contract("batch size must be positive".into()));
    }
    if batch > source.len().min(target.len()) {
        return Err(DataError::Contract(format!(
            "batch {batch} exceeds domain sizes {} / {}",
            source.len(),
            target.len()
        )));
    }
    if source.dim() != target.dim() {
        return Err(DataError::Contract(format!(
            "source has {} features, target {}",
            source.dim(),
            target.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let src = Epochs::new(source.len(), &mut rng);
    let tgt = Epochs::new(target.len(), &mut rng);
    Ok(BatchIter {
        source,
        target,
        batch,
        rng,
        src,
        tgt,
    })
}

impl Iterator for BatchIter<'_> {
    type Item = DomainBatch;

    fn next(&mut self) -> Option<DomainBatch> {
        let s = self.src.take(self.batch, &mut self.rng);
        let t = self.tgt.take(self.batch, &mut self.rng);
        Some(DomainBatch {
            xs: self.source.features().select_rows(&s),
            ys: s.iter().map(|&i| self.source.labels()[i]).collect(),
            xt: self.target.features().select_rows(&t),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_two_moons, Domain};

    fn indexed(n: usize) -> LabeledSet {
        let f = Tensor::matrix(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        LabeledSet::new(f, vec![0; n], Domain::Source, 2).unwrap()
    }

    #[test]
    fn one_epoch_visits_each_source_index_once() {
        let (s, t) = (indexed(50), indexed(30));
        let mut seen: Vec<usize> = batch_iter(&s, &t, 7, 3)
            .unwrap()
            .take(8)
            .flat_map(|b| b.xs.into_data())
            .take(50)
            .map(|v| v as usize)
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn shorter_domain_recycles() {
        let (s, t) = (indexed(40), indexed(10));
        let drawn: Vec<usize> = batch_iter(&s, &t, 5, 1)
            .unwrap()
            .take(8)
            .flat_map(|b| b.xt.into_data())
            .map(|v| v as usize)
            .collect();
        for epoch in drawn.chunks(10) {
            let mut e = epoch.to_vec();
            e.sort_unstable();
            assert_eq!(e, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn same_seed_same_batches() {
        let s = gen_two_moons(100, 0.1, 0).unwrap();
        let t = gen_two_moons(100, 0.1, 1).unwrap();
        let a: Vec<_> = batch_iter(&s, &t, 16, 5).unwrap().take(20).collect();
        let b: Vec<_> = batch_iter(&s, &t, 16, 5).unwrap().take(20).collect();
        assert_eq!(a, b);
        let c: Vec<_> = batch_iter(&s, &t, 16, 6).unwrap().take(20).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn batch_size_contract() {
        let (s, t) = (indexed(10), indexed(8));
        assert!(batch_iter(&s, &t, 0, 0).is_err());
        assert!(batch_iter(&s, &t, 9, 0).is_err());
        assert!(batch_iter(&s, &t, 8, 0).is_ok());
    }
}
