//! Ratio-exact batch mixing over several record sources.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Per-source counts for one batch. Exact when `batch_size` is a multiple of
/// the ratio sum; otherwise the remainder goes to the largest fractional
/// shares (lowest source index first on ties), so counts differ from the
/// ideal by less than one.
pub fn batch_counts(ratio: &[usize], batch_size: usize) -> Result<Vec<usize>> {
    if ratio.is_empty() || ratio.contains(&0) {
        return Err(Error::Config("mix ratio components must be positive".into()));
    }
    let total: usize = ratio.iter().sum();
    if batch_size < total {
        return Err(Error::Config(format!(
            "batch size {batch_size} is smaller than the ratio sum {total}"
        )));
    }
    let mut counts: Vec<usize> = ratio.iter().map(|r| batch_size * r / total).collect();
    let mut remainder = batch_size - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..ratio.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse((batch_size * ratio[i]) % total));
    for i in order {
        if remainder == 0 {
            break;
        }
        counts[i] += 1;
        remainder -= 1;
    }
    Ok(counts)
}

/// Endless stream of batches. Each item is a list of `(source, index)` pairs;
/// every source is walked in a shuffled order that is reshuffled each time
/// it wraps around.
pub struct MixedBatches {
    counts: Vec<usize>,
    sizes: Vec<usize>,
    orders: Vec<Vec<usize>>,
    cursors: Vec<usize>,
    rng: ChaCha8Rng,
}

impl MixedBatches {
    pub fn new(source_sizes: &[usize], ratio: &[usize], batch_size: usize, seed: u64) -> Result<Self> {
        if source_sizes.len() != ratio.len() {
            return Err(Error::Config(format!(
                "{} sources but {} ratio components",
                source_sizes.len(),
                ratio.len()
            )));
        }
        if let Some(i) = source_sizes.iter().position(|s| *s == 0) {
            return Err(Error::Config(format!("mixing source {i} is empty")));
        }
        let counts = batch_counts(ratio, batch_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let orders = source_sizes
            .iter()
            .map(|&n| {
                let mut o: Vec<usize> = (0..n).collect();
                o.shuffle(&mut rng);
                o
            })
            .collect();
        Ok(MixedBatches {
            counts,
            sizes: source_sizes.to_vec(),
            orders,
            cursors: vec![0; source_sizes.len()],
            rng,
        })
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }
}

impl Iterator for MixedBatches {
    type Item = Vec<(usize, usize)>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut batch = Vec::with_capacity(self.counts.iter().sum());
        for source in 0..self.counts.len() {
            for _ in 0..self.counts[source] {
                if self.cursors[source] == self.sizes[source] {
                    self.orders[source].shuffle(&mut self.rng);
                    self.cursors[source] = 0;
                }
                batch.push((source, self.orders[source][self.cursors[source]]));
                self.cursors[source] += 1;
            }
        }
        Some(batch)
    }
}
