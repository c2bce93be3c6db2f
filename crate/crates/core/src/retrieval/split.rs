use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RetrievalError;

const RATIO_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub test: f64,
    pub validation: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            test: 0.1,
            validation: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, test: f64, validation: f64) -> Result<Self, RetrievalError> {
        let r = Self {
            train,
            test,
            validation,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        let parts = [self.train, self.test, self.validation];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(RetrievalError::InvalidParameter(format!(
                "split ratios must be non-negative, got {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > RATIO_TOLERANCE {
            return Err(RetrievalError::InvalidParameter(format!(
                "split ratios must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }

    /// Part sizes for `n` items by largest-remainder rounding. Ties in the
    /// fractional part go to the earlier part (train, test, validation).
    ///
    /// Quotas are compared in integer units of 1e-9 items, so ratios written
    /// with up to nine decimals round as they would in exact arithmetic
    /// (0.69 * 60 is 41.4, not 41.3999...).
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        const UNIT: u128 = 1_000_000_000;
        let quotas = [self.train, self.test, self.validation]
            .map(|r| (r * n as f64 * UNIT as f64).round().max(0.0) as u128);
        let mut sizes = quotas.map(|q| (q / UNIT) as usize);
        let assigned: usize = sizes.iter().sum();
        let mut order = [0, 1, 2];
        order.sort_by(|&a, &b| (quotas[b] % UNIT).cmp(&(quotas[a] % UNIT)).then(a.cmp(&b)));
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            sizes[i] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub test: Vec<T>,
    pub validation: Vec<T>,
    pub ratios: SplitRatios,
}

/// Shuffles with `ChaCha8Rng::seed_from_u64(seed)` and partitions in the
/// order train, test, validation.
pub fn split_dataset<T>(
    mut items: Vec<T>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetSplit<T>, RetrievalError> {
    ratios.validate()?;
    let [n_train, n_test, _] = ratios.sizes(items.len());
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let validation = items.split_off(n_train + n_test);
    let test = items.split_off(n_train);
    Ok(DatasetSplit {
        train: items,
        test,
        validation,
        ratios,
    })
}
