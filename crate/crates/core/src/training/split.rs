use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fractions used to partition ground motions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    /// Share of GMs kept for training plus validation; the rest is the test set.
    pub train_pool: f64,
    /// Share of the training pool moved to validation (floored, at least one GM).
    pub val_of_pool: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train_pool: 0.8,
            val_of_pool: 0.1,
        }
    }
}

/// Disjoint ground-motion id sets. Every realization of a GM follows its id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_gm_ids: Vec<u32>,
    pub val_gm_ids: Vec<u32>,
    pub test_gm_ids: Vec<u32>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl SplitPlan {
    pub fn split_of(&self, gm_id: u32) -> Option<Split> {
        if self.train_gm_ids.binary_search(&gm_id).is_ok() {
            Some(Split::Train)
        } else if self.val_gm_ids.binary_search(&gm_id).is_ok() {
            Some(Split::Val)
        } else if self.test_gm_ids.binary_search(&gm_id).is_ok() {
            Some(Split::Test)
        } else {
            None
        }
    }

    pub fn train_pool_len(&self) -> usize {
        self.train_gm_ids.len() + self.val_gm_ids.len()
    }

    /// Fails if any id lands in more than one split.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self
            .train_gm_ids
            .iter()
            .chain(&self.val_gm_ids)
            .chain(&self.test_gm_ids)
        {
            if !seen.insert(*id) {
                return Err(Error::InvalidArgument(format!(
                    "ground motion {id} appears in more than one split"
                )));
            }
        }
        Ok(())
    }
}

pub fn split_by_ground_motion(gm_ids: &[u32], ratios: SplitRatios, seed: u64) -> Result<SplitPlan> {
    let unique: Vec<u32> = gm_ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let n = unique.len();
    let ok_ratio = |r: f64| r > 0.0 && r < 1.0;
    if !ok_ratio(ratios.train_pool) || !ok_ratio(ratios.val_of_pool) {
        return Err(Error::InvalidArgument(format!("split ratios out of (0, 1): {ratios:?}")));
    }
    let pool = (ratios.train_pool * n as f64).round() as usize;
    let n_val = ((ratios.val_of_pool * pool as f64).floor() as usize).max(1);
    if n < 3 || pool >= n || pool < n_val + 1 {
        return Err(Error::InvalidArgument(format!(
            "{n} ground motions cannot populate train, validation and test splits"
        )));
    }
    let mut order = unique;
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let sorted = |s: &[u32]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    let (test, rest) = order.split_at(n - pool);
    let (val, train) = rest.split_at(n_val);
    Ok(SplitPlan {
        train_gm_ids: sorted(train),
        val_gm_ids: sorted(val),
        test_gm_ids: sorted(test),
        seed,
    })
}
