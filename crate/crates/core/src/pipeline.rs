//! Skip-gram pairs with same-market negative samples.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::data::HotelCatalog;
use crate::rng::{self, Rng};

/// A positive (target, context) pair and its negatives, as catalog positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingPair {
    pub target: usize,
    pub context: usize,
    pub negatives: Vec<usize>,
}

/// All (target, context) pairs within `window` positions of each other.
///
/// Emission order is position-major, offset-minor (`j` ascending around `i`).
/// Pairs of a hotel with itself are dropped.
pub fn make_pairs<T: PartialEq + Clone>(clicks: &[T], window: usize) -> Vec<(T, T)> {
    let mut pairs = Vec::new();
    for (i, target) in clicks.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(clicks.len().saturating_sub(1));
        for (j, context) in clicks.iter().enumerate().take(hi + 1).skip(lo) {
            if j != i && context != target {
                pairs.push((target.clone(), context.clone()));
            }
        }
    }
    pairs
}

/// `n_neg` hotels drawn uniformly with replacement from the target's market,
/// excluding the target and the context. `None` when nothing is eligible.
pub fn sample_negatives(
    catalog: &HotelCatalog,
    target: usize,
    context: usize,
    n_neg: usize,
    rng: &mut Rng,
) -> Option<Vec<usize>> {
    let market = catalog.market_of(target);
    let members = catalog.market_members(market);

    let mut excluded = vec![catalog.slot_in_market(target)];
    if context != target && catalog.market_of(context) == market {
        excluded.push(catalog.slot_in_market(context));
    }
    excluded.sort_unstable();

    let eligible = members.len().checked_sub(excluded.len()).filter(|&n| n > 0)?;
    let negatives = (0..n_neg)
        .map(|_| {
            let mut slot = rng.random_range(0..eligible);
            for &x in &excluded {
                if slot >= x {
                    slot += 1;
                }
            }
            members[slot]
        })
        .collect();
    Some(negatives)
}

/// Lazily produced training pairs for one epoch.
///
/// Session order is shuffled by `(seed, epoch)`; negatives come from a
/// separate stream so the two never perturb each other.
pub struct EpochStream<'a> {
    sessions: &'a [Vec<usize>],
    catalog: &'a HotelCatalog,
    order: Vec<usize>,
    next_session: usize,
    pending: std::vec::IntoIter<(usize, usize)>,
    window: usize,
    n_neg: usize,
    rng: Rng,
    skipped: usize,
}

impl EpochStream<'_> {
    /// Pairs dropped so far because their market had no eligible negative.
    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

impl Iterator for EpochStream<'_> {
    type Item = TrainingPair;

    fn next(&mut self) -> Option<TrainingPair> {
        loop {
            for (target, context) in self.pending.by_ref() {
                match sample_negatives(self.catalog, target, context, self.n_neg, &mut self.rng) {
                    Some(negatives) => {
                        return Some(TrainingPair {
                            target,
                            context,
                            negatives,
                        })
                    }
                    None => self.skipped += 1,
                }
            }
            let &s = self.order.get(self.next_session)?;
            self.next_session += 1;
            self.pending = make_pairs(&self.sessions[s], self.window).into_iter();
        }
    }
}

pub fn build_epoch_stream<'a>(
    sessions: &'a [Vec<usize>],
    catalog: &'a HotelCatalog,
    window: usize,
    n_neg: usize,
    seed: u64,
    epoch: u64,
) -> EpochStream<'a> {
    let mut order: Vec<usize> = (0..sessions.len()).collect();
    order.shuffle(&mut rng::substream(seed, "shuffle", epoch));
    EpochStream {
        sessions,
        catalog,
        order,
        next_session: 0,
        pending: Vec::new().into_iter(),
        window,
        n_neg,
        rng: rng::substream(seed, "negatives", epoch),
        skipped: 0,
    }
}
