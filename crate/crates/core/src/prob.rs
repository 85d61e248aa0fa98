//! Finite categorical distributions and the handful of information measures
//! the codec and the audit need.
//!
//! All entropies and divergences are in bits. A [`Categorical`] never stores
//! zero-mass entries: anything below [`PRUNE_THRESHOLD`] is dropped at
//! construction and the remainder renormalized, so `log2` is always finite.

use std::cmp::Ordering;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities below this are treated as zero.
pub const PRUNE_THRESHOLD: f64 = 1e-12;

/// Allowed deviation of the input mass from 1 for [`Categorical::new`].
const INPUT_SUM_TOLERANCE: f64 = 1e-6;

/// Mass deviation below which a distribution counts as already normalized.
const NORMALIZED_SLACK: f64 = 1e-12;

/// A finite distribution over token ids, sorted by id, strictly positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CategoricalRepr", into = "CategoricalRepr")]
pub struct Categorical {
    ids: Vec<u32>,
    probs: Vec<f64>,
}

/// Wire form `{"ids": [...], "probs": [...]}`.
#[derive(Serialize, Deserialize)]
struct CategoricalRepr {
    ids: Vec<u32>,
    probs: Vec<f64>,
}

impl TryFrom<CategoricalRepr> for Categorical {
    type Error = Error;

    fn try_from(repr: CategoricalRepr) -> Result<Self> {
        Categorical::new(repr.ids, repr.probs)
    }
}

impl From<Categorical> for CategoricalRepr {
    fn from(d: Categorical) -> Self {
        CategoricalRepr {
            ids: d.ids,
            probs: d.probs,
        }
    }
}

impl Categorical {
    /// Builds a distribution from probabilities that already sum to one
    /// (up to `1e-6`). Ids must be unique; order does not matter.
    pub fn new(ids: Vec<u32>, probs: Vec<f64>) -> Result<Self> {
        let total = validate_weights(&ids, &probs)?;
        if (total - 1.0).abs() > INPUT_SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Self::normalized(ids, probs, total)
    }

    /// Builds a distribution from arbitrary non-negative weights.
    pub fn from_weights(ids: Vec<u32>, weights: Vec<f64>) -> Result<Self> {
        let total = validate_weights(&ids, &weights)?;
        if total <= 0.0 {
            return Err(Error::InvalidDistribution("total weight is zero".into()));
        }
        Self::normalized(ids, weights, total)
    }

    /// Uniform over ids `0..k`.
    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        let p = 1.0 / k as f64;
        Ok(Categorical {
            ids: (0..k as u32).collect(),
            probs: vec![p; k],
        })
    }

    pub fn point(id: u32) -> Self {
        Categorical {
            ids: vec![id],
            probs: vec![1.0],
        }
    }

    /// Already-normalized input passes through bit-for-bit, so a
    /// distribution survives a serialization round trip unchanged.
    fn normalized(ids: Vec<u32>, weights: Vec<f64>, total: f64) -> Result<Self> {
        let scale = if (total - 1.0).abs() <= NORMALIZED_SLACK {
            1.0
        } else {
            total
        };
        let mut pairs: Vec<(u32, f64)> = ids
            .into_iter()
            .zip(weights)
            .map(|(id, w)| (id, w / scale))
            .filter(|&(_, p)| p >= PRUNE_THRESHOLD)
            .collect();
        if pairs.is_empty() {
            return Err(Error::InvalidDistribution(
                "no entry survives pruning".into(),
            ));
        }
        pairs.sort_unstable_by_key(|&(id, _)| id);
        let kept: f64 = pairs.iter().map(|&(_, p)| p).sum();
        let (ids, mut probs): (Vec<u32>, Vec<f64>) = pairs.into_iter().unzip();
        if (kept - 1.0).abs() > NORMALIZED_SLACK {
            probs.iter_mut().for_each(|p| *p /= kept);
        }
        Ok(Categorical { ids, probs })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.ids.iter().copied().zip(self.probs.iter().copied())
    }

    /// Position of `id` in the support, if present.
    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    /// Mass of `id`; zero when outside the support.
    pub fn prob(&self, id: u32) -> f64 {
        self.index_of(id).map_or(0.0, |i| self.probs[i])
    }

    /// Most probable id, lowest id on ties.
    pub fn mode(&self) -> u32 {
        let mut best = 0;
        for i in 1..self.probs.len() {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        self.ids[best]
    }

    pub fn entropy(&self) -> f64 {
        entropy(self)
    }
}

fn validate_weights(ids: &[u32], weights: &[f64]) -> Result<f64> {
    if ids.len() != weights.len() {
        return Err(Error::InvalidDistribution(format!(
            "{} ids but {} probabilities",
            ids.len(),
            weights.len()
        )));
    }
    if ids.is_empty() {
        return Err(Error::InvalidDistribution("empty support".into()));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::InvalidDistribution(format!("bad weight {w}")));
    }
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidDistribution("duplicate token id".into()));
    }
    Ok(weights.iter().sum())
}

/// Shannon entropy in bits.
pub fn entropy(d: &Categorical) -> f64 {
    let h: f64 = d.probs.iter().map(|&p| -p * p.log2()).sum();
    h.max(0.0)
}

/// `KL(p || q)` in bits. Fails with `kl-undefined` when `p` puts mass outside `q`'s support.
pub fn kl(p: &Categorical, q: &Categorical) -> Result<f64> {
    let mut total = 0.0;
    let mut j = 0;
    for (id, pp) in p.iter() {
        while j < q.ids.len() && q.ids[j] < id {
            j += 1;
        }
        if j == q.ids.len() || q.ids[j] != id {
            return Err(Error::KlUndefined { token: id, p: pp });
        }
        total += pp * (pp / q.probs[j]).log2();
    }
    Ok(total)
}

/// Total variation style L1 distance `sum |p - q|` over the union of supports.
pub fn l1_distance(p: &Categorical, q: &Categorical) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    while i < p.len() || j < q.len() {
        let next_p = p.ids.get(i).copied();
        let next_q = q.ids.get(j).copied();
        match (next_p, next_q) {
            (Some(a), Some(b)) if a == b => {
                total += (p.probs[i] - q.probs[j]).abs();
                i += 1;
                j += 1;
            }
            (Some(a), Some(b)) if a < b => {
                total += p.probs[i];
                i += 1;
            }
            (Some(_), None) => {
                total += p.probs[i];
                i += 1;
            }
            _ => {
                total += q.probs[j];
                j += 1;
            }
        }
    }
    total
}

/// Deterministic random source.
///
/// ChaCha20 keystream (a counter-based generator) seeded through
/// `ChaCha20Rng::seed_from_u64`, so a given seed yields the same stream on
/// every platform. Floats take the top 53 bits of a `u64`.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha20Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_bit(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }
}

/// Inverse-CDF draw from `d`.
pub fn sample(d: &Categorical, rng: &mut Rng) -> u32 {
    let u = rng.next_f64();
    let mut acc = 0.0;
    for (id, p) in d.iter() {
        acc += p;
        if u < acc {
            return id;
        }
    }
    // u landed in the rounding gap above the last cumulative sum
    *d.ids.last().expect("non-empty support")
}

/// Orders by probability descending, then id ascending.
pub(crate) fn by_mass_desc(a: &(u32, f64), b: &(u32, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}
