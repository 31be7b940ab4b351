//! Non-parametric teacher distributions from retrieval results.
//!
//! A neighbor set's squared-L2 distances are converted into a probability
//! distribution over the vocabulary by a temperature softmax of the negative
//! distances, aggregating mass over repeated tokens. The per-position
//! neighbor cache stores raw (distance, token) pairs so the temperature can
//! be swept without re-running retrieval.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::datastore::{Datastore, DatastoreError, KeyRecord, Origin};

/// Softmax temperature, strictly positive and finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self, TeacherError> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(TeacherError::InvalidTemperature(tau));
        }
        Ok(Self(tau))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Teacher probability mass over at most k vocabulary items.
///
/// Support entries are sorted by token id, probabilities are strictly
/// positive and sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDistribution {
    support: Vec<(u32, f64)>,
    vocab_size: u32,
}

impl SparseDistribution {
    pub fn support(&self) -> &[(u32, f64)] {
        &self.support
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    /// Probability of `token`, zero when outside the support.
    pub fn prob(&self, token: u32) -> f64 {
        self.support
            .binary_search_by_key(&token, |&(t, _)| t)
            .map(|i| self.support[i].1)
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TeacherError {
    InvalidTemperature(f64),
    EmptyNeighborSet,
    NonFiniteDistance(f64),
    TokenOutOfRange { token: u32, vocab_size: u32 },
    Retrieval(DatastoreError),
    DuplicateTraceOrigin(Origin),
}

impl fmt::Display for TeacherError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidTemperature(t) => {
                write!(f, "temperature must be positive and finite, got {t}")
            }
            Self::EmptyNeighborSet => {
                write!(f, "cannot build a teacher from an empty neighbor set")
            }
            Self::NonFiniteDistance(d) => write!(f, "non-finite neighbor distance {d}"),
            Self::TokenOutOfRange { token, vocab_size } => {
                write!(f, "neighbor token {token} out of vocab range {vocab_size}")
            }
            Self::Retrieval(e) => write!(f, "retrieval failed: {e}"),
            Self::DuplicateTraceOrigin(o) => write!(f, "duplicate trace origin {o}"),
        }
    }
}

impl core::error::Error for TeacherError {}

impl From<DatastoreError> for TeacherError {
    fn from(e: DatastoreError) -> Self {
        Self::Retrieval(e)
    }
}

/// Build the teacher distribution p(y) ∝ Σ_j 1[y = v_j] · exp(−d_j / τ)
/// from (distance, token) pairs.
///
/// The exponentials are shifted by the minimum distance before
/// exponentiation, so arbitrarily large distances cannot underflow the
/// entire distribution.
pub fn teacher_distribution(
    neighbors: &[(f64, u32)],
    tau: Temperature,
    vocab_size: u32,
) -> Result<SparseDistribution, TeacherError> {
    if neighbors.is_empty() {
        return Err(TeacherError::EmptyNeighborSet);
    }
    let mut d_min = f64::INFINITY;
    for &(d, token) in neighbors {
        if !d.is_finite() {
            return Err(TeacherError::NonFiniteDistance(d));
        }
        if token >= vocab_size {
            return Err(TeacherError::TokenOutOfRange { token, vocab_size });
        }
        if d < d_min {
            d_min = d;
        }
    }
    let mut mass: BTreeMap<u32, f64> = BTreeMap::new();
    for &(d, token) in neighbors {
        let w = libm::exp(-(d - d_min) / tau.get());
        *mass.entry(token).or_insert(0.0) += w;
    }
    let total: f64 = mass.values().sum();
    let support: Vec<(u32, f64)> =
        mass.into_iter().filter(|&(_, w)| w > 0.0).map(|(t, w)| (t, w / total)).collect();
    Ok(SparseDistribution { support, vocab_size })
}

/// Shannon entropy in nats; exactly 0 for a point mass.
pub fn entropy(dist: &SparseDistribution) -> f64 {
    let mut h = 0.0;
    for &(_, p) in &dist.support {
        h -= p * libm::log(p);
    }
    h.max(0.0)
}

/// Per-position retrieval results for a whole corpus, keyed by origin.
///
/// Stores raw (distance, token) pairs rather than distributions: the
/// temperature is a sweep variable and must be changeable without
/// re-running retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborCache {
    k: usize,
    store_checksum: u32,
    positions: BTreeMap<Origin, Vec<(f64, u32)>>,
}

impl NeighborCache {
    /// Assemble a cache from parts (used by deserialization and by parallel
    /// builders; `positions` must hold per-origin (distance, token) pairs).
    pub fn from_parts(
        k: usize,
        store_checksum: u32,
        positions: BTreeMap<Origin, Vec<(f64, u32)>>,
    ) -> Self {
        Self { k, store_checksum, positions }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn store_checksum(&self) -> u32 {
        self.store_checksum
    }

    pub fn set_store_checksum(&mut self, checksum: u32) {
        self.store_checksum = checksum;
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn get(&self, origin: Origin) -> Option<&[(f64, u32)]> {
        self.positions.get(&origin).map(|v| v.as_slice())
    }

    /// Positions in ascending origin order.
    pub fn iter(&self) -> impl Iterator<Item = (Origin, &[(f64, u32)])> {
        self.positions.iter().map(|(o, v)| (*o, v.as_slice()))
    }
}

/// Run kNN search for every extracted position up front, so training can
/// look neighbors up instead of querying the datastore.
///
/// With `self_exclude` on, a position's own datastore entry never appears
/// among its neighbors.
pub fn precompute_neighbor_cache(
    store: &Datastore,
    traces: &[KeyRecord],
    k: usize,
    self_exclude: bool,
) -> Result<NeighborCache, TeacherError> {
    let mut positions: BTreeMap<Origin, Vec<(f64, u32)>> = BTreeMap::new();
    for rec in traces {
        let exclude = if self_exclude { Some(rec.origin) } else { None };
        let ns = store.query(&rec.key, k, exclude)?;
        if positions.insert(rec.origin, ns.pairs()).is_some() {
            return Err(TeacherError::DuplicateTraceOrigin(rec.origin));
        }
    }
    Ok(NeighborCache { k, store_checksum: 0, positions })
}
