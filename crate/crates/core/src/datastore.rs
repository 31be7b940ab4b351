//! Exact kNN key-value store over fixed-dimension f32 vectors.
//!
//! Keys are stored contiguously row-major. Queries return the exact top-k
//! under squared-L2 distance, accumulated in f64 in ascending dimension
//! order, with ties broken by ascending insertion index. This makes query
//! results bit-identical to a naive linear-scan oracle.

use alloc::collections::BTreeMap;
use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

/// Identifies the corpus position an entry was extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Origin {
    pub sentence: u32,
    pub position: u32,
}

impl Origin {
    pub fn new(sentence: u32, position: u32) -> Self {
        Self { sentence, position }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.sentence, self.position)
    }
}

/// One extracted (key, value, origin) record, as produced by key extraction
/// and consumed by datastore ingestion and neighbor-cache precomputation.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyRecord {
    pub origin: Origin,
    pub key: Vec<f32>,
    pub value: u32,
}

/// A single retrieved neighbor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Exact squared-L2 distance to the query (no square root).
    pub distance: f64,
    /// The ground-truth token stored with the key.
    pub token: u32,
    pub origin: Origin,
}

/// Result of one kNN query: neighbors sorted ascending by
/// (distance, insertion index).
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub neighbors: Vec<Neighbor>,
    /// The requested neighbor count (the result may be shorter when the
    /// store holds fewer eligible entries).
    pub k: usize,
}

impl NeighborSet {
    /// (distance, token) pairs in neighbor order, the raw material of the
    /// teacher distribution.
    pub fn pairs(&self) -> Vec<(f64, u32)> {
        self.neighbors.iter().map(|n| (n.distance, n.token)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatastoreError {
    ZeroDim,
    VocabTooSmall { vocab_size: u32 },
    DimMismatch { expected: usize, got: usize },
    ValueOutOfRange { value: u32, vocab_size: u32 },
    DuplicateOrigin(Origin),
    NonFiniteKey,
    NonFiniteQuery,
    ZeroK,
    EmptyDatastore,
    ExcludesLengthMismatch { queries: usize, excludes: usize },
}

impl fmt::Display for DatastoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ZeroDim => write!(f, "datastore dimension must be at least 1"),
            Self::VocabTooSmall { vocab_size } => {
                write!(f, "vocab size must be at least 2, got {vocab_size}")
            }
            Self::DimMismatch { expected, got } => {
                write!(f, "vector length {got} does not match datastore dim {expected}")
            }
            Self::ValueOutOfRange { value, vocab_size } => {
                write!(f, "value {value} out of vocab range (vocab size {vocab_size})")
            }
            Self::DuplicateOrigin(o) => write!(f, "duplicate origin {o}"),
            Self::NonFiniteKey => write!(f, "key contains a non-finite component"),
            Self::NonFiniteQuery => write!(f, "query contains a non-finite component"),
            Self::ZeroK => write!(f, "k must be at least 1"),
            Self::EmptyDatastore => write!(f, "cannot query an empty datastore"),
            Self::ExcludesLengthMismatch { queries, excludes } => {
                write!(f, "{excludes} exclusions provided for {queries} queries")
            }
        }
    }
}

impl core::error::Error for DatastoreError {}

/// Exact flat kNN index mapping context-vector keys to token values.
///
/// Entry order is insertion order and is stable; the entry count equals the
/// number of target tokens ingested.
#[derive(Debug, Clone)]
pub struct Datastore {
    dim: usize,
    vocab_size: u32,
    keys: Vec<f32>,
    values: Vec<u32>,
    origins: Vec<Origin>,
    origin_index: BTreeMap<Origin, u32>,
}

/// Heap candidate ordered by (distance, insertion index); the heap keeps the
/// current worst at the top.
struct Candidate {
    dist: f64,
    idx: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.idx.cmp(&other.idx))
    }
}

impl Datastore {
    /// Create an empty datastore with fixed dimension and vocab size.
    pub fn new(dim: usize, vocab_size: u32) -> Result<Self, DatastoreError> {
        if dim == 0 {
            return Err(DatastoreError::ZeroDim);
        }
        if vocab_size < 2 {
            return Err(DatastoreError::VocabTooSmall { vocab_size });
        }
        Ok(Self {
            dim,
            vocab_size,
            keys: Vec::new(),
            values: Vec::new(),
            origins: Vec::new(),
            origin_index: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Key vector of the entry at `idx` (insertion order).
    pub fn key(&self, idx: usize) -> &[f32] {
        &self.keys[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn value(&self, idx: usize) -> u32 {
        self.values[idx]
    }

    pub fn origin(&self, idx: usize) -> Origin {
        self.origins[idx]
    }

    /// Append one entry. The insertion index of the new entry equals the
    /// previous entry count.
    pub fn add_entry(
        &mut self,
        key: &[f32],
        value: u32,
        origin: Origin,
    ) -> Result<(), DatastoreError> {
        if key.len() != self.dim {
            return Err(DatastoreError::DimMismatch { expected: self.dim, got: key.len() });
        }
        if !key.iter().all(|x| x.is_finite()) {
            return Err(DatastoreError::NonFiniteKey);
        }
        if value >= self.vocab_size {
            return Err(DatastoreError::ValueOutOfRange { value, vocab_size: self.vocab_size });
        }
        if self.origin_index.contains_key(&origin) {
            return Err(DatastoreError::DuplicateOrigin(origin));
        }
        let idx = self.values.len() as u32;
        self.origin_index.insert(origin, idx);
        self.keys.extend_from_slice(key);
        self.values.push(value);
        self.origins.push(origin);
        Ok(())
    }

    /// Ingest a stream of extracted key records in order.
    pub fn ingest(&mut self, records: &[KeyRecord]) -> Result<(), DatastoreError> {
        for r in records {
            self.add_entry(&r.key, r.value, r.origin)?;
        }
        Ok(())
    }

    /// Exact top-k by squared-L2 distance, excluding at most the one entry
    /// whose origin equals `exclude`. Ties are broken by ascending insertion
    /// index.
    pub fn query(
        &self,
        q: &[f32],
        k: usize,
        exclude: Option<Origin>,
    ) -> Result<NeighborSet, DatastoreError> {
        if q.len() != self.dim {
            return Err(DatastoreError::DimMismatch { expected: self.dim, got: q.len() });
        }
        if !q.iter().all(|x| x.is_finite()) {
            return Err(DatastoreError::NonFiniteQuery);
        }
        if k == 0 {
            return Err(DatastoreError::ZeroK);
        }
        if self.is_empty() {
            return Err(DatastoreError::EmptyDatastore);
        }

        let excluded_idx: Option<u32> = exclude.and_then(|o| self.origin_index.get(&o).copied());

        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        let n = self.len();
        let dim = self.dim;

        // Blocks of four entries share one pass; each entry keeps its own
        // accumulator so per-entry arithmetic is identical to a scalar scan.
        let mut base = 0usize;
        while base + 4 <= n {
            let rows = &self.keys[base * dim..(base + 4) * dim];
            let (mut d0, mut d1, mut d2, mut d3) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
            for (i, &qv) in q.iter().enumerate() {
                let qv = qv as f64;
                let t0 = qv - rows[i] as f64;
                let t1 = qv - rows[dim + i] as f64;
                let t2 = qv - rows[2 * dim + i] as f64;
                let t3 = qv - rows[3 * dim + i] as f64;
                d0 += t0 * t0;
                d1 += t1 * t1;
                d2 += t2 * t2;
                d3 += t3 * t3;
            }
            for (j, d) in [d0, d1, d2, d3].into_iter().enumerate() {
                Self::offer(&mut heap, k, d, (base + j) as u32, excluded_idx);
            }
            base += 4;
        }
        for idx in base..n {
            let row = self.key(idx);
            let mut d = 0.0f64;
            for (i, &qv) in q.iter().enumerate() {
                let t = qv as f64 - row[i] as f64;
                d += t * t;
            }
            Self::offer(&mut heap, k, d, idx as u32, excluded_idx);
        }

        let mut cands: Vec<Candidate> = heap.into_vec();
        cands.sort_unstable();
        let neighbors = cands
            .into_iter()
            .map(|c| Neighbor {
                distance: c.dist,
                token: self.values[c.idx as usize],
                origin: self.origins[c.idx as usize],
            })
            .collect();
        Ok(NeighborSet { neighbors, k })
    }

    #[inline]
    fn offer(
        heap: &mut BinaryHeap<Candidate>,
        k: usize,
        dist: f64,
        idx: u32,
        excluded: Option<u32>,
    ) {
        if excluded == Some(idx) {
            return;
        }
        let cand = Candidate { dist, idx };
        if heap.len() < k {
            heap.push(cand);
        } else if cand < *heap.peek().expect("heap is non-empty") {
            heap.pop();
            heap.push(cand);
        }
    }

    /// Batched queries; elementwise identical to repeated [`Datastore::query`]
    /// calls, in order. `excludes`, when given, must match `queries` in length.
    pub fn query_batch(
        &self,
        queries: &[Vec<f32>],
        k: usize,
        excludes: Option<&[Option<Origin>]>,
    ) -> Result<Vec<NeighborSet>, DatastoreError> {
        if let Some(ex) = excludes {
            if ex.len() != queries.len() {
                return Err(DatastoreError::ExcludesLengthMismatch {
                    queries: queries.len(),
                    excludes: ex.len(),
                });
            }
        }
        let mut out = Vec::with_capacity(queries.len());
        for (i, q) in queries.iter().enumerate() {
            let exclude = excludes.and_then(|ex| ex[i]);
            out.push(self.query(q, k, exclude)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_entry_store() -> Datastore {
        let mut s = Datastore::new(2, 4).unwrap();
        s.add_entry(&[0.0, 0.0], 1, Origin::new(0, 0)).unwrap();
        s.add_entry(&[3.0, 4.0], 2, Origin::new(0, 1)).unwrap();
        s
    }

    #[test]
    fn build_empty() {
        let s = Datastore::new(4, 10).unwrap();
        assert_eq!(s.len(), 0);
        assert_eq!(s.dim(), 4);
        assert_eq!(s.vocab_size(), 10);
    }

    #[test]
    fn build_rejects_degenerate_inputs() {
        assert_eq!(Datastore::new(0, 10).unwrap_err(), DatastoreError::ZeroDim);
        assert_eq!(
            Datastore::new(4, 1).unwrap_err(),
            DatastoreError::VocabTooSmall { vocab_size: 1 }
        );
    }

    #[test]
    fn self_retrieval_distance_zero() {
        let mut s = Datastore::new(3, 5).unwrap();
        s.add_entry(&[1.0, -2.0, 0.5], 3, Origin::new(7, 2)).unwrap();
        assert_eq!(s.len(), 1);
        let ns = s.query(&[1.0, -2.0, 0.5], 1, None).unwrap();
        assert_eq!(ns.neighbors.len(), 1);
        assert_eq!(ns.neighbors[0].distance, 0.0);
        assert_eq!(ns.neighbors[0].token, 3);
        assert_eq!(ns.neighbors[0].origin, Origin::new(7, 2));
    }

    #[test]
    fn add_entry_rejects_bad_inputs() {
        let mut s = Datastore::new(2, 4).unwrap();
        assert_eq!(
            s.add_entry(&[1.0], 0, Origin::new(0, 0)).unwrap_err(),
            DatastoreError::DimMismatch { expected: 2, got: 1 }
        );
        assert_eq!(
            s.add_entry(&[1.0, 2.0], 4, Origin::new(0, 0)).unwrap_err(),
            DatastoreError::ValueOutOfRange { value: 4, vocab_size: 4 }
        );
        assert_eq!(
            s.add_entry(&[1.0, f32::NAN], 0, Origin::new(0, 0)).unwrap_err(),
            DatastoreError::NonFiniteKey
        );
        s.add_entry(&[1.0, 2.0], 0, Origin::new(0, 0)).unwrap();
        assert_eq!(
            s.add_entry(&[3.0, 4.0], 1, Origin::new(0, 0)).unwrap_err(),
            DatastoreError::DuplicateOrigin(Origin::new(0, 0))
        );
        assert_eq!(s.len(), 1);
        // the rejected insert must not disturb the origin index
        s.add_entry(&[5.0, 6.0], 2, Origin::new(0, 1)).unwrap();
        let ns = s.query(&[1.0, 2.0], 2, Some(Origin::new(0, 0))).unwrap();
        assert_eq!(ns.neighbors.len(), 1);
        assert_eq!(ns.neighbors[0].token, 2);
    }

    #[test]
    fn hand_computed_distances() {
        let s = two_entry_store();
        let ns = s.query(&[0.0, 0.0], 2, None).unwrap();
        assert_eq!(ns.neighbors.len(), 2);
        assert_eq!(ns.neighbors[0].distance, 0.0);
        assert_eq!(ns.neighbors[0].token, 1);
        assert_eq!(ns.neighbors[1].distance, 25.0);
        assert_eq!(ns.neighbors[1].token, 2);
    }

    #[test]
    fn exclusion_removes_exactly_one() {
        let s = two_entry_store();
        let ns = s.query(&[0.0, 0.0], 2, Some(Origin::new(0, 0))).unwrap();
        assert_eq!(ns.neighbors.len(), 1);
        assert_eq!(ns.neighbors[0].distance, 25.0);
        assert_eq!(ns.neighbors[0].token, 2);
        // excluding an origin that is not present changes nothing
        let ns = s.query(&[0.0, 0.0], 2, Some(Origin::new(9, 9))).unwrap();
        assert_eq!(ns.neighbors.len(), 2);
    }

    #[test]
    fn query_rejects_bad_inputs() {
        let s = two_entry_store();
        assert_eq!(
            s.query(&[0.0], 1, None).unwrap_err(),
            DatastoreError::DimMismatch { expected: 2, got: 1 }
        );
        assert_eq!(s.query(&[0.0, 0.0], 0, None).unwrap_err(), DatastoreError::ZeroK);
        let empty = Datastore::new(2, 4).unwrap();
        assert_eq!(empty.query(&[0.0, 0.0], 1, None).unwrap_err(), DatastoreError::EmptyDatastore);
    }

    #[test]
    fn all_entries_self_retrievable() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dim = 6;
        let mut s = Datastore::new(dim, 30).unwrap();
        let mut keys = vec![];
        for i in 0..1000u32 {
            let key: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            s.add_entry(&key, i % 30, Origin::new(i / 16, i % 16)).unwrap();
            keys.push(key);
        }
        for (i, key) in keys.iter().enumerate() {
            let ns = s.query(key, 1, None).unwrap();
            assert_eq!(ns.neighbors[0].distance, 0.0, "entry {i} not self-retrieved");
            assert_eq!(ns.neighbors[0].origin, s.origin(i));
        }
    }

    /// Straight-line oracle: score every entry, sort by (distance, index).
    fn brute_force(s: &Datastore, q: &[f32], k: usize, exclude: Option<Origin>) -> Vec<(f64, u32)> {
        let mut scored: Vec<(f64, u32)> = (0..s.len())
            .filter(|&i| exclude != Some(s.origin(i)))
            .map(|i| {
                let mut d = 0.0f64;
                for (a, b) in q.iter().zip(s.key(i)) {
                    let t = *a as f64 - *b as f64;
                    d += t * t;
                }
                (d, i as u32)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.truncate(k);
        scored
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let dim = 8;
        let mut s = Datastore::new(dim, 50).unwrap();
        for i in 0..3000u32 {
            // coarse grid so exact distance ties actually occur
            let key: Vec<f32> = (0..dim).map(|_| rng.random_range(0..4) as f32).collect();
            s.add_entry(&key, i % 50, Origin::new(i, 0)).unwrap();
        }
        for _ in 0..50 {
            let q: Vec<f32> = (0..dim).map(|_| rng.random_range(0..4) as f32).collect();
            let expected = brute_force(&s, &q, 10, None);
            let got = s.query(&q, 10, None).unwrap();
            assert_eq!(got.neighbors.len(), expected.len());
            for (n, (d, idx)) in got.neighbors.iter().zip(&expected) {
                assert_eq!(n.distance, *d);
                assert_eq!(n.origin, s.origin(*idx as usize));
            }
        }
    }

    #[test]
    fn exclusion_promotes_next_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 4;
        let mut s = Datastore::new(dim, 10).unwrap();
        for i in 0..200u32 {
            let key: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            s.add_entry(&key, i % 10, Origin::new(i, 1)).unwrap();
        }
        let q: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let unexcluded = s.query(&q, 6, None).unwrap();
        let victim = unexcluded.neighbors[2].origin;
        let excluded = s.query(&q, 5, Some(victim)).unwrap();
        let manual: Vec<_> =
            unexcluded.neighbors.iter().filter(|n| n.origin != victim).take(5).cloned().collect();
        assert_eq!(excluded.neighbors, manual);
    }

    #[test]
    fn batch_equals_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dim = 5;
        let mut s = Datastore::new(dim, 12).unwrap();
        for i in 0..500u32 {
            let key: Vec<f32> = (0..dim).map(|_| rng.random_range(-2.0f32..2.0)).collect();
            s.add_entry(&key, i % 12, Origin::new(i, 0)).unwrap();
        }
        let queries: Vec<Vec<f32>> =
            (0..100).map(|_| (0..dim).map(|_| rng.random_range(-2.0f32..2.0)).collect()).collect();
        let batched = s.query_batch(&queries, 7, None).unwrap();
        for (q, b) in queries.iter().zip(&batched) {
            assert_eq!(*b, s.query(q, 7, None).unwrap());
        }
        assert!(s.query_batch(&[], 3, None).unwrap().is_empty());
        let single = s.query_batch(&queries[..1], 7, None).unwrap();
        assert_eq!(single[0], s.query(&queries[0], 7, None).unwrap());
    }

    #[test]
    fn distances_non_decreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dim = 3;
        let mut s = Datastore::new(dim, 8).unwrap();
        for i in 0..300u32 {
            let key: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            s.add_entry(&key, i % 8, Origin::new(i, 0)).unwrap();
        }
        let q: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let ns = s.query(&q, 20, None).unwrap();
        for w in ns.neighbors.windows(2) {
            assert!(w[0].distance <= w[1].distance);
        }
    }
}
