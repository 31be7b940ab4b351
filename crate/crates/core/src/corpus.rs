//! Seeded synthetic parallel corpora.
//!
//! The target side is a token-wise substitution cipher of the source with
//! two optional twists: a fraction of source tokens is ambiguous (two target
//! renderings, picked by a deterministic context rule), and adjacent target
//! pairs can be swapped. Ambiguity is what gives the retrieval teacher
//! non-trivial mass on non-target tokens; a pure bijection would collapse it
//! to point masses.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Begin-of-sequence token on the target side.
pub const BOS_TOKEN: u32 = 0;
/// End-of-sequence token on the target side.
pub const EOS_TOKEN: u32 = 1;
/// First target content token; everything below is reserved.
pub const TGT_CONTENT_BASE: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTaskConfig {
    pub vocab_size_src: u32,
    pub vocab_size_tgt: u32,
    pub num_train: usize,
    pub num_dev: usize,
    pub num_test: usize,
    pub len_min: usize,
    pub len_max: usize,
    /// Drives the substitution map and the sentence sampling.
    pub seed: u64,
    /// Fraction of source token types with two context-dependent renderings.
    pub ambiguity_rate: f64,
    /// Swap adjacent target pairs after substitution.
    pub reorder: bool,
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        Self {
            vocab_size_src: 40,
            vocab_size_tgt: 52,
            num_train: 2000,
            num_dev: 200,
            num_test: 200,
            len_min: 4,
            len_max: 8,
            seed: 7,
            ambiguity_rate: 0.2,
            reorder: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorpusError {
    VocabTooSmall { needed: u32, available: u32 },
    EmptyLengthRange { len_min: usize, len_max: usize },
    InvalidAmbiguityRate(f64),
    SentenceSpaceExhausted,
    ZeroSentences,
}

impl fmt::Display for CorpusError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::VocabTooSmall { needed, available } => write!(
                f,
                "substitution map needs {needed} target content tokens but only {available} are available"
            ),
            Self::EmptyLengthRange { len_min, len_max } => {
                write!(f, "invalid sentence length range [{len_min}, {len_max}]")
            }
            Self::InvalidAmbiguityRate(r) => write!(f, "ambiguity rate {r} outside [0, 1]"),
            Self::SentenceSpaceExhausted => {
                write!(f, "cannot sample enough distinct source sentences")
            }
            Self::ZeroSentences => write!(f, "at least one training sentence is required"),
        }
    }
}

impl core::error::Error for CorpusError {}

/// One aligned sentence pair of token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
}

/// An ordered collection of parallel sentences.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
}

impl ParallelCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Total number of target tokens, the datastore-size accounting unit.
    pub fn total_target_tokens(&self) -> usize {
        self.pairs.iter().map(|p| p.tgt.len()).sum()
    }

    pub fn references(&self) -> Vec<Vec<u32>> {
        self.pairs.iter().map(|p| p.tgt.clone()).collect()
    }
}

/// Train/dev/test splits, disjoint by source sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplits {
    pub train: ParallelCorpus,
    pub dev: ParallelCorpus,
    pub test: ParallelCorpus,
}

/// The token-level substitution map underlying a task.
#[derive(Debug, Clone, PartialEq)]
struct SubstitutionMap {
    primary: Vec<u32>,
    /// Secondary rendering for ambiguous source types, `None` elsewhere.
    secondary: Vec<Option<u32>>,
}

impl SubstitutionMap {
    fn build(cfg: &SyntheticTaskConfig, rng: &mut ChaCha8Rng) -> Result<Self, CorpusError> {
        let v_src = cfg.vocab_size_src;
        let n_amb = libm::round(cfg.ambiguity_rate * v_src as f64) as u32;
        let needed = v_src + n_amb;
        let available = cfg.vocab_size_tgt.saturating_sub(TGT_CONTENT_BASE);
        if needed > available {
            return Err(CorpusError::VocabTooSmall { needed, available });
        }
        let mut tgt_tokens: Vec<u32> = (TGT_CONTENT_BASE..cfg.vocab_size_tgt).collect();
        shuffle(&mut tgt_tokens, rng);
        let mut src_types: Vec<u32> = (0..v_src).collect();
        shuffle(&mut src_types, rng);

        let primary: Vec<u32> = tgt_tokens[..v_src as usize].to_vec();
        let mut secondary = alloc::vec![None; v_src as usize];
        for (i, &s) in src_types[..n_amb as usize].iter().enumerate() {
            secondary[s as usize] = Some(tgt_tokens[v_src as usize + i]);
        }
        Ok(Self { primary, secondary })
    }

    /// Render one source sentence. Ambiguous tokens take their secondary
    /// rendering when the preceding source token id is odd (position 0 acts
    /// as if preceded by token 0).
    fn render(&self, src: &[u32], reorder: bool) -> Vec<u32> {
        let mut tgt: Vec<u32> = src
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let prev = if i == 0 { 0 } else { src[i - 1] };
                match self.secondary[s as usize] {
                    Some(sec) if prev % 2 == 1 => sec,
                    _ => self.primary[s as usize],
                }
            })
            .collect();
        if reorder {
            for i in (0..tgt.len().saturating_sub(1)).step_by(2) {
                tgt.swap(i, i + 1);
            }
        }
        tgt
    }
}

fn shuffle(items: &mut [u32], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        items.swap(i, rng.random_range(0..=i));
    }
}

/// Generate disjoint train/dev/test splits for a task configuration.
pub fn make_corpus(cfg: &SyntheticTaskConfig) -> Result<CorpusSplits, CorpusError> {
    if cfg.len_min == 0 || cfg.len_min > cfg.len_max {
        return Err(CorpusError::EmptyLengthRange { len_min: cfg.len_min, len_max: cfg.len_max });
    }
    if !(cfg.ambiguity_rate.is_finite() && (0.0..=1.0).contains(&cfg.ambiguity_rate)) {
        return Err(CorpusError::InvalidAmbiguityRate(cfg.ambiguity_rate));
    }
    if cfg.num_train == 0 {
        return Err(CorpusError::ZeroSentences);
    }
    let mut map_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let map = SubstitutionMap::build(cfg, &mut map_rng)?;

    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let total = cfg.num_train + cfg.num_dev + cfg.num_test;
    let mut seen: BTreeSet<Vec<u32>> = BTreeSet::new();
    let mut sentences: Vec<Vec<u32>> = Vec::with_capacity(total);
    let mut attempts = 0usize;
    let max_attempts = total.saturating_mul(1000).max(10_000);
    while sentences.len() < total {
        attempts += 1;
        if attempts > max_attempts {
            return Err(CorpusError::SentenceSpaceExhausted);
        }
        let len = data_rng.random_range(cfg.len_min..=cfg.len_max);
        let src: Vec<u32> =
            (0..len).map(|_| data_rng.random_range(0..cfg.vocab_size_src)).collect();
        if seen.insert(src.clone()) {
            sentences.push(src);
        }
    }

    let mut splits = [Vec::new(), Vec::new(), Vec::new()];
    let bounds = [cfg.num_train, cfg.num_train + cfg.num_dev, total];
    for (i, src) in sentences.into_iter().enumerate() {
        let slot = bounds.iter().position(|&b| i < b).expect("index within total");
        let tgt = map.render(&src, cfg.reorder);
        splits[slot].push(SentencePair { src, tgt });
    }
    let [train, dev, test] = splits;
    Ok(CorpusSplits {
        train: ParallelCorpus { pairs: train },
        dev: ParallelCorpus { pairs: dev },
        test: ParallelCorpus { pairs: test },
    })
}
