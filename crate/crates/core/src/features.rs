//! Block-count feature vectors and the trained dimensionality reduction.

use crate::blocks::BlockTable;
use crate::error::{Error, Result};

/// Per-block character counts for one sentence, including the `No_Block` slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCounts {
    pub counts: Vec<u64>,
    pub total: u64,
}

impl RawCounts {
    pub fn is_empty(&self) -> bool {
        self.total == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDistribution {
    pub probs: Vec<f64>,
}

/// A sentence restricted to the retained dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedFeature {
    pub values: Vec<f64>,
    /// Set when the sentence had mass outside the retained blocks, or was
    /// empty.
    pub out_of_support: bool,
}

/// Counts codepoints per block. Whitespace and punctuation count like any
/// other character.
pub fn count_blocks(sentence: &str, table: &BlockTable) -> RawCounts {
    let mut counts = vec![0u64; table.dim()];
    let mut total = 0;
    for c in sentence.chars() {
        counts[table.block_of_char(c)] += 1;
        total += 1;
    }
    RawCounts { counts, total }
}

pub fn normalize(counts: &RawCounts) -> Result<FeatureDistribution> {
    if counts.total == 0 {
        return Err(Error::EmptySentence);
    }
    let total = counts.total as f64;
    Ok(FeatureDistribution {
        probs: counts.counts.iter().map(|&c| c as f64 / total).collect(),
    })
}

/// The block dimensions kept at training time, in ascending block order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureProjection {
    retained: Vec<usize>,
    names: Vec<String>,
    /// Full-dimension index -> position in `retained`.
    slots: Vec<Option<usize>>,
}

impl FeatureProjection {
    /// Keeps exactly the blocks with a non-zero summed count over the corpus.
    pub fn fit<'a, I>(training: I, table: &BlockTable) -> Result<Self>
    where
        I: IntoIterator<Item = &'a RawCounts>,
    {
        let mut summed = vec![0u64; table.dim()];
        for counts in training {
            if counts.counts.len() != summed.len() {
                return Err(Error::DimensionMismatch {
                    expected: summed.len(),
                    got: counts.counts.len(),
                });
            }
            for (s, &c) in summed.iter_mut().zip(&counts.counts) {
                *s += c;
            }
        }
        let retained: Vec<usize> = (0..summed.len()).filter(|&i| summed[i] > 0).collect();
        if retained.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Self::from_indices(retained, table)
    }

    pub fn from_indices(mut retained: Vec<usize>, table: &BlockTable) -> Result<Self> {
        retained.sort_unstable();
        retained.dedup();
        if retained.is_empty() {
            return Err(Error::InvalidModel("projection retains no blocks".into()));
        }
        let mut slots = vec![None; table.dim()];
        let mut names = Vec::with_capacity(retained.len());
        for (pos, &idx) in retained.iter().enumerate() {
            let name = table.name(idx).ok_or_else(|| {
                Error::InvalidModel(format!("block index {idx} outside table of {} blocks", table.dim()))
            })?;
            names.push(name.to_string());
            slots[idx] = Some(pos);
        }
        Ok(FeatureProjection { retained, names, slots })
    }

    /// Rebuilds a projection from stored block names against `table`.
    pub fn from_names<S: AsRef<str>>(names: &[S], table: &BlockTable) -> Result<Self> {
        let indices = names
            .iter()
            .map(|n| {
                table
                    .index_of(n.as_ref())
                    .ok_or_else(|| Error::UnknownBlock(n.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let proj = Self::from_indices(indices, table)?;
        if proj.names.len() != names.len() || proj.names.iter().zip(names).any(|(a, b)| a != b.as_ref()) {
            return Err(Error::InvalidModel(
                "projection block names must be unique and in table order".into(),
            ));
        }
        Ok(proj)
    }

    pub fn dim(&self) -> usize {
        self.retained.len()
    }

    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn project(&self, dist: &FeatureDistribution) -> ProjectedFeature {
        let out_of_support = dist
            .probs
            .iter()
            .enumerate()
            .any(|(i, &p)| p > 0.0 && self.slots.get(i).copied().flatten().is_none());
        ProjectedFeature {
            values: self.retained.iter().map(|&i| dist.probs.get(i).copied().unwrap_or(0.0)).collect(),
            out_of_support,
        }
    }

    /// Count, normalize and project in one go. Empty sentences come back
    /// out of support.
    pub fn featurize(&self, sentence: &str, table: &BlockTable) -> ProjectedFeature {
        let counts = count_blocks(sentence, table);
        match normalize(&counts) {
            Ok(dist) => self.project(&dist),
            Err(_) => ProjectedFeature {
                values: vec![0.0; self.dim()],
                out_of_support: true,
            },
        }
    }
}
