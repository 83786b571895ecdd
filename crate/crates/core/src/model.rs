//! The persisted scoring model: projection, mixture and scoring policy.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocks::BlockTable;
use crate::error::{Error, Result};
use crate::features::{count_blocks, FeatureProjection};
use crate::io::{format_score, AtomicFile, LineReader, Utf8Policy};
use crate::vbgmm::{self, FitConfig, FitSummary, MixtureModel, PriorConfig, Priors};

pub const FORMAT_VERSION: u32 = 1;

/// Score given to empty sentences and to sentences with characters outside
/// the retained blocks, unless overridden.
pub const DEFAULT_UNSEEN_SCORE: f64 = 0.0;

/// Weight above which a component is reported as effective.
pub const EFFECTIVE_WEIGHT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockModel {
    projection: FeatureProjection,
    mixture: MixtureModel,
    min_train_score: f64,
    unseen_score: f64,
    unicode_version: String,
    priors: Priors,
    fit_config: FitConfig,
}

/// Bookkeeping from [`BlockModel::train`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainReport {
    pub sentences: usize,
    pub skipped_empty: usize,
}

/// The `major.minor` Unicode version of a table, or `"unknown"`.
pub fn table_unicode_version(table: &BlockTable) -> String {
    match table.version() {
        Some(v) => v.split('.').take(2).collect::<Vec<_>>().join("."),
        None => "unknown".to_string(),
    }
}

impl BlockModel {
    /// Fit a model on a clean corpus. Empty lines are skipped and counted.
    pub fn train<I, S>(
        corpus: I,
        table: &BlockTable,
        priors: &PriorConfig,
        cfg: &FitConfig,
    ) -> Result<(Self, TrainReport)>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut skipped_empty = 0;
        let counts: Vec<_> = corpus
            .into_iter()
            .filter_map(|s| {
                let c = count_blocks(s.as_ref(), table);
                if c.is_empty() {
                    skipped_empty += 1;
                    None
                } else {
                    Some(c)
                }
            })
            .collect();
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let projection = FeatureProjection::fit(&counts, table)?;
        let data: Vec<Vec<f64>> = counts
            .iter()
            .map(|c| {
                let total = c.total as f64;
                projection.retained().iter().map(|&i| c.counts[i] as f64 / total).collect()
            })
            .collect();
        let resolved = priors.resolve(&data, cfg)?;
        let mixture = vbgmm::fit(&data, &resolved, cfg)?;

        let mut min_train_score = f64::INFINITY;
        for x in &data {
            min_train_score = min_train_score.min(mixture.weighted_log_prob(x)?);
        }
        if !min_train_score.is_finite() {
            return Err(Error::Numeric("minimum training score is not finite".into()));
        }
        let model = BlockModel {
            projection,
            mixture,
            min_train_score,
            unseen_score: DEFAULT_UNSEEN_SCORE,
            unicode_version: table_unicode_version(table),
            priors: resolved,
            fit_config: cfg.clone(),
        };
        let report = TrainReport {
            sentences: data.len(),
            skipped_empty,
        };
        Ok((model, report))
    }

    pub fn with_unseen_score(mut self, score: f64) -> Self {
        self.unseen_score = score;
        self
    }

    pub fn projection(&self) -> &FeatureProjection {
        &self.projection
    }

    pub fn mixture(&self) -> &MixtureModel {
        &self.mixture
    }

    pub fn min_train_score(&self) -> f64 {
        self.min_train_score
    }

    pub fn unseen_score(&self) -> f64 {
        self.unseen_score
    }

    pub fn unicode_version(&self) -> &str {
        &self.unicode_version
    }

    pub fn priors(&self) -> &Priors {
        &self.priors
    }

    pub fn fit_config(&self) -> &FitConfig {
        &self.fit_config
    }

    /// Score one sentence. Empty and out-of-support sentences get the unseen
    /// score; everything else gets the mixture log density.
    pub fn score_sentence(&self, sentence: &str, table: &BlockTable) -> f64 {
        let f = self.projection.featurize(sentence, table);
        if f.out_of_support {
            return self.unseen_score;
        }
        self.mixture
            .weighted_log_prob(&f.values)
            .expect("in-support features match the mixture dimension and are finite")
    }

    /// Stream scores for every line of `reader`, in order, to `sink`.
    ///
    /// Lines are scored in chunks; with `threads > 1` each chunk is scored on
    /// a private thread pool. Output does not depend on the thread count.
    pub fn score_lines<R, F>(
        &self,
        reader: &mut LineReader<R>,
        table: &BlockTable,
        opts: &ScoreOptions,
        mut sink: F,
    ) -> Result<()>
    where
        R: BufRead,
        F: FnMut(f64) -> Result<()>,
    {
        let chunk_size = opts.chunk_size.max(1);
        let pool = if opts.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(opts.threads)
                    .build()
                    .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?,
            )
        } else {
            None
        };
        let mut chunk = Vec::with_capacity(chunk_size);
        let mut scores = Vec::with_capacity(chunk_size);
        loop {
            chunk.clear();
            while chunk.len() < chunk_size {
                match reader.next_line()? {
                    Some(line) => chunk.push(line),
                    None => break,
                }
            }
            if chunk.is_empty() {
                return Ok(());
            }
            scores.clear();
            match &pool {
                Some(pool) => pool.install(|| {
                    chunk
                        .par_iter()
                        .map(|s| self.score_sentence(s, table))
                        .collect_into_vec(&mut scores)
                }),
                None => scores.extend(chunk.iter().map(|s| self.score_sentence(s, table))),
            }
            for &s in &scores {
                sink(s)?;
            }
            if chunk.len() < chunk_size {
                return Ok(());
            }
        }
    }

    /// Write one formatted score per input line.
    pub fn score_to_writer<R: BufRead, W: Write>(
        &self,
        reader: &mut LineReader<R>,
        table: &BlockTable,
        opts: &ScoreOptions,
        out: &mut W,
    ) -> Result<()> {
        self.score_lines(reader, table, opts, |s| {
            writeln!(out, "{}", format_score(s))?;
            Ok(())
        })
    }

    /// Serialize to the versioned JSON model format.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    /// Parse and validate a JSON model against `table`.
    pub fn from_json(text: &str, table: &BlockTable) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        Self::from_file(file, table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = AtomicFile::create(path)?;
        out.write_all(self.to_json()?.as_bytes())?;
        out.write_all(b"\n")?;
        out.commit()
    }

    pub fn load(path: &Path, table: &BlockTable) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        Self::from_file(file, table)
    }

    fn to_file(&self) -> ModelFile {
        ModelFile {
            format_version: FORMAT_VERSION,
            unicode_version: self.unicode_version.clone(),
            unseen_score: self.unseen_score,
            min_train_score: self.min_train_score,
            projection: self.projection.names().to_vec(),
            mixture: MixtureFile {
                weights: self.mixture.weights().to_vec(),
                means: self.mixture.means().to_vec(),
                covariances: self.mixture.covariance_rows(),
                elbo: self.mixture.summary().elbo,
                n_iter: self.mixture.summary().n_iter,
                converged: self.mixture.summary().converged,
            },
            priors: self.priors.clone(),
            fit_config: self.fit_config.clone(),
        }
    }

    fn from_file(file: ModelFile, table: &BlockTable) -> Result<Self> {
        if file.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch(format!(
                "model format {} is not supported (expected {FORMAT_VERSION})",
                file.format_version
            )));
        }
        let table_version = table_unicode_version(table);
        if file.unicode_version != table_version {
            return Err(Error::VersionMismatch(format!(
                "model was trained with Unicode {} but the block table is Unicode {table_version}",
                file.unicode_version
            )));
        }
        let projection = FeatureProjection::from_names(&file.projection, table)?;
        let m = file.mixture;
        let mixture = MixtureModel::new(m.weights, m.means, m.covariances)?.with_summary(FitSummary {
            elbo: m.elbo,
            n_iter: m.n_iter,
            converged: m.converged,
            elbo_trace: Vec::new(),
        });
        if mixture.dim() != projection.dim() {
            return Err(Error::InvalidModel(format!(
                "projection has {} blocks but the mixture has dimension {}",
                projection.dim(),
                mixture.dim()
            )));
        }
        if !file.min_train_score.is_finite() {
            return Err(Error::InvalidModel("min_train_score must be finite".into()));
        }
        if file.unseen_score.is_nan() {
            return Err(Error::InvalidModel("unseen_score must not be NaN".into()));
        }
        file.priors
            .validate(mixture.dim(), file.fit_config.reg_covar)
            .map_err(|e| Error::InvalidModel(format!("priors: {e}")))?;
        Ok(BlockModel {
            projection,
            mixture,
            min_train_score: file.min_train_score,
            unseen_score: file.unseen_score,
            unicode_version: file.unicode_version,
            priors: file.priors,
            fit_config: file.fit_config,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreOptions {
    pub threads: usize,
    pub chunk_size: usize,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            threads: 1,
            chunk_size: 4096,
        }
    }
}

/// Reads every line of `reader` and scores it into memory.
pub fn score_all<R: BufRead>(
    model: &BlockModel,
    reader: R,
    table: &BlockTable,
    policy: Utf8Policy,
    opts: &ScoreOptions,
) -> Result<Vec<f64>> {
    let mut lines = LineReader::new(reader, policy);
    let mut scores = Vec::new();
    model.score_lines(&mut lines, table, opts, |s| {
        scores.push(s);
        Ok(())
    })?;
    Ok(scores)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    unicode_version: String,
    #[serde(with = "extended_float")]
    unseen_score: f64,
    min_train_score: f64,
    projection: Vec<String>,
    mixture: MixtureFile,
    priors: Priors,
    fit_config: FitConfig,
}

#[derive(Serialize, Deserialize)]
struct MixtureFile {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<Vec<f64>>>,
    elbo: f64,
    n_iter: usize,
    converged: bool,
}

/// Finite floats as JSON numbers, infinities as the strings `"inf"` and
/// `"-inf"`.
mod extended_float {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(D::Error::custom(format!("invalid float {other:?}"))),
            },
        }
    }
}
