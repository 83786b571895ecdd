//! Sentence scoring and corpus filtering by Unicode block distributions.
//!
//! Sentences become normalized block-count vectors, a Dirichlet-process
//! Gaussian mixture is fitted on a clean reference corpus by variational EM,
//! and the mixture's log density scores new sentences. Scores then drive
//! absolute, relative or training-minimum filtering of monolingual and
//! parallel corpora.

pub mod blocks;
pub mod error;
pub mod features;
pub mod filter;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod vbgmm;

pub use blocks::{BlockRange, BlockTable};
pub use error::{Error, ErrorKind, Result};
pub use features::{count_blocks, normalize, FeatureDistribution, FeatureProjection, ProjectedFeature, RawCounts};
pub use filter::{apply_mask, filter_mono, filter_parallel, KeepMask, Reduction, ThresholdSpec};
pub use io::Utf8Policy;
pub use model::{BlockModel, ScoreOptions, TrainReport};
pub use pipeline::{filter_corpus, FilterOptions, FilterSummary};
pub use vbgmm::{fit, FitConfig, Init, MixtureModel, PriorConfig, Priors};
