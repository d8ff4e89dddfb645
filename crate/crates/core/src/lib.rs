//! Single-image reflection separation.
//!
//! An observed image `I` is split into a transmission layer `T` and a
//! reflection layer `R` with `I = T + R`. Each layer is modelled by
//! convolutional sparse coding over its own dictionary, and the two layers
//! are pushed apart by an exclusion penalty on co-located wavelet detail.
//! The solver alternates proximal-gradient updates of the sparse codes and
//! of the two layer estimates, unrolled for a fixed number of layers per
//! scale and run coarse to fine.
//!
//! ```no_run
//! use refsep::{Separator, SolverConfig};
//! # fn load() -> refsep::Image { unimplemented!() }
//! let input = load();
//! let sep = Separator::from_config(SolverConfig::desk(), input.channels())?;
//! let out = sep.solve(&input, None)?;
//! # Ok::<(), refsep::Error>(())
//! ```

// Range checks are written `!(x >= 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dictionary;
pub mod error;
pub mod image;
pub mod metrics;
pub mod prox;
pub mod solver;
pub mod synth;
pub mod wavelet;

pub use dictionary::{dct_dictionary, random_dictionary, ConvDictionary};
pub use error::{Error, Result, Stage};
pub use image::{FeatureMap, Image, Kernel2D, Raster, Resize};
pub use metrics::MetricsReport;
pub use solver::{
    DictKind, Dictionaries, GroundTruth, IterationTrace, ObjectiveTerms, ReflectionInit, Separation, Separator,
    SolverConfig, SolverState, TraceRecord,
};
pub use synth::{MixtureSpec, PairKind};
pub use wavelet::{haar_bank, WaveletBank, WaveletPyramid};
