//! Factor algebra over interchangeable representations, with exact and
//! approximate inference on top.
//!
//! The crate is organized around a small algebra: factors multiply, divide,
//! add, marginalize (`sum_out`), condition (`reduce`), evaluate and
//! normalize. Each representation implements the operations it supports in
//! closed form; [`Factor`] dispatches across representations and promotes
//! operands pairwise (a discrete table against a Gaussian becomes a
//! conditional factor, a Gaussian against a box indicator becomes a
//! truncated Gaussian, and so on).
//!
//! Representations:
//! - [`TableFactor`] / [`SparseTableFactor`]: dense and sparse nonnegative
//!   tables over discrete variables.
//! - [`CanonicalGaussian`] / [`MomentGaussian`]: exponential-family and
//!   moment parameterizations of scaled Gaussians.
//! - [`MixtureFactor`]: weighted sums of Gaussian-family components.
//! - [`TruncatedGaussian`] / [`IndicatorFactor`]: Gaussians restricted to
//!   axis-aligned boxes, and the boxes themselves.
//! - [`ConditionalFactor`]: a table of continuous factors indexed by
//!   discrete variables.
//! - [`SampleFactor`]: weighted particles.
//!
//! Inference lives in [`inference`]: variable elimination over factor
//! graphs, plus filtering and smoothing for state-space models built from
//! these factors. [`models`] has ready-made example models and a seeded
//! simulator, and [`modelfile`] reads and writes them as TOML.

pub mod error;
pub mod factor;
pub mod gaussian;
pub mod hybrid;
pub mod inference;
pub mod modelfile;
pub mod models;
pub mod quad;
pub mod rng;
pub mod sample;
pub mod sparse;
pub mod table;
pub mod variable;

pub use error::{FactorError, Result};
pub use factor::{Factor, ReprTag};
pub use gaussian::{CanonicalGaussian, MixtureComponent, MixtureFactor, MomentGaussian};
pub use hybrid::{BoxBounds, ConditionalFactor, IndicatorFactor, TruncatedGaussian};
pub use inference::{
    elimination_order, filter, filter_step, smooth, summarize, variable_elimination,
    FactorGraphModel, FilterResult, PosteriorSummary, ProjectionPolicy, StateSpaceModel,
};
pub use modelfile::{parse_model, serialize_model, BuiltModel, ModelDoc, ParsedModel};
pub use sample::SampleFactor;
pub use sparse::SparseTableFactor;
pub use table::TableFactor;
pub use variable::{Assignment, Domain, Scope, Value, Variable};
