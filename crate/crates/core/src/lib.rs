//! Dynamic topic modeling over timestamped short texts.
//!
//! Four factorization methods share one preprocessing pipeline:
//!
//! - [`nmf`]: batch nonnegative matrix factorization (multiplicative updates)
//! - [`online_nmf`]: online dictionary learning over day slices
//! - [`ncpd`]: batch nonnegative CP decomposition of the day × term × document tensor
//! - [`online_ncpd`]: online CP-dictionary learning with ℓ₁-regularized coding
//!
//! Text goes through [`corpus`] (ingest, day slicing, top-k subsampling) and
//! [`vectorizer`] (tokenization, filtered unigram+bigram vocabulary, TF-IDF,
//! tensor assembly). [`topics`] turns fitted factors into keyword summaries and
//! prevalence heatmaps, and [`synth`] generates planted-topic fixtures.

pub mod bench;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod io;
pub mod ncpd;
pub mod nmf;
pub mod online_ncpd;
pub mod online_nmf;
pub mod synth;
pub mod tensor_core;
pub mod topics;
pub mod vectorizer;

pub use error::{Error, Result};
pub use tensor_core::{Mat, SolverConfig, Tensor3};
