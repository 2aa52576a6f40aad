//! Embedded topic models whose word and topic embeddings live in hyperbolic
//! space (Poincaré ball or Lorentz hyperboloid), trained with amortized
//! Weibull variational inference and an optional taxonomy-guided contrastive
//! regularizer.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, checkpoints and the
//! command-line driver live in the `hypertopic` companion crate.
//!
//! Module map:
//!
//! * [`geometry`] – distances, exponential/logarithmic maps, transport and
//!   model conversions for both hyperbolic models (plus a Euclidean mode).
//! * [`grad`] – a small reverse-mode tape, parameter storage, finite
//!   difference checking and Adam.
//! * [`corpus`] – sparse bag-of-words corpora and seeded mini-batching.
//! * [`taxonomy`] – concept trees built from hypernym paths and the
//!   positive/negative sampling used by the contrastive term.
//! * [`model`] – the generative decoder, the ladder encoder, Weibull
//!   sampling, KL terms and ELBOs.
//! * [`knowledge`] – the contrastive regularizer and combined objective.
//! * [`trainer`] – the training loop.
//! * [`eval`] – NPMI, topic diversity, k-means purity/NMI, linear
//!   classification and topic matching.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod corpus;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grad;
pub mod knowledge;
pub mod matrix;
pub mod model;
pub mod rng;
pub mod special;
pub mod taxonomy;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{Curvature, GeometryKind, HyperPoint, Space, TangentVector};
pub use matrix::Matrix;

