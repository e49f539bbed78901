//! Domain agnostic normalization (DAN) and unsupervised adversarial domain
//! adaptation (UADA) for dense segmentation, at desk scale.
//!
//! The crate is organized bottom-up:
//!
//! - [`grid`], [`conv`], [`tape`], [`param`], [`gradcheck`]: a small
//!   reverse-mode autodiff engine over `N x H x W x C` grids.
//! - [`norm`]: conventional, split and instance normalization plus DAN.
//! - [`model`], [`adversarial`]: representation learner, segmenter and
//!   domain classifier, with the domain and confusion losses.
//! - [`trainer`]: the alternating two-step optimization and the three
//!   training regimes.
//! - [`datagen`]: synthetic multi-domain segmentation benchmarks.
//! - [`metrics`]: mIoU and representation retrieval curves.
//! - [`experiment`]: end-to-end experiment commands backing the `dan` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversarial;
pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod norm;
pub mod param;
pub mod rng;
pub mod tape;
pub mod trainer;

pub use error::{Error, Result};
pub use grid::{Grid4, LabelMap, Shape, IGNORE_LABEL};
pub use norm::{DomainTag, Mode, NormConfig, NormKind, NormLayer, NormStats};
pub use param::{sgd_momentum_step, Bound, ParamGroup};
pub use tape::{Tape, Var};
