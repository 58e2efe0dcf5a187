//! Blind motion deblurring with a densely connected conditional GAN.
//!
//! The crate bundles everything the filter needs end to end: a small
//! reverse-mode autodiff engine ([`tensor`]), the dense generator
//! ([`generator`]) and patch discriminator ([`discriminator`]), the composite
//! training objective ([`loss`]), synthetic non-uniform blur for building
//! training pairs ([`blur`], [`dataset`]), full-reference quality metrics
//! ([`metrics`]), and an Adam-based training loop with checkpointing
//! ([`optim`], [`checkpoint`], [`train`]).

pub mod blur;
pub mod checkpoint;
pub mod dataset;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Element, Parameter, Tensor};
