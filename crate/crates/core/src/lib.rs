//! Core algorithms for plot-scale crop biomass estimation from 3D data.
//!
//! The crate is split along the two halves of the pipeline:
//!
//! * the point-cloud half — [`pointdata`] (ingestion, augmentation,
//!   voxelization), [`sparse3d`] (submanifold sparse 3D CNN backbone) and
//!   [`biohead`] (transformer regression head with a learnable biomass
//!   token);
//! * the imagery half — [`field`] (SDF / radiance / semantic feature MLPs),
//!   [`render`] (logistic-CDF ray weighting and volume rendering) and
//!   [`synthscene`] (analytic scenes that stand in for real captures and
//!   serve as test oracles).
//!
//! [`numerics`] provides the shared substrate (a reverse-mode tape, a
//! pinned RNG, positional encoding, finite-difference checking) and
//! [`trainer`] the optimization loops, metrics and checkpoint codec.
//!
//! The crate is `no_std` + `alloc`; file formats and the CLI live in the
//! companion crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod biohead;
pub mod camera;
pub mod field;
pub mod numerics;
pub mod pointdata;
pub mod render;
pub mod sparse3d;
pub mod synthscene;
pub mod trainer;

pub use numerics::real::{Dtype, Real};
