//! Core numerics for modelling a human teleoperation follower as a
//! (stochastic) linear time-invariant mass-spring-damper.
//!
//! - [`model`]: state-space construction, block-diagonal composition, exact
//!   ZOH simulation, contact force and output noise.
//! - [`trajectory`]: Fourier-series and band-limited noise inputs.
//! - [`sysid`]: grey-box identification, coupling statistics and
//!   segment-wise time-invariance checks.
//! - [`analysis`]: spectra, coherence, correlations, Nyquist passivity,
//!   energy series, residual statistics and path length.
//!
//! The crate is `no_std` and needs only `alloc`.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN alongside the bound

extern crate alloc;

pub mod analysis;
pub mod error;
pub mod fft;
pub mod linalg;
pub mod model;
pub mod record;
pub mod rng;
pub mod sysid;
pub mod trajectory;

pub use error::{Error, Result};
pub use model::{
    block_diagonal, build_state_space, contact_force, simulate, ContactLaw, EnvParams, FollowerParams, FollowerState,
    InitialState, NoiseModel, SimConfig, StateSpaceModel,
};
pub use record::{SessionRecord, Source};
pub use trajectory::{Trajectory, FourierSpec, NoiseTrajSpec};
