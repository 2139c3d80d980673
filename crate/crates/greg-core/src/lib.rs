//! Piecewise-diffeomorphic 2D image registration.
//!
//! The crate implements large-deformation registration on a rectangular grid,
//! in two modes sharing one code path:
//!
//! * **smooth mode**: classical flow-based registration, where a time series of
//!   smooth velocity fields is integrated into a diffeomorphism of the domain;
//! * **sliding mode**: the domain is split by a closed or through-going curve
//!   (the sliding interface) into two regions that may slide tangentially past
//!   each other. Velocities, momenta, and warps are stored per side, derivative
//!   stencils never straddle the interface, and the only coupling is the shared
//!   normal motion of the interface itself.
//!
//! Sliding-mode warps are quadruples `(interfaces, forward maps, inverse maps)`
//! that compose and invert like ordinary maps as long as the target interface of
//! one matches the source interface of the next ([`groupoid`]). The momentum
//! form of the dynamics, including the interface terms that a naive per-side
//! discretization misses, lives in [`mechanics`]; the registration energy,
//! its exact discrete adjoint, and the descent loop live in [`registration`].
//!
//! Everything here is deterministic and single-threaded; the companion `greg`
//! crate carries file formats, rendering, and the CLI.
//!
//! The crate is `no_std`-compatible (`--no-default-features --features libm`);
//! only `alloc` is required.

#![cfg_attr(not(feature = "std"), no_std)]
#![warn(missing_docs)]

extern crate alloc;

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("greg-core needs either the `std` or the `libm` feature");

pub mod algebroid;
pub mod bench;
pub mod error;
pub mod grid;
pub mod groupoid;
pub mod interface;
pub(crate) mod math;
pub mod mechanics;
pub mod registration;

pub use error::{Error, Result};
