//! Small-noise asymptotics for monotone stochastic evolution equations on a
//! one-dimensional interval, discretized over a Gelfand triple `V ⊂ H ⊂ V*`.
//!
//! The crate covers the full chain from discretization to rare-event rates:
//!
//! * [`gelfand`] — the discrete triple (nodes, quadrature, `H`/`V` norms,
//!   spectral projections) and path records with the metric
//!   `ρ(f,g) = sup_t ‖f_t − g_t‖_H + (∫₀ᵀ ‖f_t − g_t‖_V^α dt)^{1/α}`.
//! * [`operators`] — monotone drift families (reaction-diffusion, porous
//!   medium, fast diffusion, p-Laplace, first-order high-order) and
//!   finite-rank / diagonally decaying noise, plus empirical verification of
//!   the monotonicity, coercivity, growth and projection-decay conditions.
//! * [`evolution`] — drift-implicit, noise-explicit Euler stepping for the
//!   controlled SDE `dX = A(t,X) dt + B(t,X)(φ_t dt + ε dW_t)`, its skeleton
//!   (`ε = 0`) and spectral Galerkin variants.
//! * [`action`] — the control energy `½∫‖φ‖²_U dt`, discrete-adjoint
//!   gradients through the implicit steps, and penalized quasi-Newton
//!   minimization of the rate functional under terminal or path constraints.
//! * [`rare_event`] — plain and Girsanov-tilted Monte Carlo estimators of
//!   `P(X^ε ∈ A)` with deterministic per-sample seed streams, and the
//!   `ε`-sweep table comparing `−ε² log p̂` against the minimized action.
//!
//! Everything is deterministic given seeds: parallel drivers plug in through
//! [`rare_event::SampleRunner`], whose index-ordered contract makes results
//! independent of the worker count.
//!
//! The crate is `no_std`-compatible (requires `alloc`); the default `std`
//! feature only switches float math from `libm` to the platform intrinsics.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod action;
mod error;
pub mod evolution;
pub mod gelfand;
pub mod operators;
pub mod rare_event;
pub mod rng;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
