//! Security analysis of discrete-modulation continuous-variable QKD with a
//! realistic heterodyne receiver: finite detection range and finitely many
//! discretization bins per quadrature.
//!
//! The crate computes certified secret-key rates for a phase-shift-keyed
//! coherent-state protocol measured by double homodyne detection whose
//! outcomes are truncated to a square region and binned. The pipeline is:
//!
//! 1. [`fock`] builds the detector POVM elements and the operators entering
//!    the optimization problems, all in a truncated Fock basis.
//! 2. [`protocol`] provides the constellation and its entanglement-based
//!    description (source purification, Alice's reduced state and ladder
//!    operator matrix).
//! 3. [`channel`] models a thermal-loss channel and produces the expected or
//!    sampled coarse-grained statistics the bounds consume.
//! 4. [`sdp`] casts the extremal covariance problems as semidefinite
//!    programs and solves them with a self-contained interior-point method,
//!    reporting certified safe-side values.
//! 5. [`gaussian_bound`] turns covariance bounds into an upper bound on the
//!    eavesdropper's Holevo information via the Gaussian extremality
//!    argument, including the cutoff and continuity penalties.
//! 6. [`infotheory`] and [`finite_size`] assemble the asymptotic and
//!    finite-size key rates.
//!
//! All numerics are plain `f64`; every module states its validity envelope
//! and the test suite pins accuracy against independent oracles.
//!
//! The crate is `no_std`-compatible (requires `alloc`); the `std` feature
//! (default) enables faster linear algebra kernels and OS entropy.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]
#![warn(missing_docs)]

extern crate alloc;

pub mod channel;
pub mod finite_size;
pub mod fock;
pub mod gaussian_bound;
pub mod infotheory;
pub mod protocol;
pub mod sdp;
pub mod special;
pub mod tolerances;
