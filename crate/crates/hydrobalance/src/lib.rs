//! Randomized load balancing in heavy traffic, computed at three scales.
//!
//! A system of `n` parallel servers receives a dedicated Poisson arrival
//! stream per queue plus a shared load balancing stream of intensity
//! `b*n^(3/2)` routed by join-the-shortest-of-`ell` sampling. At critical
//! load, with queue lengths rescaled by `sqrt(n)`, the empirical measure of
//! queue lengths approaches a deterministic profile whose tail
//! `v(x,t)` solves the viscous conservation law
//!
//! ```text
//! v_t = (c1*v - b*v^ell)_x + a*v_xx,   v(0,t) = 1,
//! ```
//!
//! while a tagged queue approaches a reflected diffusion whose drift
//! depends on the profile. This crate implements all three layers and the
//! tooling to cross-validate them:
//!
//! - [`des`]: exact discrete-event simulation of the prelimit system;
//! - [`pde`]: finite-difference solver for the tail equation, the
//!   closed-form stationary profile and its ODE cross-check;
//! - [`mv`]: reflected Euler-Maruyama particle dynamics with
//!   profile-fed or self-consistent drift;
//! - [`routing`]: the rank-selection law with an exact enumeration oracle;
//! - [`measure`]: empirical measures, tail curves and comparison metrics;
//! - [`harness`]: named cross-layer experiments with CSV reports.
//!
//! The `hydrobalance` binary exposes all of it on the command line.

pub mod config;
pub mod des;
pub mod harness;
pub mod init;
pub mod io;
pub mod measure;
pub mod mv;
pub mod params;
pub mod pde;
pub mod rng;
pub mod routing;

pub use params::{derive, DerivedConstants, ModelParams, Replacement, ServiceDist};
pub use rng::RngState;
