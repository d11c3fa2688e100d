//! Polynomial constraints on non-polynomial system components, and
//! sum-of-squares certification of region-of-attraction inner estimates.
//!
//! The crate is organised bottom-up:
//!
//! - [`poly`]: sparse multivariate polynomials, generic over the coefficient
//!   [`Scalar`](poly::Scalar) (`f64`, `f32`, `Rational64`).
//! - [`sos`]: SOS programs, their compilation to PSD-cone problems, an
//!   interior-point backend and independent certificate checks.
//! - [`constraints`]: sector, Taylor, Padé and hand-built polynomial
//!   constraints, plus grid/root-scan verification against the true operator.
//! - [`synth`]: numerical synthesis of constraints by augmented Lagrangian.
//! - [`transform`]: composition of constraints with polynomial graph maps.
//! - [`roa`]: expansion/reshape alternation, volume estimation and
//!   simulation-based falsification.

pub mod constraints;
pub mod poly;
pub mod roa;
pub mod sos;
pub mod synth;
pub mod transform;

use num_rational::Rational64;

pub type Poly = poly::Polynomial<f64>;
pub type Poly32 = poly::Polynomial<f32>;
pub type RationalPoly = poly::Polynomial<Rational64>;
