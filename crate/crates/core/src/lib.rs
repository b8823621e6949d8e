//! Numerical toolkit for the Baouendi-Grushin geometry `R^m x R^k` with
//! degeneracy exponent `gamma > 0`.
//!
//! Layers, bottom to top: [`geometry`] (gauge, angle, dilations),
//! [`calculus`] and [`fd`] (Grushin vector fields and their closed-form
//! derivatives, finite-difference oracle), [`coefficients`] (variable
//! coefficient matrices and the quantities built from them),
//! [`operators`], [`quadrature`], [`carleman`], [`ucp`].

pub mod bounds;
pub mod calculus;
pub mod carleman;
pub mod coefficients;
pub mod error;
pub mod fd;
pub mod field;
pub mod fit;
pub mod geometry;
pub mod jet;
pub mod linalg;
pub mod operators;
pub mod par;
pub mod quad;
pub mod quadrature;
pub mod report;
pub mod sampling;
pub mod sparse;
pub mod suites;
pub mod ucp;

pub use error::{Error, Result};
pub use geometry::{GaugeAngle, GrushinSpace, Point};
pub use jet::Jet;
pub use linalg::{Matrix, Vector};
