//! Numerical lab for singular p-Laplacian obstacle problems with measure data.
//!
//! Everything is generic over the scalar type through [`Real`]; the aliases
//! at the crate root fix it to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod exponents;
pub mod fields;
pub mod lorentz;
pub mod maximal;
pub mod scalar;
pub mod solver;
pub mod structural;
pub mod verifier;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Exponents = exponents::ExponentConfig<f64>;
pub type Domain = fields::GridDomain<f64>;
pub type Field = fields::ScalarField<f64>;
pub type VectorFieldF64 = fields::VectorField<f64>;
pub type Measure = fields::MeasureData<f64>;
pub type Coefficient = structural::CoefficientField<f64>;
