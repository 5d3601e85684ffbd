//! Divergence-free HDG and embedded-HDG discretizations of stationary
//! incompressible visco-resistive MHD on triangle meshes.
//!
//! The numerical core is generic over the scalar type ([`scalar::Real`],
//! implemented for `f32` and `f64`). The aliases at the crate root fix the
//! scalar to `f64`, which is what the verification tolerances assume.

pub mod basis;
pub mod dense;
pub mod error;
pub mod global_system;
pub mod local_solver;
pub mod mesh;
pub mod picard;
pub mod quadrature;
pub mod scalar;
pub mod spaces;
pub mod sparse;
pub mod verify;

pub use error::{Error, Result};
pub use global_system::RhatBc;
pub use mesh::Diagonal;
pub use spaces::{DofLayout, Variant};

pub type Mesh = mesh::Mesh<f64>;
pub type AffineMap = mesh::AffineMap<f64>;
pub type ReferenceElement = basis::ReferenceElement<f64>;
pub type QuadratureRule = quadrature::QuadratureRule<f64>;
pub type PhysParams = local_solver::PhysParams<f64>;
pub type FieldState = global_system::FieldState<f64>;
