//! Differentiable finite elements with embedded neural operators.
//!
//! The crate solves small-strain elasticity and transient heat conduction on
//! simplicial meshes, embeds multilayer perceptrons as constitutive operators
//! (strain to modulus, temperature to conductivity), and differentiates losses
//! on solver outputs end to end through the discrete adjoint so the embedded
//! networks can be trained from indirect observations.
//!
//! The numerical core is generic over the floating-point scalar; the crate
//! root exports `f64` aliases used by the shipped experiment pipelines.

pub mod adjoint;
pub mod assembly;
pub mod constitutive;
pub mod experiments;
pub mod fespace;
pub mod io;
pub mod mesh;
pub mod neural;
pub mod quadrature;
pub mod scalar;
pub mod train;
pub mod sparse;

pub use scalar::Scalar;

/// Default scalar type of the experiment pipelines.
pub type Real = f64;

/// `f64` aliases of the main domain types.
pub type Mesh = mesh::Mesh<Real>;
pub type SparseMatrix = sparse::SparseMatrix<Real>;
pub type QuadratureRule = quadrature::QuadratureRule<Real>;
