//! Projection onto unions of subspaces and the small geometric learners built around it.
//!
//! Modules, bottom up:
//! - [`numerics`]: QR, Jacobi SVD, least squares, annihilators, principal angles.
//! - [`datagen`]: seeded synthetic unions, circles, masking and blur.
//! - [`dictionary`]: coherence, restricted isometry/orthogonality constants, secant rank.
//! - [`projector`]: nearest-component projection with tie detection, isometry conjugation, orbits.
//! - [`autoenc`]: tiny encoder/decoder models with analytic gradients.
//! - [`folding`]: Cayley-parametrized orthogonal transforms trained to fold data onto a union.
//! - [`intersect`]: coupled cross-projection and residual removal.
//! - [`dba`]: dual-branch attention block with manual backpropagation.
//! - [`complexity`]: sample-complexity counts and covering numbers.

pub mod autoenc;
pub mod complexity;
pub mod datagen;
pub mod dba;
pub mod dictionary;
pub mod error;
pub mod folding;
pub mod gradcheck;
pub mod intersect;
pub mod numerics;
pub mod projector;
pub mod rng;

pub use datagen::{Dataset, MaskWindow, SyntheticSpec};
pub use dictionary::{Dictionary, SupportSet};
pub use error::{Error, Result};
pub use numerics::{Matrix, Vector};
pub use projector::{IsometryT, ProjectionResult, UnionProjector};
