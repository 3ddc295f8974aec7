//! Numerical Finsler geometry.
//!
//! Metrics `F(x, y)` are described declaratively ([`metric`]), expanded as
//! truncated multivariate Taylor series ([`jet`]) and pushed through a tensor
//! pipeline ([`calculus`]) that produces the fundamental form, Cartan and
//! Landsberg torsions, the Matsumoto torsion, stretch and Riemann curvature.
//! [`classify`] turns those into sample-based verdicts and [`verify`] checks
//! classical identities of Finsler geometry point by point.

pub mod calculus;
pub mod classify;
pub mod expr;
pub mod jet;
pub mod linalg;
pub mod metric;
pub mod verify;
