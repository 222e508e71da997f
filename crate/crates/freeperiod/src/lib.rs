//! Numerical toolkit for periodic orbits of prescribed energy in convex
//! Lagrangian systems on complete Riemannian manifolds.
//!
//! The central object is the free-period action functional
//!
//! ```text
//! S_k(x, T) = T * integral_0^1 L(x(t), x'(t)/T) dt + k*T
//! ```
//!
//! defined on pairs (loop, period). Its critical points are exactly the
//! periodic solutions of the Euler-Lagrange equations with energy `k`.
//! The crate discretizes loops, evaluates `S_k` and its differential,
//! runs bounded-speed gradient flows, confines descent with action
//! non-increasing shrinking maps, and extracts critical points through
//! minimax schemes (mountain pass, sweepouts, class minimization).
//! Candidate orbits are certified a posteriori by independent
//! Euler-Lagrange residual checks and shooting reintegration.

pub mod critvals;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod gradientflow;
pub mod lagrangian;
pub mod loopspace;
pub mod minimax;
pub mod scenario;
pub mod shrink;
pub mod verify;

pub use error::FpError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, FpError>;
