//! Numerical laboratory for the hypersymplectic flow on the flat 4-torus.
//!
//! The crate evolves triples of closed 2-forms under the flow
//! `dw/dt = d(Q d*(Q^-1 w))`, monitors every conserved and monotone quantity
//! attached to the flow, and constructs exact torsion-free reference
//! structures from an S^1-invariant ansatz.

pub mod algebra;
pub mod curvature;
pub mod diagnostics;
pub mod donaldson;
pub mod error;
pub mod fields;
pub mod flow;
pub mod runner;
pub mod spd;

pub use error::{HsError, Result};
