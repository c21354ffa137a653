//! Numerical toolkit for critical Hardy–Sobolev energies on the round sphere.

pub mod bubbles;
pub mod constants;
pub mod decomposition;
pub mod error;
pub mod expansion;
pub mod field;
pub mod grid;
pub mod manifold;
pub mod quadrature;
pub mod solver;

pub use bubbles::{BubbleKind, BubbleProfile, EnergyBreakdown, Functional};
pub use constants::{compute_constants, CriticalConstants, ProblemParams};
pub use decomposition::{DecompositionReport, DecompositionSetup, GlueSpec};
pub use error::{Error, Result};
pub use expansion::{ExistenceReport, ExpansionReport, ExpansionSetup};
pub use grid::{DiscreteRadialField, RadialGrid};
pub use manifold::{Cutoff, PotentialField, SphereModel};
pub use quadrature::{Estimate, IntegralSpec, Quadrature, RadialHints, Upper};
pub use solver::{MultistartResult, SolverConfig, SolverResult};
