//! Simulation and analysis of switching piecewise deterministic Markov
//! processes.
//!
//! A process is given by a finite family of vector fields on a box, one per
//! regime, and state-dependent jump rates between regimes. The crate samples
//! it exactly in law by thinning, estimates occupation measures, checks Lie
//! bracket and submersion rank conditions, and approximates accessible sets
//! on a grid.

pub mod brackets;
mod error;
pub mod examples;
pub mod expr;
pub mod flow;
pub mod measure;
pub mod reach;
pub mod rng;
pub mod simulate;
pub mod system;

pub use error::{Error, Result};
pub use examples::ExampleSpec;
pub use expr::{parse, Expr, ExprError};
pub use flow::{FlowResult, PullbackFamily, PullbackVariant};
pub use brackets::BracketReport;
pub use measure::{EmpiricalMeasure, Histogram};
pub use reach::ReachGrid;
pub use rng::StreamRng;
pub use simulate::HybridPath;
pub use system::{JumpSequence, StateBox, SwitchingSystem, SystemBuilder, VectorField};
