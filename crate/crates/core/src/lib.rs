//! Numerical toolkit for random skew products `F(w, x) = (T(w), f_w(x))` over
//! Bernoulli shifts with one-dimensional fibers.
//!
//! Modules:
//! - `contraction`, `zooming`: zooming contractions and random zooming times
//! - `pressure`: separated sets and Carathéodory dynamic-ball covers
//! - `measures`, `equilibrium`: fiber entropy, Ulam cocycles, equilibrium candidates
//! - `potentials`: potentials and the zooming/hyperbolic gap checks

pub mod cli;
pub mod config;
pub mod contraction;
pub mod equilibrium;
pub mod error;
pub mod measures;
pub mod potentials;
pub mod pressure;
pub mod seeds;
pub mod stats;
pub mod system;
pub mod zooming;

pub use contraction::{AxiomReport, LipschitzRule, ZoomingContraction};
pub use equilibrium::UlamModel;
pub use error::{Error, Result};
pub use measures::{MeasureCandidate, MeasureKind, ZoomingFlag};
pub use potentials::Potential;
pub use pressure::PressureEstimate;
pub use system::{BaseProcess, FiberMap, OrbitRecord, Phase, RandomSystem};
pub use zooming::{ZoomingConfig, ZoomingReport};
