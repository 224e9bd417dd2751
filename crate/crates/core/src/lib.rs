//! Simulation and verification of non-singular Bernoulli shifts `G ↷ {0,1}^G`,
//! their Radon–Nikodym cocycles and Maharam extensions.

pub mod cocycle;
pub mod config;
pub mod construction;
pub mod error;
pub mod family;
pub mod group;
pub mod maharam;
pub mod report;
pub mod rng;
pub mod stats;

pub use config::{cylinder_measure, exact_rn, sample, Configuration, CylinderSet, FinitelyPerturbedFamily};
pub use error::{LabError, Result};
pub use family::{EtaWeights, KakutaniTail, MarginalFamily, PinRule, Side, Sign};
pub use group::{GroupElement, GroupKind, GroupModel};
