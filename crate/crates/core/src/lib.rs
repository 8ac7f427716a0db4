//! Bearing-based formation maneuver control of double-integrator agents.
//!
//! Leaders move under a prescribed maneuver (translation plus uniform
//! scaling); followers track the unique formation consistent with the
//! leaders and the desired bearings using one of several distributed laws.

pub mod analysis;
pub mod cli;
pub mod controllers;
pub mod error;
pub mod formation;
pub mod integrator;
pub mod linalg;
pub mod maneuver;
pub mod scenario;
pub mod simulator;

pub use controllers::{ControlLaw, ControllerConfig, ControllerState, SatKind};
pub use error::{Error, ReasonCode, Result};
pub use formation::{BearingLaplacian, BearingSpec, FormationGraph, FormationState};
pub use maneuver::{ManeuverProfile, Segment, SegmentKind, Signal};
pub use simulator::{PreparedScenario, Scenario, SimResult, Summary};
