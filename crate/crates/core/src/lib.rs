//! Learning configuration-dependent arm stiffness from keypoint trajectories
//! and validating it in a two-endpoint impedance sawing simulation.

pub mod config;
pub mod gmm;
pub mod ingest;
pub mod pipeline;
pub mod planner;
pub mod seed;
pub mod sim;
pub mod skill;
pub mod spd;
pub mod stiffness;
pub mod synth;
pub mod tables;

pub use ingest::ArmFrame;
pub use spd::CholVector;
pub use stiffness::{StiffnessMatrix, StiffnessParams};
