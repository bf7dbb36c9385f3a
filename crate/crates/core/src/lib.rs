//! PPO with pluggable state-representation-learning (SRL) objectives,
//! trained on two small control tasks that split observations into a
//! proprioceptive part (policy input) and a privileged part (critic only).

pub mod diffcore;
pub mod agent;
pub mod cli;
pub mod envs;
pub mod error;
pub mod rng;
pub mod srl;
pub mod trainer;

pub use error::{Error, Result};
