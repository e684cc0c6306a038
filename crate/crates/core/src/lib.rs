//! Race-strategy engine for hybrid-electric race cars: lap-by-lap simulator,
//! mixed-integer optimizer, reinforcement-learning environment and agent, and
//! the benchmark harness comparing them.

pub mod agent;
pub mod bench;
pub mod compound;
pub mod config;
pub mod env;
pub mod error;
pub mod laptime;
pub mod minlp;
pub mod model;

pub use compound::{Compound, PitAction};
pub use config::RaceConfig;
pub use model::{ControlInput, RaceState};
