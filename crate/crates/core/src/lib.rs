//! Global-to-local safe autonomy synthesis for multi-robot motion planning.
//!
//! The crate covers the whole pipeline: random instances ([`world`]), a
//! centralized substitute expert and demonstration extraction ([`expert`]),
//! local observations ([`observation`]), the Deep-Set policy with exact reverse
//! mode through the safety blend ([`policy`], [`safety`]), imitation training
//! ([`training`]) and closed-loop evaluation ([`sim`]).

pub mod error;
pub mod expert;
pub mod geom;
pub mod observation;
pub mod par;
pub mod policy;
pub mod safety;
pub mod sim;
pub mod training;
pub mod world;

pub use error::{GlasError, Result};
pub use geom::Vec2;
pub use observation::{ObsCaps, Observation};
pub use safety::{SafetyEval, SafetyParams};
pub use world::{Dynamics, EnvInstance, RobotState};
