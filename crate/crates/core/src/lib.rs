//! Interaction-aware decision making for highway forced merging.
//!
//! The crate is organized bottom-up:
//!
//! * [`world`]: road geometry, vehicle state, the five-action space and the
//!   discrete-time kinematic update.
//! * [`rewards`]: the reward variables (collision, headway, progress, effort),
//!   the personal reward and the social-value-orientation weighted reward.
//! * [`behavior`]: the receding-horizon driver model and its softmax policies.
//! * [`intent`]: the recursive Bayesian filter over latent driver intent.
//! * [`planner`]: the ego vehicle's merging controller under intent uncertainty.
//! * [`sim`]: closed-loop scenario runner and outcome classification.
//! * [`dataio`]: naturalistic trajectory CSV ingestion, merge episode
//!   extraction, replay evaluation and a synthetic dataset generator.
//! * [`cli`]: the `mergesim` command-line front end.

pub mod behavior;
pub mod cli;
pub mod dataio;
mod error;
pub mod intent;
pub mod params;
pub mod planner;
pub mod rewards;
pub mod sim;
pub mod world;

pub use error::{Error, Result};
pub use params::ModelParams;
