//! Off-policy adversarial imitation: a learned discriminator reward, a
//! TD-trained critic, and a deterministic-policy-gradient actor, trained
//! against scripted experts on small continuous-control tasks.

pub mod error;
pub mod actor_critic;
pub mod adversary;
pub mod envs;
pub mod exploration;
pub mod nn;
pub mod replay;
pub mod sync;
pub mod trainer;

pub use error::{Error, Result};
