//! Parameter-selection agent: action space, state encoder, policy
//! network, and PPO training.

pub mod action;
pub mod encoder;
pub mod policy;
pub mod ppo;

pub use action::{ActionBins, ActionParams};
pub use encoder::{StateEmbedding, StateEncoder, EMBED_DIM};
pub use policy::{ActionIndices, PolicyNet, SelectMode};
pub use ppo::{Environment, PpoConfig, PpoTrainer, StepOutcome, Transition};
