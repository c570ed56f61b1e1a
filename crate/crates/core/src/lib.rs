pub mod association;
pub mod autograd;
pub mod data;
pub mod error;
pub mod eval;
pub mod imageio;
pub mod inference;
pub mod level;
pub mod mask;
pub mod model;
pub mod mpe;
pub mod nn;
pub mod resize;
pub mod tcm;
pub mod training;

pub use error::{AimsError, Result};
pub use level::{Level, LevelPair};
pub use mask::{Mask, Rle};
pub use model::{AimsModel, ModelConfig};
