pub mod corpus;
pub mod describe;
pub mod error;
pub mod eval;
pub mod featurizer;
pub mod fixture;
pub mod gateway;
pub mod index;
pub mod model;
pub mod pipeline;
pub mod prompts;
pub mod revival;
pub mod tokenizer;
pub mod weights;

pub use error::{Error, Result};
pub use featurizer::FeatureRef;
