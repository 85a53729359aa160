//! The toy autoregressive policy: a log-linear token model over hashed
//! state features, with exact log-probabilities, analytic gradients,
//! truncated sampling and exhaustive enumeration.
//!
//! Parameters are immutable values while sampling; training produces new
//! instances, so any number of samplers can read one snapshot concurrently.

mod features;
mod params;
mod sample;
mod vocab;

pub use features::{featurize, FeatureSpec, PromptContext, StateTracker};
pub use params::{
    load_checkpoint, log_softmax, save_checkpoint, softmax_from_logprobs, GradBuffer,
    PolicyParams, CHECKPOINT_VERSION,
};
pub use sample::{enumerate_trajectories, sample, SampleConfig, Trajectory};
pub use vocab::{UntokenizableAt, Vocabulary, EOS, REFLECT};
