//! Image codec that represents a picture as a budgeted set of 2D Gaussian
//! primitives.
//!
//! Encoding places primitives with feature-guided sampling ([`init`]), refines
//! them by gradient descent through a differentiable rasterizer ([`render`],
//! [`train`]) and serializes them ([`codec`]). Decoding rasterizes the stored
//! primitives at any canvas size.

pub mod codec;
pub mod error;
pub mod features;
pub mod init;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod render;
pub mod train;

pub use codec::{decode, encode, Encoded, StorageMode};
pub use error::{Error, Result};
pub use model::{
    compute_budget, influence_radius, BlendMode, Budget, EncoderConfig, GaussianSet, ImageBuffer, LearningRates, Real,
};
pub use init::{initialize, initialize_with, InitStrategy, Initialization};
pub use pipeline::{decode_render, encode_image, AblationVariant, EncodeOutcome};
pub use render::{backward, render, render_with, GradientSet, RenderOptions, RenderOutput};
pub use train::{composite_loss, train, train_with, Progress, TrainState};
