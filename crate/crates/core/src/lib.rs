pub mod data;
pub mod discriminator;
pub mod envmap;
pub mod error;
pub mod image;
pub mod metrics;
pub mod objectives;
pub mod relightnet;
pub mod trainer;

pub use error::{Error, ErrorClass, Result};

/// Re-exported so front-ends can pick a device without depending on candle.
pub use candle_core::Device;
