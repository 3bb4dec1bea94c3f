pub mod autodiff;
pub mod error;
pub mod loss;
pub mod metrics_oracle;
pub mod network;
pub mod optimizer;
pub mod reference;
pub mod sampling;
pub mod trainer;

pub use error::{Error, Result};
