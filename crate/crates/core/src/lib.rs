pub mod calibrator;
pub mod error;
pub mod group;
pub mod independence;
pub mod martingale;
pub mod numerics;
pub mod oracle;
pub mod rank;
pub mod rng;
pub mod selfcheck;
pub mod sim;
pub mod stream;
pub use error::{Error, Result};
