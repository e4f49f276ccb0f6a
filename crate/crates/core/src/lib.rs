//! Playout smoothing and chunk scheduling for layered P2P video streaming.

pub mod experiment;
pub mod forecast;
pub mod metrics;
pub mod scenario;
pub mod scheduler;
pub mod simnet;
pub mod smoother;
pub mod stream;
