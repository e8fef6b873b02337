pub mod cli;
pub mod config;
pub mod curator;
pub mod geo;
pub mod maturity;
pub mod metrics;
pub mod preprocess;
pub mod segmenter;
pub mod synth;
