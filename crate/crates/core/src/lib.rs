pub mod autodiff;
pub mod encoders;
pub mod error;
pub mod geometry;
pub mod nn;
pub mod params;
pub mod tensor;
pub mod fusion;
pub mod decoder;
pub mod text;
pub mod dataset;
pub mod model;
pub mod training;
pub mod metrics;
pub mod judge;
