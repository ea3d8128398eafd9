pub mod hpmath;
pub mod sequences;
pub mod model;
pub mod engine;
pub mod analysis;
