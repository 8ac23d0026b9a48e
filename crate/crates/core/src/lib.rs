pub mod cmal;
pub mod data;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod vocab;
