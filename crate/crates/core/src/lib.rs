pub mod certification;
pub mod error;
pub mod estimation;
pub mod inference;
pub mod interactions;
pub mod linalg;
pub mod optimize;
pub mod photonics;
pub mod rng;
pub mod scenarios;
pub mod validation;
