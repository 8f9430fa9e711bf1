pub mod baseline;
pub mod cli;
pub mod cluster;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod glm;
pub mod math;
pub mod phc;
pub mod simulation;
