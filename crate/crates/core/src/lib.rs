pub mod backbone;
pub mod cli;
pub mod data;
pub mod evaluation;
pub mod layers;
pub mod tensor;
pub mod training;
