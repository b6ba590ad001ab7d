pub mod autodiff;
pub mod dictionary;
pub mod integrate;
pub mod models;
pub mod params;
pub mod data;
pub mod eval;
pub mod train;
pub mod repro;
