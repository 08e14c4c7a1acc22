pub mod base_measure;
pub mod error;
pub mod random;
pub mod stap;
pub mod hmm;
pub mod mcmc;
pub mod io;
pub mod analysis;
pub mod cli;
