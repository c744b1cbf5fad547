pub mod error;
pub mod linalg;
pub mod pade;
pub mod theta_kernel;
pub mod garnier_model;
pub mod theta_space;
pub mod evolution;
pub mod verifier;
pub mod cli;
