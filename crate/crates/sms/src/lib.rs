//! Solver framework for shape-morphing approximate solutions of
//! time-dependent PDEs: a parameterized ansatz is evolved by projecting the
//! PDE dynamics onto the tangent space of the parameterization, yielding an
//! ODE system for the parameters.

pub mod ansatz;
pub mod assembly;
pub mod config;
pub mod constraints;
pub mod embeddings;
pub mod error;
pub mod gausscalc;
pub mod jet;
pub mod operator;
pub mod output;
pub mod quadrature;
pub mod scenarios;
pub mod stepper;

pub use error::{Result, SmsError};
