//! Dissipative spin-boson electron-transfer simulator.

pub mod bath;
pub mod error;
pub mod fock;
pub mod hardware;
pub mod io;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod propagation;
pub mod rates;
pub mod scan;
pub mod sparse;

pub use error::{Error, Result};
