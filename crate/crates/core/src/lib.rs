pub mod diagnostics;
pub mod error;
pub mod fourdvar;
pub mod hmc;
pub mod io;
pub mod models;
pub mod optimize;
pub mod rom;
pub mod state;
