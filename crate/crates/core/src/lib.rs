//! Isogeometric Kirchhoff-Love shell analysis on AS-G1 multi-patch spline surfaces,
//! discretised with an exactly C1-smooth spline space built from patch, edge and vertex
//! basis functions.

pub mod error;
pub mod spline;
pub mod topology;
pub mod gluing;
pub mod c1basis;
pub mod sparse;
pub mod shell;
pub mod factory;
pub mod solvers;
pub mod io;

pub use error::{Error, Result};
