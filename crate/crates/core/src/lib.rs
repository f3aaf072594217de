//! Spectral analysis of one-dimensional high-contrast periodic media with a
//! compact defect: limit band structure, finite-ε Bloch problems, defect
//! modes and their localisation, plus a brute-force finite-difference oracle.

pub mod bloch;
pub mod cli;
pub mod defect;
mod chain;
pub mod fundsys;
pub mod model;
pub mod oracle;
pub mod spectrum;
