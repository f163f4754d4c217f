//! Command-line front end for cepmine: training, evaluation, the expert HTTP
//! service, and stream utilities.

pub mod commands;
pub mod service;
