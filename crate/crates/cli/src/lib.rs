//! Command-line front end: CSV ingestion, the pre-test and robust-inference
//! workflow, confidence sets, simulations and report files.

pub mod app;
pub mod args;
pub mod designs;
pub mod ingest;
pub mod plot;
pub mod report;

pub use app::{load_design, render, run, write_outputs};
pub use report::Report;
