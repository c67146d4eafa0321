//! Monte-Carlo harness around the `xltrack` tracker.

pub mod config;
pub mod error;
pub mod run;
pub mod sweep;
pub mod verify;
