#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod belief;
pub mod cli;
pub mod data;
pub mod error;
pub mod features;
pub mod network;
pub mod oracle;
pub mod sim;
pub mod verify;
pub mod vi;

pub use error::{Error, Result};
