//! Multi-agent vaccine allocation on metapopulation mobility networks.
//!
//! Modules follow the data flow of a run: [`net`] builds the mobility network,
//! [`scenario`] draws an instance, [`harness`] drives [`policy`], [`epi`] and
//! [`sharing`] period by period, and [`io`] reads and writes the tables.

pub mod epi;
pub mod error;
pub mod harness;
pub mod io;
pub mod net;
pub mod policy;
pub mod scenario;
pub mod sharing;
pub mod streams;

pub use error::{Error, Result};
