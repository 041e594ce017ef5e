//! In-memory query engine with a modular, plan-based adaptive query processing
//! driver.

pub mod bench;
pub mod cardinality;
pub mod catalog;
pub mod clock;
pub mod driver;
pub mod error;
pub mod executor;
pub mod optimizer;
pub mod plan;
pub mod plan_json;
pub mod query;
pub mod router;
pub mod splitter_dag;
pub mod splitter_tree;
pub mod sql;
pub mod types;
pub mod workload;

pub use error::{Error, Result};
