//! Distributed oblivious RAM toolkit: four-server DPF scheme, three-server and
//! m-server hierarchical schemes, a worst-case two-server variant, and a
//! metered simulation harness.

pub mod aead;
pub mod audit;
pub mod bus;
pub mod config;
pub mod deamortize;
pub mod dpf;
pub mod error;
pub mod four;
pub mod harness;
pub mod hashing;
pub mod hier;
pub mod hierarchy;
pub mod oblivious;
pub mod oram;
pub mod pir;
pub mod prf;
pub mod prg;
pub mod record;
pub mod sort;

pub use config::{Config, Hashing, Mutation, Scheme};
pub use error::{Error, Result};
pub use oram::{build, Op, Oram};
