//! Information-theoretic model of shared codes under parasitic attack.
//!
//! Agents encode a discrete environment with codes and read each other's
//! messages according to an interaction graph. The crate computes every
//! measure of the model exactly over finite distributions ([`probkit`],
//! [`popmodel`], [`metrics`]), evolves codes and structure with a genetic
//! algorithm ([`optimizer`]), scripts the attack and response experiments
//! ([`scenarios`]) and writes their data files ([`reportkit`]).

pub mod error;
pub mod metrics;
pub mod optimizer;
pub mod popmodel;
pub mod probkit;
pub mod reportkit;
pub mod scenarios;

pub use error::{Error, Result};
pub use popmodel::{AgentId, Code, Environment, InteractionGraph, Population};
