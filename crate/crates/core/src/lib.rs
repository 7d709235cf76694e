//! Transfer of value-function initializations from solved classic-control
//! tasks to deep Q-learning on new tasks.
//!
//! Sources are summarized in a tabular [`kb::KnowledgeBase`]; a learner on a
//! new task blends the derived initialization with its network through a
//! visit-count knownness weight.

pub mod agent;
pub mod env;
pub mod grid;
pub mod kb;
pub mod net;
pub mod rng;
pub mod harness;
pub mod verify;
