//! Reverse-mode autodiff tape and the feed-forward networks built on it.

mod net;
mod tape;

pub use net::{FeedForwardNet, NetVars};
pub use tape::{Gradients, Tape, Var};
