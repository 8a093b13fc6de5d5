//! Masked aggregation of client vectors with dropout recovery.
//!
//! A trusted dealer hands every participant a self-mask seed and one shared
//! seed per peer pair; both kinds of seed are also Shamir-shared so that any
//! `t` of the participants can reconstruct them. Each client uploads its
//! vector encoded into fixed point plus its self-mask stream plus the signed
//! pairwise streams; paired streams cancel in the sum. The server removes
//! self-masks of the vectors it received and the dangling pairwise streams
//! of clients whose upload was lost, querying the live participants for the
//! relevant shares over a simulated message bus.

mod bus;
mod codec;
mod protocol;
mod shamir;

pub use bus::{Envelope, SimBus};
pub use codec::FixedPointCodec;
pub use protocol::{run_protocol, DropPhase, ProtocolOutcome, SecureAggParams};
pub use shamir::{reconstruct, share_secret, PrimeField, Share};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SecureAggError {
    #[error("only {delivered} masked inputs delivered, threshold {threshold}")]
    TooFewSurvivors { delivered: usize, threshold: usize },

    #[error("only {responders} participants answered share requests, threshold {threshold}")]
    TooFewResponders { responders: usize, threshold: usize },

    #[error("inconsistent shares while reconstructing {what}")]
    ShareIntegrity { what: String },

    #[error("protocol state: {0}")]
    State(String),

    #[error("malformed message: {0}")]
    Frame(String),

    #[error("bad parameters: {0}")]
    Params(String),
}
