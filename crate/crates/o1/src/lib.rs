//! Simulated O1 interface: a newline-delimited JSON wire protocol, an O-DU
//! server that replays tenant demand and records allocations, and the client
//! session used by the rApp.

pub mod client;
pub mod codec;
pub mod server;

pub use client::{AllocationSender, ClientConfig, ClientSession};
pub use codec::{decode, encode, read_frame, CodecError, MsgType, O1Message, Payload, PROTOCOL_VERSION};
pub use server::{serve_odu, AllocationRecord, OduServer, ServerOptions};

use std::io;
use std::time::Duration;

#[derive(Debug, thiserror::Error)]
pub enum O1Error {
    #[error("codec: {0}")]
    Codec(#[from] CodecError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("no connection to {0}")]
    NotConnected(String),
    #[error("no ACK for message {msg_id} within {timeout:?}")]
    Timeout { msg_id: u64, timeout: Duration },
    #[error("message {msg_id} rejected: {code}: {text}")]
    Rejected { msg_id: u64, code: String, text: String },
    #[error(transparent)]
    Core(#[from] prbcast_core::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, O1Error>;
