//! Client/server split of encrypted attention over a framed byte stream.
//!
//! The client keeps the secret key, quantizes and encrypts each attention
//! input, and decrypts the result. The server holds only the evaluation key
//! and the compiled plans. With several target layers the client makes one
//! round trip per target layer per decoding step.

pub mod client;
pub mod frame;
pub mod messages;
pub mod server;

pub use client::{Client, DecryptedStep, InProcess, RemoteBackend, TcpTransport, Transport};
pub use frame::{max_payload, Frame, MsgType, DEFAULT_MAX_PAYLOAD, MAX_PAYLOAD_ENV, PROTOCOL_VERSION};
pub use messages::{CiphertextBatch, StepResult};
pub use server::{serve, serve_connection, Preloaded, ServerSession};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Client,
    Server,
}

/// What one end of a session has installed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionState {
    pub role: Role,
    pub version: u32,
    /// Fingerprint of the crypto parameters of the installed key.
    pub key_fingerprint: Option<[u8; 32]>,
    /// Layer and digest of every installed plan.
    pub plan_digests: Vec<(u32, [u8; 32])>,
}
