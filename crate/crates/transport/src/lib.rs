//! Out-of-process plumbing for the sandbox: a `tool.v1` client that plugs
//! into the registry as a [`Backend`](spatial_core::tools::Backend), a mock
//! server answering from synthetic scenes, and a chat-completions agent.

mod agent;
mod client;
mod server;

pub use agent::{chat_messages, RemoteAgent, AGENT_ENDPOINT_ENV, SYSTEM_PROMPT};
pub use client::{ClientError, RemoteBackend, RetryPolicy, DEFAULT_DEADLINE};
pub use server::{MockServer, ServeError, TIMEOUT_OVERSHOOT};
