//! Service boundary: scene state machine, WebSocket API and CLI.

pub mod cli;
pub mod protocol;
pub mod server;
pub mod workbench;
