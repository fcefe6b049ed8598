//! Realtime operator sessions over WebSocket: a fixed-rate tick loop drives
//! a fleet while one connected console teleoperates the controlled robot.

pub mod app;
pub mod protocol;
pub mod session;

pub use app::{spawn, Running, ServerConfig};
pub use protocol::{Inbound, Mode, Outbound, StateFrame};
pub use session::{LogEvent, Phase, Session, SessionLogs, SessionSetup};
