//! Live teleoperation service: operator head pose and zoom commands drive
//! the virtual PTZ camera, rendered frames stream back at 60 Hz, and
//! sessions can be recorded as episodes.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{Inbound, Outbound, Role};
pub use server::Server;
pub use session::{Session, SessionConfig};
