//! Real-time synthesis: decode a live latent position every hop, invert it
//! with a cycled noise-phase bank and stream the result, steered over a
//! WebSocket control protocol.

pub mod engine;
pub mod render;
pub mod server;
pub mod state;

pub use engine::{run_stream, Sink, StatsSnapshot, Stream, StreamConfig, StreamStats};
pub use render::{render_samples, render_to_wav, synthesis_bank, Automation, AutomationEvent, FrameRenderer, PHASE_BANK_FRAMES};
pub use server::{router, serve_control, ClientMessage, ControlHub, ServerMessage, Status};
pub use state::{snapshot_channel, ControlState, SnapshotReader, SnapshotWriter};
