//! Core of the WebXAII experiment platform: protocol configuration, the
//! participant session engine, the event log, the participant registry and
//! the headless simulator.

pub mod config;
pub mod connection;
pub mod events;
pub mod order;
pub mod platform;
pub mod session;
pub mod simulate;
pub mod time;
