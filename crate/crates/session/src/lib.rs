pub mod api;
pub mod config;
pub mod events;
pub mod persist;
pub mod pipeline;
pub mod replay;
pub mod report;
pub mod rig;
pub mod scenarios;
pub mod session;
pub mod store;
