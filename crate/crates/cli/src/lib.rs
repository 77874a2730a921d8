//! Serializable payloads emitted by the `wlax` command.

pub mod payload;
