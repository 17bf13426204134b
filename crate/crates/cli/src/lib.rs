pub mod commands;
pub mod config;
pub mod identities;
pub mod error;
