pub mod analytics;
pub mod behavior;
pub mod content;
pub mod conversation;
pub mod dialogue;
pub mod server;
pub mod session;
pub mod simbot;
pub mod world;
