pub mod agent;
pub mod backend;
pub mod bench;
pub mod fleet;
pub mod gateway;
pub mod media;
pub mod toolkit;
