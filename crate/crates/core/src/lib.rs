pub mod analyzer;
pub mod cognition;
pub mod domain;
pub mod llm;
pub mod prompts;
pub mod triggers;
pub mod review;
pub mod feedback;
pub mod decision;
pub mod alerts;
pub mod config;
pub mod session;
pub mod sim;
