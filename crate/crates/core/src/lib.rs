//! Core of a two-coder qualitative analysis workbench.
//!
//! A project moves through open coding, discussion and grouping. Each coder
//! codes every data unit independently; once both are done the pair compare
//! codes side by side, settle on one decision per unit, and finally group the
//! decisions into themes. Agreement (Cohen's kappa, similarity agreement rate)
//! is reported along the way and an LLM can suggest codes at every step.
//!
//! State is event-sourced: [`workflow::ProjectState`] validates requests into
//! [`workflow::Mutation`]s, and [`store::Store`] persists them in order.

pub mod config;
pub mod embedding;
pub mod llm;
pub mod metrics;
pub mod model;
pub mod segmenter;
pub mod service;
pub mod store;
pub mod workflow;

pub use config::Settings;
pub use service::{Error, Workspace};
pub use store::Store;
