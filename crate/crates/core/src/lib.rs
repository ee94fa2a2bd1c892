//! Feedback-driven prompt optimization for text-to-image generation.
//!
//! A user prompt is decomposed into a question graph ([`scene_graph`]), a
//! generated image is checked against it ([`reflection`]), and the concepts
//! the image misses drive a targeted rewrite of the prompt ([`optimizer`]).
//! [`pipeline`] ties the stages together and [`bench`] aggregates scores
//! over prompt datasets. All model access goes through [`backends`].

pub mod scene_graph;
pub mod backends;
pub mod templates;
pub mod reflection;
pub mod optimizer;
pub mod pipeline;
pub mod bench;
pub mod fixtures;
