//! Decentralized circle-formation control of fish-like robots with
//! value-decomposition multi-agent reinforcement learning.
//!
//! The crate bundles the robot motion model, the formation environment, a
//! small dense network engine, the learners (C2VDN, VDN, independent DQN),
//! and the evaluation harness used to score trained controllers.

pub mod cli;
pub mod config;
pub mod cpg;
pub mod dynamics;
pub mod env;
pub mod eval;
pub mod geom2d;
pub mod marl;
pub mod nn;
