//! Few-shot attribute learning at desk scale.
//!
//! An episode labels items positive when they satisfy a hidden conjunction of
//! one or two attributes; test attributes are disjoint from the attributes
//! available during representation learning. This crate implements the full
//! pipeline on synthetic worlds and real attribute annotation files:
//!
//! - [`numkit`]: deterministic dense numerics, seeded RNG streams, Adam.
//! - [`attrdata`]: attribute matrices, ingestion, splits, canonical files.
//! - [`synthgen`]: linear generative model and configurable attribute worlds.
//! - [`episodes`]: balanced support/query episode sampling.
//! - [`embedders`]: representation learning (prototypical, contrastive,
//!   supervised-attribute, finetuning with projection heads).
//! - [`fewshot`]: per-episode classifiers (NN, NC, L1 logistic regression,
//!   ground-truth oracle).
//! - [`analysis`]: metrics, readout, transferability score, sweeps, and
//!   kernel-projection heatmaps.

pub mod analysis;
pub mod attrdata;
pub mod embedders;
pub mod episodes;
pub mod error;
pub mod fewshot;
pub mod numkit;
pub mod parallel;
pub mod synthgen;

pub use error::{Error, Result};
