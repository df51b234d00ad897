//! # aurk
//!
//! A verifiable toolkit for facial action unit (AU) detection built around
//! expert-defined face regions:
//!
//! - 68 facial landmarks drive a deterministic 43-region planar partition of
//!   the face image.
//! - Regions are grouped into AU masks, reduced to minimum bounding boxes,
//!   and carry RoI-level multi-label ground truth under a space constraint
//!   with label-fetch edges between overlapping groups.
//! - A small from-scratch neural stack (conv, RoI max pooling, fully
//!   connected, multi-label sigmoid cross-entropy, momentum SGD) trains a
//!   per-region classifier; RoI predictions are thresholded at zero and
//!   merged back to image level with a bit-wise OR.
//! - Dynamic extensions model RoI timelines with a ConvLSTM head and fuse
//!   RGB with precomputed optical flow through channel concatenation plus a
//!   1x1 convolution.
//! - An evaluation harness reports frame-based per-AU F1, activity duration
//!   statistics, box-area tables and mean-box tables.
//!
//! Everything is exercised end to end on a built-in synthetic dataset; no
//! licensed face database is required. The `aurk` binary exposes the
//! pipeline (`partition`, `synth`, `train`, `infer`, `eval`, `stats`,
//! `mean-box`); file formats are documented in `FORMATS.md`.

pub mod csvutil;
pub mod error;
pub mod geom;
pub mod gradcheck;
pub mod rng;

pub mod landmarks;
pub mod layout;

pub mod au_table;
pub mod labels;

pub mod tensor;

pub mod nn;

pub mod dynamic;

pub mod eval;

pub mod cache;
pub mod config;
pub mod model;
pub mod pipeline;
pub mod synth;

pub mod cli;

pub use error::{Error, Result};
