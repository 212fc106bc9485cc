//! Core algorithms for adapting an English-oriented causal language model to a
//! new language: unigram subword tokenization, vocabulary/embedding transplant,
//! corpus deduplication and filtration, a small decoder-only transformer with
//! exact analytic gradients, KL-regularized continued pre-training, instruction
//! tuning, and evaluation.
//!
//! The crate is `no_std` + `alloc`; all IO, file handling, and the CLI live in
//! the companion `langadapt` crate. Every algorithm here is deterministic given
//! its seed.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod corpus;
pub mod eval;
pub mod instruct;
pub mod model;
pub mod rng;
pub mod tokenizer;
pub mod trainer;
pub mod transplant;

pub(crate) mod math;
