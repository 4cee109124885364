//! Lexicon-bootstrapped, human-in-the-loop named-entity annotation for drug
//! names: corpus streaming, IOB span codecs, a CRF tagger, the three-phase
//! annotation workflow, entity-level evaluation and corpus-wide extraction.

#![allow(clippy::needless_range_loop)]

pub mod annotations;
pub mod corpus;
pub mod eval;
pub mod extract;
pub mod lexicon;
pub mod synth;
pub mod tagger;
pub mod workflow;
