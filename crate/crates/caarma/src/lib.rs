//! Class augmentation for zero-shot speaker verification: synthetic-class
//! mixup in embedding space with adversarial refinement against a semantic
//! discriminator, plus a desk-scale training and evaluation harness.

pub mod checks;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod features;
pub mod graph;
pub mod losses;
pub mod mixup;
pub mod nn;
pub mod par;
pub mod tensor;
pub mod trainer;
