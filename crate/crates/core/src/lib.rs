//! Probabilistic scene grammars compiled to factor graphs, with loopy belief
//! propagation and EM parameter learning.

pub mod factorgraph;
pub mod grammar;
pub mod rng;
pub mod sampler;
pub mod bp;
pub mod em;
pub mod evidence;
pub mod image;
pub mod eval;
pub mod experiments;
