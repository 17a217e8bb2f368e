//! Causal debiasing for multimodal prediction with missing modalities.
//!
//! The crate is `no_std` and needs only `alloc`. It contains the
//! differentiable tensor engine, the synthetic structural-causal data
//! generator with MCAR/MNAR masking, the bipartite patient–modality graph
//! network, the causal/bias disentanglement branch pair, the missingness
//! deconfounding dictionary, and the evaluation metrics. File formats and
//! the command-line interface live in the companion `cadlab` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod cbdm;
pub mod graph;
pub mod math;
pub mod mdm;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scm;
pub mod tensor;
pub mod train;
