//! Learning low-rank decompositions of the matrix-multiplication tensor with
//! a multiplier network trained by conservative learning.
//!
//! The network pools an unrolled `n × n` input pair `(a, b)` into `r`
//! multipliers and pools their products into the output `c`. Weights that
//! reproduce `C = AB` for every input are exactly a rank-`r` decomposition of
//! `M_n`, and [`tensor::decomposition_error`] measures how far a weight set is
//! from one.

pub mod error;
pub mod network;
pub mod tensor;
pub mod trainer;
pub mod update;
pub mod weights;

pub use error::{Error, Result};
pub use network::{forward, init_weights, strassen_fixture, unrolled_product, ForwardState, TrainingItem};
pub use tensor::{
    build_matmul_tensor, condition_number, decomposition_error, reconstruct_tensor, transform_decomposition,
    MatMulTensor,
};
pub use trainer::{
    classify_run, max_weight_magnitude, run_training, run_training_from, sample_item, Classification, Outcome,
    RunConfig, RunTrace, Sample,
};
pub use update::{
    apply_g, backprop_alpha_beta, compute_gamma, conservative_update, linear_cl_update, Learner, UpdateIntermediates,
    UpdateMode,
};
pub use weights::WeightSet;
