//! Restructuring trained dense networks for parallel inference over several
//! workers.
//!
//! The pipeline permutes each layer's neurons onto workers with an optimal
//! assignment, hard-thresholds the weights that would cross workers, certifies
//! the resulting output error, executes the sharded model, and estimates
//! compute and communication time on reference platforms.

pub mod assignment;
pub mod dist;
pub mod error;
pub mod io;
pub mod model;
pub mod partition;
pub mod repurpose;
pub mod simulator;
pub mod synth;
pub mod tensor;

pub use assignment::{
    assign_neurons, brute_force_assign, build_cost_matrix, column_cost, count_assignments, munkres,
    AssignmentResult, CostMatrix, RepurposeConfig,
};
pub use dist::{distributed_forward, shard_model, CommLog, DistOutput, ExecMode, ShardedModel};
pub use error::{Error, Result};
pub use io::{load_model, save_model};
pub use model::{Activation, ConvLayer, DenseLayer, Layer, SequentialModel};
pub use partition::{apply_permutation, build_mask, cross_edge_count, MaskMatrix, PartitionSpec, Permutation};
pub use repurpose::{
    calibrate_eta2, direct_sparsify, error_certificate, hard_threshold_matrix, repurpose_conv, repurpose_model,
    ErrorCertificate, RepurposedModel,
};
pub use simulator::{simulate, speedup_report, theoretical_comm_per_node, PlatformConfig, SimReport, Workload};
pub use tensor::Tensor;
