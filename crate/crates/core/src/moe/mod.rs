//! Sigmoid-routed mixture of experts with bias-based load balancing.

mod aux;
mod balance;
mod config;
mod expert;
mod layer;
mod routing;
pub mod sim;

pub use aux::{seq_aux_loss, seq_aux_loss_value};
pub use balance::{max_vio, BiasUpdate, LoadStats, MoeStepRecord, RouterState};
pub use config::{BalancerKind, BalancerParams, MoeConfig};
pub use expert::{swiglu_expert, ExpertVars, ExpertWeights};
pub use layer::{moe_forward, moe_sublayer, MoeOutput, MoeVars, MoeWeights};
pub use routing::{
    normalize_gates, normalize_gates_row, router_scores, router_scores_value, select_topk,
    NormalizeGates, Routing,
};
