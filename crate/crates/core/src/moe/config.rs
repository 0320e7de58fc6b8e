use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which bias update runs between optimizer steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalancerKind {
    /// `Δb = γ·sign(n̄ − n)` followed by re-centering of `b`.
    Sign,
    /// Soft-clamped momentum updates.
    #[default]
    Smebu,
    None,
}

impl std::str::FromStr for BalancerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sign" => Ok(Self::Sign),
            "smebu" => Ok(Self::Smebu),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!(
                "unknown balancer {other:?} (sign|smebu|none)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoeConfig {
    pub n_routed: usize,
    pub n_shared: usize,
    pub top_k: usize,
    pub expert_dim: usize,
    /// Multiplies every gated routed-expert contribution.
    pub route_scale: f64,
    pub aux_alpha: f64,
    pub balancer: BalancerKind,
}

impl MoeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 || self.top_k > self.n_routed {
            return Err(Error::Config(format!(
                "top_k must be in 1..={}, got {}",
                self.n_routed, self.top_k
            )));
        }
        if self.expert_dim == 0 {
            return Err(Error::Config("expert_dim must be positive".into()));
        }
        if !(self.route_scale > 0.0) || !self.route_scale.is_finite() {
            return Err(Error::Config(format!(
                "route_scale must be positive, got {}",
                self.route_scale
            )));
        }
        if !(self.aux_alpha >= 0.0) {
            return Err(Error::Config(format!(
                "aux_alpha must be >= 0, got {}",
                self.aux_alpha
            )));
        }
        Ok(())
    }
}

/// Hyperparameters of both bias update rules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalancerParams {
    pub gamma: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub beta: f64,
}

impl Default for BalancerParams {
    fn default() -> Self {
        Self {
            gamma: 5e-4,
            lambda: 5e-4,
            kappa: 2.0,
            beta: 0.5,
        }
    }
}
