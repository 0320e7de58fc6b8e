use rand::Rng;

use crate::error::{Error, Result};
use crate::moe::balance::LoadStats;
use crate::moe::config::MoeConfig;
use crate::moe::expert::{swiglu_expert, ExpertVars, ExpertWeights};
use crate::moe::routing::{normalize_gates, router_scores, Routing};
use crate::numerics::{Tape, Tensor, TruncatedNormal, Var};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct MoeWeights<T> {
    /// `[d_model × N_r]`; column `i` is the router vector of expert `i`.
    pub router: Tensor<T>,
    pub routed: Vec<ExpertWeights<T>>,
    pub shared: Vec<ExpertWeights<T>>,
}

#[derive(Clone, Debug)]
pub struct MoeVars {
    pub router: Var,
    pub routed: Vec<ExpertVars>,
    pub shared: Vec<ExpertVars>,
}

impl<T: Scalar> MoeWeights<T> {
    pub fn init<R: Rng + ?Sized>(
        d_model: usize,
        cfg: &MoeConfig,
        dist: &TruncatedNormal,
        rng: &mut R,
    ) -> Self {
        let router = dist.sample_tensor(vec![d_model, cfg.n_routed], rng);
        let routed = (0..cfg.n_routed)
            .map(|_| ExpertWeights::init(d_model, cfg.expert_dim, dist, rng))
            .collect();
        let shared = (0..cfg.n_shared)
            .map(|_| ExpertWeights::init(d_model, cfg.expert_dim, dist, rng))
            .collect();
        Self {
            router,
            routed,
            shared,
        }
    }

    pub fn d_model(&self) -> usize {
        self.router.rows()
    }

    pub fn check(&self, d_model: usize, cfg: &MoeConfig) -> Result<()> {
        cfg.validate()?;
        if self.router.shape() != [d_model, cfg.n_routed] {
            return Err(Error::dim(
                "router",
                self.router.shape(),
                &[d_model, cfg.n_routed],
            ));
        }
        if self.routed.len() != cfg.n_routed || self.shared.len() != cfg.n_shared {
            return Err(Error::Config(format!(
                "expected {} routed and {} shared experts, found {} and {}",
                cfg.n_routed,
                cfg.n_shared,
                self.routed.len(),
                self.shared.len()
            )));
        }
        self.routed
            .iter()
            .chain(&self.shared)
            .try_for_each(|e| e.check(d_model, cfg.expert_dim))
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.router];
        for e in self.routed.iter().chain(&self.shared) {
            v.extend(e.tensors());
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![&mut self.router];
        for e in self.routed.iter_mut().chain(self.shared.iter_mut()) {
            v.extend(e.tensors_mut());
        }
        v
    }

    pub fn record(&self, tape: &mut Tape<T>) -> MoeVars {
        MoeVars {
            router: tape.leaf(self.router.clone()),
            routed: self.routed.iter().map(|e| e.record(tape)).collect(),
            shared: self.shared.iter().map(|e| e.record(tape)).collect(),
        }
    }

    /// `(h', stats)` for `u[T × d]`, with `h' = u + shared + routed`.
    pub fn forward(
        &self,
        u: &Tensor<T>,
        cfg: &MoeConfig,
        bias: &[f64],
    ) -> Result<(Tensor<T>, LoadStats)> {
        self.check(u.cols(), cfg)?;
        let mut tape = Tape::new();
        let vars = self.record(&mut tape);
        let uv = tape.leaf(u.clone());
        let out = moe_forward(&mut tape, uv, cfg, &vars, bias, None)?;
        Ok((tape.value(out.output).clone(), out.stats))
    }
}

impl MoeVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = vec![self.router];
        for e in self.routed.iter().chain(&self.shared) {
            v.extend([e.gate, e.up, e.down]);
        }
        v
    }

    /// Inverse of [`Self::all`].
    pub fn from_slice(vars: &[Var], n_routed: usize, n_shared: usize) -> Self {
        let expert = |i: usize| ExpertVars {
            gate: vars[1 + 3 * i],
            up: vars[2 + 3 * i],
            down: vars[3 + 3 * i],
        };
        Self {
            router: vars[0],
            routed: (0..n_routed).map(expert).collect(),
            shared: (n_routed..n_routed + n_shared).map(expert).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MoeOutput {
    /// Either the expert sum alone or `u` plus it, see [`moe_sublayer`] and [`moe_forward`].
    pub output: Var,
    pub scores: Var,
    pub gates: Var,
    pub routing: Routing,
    pub stats: LoadStats,
}

/// Shared experts plus `route_scale`-weighted gated routed experts, without the residual.
///
/// `frozen` replaces the biased top-k selection; use it to differentiate with the
/// routing held fixed.
pub fn moe_sublayer<T: Scalar>(
    tape: &mut Tape<T>,
    u: Var,
    cfg: &MoeConfig,
    w: &MoeVars,
    bias: &[f64],
    frozen: Option<&Routing>,
) -> Result<MoeOutput> {
    cfg.validate()?;
    let tokens = tape.value(u).rows();
    let scores = router_scores(tape, u, w.router)?;
    let routing = match frozen {
        Some(r) => {
            if r.tokens() != tokens || r.n_experts != cfg.n_routed {
                return Err(Error::Contract(
                    "frozen routing does not match the input".into(),
                ));
            }
            r.clone()
        }
        None => Routing::select(tape.value(scores), bias, cfg.top_k)?,
    };
    let gates = normalize_gates(tape, scores, &routing)?;
    let mut parts = Vec::with_capacity(cfg.n_shared + cfg.n_routed);
    for e in &w.shared {
        parts.push(swiglu_expert(tape, u, e)?);
    }
    for (e, ev) in w.routed.iter().enumerate() {
        let rows = routing.rows_for(e);
        if rows.is_empty() {
            continue;
        }
        let xe = tape.gather_rows(u, rows.clone())?;
        let ye = swiglu_expert(tape, xe, ev)?;
        let ge = tape.gather_elems(gates, rows.iter().map(|&t| (t, e)).collect())?;
        let ge = tape.scale(ge, T::of(cfg.route_scale))?;
        let weighted = tape.scale_rows(ye, ge)?;
        parts.push(tape.scatter_rows(weighted, rows, tokens)?);
    }
    let output = tape.add_all(&parts)?;
    let stats = LoadStats::new(routing.counts(), tokens, cfg.top_k);
    Ok(MoeOutput {
        output,
        scores,
        gates,
        routing,
        stats,
    })
}

/// `h' = u + moe_sublayer(u)`. The bias is read, never written.
pub fn moe_forward<T: Scalar>(
    tape: &mut Tape<T>,
    u: Var,
    cfg: &MoeConfig,
    w: &MoeVars,
    bias: &[f64],
    frozen: Option<&Routing>,
) -> Result<MoeOutput> {
    let mut out = moe_sublayer(tape, u, cfg, w, bias, frozen)?;
    out.output = tape.add(u, out.output)?;
    Ok(out)
}
