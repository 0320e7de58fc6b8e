use crate::error::{Error, Result};
use crate::moe::routing::{normalize_gates, Routing};
use crate::numerics::{Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Sequence-wise balance loss `α Σ_i f_i P_i`, averaged over the sequences in
/// `lengths` (consecutive row blocks of `scores`).
///
/// `f_i = N_r/(K_r T) Σ_t 1[i selected at t]` is a constant; gradients reach the
/// scores through `P_i = mean_t s_{i,t}/Σ_j s_{j,t}` only.
pub fn seq_aux_loss<T: Scalar>(
    tape: &mut Tape<T>,
    scores: Var,
    routing: &Routing,
    lengths: &[usize],
    top_k: usize,
    alpha: f64,
) -> Result<Var> {
    let (rows, n) = (tape.value(scores).rows(), tape.value(scores).cols());
    if lengths.is_empty()
        || lengths.iter().any(|&l| l == 0)
        || lengths.iter().sum::<usize>() != rows
    {
        return Err(Error::Contract(format!(
            "sequence lengths {lengths:?} do not tile {rows} rows"
        )));
    }
    if routing.tokens() != rows || routing.n_experts != n {
        return Err(Error::Contract("routing does not match scores".into()));
    }
    let f = frequencies::<T>(routing, lengths, top_k);
    let share = normalize_gates(tape, scores, &Routing::all(rows, n))?;
    let p = tape.segment_mean_rows(share, lengths.to_vec())?;
    let fv = tape.leaf(f);
    let fp = tape.mul(fv, p)?;
    let total = tape.sum(fp)?;
    tape.scale(total, T::of(alpha / lengths.len() as f64))
}

/// `f[b, i]` per sequence `b`.
fn frequencies<T: Scalar>(routing: &Routing, lengths: &[usize], top_k: usize) -> Tensor<T> {
    let n = routing.n_experts;
    let mut f = vec![T::zero(); lengths.len() * n];
    let mut t = 0;
    for (b, &len) in lengths.iter().enumerate() {
        let scale = T::of(n as f64 / (top_k * len) as f64);
        for sel in &routing.selected[t..t + len] {
            for &e in sel {
                f[b * n + e] += scale;
            }
        }
        t += len;
    }
    Tensor::new(vec![lengths.len(), n], f).expect("nonempty")
}

/// Plain-value loss for one sequence; the selection uses `scores + bias`.
pub fn seq_aux_loss_value<T: Scalar>(
    scores: &Tensor<T>,
    bias: &[f64],
    top_k: usize,
    alpha: f64,
) -> Result<T> {
    if scores.rows() == 0 {
        return Err(Error::Contract(
            "sequence must have at least one token".into(),
        ));
    }
    let routing = Routing::select(scores, bias, top_k)?;
    let mut tape = Tape::new();
    let s = tape.leaf(scores.clone());
    let l = seq_aux_loss(&mut tape, s, &routing, &[scores.rows()], top_k, alpha)?;
    Ok(tape.value(l).item())
}
