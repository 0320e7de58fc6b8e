use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::numerics::{Primitive, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// `s = σ(u · E)` for router matrix `E[d × N_r]` whose columns are the expert vectors.
pub fn router_scores<T: Scalar>(tape: &mut Tape<T>, u: Var, router: Var) -> Result<Var> {
    let logits = tape.matmul(u, router)?;
    tape.sigmoid(logits)
}

/// Plain-value [`router_scores`].
pub fn router_scores_value<T: Scalar>(u: &Tensor<T>, router: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(u.matmul(router)?.map(crate::scalar::sigmoid))
}

/// Indices of the `k` largest `s_i + b_i`, ties to the lowest index, returned ascending.
pub fn select_topk<T: Scalar>(scores: &[T], bias: &[f64], k: usize) -> Vec<usize> {
    debug_assert_eq!(scores.len(), bias.len());
    let biased: Vec<f64> = scores
        .iter()
        .zip(bias)
        .map(|(s, b)| s.as_f64() + b)
        .collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let cmp = |&a: &usize, &b: &usize| biased[b].total_cmp(&biased[a]).then(a.cmp(&b));
    let k = k.min(order.len());
    if k < order.len() {
        order.select_nth_unstable_by(k, cmp);
    }
    let mut picked = order[..k].to_vec();
    picked.sort_unstable();
    picked
}

/// Per-token expert selections.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Routing {
    pub n_experts: usize,
    pub selected: Vec<Vec<usize>>,
}

impl Routing {
    pub fn select<T: Scalar>(scores: &Tensor<T>, bias: &[f64], k: usize) -> Result<Self> {
        let n = scores.cols();
        if bias.len() != n {
            return Err(Error::dim("select_topk bias", &[n], &[bias.len()]));
        }
        if k == 0 || k > n {
            return Err(Error::Config(format!("top_k must be in 1..={n}, got {k}")));
        }
        let selected = (0..scores.rows())
            .map(|t| select_topk(scores.row(t), bias, k))
            .collect();
        Ok(Self {
            n_experts: n,
            selected,
        })
    }

    /// Every token selects every expert.
    pub fn all(tokens: usize, n_experts: usize) -> Self {
        Self {
            n_experts,
            selected: vec![(0..n_experts).collect(); tokens],
        }
    }

    pub fn tokens(&self) -> usize {
        self.selected.len()
    }

    /// Rows routed to expert `e`, ascending.
    pub fn rows_for(&self, e: usize) -> Vec<usize> {
        self.selected
            .iter()
            .enumerate()
            .filter(|(_, sel)| sel.contains(&e))
            .map(|(t, _)| t)
            .collect()
    }

    pub fn counts(&self) -> Vec<u64> {
        let mut n = vec![0u64; self.n_experts];
        for sel in &self.selected {
            for &e in sel {
                n[e] += 1;
            }
        }
        n
    }

    /// 0/1 selection indicator `[tokens × n_experts]`.
    pub fn indicator<T: Scalar>(&self) -> Tensor<T> {
        let mut d = vec![T::zero(); self.tokens() * self.n_experts];
        for (t, sel) in self.selected.iter().enumerate() {
            for &e in sel {
                d[t * self.n_experts + e] = T::one();
            }
        }
        Tensor::new(vec![self.tokens(), self.n_experts], d).expect("routing has tokens")
    }
}

/// `g_i = s_i / Σ_{j∈sel} s_j` on selected entries, zero elsewhere.
/// The selection is a constant of the primitive, so gradients flow through `s` only.
#[derive(Debug)]
pub struct NormalizeGates {
    pub routing: Routing,
}

impl<T: Scalar> Primitive<T> for NormalizeGates {
    fn name(&self) -> &'static str {
        "normalize_gates"
    }

    fn forward(&self, i: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let s = i[0];
        if s.rows() != self.routing.tokens() || s.cols() != self.routing.n_experts {
            return Err(Error::dim(
                "normalize_gates",
                s.shape(),
                &[self.routing.tokens(), self.routing.n_experts],
            ));
        }
        let n = s.cols();
        let mut out = vec![T::zero(); s.len()];
        for (t, sel) in self.routing.selected.iter().enumerate() {
            let z: T = sel.iter().map(|&e| s.get2(t, e)).sum();
            for &e in sel {
                out[t * n + e] = s.get2(t, e) / z;
            }
        }
        Tensor::new(s.shape().to_vec(), out)
    }

    fn backward(&self, i: &[&Tensor<T>], o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let s = i[0];
        let n = s.cols();
        let mut d = vec![T::zero(); s.len()];
        for (t, sel) in self.routing.selected.iter().enumerate() {
            let z: T = sel.iter().map(|&e| s.get2(t, e)).sum();
            let dot: T = sel.iter().map(|&e| g.get2(t, e) * o.get2(t, e)).sum();
            for &e in sel {
                d[t * n + e] = (g.get2(t, e) - dot) / z;
            }
        }
        vec![Some(Tensor::new(s.shape().to_vec(), d).expect("shape"))]
    }
}

pub fn normalize_gates<T: Scalar>(
    tape: &mut Tape<T>,
    scores: Var,
    routing: &Routing,
) -> Result<Var> {
    tape.apply(
        NormalizeGates {
            routing: routing.clone(),
        },
        &[scores],
    )
}

/// Gate row for one token.
pub fn normalize_gates_row<T: Scalar>(scores: &[T], selected: &[usize]) -> Result<Vec<T>> {
    if selected.is_empty() {
        return Err(Error::Contract(
            "normalize_gates needs a nonempty selection".into(),
        ));
    }
    let z: T = selected.iter().map(|&e| scores[e]).sum();
    if z.partial_cmp(&T::zero()) != Some(Ordering::Greater) {
        return Err(Error::Contract("selected scores must be positive".into()));
    }
    let mut g = vec![T::zero(); scores.len()];
    for &e in selected {
        g[e] = scores[e] / z;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topk_examples() {
        let s = [0.9, 0.1, 0.5, 0.4];
        assert_eq!(select_topk(&s, &[0.0; 4], 2), vec![0, 2]);
        assert_eq!(select_topk(&s, &[0.0, 10.0, 0.0, 0.0], 1), vec![1]);
        assert_eq!(select_topk(&s, &[0.0; 4], 4), vec![0, 1, 2, 3]);
        // ties go to the lowest index
        assert_eq!(select_topk(&[0.5; 5], &[0.0; 5], 2), vec![0, 1]);
    }

    #[test]
    fn gate_examples() {
        let g = normalize_gates_row(&[0.9f64, 0.1, 0.5, 0.4], &[0, 2]).unwrap();
        assert!((g[0] - 9.0 / 14.0).abs() < 1e-15 && (g[2] - 5.0 / 14.0).abs() < 1e-15);
        assert_eq!((g[1], g[3]), (0.0, 0.0));
        assert_eq!(
            normalize_gates_row(&[0.3, 0.7], &[1]).unwrap(),
            vec![0.0, 1.0]
        );
        assert_eq!(
            normalize_gates_row(&[0.3, 0.3], &[0, 1]).unwrap(),
            vec![0.5, 0.5]
        );
        assert!(normalize_gates_row(&[0.3], &[]).is_err());
    }

    #[test]
    fn orthogonal_router_gives_half() {
        let u: Tensor<f64> = Tensor::from_f64(vec![1, 2], &[1.0, 0.0]).unwrap();
        let e = Tensor::from_f64(vec![2, 1], &[0.0, 3.0]).unwrap();
        assert_eq!(router_scores_value(&u, &e).unwrap().item(), 0.5);
    }
}
