use std::sync::Arc;

use crate::attention::mask::AttentionMask;
use crate::error::{Error, Result};
use crate::numerics::tensor::softmax_in_place;
use crate::numerics::{Primitive, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Masked scaled dot-product attention with grouped key/value heads.
///
/// Inputs: `q[R × hq·dh]`, `k[R × hkv·dh]`, `v[R × hkv·dh]`.
/// Output: `[R × hq·dh]`, head `i` attending through kv head `i / (hq/hkv)`.
#[derive(Debug)]
pub struct ScaledDotProductAttention {
    pub mask: Arc<AttentionMask>,
    pub heads_q: usize,
    pub heads_kv: usize,
    pub head_dim: usize,
}

impl ScaledDotProductAttention {
    fn check<T: Scalar>(&self, q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<()> {
        let rows = self.mask.len();
        let qw = self.heads_q * self.head_dim;
        let kw = self.heads_kv * self.head_dim;
        if q.shape() != [rows, qw] {
            return Err(Error::dim("sdpa q", q.shape(), &[rows, qw]));
        }
        if k.shape() != [rows, kw] || v.shape() != [rows, kw] {
            return Err(Error::dim("sdpa k/v", k.shape(), &[rows, kw]));
        }
        if self.heads_kv == 0 || self.heads_q % self.heads_kv != 0 {
            return Err(Error::Config(
                "heads_q must be a multiple of heads_kv".into(),
            ));
        }
        Ok(())
    }

    fn kv_head(&self, h: usize) -> usize {
        h / (self.heads_q / self.heads_kv)
    }

    /// Attention weights of row `t`, head `h` over its allowed positions.
    fn weights<T: Scalar>(
        &self,
        q: &Tensor<T>,
        k: &Tensor<T>,
        t: usize,
        h: usize,
        allowed: &[usize],
    ) -> Vec<T> {
        let dh = self.head_dim;
        let scale = T::one() / T::of_usize(dh).sqrt();
        let qv = &q.row(t)[h * dh..(h + 1) * dh];
        let kh = self.kv_head(h);
        let mut logits: Vec<T> = allowed
            .iter()
            .map(|&s| {
                let kv = &k.row(s)[kh * dh..(kh + 1) * dh];
                qv.iter().zip(kv).map(|(&a, &b)| a * b).sum::<T>() * scale
            })
            .collect();
        softmax_in_place(&mut logits);
        logits
    }
}

impl<T: Scalar> Primitive<T> for ScaledDotProductAttention {
    fn name(&self) -> &'static str {
        "sdpa"
    }

    fn forward(&self, i: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (q, k, v) = (i[0], i[1], i[2]);
        self.check(q, k, v)?;
        let dh = self.head_dim;
        let width = self.heads_q * dh;
        let mut out = vec![T::zero(); self.mask.len() * width];
        for t in 0..self.mask.len() {
            let allowed: Vec<usize> = self.mask.allowed(t).collect();
            for h in 0..self.heads_q {
                let kh = self.kv_head(h);
                let alpha = self.weights(q, k, t, h, &allowed);
                let o = &mut out[t * width + h * dh..t * width + (h + 1) * dh];
                for (&s, &a) in allowed.iter().zip(&alpha) {
                    let vv = &v.row(s)[kh * dh..(kh + 1) * dh];
                    for (ov, &x) in o.iter_mut().zip(vv) {
                        *ov += a * x;
                    }
                }
            }
        }
        Tensor::new(vec![self.mask.len(), width], out)
    }

    fn backward(&self, i: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (q, k, v) = (i[0], i[1], i[2]);
        let dh = self.head_dim;
        let scale = T::one() / T::of_usize(dh).sqrt();
        let (qw, kw) = (q.cols(), k.cols());
        let mut dq = vec![T::zero(); q.len()];
        let mut dk = vec![T::zero(); k.len()];
        let mut dv = vec![T::zero(); v.len()];
        for t in 0..self.mask.len() {
            let allowed: Vec<usize> = self.mask.allowed(t).collect();
            for h in 0..self.heads_q {
                let kh = self.kv_head(h);
                let alpha = self.weights(q, k, t, h, &allowed);
                let go = &g.row(t)[h * dh..(h + 1) * dh];
                // dα_s = go · v_s
                let dalpha: Vec<T> = allowed
                    .iter()
                    .map(|&s| {
                        let vv = &v.row(s)[kh * dh..(kh + 1) * dh];
                        go.iter().zip(vv).map(|(&a, &b)| a * b).sum()
                    })
                    .collect();
                let mean: T = alpha.iter().zip(&dalpha).map(|(&a, &d)| a * d).sum();
                let qv = &q.row(t)[h * dh..(h + 1) * dh];
                for ((&s, &a), &da) in allowed.iter().zip(&alpha).zip(&dalpha) {
                    let dlogit = a * (da - mean) * scale;
                    let ks = s * kw + kh * dh;
                    for d in 0..dh {
                        dq[t * qw + h * dh + d] += dlogit * k.data()[ks + d];
                        dk[ks + d] += dlogit * qv[d];
                        dv[ks + d] += a * go[d];
                    }
                }
            }
        }
        vec![
            Some(Tensor::new(q.shape().to_vec(), dq).expect("shape")),
            Some(Tensor::new(k.shape().to_vec(), dk).expect("shape")),
            Some(Tensor::new(v.shape().to_vec(), dv).expect("shape")),
        ]
    }
}

pub fn sdpa<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    mask: Arc<AttentionMask>,
    heads_q: usize,
    heads_kv: usize,
    head_dim: usize,
) -> Result<Var> {
    tape.apply(
        ScaledDotProductAttention {
            mask,
            heads_q,
            heads_kv,
            head_dim,
        },
        &[q, k, v],
    )
}
