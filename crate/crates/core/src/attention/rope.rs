use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{Primitive, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Rotates interleaved pairs `(2p, 2p+1)` of every head vector by
/// `position * theta^(-2p / head_dim)`.
#[derive(Debug)]
pub struct Rope {
    pub positions: Arc<Vec<usize>>,
    pub heads: usize,
    pub head_dim: usize,
    pub theta: f64,
}

impl Rope {
    fn rotate<T: Scalar>(&self, x: &Tensor<T>, sign: f64) -> Result<Tensor<T>> {
        let width = self.heads * self.head_dim;
        if x.cols() != width || x.rows() != self.positions.len() {
            return Err(Error::dim(
                "rope",
                x.shape(),
                &[self.positions.len(), width],
            ));
        }
        let half = self.head_dim / 2;
        let freqs: Vec<f64> = (0..half)
            .map(|p| self.theta.powf(-2.0 * p as f64 / self.head_dim as f64))
            .collect();
        let mut out = x.data().to_vec();
        for (row, &pos) in out.chunks_mut(width).zip(self.positions.iter()) {
            if pos == 0 {
                continue;
            }
            for (p, &f) in freqs.iter().enumerate() {
                let angle = pos as f64 * f;
                let (s, c) = ((sign * angle).sin(), angle.cos());
                let (s, c) = (T::of(s), T::of(c));
                for h in 0..self.heads {
                    let i = h * self.head_dim + 2 * p;
                    let (a, b) = (row[i], row[i + 1]);
                    row[i] = a * c - b * s;
                    row[i + 1] = a * s + b * c;
                }
            }
        }
        Tensor::new(x.shape().to_vec(), out)
    }
}

impl<T: Scalar> Primitive<T> for Rope {
    fn name(&self) -> &'static str {
        "rope"
    }
    fn forward(&self, i: &[&Tensor<T>]) -> Result<Tensor<T>> {
        self.rotate(i[0], 1.0)
    }
    fn backward(&self, _i: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        // Rotation is orthogonal: the adjoint rotates backwards.
        vec![Some(
            self.rotate(g, -1.0).expect("shape checked in forward"),
        )]
    }
}

/// Applies rotary embeddings to `x[rows × heads*head_dim]` at the given positions.
pub fn apply_rope<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    positions: Arc<Vec<usize>>,
    heads: usize,
    head_dim: usize,
    theta: f64,
) -> Result<Var> {
    if head_dim % 2 != 0 {
        return Err(Error::Config(format!(
            "rotary embeddings need an even head_dim, got {head_dim}"
        )));
    }
    tape.apply(
        Rope {
            positions,
            heads,
            head_dim,
            theta,
        },
        &[x],
    )
}

/// Plain-value rotation of a single head vector, for tests and tools.
pub fn rope_vector<T: Scalar>(v: &[T], position: usize, theta: f64) -> Result<Vec<T>> {
    let x = Tensor::new(vec![1, v.len()], v.to_vec())?;
    if v.len() % 2 != 0 {
        return Err(Error::Config(
            "rotary embeddings need an even head_dim".into(),
        ));
    }
    let r = Rope {
        positions: Arc::new(vec![position]),
        heads: 1,
        head_dim: v.len(),
        theta,
    };
    Ok(r.rotate(&x, 1.0)?.into_data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn position_zero_is_identity() {
        let v = vec![0.3, -1.0, 2.0, 0.5];
        assert_eq!(rope_vector(&v, 0, 10_000.0).unwrap(), v);
    }

    #[test]
    fn inner_product_depends_on_relative_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let q: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (m, n, s) = (
                rng.random_range(0..64),
                rng.random_range(0..64),
                rng.random_range(0..512),
            );
            let a = dot(
                &rope_vector(&q, m, 1e4).unwrap(),
                &rope_vector(&k, n, 1e4).unwrap(),
            );
            let b = dot(
                &rope_vector(&q, m + s, 1e4).unwrap(),
                &rope_vector(&k, n + s, 1e4).unwrap(),
            );
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn rotation_preserves_norm() {
        let v = vec![1.0, 2.0, -3.0, 0.5, 0.25, -0.75];
        let r = rope_vector(&v, 17, 10_000.0).unwrap();
        assert!((dot(&v, &v) - dot(&r, &r)).abs() < 1e-12);
    }

    #[test]
    fn odd_head_dim_is_rejected() {
        assert!(rope_vector(&[1.0, 2.0, 3.0], 1, 1e4).is_err());
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 3]));
        assert!(apply_rope(&mut tape, x, Arc::new(vec![0]), 1, 3, 1e4).is_err());
    }
}
