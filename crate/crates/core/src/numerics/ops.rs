//! Built-in primitives and the [`Tape`] convenience methods that record them.

use crate::error::{Error, Result};
use crate::numerics::tape::{Primitive, Tape, Var};
use crate::numerics::tensor::{inv_rms, logsumexp, matmul_nt, matmul_tn, softmax_in_place, Tensor};
use crate::scalar::{sigmoid, Scalar};

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn like<T: Scalar>(t: &Tensor<T>, data: Vec<T>) -> Tensor<T> {
    Tensor::new(t.shape().to_vec(), data).expect("shape preserved")
}

#[derive(Debug)]
pub struct MatMul;

impl<T: Scalar> Primitive<T> for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn forward(&self, i: &[&Tensor<T>]) -> Result<Tensor<T>> {
        crate::numerics::tensor::matmul(i[0], i[1])
    }
    fn backward(&self, i: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (m, k) = (i[0].shape()[0], i[0].shape()[1]);
        let n = i[1].shape()[1];
        let da = matmul_nt(g.data(), i[1].data(), m, n, k);
        let db = matmul_tn(i[0].data(), g.data(), m, k, n);
        vec![Some(like(i[0], da)), Some(like(i[1], db))]
    }
}

#[derive(Debug)]
pub struct Add;

impl<T: Scalar> Primitive<T> for Add {
    fn name(&self) -> &'static str {
        "add"
    }
    fn forward(&self, i: &[&Tensor<T>]) -> Result<Tensor<T>> {
        same_shape("add", i[0], i[1])?;
        i[0].zip_map(i[1], |a, b| a + b)
    }
    fn backward(&self, _i: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.clone()), Some(g.clone())]
    }
}

#[derive(Debug)]
pub struct Mul;

impl<T: Scalar> Primitive<T> for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn forward(&self, i: &[&Tensor<T>]) -> Result<Tensor<T>> {
        same_shape("mul", i[0], i[1])?;
        i[0].zip_map(i[1], |a, b| a * b)
    }
    fn backward(&self, i: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let da = g.zip_map(i[1], |g, b| g * b).expect("same shape");
        let db = g.zip_map(i[0], |g, a| g * a).expect("same shape");
        vec![Some(da), Some(db)]
    }
}

#[derive(Debug)]
pub struct Scale<T>(pub T);

impl<T: Scalar> Primitive<T> for Scale<T> {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn forward(&self, i: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(i[0].map(|x| x * self.0))
    }
    fn backward(&self, _i: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.map(|x| x * self.0))]
    }
}

#[derive(Debug)]
pub struct Sigmoid;

impl<T: Scalar> Primitive<T> for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }
    fn forward(&self, i: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(i[0].map(sigmoid))
    }
    fn backward(&self, _i: &[&Tensor<T>], o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(
            g.zip_map(o, |g, s| g * s * (T::one() - s))
                .expect("same shape"),
        )]
    }
}

/// `x · σ(x)`
#[derive(Debug)]
pub struct Silu;

impl<T: Scalar> Primitive<T> for Silu {
    fn name(&self) -> &'static str {
        "silu"
    }
    fn forward(&self, i: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(i[0].map(|x| x * sigmoid(x)))
    }
    fn backward(&self, i: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let d = g
            .zip_map(i[0], |g, x| {
                let s = sigmoid(x);
                g * s * (T::one() + x * (T::one() - s))
            })
            .expect("same shape");
        vec![Some(d)]
    }
}

#[derive(Debug)]
pub struct Reshape(pub Vec<usize>);

impl<T: Scalar> Primitive<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn forward(&self, i: &[&Tensor<T>]) -> Result<Tensor<T>> {
        i[0].reshape(self.0.clone())
    }
    fn backward(&self, i: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.reshape(i[0].shape().to_vec()).expect("same size"))]
    }
}

/// RMS normalization over the last axis with a learnable gain.
#[derive(Debug)]
pub struct RmsNorm<T>(pub T);

impl<T: Scalar> Primitive<T> for RmsNorm<T> {
    fn name(&self) -> &'static str {
        "rms_norm"
    }
    fn forward(&self, i: &[&Tensor<T>]) -> Result<Tensor<T>> {
        crate::numerics::tensor::rms_normalize(i[0], i[1], self.0)
    }
    fn backward(&self, i: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (x, gain) = (i[0], i[1]);
        let c = x.cols();
        let n = T::of_usize(c);
        let mut dx = Vec::with_capacity(x.len());
        let mut dgain = vec![T::zero(); c];
        for (row, grow) in x.data().chunks(c).zip(g.data().chunks(c)) {
            let r = inv_rms(row, self.0);
            // dot = Σ_j g_j γ_j x_j
            let mut dot = T::zero();
            for j in 0..c {
                dot += grow[j] * gain.data()[j] * row[j];
                dgain[j] += grow[j] * row[j] * r;
            }
            let k = dot * r * r * r / n;
            for j in 0..c {
                dx.push(grow[j] * gain.data()[j] * r - row[j] * k);
            }
        }
        vec![Some(like(x, dx)), Some(like(gain, dgain))]
    }
}

#[derive(Debug)]
pub struct Softmax;

impl<T: Scalar> Primitive<T> for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }
    fn forward(&self, i: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(crate::numerics::tensor::softmax_lastdim(i[0]))
    }
    fn backward(&self, _i: &[&Tensor<T>], o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let c = o.cols();
        let mut d = Vec::with_capacity(o.len());
        for (p, gr) in o.data().chunks(c).zip(g.data().chunks(c)) {
            let dot: T = p.iter().zip(gr).map(|(&a, &b)| a * b).sum();
            d.extend(p.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
        }
        vec![Some(like(o, d))]
    }
}

#[derive(Debug)]
pub struct Sum;

impl<T: Scalar> Primitive<T> for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn forward(&self, i: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(Tensor::scalar(i[0].sum()))
    }
    fn backward(&self, i: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(Tensor::full(i[0].shape().to_vec(), g.item()))]
    }
}

/// Row gather: `out[r] = table[ids[r]]`.
#[derive(Debug)]
pub struct GatherRows(pub Vec<usize>);

impl<T: Scalar> Primitive<T> for GatherRows {
    fn name(&self) -> &'static str {
        "gather_rows"
    }
    fn forward(&self, i: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let table = i[0];
        let (rows, c) = (table.rows(), table.cols());
        let mut out = Vec::with_capacity(self.0.len() * c);
        for &id in &self.0 {
            if id >= rows {
                return Err(Error::Lookup(format!(
                    "row {id} out of range for {rows} rows"
                )));
            }
            out.extend_from_slice(table.row(id));
        }
        Tensor::new(vec![self.0.len(), c], out)
    }
    fn backward(&self, i: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let c = i[0].cols();
        let mut d = vec![T::zero(); i[0].len()];
        for (r, &id) in self.0.iter().enumerate() {
            for j in 0..c {
                d[id * c + j] += g.data()[r * c + j];
            }
        }
        vec![Some(like(i[0], d))]
    }
}

/// Places the rows of `x` at `rows` of a zero matrix with `total` rows.
#[derive(Debug)]
pub struct ScatterRows {
    pub rows: Vec<usize>,
    pub total: usize,
}

impl<T: Scalar> Primitive<T> for ScatterRows {
    fn name(&self) -> &'static str {
        "scatter_rows"
    }
    fn forward(&self, i: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = i[0];
        let c = x.cols();
        if x.rows() != self.rows.len() {
            return Err(Error::dim("scatter_rows", x.shape(), &[self.rows.len()]));
        }
        let mut out = vec![T::zero(); self.total * c];
        for (r, &dst) in self.rows.iter().enumerate() {
            if dst >= self.total {
                return Err(Error::Lookup(format!(
                    "row {dst} out of range for {}",
                    self.total
                )));
            }
            for j in 0..c {
                out[dst * c + j] += x.data()[r * c + j];
            }
        }
        Tensor::new(vec![self.total, c], out)
    }
    fn backward(&self, i: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let c = i[0].cols();
        let mut d = Vec::with_capacity(i[0].len());
        for &src in &self.rows {
            d.extend_from_slice(&g.data()[src * c..(src + 1) * c]);
        }
        vec![Some(like(i[0], d))]
    }
}

/// Multiplies every row `r` of `x[n×c]` by the scalar `w[r]` (`w` has `n` elements).
#[derive(Debug)]
pub struct ScaleRows;

impl<T: Scalar> Primitive<T> for ScaleRows {
    fn name(&self) -> &'static str {
        "scale_rows"
    }
    fn forward(&self, i: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (x, w) = (i[0], i[1]);
        if w.len() != x.rows() {
            return Err(Error::dim("scale_rows", x.shape(), w.shape()));
        }
        let c = x.cols();
        let data = x
            .data()
            .chunks(c)
            .zip(w.data())
            .flat_map(|(row, &s)| row.iter().map(move |&v| v * s))
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }
    fn backward(&self, i: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (x, w) = (i[0], i[1]);
        let c = x.cols();
        let mut dx = Vec::with_capacity(x.len());
        let mut dw = Vec::with_capacity(w.len());
        for ((row, grow), &s) in x.data().chunks(c).zip(g.data().chunks(c)).zip(w.data()) {
            dx.extend(grow.iter().map(|&gv| gv * s));
            dw.push(row.iter().zip(grow).map(|(&a, &b)| a * b).sum());
        }
        vec![Some(like(x, dx)), Some(like(w, dw))]
    }
}

/// Picks single elements `(row, col)` of a matrix into an `[n, 1]` column.
#[derive(Debug)]
pub struct GatherElems(pub Vec<(usize, usize)>);

impl<T: Scalar> Primitive<T> for GatherElems {
    fn name(&self) -> &'static str {
        "gather_elems"
    }
    fn forward(&self, i: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = i[0];
        let (rows, c) = (x.rows(), x.cols());
        let mut out = Vec::with_capacity(self.0.len());
        for &(r, k) in &self.0 {
            if r >= rows || k >= c {
                return Err(Error::Lookup(format!("element ({r},{k}) out of range")));
            }
            out.push(x.get2(r, k));
        }
        Tensor::new(vec![self.0.len(), 1], out)
    }
    fn backward(&self, i: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let c = i[0].cols();
        let mut d = vec![T::zero(); i[0].len()];
        for (n, &(r, k)) in self.0.iter().enumerate() {
            d[r * c + k] += g.data()[n];
        }
        vec![Some(like(i[0], d))]
    }
}

/// Mean of consecutive row blocks: `x[R×c]` → `[B×c]` for block lengths summing to `R`.
#[derive(Debug)]
pub struct SegmentMeanRows(pub Vec<usize>);

impl<T: Scalar> Primitive<T> for SegmentMeanRows {
    fn name(&self) -> &'static str {
        "segment_mean_rows"
    }
    fn forward(&self, i: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = i[0];
        let c = x.cols();
        if self.0.iter().sum::<usize>() != x.rows() || self.0.iter().any(|&l| l == 0) {
            return Err(Error::dim("segment_mean_rows", x.shape(), &self.0));
        }
        let mut out = vec![T::zero(); self.0.len() * c];
        let mut r = 0;
        for (b, &len) in self.0.iter().enumerate() {
            let inv = T::one() / T::of_usize(len);
            for _ in 0..len {
                for j in 0..c {
                    out[b * c + j] += x.get2(r, j) * inv;
                }
                r += 1;
            }
        }
        Tensor::new(vec![self.0.len(), c], out)
    }
    fn backward(&self, i: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let mut d = Vec::with_capacity(i[0].len());
        for (b, &len) in self.0.iter().enumerate() {
            let inv = T::one() / T::of_usize(len);
            for _ in 0..len {
                d.extend(g.row(b).iter().map(|&v| v * inv));
            }
        }
        vec![Some(like(i[0], d))]
    }
}

/// Per-row log-sum-exp: `[R×c]` → `[R]`.
#[derive(Debug)]
pub struct LogSumExpRows;

impl<T: Scalar> Primitive<T> for LogSumExpRows {
    fn name(&self) -> &'static str {
        "logsumexp_rows"
    }
    fn forward(&self, i: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = i[0];
        let data = x.data().chunks(x.cols()).map(logsumexp).collect::<Vec<_>>();
        Tensor::new(vec![data.len()], data)
    }
    fn backward(&self, i: &[&Tensor<T>], o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = i[0];
        let c = x.cols();
        let mut d = Vec::with_capacity(x.len());
        for (r, row) in x.data().chunks(c).enumerate() {
            let (lse, gr) = (o.data()[r], g.data()[r]);
            d.extend(row.iter().map(|&v| gr * (v - lse).exp()));
        }
        vec![Some(like(x, d))]
    }
}

/// Mean token cross-entropy of logits `[R×V]` against `R` integer targets.
#[derive(Debug)]
pub struct CrossEntropy(pub Vec<usize>);

impl<T: Scalar> Primitive<T> for CrossEntropy {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }
    fn forward(&self, i: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = i[0];
        let v = x.cols();
        if self.0.len() != x.rows() {
            return Err(Error::dim("cross_entropy", x.shape(), &[self.0.len()]));
        }
        let mut total = T::zero();
        for (row, &tgt) in x.data().chunks(v).zip(&self.0) {
            if tgt >= v {
                return Err(Error::Lookup(format!(
                    "target {tgt} outside vocabulary of {v}"
                )));
            }
            total += logsumexp(row) - row[tgt];
        }
        Ok(Tensor::scalar(total / T::of_usize(self.0.len())))
    }
    fn backward(&self, i: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = i[0];
        let v = x.cols();
        let scale = g.item() / T::of_usize(self.0.len());
        let mut d = Vec::with_capacity(x.len());
        for (row, &tgt) in x.data().chunks(v).zip(&self.0) {
            let mut p = row.to_vec();
            softmax_in_place(&mut p);
            p[tgt] -= T::one();
            d.extend(p.into_iter().map(|q| q * scale));
        }
        vec![Some(like(x, d))]
    }
}

impl<T: Scalar> Tape<T> {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(MatMul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Add, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Mul, &[a, b])
    }
    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.apply(Scale(c), &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Sigmoid, &[a])
    }
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.apply(Silu, &[a])
    }
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        self.apply(Reshape(shape), &[a])
    }
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: T) -> Result<Var> {
        self.apply(RmsNorm(eps), &[x, gain])
    }
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.apply(Softmax, &[x])
    }
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(Sum, &[x])
    }
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.sum(x)?;
        self.scale(s, T::one() / T::of_usize(n))
    }
    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }
    pub fn gather_rows(&mut self, table: Var, ids: Vec<usize>) -> Result<Var> {
        self.apply(GatherRows(ids), &[table])
    }
    pub fn scatter_rows(&mut self, x: Var, rows: Vec<usize>, total: usize) -> Result<Var> {
        self.apply(ScatterRows { rows, total }, &[x])
    }
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        self.apply(ScaleRows, &[x, w])
    }
    pub fn gather_elems(&mut self, x: Var, idx: Vec<(usize, usize)>) -> Result<Var> {
        self.apply(GatherElems(idx), &[x])
    }
    pub fn segment_mean_rows(&mut self, x: Var, lengths: Vec<usize>) -> Result<Var> {
        self.apply(SegmentMeanRows(lengths), &[x])
    }
    pub fn logsumexp_rows(&mut self, x: Var) -> Result<Var> {
        self.apply(LogSumExpRows, &[x])
    }
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Result<Var> {
        self.apply(CrossEntropy(targets), &[logits])
    }

    /// Sums a non-empty list of same-shaped values.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars
            .split_first()
            .ok_or_else(|| Error::Contract("add_all of an empty list".into()))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }
}
