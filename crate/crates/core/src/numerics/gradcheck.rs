//! Central finite differences against tape gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

/// Which coordinates of each input to perturb.
#[derive(Clone, Copy, Debug)]
pub enum Coords {
    All,
    /// At most `per_input` coordinates per input, chosen without replacement.
    Sample {
        per_input: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(input, coordinate, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Max relative error between the tape gradient of a scalar function of one
/// tensor and its central difference with step `h`, over every coordinate.
pub fn finite_difference_check<T, F>(f: F, x: &Tensor<T>, h: T) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let report = gradient_check(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(x),
        h,
        Coords::All,
    )?;
    Ok(report.max_rel_error)
}

/// Multi-input variant of [`finite_difference_check`].
pub fn gradient_check<T, F>(
    f: F,
    inputs: &[Tensor<T>],
    h: T,
    coords: Coords,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<T>]| -> Result<(Tape<T>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        if !tape.value(out).is_scalar() {
            return Err(Error::Contract(
                "gradient check needs a scalar function".into(),
            ));
        }
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(inputs)?;
    let grads = tape.gradient(out)?;
    let analytic: Vec<Tensor<T>> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let mut rng = match coords {
        Coords::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Coords::All => None,
    };
    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (inp, x) in inputs.iter().enumerate() {
        let picks: Vec<usize> = match (coords, rng.as_mut()) {
            (Coords::Sample { per_input, .. }, Some(rng)) if per_input < x.len() => {
                let mut v = index::sample(rng, x.len(), per_input).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..x.len()).collect(),
        };
        for i in picks {
            let orig = x.data()[i];
            work[inp].data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            let fp = plus.0.value(plus.2).item();
            work[inp].data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            let fm = minus.0.value(minus.2).item();
            work[inp].data_mut()[i] = orig;

            let numeric = ((fp - fm) / (h + h)).as_f64();
            let a = analytic[inp].data()[i].as_f64();
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((inp, i, a, numeric));
                }
            }
        }
    }
    Ok(report)
}
