//! Central finite-difference verification of graph gradients.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

const REL_FLOOR: f64 = 1e-6;

/// Compares the backward-pass gradient of the scalar function `f` at `x`
/// against `(f(x + h) - f(x - h)) / 2h`, coordinate by coordinate.
///
/// `f` receives a fresh graph and the input variable on every call and must
/// return a one-element node.
pub fn grad_check<T, F>(mut f: F, x: &Tensor<T>, h: T) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, Var) -> Result<Var>,
{
    if h <= T::zero() {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }

    let mut g = Graph::new();
    let xv = g.variable(x.clone());
    let root = f(&mut g, xv)?;
    g.backward(root)?;
    let analytic = g
        .grad(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let mut eval = |point: Tensor<T>| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(point);
        let out = f(&mut g, v)?;
        let value = g.value(out);
        if value.numel() != 1 {
            return Err(Error::NonScalarRoot(value.shape().to_vec()));
        }
        Ok(value.item().as_f64())
    };

    let two_h = 2.0 * h.as_f64();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
    };
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / two_h;
        let a = analytic.data()[i].as_f64();
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
        report.max_abs_err = report.max_abs_err.max(abs);
        report.max_rel_err = report.max_rel_err.max(rel);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    #[test]
    fn sum_of_squares() {
        let x = random(3, 3, 7);
        let r = grad_check(
            |g, x| {
                let sq = g.mul(x, x)?;
                g.sum(sq)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-8, "{r:?}");
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let x = random(2, 2, 1);
        let r = grad_check(
            |g, _| Ok(g.constant(Tensor::scalar(3.0))),
            &x,
            1e-5,
        )
        .unwrap();
        assert_eq!(r.max_abs_err, 0.0);
    }

    #[test]
    fn rejects_non_positive_step() {
        let x = random(1, 1, 0);
        assert!(grad_check(|g, x| g.sum(x), &x, 0.0).is_err());
    }

    // Each differentiable op, composed with a random linear readout so that
    // every output coordinate matters.
    fn check_unary(op: impl Fn(&mut Graph<f64>, Var) -> Result<Var>, x: Tensor<f64>, seed: u64) -> f64 {
        let (rows, cols) = (x.rows(), x.cols());
        grad_check(
            |g, x| {
                let y = op(g, x)?;
                let shape = g.value(y).shape().to_vec();
                let w = g.constant(random(shape[0], shape[1], seed + 100));
                let p = g.mul(y, w)?;
                g.sum(p)
            },
            &x,
            1e-5,
        )
        .map(|r| {
            assert_eq!((rows, cols), (x.rows(), x.cols()));
            r.max_rel_err
        })
        .unwrap()
    }

    #[test]
    fn every_op_passes_finite_differences() {
        for seed in 0..5u64 {
            let x = random(3, 4, seed);
            let pos = x.map(|v| v.abs() + 0.1);
            let other = random(3, 4, seed + 50);
            let row = random(1, 4, seed + 60);
            let col = random(3, 1, seed + 70);
            let rhs = random(4, 2, seed + 80);

            let cases: Vec<(&str, f64)> = vec![
                ("add", check_unary(|g, x| { let o = g.constant(other.clone()); g.add(x, o) }, x.clone(), seed)),
                ("sub", check_unary(|g, x| { let o = g.constant(other.clone()); g.sub(o, x) }, x.clone(), seed)),
                ("mul", check_unary(|g, x| { let o = g.constant(other.clone()); g.mul(x, o) }, x.clone(), seed)),
                ("add_row", check_unary(|g, x| { let r = g.constant(row.clone()); g.add_row(x, r) }, x.clone(), seed)),
                ("add_row/bias", check_unary(|g, r| { let a = g.constant(other.clone()); g.add_row(a, r) }, row.clone(), seed)),
                ("mul_col", check_unary(|g, x| { let c = g.constant(col.clone()); g.mul_col(x, c) }, x.clone(), seed)),
                ("mul_col/col", check_unary(|g, c| { let a = g.constant(other.clone()); g.mul_col(a, c) }, col.clone(), seed)),
                ("matmul/lhs", check_unary(|g, x| { let b = g.constant(rhs.clone()); g.matmul(x, b) }, x.clone(), seed)),
                ("matmul/rhs", check_unary(|g, b| { let a = g.constant(x.clone()); g.matmul(a, b) }, rhs.clone(), seed)),
                ("transpose", check_unary(|g, x| g.transpose(x), x.clone(), seed)),
                ("concat_rows", check_unary(|g, x| { let o = g.constant(other.clone()); g.concat_rows(&[o, x, x]) }, x.clone(), seed)),
                ("concat_cols", check_unary(|g, x| { let o = g.constant(other.clone()); g.concat_cols(&[x, o, x]) }, x.clone(), seed)),
                ("slice_rows", check_unary(|g, x| g.slice_rows(x, 1, 3), x.clone(), seed)),
                ("slice_cols", check_unary(|g, x| g.slice_cols(x, 1, 3), x.clone(), seed)),
                ("sum_cols", check_unary(|g, x| g.sum_cols(x), x.clone(), seed)),
                ("scale", check_unary(|g, x| g.scale(x, -2.5), x.clone(), seed)),
                ("exp", check_unary(|g, x| g.exp(x), x.clone(), seed)),
                ("log", check_unary(|g, x| g.log(x), pos.clone(), seed)),
                ("tanh", check_unary(|g, x| g.tanh(x), x.clone(), seed)),
                ("sigmoid", check_unary(|g, x| g.sigmoid(x), x.clone(), seed)),
                ("relu", check_unary(|g, x| g.relu(x), x.clone(), seed)),
                ("softmax_rows", check_unary(|g, x| g.softmax_rows(x), x.clone(), seed)),
                ("mean", check_unary(|g, x| g.mean(x), x.clone(), seed)),
            ];
            for (name, err) in cases {
                assert!(err < 1e-6, "{name} seed {seed}: rel err {err}");
            }
        }
    }
}
