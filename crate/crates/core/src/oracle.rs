//! Ground-truth references.
//!
//! For `X | Z = z ~ N(m(z), 1)` and the interpolant `X_t = (1-t) X_0 + t X`
//! with `X_0 ~ N(0, 1)` independent of `(X, Z)`, the triple `(X, X_0, X_t)` is
//! jointly Gaussian given `Z`:
//!
//! ```text
//! E[X_t | z]       = t m
//! Var(X_t | z)     = (1-t)^2 + t^2
//! Cov(X - X_0, X_t | z) = t - (1-t) = 2t - 1
//! ```
//!
//! so the velocity `E[X - X_0 | X_t = x, Z = z]` is
//! `m + (2t - 1)(x - t m) / ((1-t)^2 + t^2)`. Its flow is linear in the state;
//! integrating from `t = 1` down to `t = 0` sends `x` to `x - m`.
//!
//! The brute-force evaluators below use literal nested sums and share no code
//! with [`crate::depmeasure`].

use crate::error::{Error, Result};
use crate::flow::VelocityField;
use crate::linalg::Matrix;

/// Closed-form velocity of the Gaussian example; `z` is the conditional mean
/// of `X` given the condition (the condition itself when `X | Z ~ N(Z, 1)`).
pub fn gaussian_velocity(t: f64, x: f64, z: f64) -> f64 {
    z + (2.0 * t - 1.0) * (x - t * z) / ((1.0 - t).powi(2) + t * t)
}

/// Closed-form reverse transport of the Gaussian example.
pub fn gaussian_transport(x: f64, z: f64) -> f64 {
    x - z
}

/// Exact velocity field of `X = Z B + eps` with standard Gaussian `eps`:
/// each coordinate is an independent copy of [`gaussian_velocity`] with mean
/// `(Z B)_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianField {
    coef: Matrix,
}

impl LinearGaussianField {
    /// `coef` is `d_cond x d_side`.
    pub fn new(coef: Matrix) -> Self {
        Self { coef }
    }

    /// `X | Z ~ N(Z, 1)` in one dimension.
    pub fn identity() -> Self {
        Self {
            coef: Matrix::from_parts(1, 1, vec![1.0]),
        }
    }

    /// Exact latent `x - z B` for each row.
    pub fn transport(&self, state: &Matrix, cond: &Matrix) -> Result<Matrix> {
        let mean = cond.matmul(&self.coef)?;
        state.add_scaled(&mean, -1.0)
    }
}

impl VelocityField for LinearGaussianField {
    fn side_dim(&self) -> usize {
        self.coef.cols()
    }

    fn cond_dim(&self) -> usize {
        self.coef.rows()
    }

    fn eval(&self, t: f64, state: &Matrix, cond: &Matrix) -> Result<Matrix> {
        if state.cols() != self.side_dim() || state.rows() != cond.rows() {
            return Err(Error::Dimension(format!(
                "field expects side {} with matching rows, got {}x{} vs {} rows",
                self.side_dim(),
                state.rows(),
                state.cols(),
                cond.rows()
            )));
        }
        let mean = cond.matmul(&self.coef)?;
        let data = state
            .data()
            .iter()
            .zip(mean.data())
            .map(|(&x, &m)| gaussian_velocity(t, x, m))
            .collect();
        Ok(Matrix::from_parts(state.rows(), state.cols(), data))
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += (a[k] - b[k]) * (a[k] - b[k]);
    }
    s.sqrt()
}

/// `S1 + S2 - 2 S3` of an arbitrary pairwise kernel, by literal loops.
fn brute_v_statistic(n: usize, a: impl Fn(usize, usize) -> f64, b: impl Fn(usize, usize) -> f64) -> f64 {
    let nf = n as f64;
    let mut s1 = 0.0;
    for k in 0..n {
        for l in 0..n {
            s1 += a(k, l) * b(k, l);
        }
    }
    s1 /= nf * nf;

    let mut sa = 0.0;
    for k in 0..n {
        for l in 0..n {
            sa += a(k, l);
        }
    }
    let mut sb = 0.0;
    for k in 0..n {
        for l in 0..n {
            sb += b(k, l);
        }
    }
    let s2 = (sa / (nf * nf)) * (sb / (nf * nf));

    let mut s3 = 0.0;
    for k in 0..n {
        for l in 0..n {
            for m in 0..n {
                s3 += a(k, l) * b(k, m);
            }
        }
    }
    s3 /= nf * nf * nf;

    s1 + s2 - 2.0 * s3
}

fn check(u: &Matrix, v: &Matrix) -> Result<usize> {
    if u.rows() != v.rows() || u.rows() < 2 {
        return Err(Error::Argument(format!(
            "need two samples of equal size >= 2, got {} and {}",
            u.rows(),
            v.rows()
        )));
    }
    Ok(u.rows())
}

/// Squared distance covariance by the triple-loop definition.
pub fn brute_dcov2(u: &Matrix, v: &Matrix) -> Result<f64> {
    let n = check(u, v)?;
    Ok(brute_v_statistic(
        n,
        |k, l| euclid(u.row(k), u.row(l)),
        |k, l| euclid(v.row(k), v.row(l)),
    ))
}

fn brute_median_sq_norm(m: &Matrix) -> f64 {
    let mut norms: Vec<f64> = (0..m.rows())
        .map(|i| m.row(i).iter().map(|x| x * x).sum())
        .collect();
    norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = norms.len();
    if n % 2 == 1 {
        norms[n / 2]
    } else {
        (norms[n / 2 - 1] + norms[n / 2]) / 2.0
    }
}

fn brute_arccos(a: &[f64], b: &[f64], s: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (mut ab, mut aa, mut bb) = (s, s, s);
    for k in 0..a.len() {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    (ab / aa.sqrt() / bb.sqrt()).clamp(-1.0, 1.0).acos()
}

/// Squared improved projection covariance by the triple-loop definition.
pub fn brute_ipcov2(u: &Matrix, v: &Matrix) -> Result<f64> {
    let n = check(u, v)?;
    let (su, sv) = (brute_median_sq_norm(u), brute_median_sq_norm(v));
    let ka = |k: usize, l: usize| brute_arccos(u.row(k), u.row(l), su);
    let kb = |k: usize, l: usize| brute_arccos(v.row(k), v.row(l), sv);
    // Precompute so the cubic S3 loop stays affordable.
    let a: Vec<f64> = (0..n * n).map(|i| ka(i / n, i % n)).collect();
    let b: Vec<f64> = (0..n * n).map(|i| kb(i / n, i % n)).collect();
    if a.iter().chain(&b).any(|x| x.is_nan()) {
        return Err(Error::Degenerate("arc-cosine kernel undefined".into()));
    }
    Ok(brute_v_statistic(n, |k, l| a[k * n + l], |k, l| b[k * n + l]))
}
