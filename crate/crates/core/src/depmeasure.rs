//! Sample distance covariance / correlation and improved projection
//! correlation.
//!
//! Both measures share one pipeline: build a pairwise dissimilarity matrix
//! per variable, double-center it, and average the elementwise product. The
//! V-statistic `S1 + S2 - 2 S3` equals `(1/n^2) sum_ij A_ij B_ij` for the
//! doubly centered matrices `A`, `B`; this module evaluates the centered form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, sq_dist, Matrix};

/// Which dependence measure a test uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasureKind {
    /// Squared distance correlation.
    #[default]
    #[serde(rename = "dc")]
    DistanceCorrelation,
    /// Squared improved projection correlation.
    #[serde(rename = "ipc")]
    ImprovedProjectionCorrelation,
}

impl MeasureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MeasureKind::DistanceCorrelation => "dc",
            MeasureKind::ImprovedProjectionCorrelation => "ipc",
        }
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MeasureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dc" | "dcor" | "distance-correlation" => Ok(Self::DistanceCorrelation),
            "ipc" | "improved-projection-correlation" => Ok(Self::ImprovedProjectionCorrelation),
            other => Err(Error::Config(format!("unknown measure `{other}` (expected dc or ipc)"))),
        }
    }
}

/// A doubly centered `n x n` dissimilarity matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CenteredDistances {
    a: Matrix,
}

impl CenteredDistances {
    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    /// `(1/n^2) sum_ij A_ij B_ij`.
    pub fn inner(&self, other: &CenteredDistances) -> f64 {
        let n = self.n() as f64;
        dot(self.a.data(), other.a.data()) / (n * n)
    }

    /// `(1/n^2) sum_ij A_ij B_{perm(i) perm(j)}`, i.e. the inner product
    /// after reordering the samples behind `other`.
    pub fn inner_permuted(&self, other: &CenteredDistances, perm: &[usize]) -> f64 {
        let n = self.n();
        let mut total = 0.0;
        for i in 0..n {
            let a = self.a.row(i);
            let b = other.a.row(perm[i]);
            let mut s = 0.0;
            for j in 0..n {
                s += a[j] * b[perm[j]];
            }
            total += s;
        }
        total / (n as f64 * n as f64)
    }
}

/// Euclidean distances between all pairs of rows.
pub fn pairwise_dist(m: &Matrix) -> Matrix {
    let n = m.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = sq_dist(m.row(i), m.row(j)).sqrt();
            d.data_mut()[i * n + j] = v;
            d.data_mut()[j * n + i] = v;
        }
    }
    d
}

/// `A_ij = D_ij - rowmean_i - colmean_j + grandmean`.
pub fn double_center(d: &Matrix) -> Result<CenteredDistances> {
    let n = d.rows();
    if d.cols() != n {
        return Err(Error::Dimension(format!(
            "distance matrix must be square, got {}x{}",
            d.rows(),
            d.cols()
        )));
    }
    if n == 0 {
        return Ok(CenteredDistances { a: d.clone() });
    }
    let nf = n as f64;
    let row_mean: Vec<f64> = (0..n).map(|i| d.row(i).iter().sum::<f64>() / nf).collect();
    let mut col_mean = vec![0.0; n];
    for i in 0..n {
        for (c, &v) in col_mean.iter_mut().zip(d.row(i)) {
            *c += v;
        }
    }
    col_mean.iter_mut().for_each(|c| *c /= nf);
    let grand = row_mean.iter().sum::<f64>() / nf;
    let mut a = d.clone();
    for i in 0..n {
        let r = a.row_mut(i);
        for j in 0..n {
            r[j] = r[j] - row_mean[i] - col_mean[j] + grand;
        }
    }
    Ok(CenteredDistances { a })
}

fn check_pair(u: &Matrix, v: &Matrix) -> Result<()> {
    if u.rows() != v.rows() {
        return Err(Error::Dimension(format!(
            "samples differ in size: {} vs {}",
            u.rows(),
            v.rows()
        )));
    }
    if u.rows() < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 samples, got {}",
            u.rows()
        )));
    }
    Ok(())
}

/// Squared sample distance covariance (V-statistic).
pub fn dcov2(u: &Matrix, v: &Matrix) -> Result<f64> {
    check_pair(u, v)?;
    let a = double_center(&pairwise_dist(u))?;
    let b = double_center(&pairwise_dist(v))?;
    Ok(a.inner(&b))
}

/// `cov2(U,V) / sqrt(cov2(U,U) cov2(V,V))`, or zero when either variable's
/// self-covariance vanishes.
pub fn correlation_from_centered(a: &CenteredDistances, b: &CenteredDistances) -> f64 {
    ratio(a.inner(b), a.inner(a), b.inner(b))
}

pub(crate) fn ratio(cross: f64, uu: f64, vv: f64) -> f64 {
    let denom = (uu * vv).sqrt();
    if !(denom > 0.0) {
        0.0
    } else {
        cross / denom
    }
}

/// Squared sample distance correlation.
pub fn dcorr2(u: &Matrix, v: &Matrix) -> Result<f64> {
    check_pair(u, v)?;
    let a = double_center(&pairwise_dist(u))?;
    let b = double_center(&pairwise_dist(v))?;
    Ok(correlation_from_centered(&a, &b))
}

/// Arc-cosine kernel
/// `arccos((s + u.w) / sqrt((s + u.u)(s + w.w)))` with the cosine clamped to
/// `[-1, 1]`.
pub fn arccos_kernel(u: &[f64], w: &[f64], sigma2: f64) -> Result<f64> {
    if u.len() != w.len() {
        return Err(Error::Dimension(format!(
            "vectors differ in length: {} vs {}",
            u.len(),
            w.len()
        )));
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::Argument(format!("sigma2 must be nonnegative, got {sigma2}")));
    }
    let denom = ((sigma2 + dot(u, u)) * (sigma2 + dot(w, w))).sqrt();
    if !(denom > 0.0) {
        return Err(Error::Degenerate(
            "arc-cosine kernel undefined for a zero vector with zero bandwidth".into(),
        ));
    }
    let cos = ((sigma2 + dot(u, w)) / denom).clamp(-1.0, 1.0);
    Ok(cos.acos())
}

/// Median of the squared row norms, the bandwidth used for each variable.
pub fn ipc_bandwidth(m: &Matrix) -> f64 {
    let mut norms: Vec<f64> = (0..m.rows()).map(|i| dot(m.row(i), m.row(i))).collect();
    median(&mut norms)
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let k = values.len() / 2;
    if values.len() % 2 == 1 {
        values[k]
    } else {
        0.5 * (values[k - 1] + values[k])
    }
}

/// Pairwise arc-cosine kernel matrix with the median bandwidth. Identical
/// rows get 0, the limit of the kernel at `u = w`.
pub fn arccos_matrix(m: &Matrix) -> Result<Matrix> {
    let n = m.rows();
    let sigma2 = ipc_bandwidth(m);
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let (ri, rj) = (m.row(i), m.row(j));
            let v = if ri == rj { 0.0 } else { arccos_kernel(ri, rj, sigma2)? };
            k.data_mut()[i * n + j] = v;
            k.data_mut()[j * n + i] = v;
        }
    }
    Ok(k)
}

/// Squared sample improved projection covariance.
pub fn ipcov2(u: &Matrix, v: &Matrix) -> Result<f64> {
    check_pair(u, v)?;
    let a = double_center(&arccos_matrix(u)?)?;
    let b = double_center(&arccos_matrix(v)?)?;
    Ok(a.inner(&b))
}

/// Squared sample improved projection correlation.
pub fn ipcorr2(u: &Matrix, v: &Matrix) -> Result<f64> {
    check_pair(u, v)?;
    let a = double_center(&arccos_matrix(u)?)?;
    let b = double_center(&arccos_matrix(v)?)?;
    Ok(correlation_from_centered(&a, &b))
}

/// Centered dissimilarities of one variable under the given measure.
pub fn centered(kind: MeasureKind, m: &Matrix) -> Result<CenteredDistances> {
    match kind {
        MeasureKind::DistanceCorrelation => double_center(&pairwise_dist(m)),
        MeasureKind::ImprovedProjectionCorrelation => double_center(&arccos_matrix(m)?),
    }
}

/// The chosen squared correlation between `u` and `v`.
pub fn measure(kind: MeasureKind, u: &Matrix, v: &Matrix) -> Result<f64> {
    match kind {
        MeasureKind::DistanceCorrelation => dcorr2(u, v),
        MeasureKind::ImprovedProjectionCorrelation => ipcorr2(u, v),
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn col(v: &[f64]) -> Matrix {
        Matrix::column(v).unwrap()
    }

    #[test]
    fn pairwise_small_cases() {
        assert_eq!(pairwise_dist(&col(&[0.0, 3.0])).to_rows(), vec![vec![0.0, 3.0], vec![3.0, 0.0]]);
        let m = Matrix::from_rows(&[[0.0, 0.0], [3.0, 4.0]]).unwrap();
        let d = pairwise_dist(&m);
        assert_eq!(d.get(0, 1), 5.0);
        assert_eq!(d.get(1, 1), 0.0);
    }

    #[test]
    fn double_center_by_hand() {
        let d = Matrix::from_rows(&[[0.0, 2.0], [2.0, 0.0]]).unwrap();
        let a = double_center(&d).unwrap();
        assert_eq!(a.matrix().to_rows(), vec![vec![-1.0, 1.0], vec![1.0, -1.0]]);
        let z = double_center(&Matrix::zeros(3, 3)).unwrap();
        assert!(z.matrix().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_point_values() {
        let u = col(&[0.0, 1.0]);
        let v = col(&[0.0, 2.0]);
        assert_eq!(dcov2(&u, &v).unwrap(), 0.5);
        assert_eq!(dcorr2(&u, &v).unwrap(), 1.0);
    }

    #[test]
    fn constant_conventions() {
        let u = col(&[0.3, -1.0, 2.0, 0.7]);
        let v = col(&[1.5; 4]);
        assert_eq!(dcov2(&u, &v).unwrap(), 0.0);
        assert_eq!(dcorr2(&u, &v).unwrap(), 0.0);
        assert_eq!(ipcorr2(&u, &v).unwrap(), 0.0);
        let zero = col(&[0.0; 4]);
        assert_eq!(ipcorr2(&u, &zero).unwrap(), 0.0);
    }

    #[test]
    fn self_correlation_is_one() {
        let u = Matrix::from_rows(&[[0.1, 2.0], [-1.0, 0.4], [3.0, 3.0], [0.0, -2.2]]).unwrap();
        assert!((dcorr2(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert!((ipcorr2(&u, &u).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(dcov2(&col(&[1.0]), &col(&[2.0])), Err(Error::Argument(_))));
        assert!(matches!(dcorr2(&col(&[1.0, 2.0]), &col(&[2.0])), Err(Error::Dimension(_))));
    }

    #[test]
    fn kernel_values() {
        assert_eq!(arccos_kernel(&[0.4, -2.0], &[0.4, -2.0], 0.5).unwrap(), 0.0);
        let k = arccos_kernel(&[1.0], &[-1.0], 1.0).unwrap();
        assert!((k - PI / 2.0).abs() < 1e-15);
        assert!(matches!(arccos_kernel(&[0.0], &[0.0], 0.0), Err(Error::Degenerate(_))));
        // cosine a hair above one from rounding must clamp, not NaN
        let u = [0.1, 0.2, 0.3];
        let w = [0.1 * (1.0 + 1e-16), 0.2, 0.3];
        let k = arccos_kernel(&u, &w, 1e-3).unwrap();
        assert!(k.is_finite() && k < 1e-7);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn permuted_inner_matches_recompute() {
        let u = Matrix::from_rows(&[[0.0], [1.0], [3.0], [-2.0], [0.5]]).unwrap();
        let v = Matrix::from_rows(&[[1.0, 0.0], [0.2, 2.0], [0.0, 0.0], [4.0, 1.0], [-1.0, 1.0]]).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let a = centered(MeasureKind::DistanceCorrelation, &u).unwrap();
        let b = centered(MeasureKind::DistanceCorrelation, &v).unwrap();
        let fast = a.inner_permuted(&b, &perm);
        let slow = dcov2(&u, &v.select_rows(&perm)).unwrap();
        assert!((fast - slow).abs() < 1e-14);
    }

    #[test]
    fn measure_kind_parsing() {
        assert_eq!("ipc".parse::<MeasureKind>().unwrap(), MeasureKind::ImprovedProjectionCorrelation);
        assert_eq!("DC".parse::<MeasureKind>().unwrap(), MeasureKind::DistanceCorrelation);
        assert!("pearson".parse::<MeasureKind>().is_err());
        assert_eq!(serde_json::to_string(&MeasureKind::ImprovedProjectionCorrelation).unwrap(), "\"ipc\"");
    }
}
