//! Simulation models and the replication engine behind the size and power
//! studies.
//!
//! Every replication redraws the coefficient matrices along with the noise.
//! Scalar links (`sin`, `cos`, square, `abs`, `exp`) act elementwise on the
//! matrix products.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::citest::{learned_fields, test_transports, transport_splits, Direction, SplitTransport, TestConfig};
use crate::data::{DataTriplet, Dims};
use crate::depmeasure::MeasureKind;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::oracle::LinearGaussianField;
use crate::seeds::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimModel {
    /// `X = Z B1 + e`, `Y = Z B2 + e`; always conditionally independent.
    Convergence,
    /// Scalar `X`, `Y` with two-dimensional `Z`.
    Univariate,
    /// Dimensions (3, 3, 3).
    LowLow,
    /// Dimensions (5, 5, 50).
    LowHigh,
    /// Dimensions (50, 50, 50).
    HighHigh,
}

impl SimModel {
    pub const ALL: [SimModel; 5] = [
        SimModel::Convergence,
        SimModel::Univariate,
        SimModel::LowLow,
        SimModel::LowHigh,
        SimModel::HighHigh,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SimModel::Convergence => "convergence",
            SimModel::Univariate => "univariate",
            SimModel::LowLow => "low-low",
            SimModel::LowHigh => "low-high",
            SimModel::HighHigh => "high-high",
        }
    }

    pub fn default_dims(&self) -> Dims {
        match self {
            SimModel::Convergence => Dims::new(1, 1, 1),
            SimModel::Univariate => Dims::new(1, 1, 2),
            SimModel::LowLow => Dims::new(3, 3, 3),
            SimModel::LowHigh => Dims::new(5, 5, 50),
            SimModel::HighHigh => Dims::new(50, 50, 50),
        }
    }

    pub fn default_n(&self) -> usize {
        match self {
            SimModel::Convergence | SimModel::Univariate | SimModel::LowLow => 500,
            SimModel::LowHigh | SimModel::HighHigh => 1000,
        }
    }

    /// Number of held-out folds used in the published studies.
    pub fn default_splits(&self) -> usize {
        match self {
            SimModel::Convergence => 1,
            SimModel::Univariate | SimModel::LowLow => 5,
            SimModel::LowHigh | SimModel::HighHigh => 2,
        }
    }

    /// First hidden width of the velocity networks.
    pub fn default_width(&self) -> usize {
        match self {
            SimModel::Convergence | SimModel::Univariate | SimModel::LowLow => 32,
            SimModel::LowHigh => 80,
            SimModel::HighHigh => 600,
        }
    }

    fn has_settings(&self) -> bool {
        *self != SimModel::Convergence
    }
}

impl fmt::Display for SimModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        SimModel::ALL
            .into_iter()
            .find(|m| m.as_str() == key)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown model `{s}` (expected convergence, univariate, low-low, low-high or high-high)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub model: SimModel,
    /// 1..=4; `None` for the convergence model.
    pub setting: Option<u8>,
    pub psi: f64,
    pub dims: Dims,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
}

impl SimSpec {
    /// Spec with the model's default dimensions and sample size.
    pub fn new(model: SimModel, setting: Option<u8>, psi: f64, reps: usize, seed: u64) -> Self {
        Self {
            model,
            setting,
            psi,
            dims: model.default_dims(),
            n: model.default_n(),
            reps,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("replication count must be at least 1".into()));
        }
        if !(self.psi.is_finite() && self.psi >= 0.0) {
            return Err(Error::Config(format!("psi must be finite and non-negative, got {}", self.psi)));
        }
        if self.n < 4 {
            return Err(Error::Config(format!("sample size must be at least 4, got {}", self.n)));
        }
        if self.model.has_settings() {
            match self.setting {
                Some(1..=4) => {}
                Some(s) => return Err(Error::Config(format!("setting must be 1..4, got {s}"))),
                None => return Err(Error::Config(format!("model {} needs a setting", self.model))),
            }
            if self.dims != self.model.default_dims() {
                return Err(Error::Config(format!(
                    "model {} has fixed dimensions {}, got {}",
                    self.model,
                    self.model.default_dims(),
                    self.dims
                )));
            }
        } else {
            if self.setting.is_some() {
                return Err(Error::Config("the convergence model has no settings".into()));
            }
            if self.psi != 0.0 {
                return Err(Error::Config("the convergence model has no psi".into()));
            }
            if self.dims.x == 0 || self.dims.y == 0 || self.dims.z == 0 {
                return Err(Error::Config(format!("dimensions must be positive, got {}", self.dims)));
            }
        }
        Ok(())
    }
}

/// A simulated dataset together with the coefficient matrices that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub data: DataTriplet,
    pub b1: Matrix,
    pub b2: Matrix,
    pub b3: Option<Matrix>,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_parts(rows, cols, data)
}

/// Gaussian entries in the leading `r x c` block, zero elsewhere.
fn leading_block(rng: &mut ChaCha8Rng, rows: usize, cols: usize, r: usize, c: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..r.min(rows) {
        for j in 0..c.min(cols) {
            m.set(i, j, StandardNormal.sample(rng));
        }
    }
    m
}

/// Each entry Gaussian with probability `p`, else zero.
fn bernoulli_sparse(rng: &mut ChaCha8Rng, rows: usize, cols: usize, p: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let keep = rng.random::<f64>() < p;
            let v: f64 = StandardNormal.sample(rng);
            if keep {
                v
            } else {
                0.0
            }
        })
        .collect();
    Matrix::from_parts(rows, cols, data)
}

fn student_t3(rng: &mut ChaCha8Rng, rows: usize) -> Matrix {
    let dist = StudentT::new(3.0).expect("valid degrees of freedom");
    Matrix::from_parts(rows, 1, (0..rows).map(|_| dist.sample(rng)).collect())
}

fn sum(parts: &[&Matrix]) -> Matrix {
    let mut out = parts[0].clone();
    for p in &parts[1..] {
        out = out.add_scaled(p, 1.0).expect("generator shapes agree");
    }
    out
}

fn mul(a: &Matrix, b: &Matrix) -> Matrix {
    a.matmul(b).expect("generator shapes agree")
}

fn scaled(m: &Matrix, s: f64) -> Matrix {
    m.map(|v| v * s)
}

fn check_setting(setting: u8) -> Result<()> {
    if (1..=4).contains(&setting) {
        Ok(())
    } else {
        Err(Error::Config(format!("setting must be 1..4, got {setting}")))
    }
}

fn finish(x: Matrix, y: Matrix, z: Matrix, b1: Matrix, b2: Matrix, b3: Option<Matrix>) -> Result<Generated> {
    if !(x.all_finite() && y.all_finite()) {
        return Err(Error::Numeric { step: 0 });
    }
    Ok(Generated {
        data: DataTriplet::new(x, y, z)?,
        b1,
        b2,
        b3,
    })
}

/// `X = Z B1 + e_x`, `Y = Z B2 + e_y` with all entries standard Gaussian.
pub fn gen_convergence(dims: Dims, n: usize, seed: u64) -> Result<Generated> {
    if dims.x == 0 || dims.y == 0 || dims.z == 0 {
        return Err(Error::Config(format!("dimensions must be positive, got {dims}")));
    }
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let b1 = gaussian(rng, dims.z, dims.x);
    let b2 = gaussian(rng, dims.z, dims.y);
    let ex = gaussian(rng, n, dims.x);
    let ey = gaussian(rng, n, dims.y);
    let z = gaussian(rng, n, dims.z);
    let x = sum(&[&mul(&z, &b1), &ex]);
    let y = sum(&[&mul(&z, &b2), &ey]);
    finish(x, y, z, b1, b2, None)
}

/// Scalar `X` and `Y`, `Z` in two dimensions. Settings 3 and 4 use `t_3`
/// noise for `X`; setting 2 routes the link through `exp`, setting 4 feeds
/// `cos(Z B1)` into `X`.
pub fn gen_univariate(setting: u8, psi: f64, n: usize, seed: u64) -> Result<Generated> {
    check_setting(setting)?;
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let b1 = gaussian(rng, 2, 1);
    let b2 = gaussian(rng, 2, 1);
    let b3 = gaussian(rng, 1, 1);
    let z = gaussian(rng, n, 2);
    let ey = gaussian(rng, n, 1);
    let ex = if setting >= 3 { student_t3(rng, n) } else { gaussian(rng, n, 1) };
    let zb1 = mul(&z, &b1);
    let x = match setting {
        4 => sum(&[&zb1.map(f64::cos), &ex]),
        _ => sum(&[&zb1, &ex]),
    };
    let link = scaled(&mul(&x, &b3), psi);
    let link = if setting == 2 { link.map(f64::exp) } else { link };
    let y = sum(&[&mul(&z, &b2), &link, &ey]);
    finish(x, y, z, b1, b2, Some(b3))
}

/// Dimensions (3, 3, 3), dense Gaussian coefficients.
pub fn gen_lowlow(setting: u8, psi: f64, n: usize, seed: u64) -> Result<Generated> {
    check_setting(setting)?;
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let b1 = gaussian(rng, 3, 3);
    let b2 = gaussian(rng, 3, 3);
    let b3 = gaussian(rng, 3, 3);
    let z = gaussian(rng, n, 3);
    let ex = gaussian(rng, n, 3);
    let ey = gaussian(rng, n, 3);
    let zb1 = mul(&z, &b1);
    let x = match setting {
        3 => sum(&[&zb1.map(|v| v * v), &ex]),
        _ => sum(&[&zb1, &ex]),
    };
    let zb2 = mul(&z, &b2);
    let zb2 = if setting == 2 { zb2.map(f64::sin) } else { zb2 };
    let link = scaled(&mul(&x, &b3), psi);
    let link = if setting == 4 { link.map(f64::abs) } else { link };
    let y = sum(&[&zb2, &link, &ey]);
    finish(x, y, z, b1, b2, Some(b3))
}

/// Dimensions (5, 5, 50) with the sparsity pattern of each setting.
pub fn gen_lowhigh(setting: u8, psi: f64, n: usize, seed: u64) -> Result<Generated> {
    check_setting(setting)?;
    let (dx, dy, dz) = (5, 5, 50);
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let (b1, b2, b3) = match setting {
        1 => (
            leading_block(rng, dz, dx, 3, dx),
            leading_block(rng, dz, dy, 3, dy),
            gaussian(rng, dx, dy),
        ),
        2 => (
            leading_block(rng, dz, dx, 3, 1),
            leading_block(rng, dz, dy, 3, 1),
            leading_block(rng, dx, dy, 3, 1),
        ),
        3 => (
            leading_block(rng, dz, dx, 2, dx),
            leading_block(rng, dz, dy, 2, dy),
            gaussian(rng, dx, dy),
        ),
        _ => (gaussian(rng, dz, dx), gaussian(rng, dz, dy), gaussian(rng, dx, dy)),
    };
    let z = gaussian(rng, n, dz);
    let ex = gaussian(rng, n, dx);
    let ey = gaussian(rng, n, dy);
    let zb1 = mul(&z, &b1);
    let x = match setting {
        4 => sum(&[&zb1.map(f64::sin), &ex]),
        _ => sum(&[&zb1, &ex]),
    };
    let zb2 = mul(&z, &b2);
    let xb3 = mul(&x, &b3);
    let y = match setting {
        2 => sum(&[&zb2.map(|v| v * v), &scaled(&xb3, 4.0 * psi), &ey]),
        4 => sum(&[&zb2, &scaled(&xb3, 5.0 * psi).map(f64::abs), &ey]),
        _ => sum(&[&zb2, &scaled(&xb3, psi), &ey]),
    };
    finish(x, y, z, b1, b2, Some(b3))
}

/// Dimensions (50, 50, 50) with the sparsity pattern of each setting.
pub fn gen_highhigh(setting: u8, psi: f64, n: usize, seed: u64) -> Result<Generated> {
    check_setting(setting)?;
    let d = 50;
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let (b1, b2, b3) = match setting {
        1 => (leading_block(rng, d, d, 2, d), leading_block(rng, d, d, 2, d), gaussian(rng, d, d)),
        2 => (leading_block(rng, d, d, 1, d), leading_block(rng, d, d, 1, d), gaussian(rng, d, d)),
        3 => (
            leading_block(rng, d, d, 3, 3),
            leading_block(rng, d, d, 3, 3),
            leading_block(rng, d, d, 3, 3),
        ),
        _ => (
            bernoulli_sparse(rng, d, d, 0.1),
            bernoulli_sparse(rng, d, d, 0.1),
            bernoulli_sparse(rng, d, d, 0.1),
        ),
    };
    let z = gaussian(rng, n, d);
    let ex = gaussian(rng, n, d);
    let ey = gaussian(rng, n, d);
    let zb1 = mul(&z, &b1);
    let x = match setting {
        4 => sum(&[&zb1.map(f64::cos), &ex]),
        _ => sum(&[&zb1, &ex]),
    };
    let zb2 = mul(&z, &b2);
    let link = scaled(&mul(&x, &b3), psi);
    let y = match setting {
        3 => sum(&[&zb2, &link.map(f64::abs), &ey]),
        4 => sum(&[&zb2.map(f64::sin), &link, &ey]),
        _ => sum(&[&zb2, &link, &ey]),
    };
    finish(x, y, z, b1, b2, Some(b3))
}

/// One draw from `spec` with the given seed.
pub fn generate(spec: &SimSpec, seed: u64) -> Result<Generated> {
    spec.validate()?;
    let setting = spec.setting.unwrap_or(0);
    match spec.model {
        SimModel::Convergence => gen_convergence(spec.dims, spec.n, seed),
        SimModel::Univariate => gen_univariate(setting, spec.psi, spec.n, seed),
        SimModel::LowLow => gen_lowlow(setting, spec.psi, spec.n, seed),
        SimModel::LowHigh => gen_lowhigh(setting, spec.psi, spec.n, seed),
        SimModel::HighHigh => gen_highhigh(setting, spec.psi, spec.n, seed),
    }
}

/// How the velocity fields of each replication are obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VelocityMode {
    /// Trained by flow matching.
    #[default]
    Learned,
    /// Exact fields of the linear Gaussian model (convergence model only).
    Oracle,
}

/// Seed of replication `r`.
pub fn replication_seed(master: u64, r: usize) -> u64 {
    derive_seed(master, &[3, r as u64])
}

/// Latents of one replication, ready for any measure or direction.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationTransports {
    pub seed: u64,
    pub splits: Vec<SplitTransport>,
}

fn test_seed(rep_seed: u64) -> u64 {
    derive_seed(rep_seed, &[1])
}

/// Generates every replication and transports its held-out folds.
pub fn replicate_transports(
    spec: &SimSpec,
    cfg: &TestConfig,
    mode: VelocityMode,
) -> Result<Vec<ReplicationTransports>> {
    spec.validate()?;
    cfg.validate()?;
    if mode == VelocityMode::Oracle && spec.model != SimModel::Convergence {
        return Err(Error::Config("oracle velocities exist only for the convergence model".into()));
    }
    (0..spec.reps)
        .into_par_iter()
        .map(|r| {
            let seed = replication_seed(spec.seed, r);
            let run = || -> Result<ReplicationTransports> {
                let gen = generate(spec, derive_seed(seed, &[0]))?;
                let rep_cfg = TestConfig {
                    seed: test_seed(seed),
                    ..cfg.clone()
                };
                let splits = match mode {
                    VelocityMode::Learned => {
                        transport_splits(&gen.data, &rep_cfg, |k, train| learned_fields(&rep_cfg, k, train))?
                    }
                    VelocityMode::Oracle => transport_splits(&gen.data, &rep_cfg, |_, _| {
                        Ok((
                            Box::new(LinearGaussianField::new(gen.b1.clone())),
                            Box::new(LinearGaussianField::new(gen.b2.clone())),
                        ))
                    })?,
                };
                Ok(ReplicationTransports { seed, splits })
            };
            run().map_err(|e| Error::Replication {
                index: r,
                source: Box::new(e),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: SimSpec,
    pub alpha: f64,
    pub seeds: Vec<u64>,
    pub p_values: Vec<f64>,
    pub rejection_rate: f64,
}

pub fn rejection_rate(ps: &[f64], alpha: f64) -> f64 {
    ps.iter().filter(|&&p| p <= alpha).count() as f64 / ps.len() as f64
}

/// Combined p-value of every replication under the given test choices.
pub fn evaluate_transports(
    reps: &[ReplicationTransports],
    permutations: usize,
    measure: MeasureKind,
    direction: Direction,
) -> Result<Vec<f64>> {
    reps.par_iter()
        .enumerate()
        .map(|(r, rep)| {
            test_transports(&rep.splits, permutations, measure, direction, test_seed(rep.seed))
                .map(|(_, p)| p)
                .map_err(|e| Error::Replication {
                    index: r,
                    source: Box::new(e),
                })
        })
        .collect()
}

pub fn run_experiment(spec: &SimSpec, cfg: &TestConfig, alpha: f64, mode: VelocityMode) -> Result<ExperimentResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let reps = replicate_transports(spec, cfg, mode)?;
    let p_values = evaluate_transports(&reps, cfg.permutations, cfg.measure, cfg.direction)?;
    Ok(ExperimentResult {
        spec: spec.clone(),
        alpha,
        seeds: reps.iter().map(|r| r.seed).collect(),
        rejection_rate: rejection_rate(&p_values, alpha),
        p_values,
    })
}

fn sorted_checked(ps: &[f64]) -> Result<Vec<f64>> {
    if ps.is_empty() {
        return Err(Error::Argument("no p-values".into()));
    }
    if let Some(p) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Data(format!("p-value {p} outside [0, 1]")));
    }
    let mut s = ps.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// `((i - 0.5) / N, p_(i))` pairs for a uniform Q-Q plot.
pub fn qq_data(ps: &[f64]) -> Result<Vec<(f64, f64)>> {
    let s = sorted_checked(ps)?;
    let n = s.len() as f64;
    Ok(s.into_iter()
        .enumerate()
        .map(|(i, p)| ((i as f64 + 0.5) / n, p))
        .collect())
}

/// One-sample Kolmogorov-Smirnov distance to the uniform law on [0, 1].
pub fn ks_statistic(ps: &[f64]) -> Result<f64> {
    let s = sorted_checked(ps)?;
    let n = s.len() as f64;
    Ok(s.iter()
        .enumerate()
        .map(|(i, &p)| ((i as f64 + 1.0) / n - p).max(p - i as f64 / n))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nonzero(m: &Matrix) -> usize {
        m.data().iter().filter(|v| **v != 0.0).count()
    }

    #[test]
    fn shapes_and_determinism() {
        let g = gen_convergence(Dims::new(1, 1, 1), 500, 3).unwrap();
        assert_eq!(g.data.dims(), Dims::new(1, 1, 1));
        assert_eq!(g.data.n(), 500);
        assert_eq!(g, gen_convergence(Dims::new(1, 1, 1), 500, 3).unwrap());
        assert_ne!(g, gen_convergence(Dims::new(1, 1, 1), 500, 4).unwrap());
        for model in &SimModel::ALL[1..] {
            let spec = SimSpec::new(*model, Some(4), 0.1, 1, 0);
            let g = generate(&SimSpec { n: 20, ..spec }, 1).unwrap();
            assert_eq!(g.data.dims(), model.default_dims());
        }
    }

    #[test]
    fn psi_zero_leaves_y_free_of_x() {
        for setting in 1..=4 {
            for f in [gen_univariate, gen_lowlow, gen_lowhigh, gen_highhigh] {
                let a = f(setting, 0.0, 30, 9).unwrap();
                let b = f(setting, 0.3, 30, 9).unwrap();
                assert_eq!(a.data.x(), b.data.x());
                assert_eq!(a.data.z(), b.data.z());
                assert_ne!(a.data.y(), b.data.y());
            }
        }
        // exp(0) = 1: the exp link at psi = 0 is a unit shift of the linear one
        let a = gen_univariate(2, 0.0, 30, 9).unwrap();
        let b = gen_univariate(1, 0.0, 30, 9).unwrap();
        for (ya, yb) in a.data.y().data().iter().zip(b.data.y().data()) {
            assert!((ya - yb - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lowhigh_sparsity() {
        let g = gen_lowhigh(1, 0.2, 10, 1).unwrap();
        assert!((3..50).all(|i| g.b1.row(i).iter().all(|v| *v == 0.0)));
        assert!((3..50).all(|i| g.b2.row(i).iter().all(|v| *v == 0.0)));
        assert_eq!(nonzero(&g.b1), 15);
        assert_eq!(nonzero(g.b3.as_ref().unwrap()), 25);
        let g = gen_lowhigh(2, 0.2, 10, 1).unwrap();
        assert_eq!((nonzero(&g.b1), nonzero(&g.b2), nonzero(g.b3.as_ref().unwrap())), (3, 3, 3));
        assert!((0..3).all(|i| g.b3.as_ref().unwrap().get(i, 0) != 0.0));
        let g = gen_lowhigh(3, 0.2, 10, 1).unwrap();
        assert_eq!((nonzero(&g.b1), nonzero(&g.b2)), (10, 10));
        let g = gen_lowhigh(4, 0.2, 10, 1).unwrap();
        assert_eq!(nonzero(&g.b1), 250);
    }

    #[test]
    fn highhigh_sparsity() {
        let g = gen_highhigh(1, 0.2, 10, 1).unwrap();
        assert_eq!((nonzero(&g.b1), nonzero(&g.b2)), (100, 100));
        let g = gen_highhigh(2, 0.2, 10, 1).unwrap();
        assert_eq!((nonzero(&g.b1), nonzero(&g.b2)), (50, 50));
        let g = gen_highhigh(3, 0.2, 10, 1).unwrap();
        let b3 = g.b3.as_ref().unwrap();
        assert_eq!((nonzero(&g.b1), nonzero(&g.b2), nonzero(b3)), (9, 9, 9));
        assert!((0..3).all(|i| (0..3).all(|j| g.b1.get(i, j) != 0.0)));
        let g = gen_highhigh(4, 0.2, 10, 1).unwrap();
        let frac = nonzero(&g.b1) as f64 / 2500.0;
        assert!((0.07..0.13).contains(&frac), "{frac}");
    }

    #[test]
    fn lowlow_links() {
        let g = gen_lowlow(3, 0.0, 40, 2).unwrap();
        let zb1 = g.data.z().matmul(&g.b1).unwrap();
        // squared mean keeps X - (Z B1)^2 centered noise; check via the noise scale
        let resid: Vec<f64> = g.data.x().data().iter().zip(zb1.data()).map(|(x, m)| x - m * m).collect();
        let mean = resid.iter().sum::<f64>() / resid.len() as f64;
        assert!(mean.abs() < 0.5, "{mean}");
        let g4 = gen_lowlow(4, 1.0, 40, 2).unwrap();
        let g1 = gen_lowlow(1, 1.0, 40, 2).unwrap();
        let zb2 = g4.data.z().matmul(&g4.b2).unwrap();
        let link1 = g1.data.y().add_scaled(&zb2, -1.0).unwrap();
        let link4 = g4.data.y().add_scaled(&zb2, -1.0).unwrap();
        // same noise, same X; setting 4 takes |psi X B3|
        let xb3 = g4.data.x().matmul(g4.b3.as_ref().unwrap()).unwrap();
        for i in 0..link1.data().len() {
            let e = link1.data()[i] - xb3.data()[i];
            assert!((link4.data()[i] - xb3.data()[i].abs() - e).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_settings() {
        assert!(matches!(gen_lowlow(0, 0.1, 10, 0), Err(Error::Config(_))));
        assert!(matches!(gen_highhigh(5, 0.1, 10, 0), Err(Error::Config(_))));
        let spec = SimSpec::new(SimModel::LowLow, None, 0.1, 1, 0);
        assert!(spec.validate().is_err());
        let spec = SimSpec::new(SimModel::LowLow, Some(1), 0.1, 0, 0);
        assert!(spec.validate().is_err());
        let spec = SimSpec::new(SimModel::Convergence, Some(1), 0.0, 1, 0);
        assert!(spec.validate().is_err());
        assert!("middle".parse::<SimModel>().is_err());
        assert_eq!("LOW_HIGH".parse::<SimModel>().unwrap(), SimModel::LowHigh);
    }

    #[test]
    fn qq_and_ks() {
        assert_eq!(qq_data(&[0.5]).unwrap(), vec![(0.5, 0.5)]);
        let grid: Vec<f64> = (0..10).map(|i| (i as f64 + 0.5) / 10.0).collect();
        for (t, e) in qq_data(&grid).unwrap() {
            assert!((t - e).abs() < 1e-15);
        }
        assert!((ks_statistic(&grid).unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(ks_statistic(&[0.0, 0.0]).unwrap(), 1.0);
        assert!(qq_data(&[]).is_err());
        assert!(ks_statistic(&[1.5]).is_err());
    }

    #[test]
    fn oracle_experiment_deterministic() {
        let spec = SimSpec {
            n: 60,
            ..SimSpec::new(SimModel::Convergence, None, 0.0, 3, 5)
        };
        let cfg = TestConfig {
            permutations: 20,
            flow: crate::flow::FlowConfig {
                steps: 10,
                ..Default::default()
            },
            ..TestConfig::default()
        };
        let a = run_experiment(&spec, &cfg, 0.05, VelocityMode::Oracle).unwrap();
        let b = run_experiment(&spec, &cfg, 0.05, VelocityMode::Oracle).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.p_values.len(), 3);
        let lowlow = SimSpec::new(SimModel::LowLow, Some(1), 0.0, 1, 0);
        assert!(run_experiment(&lowlow, &cfg, 0.05, VelocityMode::Oracle).is_err());
        assert!(run_experiment(&spec, &cfg, 0.0, VelocityMode::Oracle).is_err());
    }
}
