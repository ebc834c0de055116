//! The conditional independence test: split the sample, learn both transport
//! maps on the training part, push the held-out fold to its Gaussian latents,
//! and run a permutation independence test on the latents. Several disjoint
//! held-out folds are combined with the Cauchy combination rule.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataTriplet;
use crate::depmeasure::{centered, ratio, MeasureKind};
use crate::error::{Error, Result};
use crate::flow::{fit_velocity, transport_dataset, FlowConfig, TransportOutput, VelocityField};
use crate::linalg::Matrix;
use crate::seeds::derive_seed;

/// Which of the two equivalent unconditional hypotheses is tested.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// `eta` independent of `(xi, Z)`.
    #[default]
    #[serde(rename = "dc1")]
    Dc1,
    /// `xi` independent of `(eta, Z)`.
    #[serde(rename = "dc2")]
    Dc2,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Dc1 => "dc1",
            Direction::Dc2 => "dc2",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "dc1" | "1" => Ok(Direction::Dc1),
            "dc2" | "2" => Ok(Direction::Dc2),
            other => Err(Error::Config(format!("unknown direction `{other}` (expected dc1 or dc2)"))),
        }
    }
}

/// `floor(4 sqrt(n))`, clamped to `[2, n - 2]`.
pub fn default_n2(n: usize) -> Result<usize> {
    if n < 4 {
        return Err(Error::Argument(format!("need at least 4 samples, got {n}")));
    }
    let raw = (4.0 * (n as f64).sqrt()).floor() as usize;
    Ok(raw.clamp(2, n - 2))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    /// Sorted held-out indices.
    pub test: Vec<usize>,
    /// Sorted complement of `test`.
    pub train: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub n: usize,
    pub n2: usize,
    pub folds: Vec<Fold>,
}

impl SplitPlan {
    pub fn m(&self) -> usize {
        self.folds.len()
    }
}

/// `m` pairwise disjoint random test folds of size `n2`, each with its
/// complement as training set.
pub fn make_splits(n: usize, n2: usize, m: usize, seed: u64) -> Result<SplitPlan> {
    if n2 < 2 {
        return Err(Error::Config(format!("test fold size must be at least 2, got {n2}")));
    }
    if n2 >= n {
        return Err(Error::Config(format!(
            "test fold size {n2} leaves no training data out of {n}"
        )));
    }
    if m == 0 {
        return Err(Error::Config("need at least one split".into()));
    }
    let max = n / n2;
    if m > max {
        return Err(Error::Config(format!(
            "{m} disjoint folds of size {n2} do not fit in {n} samples (at most floor(n/n2) = {max})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds = (0..m)
        .map(|k| {
            let mut test = order[k * n2..(k + 1) * n2].to_vec();
            test.sort_unstable();
            let mut in_test = vec![false; n];
            test.iter().for_each(|&i| in_test[i] = true);
            let train = (0..n).filter(|&i| !in_test[i]).collect();
            Fold { test, train }
        })
        .collect();
    Ok(SplitPlan { n, n2, folds })
}

/// DC-1: `U = eta`, `V = [xi | Z]`. DC-2: `U = xi`, `V = [eta | Z]`.
pub fn pair_uv(t: &TransportOutput, z_fold: &Matrix, dir: Direction) -> Result<(Matrix, Matrix)> {
    if t.xi_hat.rows() != z_fold.rows() || t.eta_hat.rows() != z_fold.rows() {
        return Err(Error::Dimension(format!(
            "latents have {}/{} rows but the condition has {}",
            t.xi_hat.rows(),
            t.eta_hat.rows(),
            z_fold.rows()
        )));
    }
    Ok(match dir {
        Direction::Dc1 => (t.eta_hat.clone(), t.xi_hat.hcat(z_fold)?),
        Direction::Dc2 => (t.xi_hat.clone(), t.eta_hat.hcat(z_fold)?),
    })
}

/// Observed statistic `T` and `p = (1/B) #{b : T_b >= T}` where `T_b` is the
/// statistic after shuffling the rows of `v` with the `b`-th permutation.
pub fn permutation_pvalue(
    u: &Matrix,
    v: &Matrix,
    permutations: usize,
    kind: MeasureKind,
    seed: u64,
) -> Result<(f64, f64)> {
    if permutations == 0 {
        return Err(Error::Argument("need at least one permutation".into()));
    }
    if u.rows() != v.rows() {
        return Err(Error::Dimension(format!("{} vs {} rows", u.rows(), v.rows())));
    }
    let n = u.rows();
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 samples, got {n}")));
    }
    let a = centered(kind, u)?;
    let b = centered(kind, v)?;
    let (uu, vv) = (a.inner(&a), b.inner(&b));
    let identity: Vec<usize> = (0..n).collect();
    let observed = ratio(a.inner_permuted(&b, &identity), uu, vv);
    let exceed: usize = (0..permutations as u64)
        .into_par_iter()
        .map(|k| {
            let mut perm = identity.clone();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[k])));
            usize::from(ratio(a.inner_permuted(&b, &perm), uu, vv) >= observed)
        })
        .sum();
    Ok((observed, exceed as f64 / permutations as f64))
}

/// Clamp applied to each p-value before the tangent transform.
pub const P_CLAMP: f64 = 1e-10;

/// Cauchy combination `0.5 - arctan(mean tan((0.5 - p) pi)) / pi`.
pub fn cauchy_combine(ps: &[f64]) -> Result<f64> {
    if ps.is_empty() {
        return Err(Error::Argument("no p-values to combine".into()));
    }
    if let Some(p) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Argument(format!("p-value {p} outside [0, 1]")));
    }
    let t = ps
        .iter()
        .map(|&p| ((0.5 - p.clamp(P_CLAMP, 1.0 - P_CLAMP)) * PI).tan())
        .sum::<f64>()
        / ps.len() as f64;
    Ok(0.5 - t.atan() / PI)
}

/// Everything that determines a test run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    /// Number of permutations `B`.
    pub permutations: usize,
    /// Held-out fold size; `None` means `floor(4 sqrt(n))`.
    pub n2: Option<usize>,
    /// Number of disjoint held-out folds `m`.
    pub splits: usize,
    pub measure: MeasureKind,
    pub direction: Direction,
    pub flow: FlowConfig,
    pub seed: u64,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            permutations: 100,
            n2: None,
            splits: 1,
            measure: MeasureKind::default(),
            direction: Direction::default(),
            flow: FlowConfig::default(),
            seed: 0,
        }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.permutations == 0 {
            return Err(Error::Config("permutation count must be at least 1".into()));
        }
        if self.splits == 0 {
            return Err(Error::Config("split count must be at least 1".into()));
        }
        self.flow.validate()
    }

    pub fn resolve_n2(&self, n: usize) -> Result<usize> {
        match self.n2 {
            Some(n2) => Ok(n2),
            None => default_n2(n),
        }
    }
}

/// Outcome on one held-out fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub index: usize,
    pub test_indices: Vec<usize>,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub n: usize,
    pub n2: usize,
    pub splits: Vec<SplitResult>,
    pub combined_p: f64,
    pub config: TestConfig,
}

impl TestReport {
    pub fn statistics(&self) -> Vec<f64> {
        self.splits.iter().map(|s| s.statistic).collect()
    }

    pub fn p_values(&self) -> Vec<f64> {
        self.splits.iter().map(|s| s.p_value).collect()
    }

    pub fn rejects(&self, alpha: f64) -> bool {
        self.combined_p <= alpha
    }
}

/// Latents of one held-out fold.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitTransport {
    pub index: usize,
    pub test_indices: Vec<usize>,
    pub transport: TransportOutput,
    pub z: Matrix,
}

type BoxedField = Box<dyn VelocityField + Send>;

/// Trains the X- and Y-fields of split `index` on `train`.
pub fn learned_fields(cfg: &TestConfig, index: usize, train: &DataTriplet) -> Result<(BoxedField, BoxedField)> {
    let seed_for = |side: u64| FlowConfig {
        seed: derive_seed(cfg.seed, &[1, index as u64, side, cfg.flow.seed]),
        ..cfg.flow.clone()
    };
    let fx = fit_velocity(train.x(), train.z(), &seed_for(0))?;
    let fy = fit_velocity(train.y(), train.z(), &seed_for(1))?;
    Ok((Box::new(fx), Box::new(fy)))
}

/// Splits `data` and transports each held-out fold with the fields returned by
/// `fit(split_index, training_fold)`.
pub fn transport_splits<F>(data: &DataTriplet, cfg: &TestConfig, fit: F) -> Result<Vec<SplitTransport>>
where
    F: Fn(usize, &DataTriplet) -> Result<(BoxedField, BoxedField)> + Sync,
{
    cfg.validate()?;
    let n = data.n();
    if n < 4 {
        return Err(Error::Argument(format!("need at least 4 samples, got {n}")));
    }
    let n2 = cfg.resolve_n2(n)?;
    let plan = make_splits(n, n2, cfg.splits, derive_seed(cfg.seed, &[0]))?;
    plan.folds
        .par_iter()
        .enumerate()
        .map(|(k, fold)| {
            let run = || -> Result<SplitTransport> {
                let train = data.select_rows(&fold.train);
                let test = data.select_rows(&fold.test);
                let (fx, fy) = fit(k, &train)?;
                let transport = transport_dataset(&fx, &fy, &test, cfg.flow.steps)?;
                Ok(SplitTransport {
                    index: k,
                    test_indices: fold.test.clone(),
                    transport,
                    z: test.z().clone(),
                })
            };
            run().map_err(|e| Error::Split {
                index: k,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Permutation tests on already transported folds, combined across folds.
pub fn test_transports(
    transports: &[SplitTransport],
    permutations: usize,
    measure: MeasureKind,
    direction: Direction,
    seed: u64,
) -> Result<(Vec<SplitResult>, f64)> {
    let splits: Vec<SplitResult> = transports
        .par_iter()
        .map(|s| {
            let run = || -> Result<SplitResult> {
                let (u, v) = pair_uv(&s.transport, &s.z, direction)?;
                let (statistic, p_value) = permutation_pvalue(
                    &u,
                    &v,
                    permutations,
                    measure,
                    derive_seed(seed, &[2, s.index as u64]),
                )?;
                Ok(SplitResult {
                    index: s.index,
                    test_indices: s.test_indices.clone(),
                    statistic,
                    p_value,
                })
            };
            run().map_err(|e| Error::Split {
                index: s.index,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let ps: Vec<f64> = splits.iter().map(|s| s.p_value).collect();
    let combined = cauchy_combine(&ps)?;
    Ok((splits, combined))
}

/// Full test with caller-supplied velocity fields.
pub fn flowcit_with<F>(data: &DataTriplet, cfg: &TestConfig, fit: F) -> Result<TestReport>
where
    F: Fn(usize, &DataTriplet) -> Result<(BoxedField, BoxedField)> + Sync,
{
    let transports = transport_splits(data, cfg, fit)?;
    let (splits, combined_p) =
        test_transports(&transports, cfg.permutations, cfg.measure, cfg.direction, cfg.seed)?;
    Ok(TestReport {
        n: data.n(),
        n2: cfg.resolve_n2(data.n())?,
        splits,
        combined_p,
        config: cfg.clone(),
    })
}

/// Full test with flow-matched velocity fields.
pub fn flowcit(data: &DataTriplet, cfg: &TestConfig) -> Result<TestReport> {
    flowcit_with(data, cfg, |k, train| learned_fields(cfg, k, train))
}
