//! Jitter spaces: diagonal Gaussians around an attack point, their samples,
//! and how often those samples fool the subject index.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::index::{label_fp, Index, QueryResult};
use crate::rng::rng_from;
use crate::vecdata::{brute_topk, TruthRow, VectorSet};

/// Log-variances are kept inside this range so variances stay positive and finite.
pub const LOGVAR_MIN: f64 = -30.0;
pub const LOGVAR_MAX: f64 = 30.0;

/// `N(mu, diag(sigma_diag))`; `sigma_diag` holds variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterSpace {
    pub mu: Vec<f64>,
    pub sigma_diag: Vec<f64>,
}

impl JitterSpace {
    pub fn new(mu: Vec<f64>, sigma_diag: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma_diag.len() || mu.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: mu.len(),
                got: sigma_diag.len(),
            });
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("jitter mean".into()));
        }
        if sigma_diag.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(invalid("jitter variances must be positive and finite"));
        }
        Ok(JitterSpace { mu, sigma_diag })
    }

    /// Isotropic space centred on `point` with every variance `variance`.
    pub fn around(point: &[f32], variance: f64) -> Result<Self> {
        Self::new(
            point.iter().map(|v| *v as f64).collect(),
            vec![variance; point.len()],
        )
    }

    pub fn d(&self) -> usize {
        self.mu.len()
    }

    pub fn log_variances(&self) -> Vec<f64> {
        self.sigma_diag.iter().map(|v| v.ln()).collect()
    }

    /// Adds `offset_mu` to the mean and `offset_logvar` to the log-variances.
    pub fn apply(&self, offset_mu: &[f64], offset_logvar: &[f64]) -> Result<Self> {
        if offset_mu.len() != self.d() || offset_logvar.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: offset_mu.len().min(offset_logvar.len()),
            });
        }
        let mu = self.mu.iter().zip(offset_mu).map(|(m, o)| m + o).collect();
        let sigma = self
            .sigma_diag
            .iter()
            .zip(offset_logvar)
            .map(|(s, o)| {
                let lv = s.ln() + o;
                if (LOGVAR_MIN..=LOGVAR_MAX).contains(&lv) {
                    s * o.exp()
                } else {
                    lv.clamp(LOGVAR_MIN, LOGVAR_MAX).exp()
                }
            })
            .collect();
        Self::new(mu, sigma)
    }

    /// Euclidean distance from the mean to `point`.
    pub fn mu_distance(&self, point: &[f32]) -> f64 {
        self.mu
            .iter()
            .zip(point)
            .map(|(m, p)| (m - *p as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn mean_variance(&self) -> f64 {
        self.sigma_diag.iter().sum::<f64>() / self.d() as f64
    }
}

/// `count` independent draws from the space, one standard normal per coordinate.
pub fn sample_jitters(space: &JitterSpace, count: usize, seed: u64) -> Result<VectorSet> {
    if count == 0 {
        return Err(invalid("jitter count must be at least 1"));
    }
    if space.sigma_diag.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(invalid("jitter variances must be positive and finite"));
    }
    let mut rng = rng_from(seed);
    let sd: Vec<f64> = space.sigma_diag.iter().map(|v| v.sqrt()).collect();
    let mut data = Vec::with_capacity(count * space.d());
    for _ in 0..count {
        for (m, s) in space.mu.iter().zip(&sd) {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push((m + s * z) as f32);
        }
    }
    VectorSet::new(space.d(), data)
}

/// Fraction of jitters whose subject answer is a false positive against the
/// exact neighbors from `base`.
pub fn evaluate_jitters(
    jitters: &VectorSet,
    base: &VectorSet,
    subject: &Index,
    k: usize,
    epsilon: f64,
) -> Result<f64> {
    if jitters.d() != base.d() || subject.d() != base.d() {
        return Err(Error::DimensionMismatch {
            expected: base.d(),
            got: jitters.d(),
        });
    }
    if k == 0 || k > base.n() {
        return Err(invalid(format!("k must be in [1, {}], got {k}", base.n())));
    }
    let fps = (0..jitters.n())
        .into_par_iter()
        .map(|i| -> Result<usize> {
            let q = jitters.row(i);
            let (ids, dists) = brute_topk(base, q, k);
            let approx: QueryResult = subject.query(q, k)?;
            let label = label_fp(
                i,
                &approx,
                TruthRow {
                    ids: &ids,
                    dists: &dists,
                },
                epsilon,
            )?;
            Ok(label.is_fp as usize)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(fps as f64 / jitters.n() as f64)
}
