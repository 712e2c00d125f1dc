//! Nonparametric regression-discontinuity estimation at a zero cutoff.
//!
//! Local linear fits use the triangular kernel k_h(S) = (1 − |S|/h)/h on
//! each side of the cutoff, the bandwidth follows the Imbens–Kalyanaraman
//! plug-in recipe, the point estimate is bias-corrected with one-sided local
//! quadratic curvature at a wider pilot bandwidth, and variances come from
//! nearest-neighbor residuals. Every estimator here is linear in the outcome
//! given the running variable, which is exploited for influence-function
//! covariances between estimands.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RddError {
    #[error("insufficient data on the {side:?} side: need {needed}, have {got}")]
    InsufficientData { side: Side, needed: usize, got: usize },
    #[error("singular local regression design")]
    SingularDesign,
    #[error("first-stage limit {0} is below the configured floor")]
    WeakFirstStage(f64),
    #[error("input matrix is not symmetric")]
    NonSymmetricInput,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value in sample")]
    NonFinite,
    #[error("invalid RDD config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn contains(self, s: f64) -> bool {
        match self {
            Side::Left => s < 0.0,
            Side::Right => s >= 0.0,
        }
    }
}

/// Observations for one RDD estimand; the cutoff is fixed at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RddSample {
    pub running: Vec<f64>,
    pub outcome: Vec<f64>,
    /// D·ΔlogG, zero below the cutoff.
    pub first_stage: Vec<f64>,
    pub cluster: Vec<u64>,
}

impl RddSample {
    pub fn new(running: Vec<f64>, outcome: Vec<f64>, first_stage: Vec<f64>, cluster: Vec<u64>) -> Result<Self, RddError> {
        let n = running.len();
        if outcome.len() != n || first_stage.len() != n || cluster.len() != n {
            return Err(RddError::DimensionMismatch("sample columns differ in length".into()));
        }
        if running.iter().chain(&outcome).chain(&first_stage).any(|x| !x.is_finite()) {
            return Err(RddError::NonFinite);
        }
        Ok(RddSample { running, outcome, first_stage, cluster })
    }

    pub fn len(&self) -> usize {
        self.running.len()
    }

    pub fn is_empty(&self) -> bool {
        self.running.is_empty()
    }

    /// Same running variable, first stage and clusters with a new outcome.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Self, RddError> {
        RddSample::new(self.running.clone(), outcome, self.first_stage.clone(), self.cluster.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RddConfig {
    /// Minimum observations per side for bandwidth selection.
    pub min_obs_per_side: usize,
    /// Upper guard on the bandwidth; `None` uses the largest |S|.
    pub max_bandwidth: Option<f64>,
    /// Fixed bandwidth overriding the plug-in selector.
    pub fixed_bandwidth: Option<f64>,
    /// Pilot bandwidth for the curvature estimate, as a multiple of h.
    pub pilot_factor: f64,
    /// Nearest neighbors used for residual variances.
    pub nn_neighbors: usize,
    /// Smallest acceptable right limit of the first stage.
    pub first_stage_floor: f64,
}

impl Default for RddConfig {
    fn default() -> Self {
        RddConfig {
            min_obs_per_side: 50,
            max_bandwidth: None,
            fixed_bandwidth: None,
            pilot_factor: 1.5,
            nn_neighbors: 3,
            first_stage_floor: 1e-8,
        }
    }
}

impl RddConfig {
    pub fn validate(&self) -> Result<(), RddError> {
        if self.nn_neighbors == 0 {
            return Err(RddError::InvalidConfig("nn_neighbors must be positive".into()));
        }
        if !(self.pilot_factor >= 1.0) {
            return Err(RddError::InvalidConfig("pilot_factor must be at least 1".into()));
        }
        if let Some(h) = self.max_bandwidth.or(self.fixed_bandwidth)
            && !(h > 0.0)
        {
            return Err(RddError::InvalidConfig("bandwidths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RddEstimate {
    /// Conventional local linear estimate.
    pub estimate: f64,
    pub bias_corrected: f64,
    pub se: f64,
    pub bandwidth: f64,
    pub n_left: usize,
    pub n_right: usize,
}

pub fn triangular_kernel(s: f64, h: f64) -> f64 {
    let u = s.abs() / h;
    if u < 1.0 { (1.0 - u) / h } else { 0.0 }
}

/// Linear weights of a one-sided local polynomial fit: coefficient p equals
/// Σ_i weights[p][i]·y[index[i]].
#[derive(Debug, Clone)]
struct LocalWeights {
    index: Vec<usize>,
    weights: Vec<Vec<f64>>,
}

impl LocalWeights {
    fn apply(&self, p: usize, y: &[f64]) -> f64 {
        self.index.iter().zip(&self.weights[p]).map(|(&i, w)| w * y[i]).sum()
    }
}

fn local_weights(running: &[f64], side: Side, h: f64, degree: usize) -> Result<LocalWeights, RddError> {
    let index: Vec<usize> = (0..running.len())
        .filter(|&i| side.contains(running[i]) && triangular_kernel(running[i], h) > 0.0)
        .collect();
    let needed = degree + 2;
    if index.len() < needed {
        return Err(RddError::InsufficientData { side, needed, got: index.len() });
    }
    let q = degree + 1;
    // Regressors in u = S/h for conditioning; rescaled afterwards.
    let mut xtwx = DMatrix::<f64>::zeros(q, q);
    let rows: Vec<(Vec<f64>, f64)> = index
        .iter()
        .map(|&i| {
            let u = running[i] / h;
            let x: Vec<f64> = (0..q).map(|p| u.powi(p as i32)).collect();
            (x, triangular_kernel(running[i], h))
        })
        .collect();
    for (x, k) in &rows {
        for a in 0..q {
            for b in 0..q {
                xtwx[(a, b)] += k * x[a] * x[b];
            }
        }
    }
    let inv = xtwx.try_inverse().ok_or(RddError::SingularDesign)?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(RddError::SingularDesign);
    }
    let mut weights = vec![Vec::with_capacity(index.len()); q];
    for (x, k) in &rows {
        let xv = DVector::from_column_slice(x);
        let w = &inv * xv * *k;
        for p in 0..q {
            weights[p].push(w[p] / h.powi(p as i32));
        }
    }
    Ok(LocalWeights { index, weights })
}

/// Weighted least squares coefficients (intercept, slope[, curvature]) of a
/// one-sided local polynomial in S with triangular kernel weights.
pub fn local_linear_fit(sample: &RddSample, side: Side, h: f64, degree: usize) -> Result<Vec<f64>, RddError> {
    local_polynomial_fit(&sample.running, &sample.outcome, side, h, degree)
}

pub fn local_polynomial_fit(running: &[f64], y: &[f64], side: Side, h: f64, degree: usize) -> Result<Vec<f64>, RddError> {
    if !(h > 0.0) {
        return Err(RddError::InvalidConfig("bandwidth must be positive".into()));
    }
    if degree == 0 || degree > 2 {
        return Err(RddError::InvalidConfig("degree must be 1 or 2".into()));
    }
    let lw = local_weights(running, side, h, degree)?;
    Ok((0..=degree).map(|p| lw.apply(p, y)).collect())
}

fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>, RddError> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    xtx.cholesky().map(|c| c.solve(&xty)).ok_or(RddError::SingularDesign)
}

fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Imbens–Kalyanaraman bandwidth for the triangular kernel.
pub fn ik_bandwidth(running: &[f64], y: &[f64], config: &RddConfig) -> Result<f64, RddError> {
    let n = running.len();
    if y.len() != n {
        return Err(RddError::DimensionMismatch("running and outcome lengths differ".into()));
    }
    let n_left = running.iter().filter(|&&s| s < 0.0).count();
    let n_right = n - n_left;
    for (side, got) in [(Side::Left, n_left), (Side::Right, n_right)] {
        if got < config.min_obs_per_side.max(5) {
            return Err(RddError::InsufficientData { side, needed: config.min_obs_per_side.max(5), got });
        }
    }
    let nf = n as f64;
    let max_abs = running.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let guard = config.max_bandwidth.unwrap_or(max_abs);

    // Step 1: pilot density and conditional variances.
    let sx = sample_variance(running).sqrt();
    let h1 = 1.84 * sx * nf.powf(-0.2);
    let lw: Vec<f64> = (0..n).filter(|&i| running[i] < 0.0 && running[i] >= -h1).map(|i| y[i]).collect();
    let rw: Vec<f64> = (0..n).filter(|&i| running[i] >= 0.0 && running[i] <= h1).map(|i| y[i]).collect();
    if lw.len() < 2 || rw.len() < 2 {
        let (side, got) = if lw.len() < 2 { (Side::Left, lw.len()) } else { (Side::Right, rw.len()) };
        return Err(RddError::InsufficientData { side, needed: 2, got });
    }
    let var_l = sample_variance(&lw);
    let var_r = sample_variance(&rw);
    let f = (lw.len() + rw.len()) as f64 / (2.0 * nf * h1);

    // Step 2: third derivative from a global cubic with an intercept shift.
    let x = DMatrix::from_fn(n, 5, |i, c| match c {
        0 => 1.0,
        1 => if running[i] >= 0.0 { 1.0 } else { 0.0 },
        p => running[i].powi(p as i32 - 1),
    });
    let beta = ols(&x, &DVector::from_column_slice(y))?;
    let m3 = 6.0 * beta[4];

    // Step 3: second derivatives from uniform-kernel quadratics per side.
    let pilot = |var: f64, n_side: usize, side: Side| -> Result<(f64, f64, usize), RddError> {
        let mut dist: Vec<f64> = running.iter().filter(|&&s| side.contains(s)).map(|s| s.abs()).collect();
        dist.sort_by(f64::total_cmp);
        let side_max = dist[dist.len() - 1];
        // Degenerate variance or curvature: keep at least a handful of points.
        let floor = dist[dist.len().min(8) - 1];
        let raw = 3.56 * (var / (f * m3 * m3)).powf(1.0 / 7.0) * (n_side as f64).powf(-1.0 / 7.0);
        let h2 = if raw.is_finite() { raw.clamp(floor, side_max) } else { side_max };
        let idx: Vec<usize> = (0..n).filter(|&i| side.contains(running[i]) && running[i].abs() <= h2).collect();
        if idx.len() < 4 {
            return Err(RddError::InsufficientData { side, needed: 4, got: idx.len() });
        }
        let xq = DMatrix::from_fn(idx.len(), 3, |r, c| running[idx[r]].powi(c as i32));
        let yq = DVector::from_iterator(idx.len(), idx.iter().map(|&i| y[i]));
        let b = ols(&xq, &yq)?;
        Ok((2.0 * b[2], h2, idx.len()))
    };
    let (m2_l, h2_l, n2_l) = pilot(var_l, n_left, Side::Left)?;
    let (m2_r, h2_r, n2_r) = pilot(var_r, n_right, Side::Right)?;

    // Step 4: regularized plug-in bandwidth.
    let r_l = 2160.0 * var_l / (n2_l as f64 * h2_l.powi(4));
    let r_r = 2160.0 * var_r / (n2_r as f64 * h2_r.powi(4));
    let denom = f * ((m2_r - m2_l).powi(2) + r_l + r_r);
    let h = 3.4375 * ((var_l + var_r) / denom).powf(0.2) * nf.powf(-0.2);
    if h.is_finite() && h > 0.0 { Ok(h.min(guard)) } else { Ok(guard) }
}

/// Nearest-neighbor residuals scaled by √(J/(J+1)), computed within each
/// side of the cutoff. Ties in distance are broken by sorted record order.
pub fn nn_residuals(running: &[f64], y: &[f64], j_star: usize) -> Vec<f64> {
    let n = running.len();
    let mut out = vec![0.0; n];
    for side in [Side::Left, Side::Right] {
        let mut idx: Vec<usize> = (0..n).filter(|&i| side.contains(running[i])).collect();
        idx.sort_by(|&a, &b| running[a].total_cmp(&running[b]).then(a.cmp(&b)));
        let m = idx.len();
        let j = j_star.min(m.saturating_sub(1));
        if j == 0 {
            continue;
        }
        let scale = (j as f64 / (j as f64 + 1.0)).sqrt();
        for pos in 0..m {
            let s0 = running[idx[pos]];
            let (mut lo, mut hi) = (pos, pos + 1);
            let mut sum = 0.0;
            for _ in 0..j {
                let take_low = if lo == 0 {
                    false
                } else if hi >= m {
                    true
                } else {
                    (s0 - running[idx[lo - 1]]) <= (running[idx[hi]] - s0)
                };
                if take_low {
                    lo -= 1;
                    sum += y[idx[lo]];
                } else {
                    sum += y[idx[hi]];
                    hi += 1;
                }
            }
            out[idx[pos]] = scale * (y[idx[pos]] - sum / j as f64);
        }
    }
    out
}

/// A sharp RD with its signed per-record linear weights.
#[derive(Debug, Clone)]
struct SharpFit {
    estimate: RddEstimate,
    /// Conventional-estimator weights, signed (negative on the left).
    weights: Vec<(usize, f64)>,
    residuals: Vec<f64>,
}

fn sharp_fit(running: &[f64], y: &[f64], h: f64, config: &RddConfig) -> Result<SharpFit, RddError> {
    let mut estimate = 0.0;
    let mut bias_corrected = 0.0;
    let mut weights = Vec::new();
    let mut counts = [0usize; 2];
    for (si, side) in [Side::Left, Side::Right].into_iter().enumerate() {
        let sign = if side == Side::Right { 1.0 } else { -1.0 };
        let lin = local_weights(running, side, h, 1)?;
        let quad = local_weights(running, side, config.pilot_factor * h, 2)?;
        let intercept = lin.apply(0, y);
        let curvature = quad.apply(2, y);
        let moment: f64 = lin.index.iter().zip(&lin.weights[0]).map(|(&i, w)| w * running[i].powi(2)).sum();
        estimate += sign * intercept;
        bias_corrected += sign * (intercept - moment * curvature);
        counts[si] = lin.index.len();
        weights.extend(lin.index.iter().zip(&lin.weights[0]).map(|(&i, &w)| (i, sign * w)));
    }
    let residuals = nn_residuals(running, y, config.nn_neighbors);
    let se = weights.iter().map(|&(i, w)| (w * residuals[i]).powi(2)).sum::<f64>().sqrt();
    Ok(SharpFit {
        estimate: RddEstimate { estimate, bias_corrected, se, bandwidth: h, n_left: counts[0], n_right: counts[1] },
        weights,
        residuals,
    })
}

fn bandwidth(running: &[f64], y: &[f64], config: &RddConfig) -> Result<f64, RddError> {
    config.validate()?;
    match config.fixed_bandwidth {
        Some(h) => Ok(h),
        None => ik_bandwidth(running, y, config),
    }
}

/// Sharp RD of the outcome at the plug-in bandwidth.
pub fn sharp_rd(sample: &RddSample, config: &RddConfig) -> Result<RddEstimate, RddError> {
    let h = bandwidth(&sample.running, &sample.outcome, config)?;
    Ok(sharp_fit(&sample.running, &sample.outcome, h, config)?.estimate)
}

/// A fuzzy RD with a known first-stage shift, together with its
/// per-cluster influence contributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyFit {
    pub estimate: RddEstimate,
    /// Right limit of D·ΔlogG at the cutoff.
    pub first_stage: f64,
    /// Σ over records in each cluster of the estimator's linearization,
    /// so that Var = Σ_c influence_c².
    pub influence: BTreeMap<u64, f64>,
}

pub fn fuzzy_fit(sample: &RddSample, config: &RddConfig) -> Result<FuzzyFit, RddError> {
    let h = bandwidth(&sample.running, &sample.outcome, config)?;
    fuzzy_fit_at(sample, h, config)
}

/// Fuzzy fit at a given bandwidth.
pub fn fuzzy_fit_at(sample: &RddSample, h: f64, config: &RddConfig) -> Result<FuzzyFit, RddError> {
    let num = sharp_fit(&sample.running, &sample.outcome, h, config)?;
    let lin = local_weights(&sample.running, Side::Right, h, 1)?;
    let quad = local_weights(&sample.running, Side::Right, config.pilot_factor * h, 2)?;
    let d = lin.apply(0, &sample.first_stage);
    if !(d > config.first_stage_floor) {
        return Err(RddError::WeakFirstStage(d));
    }
    let moment: f64 = lin.index.iter().zip(&lin.weights[0]).map(|(&i, w)| w * sample.running[i].powi(2)).sum();
    let d_bc = d - moment * quad.apply(2, &sample.first_stage);
    let beta = num.estimate.estimate / d;
    let beta_bc = num.estimate.bias_corrected / if d_bc > config.first_stage_floor { d_bc } else { d };

    let d_res = nn_residuals(&sample.running, &sample.first_stage, config.nn_neighbors);
    let mut influence: BTreeMap<u64, f64> = BTreeMap::new();
    for &(i, w) in &num.weights {
        *influence.entry(sample.cluster[i]).or_insert(0.0) += w * num.residuals[i] / d;
    }
    for (&i, &w) in lin.index.iter().zip(&lin.weights[0]) {
        *influence.entry(sample.cluster[i]).or_insert(0.0) -= beta * w * d_res[i] / d;
    }
    let se = influence.values().map(|v| v * v).sum::<f64>().sqrt();
    Ok(FuzzyFit {
        estimate: RddEstimate { estimate: beta, bias_corrected: beta_bc, se, ..num.estimate },
        first_stage: d,
        influence,
    })
}

/// Ratio of the outcome discontinuity to the right limit of D·ΔlogG.
pub fn fuzzy_rd_known_first_stage(sample: &RddSample, config: &RddConfig) -> Result<RddEstimate, RddError> {
    Ok(fuzzy_fit(sample, config)?.estimate)
}

/// Reduced-form effect of approval at the cutoff alongside its rescaling
/// by the first stage, both at the outcome's plug-in bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelEstimates {
    /// Jump in the outcome at the cutoff.
    pub ate: RddEstimate,
    /// The jump divided by the right limit of D·ΔlogG.
    pub wave: RddEstimate,
    pub first_stage: f64,
}

pub fn panel_estimates(sample: &RddSample, config: &RddConfig) -> Result<PanelEstimates, RddError> {
    let h = bandwidth(&sample.running, &sample.outcome, config)?;
    let ate = sharp_fit(&sample.running, &sample.outcome, h, config)?.estimate;
    let fit = fuzzy_fit_at(sample, h, config)?;
    Ok(PanelEstimates { ate, wave: fit.estimate, first_stage: fit.first_stage })
}

/// Fuzzy fits for many outcomes in parallel.
pub fn fuzzy_batch(samples: &[RddSample], config: &RddConfig) -> Vec<Result<FuzzyFit, RddError>> {
    samples.par_iter().map(|s| fuzzy_fit(s, config)).collect()
}

/// Cluster-robust covariance of two fitted coefficients.
pub fn fit_covariance(a: &FuzzyFit, b: &FuzzyFit) -> f64 {
    a.influence.iter().filter_map(|(c, x)| b.influence.get(c).map(|y| x * y)).sum()
}

/// Covariance of the fuzzy coefficients of two samples sharing cluster ids.
pub fn pairwise_covariance(a: &RddSample, b: &RddSample, config: &RddConfig) -> Result<f64, RddError> {
    Ok(fit_covariance(&fuzzy_fit(a, config)?, &fuzzy_fit(b, config)?))
}

/// Covariance matrix of several fits and the per-cluster score matrix
/// (clusters × fits) it is built from.
pub fn covariance_matrix(fits: &[FuzzyFit]) -> (DMatrix<f64>, DMatrix<f64>) {
    let p = fits.len();
    let mut clusters: Vec<u64> = fits.iter().flat_map(|f| f.influence.keys().copied()).collect();
    clusters.sort_unstable();
    clusters.dedup();
    let pos: BTreeMap<u64, usize> = clusters.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut scores = DMatrix::<f64>::zeros(clusters.len(), p);
    for (k, f) in fits.iter().enumerate() {
        for (c, v) in &f.influence {
            scores[(pos[c], k)] = *v;
        }
    }
    let sigma = scores.transpose() * &scores;
    (sigma, scores)
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<(), RddError> {
    if !m.is_square() {
        return Err(RddError::NonSymmetricInput);
    }
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(RddError::NonSymmetricInput);
            }
        }
    }
    Ok(())
}

/// Ledoit–Wolf intensity for shrinking a correlation matrix toward the
/// identity, from per-observation scores (rows) whose cross-products sum to
/// the covariance. Clamped to [0, 1].
pub fn ledoit_wolf_intensity(corr: &DMatrix<f64>, scores: &DMatrix<f64>) -> f64 {
    let (n, p) = scores.shape();
    if n == 0 || p != corr.nrows() {
        return 1.0;
    }
    let sd: Vec<f64> = (0..p).map(|k| scores.column(k).norm_squared().sqrt()).collect();
    let mut d2 = 0.0;
    for i in 0..p {
        for j in 0..p {
            let t = if i == j { 1.0 } else { 0.0 };
            d2 += (corr[(i, j)] - t).powi(2);
        }
    }
    if d2 <= 0.0 {
        return 1.0;
    }
    let nf = n as f64;
    let mut b2 = 0.0;
    for r in 0..n {
        let z: Vec<f64> = (0..p).map(|k| if sd[k] > 0.0 { nf.sqrt() * scores[(r, k)] / sd[k] } else { 0.0 }).collect();
        for i in 0..p {
            for j in 0..p {
                b2 += (z[i] * z[j] - corr[(i, j)]).powi(2);
            }
        }
    }
    b2 /= nf * nf;
    (b2.min(d2) / d2).clamp(0.0, 1.0)
}

/// Shrink the correlation matrix of `sigma` toward the identity with the
/// Ledoit–Wolf intensity and restore the original variances. Returns the
/// shrunk covariance and the intensity used.
pub fn shrink_correlation(sigma: &DMatrix<f64>, scores: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64), RddError> {
    check_symmetric(sigma)?;
    let p = sigma.nrows();
    let sd: Vec<f64> = (0..p).map(|i| sigma[(i, i)].max(0.0).sqrt()).collect();
    let corr = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else if sd[i] > 0.0 && sd[j] > 0.0 {
            sigma[(i, j)] / (sd[i] * sd[j])
        } else {
            0.0
        }
    });
    let delta = ledoit_wolf_intensity(&corr, scores);
    let out = DMatrix::from_fn(p, p, |i, j| {
        let t = if i == j { 1.0 } else { 0.0 };
        (delta * t + (1.0 - delta) * corr[(i, j)]) * sd[i] * sd[j]
    });
    Ok((out, delta))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Residualize the outcome on group indicators inside the window |S| < h,
/// restoring the window mean so only within-group variation is removed.
pub fn residualize_on_groups(sample: &RddSample, groups: &[usize], h: f64) -> Result<RddSample, RddError> {
    if groups.len() != sample.len() {
        return Err(RddError::DimensionMismatch("group labels".into()));
    }
    let inside: Vec<usize> = (0..sample.len()).filter(|&i| sample.running[i].abs() < h).collect();
    if inside.is_empty() {
        return Ok(sample.clone());
    }
    let mut sums: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for &i in &inside {
        let e = sums.entry(groups[i]).or_insert((0.0, 0.0));
        e.0 += sample.outcome[i];
        e.1 += 1.0;
    }
    let grand = inside.iter().map(|&i| sample.outcome[i]).sum::<f64>() / inside.len() as f64;
    let mut y = sample.outcome.clone();
    for &i in &inside {
        let (s, c) = sums[&groups[i]];
        y[i] = sample.outcome[i] - s / c + grand;
    }
    sample.with_outcome(y)
}
