//! Maximum-likelihood estimation of the selective-turnout model.
//!
//! Observed voters of each type in each referendum are binomial given the
//! probit turnout probability T = Φ((log|Δv| − μ0 − μ1 ΔlogG)/σ0), where the
//! benefit |Δv| is computed from the structural preference estimates. The
//! likelihood is maximized by BFGS; standard errors come from a numerical
//! Hessian, and uncertainty in the preference estimates is propagated with
//! Rubin's rules over parametric redraws.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::dgp::{substream, stream, ReferendumRecord};
use crate::equilibrium::SolverConfig;
use crate::ident::{economy_with_preferences, IdentError, StructuralEstimate};
use crate::model::{Anticipation, Economy, HouseholdType};
use crate::voting::{std_normal_cdf, vote_deltas, VoteError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MleError {
    #[error("optimizer did not converge after {iterations} iterations (scaled gradient {gradient})")]
    NoConvergence { iterations: usize, gradient: f64 },
    #[error("negative Hessian is not invertible at the optimum")]
    NonInvertibleHessian,
    #[error("degenerate turnout data: {0}")]
    DegenerateData(String),
    #[error("need at least two draws, got {0}")]
    InsufficientDraws(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Vote(#[from] VoteError),
    #[error(transparent)]
    Ident(#[from] IdentError),
}

/// One (referendum, type) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnoutObs {
    pub type_index: usize,
    pub voters: u64,
    pub households: u64,
    pub benefit: f64,
    pub dlog_g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnoutData {
    pub n_types: usize,
    pub obs: Vec<TurnoutObs>,
}

impl TurnoutData {
    pub fn validate(&self) -> Result<(), MleError> {
        for o in &self.obs {
            if o.type_index >= self.n_types {
                return Err(MleError::DimensionMismatch(format!("type index {} out of range", o.type_index)));
            }
            if o.voters > o.households || !(o.benefit >= 0.0) || !o.dlog_g.is_finite() {
                return Err(MleError::DegenerateData("need 0 ≤ voters ≤ households and benefit ≥ 0".into()));
            }
        }
        for k in 0..self.n_types {
            let interior = self.obs.iter().any(|o| o.type_index == k && o.voters > 0 && o.voters < o.households);
            if !interior {
                return Err(MleError::DegenerateData(format!("type {k} has no cell with 0 < voters < households")));
            }
        }
        Ok(())
    }
}

/// Turnout cells for a set of referenda, with benefits computed from the
/// preferences in `economy`.
pub fn turnout_data(records: &[&ReferendumRecord], economy: &Economy, mode: Anticipation, solver: &SolverConfig) -> Result<TurnoutData, MleError> {
    let cells: Vec<Vec<TurnoutObs>> = records
        .par_iter()
        .map(|r| {
            let dv = vote_deltas(economy, &r.pre, r.district, r.dlog_g, mode, solver)?;
            Ok(dv
                .iter()
                .enumerate()
                .map(|(k, d)| TurnoutObs { type_index: k, voters: r.voters[k], households: r.households[k], benefit: d.abs(), dlog_g: r.dlog_g })
                .collect())
        })
        .collect::<Result<_, MleError>>()?;
    Ok(TurnoutData { n_types: economy.n_types(), obs: cells.into_iter().flatten().collect() })
}

/// Whether σ0 is shared by all types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    #[default]
    Common,
    PerType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleConfig {
    pub sigma_mode: SigmaMode,
    pub max_iterations: usize,
    /// Convergence threshold on the max-norm of the gradient of the mean
    /// log-likelihood per household.
    pub gradient_tolerance: f64,
    /// Relative central-difference step for the Hessian.
    pub hessian_step: f64,
    /// Probabilities are clamped to (ε, 1 − ε).
    pub epsilon: f64,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig { sigma_mode: SigmaMode::Common, max_iterations: 1000, gradient_tolerance: 1e-9, hessian_step: 1e-4, epsilon: 1e-12 }
    }
}

impl MleConfig {
    pub fn validate(&self) -> Result<(), MleError> {
        let bad = |m: &str| Err(MleError::InvalidConfig(m.to_string()));
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if !(self.gradient_tolerance > 0.0) || !(self.hessian_step > 0.0) {
            return bad("gradient_tolerance and hessian_step must be positive");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return bad("epsilon must lie in (0, 0.5)");
        }
        Ok(())
    }
}

/// Turnout parameters ϑ = (μ0, μ1, σ0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnoutParams {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    /// One entry when common, else one per type.
    pub sigma0: Vec<f64>,
}

impl TurnoutParams {
    pub fn n_types(&self) -> usize {
        self.mu0.len()
    }

    pub fn sigma(&self, k: usize) -> f64 {
        if self.sigma0.len() == 1 { self.sigma0[0] } else { self.sigma0[k] }
    }

    /// Natural-scale vector (μ0..., μ1..., σ0...).
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.mu0.len() * 2 + self.sigma0.len(), self.mu0.iter().chain(&self.mu1).chain(&self.sigma0).copied())
    }

    pub fn from_vector(v: &[f64], n_types: usize) -> TurnoutParams {
        TurnoutParams { mu0: v[..n_types].to_vec(), mu1: v[n_types..2 * n_types].to_vec(), sigma0: v[2 * n_types..].to_vec() }
    }

    fn to_internal(&self) -> Vec<f64> {
        self.mu0.iter().chain(&self.mu1).copied().chain(self.sigma0.iter().map(|s| s.ln())).collect()
    }

    fn from_internal(x: &[f64], n_types: usize) -> TurnoutParams {
        TurnoutParams { mu0: x[..n_types].to_vec(), mu1: x[n_types..2 * n_types].to_vec(), sigma0: x[2 * n_types..].iter().map(|l| l.exp()).collect() }
    }

    pub fn from_types(types: &[HouseholdType], mode: SigmaMode) -> TurnoutParams {
        TurnoutParams {
            mu0: types.iter().map(|t| t.mu0).collect(),
            mu1: types.iter().map(|t| t.mu1).collect(),
            sigma0: match mode {
                SigmaMode::Common => vec![types[0].sigma0],
                SigmaMode::PerType => types.iter().map(|t| t.sigma0).collect(),
            },
        }
    }
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Σ [Ť log T + (Ň − Ť) log(1 − T)], omitting the binomial coefficient.
pub fn turnout_log_likelihood(params: &TurnoutParams, data: &TurnoutData, epsilon: f64) -> f64 {
    data.obs
        .iter()
        .map(|o| {
            let k = o.type_index;
            let t = turnout_with_params(params, k, o.benefit, o.dlog_g).clamp(epsilon, 1.0 - epsilon);
            let (v, n) = (o.voters as f64, o.households as f64);
            let mut ll = 0.0;
            if v > 0.0 {
                ll += v * t.ln();
            }
            if n > v {
                ll += (n - v) * (1.0 - t).ln();
            }
            ll
        })
        .sum()
}

/// Turnout probability of type k under `params`.
pub fn turnout_with_params(params: &TurnoutParams, k: usize, benefit: f64, dlog_g: f64) -> f64 {
    crate::voting::turnout_probability_with(params.mu0[k], params.mu1[k], params.sigma(k), benefit, dlog_g)
}

/// Log-likelihood and its gradient in internal coordinates (log σ0).
fn value_and_gradient(x: &[f64], data: &TurnoutData, epsilon: f64) -> (f64, Vec<f64>) {
    let nk = data.n_types;
    let common = x.len() == 2 * nk + 1;
    let mut ll = 0.0;
    let mut grad = vec![0.0; x.len()];
    for o in &data.obs {
        let k = o.type_index;
        let si = if common { 2 * nk } else { 2 * nk + k };
        let sigma = x[si].exp();
        let (v, n) = (o.voters as f64, o.households as f64);
        if o.benefit <= 0.0 || o.benefit.is_infinite() {
            // Turnout is pinned at 0 or 1 regardless of ϑ.
            let t: f64 = if o.benefit <= 0.0 { epsilon } else { 1.0 - epsilon };
            ll += v * t.ln() + (n - v) * (1.0 - t).ln();
            continue;
        }
        let z = (o.benefit.ln() - x[k] - x[nk + k] * o.dlog_g) / sigma;
        let t = std_normal_cdf(z);
        let u = std_normal_cdf(-z);
        if t < epsilon || u < epsilon {
            let tc = t.clamp(epsilon, 1.0 - epsilon);
            ll += v * tc.ln() + (n - v) * (1.0 - tc).ln();
            continue;
        }
        ll += v * t.ln() + (n - v) * u.ln();
        let dz = std_normal_pdf(z) * (v / t - (n - v) / u);
        grad[k] += -dz / sigma;
        grad[nk + k] += -dz * o.dlog_g / sigma;
        grad[si] += -dz * z;
    }
    (ll, grad)
}

/// Gradient of the log-likelihood in natural coordinates.
pub fn turnout_gradient(params: &TurnoutParams, data: &TurnoutData, epsilon: f64) -> Vec<f64> {
    let nk = params.n_types();
    let (_, mut g) = value_and_gradient(&params.to_internal(), data, epsilon);
    for (i, s) in params.sigma0.iter().enumerate() {
        g[2 * nk + i] /= s;
    }
    g
}

/// Method-of-moments start: μ1 = 0, σ0 = 1 and μ0 matching mean turnout.
fn starting_values(data: &TurnoutData, mode: SigmaMode) -> TurnoutParams {
    let nk = data.n_types;
    let normal = Normal::standard();
    let mut mu0 = vec![0.0; nk];
    for (k, m) in mu0.iter_mut().enumerate() {
        let cells: Vec<&TurnoutObs> = data.obs.iter().filter(|o| o.type_index == k && o.benefit > 0.0 && o.benefit.is_finite()).collect();
        let voters: f64 = cells.iter().map(|o| o.voters as f64).sum();
        let households: f64 = cells.iter().map(|o| o.households as f64).sum();
        let weight: f64 = cells.iter().map(|o| o.households as f64).sum::<f64>().max(1.0);
        let mean_log_b = cells.iter().map(|o| o.households as f64 * o.benefit.ln()).sum::<f64>() / weight;
        let share = (voters / households.max(1.0)).clamp(1e-6, 1.0 - 1e-6);
        *m = mean_log_b - normal.inverse_cdf(share);
    }
    let sigma0 = match mode {
        SigmaMode::Common => vec![1.0],
        SigmaMode::PerType => vec![1.0; nk],
    };
    TurnoutParams { mu0, mu1: vec![0.0; nk], sigma0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnoutFit {
    pub params: TurnoutParams,
    /// Covariance of (μ0..., μ1..., σ0...) on the natural scale.
    pub covariance: DMatrix<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Max-norm of the mean per-household gradient at the optimum.
    pub scaled_gradient: f64,
}

impl TurnoutFit {
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.covariance.nrows()).map(|i| self.covariance[(i, i)].max(0.0).sqrt()).collect()
    }
}

/// Maximize the turnout likelihood.
/// Gradient max-norm below which quasi-Newton iterations hand over to
/// Newton polishing.
const NEWTON_SWITCH: f64 = 1e-6;

pub fn fit_turnout(data: &TurnoutData, config: &MleConfig) -> Result<TurnoutFit, MleError> {
    data.validate()?;
    let nk = data.n_types;
    let scale = data.obs.iter().map(|o| o.households as f64).sum::<f64>().max(1.0);
    let eps = config.epsilon;
    // Minimize the negative mean log-likelihood.
    let f = |x: &[f64]| {
        let (v, g) = value_and_gradient(x, data, eps);
        (-v / scale, g.into_iter().map(|gi| -gi / scale).collect::<Vec<f64>>())
    };
    let mut x = starting_values(data, config.sigma_mode).to_internal();
    let p = x.len();
    let (mut fx, mut gx) = f(&x);
    let mut h_inv = DMatrix::<f64>::identity(p, p);
    let norm = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut iterations = 0;
    let mut stalled = false;
    while norm(&gx) > config.gradient_tolerance {
        if iterations >= config.max_iterations {
            stalled = true;
            break;
        }
        iterations += 1;
        let g = DVector::from_column_slice(&gx);
        let mut d = -(&h_inv * &g);
        if d.dot(&g) >= 0.0 {
            h_inv = DMatrix::identity(p, p);
            d = -g.clone();
        }
        // Backtracking Armijo line search.
        let mut step = 1.0;
        let slope = d.dot(&g);
        let (x_new, f_new, g_new) = loop {
            let cand: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a + step * b).collect();
            let (fc, gc) = f(&cand);
            if fc.is_finite() && fc <= fx + 1e-4 * step * slope {
                break (cand, fc, gc);
            }
            step *= 0.5;
            if step < 1e-16 {
                break (x.clone(), fx, gx.clone());
            }
        };
        if step < 1e-16 {
            stalled = true;
            break;
        }
        let s = DVector::from_iterator(p, x_new.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(p, g_new.iter().zip(&gx).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(p, p);
            let left = &i - rho * &s * y.transpose();
            let right = &i - rho * &y * s.transpose();
            h_inv = left * &h_inv * right + rho * &s * s.transpose();
        }
        x = x_new;
        fx = f_new;
        gx = g_new;
        if norm(&gx) < NEWTON_SWITCH {
            stalled = norm(&gx) > config.gradient_tolerance;
            break;
        }
    }
    if stalled {
        // Near the optimum the mean log-likelihood is flat to rounding, so
        // quasi-Newton line searches stall; finish with Newton steps on the
        // gradient, which do not rely on detecting a function decrease.
        let grad = |x: &[f64]| f(x).1;
        for _ in 0..200 {
            if norm(&gx) <= config.gradient_tolerance {
                break;
            }
            let hess = numerical_jacobian(&grad, &x, config.hessian_step);
            let Some(step) = hess.lu().solve(&DVector::from_column_slice(&gx)) else { break };
            // The likelihood is nearly flat along the μ–σ tradeoff, so full
            // Newton steps can overshoot; halve until the gradient shrinks.
            let mut t = 1.0;
            let accepted = loop {
                let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a - t * b).collect();
                let gc = grad(&cand);
                if norm(&gc) < norm(&gx) {
                    break Some((cand, gc));
                }
                t *= 0.5;
                if t < 1e-12 {
                    break None;
                }
            };
            let Some((cand, gc)) = accepted else { break };
            x = cand;
            gx = gc;
            iterations += 1;
        }
        if norm(&gx) > config.gradient_tolerance {
            return Err(MleError::NoConvergence { iterations, gradient: norm(&gx) });
        }
    }
    let params = TurnoutParams::from_internal(&x, nk);
    let covariance = hessian_covariance(&params, data, config)?;
    let log_likelihood = turnout_log_likelihood(&params, data, eps);
    // Report the gradient in natural coordinates.
    let gn = turnout_gradient(&params, data, eps);
    Ok(TurnoutFit { params, covariance, log_likelihood, iterations, scaled_gradient: norm(&gn) / scale })
}

/// Central-difference Jacobian of a vector function, symmetrized.
fn numerical_jacobian<F: Fn(&[f64]) -> Vec<f64>>(g: &F, x: &[f64], h: f64) -> DMatrix<f64> {
    let p = x.len();
    let mut jac = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let hi = h * (1.0 + x[i].abs());
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += hi;
        xm[i] -= hi;
        let (gp, gm) = (g(&xp), g(&xm));
        for r in 0..p {
            jac[(r, i)] = (gp[r] - gm[r]) / (2.0 * hi);
        }
    }
    (&jac + jac.transpose()) * 0.5
}

/// Inverse negative Hessian on the natural scale, from central differences
/// of the analytic gradient with step h·(1 + |ϑ_i|), symmetrized.
pub fn hessian_covariance(params: &TurnoutParams, data: &TurnoutData, config: &MleConfig) -> Result<DMatrix<f64>, MleError> {
    let nk = params.n_types();
    let theta: Vec<f64> = params.to_vector().iter().copied().collect();
    let p = theta.len();
    let mut hess = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let h = config.hessian_step * (1.0 + theta[i].abs());
        let mut up = theta.clone();
        let mut dn = theta.clone();
        up[i] += h;
        dn[i] -= h;
        let gu = turnout_gradient(&TurnoutParams::from_vector(&up, nk), data, config.epsilon);
        let gd = turnout_gradient(&TurnoutParams::from_vector(&dn, nk), data, config.epsilon);
        for j in 0..p {
            hess[(j, i)] = (gu[j] - gd[j]) / (2.0 * h);
        }
    }
    let sym = (&hess + hess.transpose()) * 0.5;
    let neg = -sym;
    let chol = neg.clone().cholesky().ok_or(MleError::NonInvertibleHessian)?;
    Ok(chol.inverse())
}

/// Rubin combination of parameter draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnoutEstimate {
    pub estimate: DVector<f64>,
    pub within: DMatrix<f64>,
    pub between: DMatrix<f64>,
    pub total: DMatrix<f64>,
    pub draws: usize,
}

/// within = mean Σ̂^(m); between = sample covariance of ϑ̂^(m);
/// total = within + (1 + 1/m̄)·between.
pub fn rubin_combine(draws: &[(DVector<f64>, DMatrix<f64>)]) -> Result<TurnoutEstimate, MleError> {
    let m = draws.len();
    if m < 2 {
        return Err(MleError::InsufficientDraws(m));
    }
    let p = draws[0].0.len();
    if draws.iter().any(|(t, s)| t.len() != p || s.nrows() != p || s.ncols() != p) {
        return Err(MleError::DimensionMismatch("draws differ in dimension".into()));
    }
    let mf = m as f64;
    let mean = draws.iter().fold(DVector::zeros(p), |acc, (t, _)| acc + t) / mf;
    let within = draws.iter().fold(DMatrix::zeros(p, p), |acc, (_, s)| acc + s) / mf;
    let between = draws.iter().fold(DMatrix::zeros(p, p), |acc, (t, _)| {
        let d = t - &mean;
        acc + &d * d.transpose()
    }) / (mf - 1.0);
    let total = &within + &between * (1.0 + 1.0 / mf);
    Ok(TurnoutEstimate { estimate: mean, within, between, total, draws: m })
}

/// A draw from N(mean, cov) using a symmetric square root, so that
/// semidefinite covariances are handled; zero covariance returns the mean.
pub fn draw_normal<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let eig = SymmetricEigen::new(cov.clone());
    let root_diag = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| StandardNormal.sample(rng)));
    mean + &eig.eigenvectors * DMatrix::from_diagonal(&root_diag) * z
}

/// Structural parameters (a..., g..., η) drawn from their sampling
/// distribution, redrawing until every entry is positive. Returns the draw
/// and the number of rejected draws.
pub fn draw_structural<R: Rng + ?Sized>(estimate: &StructuralEstimate, rng: &mut R) -> (Vec<f64>, usize) {
    let mean = DVector::from_vec(estimate.parameters());
    let cov = estimate.covariance();
    let mut rejected = 0;
    loop {
        let d = draw_normal(&mean, &cov, rng);
        if d.iter().all(|x| *x > 0.0) {
            return (d.iter().copied().collect(), rejected);
        }
        rejected += 1;
        if rejected > 10_000 {
            return (mean.iter().copied().collect(), rejected);
        }
    }
}

/// Household types carrying a structural parameter vector (a..., g..., η),
/// with θ normalized to one.
pub fn types_with_parameters(base: &[HouseholdType], zeta: &[f64]) -> Vec<HouseholdType> {
    let nk = base.len();
    base.iter()
        .enumerate()
        .map(|(k, t)| HouseholdType { alpha: zeta[k], gamma: zeta[nk + k], theta: 1.0, ..t.clone() })
        .collect()
}

/// Turnout fit with total variance from Rubin's rules over `draws` redraws
/// of the structural parameters. `baseline` supplies, for each record, the
/// state from which location effects are recalibrated.
pub struct TurnoutUncertainty<'a> {
    pub records: &'a [&'a ReferendumRecord],
    pub base_types: &'a [HouseholdType],
    pub chi: f64,
    pub mode: Anticipation,
    pub solver: &'a SolverConfig,
    pub config: &'a MleConfig,
}

impl TurnoutUncertainty<'_> {
    /// Fit at a given structural parameter vector.
    pub fn fit_at(&self, zeta: &[f64]) -> Result<TurnoutFit, MleError> {
        let types = types_with_parameters(self.base_types, zeta);
        let eta = zeta[2 * self.base_types.len()];
        // Records of one replication share a baseline; group by replication.
        let mut reps: Vec<u64> = self.records.iter().map(|r| r.replication).collect();
        reps.sort_unstable();
        reps.dedup();
        let mut obs = Vec::new();
        for rep in reps {
            let recs: Vec<&ReferendumRecord> = self.records.iter().copied().filter(|r| r.replication == rep).collect();
            let economy = economy_with_preferences(&types, &recs[0].pre, eta, self.chi)?;
            obs.extend(turnout_data(&recs, &economy, self.mode, self.solver)?.obs);
        }
        fit_turnout(&TurnoutData { n_types: types.len(), obs }, self.config)
    }

    /// Point fit at the estimate plus Rubin combination over redraws.
    /// Redraws whose fit fails to converge are left out and counted; at
    /// least two must succeed.
    pub fn run(&self, estimate: &StructuralEstimate, draws: usize, seed: u64) -> Result<(TurnoutFit, TurnoutEstimate, DrawDiagnostics), MleError> {
        let point = self.fit_at(&estimate.parameters())?;
        let results: Vec<(Result<TurnoutFit, MleError>, usize)> = (0..draws as u64)
            .into_par_iter()
            .map(|m| {
                let mut rng = substream(seed, stream::BOOTSTRAP, m, 0);
                let (zeta, rejected) = draw_structural(estimate, &mut rng);
                (self.fit_at(&zeta), rejected)
            })
            .collect();
        let mut diagnostics = DrawDiagnostics::default();
        let mut fits: Vec<(DVector<f64>, DMatrix<f64>)> = Vec::with_capacity(draws);
        for (fit, rejected) in results {
            diagnostics.rejected += rejected;
            match fit {
                Ok(f) => fits.push((f.params.to_vector(), f.covariance)),
                Err(_) => diagnostics.failed += 1,
            }
        }
        Ok((point, rubin_combine(&fits)?, diagnostics))
    }
}

/// Bookkeeping for structural redraws.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawDiagnostics {
    /// Draws discarded for non-positive parameters.
    pub rejected: usize,
    /// Draws whose turnout fit failed.
    pub failed: usize,
}
