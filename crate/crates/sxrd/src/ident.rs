//! Recovery of structural parameters from regression-discontinuity estimands.
//!
//! For each household type, differentiating the logit population equations of
//! the voting district and of the aggregate of all other districts with
//! respect to the voting district's log spending gives two linear equations
//! in a = α/θ and g = γ/θ. Their coefficients are eighteen expectations at
//! the cutoff, each estimated as a fuzzy RD with a known first stage. The
//! housing supply elasticity η is the ratio of the population and price
//! discontinuities. Standard errors follow from the delta method.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dgp::ReferendumRecord;
use crate::model::{Economy, EquilibriumState, HouseholdType, ModelError};
use crate::rdd::{covariance_matrix, fit_covariance, fuzzy_fit, fuzzy_fit_at, ik_bandwidth, shrink_correlation, FuzzyFit, RddConfig, RddError, RddSample, Side};

/// Number of RD estimands per household type.
pub const N_ESTIMANDS: usize = 18;

/// Short labels of the eighteen estimands, in system order.
pub const ESTIMAND_LABELS: [&str; N_ESTIMANDS] = [
    "dlogNk_own",
    "(1-w_own)dlogG_own",
    "(1-w_own)dlogN_own",
    "rho_own(1-w_own)dlogP_own",
    "rho_own(1-w_own)dlog(1+tau)_own",
    "w_out dlogG_out",
    "w_out dlogN_out",
    "rho_out w_out dlogP_out",
    "rho_out w_out dlog(1+tau)_out",
    "dlogNk_out",
    "(1-w_out)dlogG_out",
    "(1-w_out)dlogN_out",
    "rho_out(1-w_out)dlogP_out",
    "rho_out(1-w_out)dlog(1+tau)_out",
    "w_own dlogG_own",
    "w_own dlogN_own",
    "rho_own w_own dlogP_own",
    "rho_own w_own dlog(1+tau)_own",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdentError {
    #[error("singular identification system (determinant {0})")]
    SingularSystem(f64),
    #[error("weak denominator {0} in ratio estimand")]
    WeakDenominator(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("counting rule fails: {jurisdictions} jurisdictions and {types} types")]
    Underdetermined { jurisdictions: usize, types: usize },
    #[error("outside option has non-positive mass for type {0}")]
    ZeroOutsideOption(usize),
    #[error("empty dataset")]
    EmptyData,
    #[error(transparent)]
    Rdd(#[from] RddError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How expectation-of-product coefficients are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Each coefficient is one fuzzy RD of the per-record product of the
    /// midpoint weight and the log change.
    #[default]
    Product,
    /// Each coefficient is the product of a cutoff weight (midpoint of the
    /// two one-sided limits of the level) and a separately estimated
    /// elasticity.
    Factorized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentConfig {
    pub rdd: RddConfig,
    pub weight_mode: WeightMode,
    /// Use the bias-corrected rather than the conventional RD estimates.
    pub bias_corrected: bool,
    /// Apply Ledoit–Wolf shrinkage to the estimand correlation matrix.
    pub shrink: bool,
    /// Estimate all eighteen coefficients of a type at one bandwidth, the
    /// plug-in bandwidth of the own-district population change. The system
    /// is nearly collinear, so mixing bandwidths across coefficients breaks
    /// the cancellations it relies on.
    pub common_bandwidth: bool,
}

impl Default for IdentConfig {
    fn default() -> Self {
        IdentConfig { rdd: RddConfig::default(), weight_mode: WeightMode::Product, bias_corrected: false, shrink: true, common_bandwidth: true }
    }
}

impl IdentConfig {
    pub fn validate(&self) -> Result<(), IdentError> {
        Ok(self.rdd.validate()?)
    }
}

/// The counting rule |J|(|K|+2) ≥ 2|K|+1.
pub fn counting_rule_holds(n_jurisdictions: usize, n_types: usize) -> bool {
    n_jurisdictions * (n_types + 2) >= 2 * n_types + 1
}

/// Levels of one jurisdiction, or of the aggregate of several.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub type_population: Vec<f64>,
    pub population: f64,
    pub price: f64,
    pub tax: f64,
    pub spending: f64,
}

impl Aggregate {
    pub fn gross_price(&self) -> f64 {
        self.price * (1.0 + self.tax)
    }
}

pub fn own_aggregate(state: &EquilibriumState, j: usize) -> Aggregate {
    Aggregate {
        type_population: state.type_population.iter().map(|row| row[j]).collect(),
        population: state.population[j],
        price: state.price[j],
        tax: state.tax[j],
        spending: state.spending[j],
    }
}

/// All districts other than j combined: populations and spending add up,
/// the price is housing-weighted and the tax rate balances the combined
/// budget.
pub fn outer_aggregate(state: &EquilibriumState, j: usize) -> Aggregate {
    let others: Vec<usize> = (0..state.n_jurisdictions()).filter(|&m| m != j).collect();
    let type_population = state.type_population.iter().map(|row| others.iter().map(|&m| row[m]).sum()).collect();
    let population: f64 = others.iter().map(|&m| state.population[m]).sum();
    let housing: f64 = others.iter().map(|&m| state.housing[m]).sum();
    let value: f64 = others.iter().map(|&m| state.price[m] * state.housing[m]).sum();
    let spending: f64 = others.iter().map(|&m| state.spending[m]).sum();
    Aggregate { type_population, population, price: value / housing, tax: spending / value, spending }
}

/// Per-record outcome vectors for the eighteen estimands of type k, using
/// the realized post-vote state (so rejected referenda contribute zeros).
pub fn estimand_outcomes(pre: &EquilibriumState, post: &EquilibriumState, j: usize, k: usize, t: &HouseholdType) -> Result<[f64; N_ESTIMANDS], IdentError> {
    let (o0, o1) = (own_aggregate(pre, j), own_aggregate(post, j));
    let (u0, u1) = (outer_aggregate(pre, j), outer_aggregate(post, j));
    let dl = |a: f64, b: f64| (b / a).ln();
    let wj = 0.5 * (o0.type_population[k] + o1.type_population[k]) / t.sigma;
    let wo = 0.5 * (u0.type_population[k] + u1.type_population[k]) / t.sigma;
    let rj = 0.5 * (t.rho(o0.gross_price())? + t.rho(o1.gross_price())?);
    let ro = 0.5 * (t.rho(u0.gross_price())? + t.rho(u1.gross_price())?);
    let g_own = dl(o0.spending, o1.spending);
    let n_own = dl(o0.population, o1.population);
    let p_own = dl(o0.price, o1.price);
    let tau_own = dl(1.0 + o0.tax, 1.0 + o1.tax);
    let g_out = dl(u0.spending, u1.spending);
    let n_out = dl(u0.population, u1.population);
    let p_out = dl(u0.price, u1.price);
    let tau_out = dl(1.0 + u0.tax, 1.0 + u1.tax);
    Ok([
        dl(o0.type_population[k], o1.type_population[k]),
        (1.0 - wj) * g_own,
        (1.0 - wj) * n_own,
        rj * (1.0 - wj) * p_own,
        rj * (1.0 - wj) * tau_own,
        wo * g_out,
        wo * n_out,
        ro * wo * p_out,
        ro * wo * tau_out,
        dl(u0.type_population[k], u1.type_population[k]),
        (1.0 - wo) * g_out,
        (1.0 - wo) * n_out,
        ro * (1.0 - wo) * p_out,
        ro * (1.0 - wo) * tau_out,
        wj * g_own,
        wj * n_own,
        rj * wj * p_own,
        rj * wj * tau_own,
    ])
}

/// The two equations lhs = a·psi + g·xi implied by an estimand vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquationRow {
    pub lhs: f64,
    pub psi: f64,
    pub xi: f64,
}

pub fn system_rows(theta: &[f64]) -> Result<[EquationRow; 2], IdentError> {
    if theta.len() != N_ESTIMANDS {
        return Err(IdentError::DimensionMismatch(format!("expected {N_ESTIMANDS} estimands, got {}", theta.len())));
    }
    let t = theta;
    Ok([
        EquationRow { lhs: t[0], psi: t[1] - t[2] - t[5] + t[6], xi: -t[3] - t[4] + t[7] + t[8] },
        EquationRow { lhs: t[9], psi: t[10] - t[11] - t[14] + t[15], xi: -t[12] - t[13] + t[16] + t[17] },
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSolution {
    pub a: f64,
    pub g: f64,
    /// Euclidean norm of the equation residuals (zero when exactly identified).
    pub residual_norm: f64,
}

/// Exact solve for two equations, least squares for more.
pub fn solve_preferences(rows: &[EquationRow]) -> Result<PreferenceSolution, IdentError> {
    if rows.len() < 2 {
        return Err(IdentError::DimensionMismatch("need at least two equations".into()));
    }
    let scale = rows.iter().map(|r| r.psi.abs().max(r.xi.abs())).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let (a, g) = if rows.len() == 2 {
        let det = rows[0].psi * rows[1].xi - rows[1].psi * rows[0].xi;
        if det.abs() < 1e-12 * scale * scale {
            return Err(IdentError::SingularSystem(det));
        }
        ((rows[0].lhs * rows[1].xi - rows[1].lhs * rows[0].xi) / det, (rows[0].psi * rows[1].lhs - rows[1].psi * rows[0].lhs) / det)
    } else {
        let x = DMatrix::from_fn(rows.len(), 2, |i, c| if c == 0 { rows[i].psi } else { rows[i].xi });
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.lhs));
        let xtx = x.transpose() * &x;
        let det = xtx.determinant();
        if det.abs() < 1e-12 * scale.powi(4) * rows.len() as f64 {
            return Err(IdentError::SingularSystem(det));
        }
        let b = xtx.try_inverse().ok_or(IdentError::SingularSystem(det))? * x.transpose() * y;
        (b[0], b[1])
    };
    let residual_norm = rows.iter().map(|r| (r.lhs - a * r.psi - g * r.xi).powi(2)).sum::<f64>().sqrt();
    Ok(PreferenceSolution { a, g, residual_norm })
}

/// (a, g) from one estimand vector.
pub fn solve_closed_form(theta: &[f64]) -> Result<(f64, f64), IdentError> {
    let s = solve_preferences(&system_rows(theta)?)?;
    Ok((s.a, s.g))
}

const PSI1: [(usize, f64); 4] = [(1, 1.0), (2, -1.0), (5, -1.0), (6, 1.0)];
const XI1: [(usize, f64); 4] = [(3, -1.0), (4, -1.0), (7, 1.0), (8, 1.0)];
const PSI2: [(usize, f64); 4] = [(10, 1.0), (11, -1.0), (14, -1.0), (15, 1.0)];
const XI2: [(usize, f64); 4] = [(12, -1.0), (13, -1.0), (16, 1.0), (17, 1.0)];

/// Closed-form Jacobian of (a, g) with respect to the eighteen estimands.
pub fn jacobian(theta: &[f64]) -> Result<[[f64; N_ESTIMANDS]; 2], IdentError> {
    let rows = system_rows(theta)?;
    let (a, g) = solve_closed_form(theta)?;
    let (t1, psi1, xi1) = (rows[0].lhs, rows[0].psi, rows[0].xi);
    let (t10, psi2, xi2) = (rows[1].lhs, rows[1].psi, rows[1].xi);
    let det = psi1 * xi2 - psi2 * xi1;
    let mut jac = [[0.0; N_ESTIMANDS]; 2];
    jac[0][0] = xi2 / det;
    jac[1][0] = -psi2 / det;
    jac[0][9] = -xi1 / det;
    jac[1][9] = psi1 / det;
    let blocks = [
        (PSI1, -a * xi2 / det, (t10 - g * xi2) / det),
        (XI1, (a * psi2 - t10) / det, g * psi2 / det),
        (PSI2, a * xi1 / det, (g * xi1 - t1) / det),
        (XI2, (t1 - a * psi1) / det, -g * psi1 / det),
    ];
    for (entries, da, dg) in blocks {
        for (i, s) in entries {
            jac[0][i] += s * da;
            jac[1][i] += s * dg;
        }
    }
    Ok(jac)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterSe {
    pub a: f64,
    pub g: f64,
    pub ratio: f64,
    pub cov_ag: f64,
}

/// Delta-method standard errors of a, g and a/g.
pub fn delta_method_se(theta: &[f64], sigma: &DMatrix<f64>) -> Result<ParameterSe, IdentError> {
    if sigma.nrows() != N_ESTIMANDS || sigma.ncols() != N_ESTIMANDS {
        return Err(IdentError::DimensionMismatch(format!("covariance must be {N_ESTIMANDS}×{N_ESTIMANDS}")));
    }
    let jac = jacobian(theta)?;
    let (a, g) = solve_closed_form(theta)?;
    let j = DMatrix::from_fn(2, N_ESTIMANDS, |r, c| jac[r][c]);
    let v = &j * sigma * j.transpose();
    let grad = [1.0 / g, -a / (g * g)];
    let v_ratio = grad[0] * grad[0] * v[(0, 0)] + 2.0 * grad[0] * grad[1] * v[(0, 1)] + grad[1] * grad[1] * v[(1, 1)];
    Ok(ParameterSe { a: v[(0, 0)].max(0.0).sqrt(), g: v[(1, 1)].max(0.0).sqrt(), ratio: v_ratio.max(0.0).sqrt(), cov_ag: v[(0, 1)] })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimate {
    pub eta: f64,
    pub se: f64,
}

/// η = θ_H/θ_P with the delta-method gradient (1/θ_P, −θ_H/θ_P²).
pub fn solve_eta(theta_h: f64, theta_p: f64, var_h: f64, var_p: f64, cov_hp: f64, floor: f64) -> Result<EtaEstimate, IdentError> {
    if !(theta_p.abs() > floor) {
        return Err(IdentError::WeakDenominator(theta_p));
    }
    let eta = theta_h / theta_p;
    let (d_h, d_p) = (1.0 / theta_p, -theta_h / (theta_p * theta_p));
    let v = d_h * d_h * var_h + 2.0 * d_h * d_p * cov_hp + d_p * d_p * var_p;
    Ok(EtaEstimate { eta, se: v.max(0.0).sqrt() })
}

/// Estimands and their covariance for one household type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemInputs {
    pub type_index: usize,
    pub theta: Vec<f64>,
    pub se: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub shrinkage: f64,
    pub bandwidths: Vec<f64>,
}

fn running_and_first_stage(records: &[&ReferendumRecord]) -> (Vec<f64>, Vec<f64>, Vec<u64>) {
    let running = records.iter().map(|r| r.margin).collect();
    let first = records.iter().map(|r| if r.approved { r.dlog_g } else { 0.0 }).collect();
    let cluster = records.iter().map(|r| r.replication.wrapping_mul(1 << 32).wrapping_add(r.referendum)).collect();
    (running, first, cluster)
}

/// Shared bandwidth for a type's system, or `None` for per-coefficient
/// plug-in bandwidths.
fn system_bandwidth(running: &[f64], lhs: &[f64], config: &IdentConfig) -> Result<Option<f64>, IdentError> {
    if let Some(h) = config.rdd.fixed_bandwidth {
        return Ok(Some(h));
    }
    if !config.common_bandwidth {
        return Ok(None);
    }
    Ok(Some(ik_bandwidth(running, lhs, &config.rdd)?))
}

fn point(fit: &FuzzyFit, bias_corrected: bool) -> f64 {
    if bias_corrected { fit.estimate.bias_corrected } else { fit.estimate.estimate }
}

/// Level weights used by the factorized mode: the cutoff value of the
/// post-vote level is the midpoint of its two one-sided limits.
fn cutoff_level(running: &[f64], level: &[f64], h: f64) -> Result<f64, IdentError> {
    let l = crate::rdd::local_polynomial_fit(running, level, Side::Left, h, 1)?[0];
    let r = crate::rdd::local_polynomial_fit(running, level, Side::Right, h, 1)?[0];
    Ok(0.5 * (l + r))
}

pub fn estimate_system_inputs(records: &[&ReferendumRecord], types: &[HouseholdType], k: usize, config: &IdentConfig) -> Result<SystemInputs, IdentError> {
    if records.is_empty() {
        return Err(IdentError::EmptyData);
    }
    let t = types.get(k).ok_or_else(|| IdentError::DimensionMismatch(format!("type {k} out of range")))?;
    let (running, first, cluster) = running_and_first_stage(records);
    let outcomes: Vec<[f64; N_ESTIMANDS]> = records
        .iter()
        .map(|r| estimand_outcomes(&r.pre, r.post(), r.district, k, t))
        .collect::<Result<_, _>>()?;
    match config.weight_mode {
        WeightMode::Product => {
            let lhs: Vec<f64> = outcomes.iter().map(|o| o[0]).collect();
            let h = system_bandwidth(&running, &lhs, config)?;
            let fits: Vec<FuzzyFit> = (0..N_ESTIMANDS)
                .into_par_iter()
                .map(|e| {
                    let y = outcomes.iter().map(|o| o[e]).collect();
                    let s = RddSample::new(running.clone(), y, first.clone(), cluster.clone())?;
                    match h {
                        Some(h) => fuzzy_fit_at(&s, h, &config.rdd),
                        None => fuzzy_fit(&s, &config.rdd),
                    }
                })
                .collect::<Result<_, RddError>>()?;
            let theta = fits.iter().map(|f| point(f, config.bias_corrected)).collect();
            let (sigma, scores) = covariance_matrix(&fits);
            let (covariance, shrinkage) = if config.shrink { shrink_correlation(&sigma, &scores)? } else { (sigma, 0.0) };
            let se = (0..N_ESTIMANDS).map(|i| covariance[(i, i)].max(0.0).sqrt()).collect();
            Ok(SystemInputs { type_index: k, theta, se, covariance, shrinkage, bandwidths: fits.iter().map(|f| f.estimate.bandwidth).collect() })
        }
        WeightMode::Factorized => factorized_inputs(records, t, k, &running, &first, &cluster, config),
    }
}

/// Factorized estimands: weights at the cutoff times elasticities. The
/// covariance treats the cutoff weights as fixed.
fn factorized_inputs(
    records: &[&ReferendumRecord],
    t: &HouseholdType,
    k: usize,
    running: &[f64],
    first: &[f64],
    cluster: &[u64],
    config: &IdentConfig,
) -> Result<SystemInputs, IdentError> {
    let dl = |a: f64, b: f64| (b / a).ln();
    let mut changes: Vec<Vec<f64>> = (0..10).map(|_| Vec::with_capacity(records.len())).collect();
    let mut levels: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(records.len())).collect();
    for r in records {
        let (o0, o1) = (own_aggregate(&r.pre, r.district), own_aggregate(r.post(), r.district));
        let (u0, u1) = (outer_aggregate(&r.pre, r.district), outer_aggregate(r.post(), r.district));
        let c = [
            dl(o0.type_population[k], o1.type_population[k]),
            dl(o0.spending, o1.spending),
            dl(o0.population, o1.population),
            dl(o0.price, o1.price),
            dl(1.0 + o0.tax, 1.0 + o1.tax),
            dl(u0.type_population[k], u1.type_population[k]),
            dl(u0.spending, u1.spending),
            dl(u0.population, u1.population),
            dl(u0.price, u1.price),
            dl(1.0 + u0.tax, 1.0 + u1.tax),
        ];
        for (v, x) in changes.iter_mut().zip(c) {
            v.push(x);
        }
        let l = [o1.type_population[k] / t.sigma, u1.type_population[k] / t.sigma, t.rho(o1.gross_price())?, t.rho(u1.gross_price())?];
        for (v, x) in levels.iter_mut().zip(l) {
            v.push(x);
        }
    }
    let h = system_bandwidth(running, &changes[0], config)?;
    let fits: Vec<FuzzyFit> = changes
        .into_par_iter()
        .map(|y| {
            let s = RddSample::new(running.to_vec(), y, first.to_vec(), cluster.to_vec())?;
            match h {
                Some(h) => fuzzy_fit_at(&s, h, &config.rdd),
                None => fuzzy_fit(&s, &config.rdd),
            }
        })
        .collect::<Result<_, RddError>>()?;
    let e: Vec<f64> = fits.iter().map(|f| point(f, config.bias_corrected)).collect();
    let h = fits[0].estimate.bandwidth;
    let w: Vec<f64> = levels.iter().map(|l| cutoff_level(running, l, h)).collect::<Result<_, _>>()?;
    let (wj, wo, rj, ro) = (w[0], w[1], w[2], w[3]);
    // Each estimand is coef × elasticity index.
    let spec: [(f64, usize); N_ESTIMANDS] = [
        (1.0, 0),
        (1.0 - wj, 1),
        (1.0 - wj, 2),
        (rj * (1.0 - wj), 3),
        (rj * (1.0 - wj), 4),
        (wo, 6),
        (wo, 7),
        (ro * wo, 8),
        (ro * wo, 9),
        (1.0, 5),
        (1.0 - wo, 6),
        (1.0 - wo, 7),
        (ro * (1.0 - wo), 8),
        (ro * (1.0 - wo), 9),
        (wj, 1),
        (wj, 2),
        (rj * wj, 3),
        (rj * wj, 4),
    ];
    let theta = spec.iter().map(|&(c, i)| c * e[i]).collect();
    let covariance = DMatrix::from_fn(N_ESTIMANDS, N_ESTIMANDS, |r, c| {
        let (cr, ir) = spec[r];
        let (cc, ic) = spec[c];
        cr * cc * fit_covariance(&fits[ir], &fits[ic])
    });
    let se = (0..N_ESTIMANDS).map(|i| covariance[(i, i)].max(0.0).sqrt()).collect();
    Ok(SystemInputs { type_index: k, theta, se, covariance, shrinkage: 0.0, bandwidths: spec.iter().map(|&(_, i)| fits[i].estimate.bandwidth).collect() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeEstimate {
    pub a: f64,
    pub g: f64,
    pub ratio: f64,
    pub se: ParameterSe,
    pub residual_norm: f64,
    pub inputs: SystemInputs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralEstimate {
    pub types: Vec<TypeEstimate>,
    pub eta: EtaEstimate,
}

impl StructuralEstimate {
    /// Parameter vector (a_1..a_K, g_1..g_K, η).
    pub fn parameters(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.types.iter().map(|t| t.a).collect();
        p.extend(self.types.iter().map(|t| t.g));
        p.push(self.eta.eta);
        p
    }

    /// Block-diagonal covariance of [`Self::parameters`]: types are
    /// estimated from separate systems and η from its own ratio.
    pub fn covariance(&self) -> DMatrix<f64> {
        let nk = self.types.len();
        let mut v = DMatrix::zeros(2 * nk + 1, 2 * nk + 1);
        for (k, t) in self.types.iter().enumerate() {
            v[(k, k)] = t.se.a * t.se.a;
            v[(nk + k, nk + k)] = t.se.g * t.se.g;
            v[(k, nk + k)] = t.se.cov_ag;
            v[(nk + k, k)] = t.se.cov_ag;
        }
        v[(2 * nk, 2 * nk)] = self.eta.se * self.eta.se;
        v
    }
}

/// η from own-district population and price changes.
pub fn estimate_eta(records: &[&ReferendumRecord], config: &IdentConfig) -> Result<EtaEstimate, IdentError> {
    if records.is_empty() {
        return Err(IdentError::EmptyData);
    }
    let (running, first, cluster) = running_and_first_stage(records);
    let dn = records.iter().map(|r| (r.post().population[r.district] / r.pre.population[r.district]).ln()).collect();
    let dp = records.iter().map(|r| (r.post().price[r.district] / r.pre.price[r.district]).ln()).collect();
    let sp = RddSample::new(running.clone(), dp, first.clone(), cluster.clone())?;
    let fp = fuzzy_fit(&sp, &config.rdd)?;
    // Same bandwidth for numerator and denominator keeps the ratio exact.
    let sh = RddSample::new(running, dn, first, cluster)?;
    let fh = fuzzy_fit_at(&sh, fp.estimate.bandwidth, &config.rdd)?;
    solve_eta(
        point(&fh, config.bias_corrected),
        point(&fp, config.bias_corrected),
        fh.estimate.se.powi(2),
        fp.estimate.se.powi(2),
        fit_covariance(&fh, &fp),
        config.rdd.first_stage_floor,
    )
}

/// Full structural estimation over a pooled set of referenda.
pub fn estimate_structure(records: &[&ReferendumRecord], types: &[HouseholdType], n_jurisdictions: usize, config: &IdentConfig) -> Result<StructuralEstimate, IdentError> {
    if !counting_rule_holds(n_jurisdictions, types.len()) {
        return Err(IdentError::Underdetermined { jurisdictions: n_jurisdictions, types: types.len() });
    }
    let per_type: Vec<TypeEstimate> = (0..types.len())
        .into_par_iter()
        .map(|k| {
            let inputs = estimate_system_inputs(records, types, k, config)?;
            let sol = solve_preferences(&system_rows(&inputs.theta)?)?;
            let se = delta_method_se(&inputs.theta, &inputs.covariance)?;
            Ok(TypeEstimate { a: sol.a, g: sol.g, ratio: sol.a / sol.g, se, residual_norm: sol.residual_norm, inputs })
        })
        .collect::<Result<_, IdentError>>()?;
    let eta = estimate_eta(records, config)?;
    Ok(StructuralEstimate { types: per_type, eta })
}

/// Amenity and housing-productivity effects consistent with observed
/// populations under given preferences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationEffects {
    /// Amenity intercepts `[k][j]` relative to the outside option.
    pub amenity: Vec<Vec<f64>>,
    /// Productivity shifters with mean zero.
    pub productivity: Vec<f64>,
    pub lambda: f64,
}

/// Invert the logit shares type by type and the housing supply curve
/// district by district.
pub fn calibrate_location_effects(types: &[HouseholdType], state: &EquilibriumState, eta: f64, chi: f64) -> Result<LocationEffects, IdentError> {
    let nj = state.n_jurisdictions();
    if state.type_population.len() != types.len() {
        return Err(IdentError::DimensionMismatch("types and populations differ".into()));
    }
    let mut amenity = Vec::with_capacity(types.len());
    for (k, t) in types.iter().enumerate() {
        let row = &state.type_population[k];
        let outside = t.sigma - row.iter().sum::<f64>();
        if !(outside > 0.0) {
            return Err(IdentError::ZeroOutsideOption(k));
        }
        let mut a = Vec::with_capacity(nj);
        for j in 0..nj {
            if !(row[j] > 0.0) {
                return Err(IdentError::Model(ModelError::NonpositivePopulation(row[j])));
            }
            let v = t.theta * (row[j] / outside).ln();
            let rest = crate::model::systematic_utility(t, 0.0, state.spending[j], state.population[j], state.gross_price(j), chi)?;
            a.push(v - rest);
        }
        amenity.push(a);
    }
    let shifter: Vec<f64> = (0..nj).map(|j| state.housing[j].ln() - eta * state.price[j].ln()).collect();
    let lambda = shifter.iter().sum::<f64>() / nj as f64;
    let productivity = shifter.iter().map(|s| s - lambda).collect();
    Ok(LocationEffects { amenity, productivity, lambda })
}

/// Economy with estimated preferences (θ normalized to one) and calibrated
/// location effects.
pub fn estimated_economy(base_types: &[HouseholdType], estimate: &StructuralEstimate, state: &EquilibriumState, chi: f64) -> Result<Economy, IdentError> {
    let types: Vec<HouseholdType> = base_types
        .iter()
        .zip(&estimate.types)
        .map(|(t, e)| HouseholdType { alpha: e.a, gamma: e.g, theta: 1.0, ..t.clone() })
        .collect();
    economy_with_preferences(&types, state, estimate.eta.eta, chi)
}

/// Economy reproducing `state` exactly under the given preferences.
pub fn economy_with_preferences(types: &[HouseholdType], state: &EquilibriumState, eta: f64, chi: f64) -> Result<Economy, IdentError> {
    let loc = calibrate_location_effects(types, state, eta, chi)?;
    let jurisdictions = (0..state.n_jurisdictions())
        .map(|j| crate::model::Jurisdiction { amenity: 0.0, productivity: loc.productivity[j], spending: state.spending[j] })
        .collect();
    let economy = Economy { jurisdictions, types: types.to_vec(), eta, lambda: loc.lambda, chi, type_amenity: Some(loc.amenity) };
    economy.validate()?;
    Ok(economy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{draw_economy, simulate_replication, DgpConfig};
    use crate::equilibrium::{residuals, solve_equilibrium, treated_state, SolverConfig};
    use proptest::prelude::*;

    fn random_theta(seed: u64) -> Vec<f64> {
        (0..N_ESTIMANDS).map(|i| (((seed as f64 + 1.0) * (i as f64 + 3.7)).sin() * 0.8) + if i % 3 == 0 { 0.5 } else { 0.0 }).collect()
    }

    #[test]
    fn counting_rule() {
        assert!(!counting_rule_holds(1, 4));
        assert!(counting_rule_holds(2, 4));
        assert!(counting_rule_holds(10, 4));
    }

    #[test]
    fn round_trip_known_parameters() {
        let (a, g) = (0.37, 0.21);
        let mut t = random_theta(1);
        let r = system_rows(&t).unwrap();
        t[0] = a * r[0].psi + g * r[0].xi;
        t[9] = a * r[1].psi + g * r[1].xi;
        let (ea, eg) = solve_closed_form(&t).unwrap();
        assert!((ea - a).abs() < 1e-12 && (eg - g).abs() < 1e-12);
    }

    #[test]
    fn least_squares_matches_exact_on_consistent_rows() {
        let rows = [
            EquationRow { lhs: 0.5 * 1.0 + 0.2 * 0.3, psi: 1.0, xi: 0.3 },
            EquationRow { lhs: 0.5 * -0.4 + 0.2 * 2.0, psi: -0.4, xi: 2.0 },
            EquationRow { lhs: 0.5 * 0.7 + 0.2 * -1.1, psi: 0.7, xi: -1.1 },
        ];
        let s = solve_preferences(&rows).unwrap();
        assert!((s.a - 0.5).abs() < 1e-12 && (s.g - 0.2).abs() < 1e-12 && s.residual_norm < 1e-12);
        let singular = [EquationRow { lhs: 1.0, psi: 1.0, xi: 2.0 }, EquationRow { lhs: 2.0, psi: 2.0, xi: 4.0 }];
        assert!(matches!(solve_preferences(&singular), Err(IdentError::SingularSystem(_))));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for seed in 0..20 {
            let t = random_theta(seed);
            let Ok(jac) = jacobian(&t) else { continue };
            for i in 0..N_ESTIMANDS {
                let h = 1e-6 * (1.0 + t[i].abs());
                let mut tp = t.clone();
                let mut tm = t.clone();
                tp[i] += h;
                tm[i] -= h;
                let (ap, gp) = solve_closed_form(&tp).unwrap();
                let (am, gm) = solve_closed_form(&tm).unwrap();
                let fd = [(ap - am) / (2.0 * h), (gp - gm) / (2.0 * h)];
                for r in 0..2 {
                    let err = (fd[r] - jac[r][i]).abs() / jac[r][i].abs().max(1e-3);
                    assert!(err < 1e-6, "seed {seed} θ{i} row {r}: {} vs {}", fd[r], jac[r][i]);
                }
            }
        }
    }

    #[test]
    fn zero_covariance_zero_se() {
        let se = delta_method_se(&random_theta(2), &DMatrix::zeros(N_ESTIMANDS, N_ESTIMANDS)).unwrap();
        assert_eq!((se.a, se.g, se.ratio), (0.0, 0.0, 0.0));
        assert!(delta_method_se(&random_theta(2), &DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn eta_ratio() {
        let e = solve_eta(0.3, 0.3, 0.0, 0.0, 0.0, 1e-8).unwrap();
        assert!((e.eta - 1.0).abs() < 1e-15);
        assert!(matches!(solve_eta(0.3, 0.0, 0.0, 0.0, 0.0, 1e-8), Err(IdentError::WeakDenominator(_))));
    }

    #[test]
    fn eta_se_matches_parametric_bootstrap() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let (th, tp, sh, sp, rho) = (0.06, 0.1, 0.004, 0.005, 0.3);
        let e = solve_eta(th, tp, sh * sh, sp * sp, rho * sh * sp, 1e-8).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let z = Normal::new(0.0, 1.0).unwrap();
        let draws: Vec<f64> = (0..2000)
            .map(|_| {
                let (z1, z2): (f64, f64) = (z.sample(&mut rng), z.sample(&mut rng));
                let h = th + sh * z1;
                let p = tp + sp * (rho * z1 + (1.0 - rho * rho).sqrt() * z2);
                h / p
            })
            .collect();
        let m = draws.iter().sum::<f64>() / 2000.0;
        let sd = (draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / 1999.0).sqrt();
        assert!((sd / e.se - 1.0).abs() < 0.1, "{sd} vs {}", e.se);
    }

    #[test]
    fn scale_consistency() {
        let mut t = random_theta(3);
        let (a0, g0) = solve_closed_form(&t).unwrap();
        for x in t.iter_mut() {
            *x *= 2.5;
        }
        let (a1, g1) = solve_closed_form(&t).unwrap();
        assert!((a0 - a1).abs() < 1e-12 && (g0 - g1).abs() < 1e-12);
    }

    #[test]
    fn true_cutoff_effects_recover_preferences() {
        // Exact potential outcomes at the tie point satisfy the system.
        let c = DgpConfig::default();
        let d = draw_economy(&c, 0).unwrap();
        let mut sums = vec![[0.0; N_ESTIMANDS]; 4];
        for j in 0..c.n_jurisdictions {
            let post = treated_state(&d.economy, &d.baseline, j, d.tie_points[j], &c.solver).unwrap();
            for (k, t) in c.types.iter().enumerate() {
                let o = estimand_outcomes(&d.baseline, &post, j, k, t).unwrap();
                for e in 0..N_ESTIMANDS {
                    sums[k][e] += o[e] / d.tie_points[j];
                }
            }
        }
        for (k, t) in c.types.iter().enumerate() {
            let (a, g) = solve_closed_form(&sums[k]).unwrap();
            assert!((a - t.alpha).abs() < 0.02 && (g - t.gamma).abs() < 0.02, "type {k}: {a} {g}");
        }
    }

    #[test]
    fn outcomes_zero_without_policy_change() {
        let c = DgpConfig::default();
        let d = draw_economy(&c, 1).unwrap();
        let o = estimand_outcomes(&d.baseline, &d.baseline, 3, 0, &c.types[0]).unwrap();
        assert!(o.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn own_spending_elasticity_is_one_and_outer_is_zero() {
        let c = DgpConfig { n_referenda: 2000, ..DgpConfig::default() };
        let rep = simulate_replication(&c, 0).unwrap();
        let recs: Vec<&ReferendumRecord> = rep.records.iter().collect();
        let (running, first, cluster) = running_and_first_stage(&recs);
        let g_own = recs.iter().map(|r| (r.post().spending[r.district] / r.pre.spending[r.district]).ln()).collect();
        let g_out = recs.iter().map(|r| (outer_aggregate(r.post(), r.district).spending / outer_aggregate(&r.pre, r.district).spending).ln()).collect();
        let cfg = RddConfig::default();
        let own = fuzzy_fit(&RddSample::new(running.clone(), g_own, first.clone(), cluster.clone()).unwrap(), &cfg).unwrap();
        assert!((own.estimate.estimate - 1.0).abs() < 1e-10);
        let s = RddSample::new(running, g_out, first, cluster).unwrap();
        let out = fuzzy_fit_at(&s, own.estimate.bandwidth, &cfg).unwrap();
        assert!(out.estimate.estimate.abs() < 1e-12);
    }

    #[test]
    fn location_effects_round_trip() {
        let c = DgpConfig::default();
        let d = draw_economy(&c, 2).unwrap();
        let loc = calibrate_location_effects(&c.types, &d.baseline, c.eta, c.chi).unwrap();
        for k in 0..4 {
            for j in 0..c.n_jurisdictions {
                assert!((loc.amenity[k][j] - d.economy.jurisdictions[j].amenity).abs() < 1e-8);
            }
        }
        for j in 0..c.n_jurisdictions {
            assert!((loc.productivity[j] + loc.lambda - d.economy.jurisdictions[j].productivity).abs() < 1e-8);
        }
        assert!(loc.productivity.iter().sum::<f64>().abs() < 1e-12);
        // The rebuilt economy reproduces the baseline as an equilibrium.
        let e = economy_with_preferences(&c.types, &d.baseline, c.eta, c.chi).unwrap();
        let s = solve_equilibrium(&e, &d.baseline.spending, &SolverConfig::default(), Some(&d.baseline)).unwrap();
        assert!(residuals(&e, &d.baseline).max() < 1e-9);
        assert!(s.price.iter().zip(&d.baseline.price).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn location_normalization() {
        // A larger outside mass shifts every amenity of a type by the same
        // constant: amenities are pinned only relative to the outside option.
        let c = DgpConfig::default();
        let d = draw_economy(&c, 3).unwrap();
        let base = calibrate_location_effects(&c.types, &d.baseline, c.eta, c.chi).unwrap();
        let mut types = c.types.clone();
        types[1].sigma *= 1.5;
        let moved = calibrate_location_effects(&types, &d.baseline, c.eta, c.chi).unwrap();
        let shift: Vec<f64> = (0..c.n_jurisdictions).map(|j| moved.amenity[1][j] - base.amenity[1][j]).collect();
        assert!(shift[0] < 0.0);
        assert!(shift.iter().all(|x| (x - shift[0]).abs() < 1e-12));
        assert_eq!(moved.amenity[0], base.amenity[0]);
    }

    proptest! {
        #[test]
        fn closed_form_equals_least_squares(seed in 0u64..1000) {
            let t = random_theta(seed);
            let rows = system_rows(&t).unwrap();
            if let Ok(s) = solve_preferences(&rows) {
                let x = DMatrix::from_row_slice(2, 2, &[rows[0].psi, rows[0].xi, rows[1].psi, rows[1].xi]);
                let y = DVector::from_row_slice(&[rows[0].lhs, rows[1].lhs]);
                if let Some(b) = x.lu().solve(&y) {
                    prop_assert!((b[0] - s.a).abs() < 1e-8 * (1.0 + s.a.abs()));
                    prop_assert!((b[1] - s.g).abs() < 1e-8 * (1.0 + s.g.abs()));
                }
            }
        }
    }
}
