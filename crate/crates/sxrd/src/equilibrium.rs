//! Spatial equilibrium solver.
//!
//! The fixed point is found by damped iteration on the matrix of type
//! populations: populations pin down prices and housing through market
//! clearing, prices pin down the balanced-budget tax, and the resulting
//! utilities give new logit populations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    balanced_budget_tax, choice_probabilities, market_clearing_price, systematic_utility_or_neg_inf, Economy,
    EquilibriumState, ModelError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("jurisdiction {0} emptied: no type can afford to live there")]
    InfeasibleIncome(usize),
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("spending vector has length {got}, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tolerance: 1e-10, max_iterations: 10_000, damping: 0.5 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        if !(self.tolerance > 0.0) {
            return Err(SolveError::InvalidConfig("tolerance must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(SolveError::InvalidConfig("damping must lie in (0, 1]".into()));
        }
        if self.max_iterations == 0 {
            return Err(SolveError::InvalidConfig("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Baseline and treated equilibria for a spending change in one district.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualPair {
    pub state0: EquilibriumState,
    pub state1: EquilibriumState,
}

/// Max-norm residuals of every equilibrium condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub logit: f64,
    pub clearing: f64,
    pub budget: f64,
    pub conservation: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.logit.max(self.clearing).max(self.budget).max(self.conservation)
    }
}

/// Prices, housing and taxes implied by a population matrix.
fn state_from_populations(
    economy: &Economy,
    g: &[f64],
    type_population: Vec<Vec<f64>>,
) -> Result<EquilibriumState, SolveError> {
    let nj = economy.n_jurisdictions();
    let mut population = vec![0.0; nj];
    for row in &type_population {
        for (tot, n) in population.iter_mut().zip(row) {
            *tot += n;
        }
    }
    let mut price = Vec::with_capacity(nj);
    let mut housing = Vec::with_capacity(nj);
    let mut tax = Vec::with_capacity(nj);
    for j in 0..nj {
        if !(population[j] > 0.0) {
            return Err(SolveError::InfeasibleIncome(j));
        }
        let jur = &economy.jurisdictions[j];
        let (p, h) = market_clearing_price(population[j], economy.lambda, economy.eta, jur.productivity)?;
        tax.push(balanced_budget_tax(g[j], p, h)?);
        price.push(p);
        housing.push(h);
    }
    Ok(EquilibriumState { price, tax, housing, population, type_population, spending: g.to_vec() })
}

/// Logit populations implied by a candidate state.
fn logit_populations(economy: &Economy, state: &EquilibriumState) -> Vec<Vec<f64>> {
    let nj = economy.n_jurisdictions();
    economy
        .types
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let v: Vec<f64> = (0..nj)
                .map(|j| {
                    systematic_utility_or_neg_inf(
                        t,
                        economy.amenity(k, j),
                        state.spending[j],
                        state.population[j],
                        state.gross_price(j),
                        economy.chi,
                    )
                })
                .collect();
            let (shares, _) = choice_probabilities(&v, t.theta);
            shares.into_iter().map(|s| t.sigma * s).collect()
        })
        .collect()
}

fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

/// Solve for the equilibrium at spending vector `g`, returning the state and
/// the number of iterations used.
pub fn solve_equilibrium_counted(
    economy: &Economy,
    g: &[f64],
    config: &SolverConfig,
    warm_start: Option<&EquilibriumState>,
) -> Result<(EquilibriumState, usize), SolveError> {
    config.validate()?;
    let nj = economy.n_jurisdictions();
    if g.len() != nj {
        return Err(SolveError::DimensionMismatch { got: g.len(), expected: nj });
    }
    if let Some(&bad) = g.iter().find(|&&x| !(x > 0.0)) {
        return Err(ModelError::NonpositiveSpending(bad).into());
    }
    let mut n: Vec<Vec<f64>> = match warm_start {
        Some(s) if s.type_population.len() == economy.n_types() && s.price.len() == nj => s.type_population.clone(),
        _ => economy.types.iter().map(|t| vec![t.sigma / (nj as f64 + 1.0); nj]).collect(),
    };
    let d = config.damping;
    let mut residual = f64::INFINITY;
    for it in 0..config.max_iterations {
        let state = state_from_populations(economy, g, n)?;
        let next = logit_populations(economy, &state);
        residual = max_abs_diff(&next, &state.type_population);
        if residual < config.tolerance {
            // Types priced out of a district carry exactly zero mass there.
            if next.iter().flatten().any(|&x| x == 0.0) {
                let mut cleaned = state.type_population.clone();
                for (row, nrow) in cleaned.iter_mut().zip(&next) {
                    for (c, &x) in row.iter_mut().zip(nrow) {
                        if x == 0.0 {
                            *c = 0.0;
                        }
                    }
                }
                return Ok((state_from_populations(economy, g, cleaned)?, it + 1));
            }
            return Ok((state, it + 1));
        }
        n = state
            .type_population
            .iter()
            .zip(&next)
            .map(|(old, new)| old.iter().zip(new).map(|(o, x)| (1.0 - d) * o + d * x).collect())
            .collect();
    }
    Err(SolveError::NoConvergence { iterations: config.max_iterations, residual })
}

pub fn solve_equilibrium(
    economy: &Economy,
    g: &[f64],
    config: &SolverConfig,
    warm_start: Option<&EquilibriumState>,
) -> Result<EquilibriumState, SolveError> {
    solve_equilibrium_counted(economy, g, config, warm_start).map(|(s, _)| s)
}

/// Residuals of every equilibrium condition at `state`.
pub fn residuals(economy: &Economy, state: &EquilibriumState) -> Residuals {
    let logit = max_abs_diff(&logit_populations(economy, state), &state.type_population);
    let mut clearing: f64 = 0.0;
    let mut budget: f64 = 0.0;
    for j in 0..state.n_jurisdictions() {
        let jur = &economy.jurisdictions[j];
        let log_n = state.population[j].ln();
        let log_p = (log_n - economy.lambda - jur.productivity) / economy.eta;
        clearing = clearing.max((state.price[j].ln() - log_p).abs()).max((state.housing[j].ln() - log_n).abs());
        budget = budget.max((state.spending[j] - state.tax[j] * state.price[j] * state.housing[j]).abs());
    }
    let mut conservation: f64 = 0.0;
    for (k, t) in economy.types.iter().enumerate() {
        let inside: f64 = state.type_population[k].iter().sum();
        conservation = conservation.max((inside - t.sigma).max(0.0));
    }
    Residuals { logit, clearing, budget, conservation }
}

/// Re-solve with district j's spending scaled by e^dlogG, warm-started from
/// the supplied baseline.
pub fn treated_state(
    economy: &Economy,
    state0: &EquilibriumState,
    j: usize,
    dlog_g: f64,
    config: &SolverConfig,
) -> Result<EquilibriumState, SolveError> {
    let mut g1 = state0.spending.clone();
    g1[j] *= dlog_g.exp();
    solve_equilibrium(economy, &g1, config, Some(state0))
}

/// Baseline equilibrium at the economy's spending and the treated one with
/// only district j's spending changed.
pub fn counterfactual_pair(
    economy: &Economy,
    j: usize,
    dlog_g: f64,
    config: &SolverConfig,
) -> Result<CounterfactualPair, SolveError> {
    let state0 = solve_equilibrium(economy, &economy.spending(), config, None)?;
    let state1 = treated_state(economy, &state0, j, dlog_g, config)?;
    Ok(CounterfactualPair { state0, state1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HouseholdType, Jurisdiction};

    pub(crate) fn test_economy(amenities: &[f64], productivities: &[f64], g: f64) -> Economy {
        let alpha = [0.55, 0.20, 0.15, 0.10];
        let gamma = [0.35, 0.30, 0.25, 0.20];
        let income = [0.45, 0.55, 0.55, 0.45];
        let types = (0..4)
            .map(|k| HouseholdType {
                alpha: alpha[k],
                gamma: gamma[k],
                beta: 1.0 - alpha[k] - gamma[k],
                income: income[k],
                sigma: 0.25,
                theta: 1.0,
                mu0: -3.0,
                mu1: 0.0,
                sigma0: 3.0,
            })
            .collect();
        let jurisdictions = amenities
            .iter()
            .zip(productivities)
            .map(|(&a, &b)| Jurisdiction { amenity: a, productivity: b, spending: g })
            .collect();
        Economy { jurisdictions, types, eta: 0.6, lambda: 0.0, chi: 1.0, type_amenity: None }
    }

    fn drawn_economy() -> Economy {
        let a = [0.05, -0.12, 0.08, 0.0, -0.03, 0.11, -0.07, 0.02, 0.15, -0.09];
        let b = [-1.2, -1.25, -1.18, -1.22, -1.15, -1.21, -1.19, -1.3, -1.24, -1.17];
        test_economy(&a, &b, 0.012)
    }

    #[test]
    fn symmetric_economy_is_symmetric() {
        let e = test_economy(&[0.0; 3], &[-1.2; 3], 0.01);
        let s = solve_equilibrium(&e, &e.spending(), &SolverConfig::default(), None).unwrap();
        for j in 1..3 {
            assert!((s.price[j] - s.price[0]).abs() < 1e-10);
            assert!((s.tax[j] - s.tax[0]).abs() < 1e-10);
            for k in 0..4 {
                assert!((s.type_population[k][j] - s.type_population[k][0]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn residuals_below_tolerance() {
        let e = drawn_economy();
        let cfg = SolverConfig::default();
        let s = solve_equilibrium(&e, &e.spending(), &cfg, None).unwrap();
        let r = residuals(&e, &s);
        assert!(r.max() < 1e-10, "{r:?}");
        for (k, t) in e.types.iter().enumerate() {
            let inside: f64 = s.type_population[k].iter().sum();
            assert!(inside < t.sigma);
        }
        for j in 0..10 {
            let nsum: f64 = (0..4).map(|k| s.type_population[k][j]).sum();
            assert!((nsum - s.population[j]).abs() < 1e-15);
            for t in &e.types {
                assert!(t.income - s.gross_price(j) > 0.0);
            }
        }
    }

    #[test]
    fn warm_start_is_idempotent() {
        let e = drawn_economy();
        let cfg = SolverConfig::default();
        let s = solve_equilibrium(&e, &e.spending(), &cfg, None).unwrap();
        let (s2, iters) = solve_equilibrium_counted(&e, &e.spending(), &cfg, Some(&s)).unwrap();
        assert!(iters <= 2);
        assert_eq!(s, s2);
    }

    #[test]
    fn deterministic() {
        let e = drawn_economy();
        let cfg = SolverConfig::default();
        let a = solve_equilibrium(&e, &e.spending(), &cfg, None).unwrap();
        let b = solve_equilibrium(&e, &e.spending(), &cfg, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_change_pair_coincides() {
        let e = drawn_economy();
        let cfg = SolverConfig::default();
        let pair = counterfactual_pair(&e, 3, 1e-12, &cfg).unwrap();
        for j in 0..10 {
            assert!((pair.state0.price[j] - pair.state1.price[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn pair_only_changes_district_j_and_housing_identity_holds() {
        let e = drawn_economy();
        let cfg = SolverConfig::default();
        let d = 0.1;
        let pair = counterfactual_pair(&e, 4, d, &cfg).unwrap();
        let (s0, s1) = (&pair.state0, &pair.state1);
        for j in 0..10 {
            if j == 4 {
                assert!(((s1.spending[j] / s0.spending[j]).ln() - d).abs() < 1e-14);
            } else {
                assert_eq!(s1.spending[j], s0.spending[j]);
            }
            let dh = (s1.housing[j] / s0.housing[j]).ln() / d;
            let dp = (s1.price[j] / s0.price[j]).ln() / d;
            assert!((dh - e.eta * dp).abs() < 1e-10);
        }
        // Prices move with net sorting into the treated district.
        let dn = s1.population[4] - s0.population[4];
        let dp = s1.price[4] - s0.price[4];
        assert_eq!(dn > 0.0, dp > 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let e = drawn_economy();
        let cfg = SolverConfig { damping: 0.0, ..SolverConfig::default() };
        assert!(matches!(solve_equilibrium(&e, &e.spending(), &cfg, None), Err(SolveError::InvalidConfig(_))));
        let mut g = e.spending();
        g[0] = 0.0;
        assert!(solve_equilibrium(&e, &g, &SolverConfig::default(), None).is_err());
        let cfg = SolverConfig { max_iterations: 2, ..SolverConfig::default() };
        assert!(matches!(
            solve_equilibrium(&e, &e.spending(), &cfg, None),
            Err(SolveError::NoConvergence { .. })
        ));
    }
}
