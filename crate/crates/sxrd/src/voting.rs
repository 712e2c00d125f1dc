//! Selective turnout and majority-rule approval.
//!
//! A household votes when the log of its anticipated utility gain exceeds a
//! normally distributed log participation cost, so turnout is a probit in
//! log|Δv|. The approval vote share margin is the running variable of the
//! regression discontinuity design.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::equilibrium::{treated_state, SolveError, SolverConfig};
use crate::model::{myopic_vote_delta, Anticipation, Economy, EquilibriumState, HouseholdType, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VoteError {
    #[error("expected turnout is zero")]
    ZeroTurnout,
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteOutcome {
    pub margin: f64,
    pub approved: bool,
    pub turnout: Vec<f64>,
    pub approval: Vec<bool>,
    pub delta_v: Vec<f64>,
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// T = Phi((log b - mu0 - mu1 dlogG) / sigma0), with T = 0 at b = 0 and
/// T = 1 for an infinite benefit.
pub fn turnout_probability_with(mu0: f64, mu1: f64, sigma0: f64, benefit: f64, dlog_g: f64) -> f64 {
    if benefit <= 0.0 {
        return 0.0;
    }
    if benefit.is_infinite() {
        return 1.0;
    }
    std_normal_cdf((benefit.ln() - mu0 - mu1 * dlog_g) / sigma0)
}

pub fn turnout_probability(t: &HouseholdType, benefit: f64, dlog_g: f64) -> f64 {
    turnout_probability_with(t.mu0, t.mu1, t.sigma0, benefit, dlog_g)
}

/// S = sum(N T W) / sum(N T) - 0.5.
pub fn vote_share_margin(populations: &[f64], turnout: &[f64], approval: &[bool]) -> Result<f64, VoteError> {
    let mut voters = 0.0;
    let mut yes = 0.0;
    for ((n, t), w) in populations.iter().zip(turnout).zip(approval) {
        voters += n * t;
        if *w {
            yes += n * t;
        }
    }
    if !(voters > 0.0) {
        return Err(VoteError::ZeroTurnout);
    }
    Ok(yes / voters - 0.5)
}

/// Utility change of every type in district j from the proposal. Under myopic
/// anticipation an unaffordable tax bill is an infinitely bad outcome.
pub fn vote_deltas(
    economy: &Economy,
    state: &EquilibriumState,
    j: usize,
    dlog_g: f64,
    mode: Anticipation,
    solver: &SolverConfig,
) -> Result<Vec<f64>, VoteError> {
    match mode {
        Anticipation::Myopic => economy
            .types
            .iter()
            .map(|t| match myopic_vote_delta(t, state, j, dlog_g) {
                Ok(d) => Ok(d),
                Err(ModelError::NonpositiveDisposableIncome(_)) => Ok(f64::NEG_INFINITY),
                Err(e) => Err(e.into()),
            })
            .collect(),
        Anticipation::FullEquilibrium => {
            let s1 = treated_state(economy, state, j, dlog_g, solver)?;
            Ok(full_equilibrium_deltas(economy, state, &s1, j))
        }
    }
}

fn full_equilibrium_deltas(economy: &Economy, s0: &EquilibriumState, s1: &EquilibriumState, j: usize) -> Vec<f64> {
    let dlog_g = (s1.spending[j] / s0.spending[j]).ln();
    let dlog_n = (s1.population[j] / s0.population[j]).ln();
    economy
        .types
        .iter()
        .map(|t| {
            let d0 = t.income - s0.gross_price(j);
            let d1 = t.income - s1.gross_price(j);
            if d1 <= 0.0 || d0 <= 0.0 {
                return f64::NEG_INFINITY;
            }
            t.alpha * dlog_g - t.alpha * economy.chi * dlog_n + t.gamma * (d1.ln() - d0.ln())
        })
        .collect()
}

/// Turnout, approvals and the vote margin given utility changes.
pub fn outcome_from_deltas(
    types: &[HouseholdType],
    populations: &[f64],
    delta_v: Vec<f64>,
    dlog_g: f64,
) -> Result<VoteOutcome, VoteError> {
    let turnout: Vec<f64> = types
        .iter()
        .zip(&delta_v)
        .map(|(t, dv)| turnout_probability(t, dv.abs(), dlog_g))
        .collect();
    let approval: Vec<bool> = delta_v.iter().map(|dv| *dv >= 0.0).collect();
    let margin = vote_share_margin(populations, &turnout, &approval)?;
    Ok(VoteOutcome { margin, approved: margin > 0.0, turnout, approval, delta_v })
}

pub fn referendum_outcome(
    economy: &Economy,
    state: &EquilibriumState,
    j: usize,
    dlog_g: f64,
    mode: Anticipation,
    solver: &SolverConfig,
) -> Result<VoteOutcome, VoteError> {
    let delta_v = vote_deltas(economy, state, j, dlog_g, mode, solver)?;
    let pops: Vec<f64> = state.type_population.iter().map(|row| row[j]).collect();
    outcome_from_deltas(&economy.types, &pops, delta_v, dlog_g)
}
