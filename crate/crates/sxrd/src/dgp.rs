//! Monte Carlo data generating process.
//!
//! Each replication draws amenities and construction productivity shocks,
//! sets baseline spending so that every district is exactly split on a
//! proposal of a district-specific size, and then holds randomized
//! referenda. Every referendum starts from the replication's baseline
//! equilibrium and only one district changes policy, so treated and control
//! observations never interfere with each other.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equilibrium::{solve_equilibrium, treated_state, SolveError, SolverConfig};
use crate::model::{Anticipation, Economy, EquilibriumState, HouseholdType, Jurisdiction};
use crate::voting::{referendum_outcome, VoteError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DgpError {
    #[error("invalid DGP config: {0}")]
    InvalidConfig(String),
    #[error("calibration of baseline spending failed in district {district}: {reason}")]
    Calibration { district: usize, reason: String },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Vote(#[from] VoteError),
}

/// Type table of the simulation study.
pub fn default_types() -> Vec<HouseholdType> {
    let alpha = [0.55, 0.20, 0.15, 0.10];
    let gamma = [0.35, 0.30, 0.25, 0.20];
    let income = [0.45, 0.55, 0.55, 0.45];
    let mu0 = [-3.0, -5.0, -7.0, -3.0];
    let mu1 = [-1.0, -1.0, 0.0, 0.0];
    (0..4)
        .map(|k| HouseholdType {
            alpha: alpha[k],
            gamma: gamma[k],
            beta: 1.0 - alpha[k] - gamma[k],
            income: income[k],
            sigma: 0.25,
            theta: 1.0,
            mu0: mu0[k],
            mu1: mu1[k],
            sigma0: 3.0,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub n_jurisdictions: usize,
    pub types: Vec<HouseholdType>,
    pub amenity_mean: f64,
    pub amenity_sd: f64,
    pub productivity_mean: f64,
    pub productivity_sd: f64,
    pub eta: f64,
    pub lambda: f64,
    pub chi: f64,
    /// Bounds of the uniform proposal distribution for ΔlogG.
    pub dlog_g_low: f64,
    pub dlog_g_high: f64,
    /// Bounds of the uniform distribution of the proposal size at which a
    /// district's baseline spending makes its electorate exactly split.
    pub tie_low: f64,
    pub tie_high: f64,
    pub n_referenda: usize,
    pub n_replications: usize,
    pub master_seed: u64,
    /// Households per unit of population mass for binomial turnout counts.
    pub population_scale: f64,
    pub anticipation: Anticipation,
    pub solver: SolverConfig,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            n_jurisdictions: 10,
            types: default_types(),
            amenity_mean: 0.0,
            amenity_sd: 0.1,
            productivity_mean: -1.2,
            productivity_sd: 0.05,
            eta: 0.6,
            lambda: 0.0,
            chi: 1.0,
            dlog_g_low: 0.095,
            dlog_g_high: 0.105,
            tie_low: 0.09,
            tie_high: 0.11,
            n_referenda: 2000,
            n_replications: 100,
            master_seed: 20_240_601,
            population_scale: 10_000.0,
            anticipation: Anticipation::Myopic,
            solver: SolverConfig::default(),
        }
    }
}

impl DgpConfig {
    /// Settings for turnout estimation runs: proposals spread over [0.01, 0.40].
    pub fn turnout_run() -> Self {
        DgpConfig { dlog_g_low: 0.01, dlog_g_high: 0.40, ..DgpConfig::default() }
    }

    pub fn validate(&self) -> Result<(), DgpError> {
        let bad = |m: &str| Err(DgpError::InvalidConfig(m.to_string()));
        if self.n_jurisdictions == 0 || self.n_referenda == 0 || self.n_replications == 0 {
            return bad("counts must be positive");
        }
        if self.types.is_empty() {
            return bad("type table is empty");
        }
        if !(self.dlog_g_low > 0.0 && self.dlog_g_low < self.dlog_g_high) {
            return bad("ΔlogG bounds must satisfy 0 < low < high");
        }
        if !(self.tie_low > 0.0 && self.tie_low <= self.tie_high) {
            return bad("tie bounds must satisfy 0 < low <= high");
        }
        if !(self.amenity_sd >= 0.0 && self.productivity_sd >= 0.0) {
            return bad("standard deviations must be non-negative");
        }
        if !(self.population_scale > 0.0) {
            return bad("population_scale must be positive");
        }
        for t in &self.types {
            t.validate().map_err(|e| DgpError::InvalidConfig(e.to_string()))?;
        }
        self.solver.validate()?;
        Ok(())
    }
}

/// Named substreams of the master seed.
pub mod stream {
    pub const ECONOMY: u64 = 1;
    pub const REFERENDUM: u64 = 2;
    pub const BOOTSTRAP: u64 = 3;
    /// Seed of the wide-proposal dataset used for turnout estimation.
    pub const TURNOUT_DATA: u64 = 4;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A child seed for a named stream, for components that take a plain seed.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    splitmix(splitmix(master) ^ tag)
}

/// Deterministic RNG for (master seed, stream tag, a, b).
pub fn substream(master: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut h = splitmix(master);
    for x in [tag, a, b] {
        h = splitmix(h ^ x);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// A drawn economy with calibrated baseline spending and its equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawnEconomy {
    pub economy: Economy,
    pub baseline: EquilibriumState,
    pub tie_points: Vec<f64>,
}

/// Economy with amenities and productivities drawn for replication `rep`;
/// spending is a placeholder until calibrated.
pub fn draw_primitives(config: &DgpConfig, rep: u64) -> (Economy, Vec<f64>) {
    let mut rng = substream(config.master_seed, stream::ECONOMY, rep, 0);
    let amen = Normal::new(config.amenity_mean, config.amenity_sd).expect("validated sd");
    let prod = Normal::new(config.productivity_mean, config.productivity_sd).expect("validated sd");
    let jurisdictions = (0..config.n_jurisdictions)
        .map(|_| Jurisdiction { amenity: amen.sample(&mut rng), productivity: prod.sample(&mut rng), spending: 0.01 })
        .collect();
    let ties = (0..config.n_jurisdictions)
        .map(|_| if config.tie_high > config.tie_low { rng.random_range(config.tie_low..config.tie_high) } else { config.tie_low })
        .collect();
    let economy = Economy { jurisdictions, types: config.types.clone(), eta: config.eta, lambda: config.lambda, chi: config.chi, type_amenity: None };
    (economy, ties)
}

pub fn draw_economy(config: &DgpConfig, rep: u64) -> Result<DrawnEconomy, DgpError> {
    config.validate()?;
    let (economy, ties) = draw_primitives(config, rep);
    let (g, baseline) = calibrate_spending(&economy, &ties, config.anticipation, &config.solver)?;
    Ok(DrawnEconomy { economy: economy.with_spending(&g), baseline, tie_points: ties })
}

/// Root of a decreasing function on a bracket by the Illinois variant of
/// false position.
fn illinois<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64, tol: f64) -> f64 {
    let mut side = 0;
    for _ in 0..200 {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = f(c);
        if fc == 0.0 || (b - a).abs() < tol {
            return c;
        }
        if fc * fb > 0.0 {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
        if (b - a).abs() < tol {
            return 0.5 * (a + b);
        }
    }
    0.5 * (a + b)
}

/// Spending vector at which every district's vote margin on a proposal of
/// size `ties[j]` is exactly zero, solved jointly with the equilibrium by
/// cycling over districts.
pub fn calibrate_spending(
    economy: &Economy,
    ties: &[f64],
    mode: Anticipation,
    solver: &SolverConfig,
) -> Result<(Vec<f64>, EquilibriumState), DgpError> {
    let nj = economy.n_jurisdictions();
    let mut log_g: Vec<f64> = economy.spending().iter().map(|g| g.ln()).collect();
    let mut state = solve_equilibrium(economy, &economy.spending(), solver, None)?;
    for _sweep in 0..100 {
        let mut change: f64 = 0.0;
        for j in 0..nj {
            let margin_at = |lg: f64, warm: &EquilibriumState| -> f64 {
                let mut g: Vec<f64> = log_g.iter().map(|x| x.exp()).collect();
                g[j] = lg.exp();
                match solve_equilibrium(economy, &g, solver, Some(warm)) {
                    Ok(s) => match referendum_outcome(economy, &s, j, ties[j], mode, solver) {
                        Ok(o) => o.margin,
                        Err(_) => -0.5,
                    },
                    // An emptied or unsolvable district is a decisive rejection.
                    Err(_) => -0.5,
                }
            };
            let x0 = log_g[j];
            let (mut lo, mut hi) = (x0 - 0.25, x0 + 0.25);
            let mut flo = margin_at(lo, &state);
            let mut fhi = margin_at(hi, &state);
            let mut expand = 0;
            while !(flo > 0.0 && fhi < 0.0) {
                if expand > 40 {
                    return Err(DgpError::Calibration { district: j, reason: "could not bracket a tie".into() });
                }
                if flo <= 0.0 {
                    lo -= 0.5;
                    flo = margin_at(lo, &state);
                }
                if fhi >= 0.0 {
                    hi += 0.5;
                    fhi = margin_at(hi, &state);
                }
                expand += 1;
            }
            let warm = state.clone();
            let root = illinois(|x| margin_at(x, &warm), lo, hi, flo, fhi, 1e-13);
            change = change.max((root - log_g[j]).abs());
            log_g[j] = root;
            let g: Vec<f64> = log_g.iter().map(|x| x.exp()).collect();
            state = solve_equilibrium(economy, &g, solver, Some(&state))?;
        }
        if change < 1e-11 {
            let g: Vec<f64> = log_g.iter().map(|x| x.exp()).collect();
            return Ok((g, state));
        }
    }
    Err(DgpError::Calibration { district: 0, reason: "sweeps did not converge".into() })
}

/// One simulated ballot with both potential equilibria.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferendumRecord {
    pub replication: u64,
    pub referendum: u64,
    pub district: usize,
    pub dlog_g: f64,
    pub margin: f64,
    pub approved: bool,
    /// Expected turnout and utility change by type in the voting district.
    pub turnout: Vec<f64>,
    pub delta_v: Vec<f64>,
    /// Observed voters and households by type in the voting district.
    pub voters: Vec<u64>,
    pub households: Vec<u64>,
    /// Equilibrium before the vote (the replication's baseline).
    pub pre: EquilibriumState,
    /// Equilibrium with the proposal implemented, solved even if rejected.
    pub treated: EquilibriumState,
}

impl ReferendumRecord {
    /// State after the vote: the treated equilibrium if approved.
    pub fn post(&self) -> &EquilibriumState {
        if self.approved { &self.treated } else { &self.pre }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub id: u64,
    pub drawn: DrawnEconomy,
    pub records: Vec<ReferendumRecord>,
    /// Referenda dropped because a solve failed.
    pub dropped: usize,
}

fn simulate_referendum(
    config: &DgpConfig,
    drawn: &DrawnEconomy,
    rep: u64,
    id: u64,
) -> Result<ReferendumRecord, DgpError> {
    let mut rng = substream(config.master_seed, stream::REFERENDUM, rep, id);
    let j = rng.random_range(0..config.n_jurisdictions);
    let dlog_g = rng.random_range(config.dlog_g_low..config.dlog_g_high);
    let economy = &drawn.economy;
    let pre = &drawn.baseline;
    let vote = referendum_outcome(economy, pre, j, dlog_g, config.anticipation, &config.solver)?;
    let treated = treated_state(economy, pre, j, dlog_g, &config.solver)?;
    let mut voters = Vec::with_capacity(economy.n_types());
    let mut households = Vec::with_capacity(economy.n_types());
    for (k, t) in vote.turnout.iter().enumerate() {
        let n = (pre.type_population[k][j] * config.population_scale).round() as u64;
        let drawn_voters = if n == 0 { 0 } else { Binomial::new(n, t.clamp(0.0, 1.0)).expect("p in [0,1]").sample(&mut rng) };
        voters.push(drawn_voters);
        households.push(n);
    }
    Ok(ReferendumRecord {
        replication: rep,
        referendum: id,
        district: j,
        dlog_g,
        margin: vote.margin,
        approved: vote.approved,
        turnout: vote.turnout,
        delta_v: vote.delta_v,
        voters,
        households,
        pre: pre.clone(),
        treated,
    })
}

/// Referenda for one replication; failed referenda are dropped and counted.
pub fn simulate_replication(config: &DgpConfig, rep: u64) -> Result<Replication, DgpError> {
    let drawn = draw_economy(config, rep)?;
    let results: Vec<Result<ReferendumRecord, DgpError>> = (0..config.n_referenda as u64)
        .into_par_iter()
        .map(|id| simulate_referendum(config, &drawn, rep, id))
        .collect();
    let dropped = results.iter().filter(|r| r.is_err()).count();
    let records = results.into_iter().filter_map(Result::ok).collect();
    Ok(Replication { id: rep, drawn, records, dropped })
}

/// All replications for a config, with `seed` overriding the master seed.
pub fn simulate_dataset(config: &DgpConfig, seed: u64) -> Result<Vec<Replication>, DgpError> {
    let cfg = DgpConfig { master_seed: seed, ..config.clone() };
    cfg.validate()?;
    (0..cfg.n_replications as u64).map(|rep| simulate_replication(&cfg, rep)).collect()
}
