//! Structural extrapolation of arc elasticities away from the cutoff.
//!
//! For every observed district and every proposal on a grid, the fitted
//! model predicts the vote margin and the equilibrium the proposal would
//! produce. Binning the predicted arc elasticities by predicted margin traces
//! the average effect as a function of how contested the vote would be. A
//! two-step nested parametric bootstrap propagates uncertainty from the
//! structural and the turnout parameters.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dgp::{stream, substream, ReferendumRecord};
use crate::equilibrium::{treated_state, SolveError, SolverConfig};
use crate::ident::{economy_with_preferences, IdentError, StructuralEstimate};
use crate::mle::{draw_normal, draw_structural, types_with_parameters, MleConfig, MleError, TurnoutFit, TurnoutParams, TurnoutUncertainty};
use crate::model::{Anticipation, Economy, EquilibriumState, HouseholdType};
use crate::voting::{outcome_from_deltas, vote_deltas, VoteError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtrapError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("bin width must be positive, got {0}")]
    InvalidBinWidth(f64),
    #[error("need at least two outer and two inner draws")]
    InsufficientDraws,
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Vote(#[from] VoteError),
    #[error(transparent)]
    Ident(#[from] IdentError),
    #[error(transparent)]
    Mle(#[from] MleError),
}

/// Strictly increasing positive proposals ΔlogG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationGrid {
    pub points: Vec<f64>,
}

impl ExtrapolationGrid {
    pub fn new(points: Vec<f64>) -> Result<Self, ExtrapError> {
        if points.is_empty() {
            return Err(ExtrapError::InvalidGrid("grid is empty".into()));
        }
        if points.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(ExtrapError::InvalidGrid("grid points must be positive".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ExtrapError::InvalidGrid("grid must be strictly increasing".into()));
        }
        Ok(ExtrapolationGrid { points })
    }

    /// `n` evenly spaced points on [low, high].
    pub fn uniform(n: usize, low: f64, high: f64) -> Result<Self, ExtrapError> {
        if n < 2 {
            return ExtrapolationGrid::new(vec![low]);
        }
        ExtrapolationGrid::new((0..n).map(|i| low + (high - low) * i as f64 / (n - 1) as f64).collect())
    }
}

/// Outcomes whose arc elasticities can be averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Price,
    Housing,
    Tax,
    Spending,
    Population,
    TypePopulation(usize),
}

/// One district under one grid proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualRecord {
    pub replication: u64,
    pub referendum: u64,
    pub district: usize,
    pub dlog_g: f64,
    pub margin: f64,
    /// Utility changes and baseline masses by type, kept so margins can be
    /// recomputed under new turnout parameters without re-solving.
    pub delta_v: Vec<f64>,
    pub voter_mass: Vec<f64>,
    pub price: (f64, f64),
    pub housing: (f64, f64),
    pub tax: (f64, f64),
    pub spending: (f64, f64),
    pub population: (f64, f64),
    pub type_population: Vec<(f64, f64)>,
}

impl CounterfactualRecord {
    /// (log Z(ΔG) − log Z(0)) / ΔlogG.
    pub fn arc_elasticity(&self, outcome: Outcome) -> f64 {
        let (z0, z1) = match outcome {
            Outcome::Price => self.price,
            Outcome::Housing => self.housing,
            Outcome::Tax => self.tax,
            Outcome::Spending => self.spending,
            Outcome::Population => self.population,
            Outcome::TypePopulation(k) => self.type_population[k],
        };
        (z1 / z0).ln() / self.dlog_g
    }

    /// Margin under new turnout parameters.
    pub fn remargin(&self, types: &[HouseholdType]) -> Result<f64, ExtrapError> {
        Ok(outcome_from_deltas(types, &self.voter_mass, self.delta_v.clone(), self.dlog_g)?.margin)
    }
}

fn record(rep: u64, j: usize, d: f64, margin: f64, delta_v: Vec<f64>, s0: &EquilibriumState, s1: &EquilibriumState) -> CounterfactualRecord {
    CounterfactualRecord {
        replication: rep,
        referendum: 0,
        district: j,
        dlog_g: d,
        margin,
        delta_v,
        voter_mass: s0.type_population.iter().map(|row| row[j]).collect(),
        price: (s0.price[j], s1.price[j]),
        housing: (s0.housing[j], s1.housing[j]),
        tax: (s0.tax[j], s1.tax[j]),
        spending: (s0.spending[j], s1.spending[j]),
        population: (s0.population[j], s1.population[j]),
        type_population: s0.type_population.iter().zip(&s1.type_population).map(|(a, b)| (a[j], b[j])).collect(),
    }
}

/// Grid sweep for district j from a shared baseline. Grid points whose
/// solves fail are skipped and counted.
pub fn simulate_counterfactual_grid(
    economy: &Economy,
    baseline: &EquilibriumState,
    replication: u64,
    j: usize,
    grid: &ExtrapolationGrid,
    mode: Anticipation,
    solver: &SolverConfig,
) -> (Vec<CounterfactualRecord>, usize) {
    let results: Vec<Result<CounterfactualRecord, ExtrapError>> = grid
        .points
        .par_iter()
        .map(|&d| {
            let dv = vote_deltas(economy, baseline, j, d, mode, solver)?;
            let pops: Vec<f64> = baseline.type_population.iter().map(|row| row[j]).collect();
            let vote = outcome_from_deltas(&economy.types, &pops, dv.clone(), d)?;
            let s1 = treated_state(economy, baseline, j, d, solver)?;
            Ok(record(replication, j, d, vote.margin, dv, baseline, &s1))
        })
        .collect();
    let failed = results.iter().filter(|r| r.is_err()).count();
    (results.into_iter().filter_map(Result::ok).collect(), failed)
}

/// Histogram-style local averages by margin bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveCurve {
    pub width: f64,
    pub left_edges: Vec<f64>,
    /// `None` for empty bins.
    pub mean: Vec<Option<f64>>,
    pub count: Vec<usize>,
    pub variance: Vec<Option<f64>>,
}

impl AveCurve {
    /// Index of the bin containing margin s (left-closed bins on [−0.5, 0.5]).
    pub fn bin_of(width: f64, s: f64) -> usize {
        let n = n_bins(width);
        (((s + 0.5) / width).floor().max(0.0) as usize).min(n - 1)
    }
}

fn n_bins(width: f64) -> usize {
    (1.0 / width - 1e-9).ceil() as usize
}

/// Per-bin mean of arc elasticities over records with margin in [b, b+κ).
pub fn binned_ave(records: &[CounterfactualRecord], width: f64, outcome: Outcome) -> Result<AveCurve, ExtrapError> {
    binned_values(records.iter().map(|r| (r.margin, r.arc_elasticity(outcome))), width)
}

fn binned_values<I: Iterator<Item = (f64, f64)>>(values: I, width: f64) -> Result<AveCurve, ExtrapError> {
    if !(width > 0.0) || !width.is_finite() {
        return Err(ExtrapError::InvalidBinWidth(width));
    }
    let n = n_bins(width);
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (s, e) in values {
        if !(-0.5..=0.5).contains(&s) || !e.is_finite() {
            continue;
        }
        let b = AveCurve::bin_of(width, s);
        sum[b] += e;
        count[b] += 1;
    }
    Ok(AveCurve {
        width,
        left_edges: (0..n).map(|i| -0.5 + i as f64 * width).collect(),
        mean: sum.iter().zip(&count).map(|(s, &c)| if c > 0 { Some(s / c as f64) } else { None }).collect(),
        count,
        variance: vec![None; n],
    })
}

/// Mean margin at each grid point.
pub fn margin_by_grid(records: &[CounterfactualRecord], grid: &ExtrapolationGrid) -> Vec<Option<f64>> {
    grid.points
        .iter()
        .map(|&d| {
            let m: Vec<f64> = records.iter().filter(|r| r.dlog_g == d).map(|r| r.margin).collect();
            if m.is_empty() { None } else { Some(m.iter().sum::<f64>() / m.len() as f64) }
        })
        .collect()
}

/// Per-bin variance components of the nested bootstrap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedVariance {
    pub within: Vec<Option<f64>>,
    pub between: Vec<Option<f64>>,
    pub total: Vec<Option<f64>>,
    /// Outer replications with a non-empty bin.
    pub outer_count: Vec<usize>,
}

fn variance(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    Some(xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0))
}

/// Combine outer AVE curves and their inner redraws:
/// within = mean over m of the inner variance, between = variance of the
/// outer curves, total = within + (1 + 1/m̄)·between. Bins empty in some
/// replications use the replications where they are populated.
pub fn nested_bootstrap_variance(outer: &[(Vec<Option<f64>>, Vec<Vec<Option<f64>>>)]) -> Result<NestedVariance, ExtrapError> {
    if outer.len() < 2 || outer.iter().any(|(_, inner)| inner.len() < 2) {
        return Err(ExtrapError::InsufficientDraws);
    }
    let nb = outer[0].0.len();
    let mut within = vec![None; nb];
    let mut between = vec![None; nb];
    let mut total = vec![None; nb];
    let mut outer_count = vec![0; nb];
    for b in 0..nb {
        let outer_vals: Vec<f64> = outer.iter().filter_map(|(ave, _)| ave[b]).collect();
        outer_count[b] = outer_vals.len();
        let inner_vars: Vec<f64> = outer
            .iter()
            .filter_map(|(_, inner)| variance(&inner.iter().filter_map(|c| c[b]).collect::<Vec<f64>>()))
            .collect();
        let w = if inner_vars.is_empty() { None } else { Some(inner_vars.iter().sum::<f64>() / inner_vars.len() as f64) };
        let bt = variance(&outer_vals);
        within[b] = w;
        between[b] = bt;
        total[b] = match (w, bt) {
            (Some(w), Some(bt)) => Some(w + (1.0 + 1.0 / outer_vals.len() as f64) * bt),
            (Some(w), None) => Some(w),
            (None, Some(bt)) => Some((1.0 + 1.0 / outer_vals.len() as f64) * bt),
            (None, None) => None,
        };
    }
    Ok(NestedVariance { within, between, total, outer_count })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtrapConfig {
    pub grid_points: usize,
    pub grid_low: f64,
    pub grid_high: f64,
    pub bin_width: f64,
    pub outer_draws: usize,
    pub inner_draws: usize,
    pub anticipation: Anticipation,
}

impl Default for ExtrapConfig {
    fn default() -> Self {
        ExtrapConfig { grid_points: 20, grid_low: 0.01, grid_high: 0.40, bin_width: 0.005, outer_draws: 100, inner_draws: 20, anticipation: Anticipation::Myopic }
    }
}

impl ExtrapConfig {
    pub fn grid(&self) -> Result<ExtrapolationGrid, ExtrapError> {
        ExtrapolationGrid::uniform(self.grid_points, self.grid_low, self.grid_high)
    }

    pub fn validate(&self) -> Result<(), ExtrapError> {
        self.grid()?;
        if !(self.bin_width > 0.0) {
            return Err(ExtrapError::InvalidBinWidth(self.bin_width));
        }
        Ok(())
    }
}

/// Distinct (replication, district) units with their baselines.
pub fn baseline_units<'a>(records: &[&'a ReferendumRecord]) -> Vec<(u64, usize, &'a EquilibriumState)> {
    let mut units: BTreeMap<(u64, usize), &'a EquilibriumState> = BTreeMap::new();
    for r in records {
        units.entry((r.replication, r.district)).or_insert(&r.pre);
    }
    units.into_iter().map(|((rep, j), s)| (rep, j, s)).collect()
}

/// Types carrying structural parameters ζ and turnout parameters ϑ.
pub fn types_with_all(base: &[HouseholdType], zeta: &[f64], turnout: &TurnoutParams) -> Vec<HouseholdType> {
    types_with_parameters(base, zeta)
        .into_iter()
        .enumerate()
        .map(|(k, t)| HouseholdType { mu0: turnout.mu0[k], mu1: turnout.mu1[k], sigma0: turnout.sigma(k), ..t })
        .collect()
}

/// Counterfactual records for every observed referendum under ζ and ϑ,
/// |records| × |grid| in total. Referenda of a replication share one
/// baseline, so each replication's economy is calibrated once and each
/// district's grid is solved once and copied to its referenda.
pub fn extrapolate(
    records: &[&ReferendumRecord],
    base_types: &[HouseholdType],
    zeta: &[f64],
    turnout: &TurnoutParams,
    chi: f64,
    config: &ExtrapConfig,
    solver: &SolverConfig,
) -> Result<(Vec<CounterfactualRecord>, usize), ExtrapError> {
    let grid = config.grid()?;
    let types = types_with_all(base_types, zeta, turnout);
    let eta = zeta[2 * base_types.len()];
    let units = baseline_units(records);
    let mut economies: BTreeMap<u64, Economy> = BTreeMap::new();
    for (rep, _, s) in &units {
        if !economies.contains_key(rep) {
            economies.insert(*rep, economy_with_preferences(&types, s, eta, chi)?);
        }
    }
    let out: Vec<(Vec<CounterfactualRecord>, usize)> = units
        .par_iter()
        .map(|(rep, j, s)| simulate_counterfactual_grid(&economies[rep], s, *rep, *j, &grid, config.anticipation, solver))
        .collect();
    let failed = out.iter().map(|(_, f)| f).sum();
    let cache: BTreeMap<(u64, usize), &Vec<CounterfactualRecord>> = units.iter().zip(&out).map(|((rep, j, _), (r, _))| ((*rep, *j), r)).collect();
    let mut expanded = Vec::with_capacity(records.len() * grid.points.len());
    for r in records {
        for c in cache[&(r.replication, r.district)] {
            expanded.push(CounterfactualRecord { referendum: r.referendum, ..c.clone() });
        }
    }
    Ok((expanded, failed))
}

/// Result of the full extrapolation with nested bootstrap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationResult {
    pub records: Vec<CounterfactualRecord>,
    pub curve: AveCurve,
    pub margin_by_grid: Vec<Option<f64>>,
    pub variance: Option<NestedVariance>,
    pub failed_points: usize,
    pub rejected_draws: usize,
    /// Outer bootstrap draws left out because their turnout refit or
    /// extrapolation failed.
    pub failed_draws: usize,
}

/// Point extrapolation at (ζ̂, ϑ̂) and, if draws are requested, nested
/// bootstrap variances for `outcome`. Outer draws whose turnout refit fails
/// are left out and counted.
#[allow(clippy::too_many_arguments)]
pub fn extrapolate_with_uncertainty(
    records: &[&ReferendumRecord],
    base_types: &[HouseholdType],
    estimate: &StructuralEstimate,
    turnout: &TurnoutFit,
    chi: f64,
    outcome: Outcome,
    config: &ExtrapConfig,
    mle: &MleConfig,
    solver: &SolverConfig,
    seed: u64,
) -> Result<ExtrapolationResult, ExtrapError> {
    let zeta = estimate.parameters();
    let (recs, failed) = extrapolate(records, base_types, &zeta, &turnout.params, chi, config, solver)?;
    let mut curve = binned_ave(&recs, config.bin_width, outcome)?;
    let by_grid = margin_by_grid(&recs, &config.grid()?);
    let mut rejected_draws = 0;
    let mut failed_draws = 0;
    let variance = if config.outer_draws >= 2 && config.inner_draws >= 2 {
        let ctx = TurnoutUncertainty { records, base_types, chi, mode: config.anticipation, solver, config: mle };
        let outer: Vec<Result<((Vec<Option<f64>>, Vec<Vec<Option<f64>>>), usize), ExtrapError>> = (0..config.outer_draws as u64)
            .into_par_iter()
            .map(|m| {
                let mut rng = substream(seed, stream::BOOTSTRAP, 1_000_000 + m, 0);
                let (zeta_m, rejected) = draw_structural(estimate, &mut rng);
                let fit_m = ctx.fit_at(&zeta_m)?;
                let (recs_m, _) = extrapolate(records, base_types, &zeta_m, &fit_m.params, chi, config, solver)?;
                let ave_m = binned_ave(&recs_m, config.bin_width, outcome)?.mean;
                let nk = base_types.len();
                let mean = fit_m.params.to_vector();
                let mut inner = Vec::with_capacity(config.inner_draws);
                for _ in 0..config.inner_draws {
                    let draw = draw_normal(&mean, &fit_m.covariance, &mut rng);
                    let mut v: Vec<f64> = draw.iter().copied().collect();
                    for s in v[2 * nk..].iter_mut() {
                        *s = s.max(1e-6);
                    }
                    let types = types_with_all(base_types, &zeta_m, &TurnoutParams::from_vector(&v, nk));
                    let pairs: Vec<(f64, f64)> = recs_m
                        .iter()
                        .map(|r| Ok((r.remargin(&types)?, r.arc_elasticity(outcome))))
                        .collect::<Result<_, ExtrapError>>()?;
                    inner.push(binned_values(pairs.into_iter(), config.bin_width)?.mean);
                }
                Ok(((ave_m, inner), rejected))
            })
            .collect();
        let mut combined = Vec::with_capacity(outer.len());
        for o in outer {
            match o {
                Ok((c, r)) => {
                    rejected_draws += r;
                    combined.push(c);
                }
                Err(_) => failed_draws += 1,
            }
        }
        let v = nested_bootstrap_variance(&combined)?;
        curve.variance = v.total.clone();
        Some(v)
    } else {
        None
    };
    Ok(ExtrapolationResult { records: recs, curve, margin_by_grid: by_grid, variance, failed_points: failed, rejected_draws, failed_draws })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{draw_economy, DgpConfig};
    use crate::mle::SigmaMode;
    use proptest::prelude::*;

    fn rec(margin: f64, e: f64) -> CounterfactualRecord {
        CounterfactualRecord {
            replication: 0,
            referendum: 0,
            district: 0,
            dlog_g: 0.1,
            margin,
            delta_v: vec![],
            voter_mass: vec![],
            price: (1.0, (e * 0.1f64).exp()),
            housing: (1.0, 1.0),
            tax: (1.0, 1.0),
            spending: (1.0, 1.0),
            population: (1.0, 1.0),
            type_population: vec![],
        }
    }

    #[test]
    fn grid_validation() {
        assert!(ExtrapolationGrid::new(vec![0.1, 0.1]).is_err());
        assert!(ExtrapolationGrid::new(vec![-0.1, 0.1]).is_err());
        let g = ExtrapolationGrid::uniform(20, 0.01, 0.40).unwrap();
        assert_eq!(g.points.len(), 20);
        assert!((g.points[19] - 0.40).abs() < 1e-15);
    }

    #[test]
    fn one_bin_is_global_mean() {
        let rs: Vec<_> = [0.01, 0.011, 0.012].iter().zip([1.0, 2.0, 4.0]).map(|(&s, e)| rec(s, e)).collect();
        let c = binned_ave(&rs, 0.005, Outcome::Price).unwrap();
        let b = AveCurve::bin_of(0.005, 0.01);
        assert!((c.mean[b].unwrap() - 7.0 / 3.0).abs() < 1e-12);
        assert_eq!(c.count.iter().sum::<usize>(), 3);
    }

    #[test]
    fn left_closed_bins() {
        // 0.0 is the left edge of its bin.
        let b = AveCurve::bin_of(0.005, 0.0);
        assert!((-0.5 + b as f64 * 0.005).abs() < 1e-12);
        assert_eq!(AveCurve::bin_of(0.005, -1e-12), b - 1);
        assert_eq!(AveCurve::bin_of(0.005, 0.5), n_bins(0.005) - 1);
        assert!(binned_ave(&[], -0.1, Outcome::Price).is_err());
    }

    #[test]
    fn nested_variance_hand_example() {
        let outer = vec![(vec![Some(0.0)], vec![vec![Some(0.0)], vec![Some(0.0)]]), (vec![Some(2.0)], vec![vec![Some(2.0)], vec![Some(2.0)]])];
        let v = nested_bootstrap_variance(&outer).unwrap();
        assert_eq!(v.between[0], Some(2.0));
        assert_eq!(v.within[0], Some(0.0));
        assert_eq!(v.total[0], Some(3.0));
        let zero = vec![(vec![Some(1.0)], vec![vec![Some(1.0)], vec![Some(1.0)]]); 3];
        assert_eq!(nested_bootstrap_variance(&zero).unwrap().total[0], Some(0.0));
    }

    #[test]
    fn grid_records_share_baseline_and_satisfy_housing_identity() {
        let c = DgpConfig::default();
        let d = draw_economy(&c, 0).unwrap();
        let grid = ExtrapolationGrid::uniform(20, 0.01, 0.40).unwrap();
        let (rs, failed) = simulate_counterfactual_grid(&d.economy, &d.baseline, 0, 2, &grid, Anticipation::Myopic, &c.solver);
        assert_eq!(failed, 0);
        for r in &rs {
            assert_eq!(r.price.0, rs[0].price.0);
            assert_eq!(r.population.0, rs[0].population.0);
            let eh = r.arc_elasticity(Outcome::Housing);
            let ep = r.arc_elasticity(Outcome::Price);
            assert!((eh - c.eta * ep).abs() < 1e-10);
            assert!((r.arc_elasticity(Outcome::Spending) - 1.0).abs() < 1e-12);
        }
        // Margins fall with proposal size.
        assert!(rs.windows(2).all(|w| w[1].margin < w[0].margin));
        assert!(rs[0].margin > 0.0);
        // Recomputing margins under the same turnout parameters is exact.
        for r in &rs {
            assert!((r.remargin(&d.economy.types).unwrap() - r.margin).abs() < 1e-15);
        }
    }

    #[test]
    fn brute_force_binning() {
        let rs: Vec<_> = (0..500).map(|i| rec(((i * 37) % 1000) as f64 / 1000.0 - 0.4995, (i % 7) as f64)).collect();
        let c = binned_ave(&rs, 0.02, Outcome::Price).unwrap();
        for (b, edge) in c.left_edges.iter().enumerate() {
            let sel: Vec<f64> = rs.iter().filter(|r| r.margin >= *edge && r.margin < edge + 0.02).map(|r| r.arc_elasticity(Outcome::Price)).collect();
            match c.mean[b] {
                Some(m) => assert!((m - sel.iter().sum::<f64>() / sel.len() as f64).abs() < 1e-9),
                None => assert!(sel.is_empty()),
            }
        }
    }

    #[test]
    fn true_parameters_reproduce_drawn_economy() {
        let c = DgpConfig { n_referenda: 20, ..DgpConfig::default() };
        let rep = crate::dgp::simulate_replication(&c, 0).unwrap();
        let recs: Vec<&ReferendumRecord> = rep.records.iter().collect();
        let mut zeta: Vec<f64> = c.types.iter().map(|t| t.alpha).collect();
        zeta.extend(c.types.iter().map(|t| t.gamma));
        zeta.push(c.eta);
        let tp = TurnoutParams::from_types(&c.types, SigmaMode::Common);
        let cfg = ExtrapConfig { grid_points: 3, ..ExtrapConfig::default() };
        let (est, _) = extrapolate(&recs, &c.types, &zeta, &tp, c.chi, &cfg, &c.solver).unwrap();
        let grid = cfg.grid().unwrap();
        let (truth, _) = simulate_counterfactual_grid(&rep.drawn.economy, &rep.drawn.baseline, 0, est[0].district, &grid, Anticipation::Myopic, &c.solver);
        for (a, b) in est.iter().zip(&truth) {
            assert!((a.margin - b.margin).abs() < 1e-9);
            assert!((a.price.1 - b.price.1).abs() < 1e-9);
        }
        assert_eq!(est.len(), recs.len() * 3);
        assert_eq!(est[0].referendum, recs[0].referendum);
    }

    proptest! {
        #[test]
        fn binning_partitions(ms in proptest::collection::vec(-0.5f64..0.5, 1..200), w in 0.003f64..0.2) {
            let rs: Vec<_> = ms.iter().map(|&m| rec(m, 1.0)).collect();
            let c = binned_ave(&rs, w, Outcome::Price).unwrap();
            prop_assert_eq!(c.count.iter().sum::<usize>(), rs.len());
            prop_assert!((c.left_edges.len() as f64 * w) >= 1.0 - 1e-9);
        }
    }
}
