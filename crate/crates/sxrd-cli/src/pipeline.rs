//! The stages behind each subcommand. Every stage streams over Monte Carlo
//! replications so memory stays bounded by one replication's records.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use sxrd::dgp::{derive_seed, simulate_replication, stream, DgpConfig, ReferendumRecord, Replication};
use sxrd::extrap::{binned_ave, extrapolate_with_uncertainty, AveCurve, ExtrapolationResult, Outcome};
use sxrd::ident::estimate_structure;
use sxrd::mle::{DrawDiagnostics, MleConfig, SigmaMode, TurnoutParams, TurnoutUncertainty};
use sxrd::model::HouseholdType;
use sxrd::rdd::{panel_estimates, PanelEstimates, RddSample};

use crate::artifacts::{fmt, Artifacts};
use crate::config::RunConfig;
use crate::CliError;

fn replications(dgp: &DgpConfig) -> impl Iterator<Item = u64> {
    0..dgp.n_replications as u64
}

fn simulate(dgp: &DgpConfig, rep: u64) -> Result<Replication, CliError> {
    simulate_replication(dgp, rep).map_err(|e| CliError::stage("simulate", e))
}

fn log_change(pre: f64, post: f64) -> f64 {
    (post / pre).ln()
}

/// `simulate`: the narrow-proposal dataset as CSV records plus per-replication
/// metadata.
pub fn run_simulate(config: &RunConfig, out: &Artifacts) -> Result<(), CliError> {
    let dgp = &config.dgp;
    let nk = dgp.types.len();
    let mut header: Vec<String> = ["replication", "referendum", "district", "dlog_g", "margin", "approved", "dlog_price", "dlog_housing", "dlog_tax", "dlog_population", "treated_dlog_price"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..nk).map(|k| format!("voters_{k}")));
    header.extend((0..nk).map(|k| format!("households_{k}")));
    let mut rows = Vec::new();
    let mut meta = Vec::new();
    for rep in replications(dgp) {
        let r = simulate(dgp, rep)?;
        for x in &r.records {
            let j = x.district;
            let (pre, post) = (&x.pre, x.post());
            let mut row = vec![
                x.replication.to_string(),
                x.referendum.to_string(),
                j.to_string(),
                fmt(x.dlog_g),
                fmt(x.margin),
                x.approved.to_string(),
                fmt(log_change(pre.price[j], post.price[j])),
                fmt(log_change(pre.housing[j], post.housing[j])),
                fmt(log_change(pre.tax[j], post.tax[j])),
                fmt(log_change(pre.population[j], post.population[j])),
                fmt(log_change(pre.price[j], x.treated.price[j])),
            ];
            row.extend(x.voters.iter().map(|v| v.to_string()));
            row.extend(x.households.iter().map(|v| v.to_string()));
            rows.push(row);
        }
        meta.push(serde_json::json!({
            "replication": r.id,
            "records": r.records.len(),
            "dropped": r.dropped,
            "tie_points": r.drawn.tie_points,
            "baseline_spending": r.drawn.baseline.spending,
            "approval_share": r.records.iter().filter(|x| x.approved).count() as f64 / r.records.len().max(1) as f64,
        }));
    }
    out.csv("records.csv", &header, &rows)?;
    out.json("dataset.json", &serde_json::json!({ "replications": meta }))
}

/// Outcomes reported by `estimate-rdd`.
fn rdd_outcomes(nk: usize) -> Vec<(String, Box<dyn Fn(&ReferendumRecord) -> f64 + Sync>)> {
    let mut v: Vec<(String, Box<dyn Fn(&ReferendumRecord) -> f64 + Sync>)> = vec![
        ("price".into(), Box::new(|r: &ReferendumRecord| log_change(r.pre.price[r.district], r.post().price[r.district]))),
        ("housing".into(), Box::new(|r: &ReferendumRecord| log_change(r.pre.housing[r.district], r.post().housing[r.district]))),
        ("tax".into(), Box::new(|r: &ReferendumRecord| log_change(r.pre.tax[r.district], r.post().tax[r.district]))),
        ("population".into(), Box::new(|r: &ReferendumRecord| log_change(r.pre.population[r.district], r.post().population[r.district]))),
    ];
    for k in 0..nk {
        v.push((
            format!("population_{k}"),
            Box::new(move |r: &ReferendumRecord| log_change(r.pre.type_population[k][r.district], r.post().type_population[k][r.district])),
        ));
    }
    v
}

/// Cutoff sample for one outcome: running variable S, first stage D·ΔlogG.
pub fn cutoff_sample(records: &[ReferendumRecord], outcome: impl Fn(&ReferendumRecord) -> f64) -> Result<RddSample, CliError> {
    RddSample::new(
        records.iter().map(|r| r.margin).collect(),
        records.iter().map(outcome).collect(),
        records.iter().map(|r| if r.approved { r.dlog_g } else { 0.0 }).collect(),
        records.iter().map(|r| (r.replication << 32) + r.referendum).collect(),
    )
    .map_err(|e| CliError::stage("estimate-rdd", e))
}

#[derive(Debug, Clone, Serialize)]
struct PanelSummary {
    outcome: String,
    replications: usize,
    failures: usize,
    mean_ate: Option<f64>,
    mean_wave: Option<f64>,
    mean_first_stage: Option<f64>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() { None } else { Some(xs.iter().sum::<f64>() / xs.len() as f64) }
}

fn sd(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    if xs.len() < 2 {
        return None;
    }
    Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt())
}

/// `estimate-rdd`: reduced-form effects of approval and their rescaling by
/// the first stage, per replication and outcome.
pub fn run_estimate_rdd(config: &RunConfig, out: &Artifacts) -> Result<(), CliError> {
    let dgp = &config.dgp;
    let outcomes = rdd_outcomes(dgp.types.len());
    let header: Vec<String> = ["replication", "outcome", "ate", "ate_bias_corrected", "ate_se", "wave", "wave_bias_corrected", "wave_se", "first_stage", "bandwidth", "n_left", "n_right"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    let mut collected: BTreeMap<usize, (Vec<PanelEstimates>, usize)> = BTreeMap::new();
    for rep in replications(dgp) {
        let r = simulate(dgp, rep)?;
        let fits: Vec<Result<PanelEstimates, String>> = outcomes
            .par_iter()
            .map(|(_, f)| {
                let s = cutoff_sample(&r.records, f).map_err(|e| e.to_string())?;
                panel_estimates(&s, &config.ident.rdd).map_err(|e| e.to_string())
            })
            .collect();
        for (o, fit) in fits.into_iter().enumerate() {
            let entry = collected.entry(o).or_default();
            match fit {
                Ok(p) => {
                    rows.push(vec![
                        rep.to_string(),
                        outcomes[o].0.clone(),
                        fmt(p.ate.estimate),
                        fmt(p.ate.bias_corrected),
                        fmt(p.ate.se),
                        fmt(p.wave.estimate),
                        fmt(p.wave.bias_corrected),
                        fmt(p.wave.se),
                        fmt(p.first_stage),
                        fmt(p.ate.bandwidth),
                        p.ate.n_left.to_string(),
                        p.ate.n_right.to_string(),
                    ]);
                    entry.0.push(p);
                }
                Err(_) => entry.1 += 1,
            }
        }
    }
    let summary: Vec<PanelSummary> = collected
        .into_iter()
        .map(|(o, (fits, failures))| PanelSummary {
            outcome: outcomes[o].0.clone(),
            replications: fits.len(),
            failures,
            mean_ate: mean(&fits.iter().map(|p| p.ate.estimate).collect::<Vec<_>>()),
            mean_wave: mean(&fits.iter().map(|p| p.wave.estimate).collect::<Vec<_>>()),
            mean_first_stage: mean(&fits.iter().map(|p| p.first_stage).collect::<Vec<_>>()),
        })
        .collect();
    out.csv("rdd_estimates.csv", &header, &rows)?;
    out.json("rdd_summary.json", &serde_json::json!({ "outcomes": summary }))
}

/// Structural parameter labels and true values (a^k…, g^k…, η).
pub fn structural_truth(types: &[HouseholdType], eta: f64) -> Vec<(String, f64)> {
    let mut v: Vec<(String, f64)> = types.iter().enumerate().map(|(k, t)| (format!("a_{}", k + 1), t.alpha / t.theta)).collect();
    v.extend(types.iter().enumerate().map(|(k, t)| (format!("g_{}", k + 1), t.gamma / t.theta)));
    v.push(("eta".into(), eta));
    v
}

/// Turnout parameter labels and true values (μ0…, μ1…, σ0…).
pub fn turnout_truth(types: &[HouseholdType], mode: SigmaMode) -> Vec<(String, f64)> {
    let p = TurnoutParams::from_types(types, mode);
    let mut v: Vec<(String, f64)> = p.mu0.iter().enumerate().map(|(k, x)| (format!("mu0_{}", k + 1), *x)).collect();
    v.extend(p.mu1.iter().enumerate().map(|(k, x)| (format!("mu1_{}", k + 1), *x)));
    if p.sigma0.len() == 1 {
        v.push(("sigma0".into(), p.sigma0[0]));
    } else {
        v.extend(p.sigma0.iter().enumerate().map(|(k, x)| (format!("sigma0_{}", k + 1), *x)));
    }
    v
}

/// Truth-versus-estimate summary of one parameter across replications.
#[derive(Debug, Clone, Serialize)]
pub struct ParameterSummary {
    pub parameter: String,
    pub truth: f64,
    pub mean: Option<f64>,
    pub bias: Option<f64>,
    pub sd: Option<f64>,
    pub mean_se: Option<f64>,
    pub replications: usize,
}

/// Per-replication (estimate, se) vectors aligned with `truth`.
fn summarize(truth: &[(String, f64)], reps: &[(Vec<f64>, Vec<f64>)]) -> Vec<ParameterSummary> {
    truth
        .iter()
        .enumerate()
        .map(|(i, (name, t))| {
            let est: Vec<f64> = reps.iter().map(|(e, _)| e[i]).collect();
            let se: Vec<f64> = reps.iter().map(|(_, s)| s[i]).collect();
            let m = mean(&est);
            ParameterSummary { parameter: name.clone(), truth: *t, mean: m, bias: m.map(|m| m - t), sd: sd(&est), mean_se: mean(&se), replications: est.len() }
        })
        .collect()
}

fn summary_rows(rows: &[ParameterSummary]) -> Vec<Vec<String>> {
    let opt = |x: Option<f64>| x.map(fmt).unwrap_or_default();
    rows.iter()
        .map(|r| vec![r.parameter.clone(), fmt(r.truth), opt(r.mean), opt(r.bias), opt(r.sd), opt(r.mean_se), r.replications.to_string()])
        .collect()
}

const SUMMARY_HEADER: [&str; 7] = ["parameter", "truth", "mean", "bias", "sd", "mean_se", "replications"];

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// `identify`: structural preferences and η per replication, with a
/// truth-versus-estimate table.
pub fn run_identify(config: &RunConfig, out: &Artifacts) -> Result<Vec<ParameterSummary>, CliError> {
    let dgp = &config.dgp;
    let truth = structural_truth(&dgp.types, dgp.eta);
    let mut per_rep = Vec::new();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for rep in replications(dgp) {
        let r = simulate(dgp, rep)?;
        let recs: Vec<&ReferendumRecord> = r.records.iter().collect();
        match estimate_structure(&recs, &dgp.types, dgp.n_jurisdictions, &config.ident) {
            Ok(est) => {
                let p = est.parameters();
                let cov = est.covariance();
                let se: Vec<f64> = (0..p.len()).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
                for (i, (name, t)) in truth.iter().enumerate() {
                    rows.push(vec![rep.to_string(), name.clone(), fmt(*t), fmt(p[i]), fmt(se[i])]);
                }
                per_rep.push((p, se));
            }
            Err(e) => failures.push(serde_json::json!({ "replication": rep, "error": e.to_string() })),
        }
    }
    if per_rep.is_empty() {
        return Err(CliError::Runtime { stage: "identify".into(), message: "every replication failed".into() });
    }
    let summary = summarize(&truth, &per_rep);
    out.csv("identify_replications.csv", &strings(&["replication", "parameter", "truth", "estimate", "se"]), &rows)?;
    out.csv("table2.csv", &strings(&SUMMARY_HEADER), &summary_rows(&summary))?;
    out.json("table2.json", &serde_json::json!({ "parameters": summary, "failures": failures }))?;
    Ok(summary)
}

fn turnout_context<'a>(config: &'a RunConfig, recs: &'a [&'a ReferendumRecord], mle: &'a MleConfig) -> TurnoutUncertainty<'a> {
    let dgp = &config.turnout_dgp;
    TurnoutUncertainty { records: recs, base_types: &dgp.types, chi: dgp.chi, mode: dgp.anticipation, solver: &dgp.solver, config: mle }
}

/// `fit-turnout`: turnout parameters given first-stage structural estimates,
/// with Rubin-combined standard errors.
pub fn run_fit_turnout(config: &RunConfig, out: &Artifacts) -> Result<Vec<ParameterSummary>, CliError> {
    let dgp = &config.turnout_dgp;
    let truth = turnout_truth(&dgp.types, config.mle.sigma_mode);
    let seed = derive_seed(config.seed_or_zero(), stream::BOOTSTRAP);
    let mut draws = Vec::new();
    let mut per_rep = Vec::new();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for rep in replications(dgp) {
        let r = simulate(dgp, rep)?;
        let recs: Vec<&ReferendumRecord> = r.records.iter().collect();
        let result = estimate_structure(&recs, &dgp.types, dgp.n_jurisdictions, &config.ident)
            .map_err(|e| e.to_string())
            .and_then(|est| {
                let ctx = turnout_context(config, &recs, &config.mle);
                if config.turnout_draws >= 2 {
                    let (point, rubin, diag) = ctx.run(&est, config.turnout_draws, derive_seed(seed, rep)).map_err(|e| e.to_string())?;
                    Ok((point.params.to_vector(), rubin.total, diag))
                } else {
                    let fit = ctx.fit_at(&est.parameters()).map_err(|e| e.to_string())?;
                    Ok((fit.params.to_vector(), fit.covariance, DrawDiagnostics::default()))
                }
            });
        match result {
            Ok((p, cov, diag)) => {
                draws.push(serde_json::json!({ "replication": rep, "rejected": diag.rejected, "failed": diag.failed }));
                let p: Vec<f64> = p.iter().copied().collect();
                let se: Vec<f64> = (0..p.len()).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
                for (i, (name, t)) in truth.iter().enumerate() {
                    rows.push(vec![rep.to_string(), name.clone(), fmt(*t), fmt(p[i]), fmt(se[i])]);
                }
                per_rep.push((p, se));
            }
            Err(e) => failures.push(serde_json::json!({ "replication": rep, "error": e })),
        }
    }
    if per_rep.is_empty() {
        return Err(CliError::Runtime { stage: "fit-turnout".into(), message: "every replication failed".into() });
    }
    let summary = summarize(&truth, &per_rep);
    out.csv("turnout_replications.csv", &strings(&["replication", "parameter", "truth", "estimate", "se"]), &rows)?;
    out.csv("table3.csv", &strings(&SUMMARY_HEADER), &summary_rows(&summary))?;
    out.json("table3.json", &serde_json::json!({ "parameters": summary, "failures": failures, "structural_draws": draws }))?;
    Ok(summary)
}

/// Bin-wise average of curves across replications, skipping empty bins.
#[derive(Debug, Clone, Serialize)]
pub struct AveragedCurve {
    pub left_edges: Vec<f64>,
    pub mean: Vec<Option<f64>>,
    /// Average over replications of the bootstrap standard error.
    pub se: Vec<Option<f64>>,
    /// Replications contributing to each bin.
    pub replications: Vec<usize>,
    pub records: Vec<usize>,
}

fn average_curves(curves: &[AveCurve]) -> AveragedCurve {
    let nb = curves[0].mean.len();
    let mut out = AveragedCurve { left_edges: curves[0].left_edges.clone(), mean: vec![None; nb], se: vec![None; nb], replications: vec![0; nb], records: vec![0; nb] };
    for b in 0..nb {
        let means: Vec<f64> = curves.iter().filter_map(|c| c.mean[b]).collect();
        let ses: Vec<f64> = curves.iter().filter_map(|c| c.variance[b].map(|v| v.max(0.0).sqrt())).collect();
        out.mean[b] = mean(&means);
        out.se[b] = mean(&ses);
        out.replications[b] = means.len();
        out.records[b] = curves.iter().map(|c| c.count[b]).sum();
    }
    out
}

/// Figure-style output of the extrapolation stage.
#[derive(Debug, Clone, Serialize)]
pub struct ExtrapolationSummary {
    pub grid: Vec<f64>,
    /// Mean simulated margin at each grid point, averaged over replications.
    pub margin_by_grid: Vec<Option<f64>>,
    pub outcome: Outcome,
    pub ave: AveragedCurve,
    pub first_type_population: AveragedCurve,
    pub last_type_population: AveragedCurve,
    pub failed_points: usize,
    pub failed_draws: usize,
    pub failures: Vec<serde_json::Value>,
}

/// `extrapolate`: per replication, estimate ζ and ϑ, sweep the grid for
/// every observed referendum, bin arc elasticities by predicted margin and
/// bootstrap their variance; curves are averaged across replications.
pub fn run_extrapolate(config: &RunConfig, out: &Artifacts) -> Result<ExtrapolationSummary, CliError> {
    let dgp = &config.turnout_dgp;
    let nk = dgp.types.len();
    let grid = config.extrap.grid().map_err(|e| CliError::stage("extrapolate", e))?;
    let seed = derive_seed(config.seed_or_zero(), stream::BOOTSTRAP);
    let mut results: Vec<ExtrapolationResult> = Vec::new();
    let mut first = Vec::new();
    let mut last = Vec::new();
    let mut failures = Vec::new();
    for rep in replications(dgp) {
        let r = simulate(dgp, rep)?;
        let recs: Vec<&ReferendumRecord> = r.records.iter().collect();
        let result = estimate_structure(&recs, &dgp.types, dgp.n_jurisdictions, &config.ident).map_err(|e| e.to_string()).and_then(|est| {
            let fit = turnout_context(config, &recs, &config.mle).fit_at(&est.parameters()).map_err(|e| e.to_string())?;
            extrapolate_with_uncertainty(
                &recs,
                &dgp.types,
                &est,
                &fit,
                dgp.chi,
                config.extrap_outcome,
                &config.extrap,
                &config.mle,
                &dgp.solver,
                derive_seed(seed, 1_000 + rep),
            )
            .map_err(|e| e.to_string())
        });
        match result {
            Ok(mut res) => {
                let width = config.extrap.bin_width;
                let curve = |o| binned_ave(&res.records, width, o).map_err(|e| CliError::stage("extrapolate", e));
                first.push(curve(Outcome::TypePopulation(0))?);
                last.push(curve(Outcome::TypePopulation(nk - 1))?);
                // Keep only what the summary needs; the records are large.
                res.records = Vec::new();
                results.push(res);
            }
            Err(e) => failures.push(serde_json::json!({ "replication": rep, "error": e })),
        }
    }
    if results.is_empty() {
        return Err(CliError::Runtime { stage: "extrapolate".into(), message: "every replication failed".into() });
    }
    let margin_by_grid: Vec<Option<f64>> = (0..grid.points.len()).map(|g| mean(&results.iter().filter_map(|r| r.margin_by_grid[g]).collect::<Vec<_>>())).collect();
    let summary = ExtrapolationSummary {
        grid: grid.points.clone(),
        margin_by_grid,
        outcome: config.extrap_outcome,
        ave: average_curves(&results.iter().map(|r| r.curve.clone()).collect::<Vec<_>>()),
        first_type_population: average_curves(&first),
        last_type_population: average_curves(&last),
        failed_points: results.iter().map(|r| r.failed_points).sum(),
        failed_draws: results.iter().map(|r| r.failed_draws).sum(),
        failures,
    };
    let opt = |x: Option<f64>| x.map(fmt).unwrap_or_default();
    let ave_rows: Vec<Vec<String>> = (0..summary.ave.mean.len())
        .filter(|&b| summary.ave.replications[b] > 0)
        .map(|b| vec![fmt(summary.ave.left_edges[b]), opt(summary.ave.mean[b]), opt(summary.ave.se[b]), summary.ave.replications[b].to_string(), summary.ave.records[b].to_string()])
        .collect();
    out.csv("ave_curve.csv", &strings(&["bin_left", "mean", "se", "replications", "records"]), &ave_rows)?;
    let grid_rows: Vec<Vec<String>> = summary.grid.iter().zip(&summary.margin_by_grid).map(|(g, m)| vec![fmt(*g), opt(*m)]).collect();
    out.csv("margin_by_grid.csv", &strings(&["dlog_g", "mean_margin"]), &grid_rows)?;
    out.json("plot_data.json", &summary)?;
    Ok(summary)
}
