//! Closed-form model primitives.
//!
//! Households of finitely many types sort across jurisdictions (and an
//! outside option) according to logit choice probabilities built from a
//! log-additive indirect utility. Housing is supplied with constant
//! elasticity, each household consumes one unit, and every jurisdiction
//! runs a balanced budget financed by a property tax.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("disposable income y - P(1+tau) = {0} is not positive")]
    NonpositiveDisposableIncome(f64),
    #[error("spending G = {0} is not positive")]
    NonpositiveSpending(f64),
    #[error("population N = {0} is not positive")]
    NonpositivePopulation(f64),
    #[error("input {name} = {value} is not positive")]
    NonpositiveInput { name: &'static str, value: f64 },
    #[error("preferred tax rate is unbounded (gamma*rho <= alpha)")]
    Unbounded,
    #[error("singular GPF system (denominator {0})")]
    SingularSystem(f64),
    #[error("invalid economy: {0}")]
    InvalidEconomy(String),
}

/// Preference, income and turnout primitives of one household type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdType {
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
    pub income: f64,
    pub sigma: f64,
    pub theta: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub sigma0: f64,
}

impl HouseholdType {
    pub fn validate(&self) -> Result<(), ModelError> {
        let checks = [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("sigma", self.sigma),
            ("theta", self.theta),
            ("sigma0", self.sigma0),
        ];
        for (name, value) in checks {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ModelError::InvalidEconomy(format!("type {name} = {value} must be positive")));
            }
        }
        if !self.income.is_finite() || !self.mu0.is_finite() || !self.mu1.is_finite() {
            return Err(ModelError::InvalidEconomy("non-finite income or turnout parameter".into()));
        }
        Ok(())
    }

    /// Expenditure-share ratio rho = P(1+tau) / (y - P(1+tau)).
    pub fn rho(&self, gross_price: f64) -> Result<f64, ModelError> {
        let disposable = self.income - gross_price;
        if !(disposable > 0.0) {
            return Err(ModelError::NonpositiveDisposableIncome(disposable));
        }
        Ok(gross_price / disposable)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Jurisdiction {
    pub amenity: f64,
    pub productivity: f64,
    pub spending: f64,
}

/// Immutable model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Economy {
    pub jurisdictions: Vec<Jurisdiction>,
    pub types: Vec<HouseholdType>,
    pub eta: f64,
    pub lambda: f64,
    pub chi: f64,
    /// Type-specific amenity intercepts `[k][j]` overriding the common
    /// jurisdiction amenity, as produced by calibrating location effects
    /// under estimated preferences.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub type_amenity: Option<Vec<Vec<f64>>>,
}

impl Economy {
    /// Amenity entering type k's utility in district j.
    pub fn amenity(&self, k: usize, j: usize) -> f64 {
        match &self.type_amenity {
            Some(a) => a[k][j],
            None => self.jurisdictions[j].amenity,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.jurisdictions.is_empty() || self.types.is_empty() {
            return Err(ModelError::InvalidEconomy("need at least one jurisdiction and one type".into()));
        }
        if !(self.eta > 0.0) {
            return Err(ModelError::InvalidEconomy(format!("eta = {} must be positive", self.eta)));
        }
        if !(0.0..=1.0).contains(&self.chi) {
            return Err(ModelError::InvalidEconomy(format!("chi = {} must lie in [0, 1]", self.chi)));
        }
        for t in &self.types {
            t.validate()?;
        }
        if let Some(a) = &self.type_amenity {
            let nj = self.jurisdictions.len();
            if a.len() != self.types.len() || a.iter().any(|row| row.len() != nj || row.iter().any(|x| !x.is_finite())) {
                return Err(ModelError::InvalidEconomy("type amenities must be finite and types × jurisdictions".into()));
            }
        }
        for (j, jur) in self.jurisdictions.iter().enumerate() {
            if !(jur.spending > 0.0) {
                return Err(ModelError::InvalidEconomy(format!("jurisdiction {j}: spending must be positive")));
            }
            if !jur.amenity.is_finite() || !jur.productivity.is_finite() {
                return Err(ModelError::InvalidEconomy(format!("jurisdiction {j}: non-finite amenity or productivity")));
            }
        }
        Ok(())
    }

    pub fn n_jurisdictions(&self) -> usize {
        self.jurisdictions.len()
    }

    pub fn n_types(&self) -> usize {
        self.types.len()
    }

    pub fn spending(&self) -> Vec<f64> {
        self.jurisdictions.iter().map(|j| j.spending).collect()
    }

    /// Copy of the economy with the spending vector replaced.
    pub fn with_spending(&self, g: &[f64]) -> Economy {
        let mut e = self.clone();
        for (jur, &gj) in e.jurisdictions.iter_mut().zip(g) {
            jur.spending = gj;
        }
        e
    }
}

/// A spatial equilibrium: prices, taxes, housing and populations by district.
/// `type_population[k][j]` is the mass of type k living in district j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumState {
    pub price: Vec<f64>,
    pub tax: Vec<f64>,
    pub housing: Vec<f64>,
    pub population: Vec<f64>,
    pub type_population: Vec<Vec<f64>>,
    pub spending: Vec<f64>,
}

impl EquilibriumState {
    /// Gross-of-tax housing price P_j (1 + tau_j).
    pub fn gross_price(&self, j: usize) -> f64 {
        self.price[j] * (1.0 + self.tax[j])
    }

    pub fn n_jurisdictions(&self) -> usize {
        self.price.len()
    }
}

/// How voters anticipate the consequences of a spending change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Anticipation {
    /// Prices, housing and populations held fixed; only the budget adjusts.
    #[default]
    Myopic,
    /// The spatial equilibrium is re-solved under the proposed spending.
    FullEquilibrium,
}

/// v = A + alpha log G - alpha chi log N + gamma log(y - P(1+tau)).
pub fn systematic_utility(
    t: &HouseholdType,
    amenity: f64,
    spending: f64,
    population: f64,
    gross_price: f64,
    chi: f64,
) -> Result<f64, ModelError> {
    if !(spending > 0.0) {
        return Err(ModelError::NonpositiveSpending(spending));
    }
    if !(population > 0.0) {
        return Err(ModelError::NonpositivePopulation(population));
    }
    let disposable = t.income - gross_price;
    if !(disposable > 0.0) {
        return Err(ModelError::NonpositiveDisposableIncome(disposable));
    }
    Ok(amenity + t.alpha * spending.ln() - t.alpha * chi * population.ln() + t.gamma * disposable.ln())
}

/// Same as [`systematic_utility`] but maps infeasible consumption to -inf so
/// the household simply never chooses the location.
pub fn systematic_utility_or_neg_inf(
    t: &HouseholdType,
    amenity: f64,
    spending: f64,
    population: f64,
    gross_price: f64,
    chi: f64,
) -> f64 {
    let disposable = t.income - gross_price;
    if !(disposable > 0.0) || !(spending > 0.0) || !(population > 0.0) {
        return f64::NEG_INFINITY;
    }
    amenity + t.alpha * spending.ln() - t.alpha * chi * population.ln() + t.gamma * disposable.ln()
}

/// Logit shares for each jurisdiction and the outside option (utility 0).
/// Entries equal to -inf get share 0.
pub fn choice_probabilities(v: &[f64], theta: f64) -> (Vec<f64>, f64) {
    let m = v.iter().map(|x| x / theta).fold(0.0_f64, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x / theta - m).exp()).collect();
    let outside = (-m).exp();
    let denom = outside + e.iter().sum::<f64>();
    (e.iter().map(|x| x / denom).collect(), outside / denom)
}

/// Market-clearing rental rate and housing: log P = (log N - lambda - B)/eta, H = N.
pub fn market_clearing_price(
    population: f64,
    lambda: f64,
    eta: f64,
    productivity: f64,
) -> Result<(f64, f64), ModelError> {
    if !(population > 0.0) {
        return Err(ModelError::NonpositivePopulation(population));
    }
    let log_p = (population.ln() - lambda - productivity) / eta;
    Ok((log_p.exp(), population))
}

/// Housing supply log H = lambda + eta log P + B.
pub fn housing_supply(log_price: f64, lambda: f64, eta: f64, productivity: f64) -> f64 {
    lambda + eta * log_price + productivity
}

/// Balanced-budget tax rate tau = G / (P H).
pub fn balanced_budget_tax(spending: f64, price: f64, housing: f64) -> Result<f64, ModelError> {
    for (name, value) in [("G", spending), ("P", price), ("H", housing)] {
        if !(value > 0.0) {
            return Err(ModelError::NonpositiveInput { name, value });
        }
    }
    Ok(spending / (price * housing))
}

/// Slopes of the Government Possibility Frontier, (dlogP/dlogG, dlog(1+tau)/dlogG).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpfSlopes {
    pub dlog_price: f64,
    pub dlog_one_plus_tax: f64,
}

/// Myopic voters hold P and N fixed: (0, tau/(1+tau)).
pub fn gpf_slopes_myopic(tau: f64) -> GpfSlopes {
    GpfSlopes { dlog_price: 0.0, dlog_one_plus_tax: tau / (1.0 + tau) }
}

/// General GPF slopes from the aggregated sorting terms alpha_hat and gamma_hat.
pub fn gpf_slopes_from_partials(
    alpha_hat: f64,
    gamma_hat: f64,
    chi: f64,
    population: f64,
    eta: f64,
    tau: f64,
) -> Result<GpfSlopes, ModelError> {
    let c = chi / population;
    let denom = 1.0 + c * alpha_hat;
    let j_g = -alpha_hat / denom;
    let j_tau = (gamma_hat - c * gamma_hat * (alpha_hat - gamma_hat)) / denom;
    let j_p = eta + j_tau;
    let (k_g, k_p, k_tau) = (-1.0, 1.0 + eta, (1.0 + tau) / tau);

    let d_p = j_p * k_tau - j_tau * k_p;
    let d_tau = j_tau * k_p - j_p * k_tau;
    if d_p.abs() < 1e-300 || !d_p.is_finite() {
        return Err(ModelError::SingularSystem(d_p));
    }
    Ok(GpfSlopes {
        dlog_price: -(j_g * k_tau - j_tau * k_g) / d_p,
        dlog_one_plus_tax: -(j_g * k_p - j_p * k_g) / d_tau,
    })
}

/// General GPF slopes at district j, replacing the integrals over households
/// by sums over types weighted by type mass.
pub fn gpf_slopes_general(economy: &Economy, state: &EquilibriumState, j: usize) -> Result<GpfSlopes, ModelError> {
    let gross = state.gross_price(j);
    let mut alpha_hat = 0.0;
    let mut gamma_hat = 0.0;
    for (k, t) in economy.types.iter().enumerate() {
        let share = state.type_population[k][j] / t.sigma;
        let spread = t.sigma * share * (1.0 - share) / t.theta;
        alpha_hat += t.alpha * spread;
        gamma_hat += t.gamma * t.rho(gross)? * spread;
    }
    gpf_slopes_from_partials(alpha_hat, gamma_hat, economy.chi, state.population[j], economy.eta, state.tax[j])
}

/// Tax rate preferred by a type under myopic voting: alpha / (gamma rho - alpha).
pub fn preferred_tax_rate(t: &HouseholdType, rho: f64) -> Result<f64, ModelError> {
    if !(rho > 0.0) {
        return Err(ModelError::NonpositiveInput { name: "rho", value: rho });
    }
    let d = t.gamma * rho - t.alpha;
    if d <= 0.0 {
        return Err(ModelError::Unbounded);
    }
    Ok((t.alpha / d).max(0.0))
}

/// Second derivative of indirect utility in log G under myopic voting.
pub fn myopic_second_derivative(t: &HouseholdType, rho: f64, tau: f64) -> f64 {
    -t.gamma * rho * tau / (1.0 + tau * tau)
}

/// Utility change from scaling district j's spending by e^dlogG with P, H and N
/// held fixed and the tax adjusting to keep the budget balanced.
pub fn myopic_vote_delta(
    t: &HouseholdType,
    state: &EquilibriumState,
    j: usize,
    dlog_g: f64,
) -> Result<f64, ModelError> {
    let p = state.price[j];
    let tau0 = state.tax[j];
    let tau1 = state.spending[j] * dlog_g.exp() / (p * state.housing[j]);
    let d0 = t.income - p * (1.0 + tau0);
    let d1 = t.income - p * (1.0 + tau1);
    if !(d0 > 0.0) {
        return Err(ModelError::NonpositiveDisposableIncome(d0));
    }
    if !(d1 > 0.0) {
        return Err(ModelError::NonpositiveDisposableIncome(d1));
    }
    Ok(t.alpha * dlog_g + t.gamma * (d1.ln() - d0.ln()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ty(alpha: f64, gamma: f64, income: f64) -> HouseholdType {
        HouseholdType {
            alpha,
            gamma,
            beta: 1.0 - alpha - gamma,
            income,
            sigma: 0.25,
            theta: 1.0,
            mu0: -3.0,
            mu1: -1.0,
            sigma0: 3.0,
        }
    }

    #[test]
    fn utility_all_logs_of_one() {
        let v = systematic_utility(&ty(1.0, 1.0, 2.0), 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn utility_hand_evaluation() {
        let v = systematic_utility(&ty(0.55, 0.35, 0.45), 0.0, 1.0, 1.0, 0.2, 1.0).unwrap();
        assert!((v - 0.35 * 0.25_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn utility_zero_disposable_income_errors() {
        let r = systematic_utility(&ty(0.5, 0.3, 0.2), 0.0, 1.0, 1.0, 0.2, 1.0);
        assert!(matches!(r, Err(ModelError::NonpositiveDisposableIncome(_))));
        let r = systematic_utility(&ty(0.5, 0.3, 0.4), 0.0, 0.0, 1.0, 0.2, 1.0);
        assert!(matches!(r, Err(ModelError::NonpositiveSpending(_))));
        assert_eq!(systematic_utility_or_neg_inf(&ty(0.5, 0.3, 0.2), 0.0, 1.0, 1.0, 0.2, 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn logit_single_jurisdiction() {
        let (s, out) = choice_probabilities(&[1.0], 1.0);
        let e = std::f64::consts::E;
        assert_eq!(choice_probabilities(&[0.0], 1.0).0[0], 0.5);
        assert!((s[0] - e / (1.0 + e)).abs() < 1e-15);
        assert!((s[0] + out - 1.0).abs() < 1e-15);
    }

    #[test]
    fn logit_symmetric_thirds() {
        let (s, out) = choice_probabilities(&[0.0, 0.0], 1.0);
        for x in s.iter().chain(std::iter::once(&out)) {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn logit_handles_neg_inf_and_huge() {
        let (s, out) = choice_probabilities(&[f64::NEG_INFINITY, 800.0, 799.0], 1.0);
        assert_eq!(s[0], 0.0);
        assert!(out < 1e-300);
        assert!((s[1] + s[2] + out - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logit_matches_gumbel_monte_carlo() {
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        use rand_distr::{Distribution, Gumbel};
        let v = [0.3, -0.2, 0.0];
        let theta = 0.7;
        let (s, out) = choice_probabilities(&v, theta);
        let gumbel = Gumbel::new(0.0, theta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 1_000_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            // index 3 is the outside option with utility 0
            let mut best = (3, gumbel.sample(&mut rng));
            for (j, vj) in v.iter().enumerate() {
                let u = vj + gumbel.sample(&mut rng);
                if u > best.1 {
                    best = (j, u);
                }
            }
            counts[best.0] += 1;
        }
        let analytic = [s[0], s[1], s[2], out];
        for (c, p) in counts.iter().zip(analytic) {
            let freq = *c as f64 / draws as f64;
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((freq - p).abs() < 3.0 * se, "freq {freq} vs {p}");
        }
    }

    #[test]
    fn market_clearing_examples() {
        let (p, h) = market_clearing_price(1.0, 0.0, 0.6, 0.0).unwrap();
        assert_eq!((p, h), (1.0, 1.0));
        let (p, _) = market_clearing_price(0.6_f64.exp(), 0.0, 0.6, 0.0).unwrap();
        assert!((p.ln() - 1.0).abs() < 1e-14);
        let (p, h) = market_clearing_price(0.08, 0.1, 0.6, -1.2).unwrap();
        assert!((housing_supply(p.ln(), 0.1, 0.6, -1.2) - h.ln()).abs() < 1e-12);
        assert!(market_clearing_price(0.0, 0.0, 0.6, 0.0).is_err());
    }

    #[test]
    fn budget_examples() {
        assert_eq!(balanced_budget_tax(1.0, 1.0, 1.0).unwrap(), 1.0);
        let tau = balanced_budget_tax(0.05, 0.5, 0.2).unwrap();
        assert!((tau - 0.5).abs() < 1e-15);
        assert!((tau * 0.5 * 0.2 - 0.05).abs() < 1e-14);
        assert!(balanced_budget_tax(0.05, 0.0, 0.2).is_err());
    }

    #[test]
    fn myopic_slopes() {
        assert_eq!(gpf_slopes_myopic(1.0), GpfSlopes { dlog_price: 0.0, dlog_one_plus_tax: 0.5 });
        assert!((gpf_slopes_myopic(0.25).dlog_one_plus_tax - 0.2).abs() < 1e-15);
    }

    #[test]
    fn general_slopes_reduce_to_myopic_without_sorting() {
        // With no sorting response (alpha_hat = gamma_hat = 0) and no
        // congestion, the general frontier collapses to the myopic one.
        for tau in [0.1, 0.7, 1.4] {
            let g = gpf_slopes_from_partials(0.0, 0.0, 0.0, 0.08, 0.6, tau).unwrap();
            let m = gpf_slopes_myopic(tau);
            assert!(g.dlog_price.abs() < 1e-15);
            assert!((g.dlog_one_plus_tax - m.dlog_one_plus_tax).abs() < 1e-15);
        }
    }

    #[test]
    fn general_slopes_satisfy_budget_equation() {
        // K: -dg + (1+eta) dp + (1+tau)/tau dtau = 0 holds for any partials.
        let (eta, tau) = (0.6, 1.3);
        let s = gpf_slopes_from_partials(0.02, 0.05, 1.0, 0.08, eta, tau).unwrap();
        let k = -1.0 + (1.0 + eta) * s.dlog_price + (1.0 + tau) / tau * s.dlog_one_plus_tax;
        assert!(k.abs() < 1e-12);
    }

    #[test]
    fn preferred_tax_examples() {
        let t = ty(0.2, 0.3, 0.5);
        assert!((preferred_tax_rate(&t, 2.0).unwrap() - 0.5).abs() < 1e-15);
        let t = ty(0.3, 0.3, 0.5);
        assert_eq!(preferred_tax_rate(&t, 1.0), Err(ModelError::Unbounded));
    }

    #[test]
    fn preferred_tax_is_a_maximum() {
        // V(l) = alpha l + gamma log(y - P - e^l / H) with P, H fixed (myopic).
        let t = ty(0.2, 0.3, 0.55);
        let (p, h) = (0.11, 0.08);
        let v = |l: f64| t.alpha * l + t.gamma * (t.income - p - l.exp() / h).ln();
        // At the optimum tau/(1+tau) = alpha/(gamma rho) with rho evaluated at tau.
        // Solve the FOC directly on the log-G line by bisection.
        let foc = |l: f64| {
            let tau = l.exp() / (p * h);
            let rho = t.rho(p * (1.0 + tau)).unwrap();
            t.alpha - t.gamma * rho * tau / (1.0 + tau)
        };
        let (mut lo, mut hi) = ((1e-6_f64).ln(), ((t.income - p) * h * 0.999).ln());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if foc(mid) > 0.0 { lo = mid } else { hi = mid }
        }
        let l = 0.5 * (lo + hi);
        let tau = l.exp() / (p * h);
        let rho = t.rho(p * (1.0 + tau)).unwrap();
        assert!((preferred_tax_rate(&t, rho).unwrap() - tau).abs() < 1e-8);
        let e = 1e-4;
        let d2 = (v(l + e) - 2.0 * v(l) + v(l - e)) / (e * e);
        assert!(d2 < 0.0);
        assert!(myopic_second_derivative(&t, rho, tau) < 0.0);
    }

    fn state1(p: f64, tau: f64, n: f64) -> EquilibriumState {
        EquilibriumState {
            price: vec![p],
            tax: vec![tau],
            housing: vec![n],
            population: vec![n],
            type_population: vec![vec![n]],
            spending: vec![tau * p * n],
        }
    }

    #[test]
    fn myopic_delta_examples() {
        let t = ty(0.55, 0.35, 0.45);
        let s = state1(0.11, 1.2, 0.08);
        assert_eq!(myopic_vote_delta(&t, &s, 0, 0.0).unwrap(), 0.0);
        let d: f64 = 0.1;
        let tau1 = 1.2 * d.exp();
        let expected = 0.55 * d + 0.35 * ((0.45 - 0.11 * (1.0 + tau1)).ln() - (0.45 - 0.11 * 2.2_f64).ln());
        assert!((myopic_vote_delta(&t, &s, 0, d).unwrap() - expected).abs() < 1e-14);
        assert!(myopic_vote_delta(&t, &s, 0, 2.0).is_err());
    }

    #[test]
    fn myopic_delta_concave() {
        let t = ty(0.2, 0.3, 0.55);
        let s = state1(0.11, 1.3, 0.08);
        let e = 1e-3;
        for i in 1..40 {
            let d = i as f64 * 0.01;
            let f = |x| myopic_vote_delta(&t, &s, 0, x).unwrap();
            assert!(f(d + e) - 2.0 * f(d) + f(d - e) < 0.0);
        }
    }

    proptest! {
        #[test]
        fn shares_sum_to_one(v in prop::collection::vec(-50.0f64..50.0, 1..12), theta in 0.05f64..5.0) {
            let (s, out) = choice_probabilities(&v, theta);
            prop_assert!((s.iter().sum::<f64>() + out - 1.0).abs() < 1e-12);
        }

        #[test]
        fn shares_shift_invariant(v in prop::collection::vec(-5.0f64..5.0, 2..8), c in -3.0f64..3.0) {
            // A common shift of every utility (the outside option's included)
            // leaves relative shares untouched: s_i / s_j = exp((v_i - v_j)/theta).
            let (s, _) = choice_probabilities(&v, 1.0);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let (s2, _) = choice_probabilities(&shifted, 1.0);
            for i in 1..v.len() {
                prop_assert!(((s[i] / s[0]) / (s2[i] / s2[0]) - 1.0).abs() < 1e-10);
            }
            let arg = |x: &[f64]| x.iter().enumerate().fold((0, f64::MIN), |m, (i, &y)| if y > m.1 { (i, y) } else { m }).0;
            prop_assert_eq!(arg(&s), arg(&v));
        }

        #[test]
        fn soc_negative(alpha in 0.01f64..0.9, gamma in 0.01f64..0.9, rho in 0.01f64..20.0, tau in 0.001f64..10.0) {
            let t = ty(alpha, gamma, 1.0);
            prop_assert!(myopic_second_derivative(&t, rho, tau) < 0.0);
        }

        #[test]
        fn myopic_slope_budget_identity(tau in 0.001f64..50.0) {
            let s = gpf_slopes_myopic(tau);
            prop_assert!(((1.0 + tau) * s.dlog_one_plus_tax - tau).abs() < 1e-12 * (1.0 + tau));
        }
    }
}
