//! Run configuration: presets, JSON loading with overrides, validation and
//! hashing.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use sxrd::dgp::{derive_seed, stream, DgpConfig};
use sxrd::extrap::{ExtrapConfig, Outcome};
use sxrd::ident::{counting_rule_holds, IdentConfig};
use sxrd::mle::MleConfig;
use sxrd::model::Anticipation;

/// Named scale settings. `Desk` finishes in minutes on a laptop; `Paper`
/// uses the full replication and bootstrap counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random draw in a run derives from it.
    pub seed: Option<u64>,
    pub preset: Option<Preset>,
    /// Voter anticipation for every stage; overrides the per-section fields.
    pub anticipation: Anticipation,
    /// Narrow-proposal data used for the cutoff estimates.
    pub dgp: DgpConfig,
    /// Wide-proposal data used for turnout estimation and extrapolation.
    pub turnout_dgp: DgpConfig,
    pub ident: IdentConfig,
    pub mle: MleConfig,
    /// Structural redraws combined by Rubin's rules in the turnout fit.
    pub turnout_draws: usize,
    pub extrap: ExtrapConfig,
    pub extrap_outcome: Outcome,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            preset: None,
            anticipation: Anticipation::Myopic,
            dgp: DgpConfig::default(),
            turnout_dgp: DgpConfig::turnout_run(),
            ident: IdentConfig::default(),
            mle: MleConfig::default(),
            turnout_draws: 100,
            extrap: ExtrapConfig::default(),
            extrap_outcome: Outcome::Price,
        }
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> RunConfig {
        let mut c = RunConfig { preset: Some(preset), ..RunConfig::default() };
        if preset == Preset::Desk {
            c.dgp.n_replications = 20;
            c.turnout_dgp.n_replications = 5;
            c.turnout_draws = 20;
            c.extrap.outer_draws = 20;
            c.extrap.inner_draws = 10;
        }
        c
    }

    pub fn seed_or_zero(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Seed of the wide-proposal dataset, a named substream of the master.
    pub fn turnout_seed(&self) -> u64 {
        derive_seed(self.seed_or_zero(), stream::TURNOUT_DATA)
    }

    /// Propagate the top-level anticipation mode into every section.
    fn harmonize(&mut self) {
        self.dgp.anticipation = self.anticipation;
        self.turnout_dgp.anticipation = self.anticipation;
        self.extrap.anticipation = self.anticipation;
        if let Some(seed) = self.seed {
            self.dgp.master_seed = seed;
            self.turnout_dgp.master_seed = self.turnout_seed();
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A problem with one configuration field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl FieldError {
    fn new(path: &str, message: impl ToString) -> Self {
        FieldError { path: path.to_string(), message: message.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigError {
    pub kind: &'static str,
    pub errors: Vec<FieldError>,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Build the run configuration from an optional JSON file, a preset and a
/// seed. Precedence, lowest first: library defaults, preset (flag over
/// file), file contents, `--seed`.
pub fn resolve(text: Option<&str>, preset: Option<Preset>, seed: Option<u64>) -> Result<RunConfig, ConfigError> {
    let parse_error = |path: String, e: &dyn std::fmt::Display| ConfigError { kind: "parse", errors: vec![FieldError { path, message: e.to_string() }] };
    let user: Value = match text {
        Some(t) => serde_json::from_str(t).map_err(|e| parse_error(String::new(), &e))?,
        None => Value::Object(Default::default()),
    };
    if !user.is_object() {
        return Err(parse_error(String::new(), &"configuration must be a JSON object"));
    }
    let file_preset = match user.get("preset") {
        None | Some(Value::Null) => None,
        Some(v) => Some(serde_json::from_value::<Preset>(v.clone()).map_err(|e| parse_error("preset".into(), &e))?),
    };
    let preset = preset.or(file_preset);
    let base = preset.map(RunConfig::preset).unwrap_or_default();
    let mut merged = serde_json::to_value(&base).expect("config serializes");
    merge(&mut merged, user);
    if let Some(p) = preset {
        merged["preset"] = serde_json::to_value(p).expect("preset serializes");
    }
    let mut config: RunConfig = serde_path_to_error::deserialize(merged).map_err(|e| parse_error(e.path().to_string(), e.inner()))?;
    if seed.is_some() {
        config.seed = seed;
    }
    config.harmonize();
    Ok(config)
}

/// Structural and semantic checks. `identify` additionally requires the
/// counting rule to hold.
pub fn validate(config: &RunConfig, identify: bool) -> Vec<FieldError> {
    let mut errors = Vec::new();
    if config.seed.is_none() {
        errors.push(FieldError::new("seed", "a seed is required (config field or --seed)"));
    }
    for (path, dgp) in [("dgp", &config.dgp), ("turnout_dgp", &config.turnout_dgp)] {
        if let Err(e) = dgp.validate() {
            errors.push(FieldError::new(path, e));
        }
        if identify && !counting_rule_holds(dgp.n_jurisdictions, dgp.types.len()) {
            errors.push(FieldError::new(
                &format!("{path}.n_jurisdictions"),
                format!("{} jurisdictions cannot identify {} types", dgp.n_jurisdictions, dgp.types.len()),
            ));
        }
    }
    if let Err(e) = config.ident.validate() {
        errors.push(FieldError::new("ident.rdd", e));
    }
    if let Err(e) = config.mle.validate() {
        errors.push(FieldError::new("mle", e));
    }
    if !(config.extrap.bin_width > 0.0) {
        errors.push(FieldError::new("extrap.bin_width", format!("must be positive, got {}", config.extrap.bin_width)));
    }
    if let Err(e) = config.extrap.grid() {
        errors.push(FieldError::new("extrap.grid_points", e));
    }
    if config.turnout_draws == 1 {
        errors.push(FieldError::new("turnout_draws", "must be 0 (point fit only) or at least 2"));
    }
    for (path, n) in [("extrap.outer_draws", config.extrap.outer_draws), ("extrap.inner_draws", config.extrap.inner_draws)] {
        if n == 1 {
            errors.push(FieldError::new(path, "must be 0 (no bootstrap) or at least 2"));
        }
    }
    if let Outcome::TypePopulation(k) = config.extrap_outcome
        && k >= config.turnout_dgp.types.len()
    {
        errors.push(FieldError::new("extrap_outcome", format!("type index {k} out of range")));
    }
    errors
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_clean() {
        let c = resolve(None, None, Some(1)).unwrap();
        assert!(validate(&c, true).is_empty());
        assert_eq!(c.dgp.n_replications, 100);
    }

    #[test]
    fn precedence() {
        let c = resolve(Some(r#"{"preset":"desk","dgp":{"n_referenda":50},"seed":3}"#), None, None).unwrap();
        assert_eq!(c.dgp.n_replications, 20);
        assert_eq!(c.dgp.n_referenda, 50);
        assert_eq!(c.seed, Some(3));
        let c = resolve(Some(r#"{"preset":"desk","seed":3}"#), Some(Preset::Paper), Some(9)).unwrap();
        assert_eq!(c.dgp.n_replications, 100);
        assert_eq!(c.seed, Some(9));
        assert_eq!(c.dgp.master_seed, 9);
    }

    #[test]
    fn field_paths_and_rules() {
        let e = resolve(Some(r#"{"dgp":{"n_referenda":"many"}}"#), None, Some(1)).unwrap_err();
        assert_eq!(e.errors[0].path, "dgp.n_referenda");
        let e = resolve(Some(r#"{"bogus":1}"#), None, Some(1)).unwrap_err();
        assert_eq!(e.kind, "parse");
        let c = resolve(Some(r#"{"dgp":{"n_jurisdictions":1}}"#), None, Some(1)).unwrap();
        assert!(validate(&c, true).iter().any(|f| f.path == "dgp.n_jurisdictions"));
        let c = resolve(Some(r#"{"extrap":{"bin_width":-0.1}}"#), None, Some(1)).unwrap();
        assert!(validate(&c, false).iter().any(|f| f.path == "extrap.bin_width"));
        let c = resolve(None, None, None).unwrap();
        assert!(validate(&c, false).iter().any(|f| f.path == "seed"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = resolve(None, Some(Preset::Desk), Some(1)).unwrap();
        let b = resolve(None, Some(Preset::Desk), Some(2)).unwrap();
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
