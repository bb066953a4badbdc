use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uuscout_core::bandit::{budget_from_fraction, PolicyKind, DEFAULT_BUDGET_FRACTION};
use uuscout_core::corpus::DEFAULT_TAU;
use uuscout_core::dsp::{LambdaWeights, DEFAULT_LAMBDA_GRID, VALIDATION_FRACTION};
use uuscout_core::oracle::{CostModel, DEFAULT_GAMMA};
use uuscout_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    #[default]
    Simulated,
    Interactive,
}

/// Everything a session needs. Unset fields take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub dataset: PathBuf,
    pub schema: PathBuf,
    pub training: Option<PathBuf>,
    pub critical_class: String,
    pub tau: f64,
    pub gamma: f64,
    /// Share of the search space to query; exclusive with `budget`.
    pub budget_fraction: Option<f64>,
    pub budget: Option<usize>,
    pub policy: PolicyKind,
    pub bins: usize,
    pub min_support: Option<usize>,
    pub max_length: usize,
    /// Fixed weights; when unset they are tuned over `lambda_grid`.
    pub lambda: Option<[f64; 5]>,
    pub lambda_grid: Vec<f64>,
    pub validation_fraction: f64,
    pub seed: u64,
    pub oracle: OracleMode,
    /// Defaults to uniform cost.
    pub cost: Option<CostModel>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            schema: PathBuf::new(),
            training: None,
            critical_class: String::new(),
            tau: DEFAULT_TAU,
            gamma: DEFAULT_GAMMA,
            budget_fraction: None,
            budget: None,
            policy: PolicyKind::Uub,
            bins: 4,
            min_support: None,
            max_length: 3,
            lambda: None,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            validation_fraction: VALIDATION_FRACTION,
            seed: 0,
            oracle: OracleMode::Simulated,
            cost: None,
        }
    }
}

impl SessionConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_toml_str(&text)?;
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset);
        fix(&mut self.schema);
        if let Some(t) = self.training.as_mut() {
            fix(t);
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if self.critical_class.is_empty() {
            return bad("critical_class is required".into());
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau {} outside [0,1]", self.tau));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0,1]", self.gamma));
        }
        match (self.budget_fraction, self.budget) {
            (Some(_), Some(_)) => return bad("set budget or budget_fraction, not both".into()),
            (Some(f), None) if !(f > 0.0 && f <= 1.0) => return bad(format!("budget_fraction {f} outside (0,1]")),
            (None, Some(0)) => return bad("budget must be at least 1".into()),
            _ => {}
        }
        if self.bins < 2 {
            return bad("bins must be at least 2".into());
        }
        if self.max_length == 0 {
            return bad("max_length must be at least 1".into());
        }
        if self.min_support == Some(0) {
            return bad("min_support must be at least 1".into());
        }
        if let Some(l) = self.lambda {
            LambdaWeights::new(l)?;
        } else if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("lambda_grid must be non-empty and non-negative".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation_fraction {} outside [0,1)", self.validation_fraction));
        }
        match self.policy {
            PolicyKind::EpsilonGreedy(e) if !(0.0..=1.0).contains(&e) => return bad(format!("epsilon {e} outside [0,1]")),
            PolicyKind::DiscountedUcb(g) if !(g > 0.0 && g <= 1.0) => return bad(format!("discount {g} outside (0,1]")),
            PolicyKind::SlidingWindowUcb(0) => return bad("window must be at least 1".into()),
            _ => {}
        }
        Ok(())
    }

    /// Number of oracle queries for a search space of `n` instances.
    pub fn budget_for(&self, n: usize) -> usize {
        match self.budget {
            Some(b) => b,
            None => budget_from_fraction(n, self.budget_fraction.unwrap_or(DEFAULT_BUDGET_FRACTION)),
        }
    }

    pub fn cost_model(&self) -> CostModel {
        self.cost.clone().unwrap_or_default()
    }
}
