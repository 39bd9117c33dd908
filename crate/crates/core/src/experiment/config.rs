use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss_markov::{ProcessParams, Regime};
use crate::hermite::PolySpec;
use crate::limits::default_steps_per_unit;

pub const DEFAULT_REPLICATES: usize = 10_000;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_BUDGET: f64 = 2e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    VarianceValidation,
    PhaseTransition,
    TvDecayRates,
    GammaContinuity,
    MixingTimeSweep,
    CovarianceCheck,
    IdentitySuite,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::VarianceValidation,
        ExperimentKind::PhaseTransition,
        ExperimentKind::TvDecayRates,
        ExperimentKind::GammaContinuity,
        ExperimentKind::MixingTimeSweep,
        ExperimentKind::CovarianceCheck,
        ExperimentKind::IdentitySuite,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::VarianceValidation => "variance_validation",
            ExperimentKind::PhaseTransition => "phase_transition",
            ExperimentKind::TvDecayRates => "tv_decay_rates",
            ExperimentKind::GammaContinuity => "gamma_continuity",
            ExperimentKind::MixingTimeSweep => "mixing_time_sweep",
            ExperimentKind::CovarianceCheck => "covariance_check",
            ExperimentKind::IdentitySuite => "identity_suite",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            ExperimentKind::VarianceValidation => "Monte Carlo Var S_{n,1}(f) against the exact chaos variance",
            ExperimentKind::PhaseTransition => {
                "KS of the standardized sum against the Brownian, tempered and degenerate limits"
            }
            ExperimentKind::TvDecayRates => "log-log slope of KS/TV against the beta-appropriate limit over n",
            ExperimentKind::GammaContinuity => {
                "tempered Hermite laws: continuity in gamma and the Brownian/degenerate interpolation"
            }
            ExperimentKind::MixingTimeSweep => "exact mixing times, their scaling in n and the TV sandwich",
            ExperimentKind::CovarianceCheck => {
                "Monte Carlo covariance of tempered Hermite processes against the closed form"
            }
            ExperimentKind::IdentitySuite => "deterministic algebraic identities and inequalities",
        }
    }

    /// Whether the experiment walks `params_grid`.
    pub fn uses_grid(&self) -> bool {
        matches!(
            self,
            ExperimentKind::VarianceValidation
                | ExperimentKind::PhaseTransition
                | ExperimentKind::TvDecayRates
                | ExperimentKind::MixingTimeSweep
        )
    }
}

fn default_regimes() -> Vec<Regime> {
    vec![Regime::boundary()]
}

/// Cartesian product of parameter lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsGrid {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub n: Vec<usize>,
    #[serde(default = "default_regimes")]
    pub regime: Vec<Regime>,
}

impl ParamsGrid {
    pub fn is_empty(&self) -> bool {
        self.beta.is_empty() || self.gamma.is_empty() || self.n.is_empty() || self.regime.is_empty()
    }

    /// Points in `beta, gamma, regime, n` nesting order.
    pub fn points(&self) -> Vec<ProcessParams> {
        let mut out = Vec::new();
        for &beta in &self.beta {
            for &gamma in &self.gamma {
                for &regime in &self.regime {
                    for &n in &self.n {
                        out.push(ProcessParams { beta, gamma, n, regime });
                    }
                }
            }
        }
        out
    }
}

fn default_spec() -> PolySpec {
    PolySpec::single(2).expect("H_2 is a valid observable")
}

fn default_replicates() -> usize {
    DEFAULT_REPLICATES
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_budget() -> f64 {
    DEFAULT_BUDGET
}

/// Experiment-specific settings. Unused fields are ignored by other experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentOptions {
    /// TV threshold for mixing times.
    pub eps: f64,
    /// Bulk-mass parameter for mixing times.
    pub delta: f64,
    /// Independent repetitions of the phase-transition comparison.
    pub seeds: usize,
    /// Fixed OU resolution; `max(1000, 1000γ)` when absent.
    pub steps_per_unit: Option<usize>,
    /// Hermite orders for limit-process experiments.
    pub orders: Vec<usize>,
    pub gammas: Option<Vec<f64>>,
    /// Time grid for covariance checks.
    pub time_grid: Vec<f64>,
    /// Sample size for limit laws; `replicates` when absent.
    pub limit_replicates: Option<usize>,
    /// Family-wise level of the gamma-continuity KS tests.
    pub continuity_level: f64,
    /// Relative perturbation of gamma in continuity tests.
    pub gamma_perturbation: f64,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            eps: 0.25,
            delta: 0.1,
            seeds: 5,
            steps_per_unit: None,
            orders: vec![1, 2, 3],
            gammas: None,
            time_grid: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            limit_replicates: None,
            continuity_level: 0.01,
            gamma_perturbation: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub params_grid: Option<ParamsGrid>,
    #[serde(default = "default_spec")]
    pub spec: PolySpec,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_budget")]
    pub mc_budget_guard: f64,
    #[serde(default)]
    pub options: ExperimentOptions,
}

impl ExperimentConfig {
    /// A config with every default filled in.
    pub fn with_defaults(experiment: ExperimentKind) -> Self {
        let params_grid = experiment.uses_grid().then(|| ParamsGrid {
            beta: vec![0.5, 1.0, 2.0],
            gamma: vec![0.5],
            n: match experiment {
                ExperimentKind::MixingTimeSweep => vec![100, 200, 400, 800],
                ExperimentKind::VarianceValidation => vec![200, 500],
                _ => vec![256, 512, 1024, 2048, 4096],
            },
            regime: default_regimes(),
        });
        ExperimentConfig {
            experiment,
            params_grid,
            spec: default_spec(),
            replicates: DEFAULT_REPLICATES,
            master_seed: DEFAULT_SEED,
            output_dir: default_output_dir(),
            mc_budget_guard: DEFAULT_BUDGET,
            options: ExperimentOptions::default(),
        }
    }

    pub fn grid_points(&self) -> Vec<ProcessParams> {
        self.params_grid.as_ref().map(ParamsGrid::points).unwrap_or_default()
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.options.gammas.clone().unwrap_or_else(|| match self.experiment {
            ExperimentKind::GammaContinuity => vec![0.0625, 0.25, 1.0, 4.0, 16.0, 64.0],
            _ => vec![0.5, 1.0, 4.0],
        })
    }

    pub fn steps_per_unit(&self, gamma: f64) -> usize {
        self.options.steps_per_unit.unwrap_or_else(|| default_steps_per_unit(gamma))
    }

    pub fn limit_replicates(&self) -> usize {
        self.options.limit_replicates.unwrap_or(self.replicates)
    }

    /// Upper estimate of simulated path steps (process steps plus OU steps).
    pub fn estimated_path_steps(&self) -> f64 {
        let r = self.replicates as f64;
        let rl = self.limit_replicates() as f64;
        let points = self.grid_points();
        match self.experiment {
            ExperimentKind::VarianceValidation => points.iter().map(|p| r * p.n as f64).sum(),
            ExperimentKind::PhaseTransition => points
                .iter()
                .map(|p| self.options.seeds as f64 * (r * p.n as f64 + rl * self.steps_per_unit(1.0) as f64))
                .sum(),
            ExperimentKind::TvDecayRates => points
                .iter()
                .map(|p| {
                    r * p.n as f64
                        + if (p.beta - 1.0).abs() < 1e-12 { rl * self.steps_per_unit(p.gamma) as f64 } else { 0.0 }
                })
                .sum(),
            ExperimentKind::MixingTimeSweep => points.iter().map(|p| 10.0 * (p.n as f64).powf(p.beta)).sum(),
            ExperimentKind::GammaContinuity => {
                self.gammas().iter().map(|&g| 2.0 * r * self.steps_per_unit(g) as f64).sum()
            }
            ExperimentKind::CovarianceCheck => self.gammas().iter().map(|&g| r * self.steps_per_unit(g) as f64).sum(),
            ExperimentKind::IdentitySuite => 0.0,
        }
    }

    /// Checks the invariants that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::Config(format!("replicates must be at least 2, got {}", self.replicates)));
        }
        if !(self.mc_budget_guard > 0.0) {
            return Err(Error::Config("mc_budget_guard must be positive".into()));
        }
        if self.experiment.uses_grid() {
            match &self.params_grid {
                None => return Err(Error::Config(format!("{} requires params_grid", self.experiment.name()))),
                Some(g) if g.is_empty() => {
                    return Err(Error::Config("params_grid is empty: beta, gamma, n and regime need entries".into()))
                }
                Some(_) => {}
            }
            for p in self.grid_points() {
                p.validate().map_err(|e| Error::Config(format!("grid point ({}): {e}", p.tuple_label())))?;
            }
        }
        let o = &self.options;
        if !(o.eps > 0.0 && o.eps < 1.0 && o.delta > 0.0 && o.delta < 1.0) {
            return Err(Error::Config("options.eps and options.delta must lie in (0, 1)".into()));
        }
        if o.seeds == 0 {
            return Err(Error::Config("options.seeds must be at least 1".into()));
        }
        if o.orders.is_empty() || o.orders.iter().any(|&q| q == 0 || q > crate::hermite::MAX_POLY_ORDER) {
            return Err(Error::Config("options.orders must be nonempty orders in 1..=8".into()));
        }
        if self.gammas().iter().any(|g| !(*g > 0.0 && g.is_finite())) || self.gammas().is_empty() {
            return Err(Error::Config("options.gammas must be nonempty and positive".into()));
        }
        crate::functionals::check_grid(&o.time_grid).map_err(|e| Error::Config(format!("options.time_grid: {e}")))?;
        if self.limit_replicates() < 2 {
            return Err(Error::Config("options.limit_replicates must be at least 2".into()));
        }
        if self.experiment == ExperimentKind::TvDecayRates {
            let g = self.params_grid.as_ref().expect("checked above");
            if g.n.len() < 4 {
                return Err(Error::Config("tv_decay_rates needs at least 4 values of n".into()));
            }
        }
        if self.experiment == ExperimentKind::MixingTimeSweep {
            let g = self.params_grid.as_ref().expect("checked above");
            if g.n.len() < 3 {
                return Err(Error::Config("mixing_time_sweep needs at least 3 values of n".into()));
            }
        }
        let needed = self.estimated_path_steps();
        if needed > self.mc_budget_guard {
            return Err(Error::BudgetExceeded { needed, guard: self.mc_budget_guard });
        }
        Ok(())
    }
}

/// Parses a JSON config and fills defaults without checking invariants.
pub fn parse_config(raw: &str) -> Result<ExperimentConfig> {
    serde_json::from_str(raw).map_err(|e| Error::Config(e.to_string()))
}

/// Parses a JSON config, fills defaults and checks invariants.
pub fn validate_config(raw: &str) -> Result<ExperimentConfig> {
    let cfg = parse_config(raw)?;
    cfg.validate()?;
    Ok(cfg)
}
