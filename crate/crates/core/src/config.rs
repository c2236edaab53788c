//! JSON run configuration and pre-run validation.
//!
//! A [`RunConfig`] pins everything a batch run needs: the experiment
//! world and its parameters, the trigger policy, the gradient oracle,
//! run lengths, the master seed, and output options. [`RunConfig::validate`]
//! checks every admission condition the convergence analysis relies on —
//! without simulating — and reports each one as a named pass/fail line,
//! so boundary violations (a consensus gain of exactly `1/n`, a gradient
//! step at exactly `m_f/L^2`) are rejected by name before a run starts.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::netgraph::NetworkModel;
use crate::scenario::least_squares::{LsParams, LsScenario};
use crate::scenario::waypoint::{WpParams, WpScenario};
use crate::solver::{GradientMode, StepSizes, World};
use crate::trigger::{PolicyMode, PolicyParams, Transport};
use crate::Result;

/// Which experiment world to build, with its full parameter set.
///
/// Serialized externally tagged, so a config reads
/// `"scenario": {"least_squares": { ... }}` and omitted parameters fall
/// back to the built-in benchmark values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioConfig {
    LeastSquares(LsParams),
    Waypoint(WpParams),
}

/// A constructed world, either flavor, behind one handle.
#[derive(Debug, Clone)]
pub enum BuiltWorld {
    LeastSquares(LsScenario),
    Waypoint(WpScenario),
}

impl ScenarioConfig {
    pub fn tag(&self) -> &'static str {
        match self {
            ScenarioConfig::LeastSquares(_) => "least_squares",
            ScenarioConfig::Waypoint(_) => "waypoint",
        }
    }

    /// Parameter-level validity (no construction).
    pub fn validate(&self) -> Result<()> {
        match self {
            ScenarioConfig::LeastSquares(p) => p.validate(),
            ScenarioConfig::Waypoint(p) => p.validate(),
        }
    }

    /// Instantiate the world. The estimation scenario draws its support
    /// topology from the master seed's set-up stream; the formation
    /// scenario's lattice is deterministic.
    pub fn build(&self, master_seed: u64) -> Result<BuiltWorld> {
        Ok(match self {
            ScenarioConfig::LeastSquares(p) => {
                BuiltWorld::LeastSquares(LsScenario::new(p.clone(), master_seed)?)
            }
            ScenarioConfig::Waypoint(p) => BuiltWorld::Waypoint(WpScenario::new(p.clone())?),
        })
    }
}

impl BuiltWorld {
    pub fn model(&self) -> &NetworkModel {
        match self {
            BuiltWorld::LeastSquares(s) => s.model(),
            BuiltWorld::Waypoint(s) => s.model(),
        }
    }

    pub fn step_sizes(&self) -> StepSizes {
        match self {
            BuiltWorld::LeastSquares(s) => s.step_sizes(),
            BuiltWorld::Waypoint(s) => s.step_sizes(),
        }
    }

    /// Curvature constants `(m_f, L)` of the noise-free core.
    pub fn baseline_curvature(&self) -> Result<(f64, f64)> {
        match self {
            BuiltWorld::LeastSquares(s) => World::baseline_curvature(s),
            BuiltWorld::Waypoint(s) => World::baseline_curvature(s),
        }
    }

    /// Feasible-geometry scale constant the trigger thresholds divide by.
    pub fn threshold_radius(&self) -> f64 {
        match self {
            BuiltWorld::LeastSquares(s) => World::threshold_radius(s),
            BuiltWorld::Waypoint(s) => World::threshold_radius(s),
        }
    }
}

/// Trigger-policy section of a config. `nu` pins the density tolerance
/// absolutely and wins over `nu_ratio`; left unset, the tolerance scales
/// with the budget as `nu_ratio * epsilon`, which keeps budget sweeps
/// comparable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub mode: PolicyMode,
    pub epsilon: f64,
    pub eta: f64,
    pub nu: Option<f64>,
    pub nu_ratio: f64,
    pub transport: Transport,
    pub conservative_degrees: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            mode: PolicyMode::Full,
            epsilon: 1e-3,
            eta: 0.5,
            nu: None,
            nu_ratio: 0.25,
            transport: Transport::Support,
            conservative_degrees: false,
        }
    }
}

impl PolicyConfig {
    /// The concrete parameter set the engine consumes.
    pub fn resolved(&self) -> PolicyParams {
        PolicyParams {
            mode: self.mode,
            epsilon: self.epsilon,
            eta: self.eta,
            nu: self.nu.unwrap_or(self.nu_ratio * self.epsilon),
            transport: self.transport,
            conservative_degrees: self.conservative_degrees,
        }
    }
}

/// How nodes turn held distributions into expected gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradientConfig {
    /// Closed-form expectation through the distributions' moments.
    #[default]
    MeanField,
    /// Sample average over iid draws from the held distributions.
    MonteCarlo { samples: usize },
}

impl GradientConfig {
    pub fn mode(&self) -> GradientMode {
        match *self {
            GradientConfig::MeanField => GradientMode::MeanField,
            GradientConfig::MonteCarlo { samples } => GradientMode::MonteCarlo { samples },
        }
    }
}

/// Which measured curvature window `(m_f, L)` feeds the error bound in
/// the summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureSource {
    /// The state-independent noise-free core (default: reproducible
    /// across replications and available without simulating).
    #[default]
    NoiseFree,
    /// The tick-0 window of each replication (worst case across them).
    Initial,
    /// The extreme window observed anywhere in the run.
    RunExtremes,
}

fn default_reps() -> usize {
    25
}

fn default_seed() -> u64 {
    4
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// One batch experiment, fully pinned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    /// Ticks per replication.
    pub steps: u64,
    /// Replications averaged into the trace.
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub gradient: GradientConfig,
    /// Curvature window the summary's bound is evaluated with.
    #[serde(default)]
    pub curvature_source: CurvatureSource,
    /// Also write one CSV per replication next to the mean trace.
    #[serde(default)]
    pub raw_traces: bool,
    /// Record every transmission and write it as JSON lines per
    /// replication (heavy; off by default).
    #[serde(default)]
    pub log_messages: bool,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn resolved_policy(&self) -> PolicyParams {
        self.policy.resolved()
    }

    pub fn gradient_mode(&self) -> GradientMode {
        self.gradient.mode()
    }

    /// Replace the accuracy budget, rescaling the density tolerance with
    /// it: an absolute `nu` pinned for a different budget would silently
    /// change what a budget sweep compares.
    pub fn override_epsilon(&mut self, epsilon: f64) {
        self.policy.epsilon = epsilon;
        self.policy.nu = None;
    }

    /// Check every admission condition by name, without simulating.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport { checks: Vec::new(), constants: None };

        report.push(
            "run lengths",
            self.steps >= 1 && self.reps >= 1,
            format!("steps = {}, replications = {}", self.steps, self.reps),
        );

        let policy = self.resolved_policy();
        report.push(
            "trigger policy parameters",
            policy.validate().is_ok(),
            match policy.validate() {
                Ok(()) => format!(
                    "mode {:?}, epsilon = {}, eta = {}, nu = {}",
                    policy.mode, policy.epsilon, policy.eta, policy.nu
                ),
                Err(e) => e.to_string(),
            },
        );

        report.push(
            "gradient oracle",
            !matches!(self.gradient, GradientConfig::MonteCarlo { samples: 0 }),
            match self.gradient {
                GradientConfig::MeanField => "closed-form moment expectation".into(),
                GradientConfig::MonteCarlo { samples } => format!("{samples} samples per node"),
            },
        );

        match self.scenario.validate() {
            Ok(()) => report.push("scenario parameters", true, self.scenario.tag().into()),
            Err(e) => {
                report.push("scenario parameters", false, e.to_string());
                return report;
            }
        }

        let world = match self.scenario.build(self.seed) {
            Ok(w) => w,
            Err(e) => {
                report.push("support graph construction", false, e.to_string());
                return report;
            }
        };
        let model = world.model();
        let n = model.node_count();
        report.push(
            "support graph construction",
            true,
            format!("{n} nodes, {} edges", model.edges().len()),
        );

        let lambda2 = match model.expected_laplacian().lambda2() {
            Ok(v) => v,
            Err(e) => {
                report.push("union connectivity", false, e.to_string());
                return report;
            }
        };
        report.push(
            "union connectivity",
            lambda2 > 0.0,
            format!("lambda_2(expected Laplacian) = {lambda2:.6}"),
        );

        let (m_f, l) = match world.baseline_curvature() {
            Ok(c) => c,
            Err(e) => {
                report.push("objective curvature", false, e.to_string());
                return report;
            }
        };
        report.push(
            "objective curvature",
            m_f > 0.0 && l >= m_f,
            format!("m_f = {m_f:.6}, L = {l:.6}"),
        );

        let StepSizes { alpha, beta } = world.step_sizes();
        report.push(
            "consensus gain window",
            beta > 0.0 && beta < 1.0 / n as f64,
            format!("beta = {beta:.6} must lie strictly inside (0, 1/{n})"),
        );
        let alpha_limit = m_f / (l * l);
        report.push(
            "gradient step window",
            alpha > 0.0 && alpha < alpha_limit,
            format!("alpha = {alpha:.6} must lie strictly inside (0, {alpha_limit:.6})"),
        );

        let gamma = 1.0 - beta * lambda2;
        report.push(
            "network connectivity measure",
            gamma > 0.0 && gamma < 1.0,
            format!("gamma = {gamma:.6}"),
        );

        let inputs = analysis::BoundInputs {
            alpha,
            beta,
            epsilon: policy.epsilon,
            n,
            m_f,
            l,
            g: 0.0,
            delta_x: 0.0,
            gamma: gamma.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON),
            radius: world.threshold_radius(),
        };
        let (rho_ok, rho_detail, rho) = match analysis::contraction_factor(&inputs) {
            Ok(rho) => (true, format!("rho = {rho:.6}"), rho),
            Err(e) => (false, e.to_string(), f64::NAN),
        };
        report.push("error contraction", rho_ok, rho_detail);

        report.constants = Some(ReportConstants {
            n,
            edges: model.edges().len(),
            lambda2,
            gamma,
            m_f,
            l,
            alpha,
            beta,
            rho,
            radius: world.threshold_radius(),
        });
        report
    }
}

/// One named admission condition with its verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// The constants the admission checks were evaluated from, reported even
/// when a check fails (that is the point of the report).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReportConstants {
    pub n: usize,
    pub edges: usize,
    /// Algebraic connectivity of the expected Laplacian.
    pub lambda2: f64,
    pub gamma: f64,
    pub m_f: f64,
    pub l: f64,
    pub alpha: f64,
    pub beta: f64,
    /// NaN when the gradient step admits no contraction.
    pub rho: f64,
    pub radius: f64,
}

/// Pass/fail per admission condition, plus the constants involved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub constants: Option<ReportConstants>,
}

impl ValidationReport {
    fn push(&mut self, name: &'static str, passed: bool, detail: String) {
        self.checks.push(Check { name, passed, detail });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {}: {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            )?;
        }
        if let Some(k) = &self.constants {
            writeln!(
                f,
                "constants: n = {}, edges = {}, lambda_2 = {:.6}, gamma = {:.6}, m_f = {:.6}, L = {:.6}, alpha = {:.6}, beta = {:.6}, rho = {:.6}, radius = {:.6}",
                k.n, k.edges, k.lambda2, k.gamma, k.m_f, k.l, k.alpha, k.beta, k.rho, k.radius
            )?;
        }
        write!(
            f,
            "{}",
            if self.passed() { "all admission conditions hold" } else { "ADMISSION FAILED" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_ls_json() -> &'static str {
        r#"{"scenario": {"least_squares": {}}, "steps": 120}"#
    }

    #[test]
    fn minimal_config_fills_in_every_default() {
        let cfg = RunConfig::from_json(minimal_ls_json()).unwrap();
        assert_eq!(cfg.steps, 120);
        assert_eq!(cfg.reps, 25);
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.policy, PolicyConfig::default());
        assert_eq!(cfg.gradient, GradientConfig::MeanField);
        assert_eq!(cfg.curvature_source, CurvatureSource::NoiseFree);
        assert!(!cfg.raw_traces && !cfg.log_messages);
        assert_eq!(cfg.out_dir, PathBuf::from("out"));
        match &cfg.scenario {
            ScenarioConfig::LeastSquares(p) => assert_eq!(*p, LsParams::default()),
            other => panic!("wrong scenario: {other:?}"),
        }
    }

    #[test]
    fn json_round_trip_preserves_the_config() {
        let mut cfg = RunConfig::from_json(minimal_ls_json()).unwrap();
        cfg.policy.mode = PolicyMode::LinearSimplified;
        cfg.policy.nu = Some(0.7);
        cfg.gradient = GradientConfig::MonteCarlo { samples: 500 };
        cfg.curvature_source = CurvatureSource::RunExtremes;
        let text = cfg.to_json_pretty().unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected_loudly() {
        let bad = r#"{"scenario": {"least_squares": {}}, "steps": 5, "stepss": 6}"#;
        assert!(RunConfig::from_json(bad).is_err());
        let bad_nested = r#"{"scenario": {"least_squares": {"nodez": 3}}, "steps": 5}"#;
        assert!(RunConfig::from_json(bad_nested).is_err());
        let bad_policy =
            r#"{"scenario": {"least_squares": {}}, "steps": 5, "policy": {"epsilonn": 1}}"#;
        assert!(RunConfig::from_json(bad_policy).is_err());
    }

    #[test]
    fn density_tolerance_scales_with_the_budget_unless_pinned() {
        let mut cfg = RunConfig::from_json(minimal_ls_json()).unwrap();
        cfg.policy.epsilon = 0.2;
        assert_eq!(cfg.resolved_policy().nu, 0.05);
        cfg.policy.nu = Some(3.5);
        assert_eq!(cfg.resolved_policy().nu, 3.5);
        // A budget override drops the pin so sweeps stay comparable.
        cfg.override_epsilon(0.4);
        assert_eq!(cfg.resolved_policy().nu, 0.1);
        assert_eq!(cfg.resolved_policy().epsilon, 0.4);
    }

    #[test]
    fn default_benchmark_passes_every_admission_check() {
        let report = RunConfig::from_json(minimal_ls_json()).unwrap().validate();
        assert!(report.passed(), "{report}");
        let k = report.constants.expect("constants are reported");
        assert_eq!(k.n, 15);
        // Connectivity band of the frozen default topology (seed 4): a
        // band, not a pin, so numerical library changes surface here
        // before they surface in acceptance runs.
        assert!(k.gamma > 0.97 && k.gamma < 0.99, "gamma = {}", k.gamma);
        assert!(k.rho > 0.0 && k.rho < 1.0);
        let text = report.to_string();
        assert!(text.contains("PASS error contraction"));
        assert!(text.ends_with("all admission conditions hold"));
    }

    #[test]
    fn waypoint_defaults_pass_and_report_the_lattice() {
        let cfg = RunConfig::from_json(
            r#"{"scenario": {"waypoint": {}}, "steps": 10, "policy": {"epsilon": 0.02}}"#,
        )
        .unwrap();
        let report = cfg.validate();
        assert!(report.passed(), "{report}");
        let k = report.constants.unwrap();
        assert_eq!(k.n, 16);
        assert_eq!(k.edges, 24);
    }

    #[test]
    fn boundary_gains_fail_by_name() {
        // Consensus gain exactly 1/n.
        let mut cfg = RunConfig::from_json(minimal_ls_json()).unwrap();
        match &mut cfg.scenario {
            ScenarioConfig::LeastSquares(p) => p.consensus_gain = Some(1.0 / 15.0),
            _ => unreachable!(),
        }
        let report = cfg.validate();
        assert!(!report.passed());
        let gate = report.checks.iter().find(|c| c.name == "consensus gain window").unwrap();
        assert!(!gate.passed);
        // Other windows still evaluated and reported.
        assert!(report.checks.iter().any(|c| c.name == "gradient step window" && c.passed));
        assert!(report.constants.is_some());
        assert!(report.to_string().contains("FAIL consensus gain window"));

        // Gradient step exactly at the contraction boundary m_f / L^2.
        let mut cfg = RunConfig::from_json(minimal_ls_json()).unwrap();
        let world = cfg.scenario.build(cfg.seed).unwrap();
        let (m_f, l) = world.baseline_curvature().unwrap();
        match &mut cfg.scenario {
            ScenarioConfig::LeastSquares(p) => p.gradient_step = Some(m_f / (l * l)),
            _ => unreachable!(),
        }
        let report = cfg.validate();
        assert!(!report.passed());
        assert!(report.to_string().contains("FAIL gradient step window"));
        // The contraction line documents rho = 1 at the boundary.
        let contraction = report.checks.iter().find(|c| c.name == "error contraction").unwrap();
        assert!(!contraction.passed);
    }

    #[test]
    fn nonsense_parameters_fail_their_checks_without_erroring() {
        let cfg = RunConfig::from_json(
            r#"{"scenario": {"least_squares": {}}, "steps": 0, "policy": {"epsilon": 0.0}}"#,
        )
        .unwrap();
        let report = cfg.validate();
        assert!(!report.passed());
        assert!(report.to_string().contains("FAIL run lengths"));
        assert!(report.to_string().contains("FAIL trigger policy parameters"));
    }

    #[test]
    fn disconnected_support_is_reported_not_panicked() {
        let cfg = RunConfig::from_json(
            r#"{"scenario": {"least_squares": {"geo_radius": 0.01}}, "steps": 5}"#,
        )
        .unwrap();
        let report = cfg.validate();
        assert!(!report.passed());
        assert!(report.to_string().contains("FAIL support graph construction"));
        assert!(report.constants.is_none());
    }
}
