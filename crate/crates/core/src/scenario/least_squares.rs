//! Collaborative estimation world: a sensor fleet tracks a drifting
//! planar target through gain-perturbed measurements.
//!
//! Node `i` measures `z_i = (1 + s_i) target + w_i`, where the gain
//! perturbation `s_i` is the sum of the scalar environmental noises of
//! `i` and its support-graph neighbors. Each noise follows a Rayleigh
//! distribution truncated to a fixed window whose scale drifts
//! sinusoidally with a random-walk innovation, so the distributions other
//! nodes hold go stale unless refreshed. The per-node cost is the squared
//! measurement residual `|| z_i - (1 + s_i) x ||^2`; its gradient is
//! quadratic in each individual noise, which is what makes frozen
//! gradient snapshots exact objects rather than approximations.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dist::{evolve_rayleigh, Pdf, RayleighEvolution};
use crate::netgraph::NetworkModel;
use crate::objective::{BoxSet, ComponentSet, GradientSnapshot, SnapshotForm};
use crate::rng::setup_stream;
use crate::solver::StepSizes;
use crate::{Error, Result};

/// Parameters of the collaborative estimation world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LsParams {
    pub nodes: usize,
    pub state_dim: usize,
    /// Connection radius of the random geometric support graph (drawn on
    /// the unit square from the master seed's set-up stream).
    pub geo_radius: f64,
    /// Per-edge Bernoulli activation probability.
    pub edge_activation: f64,
    /// Feasible set is the centered cube with this half width.
    pub box_half_width: f64,
    /// Target drift matrix (row-major, `state_dim x state_dim`).
    pub drift: Vec<Vec<f64>>,
    /// Variance of the per-coordinate target process noise.
    pub process_noise_var: f64,
    /// Variance of the per-coordinate measurement noise.
    pub measurement_noise_var: f64,
    /// Target position at tick 0.
    pub target_init: Vec<f64>,
    /// Truncation window of every noise distribution.
    pub noise_lo: f64,
    pub noise_hi: f64,
    /// Positive floor the drifting scales are clamped to.
    pub scale_floor: f64,
    /// Variance of the scales' per-tick Gaussian innovation.
    pub innovation_var: f64,
    /// Gradient step override; `None` uses the built-in conservative value.
    pub gradient_step: Option<f64>,
    /// Consensus gain override; `None` uses the built-in near-limit value.
    pub consensus_gain: Option<f64>,
}

impl Default for LsParams {
    /// The built-in benchmark configuration: fifteen sensors on a random
    /// geometric graph with sparse random links, slowly drifting noise
    /// scales, and a near-unit-root target drift.
    fn default() -> Self {
        LsParams {
            nodes: 15,
            state_dim: 2,
            geo_radius: 0.42,
            edge_activation: 0.3,
            box_half_width: 0.5,
            drift: vec![vec![0.99, 0.01], vec![0.0, 1.0]],
            process_noise_var: 1e-6,
            measurement_noise_var: 1e-6,
            target_init: vec![0.2, 0.3],
            noise_lo: 0.0,
            noise_hi: 3.0,
            scale_floor: 1e-3,
            innovation_var: 1e-2,
            gradient_step: None,
            consensus_gain: None,
        }
    }
}

impl LsParams {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return Err(Error::TooFewNodes { min: 2, got: self.nodes });
        }
        if self.state_dim == 0 {
            return Err(Error::NonPositive { name: "state_dim", value: 0.0 });
        }
        if self.drift.len() != self.state_dim
            || self.drift.iter().any(|row| row.len() != self.state_dim)
        {
            return Err(Error::Config(format!(
                "drift matrix must be {0} x {0}",
                self.state_dim
            )));
        }
        if self.target_init.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim,
                got: self.target_init.len(),
            });
        }
        if !(self.noise_lo >= 0.0 && self.noise_hi > self.noise_lo) {
            return Err(Error::BadSupport { lo: self.noise_lo, hi: self.noise_hi });
        }
        if !(self.scale_floor > 0.0) {
            return Err(Error::NonPositive { name: "scale_floor", value: self.scale_floor });
        }
        if self.process_noise_var < 0.0 {
            return Err(Error::NonPositive {
                name: "process_noise_var",
                value: self.process_noise_var,
            });
        }
        if self.measurement_noise_var < 0.0 {
            return Err(Error::NonPositive {
                name: "measurement_noise_var",
                value: self.measurement_noise_var,
            });
        }
        if self.innovation_var < 0.0 {
            return Err(Error::NonPositive { name: "innovation_var", value: self.innovation_var });
        }
        if !(self.box_half_width > 0.0) {
            return Err(Error::NonPositive {
                name: "box_half_width",
                value: self.box_half_width,
            });
        }
        if let Some(a) = self.gradient_step {
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::NonPositive { name: "gradient_step", value: a });
            }
        }
        if let Some(b) = self.consensus_gain {
            if !(b > 0.0) || !b.is_finite() {
                return Err(Error::NonPositive { name: "consensus_gain", value: b });
            }
        }
        Ok(())
    }
}

/// The instantiated world. The topology is derived from the master
/// seed's set-up stream and shared by every replication; scale drift
/// laws and initial scales are drawn per replication (see
/// [`Self::init_state`]).
#[derive(Debug, Clone)]
pub struct LsScenario {
    params: LsParams,
    model: NetworkModel,
    /// Per node: sorted `{i} + neighbors(i)` — whose noises enter its cost.
    sources: Vec<Vec<usize>>,
    feasible: BoxSet,
    drift: DMatrix<f64>,
}

/// Per-replication environment state.
#[derive(Debug, Clone)]
pub struct LsState {
    /// This replication's per-node scale drift laws.
    pub laws: Vec<RayleighEvolution>,
    /// Current true Rayleigh scales.
    pub sigma: Vec<f64>,
    /// Current target position.
    pub target: DVector<f64>,
    /// Current per-node measurements.
    pub observations: Vec<DVector<f64>>,
}

impl LsScenario {
    pub fn new(params: LsParams, master_seed: u64) -> Result<Self> {
        params.validate()?;
        let mut setup = setup_stream(master_seed);
        let model = NetworkModel::random_geometric(
            params.nodes,
            params.geo_radius,
            params.edge_activation,
            &mut setup,
        )?;
        let n = params.nodes;
        let mut sources = Vec::with_capacity(n);
        for i in 0..n {
            let mut s = model.neighbors(i);
            s.push(i);
            s.sort_unstable();
            sources.push(s);
        }
        let feasible = BoxSet::symmetric(params.state_dim, params.box_half_width)?;
        let drift = DMatrix::from_fn(params.state_dim, params.state_dim, |r, c| params.drift[r][c]);
        let scenario = LsScenario { params, model, sources, feasible, drift };
        scenario.self_check_gradients()?;
        Ok(scenario)
    }

    /// Construction-time probe of every node's closed-form gradient
    /// against finite differences on synthetic observations.
    fn self_check_gradients(&self) -> Result<()> {
        let d = self.params.state_dim;
        for i in 0..self.params.nodes {
            let observation =
                DVector::from_fn(d, |r, _| 0.4 - 0.15 * ((i + r) % 3) as f64);
            let comp =
                LsComponent { node: i, sources: &self.sources[i], observation: &observation };
            let probes: Vec<(DVector<f64>, Vec<f64>)> = (0..2)
                .map(|p| {
                    let x = DVector::from_fn(d, |r, _| {
                        0.3 * if (r + p) % 2 == 0 { 1.0 } else { -0.7 }
                    });
                    let noises =
                        (0..comp.sources().len()).map(|s| 0.2 + 0.1 * s as f64).collect();
                    (x, noises)
                })
                .collect();
            crate::objective::finite_difference_check(&comp, &probes, 1e-4)?;
        }
        Ok(())
    }

    pub fn params(&self) -> &LsParams {
        &self.params
    }

    pub fn model(&self) -> &NetworkModel {
        &self.model
    }

    pub fn feasible(&self) -> &BoxSet {
        &self.feasible
    }

    pub fn sources(&self, i: usize) -> &[usize] {
        &self.sources[i]
    }

    pub fn node_count(&self) -> usize {
        self.params.nodes
    }

    /// Canonical step sizes for this world: a conservative constant
    /// gradient step and a consensus gain just under the stability limit,
    /// unless the parameters override either.
    pub fn step_sizes(&self) -> StepSizes {
        StepSizes {
            alpha: self.params.gradient_step.unwrap_or(1.0 / 400.0),
            beta: self
                .params
                .consensus_gain
                .unwrap_or(1.0 / self.params.nodes as f64 - 1e-4),
        }
    }

    /// Fresh replication state at tick 0. The initial scales, drift
    /// amplitudes, and phases are drawn here — once per replication —
    /// followed by the tick-0 measurements. Consumption order is fixed:
    /// per node one uniform (initial scale) and one standard normal
    /// (amplitude, which also pins the phase), then the observation
    /// draws of [`Self::advance`].
    pub fn init_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<LsState> {
        let n = self.params.nodes;
        let unit_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut laws = Vec::with_capacity(n);
        let mut sigma = Vec::with_capacity(n);
        for i in 0..n {
            let u: f64 = rng.gen();
            let ordinal = (i + 1) as f64;
            sigma.push((ordinal / n as f64 + 0.3 * (u - 0.3)).max(self.params.scale_floor));
            let amp = unit_normal.sample(rng);
            let law = RayleighEvolution {
                amp,
                freq: ordinal * std::f64::consts::PI / 200.0,
                phase: 200.0 * std::f64::consts::PI * amp,
                innovation_var: self.params.innovation_var,
                clamp_lo: self.params.scale_floor,
                clamp_hi: self.params.noise_hi,
            };
            law.validate()?;
            laws.push(law);
        }
        let target = DVector::from_row_slice(&self.params.target_init);
        let mut state = LsState { laws, sigma, target, observations: Vec::new() };
        state.observations = self.draw_observations(&state.sigma, &state.target, rng)?;
        Ok(state)
    }

    /// Advance the environment to tick `k`: drift every scale, drift the
    /// target, redraw measurements. Consumption order is fixed: one normal
    /// per node (scale innovations), `state_dim` normals (target), then
    /// the measurement draws as in [`Self::init_state`].
    pub fn advance<R: Rng + ?Sized>(&self, state: &mut LsState, k: u64, rng: &mut R) -> Result<()> {
        for l in 0..state.sigma.len() {
            state.sigma[l] = evolve_rayleigh(state.sigma[l], &state.laws[l], k, rng);
        }
        let process = Normal::new(0.0, self.params.process_noise_var.sqrt())
            .map_err(|_| Error::NonPositive {
                name: "process_noise_var",
                value: self.params.process_noise_var,
            })?;
        let noise = DVector::from_fn(self.params.state_dim, |_, _| process.sample(rng));
        state.target = &self.drift * &state.target + noise;
        state.observations = self.draw_observations(&state.sigma, &state.target, rng)?;
        Ok(())
    }

    fn draw_observations<R: Rng + ?Sized>(
        &self,
        sigma: &[f64],
        target: &DVector<f64>,
        rng: &mut R,
    ) -> Result<Vec<DVector<f64>>> {
        let n = self.params.nodes;
        // One shared noise realization per node per tick: every cost that
        // includes node l's environment sees the same draw.
        let mut noises = Vec::with_capacity(n);
        for &scale in &sigma[..n] {
            noises.push(self.true_pdf_for_scale(scale)?.sample(rng));
        }
        let meas = Normal::new(0.0, self.params.measurement_noise_var.sqrt())
            .map_err(|_| Error::NonPositive {
                name: "measurement_noise_var",
                value: self.params.measurement_noise_var,
            })?;
        let mut observations = Vec::with_capacity(n);
        for i in 0..n {
            let gain = 1.0 + self.sources[i].iter().map(|&l| noises[l]).sum::<f64>();
            let w = DVector::from_fn(self.params.state_dim, |_, _| meas.sample(rng));
            observations.push(target * gain + w);
        }
        Ok(observations)
    }

    /// The true current distribution of node `i`'s noise.
    pub fn true_pdf(&self, i: usize, state: &LsState) -> Result<Pdf> {
        self.true_pdf_for_scale(state.sigma[i])
    }

    fn true_pdf_for_scale(&self, sigma: f64) -> Result<Pdf> {
        Pdf::truncated_rayleigh(sigma, self.params.noise_lo, self.params.noise_hi)
    }

    /// Node `i`'s component cost at the current environment state.
    pub fn component<'a>(&'a self, i: usize, state: &'a LsState) -> LsComponent<'a> {
        LsComponent { node: i, sources: &self.sources[i], observation: &state.observations[i] }
    }

    /// Gain moments `(E[1 + s_i], E[(1 + s_i)^2])` for every node under
    /// the true current distributions.
    pub fn true_gain_moments(&self, state: &LsState) -> Result<Vec<(f64, f64)>> {
        let per_node: Vec<(f64, f64)> = state
            .sigma
            .iter()
            .map(|&s| self.true_pdf_for_scale(s).map(|p| p.moments()))
            .collect::<Result<_>>()?;
        Ok(self
            .sources
            .iter()
            .map(|srcs| {
                let moments: Vec<(f64, f64)> = srcs.iter().map(|&l| per_node[l]).collect();
                gain_moments(&moments)
            })
            .collect())
    }

    /// Minimizer of the expected network cost over the feasible set under
    /// the true current distributions. The expected cost is an isotropic
    /// quadratic, so box projection of the unconstrained minimizer is the
    /// exact constrained minimizer; a projected-gradient fixed-point
    /// polish verifies that (and would repair it were the quadratic ever
    /// anisotropic), to within 1e-12.
    pub fn true_optimizer(&self, state: &LsState) -> Result<DVector<f64>> {
        let gains = self.true_gain_moments(state)?;
        let mut num = DVector::zeros(self.params.state_dim);
        let mut den = 0.0;
        for (i, &(b, a)) in gains.iter().enumerate() {
            num.axpy(b, &state.observations[i], 1.0);
            den += a;
        }
        let mut x = self.feasible.project(&(num / den));
        // Fixed-point polish: x is optimal iff x = P(x - t * grad F(x)).
        let step = 1.0 / (2.0 * den);
        for _ in 0..200 {
            let mut grad = DVector::zeros(self.params.state_dim);
            for (i, &(b, a)) in gains.iter().enumerate() {
                grad.axpy(2.0 * a, &x, 1.0);
                grad.axpy(-2.0 * b, &state.observations[i], 1.0);
            }
            let next = self.feasible.project(&(&x - step * grad));
            let moved = (&next - &x).norm();
            x = next;
            if moved <= 1e-12 {
                return Ok(x);
            }
        }
        Err(Error::InvariantBreach {
            tick: 0,
            what: "optimizer fixed-point polish did not settle within 200 iterations".into(),
        })
    }

    /// Expected gradient of node `i`'s cost at `x` under supplied gain
    /// moments (the `(E[1+s], E[(1+s)^2])` pair).
    pub fn expected_gradient_at(
        &self,
        i: usize,
        x: &DVector<f64>,
        gain: (f64, f64),
        state: &LsState,
    ) -> DVector<f64> {
        let (b, a) = gain;
        let mut g = x * (2.0 * a);
        g.axpy(-2.0 * b, &state.observations[i], 1.0);
        g
    }

    /// Largest, over nodes, norm of the sum of all *other* nodes' expected
    /// gradients at `x` — the interaction constant the error bound uses.
    pub fn interaction_bound(&self, x: &DVector<f64>, state: &LsState) -> Result<f64> {
        let gains = self.true_gain_moments(state)?;
        let per_node: Vec<DVector<f64>> = (0..self.params.nodes)
            .map(|i| self.expected_gradient_at(i, x, gains[i], state))
            .collect();
        let total: DVector<f64> = per_node.iter().fold(
            DVector::zeros(self.params.state_dim),
            |acc, g| acc + g,
        );
        Ok(per_node.iter().map(|g| (&total - g).norm()).fold(0.0, f64::max))
    }

    /// Smallest and largest expected-Hessian eigenvalues across nodes at
    /// the current true distributions. The Hessian of each component is
    /// `2 E[(1+s)^2] I`, so the extremes are exact.
    pub fn curvature_extremes(&self, state: &LsState) -> Result<(f64, f64)> {
        let gains = self.true_gain_moments(state)?;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(_, a) in &gains {
            lo = lo.min(2.0 * a);
            hi = hi.max(2.0 * a);
        }
        Ok((lo, hi))
    }

    /// Curvature constants of the noise-free core of this world (all
    /// noises pinned to zero): the measurement gain collapses to 1 and
    /// every component Hessian is `2 I`.
    pub fn noise_free_constants(&self) -> (f64, f64) {
        let zero_moments = vec![(0.0, 0.0); self.sources[0].len()];
        // Evaluated through the same moment machinery as the honest
        // estimates, not hardcoded.
        let state = LsState {
            laws: Vec::new(),
            sigma: vec![self.params.scale_floor; self.params.nodes],
            target: DVector::zeros(self.params.state_dim),
            observations: vec![DVector::zeros(self.params.state_dim); self.params.nodes],
        };
        let comp = self.component(0, &state);
        let h = comp.expected_hessian(&DVector::zeros(self.params.state_dim), &zero_moments);
        let ev = crate::netgraph::jacobi_eigenvalues(
            &h,
            crate::netgraph::EIGEN_TOL,
            crate::netgraph::EIGEN_MAX_SWEEPS,
        )
        .expect("closed-form Hessian is symmetric");
        (ev[0], *ev.last().expect("nonempty"))
    }
}

/// Moments of the measurement gain `1 + s`, `s` the sum of independent
/// noises with the given per-source `(mean, second_moment)` pairs.
fn gain_moments(moments: &[(f64, f64)]) -> (f64, f64) {
    let sum_mean: f64 = moments.iter().map(|m| m.0).sum();
    let sum_second: f64 = moments.iter().map(|m| m.1).sum();
    let sum_mean_sq: f64 = moments.iter().map(|m| m.0 * m.0).sum();
    let first = 1.0 + sum_mean;
    // E[s^2] = Var(s) + E[s]^2 with independent terms.
    let s_second = sum_second - sum_mean_sq + sum_mean * sum_mean;
    let second = 1.0 + 2.0 * sum_mean + s_second;
    (first, second)
}

/// One node's squared-residual cost `|| z - (1 + s) x ||^2`.
#[derive(Debug, Clone, Copy)]
pub struct LsComponent<'a> {
    node: usize,
    sources: &'a [usize],
    observation: &'a DVector<f64>,
}

impl LsComponent<'_> {
    /// Moments of the sum of all sources except position `skip`, as a
    /// `(mean, second_moment)` pair of the *partial* sum.
    fn partial_sum_moments(&self, moments: &[(f64, f64)], skip: usize) -> (f64, f64) {
        let mut mean = 0.0;
        let mut second = 0.0;
        let mut mean_sq = 0.0;
        for (pos, m) in moments.iter().enumerate() {
            if pos == skip {
                continue;
            }
            mean += m.0;
            second += m.1;
            mean_sq += m.0 * m.0;
        }
        (mean, second - mean_sq + mean * mean)
    }
}

impl ComponentSet for LsComponent<'_> {
    fn dim(&self) -> usize {
        self.observation.len()
    }

    fn sources(&self) -> &[usize] {
        self.sources
    }

    fn value(&self, x: &DVector<f64>, noises: &[f64]) -> f64 {
        let gain = 1.0 + noises.iter().sum::<f64>();
        (self.observation - x * gain).norm_squared()
    }

    fn grad_into(&self, x: &DVector<f64>, noises: &[f64], out: &mut DVector<f64>) {
        let gain = 1.0 + noises.iter().sum::<f64>();
        out.copy_from(x);
        *out *= 2.0 * gain * gain;
        out.axpy(-2.0 * gain, self.observation, 1.0);
    }

    fn moment_grad(&self, x: &DVector<f64>, moments: &[(f64, f64)]) -> DVector<f64> {
        let (b, a) = gain_moments(moments);
        let mut out = x * (2.0 * a);
        out.axpy(-2.0 * b, self.observation, 1.0);
        out
    }

    fn snapshot(
        &self,
        point: &DVector<f64>,
        source_pos: usize,
        moments: &[(f64, f64)],
        tick: u64,
    ) -> GradientSnapshot {
        // Freeze every other source at its moments; the remaining gradient
        // is an exact quadratic in the counterpart's noise w:
        //   g(w) = 2 [ (1 + 2 m + q) + 2 (1 + m) w + w^2 ] v
        //        - 2 [ (1 + m) + w ] z,
        // with m, q the partial sum's mean and second moment.
        let (m, q) = self.partial_sum_moments(moments, source_pos);
        let mut c0 = point * (2.0 * (1.0 + 2.0 * m + q));
        c0.axpy(-2.0 * (1.0 + m), self.observation, 1.0);
        let mut c1 = point * (4.0 * (1.0 + m));
        c1.axpy(-2.0, self.observation, 1.0);
        let c2 = point * 2.0;
        GradientSnapshot {
            owner: self.node,
            source: self.sources[source_pos],
            tick,
            point: point.clone(),
            form: SnapshotForm::Quadratic { c0, c1, c2 },
        }
    }

    fn expected_hessian(&self, _x: &DVector<f64>, moments: &[(f64, f64)]) -> DMatrix<f64> {
        let (_, a) = gain_moments(moments);
        DMatrix::identity(self.dim(), self.dim()) * (2.0 * a)
    }
}

/// Engine adapter: every node maintains the one shared estimate, so the
/// stacked frame is a single component of dimension `state_dim`.
impl crate::solver::World for LsScenario {
    type State = LsState;
    type TickEnv = ();

    fn model(&self) -> &NetworkModel {
        &self.model
    }

    fn component_count(&self) -> usize {
        1
    }

    fn comp_dim(&self, _c: usize) -> usize {
        self.params.state_dim
    }

    fn block(&self, _i: usize) -> &[usize] {
        &[0]
    }

    fn feasible(&self, _i: usize) -> BoxSet {
        self.feasible.clone()
    }

    fn threshold_radius(&self) -> f64 {
        self.feasible.corner_norm()
    }

    fn step_sizes(&self) -> StepSizes {
        LsScenario::step_sizes(self)
    }

    fn baseline_curvature(&self) -> Result<(f64, f64)> {
        Ok(self.noise_free_constants())
    }

    fn curvature(&self, state: &LsState) -> Result<(f64, f64)> {
        self.curvature_extremes(state)
    }

    fn init_state(&self, rng: &mut ChaCha8Rng) -> Result<LsState> {
        LsScenario::init_state(self, rng)
    }

    fn advance(&self, state: &mut LsState, k: u64, rng: &mut ChaCha8Rng) -> Result<()> {
        LsScenario::advance(self, state, k, rng)
    }

    fn true_pdf(&self, state: &LsState, i: usize, _k: u64) -> Result<Pdf> {
        LsScenario::true_pdf(self, i, state)
    }

    fn tick_env(&self, _state: &LsState, _k: u64) -> Result<()> {
        Ok(())
    }

    fn components<'a>(
        &'a self,
        state: &'a LsState,
        _env: &'a (),
        _k: u64,
    ) -> Result<Vec<Box<dyn ComponentSet + 'a>>> {
        Ok((0..self.node_count())
            .map(|i| Box::new(self.component(i, state)) as Box<dyn ComponentSet + 'a>)
            .collect())
    }

    fn true_optimizer(&self, state: &LsState, _k: u64) -> Result<DVector<f64>> {
        LsScenario::true_optimizer(self, state)
    }

    fn interaction_bound(&self, state: &LsState, x: &DVector<f64>, _k: u64) -> Result<f64> {
        LsScenario::interaction_bound(self, x, state)
    }

    fn linear_coeff_norm(&self) -> Option<f64> {
        // The gradient is quadratic in each noise (the gain multiplies the
        // estimate), so the mean-drift shortcut has no exact coefficient.
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{mc_expected_gradient, moment_expected_gradient};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scenario() -> LsScenario {
        LsScenario::new(LsParams::default(), 12345).unwrap()
    }

    fn small_scenario() -> LsScenario {
        LsScenario::new(
            LsParams { nodes: 4, geo_radius: 2.0, ..LsParams::default() },
            7,
        )
        .unwrap()
    }

    #[test]
    fn topology_is_deterministic_in_the_master_seed() {
        let a = LsScenario::new(LsParams::default(), 42).unwrap();
        let b = LsScenario::new(LsParams::default(), 42).unwrap();
        assert_eq!(a.model.edges(), b.model.edges());
        let c = LsScenario::new(LsParams::default(), 43).unwrap();
        assert_ne!(a.model.edges(), c.model.edges());
    }

    #[test]
    fn drift_laws_are_per_replication_draws() {
        let s = scenario();
        let mut rng_a = ChaCha8Rng::seed_from_u64(8);
        let mut rng_b = ChaCha8Rng::seed_from_u64(8);
        let mut rng_c = ChaCha8Rng::seed_from_u64(9);
        let a = s.init_state(&mut rng_a).unwrap();
        let b = s.init_state(&mut rng_b).unwrap();
        let c = s.init_state(&mut rng_c).unwrap();
        assert_eq!(a.laws, b.laws);
        assert_eq!(a.sigma, b.sigma);
        assert_ne!(a.laws, c.laws);
        assert_ne!(a.sigma, c.sigma);
    }

    #[test]
    fn sources_are_own_node_plus_neighbors_sorted() {
        let s = scenario();
        for i in 0..s.node_count() {
            let sources = s.sources(i);
            assert!(sources.contains(&i));
            assert!(sources.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(sources.len(), s.model().degree(i) + 1);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = small_scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let state = s.init_state(&mut rng).unwrap();
        let comp = s.component(1, &state);
        let noises: Vec<f64> = (0..comp.sources().len()).map(|j| 0.2 + 0.1 * j as f64).collect();
        let x = DVector::from_row_slice(&[0.31, -0.12]);
        let mut grad = DVector::zeros(2);
        comp.grad_into(&x, &noises, &mut grad);
        let h = 1e-6;
        for d in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[d] += h;
            xm[d] -= h;
            let fd = (comp.value(&xp, &noises) - comp.value(&xm, &noises)) / (2.0 * h);
            assert_relative_eq!(grad[d], fd, epsilon = 1e-5, max_relative = 1e-5);
        }
    }

    #[test]
    fn moment_gradient_agrees_with_monte_carlo() {
        let s = small_scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let state = s.init_state(&mut rng).unwrap();
        let comp = s.component(2, &state);
        let pdfs: Vec<Pdf> =
            comp.sources().iter().map(|&l| s.true_pdf(l, &state).unwrap()).collect();
        let refs: Vec<&Pdf> = pdfs.iter().collect();
        let x = DVector::from_row_slice(&[0.1, 0.2]);
        let exact = moment_expected_gradient(&comp, &x, &refs).unwrap();
        let mc = mc_expected_gradient(&comp, &x, &refs, 400_000, &mut rng).unwrap();
        for d in 0..2 {
            assert_relative_eq!(exact[d], mc[d], epsilon = 0.05, max_relative = 0.02);
        }
    }

    #[test]
    fn snapshot_integrates_back_to_the_full_expected_gradient() {
        // Freezing all-but-one source at moments and then taking the
        // expectation over the remaining noise must reproduce the full
        // expected gradient exactly (sources are independent).
        let s = small_scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let state = s.init_state(&mut rng).unwrap();
        let comp = s.component(0, &state);
        let pdfs: Vec<Pdf> =
            comp.sources().iter().map(|&l| s.true_pdf(l, &state).unwrap()).collect();
        let refs: Vec<&Pdf> = pdfs.iter().collect();
        let moments: Vec<(f64, f64)> = pdfs.iter().map(|p| p.moments()).collect();
        let x = DVector::from_row_slice(&[-0.2, 0.4]);
        let full = moment_expected_gradient(&comp, &x, &refs).unwrap();
        for pos in 0..comp.sources().len() {
            let snap = comp.snapshot(&x, pos, &moments, 0);
            let back = snap.expectation(moments[pos]);
            assert_relative_eq!(back, full.clone(), epsilon = 1e-12);
        }
    }

    #[test]
    fn snapshot_quadratic_coefficient_is_twice_the_point() {
        let s = small_scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let state = s.init_state(&mut rng).unwrap();
        let comp = s.component(3, &state);
        let moments = vec![(0.5, 0.5); comp.sources().len()];
        let x = DVector::from_row_slice(&[0.25, -0.45]);
        let snap = comp.snapshot(&x, 0, &moments, 7);
        let SnapshotForm::Quadratic { c2, .. } = &snap.form;
        assert_relative_eq!(c2.clone(), x * 2.0, epsilon = 1e-15);
        assert_eq!(snap.tick, 7);
    }

    #[test]
    fn true_optimizer_is_interior_stationary_point_or_boundary_clamp() {
        let s = scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let state = s.init_state(&mut rng).unwrap();
        let x_star = s.true_optimizer(&state).unwrap();
        assert!(s.feasible().contains(&x_star, 0.0));
        let gains = s.true_gain_moments(&state).unwrap();
        let total: DVector<f64> = (0..s.node_count())
            .map(|i| s.expected_gradient_at(i, &x_star, gains[i], &state))
            .fold(DVector::zeros(2), |acc, g| acc + g);
        let interior = (0..2).all(|d| x_star[d].abs() < s.params().box_half_width - 1e-9);
        if interior {
            assert!(total.norm() < 1e-9, "interior optimizer must be stationary, |g| = {}", total.norm());
        }

        // Push the target far outside the box: the optimizer must clamp,
        // and clamping is exact because the quadratic is isotropic.
        let mut far = state.clone();
        for z in &mut far.observations {
            z.fill(25.0);
        }
        let clamped = s.true_optimizer(&far).unwrap();
        assert_relative_eq!(clamped[0], s.params().box_half_width, epsilon = 1e-12);
        assert_relative_eq!(clamped[1], s.params().box_half_width, epsilon = 1e-12);
    }

    #[test]
    fn advance_keeps_scales_in_window_and_is_deterministic() {
        let s = scenario();
        let mut rng_a = ChaCha8Rng::seed_from_u64(8);
        let mut rng_b = ChaCha8Rng::seed_from_u64(8);
        let mut state_a = s.init_state(&mut rng_a).unwrap();
        let mut state_b = s.init_state(&mut rng_b).unwrap();
        for k in 1..=50 {
            s.advance(&mut state_a, k, &mut rng_a).unwrap();
            s.advance(&mut state_b, k, &mut rng_b).unwrap();
            for &sig in &state_a.sigma {
                assert!((s.params().scale_floor..=s.params().noise_hi).contains(&sig));
            }
        }
        assert_eq!(state_a.sigma, state_b.sigma);
        assert_eq!(state_a.target, state_b.target);
        assert_eq!(state_a.observations, state_b.observations);
    }

    #[test]
    fn noise_free_constants_are_a_pair_of_twos() {
        let (m_f, l) = scenario().noise_free_constants();
        assert_relative_eq!(m_f, 2.0, epsilon = 1e-12);
        assert_relative_eq!(l, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn curvature_extremes_bracket_every_node() {
        let s = scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let state = s.init_state(&mut rng).unwrap();
        let (lo, hi) = s.curvature_extremes(&state).unwrap();
        assert!(lo > 0.0 && hi >= lo);
        let gains = s.true_gain_moments(&state).unwrap();
        for &(_, a) in &gains {
            assert!(2.0 * a >= lo - 1e-12 && 2.0 * a <= hi + 1e-12);
        }
    }

    #[test]
    fn interaction_bound_dominates_each_leave_one_out_sum() {
        let s = scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let state = s.init_state(&mut rng).unwrap();
        let x = s.true_optimizer(&state).unwrap();
        let g = s.interaction_bound(&x, &state).unwrap();
        assert!(g.is_finite() && g >= 0.0);
        let gains = s.true_gain_moments(&state).unwrap();
        for i in 0..s.node_count() {
            let sum: DVector<f64> = (0..s.node_count())
                .filter(|&j| j != i)
                .map(|j| s.expected_gradient_at(j, &x, gains[j], &state))
                .fold(DVector::zeros(2), |acc, gr| acc + gr);
            assert!(sum.norm() <= g + 1e-12);
        }
    }

    #[test]
    fn rejects_malformed_parameter_sets() {
        assert!(LsParams { nodes: 1, ..LsParams::default() }.validate().is_err());
        assert!(LsParams { drift: vec![vec![1.0]], ..LsParams::default() }.validate().is_err());
        assert!(LsParams { target_init: vec![0.0], ..LsParams::default() }.validate().is_err());
        assert!(LsParams { scale_floor: 0.0, ..LsParams::default() }.validate().is_err());
        assert!(LsParams { noise_hi: 0.0, ..LsParams::default() }.validate().is_err());
        assert!(LsParams::default().validate().is_ok());
    }
}
