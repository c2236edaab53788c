//! Formation-tracking world: vehicles on a grid network hold a rotating
//! formation under drifting per-vehicle wind disturbances.
//!
//! Vehicle `i` optimizes over a *block*: its own planar position plus
//! local copies of each neighbor's position. Its cost penalizes the
//! distance to its own reference waypoint (shifted by its wind `w_i`)
//! and, with half weight, every relative-offset error to a neighbor
//! copy; the halving makes the network-wide sum count each link once,
//! so the decentralized gradients add up to the gradient of the single
//! global objective whose curvature constants the analysis reports.
//! Winds are Weibull with slowly modulated parameters (and an optional
//! gust window), so the cost is affine in each wind value — frozen
//! gradient snapshots and mean-based expected gradients are exact.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{weibull_params_at, GustWindow, Pdf, WeibullEvolution};
use crate::netgraph::NetworkModel;
use crate::objective::{BoxSet, ComponentSet, GradientSnapshot, SnapshotForm};
use crate::solver::StepSizes;
use crate::{Error, Result};

/// Dimension of each vehicle's own position.
const PLANE_DIM: usize = 2;

/// Parameters of the formation-tracking world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WpParams {
    /// Grid dimensions of the support network.
    pub rows: usize,
    pub cols: usize,
    /// Weight of the own-waypoint term relative to the link terms.
    pub theta: f64,
    /// Per-edge Bernoulli activation probability.
    pub edge_activation: f64,
    /// Every position coordinate is constrained to this half width.
    pub box_half_width: f64,
    /// Distance between adjacent reference waypoints.
    pub ref_spacing: f64,
    /// Radians the formation rotates per tick. `None` derives a slow
    /// rate proportional to the gradient step.
    pub rotation_per_tick: Option<f64>,
    /// Gradient step override. `None` uses the safe closed form
    /// `1.7 theta / (2 (theta + lambda_max))^2` from the support
    /// Laplacian's largest eigenvalue.
    pub gradient_step: Option<f64>,
    /// Consensus gain override. `None` uses `0.13 / n`.
    pub consensus_gain: Option<f64>,
    /// `false` replaces every wind law with a point mass at zero,
    /// which makes the world deterministic given the seed.
    pub noise: bool,
    /// Optional multiplicative gust on every wind's Weibull scale.
    pub gust: Option<GustWindow>,
}

impl Default for WpParams {
    /// The built-in benchmark configuration: a 4 x 4 grid of vehicles
    /// holding a slowly rotating lattice formation, with a mid-run gust
    /// that doubles every wind scale for 750 ticks.
    fn default() -> Self {
        WpParams {
            rows: 4,
            cols: 4,
            theta: 0.5,
            edge_activation: 0.7,
            box_half_width: 50.0,
            ref_spacing: 2.0,
            rotation_per_tick: None,
            gradient_step: None,
            consensus_gain: None,
            noise: true,
            gust: Some(GustWindow { from: 2500, until: 3250, factor: 2.0 }),
        }
    }
}

impl WpParams {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.rows * self.cols < 2 {
            return Err(Error::TooFewNodes { min: 2, got: self.rows * self.cols });
        }
        for (name, v) in [
            ("theta", self.theta),
            ("box_half_width", self.box_half_width),
            ("ref_spacing", self.ref_spacing),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::NonPositive { name, value: v });
            }
        }
        if !(self.edge_activation > 0.0 && self.edge_activation <= 1.0) {
            return Err(Error::BadActivationProbability { i: 0, j: 0, p: self.edge_activation });
        }
        for (name, v) in [("gradient_step", self.gradient_step), ("consensus_gain", self.consensus_gain)]
        {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::NonPositive { name, value: v });
                }
            }
        }
        // Zero rotation is a valid (static-formation) configuration.
        if let Some(v) = self.rotation_per_tick {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::NonPositive { name: "rotation_per_tick", value: v });
            }
        }
        // The formation must sit strictly inside the feasible box even
        // after a quarter turn puts a corner waypoint on a diagonal.
        let span = self.ref_spacing * (self.rows.max(self.cols) - 1) as f64 / 2.0;
        if span * std::f64::consts::SQRT_2 >= self.box_half_width {
            return Err(Error::Config(format!(
                "reference formation of half diagonal {:.3} cannot rotate inside a box of half \
                 width {}",
                span * std::f64::consts::SQRT_2,
                self.box_half_width
            )));
        }
        Ok(())
    }
}

/// The formation-tracking world: support grid, reference formation, and
/// derived algorithm gains. Wind laws are drawn per replication (see
/// [`Self::init_state`]).
#[derive(Debug, Clone)]
pub struct WpScenario {
    params: WpParams,
    model: NetworkModel,
    /// `blocks[i]` lists the nodes whose positions vehicle `i` maintains
    /// (itself plus its support neighbors), ascending.
    blocks: Vec<Vec<usize>>,
    /// Index of `i` inside `blocks[i]`.
    own_pos: Vec<usize>,
    /// Reference waypoints at tick 0, one planar point per vehicle.
    base_refs: Vec<DVector<f64>>,
    alpha: f64,
    beta: f64,
    rotation: f64,
    support_lambda_max: f64,
}

/// Per-replication environment state: the drawn wind laws. The rest of
/// the environment (waypoints, wind parameters) is closed-form in the
/// tick index.
#[derive(Debug, Clone)]
pub struct WpState {
    /// One law per vehicle; `None` in the noiseless mode.
    pub laws: Option<Vec<WeibullEvolution>>,
}

impl WpScenario {
    /// Build the world from validated parameters. Construction consumes
    /// no randomness; wind laws are per-replication draws.
    pub fn new(params: WpParams) -> Result<Self> {
        params.validate()?;
        let model = NetworkModel::grid_lattice(params.rows, params.cols, params.edge_activation)?;
        let n = model.node_count();
        let blocks: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut b = model.neighbors(i);
                b.push(i);
                b.sort_unstable();
                b
            })
            .collect();
        let own_pos = blocks
            .iter()
            .enumerate()
            .map(|(i, b)| b.binary_search(&i).expect("own node is in its block"))
            .collect();

        let support_lambda_max = model.support_laplacian().lambda_max()?;
        let denom = 2.0 * (params.theta + support_lambda_max);
        let alpha = params.gradient_step.unwrap_or(1.7 * params.theta / (denom * denom));
        let beta = params.consensus_gain.unwrap_or(0.13 / n as f64);
        let rotation = params.rotation_per_tick.unwrap_or(0.5 / 40.0 * alpha);

        let base_refs = (0..n)
            .map(|i| {
                let (r, c) = (i / params.cols, i % params.cols);
                DVector::from_column_slice(&[
                    c as f64 * params.ref_spacing - (params.cols - 1) as f64 * params.ref_spacing / 2.0,
                    r as f64 * params.ref_spacing - (params.rows - 1) as f64 * params.ref_spacing / 2.0,
                ])
            })
            .collect();

        let scenario = WpScenario {
            params,
            model,
            blocks,
            own_pos,
            base_refs,
            alpha,
            beta,
            rotation,
            support_lambda_max,
        };
        scenario.self_check_gradients()?;
        Ok(scenario)
    }

    /// Fresh replication state: the wind laws, four uniform draws per
    /// vehicle in vehicle order (none at all in the noiseless mode).
    pub fn init_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<WpState> {
        if !self.params.noise {
            return Ok(WpState { laws: None });
        }
        let n = self.model.node_count();
        let mut laws = Vec::with_capacity(n);
        for i in 0..n {
            let u1: f64 = rng.gen();
            let u2: f64 = rng.gen();
            let p1: f64 = rng.gen();
            let p2: f64 = rng.gen();
            // Stronger winds toward higher vehicle indices, with the
            // additive offset keeping both parameters positive at
            // every phase of the modulation.
            let strength = 2.0 * (i + 1) as f64 / n as f64;
            let law = WeibullEvolution {
                base_scale: 4.0 / n as f64 * strength * (2.0 + u1),
                base_shape: 4.0 + 4.0 * u2,
                scale_phase: std::f64::consts::TAU * p1,
                shape_phase: std::f64::consts::TAU * p2,
                rate: self.rotation,
                offset: strength,
                gust: self.params.gust.clone(),
            };
            law.validate()?;
            laws.push(law);
        }
        Ok(WpState { laws: Some(laws) })
    }

    /// Construction-time probe of the closed-form gradient against
    /// finite differences at the tick-0 waypoints.
    fn self_check_gradients(&self) -> Result<()> {
        let refs = self.refs_at(0);
        for i in 0..self.model.node_count() {
            let comp = self.component(i, &refs);
            let probes: Vec<(DVector<f64>, Vec<f64>)> = (0..2)
                .map(|p| {
                    let x = DVector::from_fn(comp.dim(), |r, _| {
                        1.3 * if (r + p) % 2 == 0 { 1.0 } else { -0.4 }
                    });
                    let noises =
                        (0..comp.sources().len()).map(|s| 0.3 + 0.2 * s as f64).collect();
                    (x, noises)
                })
                .collect();
            crate::objective::finite_difference_check(&comp, &probes, 1e-4)?;
        }
        Ok(())
    }

    pub fn params(&self) -> &WpParams {
        &self.params
    }

    pub fn model(&self) -> &NetworkModel {
        &self.model
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Index of vehicle `i`'s own position inside its block.
    pub fn own_position(&self, i: usize) -> usize {
        self.own_pos[i]
    }

    /// Feasible set of vehicle `i`'s block variable.
    pub fn feasible(&self, i: usize) -> BoxSet {
        BoxSet::symmetric(PLANE_DIM * self.blocks[i].len(), self.params.box_half_width)
            .expect("positive half width")
    }

    /// The network-wide stacked position box; its corner norm is the
    /// radius that scales the communication thresholds.
    pub fn stacked_box(&self) -> BoxSet {
        BoxSet::symmetric(PLANE_DIM * self.model.node_count(), self.params.box_half_width)
            .expect("positive half width")
    }

    pub fn step_sizes(&self) -> StepSizes {
        StepSizes { alpha: self.alpha, beta: self.beta }
    }

    pub fn rotation_rate(&self) -> f64 {
        self.rotation
    }

    pub fn support_lambda_max(&self) -> f64 {
        self.support_lambda_max
    }

    /// Reference waypoints at tick `k`: the base formation rotated
    /// rigidly about the origin by `rotation_rate * k` radians.
    pub fn refs_at(&self, k: u64) -> Vec<DVector<f64>> {
        let angle = self.rotation * k as f64;
        let (sin, cos) = angle.sin_cos();
        self.base_refs
            .iter()
            .map(|p| DVector::from_column_slice(&[cos * p[0] - sin * p[1], sin * p[0] + cos * p[1]]))
            .collect()
    }

    /// Vehicle `i`'s wind distribution at tick `k`.
    pub fn pdf_at(&self, state: &WpState, i: usize, k: u64) -> Result<Pdf> {
        match &state.laws {
            Some(laws) => {
                let (scale, shape) = weibull_params_at(&laws[i], k)?;
                Pdf::weibull(scale, shape)
            }
            None => Pdf::point_mass(0.0),
        }
    }

    /// Mean wind of vehicle `i` at tick `k`.
    pub fn mean_at(&self, state: &WpState, i: usize, k: u64) -> Result<f64> {
        Ok(self.pdf_at(state, i, k)?.mean())
    }

    /// Vehicle `i`'s cost component given the waypoints of tick `k`
    /// (as returned by [`Self::refs_at`]).
    pub fn component<'a>(&'a self, i: usize, refs: &'a [DVector<f64>]) -> WpComponent<'a> {
        WpComponent {
            node: i,
            blocks: &self.blocks[i],
            own_pos: self.own_pos[i],
            refs,
            theta: self.params.theta,
        }
    }

    /// Strong-convexity and smoothness constants of the network-wide
    /// objective in the stacked position variable: the extreme
    /// eigenvalues of `2 theta I + 2 L` per planar coordinate, where
    /// `L` is the support Laplacian.
    pub fn network_constants(&self) -> Result<(f64, f64)> {
        let n = self.model.node_count();
        let lap = self.model.support_laplacian();
        let mut h = DMatrix::<f64>::zeros(n, n);
        h.fill_with_identity();
        h *= 2.0 * self.params.theta;
        h += 2.0 * lap.matrix();
        let eig = crate::netgraph::jacobi_eigenvalues(
            &h,
            crate::netgraph::EIGEN_TOL,
            crate::netgraph::EIGEN_MAX_SWEEPS,
        )?;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in eig {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !(lo > 0.0) {
            return Err(Error::NotStronglyConvex { m_f: lo });
        }
        Ok((lo, hi))
    }

    /// Exact minimizer of the expected network objective at tick `k`,
    /// stacked as `[x_0; x_1; ...]` in the plane. Solved through the
    /// normal equations and cross-checked against the closed form
    /// `waypoint + (mean wind) * (1, 1)`, which holds because every
    /// term of the objective vanishes there.
    pub fn true_optimizer(&self, state: &WpState, k: u64) -> Result<DVector<f64>> {
        let n = self.model.node_count();
        let refs = self.refs_at(k);
        // Shifted waypoints rho_i + mean_i * 1.
        let mut targets = DMatrix::<f64>::zeros(n, PLANE_DIM);
        for i in 0..n {
            let mu = self.mean_at(state, i, k)?;
            for d in 0..PLANE_DIM {
                targets[(i, d)] = refs[i][d] + mu;
            }
        }
        // Half the expected-gradient operator: theta I + L.
        let mut m = DMatrix::<f64>::zeros(n, n);
        m.fill_with_identity();
        m *= self.params.theta;
        m += self.model.support_laplacian().matrix();
        let rhs = &m * &targets;
        let solved = nalgebra::Cholesky::new(m.clone())
            .ok_or(Error::NotStronglyConvex { m_f: 0.0 })?
            .solve(&rhs);
        let residual = (&m * &solved - &rhs).norm();
        if residual > 1e-9 * (1.0 + rhs.norm()) {
            return Err(Error::InvariantBreach {
                tick: k,
                what: format!("optimizer solve residual {residual:.3e}"),
            });
        }

        let feasible = self.stacked_box();
        let mut stacked = DVector::zeros(PLANE_DIM * n);
        for i in 0..n {
            for d in 0..PLANE_DIM {
                stacked[PLANE_DIM * i + d] = solved[(i, d)];
            }
        }
        if !feasible.contains(&stacked, 0.0) {
            return Err(Error::InvariantBreach {
                tick: k,
                what: "unconstrained optimizer left the feasible box".into(),
            });
        }
        Ok(stacked)
    }

    /// Largest, over vehicles, norm of the sum of all *other* vehicles'
    /// expected cost gradients at the stacked point `x` — the interaction
    /// constant the error bound uses. Each component's gradient lives on
    /// its own block; the sum is taken in the stacked frame.
    pub fn interaction_bound(
        &self,
        state: &WpState,
        x: &DVector<f64>,
        k: u64,
    ) -> Result<f64> {
        let n = self.model.node_count();
        if x.len() != PLANE_DIM * n {
            return Err(Error::DimensionMismatch { expected: PLANE_DIM * n, got: x.len() });
        }
        let refs = self.refs_at(k);
        let moments: Vec<(f64, f64)> = (0..n)
            .map(|j| self.pdf_at(state, j, k).map(|p| p.moments()))
            .collect::<Result<_>>()?;
        let mut stacked_grads = Vec::with_capacity(n);
        let mut total = DVector::zeros(PLANE_DIM * n);
        for i in 0..n {
            let comp = self.component(i, &refs);
            let block = &self.blocks[i];
            let x_block = DVector::from_fn(PLANE_DIM * block.len(), |r, _| {
                x[PLANE_DIM * block[r / PLANE_DIM] + r % PLANE_DIM]
            });
            let block_moments: Vec<(f64, f64)> = block.iter().map(|&j| moments[j]).collect();
            let g_block = comp.moment_grad(&x_block, &block_moments);
            let mut g = DVector::zeros(PLANE_DIM * n);
            for (p, &j) in block.iter().enumerate() {
                for d in 0..PLANE_DIM {
                    g[PLANE_DIM * j + d] = g_block[PLANE_DIM * p + d];
                }
            }
            total += &g;
            stacked_grads.push(g);
        }
        Ok(stacked_grads
            .iter()
            .map(|g| (&total - g).norm())
            .fold(0.0, f64::max))
    }
}

/// Vehicle `i`'s cost over its block `(own position, neighbor copies)`:
///
/// ```text
/// theta ||x_i - rho_i - 1 w_i||^2
///   + 1/2 sum_j ||(x_i - x_j) - (rho_i - rho_j) - 1 (w_i - w_j)||^2
/// ```
///
/// The noise slice is indexed by block position, so `noises[p]` is the
/// wind of node `blocks[p]`.
pub struct WpComponent<'a> {
    node: usize,
    blocks: &'a [usize],
    own_pos: usize,
    refs: &'a [DVector<f64>],
    theta: f64,
}

impl WpComponent<'_> {
    /// Offset error of the link to the neighbor at block position `p`,
    /// written into `err`.
    fn link_error(&self, x: &DVector<f64>, noises: &[f64], p: usize, err: &mut [f64; PLANE_DIM]) {
        let j = self.blocks[p];
        let own = &self.refs[self.node];
        let theirs = &self.refs[j];
        let wind_gap = noises[self.own_pos] - noises[p];
        for d in 0..PLANE_DIM {
            err[d] = (x[PLANE_DIM * self.own_pos + d] - x[PLANE_DIM * p + d])
                - (own[d] - theirs[d])
                - wind_gap;
        }
    }
}

impl ComponentSet for WpComponent<'_> {
    fn dim(&self) -> usize {
        PLANE_DIM * self.blocks.len()
    }

    fn sources(&self) -> &[usize] {
        self.blocks
    }

    fn value(&self, x: &DVector<f64>, noises: &[f64]) -> f64 {
        let own_ref = &self.refs[self.node];
        let w = noises[self.own_pos];
        let mut total = 0.0;
        for d in 0..PLANE_DIM {
            let e = x[PLANE_DIM * self.own_pos + d] - own_ref[d] - w;
            total += self.theta * e * e;
        }
        let mut err = [0.0; PLANE_DIM];
        for p in 0..self.blocks.len() {
            if p == self.own_pos {
                continue;
            }
            self.link_error(x, noises, p, &mut err);
            total += err.iter().map(|e| e * e).sum::<f64>() / 2.0;
        }
        total
    }

    fn grad_into(&self, x: &DVector<f64>, noises: &[f64], out: &mut DVector<f64>) {
        assert_eq!(out.len(), self.dim(), "gradient buffer dimension");
        out.fill(0.0);
        let own_ref = &self.refs[self.node];
        let w = noises[self.own_pos];
        for d in 0..PLANE_DIM {
            out[PLANE_DIM * self.own_pos + d] =
                2.0 * self.theta * (x[PLANE_DIM * self.own_pos + d] - own_ref[d] - w);
        }
        let mut err = [0.0; PLANE_DIM];
        for p in 0..self.blocks.len() {
            if p == self.own_pos {
                continue;
            }
            self.link_error(x, noises, p, &mut err);
            for d in 0..PLANE_DIM {
                out[PLANE_DIM * self.own_pos + d] += err[d];
                out[PLANE_DIM * p + d] = -err[d];
            }
        }
    }

    fn moment_grad(&self, x: &DVector<f64>, moments: &[(f64, f64)]) -> DVector<f64> {
        // The gradient is affine in every wind, so the expectation is
        // the gradient at the mean winds.
        let means: Vec<f64> = moments.iter().map(|m| m.0).collect();
        let mut out = DVector::zeros(self.dim());
        self.grad_into(x, &means, &mut out);
        out
    }

    fn snapshot(
        &self,
        point: &DVector<f64>,
        source_pos: usize,
        moments: &[(f64, f64)],
        tick: u64,
    ) -> GradientSnapshot {
        // Affine in the source wind: probe at w = 0 and w = 1 with the
        // other winds at their means.
        let mut probe: Vec<f64> = moments.iter().map(|m| m.0).collect();
        probe[source_pos] = 0.0;
        let mut c0 = DVector::zeros(self.dim());
        self.grad_into(point, &probe, &mut c0);
        probe[source_pos] = 1.0;
        let mut c1 = DVector::zeros(self.dim());
        self.grad_into(point, &probe, &mut c1);
        c1 -= &c0;
        GradientSnapshot {
            owner: self.node,
            source: self.blocks[source_pos],
            tick,
            point: point.clone(),
            form: SnapshotForm::Quadratic { c0, c1, c2: DVector::zeros(self.dim()) },
        }
    }

    fn expected_hessian(&self, _x: &DVector<f64>, _moments: &[(f64, f64)]) -> DMatrix<f64> {
        let b = self.blocks.len();
        let mut h = DMatrix::zeros(PLANE_DIM * b, PLANE_DIM * b);
        for d in 0..PLANE_DIM {
            let own = PLANE_DIM * self.own_pos + d;
            h[(own, own)] = 2.0 * self.theta + (b - 1) as f64;
            for p in 0..b {
                if p == self.own_pos {
                    continue;
                }
                let copy = PLANE_DIM * p + d;
                h[(copy, copy)] = 1.0;
                h[(own, copy)] = -1.0;
                h[(copy, own)] = -1.0;
            }
        }
        h
    }
}

/// Engine adapter: component `i` is vehicle `i`'s own planar position;
/// node `i` maintains its own component plus copies of its support
/// neighbors', and consensus reconciles exactly those shared slices. The
/// references move rigidly with the tick, so they are derived once per
/// tick and borrowed by every component.
impl crate::solver::World for WpScenario {
    type State = WpState;
    type TickEnv = Vec<DVector<f64>>;

    fn model(&self) -> &NetworkModel {
        &self.model
    }

    fn component_count(&self) -> usize {
        self.model.node_count()
    }

    fn comp_dim(&self, _c: usize) -> usize {
        PLANE_DIM
    }

    fn block(&self, i: usize) -> &[usize] {
        &self.blocks[i]
    }

    fn feasible(&self, i: usize) -> BoxSet {
        WpScenario::feasible(self, i)
    }

    fn threshold_radius(&self) -> f64 {
        self.stacked_box().corner_norm()
    }

    fn step_sizes(&self) -> StepSizes {
        WpScenario::step_sizes(self)
    }

    fn baseline_curvature(&self) -> Result<(f64, f64)> {
        self.network_constants()
    }

    fn curvature(&self, _state: &WpState) -> Result<(f64, f64)> {
        // The quadratic cost's curvature does not depend on the winds.
        self.network_constants()
    }

    fn init_state(&self, rng: &mut ChaCha8Rng) -> Result<WpState> {
        WpScenario::init_state(self, rng)
    }

    fn advance(&self, _state: &mut WpState, _k: u64, _rng: &mut ChaCha8Rng) -> Result<()> {
        // Wind laws are fixed per replication; their per-tick parameters
        // are deterministic functions of the tick index.
        Ok(())
    }

    fn true_pdf(&self, state: &WpState, i: usize, k: u64) -> Result<Pdf> {
        self.pdf_at(state, i, k)
    }

    fn tick_env(&self, _state: &WpState, k: u64) -> Result<Vec<DVector<f64>>> {
        Ok(self.refs_at(k))
    }

    fn components<'a>(
        &'a self,
        _state: &'a WpState,
        env: &'a Vec<DVector<f64>>,
        _k: u64,
    ) -> Result<Vec<Box<dyn ComponentSet + 'a>>> {
        Ok((0..self.model.node_count())
            .map(|i| Box::new(self.component(i, env)) as Box<dyn ComponentSet + 'a>)
            .collect())
    }

    fn true_optimizer(&self, state: &WpState, k: u64) -> Result<DVector<f64>> {
        WpScenario::true_optimizer(self, state, k)
    }

    fn interaction_bound(&self, state: &WpState, x: &DVector<f64>, k: u64) -> Result<f64> {
        WpScenario::interaction_bound(self, state, x, k)
    }

    fn linear_coeff_norm(&self) -> Option<f64> {
        // Each wind enters the gradient affinely: through the owner's
        // waypoint term and through one relative-offset pair, each with a
        // unit-norm planar coefficient per link.
        Some(1.0)
    }
}
