//! The distributed tracking engine: consensus mixing, stochastic
//! epsilon-gradient steps, and the event-triggered exchange loop.
//!
//! One tick, for every node `i` simultaneously:
//!
//! 1. refresh node `i`'s own noise distribution from the environment;
//! 2. draw the random link activations `W_k` (one Bernoulli per support
//!    edge);
//! 3. `consensus_mix`: `v_i = y_i - beta * sum_j [W_k]_ij (y_i - y_j)`,
//!    applied per shared component slice, with the mixing-weight sanity
//!    checks asserted on every tick;
//! 4. the trigger policy scores every directed support link and exchanges
//!    gradient snapshots and distribution updates (see below);
//! 5. `epsilon_gradient`: estimate the expected gradient at `v_i` from
//!    the distributions node `i` currently *holds* (its own is always
//!    current; the others may be stale within the policy's budget), then
//!    `node_update`: project `v_i - alpha * g` onto the feasible box;
//! 6. record tracking errors against the true minimizer and the tick's
//!    message counts; advance the environment.
//!
//! The exchange in step 4 runs in two passes: pass one refreshes frozen
//! gradient snapshots (receiver-utility score), pass two refreshes
//! distributions (sender-utility scores, evaluated against the snapshots
//! pass one just refreshed). Under the default [`Transport::Support`] the
//! payloads ride a dedicated always-on channel over the support edges, so
//! a data link being down never silently erodes the accuracy budget;
//! under [`Transport::ActiveDeferred`] they share the randomly-active
//! links and triggered sends queue until their link returns, which makes
//! the budget best-effort — the ledger measures the overrun. Either way
//! the budget is *verified*, not assumed: for every node and tick, the
//! gap between the expected gradient under held distributions and under
//! the true ones is recorded in a [`GuaranteeLedger`]. The every-time
//! baseline sends a distribution on every channel its transport offers
//! each tick (every support edge, or every active edge), and the never
//! baseline stays silent after the initial broadcast.
//!
//! Everything here is deterministic given `(master seed, replication)`:
//! the policy consumes no randomness, so runs with different policy
//! modes but equal seeds see identical link activations and noise
//! trajectories — baseline comparisons are paired.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::Pdf;
use crate::netgraph::{AdjacencySample, NetworkModel};
use crate::objective::{
    mc_expected_gradient, moment_expected_gradient, BoxSet, ComponentSet, GradientSnapshot,
};
use crate::rng::replication_stream;
use crate::trigger::{
    self, GuaranteeLedger, MessageKind, MessageRecord, PolicyMode, PolicyParams, Transport,
};
use crate::{Error, Result};

/// Mixing-weight recomputation tolerance (sum-to-one and nonnegativity).
const WEIGHT_TOL: f64 = 1e-12;

/// Tolerance for the convex-hull envelope check after mixing.
const ENVELOPE_TOL: f64 = 1e-9;

/// The two gains of the update law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    /// Gradient step `alpha`.
    pub alpha: f64,
    /// Consensus (disagreement-damping) gain `beta`.
    pub beta: f64,
}

impl StepSizes {
    /// Enforce the convergence preconditions, both strict:
    /// `0 < beta < 1/n` and `0 < alpha < m_f / L^2`. The boundary values
    /// are rejected — at `beta = 1/n` a fully active neighborhood zeroes a
    /// node's own mixing weight, and at `alpha = m_f / L^2` the error
    /// contraction factor reaches 1.
    pub fn validate(&self, n: usize, m_f: f64, l: f64) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() {
                return Err(Error::NotFinite { name, value: v });
            }
        }
        if !(self.beta > 0.0 && self.beta < 1.0 / n as f64) {
            return Err(Error::BadConsensusGain { beta: self.beta, n });
        }
        let limit = m_f / (l * l);
        if !(self.alpha > 0.0 && self.alpha < limit) {
            return Err(Error::BadGradientStep { alpha: self.alpha, limit, m_f, l });
        }
        Ok(())
    }
}

/// How nodes estimate expected gradients from the distributions they hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    /// Sample-average gradient over `samples` iid noise-vector draws.
    MonteCarlo { samples: usize },
    /// Exact expectation through the distributions' moments (the built-in
    /// costs are quadratic in the noises, so this is closed-form).
    MeanField,
}

/// Everything one replication needs besides the world itself.
#[derive(Debug, Clone)]
pub struct RunSettings {
    /// Ticks to simulate.
    pub steps: u64,
    pub policy: PolicyParams,
    pub gradient: GradientMode,
    pub master_seed: u64,
    /// Replication index; selects the generator stream.
    pub replication: usize,
    /// Record every transmission as a [`MessageRecord`] in the run record
    /// (off by default everywhere: the counters alone feed the traces).
    pub log_messages: bool,
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::NonPositive { name: "steps", value: 0.0 });
        }
        if let GradientMode::MonteCarlo { samples } = self.gradient {
            if samples == 0 {
                return Err(Error::NonPositive { name: "mc_samples", value: 0.0 });
            }
        }
        self.policy.validate()
    }
}

/// What a node knows about one neighbor it maintains a link to — mirrors
/// of the last payloads *this node sent*, so utilities can be scored
/// without consulting the neighbor.
#[derive(Debug, Clone)]
pub struct LinkMirror {
    /// The distribution this node last transmitted over the link, and the
    /// tick it was sent (what the neighbor currently holds of ours).
    pub sent_pdf: (Pdf, u64),
    /// Mirror of the frozen gradient snapshot the neighbor holds of this
    /// node's cost (as a function of the *neighbor's* noise). `None`
    /// until the mode exchanges snapshots.
    pub sent_snapshot: Option<GradientSnapshot>,
    /// Deferred-transport queue flags: a send triggered while the link
    /// was down, waiting for its next activation. Always `false` under
    /// the always-on transport.
    pub pending_pdf: bool,
    pub pending_snapshot: bool,
}

/// Per-node solver state.
#[derive(Debug, Clone)]
pub struct NodeState {
    /// Current iterate (post projection).
    pub y: DVector<f64>,
    /// Post-consensus point of the current tick.
    pub v: DVector<f64>,
    /// The node's own noise distribution — always current.
    pub own_pdf: Pdf,
    /// Distribution copies this node holds, by source node, with the tick
    /// each copy was received (its own entry is refreshed every tick).
    pub known_pdfs: BTreeMap<usize, (Pdf, u64)>,
    /// Frozen gradient snapshots this node holds, keyed by the *owner*
    /// node; each is a function of this node's own noise.
    pub known_snapshots: BTreeMap<usize, GradientSnapshot>,
    /// Per-neighbor mirrors of what this node last sent.
    pub links: BTreeMap<usize, LinkMirror>,
}

/// A simulated environment the engine can drive.
///
/// The decision variable is organized in *components*: disjoint slices of
/// a conceptual stacked vector, each maintained by one or more nodes.
/// The single-estimate worlds use one component shared by everyone; the
/// block-partitioned worlds give each node its own component plus copies
/// of its neighbors'. Consensus averages exactly the slices two endpoint
/// nodes share.
pub trait World {
    /// Per-replication environment state.
    type State;
    /// Environment data derived once per tick (e.g. moving reference
    /// points), borrowed by that tick's components.
    type TickEnv;

    fn model(&self) -> &NetworkModel;

    /// Number of components in the stacked frame.
    fn component_count(&self) -> usize;

    /// Dimension of component `c`.
    fn comp_dim(&self, c: usize) -> usize;

    /// Sorted component ids node `i` maintains. Its cost and feasible box
    /// live on the concatenation of these slices in this order.
    fn block(&self, i: usize) -> &[usize];

    /// Feasible box of node `i`'s concatenated block.
    fn feasible(&self, i: usize) -> BoxSet;

    /// Scale constant of the feasible geometry used by the trigger
    /// thresholds (largest corner norm over consecutive feasible sets).
    fn threshold_radius(&self) -> f64;

    fn step_sizes(&self) -> StepSizes;

    /// Curvature constants `(m_f, L)` of the noise-free core of the
    /// objective — state-independent, used to admit the step sizes.
    fn baseline_curvature(&self) -> Result<(f64, f64)>;

    /// Curvature constants under the current true distributions.
    fn curvature(&self, state: &Self::State) -> Result<(f64, f64)>;

    fn init_state(&self, rng: &mut ChaCha8Rng) -> Result<Self::State>;

    /// Advance the environment to tick `k` (called with `k+1` at the end
    /// of tick `k`).
    fn advance(&self, state: &mut Self::State, k: u64, rng: &mut ChaCha8Rng) -> Result<()>;

    /// Node `i`'s true current noise distribution.
    fn true_pdf(&self, state: &Self::State, i: usize, k: u64) -> Result<Pdf>;

    fn tick_env(&self, state: &Self::State, k: u64) -> Result<Self::TickEnv>;

    /// All nodes' cost components for tick `k`.
    fn components<'a>(
        &'a self,
        state: &'a Self::State,
        env: &'a Self::TickEnv,
        k: u64,
    ) -> Result<Vec<Box<dyn ComponentSet + 'a>>>;

    /// Minimizer of the expected network cost at tick `k`, stacked by
    /// component id.
    fn true_optimizer(&self, state: &Self::State, k: u64) -> Result<DVector<f64>>;

    /// Interaction constant at `x`: the largest, over nodes, norm of the
    /// sum of all other nodes' expected gradients.
    fn interaction_bound(&self, state: &Self::State, x: &DVector<f64>, k: u64) -> Result<f64>;

    /// `Some(coeff)` when every component gradient is affine in each
    /// individual noise with per-link slope-norm `2 * coeff` — the
    /// precondition for the simplified mean-drift trigger.
    fn linear_coeff_norm(&self) -> Option<f64>;
}

/// Component-slice geometry shared by the consensus step, the error
/// bookkeeping, and the exchange loop.
#[derive(Debug, Clone)]
pub struct Topology {
    node_count: usize,
    comp_dims: Vec<usize>,
    /// Offset of each component in the stacked frame.
    comp_offsets: Vec<usize>,
    blocks: Vec<Vec<usize>>,
    /// Per node: local offset of each maintained component, block order.
    local_offsets: Vec<Vec<usize>>,
    node_dims: Vec<usize>,
    /// Support edges, model order.
    edges: Vec<(usize, usize)>,
    /// Per support edge: shared components as
    /// `(component, dim, local offset at a, local offset at b)`.
    edge_shared: Vec<Vec<(usize, usize, usize, usize)>>,
}

impl Topology {
    pub fn from_world<W: World + ?Sized>(world: &W) -> Result<Self> {
        let n = world.model().node_count();
        let comp_count = world.component_count();
        if comp_count == 0 {
            return Err(Error::Config("world declares zero components".into()));
        }
        let comp_dims: Vec<usize> = (0..comp_count).map(|c| world.comp_dim(c)).collect();
        if let Some(c) = comp_dims.iter().position(|&d| d == 0) {
            return Err(Error::Config(format!("component {c} has zero dimension")));
        }
        let mut comp_offsets = Vec::with_capacity(comp_count);
        let mut acc = 0;
        for &d in &comp_dims {
            comp_offsets.push(acc);
            acc += d;
        }
        let mut blocks = Vec::with_capacity(n);
        let mut local_offsets = Vec::with_capacity(n);
        let mut node_dims = Vec::with_capacity(n);
        for i in 0..n {
            let block = world.block(i).to_vec();
            if block.is_empty() {
                return Err(Error::Config(format!("node {i} maintains no components")));
            }
            if block.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!("node {i}'s component list is not sorted")));
            }
            if *block.last().expect("nonempty") >= comp_count {
                return Err(Error::Config(format!("node {i} references an unknown component")));
            }
            let mut offs = Vec::with_capacity(block.len());
            let mut dim = 0;
            for &c in &block {
                offs.push(dim);
                dim += comp_dims[c];
            }
            blocks.push(block);
            local_offsets.push(offs);
            node_dims.push(dim);
        }
        let edges: Vec<(usize, usize)> =
            world.model().edges().iter().map(|&(a, b, _)| (a, b)).collect();
        let mut edge_shared = Vec::with_capacity(edges.len());
        for &(a, b) in &edges {
            let mut shared = Vec::new();
            for (pa, &c) in blocks[a].iter().enumerate() {
                if let Ok(pb) = blocks[b].binary_search(&c) {
                    shared.push((c, comp_dims[c], local_offsets[a][pa], local_offsets[b][pb]));
                }
            }
            edge_shared.push(shared);
        }
        Ok(Topology {
            node_count: n,
            comp_dims,
            comp_offsets,
            blocks,
            local_offsets,
            node_dims,
            edges,
            edge_shared,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn node_dim(&self, i: usize) -> usize {
        self.node_dims[i]
    }

    /// Total dimension of the stacked frame.
    pub fn stacked_dim(&self) -> usize {
        self.comp_offsets.last().expect("nonempty") + self.comp_dims.last().expect("nonempty")
    }

    /// Extract node `i`'s block from a stacked vector.
    pub fn gather_block(&self, stacked: &DVector<f64>, i: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.node_dims[i]);
        for (p, &c) in self.blocks[i].iter().enumerate() {
            let local = self.local_offsets[i][p];
            let global = self.comp_offsets[c];
            for d in 0..self.comp_dims[c] {
                out[local + d] = stacked[global + d];
            }
        }
        out
    }

    /// Disagreement-damping step: for every currently active edge and
    /// every component its endpoints share,
    /// `v_a[c] -= beta * (y_a[c] - y_b[c])` and symmetrically for `b`.
    /// Writes each node's `v`; `y` is left untouched.
    ///
    /// After mixing, the effective weights are recomputed and checked on
    /// every tick: each node's own weight must be nonnegative, the weights
    /// must sum to one, and each mixed coordinate must lie in the convex
    /// hull of the participating values (within [`WEIGHT_TOL`] /
    /// [`ENVELOPE_TOL`]). A breach aborts the run.
    pub fn consensus_mix(
        &self,
        nodes: &mut [NodeState],
        active: &AdjacencySample,
        beta: f64,
        tick: u64,
    ) -> Result<()> {
        if nodes.len() != self.node_count {
            return Err(Error::DimensionMismatch { expected: self.node_count, got: nodes.len() });
        }
        for node in nodes.iter_mut() {
            node.v.copy_from(&node.y);
        }
        // Envelope accumulators and per-(node, component) partner counts.
        let mut lo: Vec<DVector<f64>> = nodes.iter().map(|n| n.y.clone()).collect();
        let mut hi: Vec<DVector<f64>> = nodes.iter().map(|n| n.y.clone()).collect();
        let mut partners: Vec<Vec<usize>> =
            self.blocks.iter().map(|b| vec![0; b.len()]).collect();
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            if !active.is_active(a, b) {
                continue;
            }
            for &(c, dim, off_a, off_b) in &self.edge_shared[e] {
                let pa = self.blocks[a].binary_search(&c).expect("shared component in block");
                let pb = self.blocks[b].binary_search(&c).expect("shared component in block");
                partners[a][pa] += 1;
                partners[b][pb] += 1;
                for d in 0..dim {
                    let ya = nodes[a].y[off_a + d];
                    let yb = nodes[b].y[off_b + d];
                    let gap = ya - yb;
                    nodes[a].v[off_a + d] -= beta * gap;
                    nodes[b].v[off_b + d] += beta * gap;
                    if yb < lo[a][off_a + d] {
                        lo[a][off_a + d] = yb;
                    }
                    if yb > hi[a][off_a + d] {
                        hi[a][off_a + d] = yb;
                    }
                    if ya < lo[b][off_b + d] {
                        lo[b][off_b + d] = ya;
                    }
                    if ya > hi[b][off_b + d] {
                        hi[b][off_b + d] = ya;
                    }
                }
            }
        }
        for i in 0..self.node_count {
            for (p, &count) in partners[i].iter().enumerate() {
                let own_weight = 1.0 - beta * count as f64;
                if own_weight < -WEIGHT_TOL {
                    return Err(Error::InvariantBreach {
                        tick,
                        what: format!(
                            "node {i} component {} has negative own mixing weight {own_weight}",
                            self.blocks[i][p]
                        ),
                    });
                }
                let sum = own_weight + beta * count as f64;
                if (sum - 1.0).abs() > WEIGHT_TOL {
                    return Err(Error::InvariantBreach {
                        tick,
                        what: format!(
                            "node {i} component {} mixing weights sum to {sum}",
                            self.blocks[i][p]
                        ),
                    });
                }
            }
            for d in 0..self.node_dims[i] {
                let v = nodes[i].v[d];
                if !(v >= lo[i][d] - ENVELOPE_TOL && v <= hi[i][d] + ENVELOPE_TOL) {
                    return Err(Error::InvariantBreach {
                        tick,
                        what: format!(
                            "node {i} coordinate {d} left the mixing envelope: \
                             {v} not in [{}, {}]",
                            lo[i][d], hi[i][d]
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Expected-gradient estimate at `x` from the distributions a node holds.
pub fn epsilon_gradient<R: Rng + ?Sized>(
    component: &dyn ComponentSet,
    x: &DVector<f64>,
    pdfs: &[&Pdf],
    mode: GradientMode,
    rng: &mut R,
) -> Result<DVector<f64>> {
    match mode {
        GradientMode::MonteCarlo { samples } => {
            mc_expected_gradient(component, x, pdfs, samples, rng)
        }
        GradientMode::MeanField => moment_expected_gradient(component, x, pdfs),
    }
}

/// Projected gradient step: `P_X[v - alpha * gradient]`.
pub fn node_update(
    v: &DVector<f64>,
    gradient: &DVector<f64>,
    alpha: f64,
    feasible: &BoxSet,
) -> DVector<f64> {
    let mut stepped = v.clone();
    stepped.axpy(-alpha, gradient, 1.0);
    feasible.project_in_place(&mut stepped);
    stepped
}

/// Per-tick outputs of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub k: u64,
    /// `sum_i || y_i - x*|_i ||^2` after this tick's update, against this
    /// tick's true minimizer (the stacked squared tracking error).
    pub stacked_sq_error: f64,
    /// The per-node terms of the sum above.
    pub per_node_sq_error: Vec<f64>,
    /// Distribution messages sent this tick (directed). Row 0 includes
    /// the initial broadcast.
    pub pdf_msgs: u64,
    /// Snapshot messages sent this tick (directed).
    pub snapshot_msgs: u64,
    /// Messages the every-time baseline would have sent this tick: two
    /// per support edge under the always-on transport, two per active
    /// edge under the deferred one (plus the initial broadcast at row 0).
    pub everytime_msgs: u64,
}

/// Everything one replication produces.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub replication: usize,
    pub ticks: Vec<TickRecord>,
    /// Stacked squared error of the initial iterates against the tick-0
    /// minimizer (the bound curve's starting value).
    pub initial_sq_error: f64,
    /// Online verification of the accuracy budget.
    pub ledger: GuaranteeLedger,
    /// Largest observed interaction constant (at the per-tick minimizers).
    pub g_max: f64,
    /// Largest per-tick minimizer displacement.
    pub delta_x_max: f64,
    /// Curvature window at tick 0.
    pub curvature_initial: (f64, f64),
    /// Extreme curvature window over the whole run.
    pub curvature_run: (f64, f64),
    /// Curvature window of the noise-free core.
    pub curvature_baseline: (f64, f64),
    /// `1 - beta * lambda_2(expected Laplacian)`.
    pub gamma: f64,
    /// `lambda_2` of the expected Laplacian.
    pub lambda2: f64,
    pub threshold_radius: f64,
    pub step_sizes: StepSizes,
    pub node_count: usize,
    /// Every transmission, when [`RunSettings::log_messages`] was set
    /// (empty otherwise).
    pub messages: Vec<MessageRecord>,
}

/// Environment-derived inputs of one tick, computed before the node loop
/// so the engine borrows nothing from the world while mutating itself.
struct TickInputs<'a> {
    comps: Vec<Box<dyn ComponentSet + 'a>>,
    true_pdfs: Vec<Pdf>,
    true_moments: Vec<(f64, f64)>,
    x_star: DVector<f64>,
    interaction: f64,
    curvature: (f64, f64),
}

/// Run one replication of `world` under `settings`.
///
/// Fails fast on invalid gains (checked against the noise-free curvature)
/// and on a simplified-trigger request for a world whose gradients are
/// not affine in the noises; mid-run invariant breaches abort with
/// [`Error::InvariantBreach`].
pub fn run_replication<W: World>(world: &W, settings: &RunSettings) -> Result<RunRecord> {
    settings.validate()?;
    let steps = world.step_sizes();
    let curvature_baseline = world.baseline_curvature()?;
    let n = world.model().node_count();
    steps.validate(n, curvature_baseline.0, curvature_baseline.1)?;
    let coeff_norm = world.linear_coeff_norm();
    if settings.policy.mode == PolicyMode::LinearSimplified && coeff_norm.is_none() {
        return Err(Error::Config(
            "the simplified mean-drift trigger needs gradients affine in each noise; \
             this scenario's are not"
                .into(),
        ));
    }
    let topo = Topology::from_world(world)?;
    let lambda2 = world.model().expected_laplacian().lambda2()?;
    let gamma = 1.0 - steps.beta * lambda2;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::BadGamma { gamma });
    }
    let feasible: Vec<BoxSet> = (0..n).map(|i| world.feasible(i)).collect();
    for (i, f) in feasible.iter().enumerate() {
        if f.dim() != topo.node_dim(i) {
            return Err(Error::DimensionMismatch { expected: topo.node_dim(i), got: f.dim() });
        }
    }

    let mut rng = replication_stream(settings.master_seed, settings.replication);
    let mut state = world.init_state(&mut rng)?;

    let mut sim = Sim {
        topo,
        policy: settings.policy,
        gradient: settings.gradient,
        alpha: steps.alpha,
        beta: steps.beta,
        radius: world.threshold_radius(),
        coeff_norm,
        deg: (0..n).map(|i| world.model().degree(i)).collect(),
        feasible,
        nodes: Vec::with_capacity(n),
        replication: settings.replication,
        ledger: GuaranteeLedger::default(),
        g_max: 0.0,
        delta_x_max: 0.0,
        initial_curv_lo: f64::INFINITY,
        initial_curv_hi: f64::NEG_INFINITY,
        curv_lo: f64::INFINITY,
        curv_hi: f64::NEG_INFINITY,
        initial_sq_error: 0.0,
        pdf_count: 0,
        snap_count: 0,
        et_count: 0,
        supdiff_cache: HashMap::new(),
        log: settings.log_messages,
        messages: Vec::new(),
    };

    // Initial iterates: uniform in each node's feasible box, node order.
    for i in 0..n {
        let y = sim.feasible[i].sample_uniform(&mut rng);
        let dim = y.len();
        sim.nodes.push(NodeState {
            v: DVector::zeros(dim),
            y,
            own_pdf: Pdf::point_mass(0.0)?, // replaced by the broadcast below
            known_pdfs: BTreeMap::new(),
            known_snapshots: BTreeMap::new(),
            links: BTreeMap::new(),
        });
    }

    // Initial broadcast at tick 0.
    {
        let pdfs0: Vec<Pdf> =
            (0..n).map(|i| world.true_pdf(&state, i, 0)).collect::<Result<_>>()?;
        let env0 = world.tick_env(&state, 0)?;
        let comps0 = world.components(&state, &env0, 0)?;
        sim.broadcast(&comps0, &pdfs0)?;
    }

    let mut records = Vec::with_capacity(settings.steps as usize);
    let mut prev_opt: Option<DVector<f64>> = None;
    for k in 0..settings.steps {
        let env = world.tick_env(&state, k)?;
        let comps = world.components(&state, &env, k)?;
        if comps.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: comps.len() });
        }
        let true_pdfs: Vec<Pdf> =
            (0..n).map(|i| world.true_pdf(&state, i, k)).collect::<Result<_>>()?;
        let true_moments: Vec<(f64, f64)> = true_pdfs.iter().map(|p| p.moments()).collect();
        let x_star = world.true_optimizer(&state, k)?;
        if x_star.len() != sim.topo.stacked_dim() {
            return Err(Error::DimensionMismatch {
                expected: sim.topo.stacked_dim(),
                got: x_star.len(),
            });
        }
        let interaction = world.interaction_bound(&state, &x_star, k)?;
        if let Some(prev) = &prev_opt {
            let delta = (&x_star - prev).norm();
            if delta > sim.delta_x_max {
                sim.delta_x_max = delta;
            }
        }
        let inputs = TickInputs {
            comps,
            true_pdfs,
            true_moments,
            x_star,
            interaction,
            curvature: world.curvature(&state)?,
        };
        records.push(sim.tick(k, &inputs, world.model(), &mut rng)?);
        prev_opt = Some(inputs.x_star.clone());
        // The components borrow `state`; release them before it advances.
        drop(inputs);
        world.advance(&mut state, k + 1, &mut rng)?;
    }

    Ok(RunRecord {
        replication: settings.replication,
        ticks: records,
        initial_sq_error: sim.initial_sq_error,
        ledger: sim.ledger,
        g_max: sim.g_max,
        delta_x_max: sim.delta_x_max,
        curvature_initial: (sim.initial_curv_lo, sim.initial_curv_hi),
        curvature_run: (sim.curv_lo, sim.curv_hi),
        curvature_baseline,
        gamma,
        lambda2,
        threshold_radius: sim.radius,
        step_sizes: steps,
        node_count: n,
        messages: sim.messages,
    })
}

/// Engine internals for one replication.
struct Sim {
    topo: Topology,
    policy: PolicyParams,
    gradient: GradientMode,
    alpha: f64,
    beta: f64,
    radius: f64,
    coeff_norm: Option<f64>,
    deg: Vec<usize>,
    feasible: Vec<BoxSet>,
    nodes: Vec<NodeState>,
    replication: usize,
    ledger: GuaranteeLedger,
    g_max: f64,
    delta_x_max: f64,
    initial_curv_lo: f64,
    initial_curv_hi: f64,
    curv_lo: f64,
    curv_hi: f64,
    initial_sq_error: f64,
    pdf_count: u64,
    snap_count: u64,
    et_count: u64,
    /// Per-tick cache of worst-case density gaps, keyed by
    /// `(sender, tick the mirror was sent)` — mirrors sent the same tick
    /// hold the same distribution.
    supdiff_cache: HashMap<(usize, u64), f64>,
    log: bool,
    messages: Vec<MessageRecord>,
}

impl Sim {
    fn tick(
        &mut self,
        k: u64,
        inputs: &TickInputs<'_>,
        model: &NetworkModel,
        rng: &mut ChaCha8Rng,
    ) -> Result<TickRecord> {
        let n = self.nodes.len();
        // 1. Own distributions refresh from the environment.
        for i in 0..n {
            let pdf = inputs.true_pdfs[i].clone();
            self.nodes[i].known_pdfs.insert(i, (pdf.clone(), k));
            self.nodes[i].own_pdf = pdf;
        }
        // Run bookkeeping.
        if k == 0 {
            self.initial_curv_lo = inputs.curvature.0;
            self.initial_curv_hi = inputs.curvature.1;
            self.initial_sq_error = self.stacked_error(&inputs.x_star).0;
        }
        self.curv_lo = self.curv_lo.min(inputs.curvature.0);
        self.curv_hi = self.curv_hi.max(inputs.curvature.1);
        self.g_max = self.g_max.max(inputs.interaction);

        // 2. Random link activations. The every-time baseline resends on
        // every channel the transport offers each tick.
        let active = model.sample_adjacency(rng);
        self.et_count += match self.policy.transport {
            Transport::Support => 2 * self.topo.edges.len() as u64,
            Transport::ActiveDeferred => 2 * active.active_edges().len() as u64,
        };

        // 3. Consensus.
        self.topo.consensus_mix(&mut self.nodes, &active, self.beta, k)?;

        // 4. Event-triggered exchange.
        match self.policy.mode {
            PolicyMode::Full => {
                self.exchange_snapshots(k, inputs, &active)?;
                self.exchange_pdfs_scored(k, &active)?;
            }
            PolicyMode::LinearSimplified => self.exchange_pdfs_linear(k, &active)?,
            PolicyMode::EveryTime => self.exchange_everytime(k, &active),
            PolicyMode::Never => {}
        }

        // 5. Gradient estimate at v from held distributions, projected step.
        for i in 0..n {
            let comp = inputs.comps[i].as_ref();
            let held: Vec<&Pdf> = comp
                .sources()
                .iter()
                .map(|&s| {
                    self.nodes[i]
                        .known_pdfs
                        .get(&s)
                        .map(|(p, _)| p)
                        .ok_or(Error::MissingPdf { node: i, source_node: s })
                })
                .collect::<Result<_>>()?;
            // Budget verification: gap between the expected gradient under
            // held distributions and under the true ones.
            let held_moments: Vec<(f64, f64)> = held.iter().map(|p| p.moments()).collect();
            let src_true: Vec<(f64, f64)> =
                comp.sources().iter().map(|&s| inputs.true_moments[s]).collect();
            let gap = (comp.moment_grad(&self.nodes[i].v, &held_moments)
                - comp.moment_grad(&self.nodes[i].v, &src_true))
            .norm();
            self.ledger.observe(
                self.replication,
                k,
                i,
                gap,
                self.policy.epsilon,
                self.radius,
            );
            let g = epsilon_gradient(comp, &self.nodes[i].v, &held, self.gradient, rng)?;
            self.nodes[i].y = node_update(&self.nodes[i].v, &g, self.alpha, &self.feasible[i]);
            if !self.feasible[i].contains(&self.nodes[i].y, ENVELOPE_TOL) {
                return Err(Error::InvariantBreach {
                    tick: k,
                    what: format!("node {i}'s update left the feasible box"),
                });
            }
        }

        // 6. Record.
        let (stacked, per_node) = self.stacked_error(&inputs.x_star);
        Ok(TickRecord {
            k,
            stacked_sq_error: stacked,
            per_node_sq_error: per_node,
            pdf_msgs: std::mem::take(&mut self.pdf_count),
            snapshot_msgs: std::mem::take(&mut self.snap_count),
            everytime_msgs: std::mem::take(&mut self.et_count),
        })
    }

    /// `sum_i ||y_i - x*|_i||^2` and its per-node terms.
    fn stacked_error(&self, x_star: &DVector<f64>) -> (f64, Vec<f64>) {
        let per_node: Vec<f64> = (0..self.nodes.len())
            .map(|i| {
                let target = self.topo.gather_block(x_star, i);
                (&self.nodes[i].y - target).norm_squared()
            })
            .collect();
        (per_node.iter().fold(0.0, |a, e| a + e), per_node)
    }

    /// Initial exchange at tick 0, before the first tick runs: every node
    /// sends its distribution to every support neighbor (all modes), and
    /// the full-scoring mode also exchanges initial gradient snapshots
    /// (frozen at the initial iterates). The every-time baseline pays the
    /// same distribution broadcast.
    fn broadcast(
        &mut self,
        comps: &[Box<dyn ComponentSet + '_>],
        pdfs: &[Pdf],
    ) -> Result<()> {
        for (i, pdf) in pdfs.iter().enumerate() {
            self.nodes[i].own_pdf = pdf.clone();
            self.nodes[i].known_pdfs.insert(i, (pdf.clone(), 0));
        }
        let edges = self.topo.edges.clone();
        for &(a, b) in &edges {
            for (s, r) in [(a, b), (b, a)] {
                self.nodes[r].known_pdfs.insert(s, (pdfs[s].clone(), 0));
                self.nodes[s].links.insert(
                    r,
                    LinkMirror {
                        sent_pdf: (pdfs[s].clone(), 0),
                        sent_snapshot: None,
                        pending_pdf: false,
                        pending_snapshot: false,
                    },
                );
                self.pdf_count += 1;
                self.et_count += 1;
            }
        }
        if self.policy.mode == PolicyMode::Full {
            let mut sends: Vec<(usize, usize, GradientSnapshot)> = Vec::new();
            for &(a, b) in &edges {
                for (s, r) in [(a, b), (b, a)] {
                    let comp = comps[s].as_ref();
                    let pos = comp.sources().binary_search(&r).map_err(|_| {
                        Error::Config(format!(
                            "support neighbor {r} is not a noise source of node {s}'s cost"
                        ))
                    })?;
                    let moments = self.known_moments(s, comp)?;
                    sends.push((s, r, comp.snapshot(&self.nodes[s].y, pos, &moments, 0)));
                }
            }
            for (s, r, snap) in sends {
                self.nodes[r].known_snapshots.insert(s, snap.clone());
                self.nodes[s]
                    .links
                    .get_mut(&r)
                    .expect("mirror created above")
                    .sent_snapshot = Some(snap);
                self.snap_count += 1;
            }
        }
        if self.log {
            // One record per directed pair; the full policy ships the
            // distribution and the initial snapshot as one transmission.
            for &(a, b) in &edges {
                for (s, r) in [(a, b), (b, a)] {
                    let mut payload = pdfs[s].wire_scalars();
                    let kind = if self.policy.mode == PolicyMode::Full {
                        let snap = self.nodes[s].links[&r]
                            .sent_snapshot
                            .as_ref()
                            .expect("broadcast above set it");
                        payload.extend(snap.wire_scalars());
                        MessageKind::Both
                    } else {
                        MessageKind::Pdf
                    };
                    self.messages.push(MessageRecord { tick: 0, from: s, to: r, kind, payload });
                }
            }
        }
        Ok(())
    }

    fn known_moments(&self, i: usize, comp: &dyn ComponentSet) -> Result<Vec<(f64, f64)>> {
        comp.sources()
            .iter()
            .map(|&s| {
                self.nodes[i]
                    .known_pdfs
                    .get(&s)
                    .map(|(p, _)| p.moments())
                    .ok_or(Error::MissingPdf { node: i, source_node: s })
            })
            .collect()
    }

    /// Degree used in the per-link budget split: the node's support
    /// degree, or the node count under the conservative substitution.
    fn budget_degree(&self, i: usize) -> usize {
        if self.policy.conservative_degrees {
            self.nodes.len()
        } else {
            self.deg[i]
        }
    }

    /// Whether payloads can travel over the given support edge this tick.
    fn link_up(&self, active: &AdjacencySample, a: usize, b: usize) -> bool {
        match self.policy.transport {
            Transport::Support => true,
            Transport::ActiveDeferred => active.is_active(a, b),
        }
    }

    /// Exchange pass one: refresh the frozen gradient snapshots
    /// counterparts hold. For each directed support pair `(s, r)`, node
    /// `s` freezes its gradient at the current post-consensus point as a
    /// function of `r`'s noise, scores how far the copy `r` holds has
    /// drifted (integral over `r`'s noise support as `s` knows it), and
    /// sends when the score clears the threshold — immediately on an up
    /// link, else queued until the link returns (what goes out then is a
    /// fresh snapshot, not the one that triggered the queue).
    fn exchange_snapshots(
        &mut self,
        k: u64,
        inputs: &TickInputs<'_>,
        active: &AdjacencySample,
    ) -> Result<()> {
        let mut sends: Vec<(usize, usize, GradientSnapshot)> = Vec::new();
        let mut defers: Vec<(usize, usize)> = Vec::new();
        for e in 0..self.topo.edges.len() {
            let (a, b) = self.topo.edges[e];
            let up = self.link_up(active, a, b);
            for (s, r) in [(a, b), (b, a)] {
                let comp = inputs.comps[s].as_ref();
                let Ok(pos) = comp.sources().binary_search(&r) else {
                    continue;
                };
                let link = self.nodes[s].links.get(&r).ok_or(Error::InvariantBreach {
                    tick: k,
                    what: format!("no link mirror from {s} to {r}"),
                })?;
                let queued = link.pending_snapshot;
                if queued && !up {
                    continue; // still waiting for the link
                }
                let moments = self.known_moments(s, comp)?;
                let fresh = comp.snapshot(&self.nodes[s].v, pos, &moments, k);
                let want = if queued {
                    true
                } else {
                    let link = &self.nodes[s].links[&r];
                    let held = link.sent_snapshot.as_ref().ok_or(Error::InvariantBreach {
                        tick: k,
                        what: format!("snapshot mirror missing on link {s} -> {r}"),
                    })?;
                    let support = self.nodes[s]
                        .known_pdfs
                        .get(&r)
                        .ok_or(Error::MissingPdf { node: s, source_node: r })?
                        .0
                        .support();
                    let u_r = trigger::utility_receiver(&fresh, held, support)?;
                    trigger::decide(
                        &self.policy,
                        (u_r, 0.0, 0.0),
                        self.radius,
                        self.budget_degree(s),
                        self.budget_degree(r),
                    )
                    .send_snapshot
                };
                if want {
                    if up {
                        sends.push((s, r, fresh));
                    } else {
                        defers.push((s, r));
                    }
                }
            }
        }
        for (s, r, snap) in sends {
            if self.log {
                self.messages.push(MessageRecord {
                    tick: k,
                    from: s,
                    to: r,
                    kind: MessageKind::Snapshot,
                    payload: snap.wire_scalars(),
                });
            }
            self.nodes[r].known_snapshots.insert(s, snap.clone());
            let link = self.nodes[s].links.get_mut(&r).expect("mirror exists");
            link.sent_snapshot = Some(snap);
            link.pending_snapshot = false;
            self.snap_count += 1;
        }
        for (s, r) in defers {
            self.nodes[s].links.get_mut(&r).expect("mirror exists").pending_snapshot = true;
        }
        Ok(())
    }

    /// Exchange pass two: refresh distribution copies. For each directed
    /// support pair `(s, r)`, node `s` scores the staleness of the copy
    /// `r` holds two ways — the shift of the expected value of the
    /// snapshot `s` holds of `r`'s gradient (exact in moments), and the
    /// worst-case density gap — and sends its current distribution when
    /// either clears its threshold. The expensive density score is
    /// skipped when the moment score already fires, and cached per
    /// `(sender, mirror tick)` within the tick.
    fn exchange_pdfs_scored(&mut self, k: u64, active: &AdjacencySample) -> Result<()> {
        self.supdiff_cache.clear();
        let mut sends: Vec<(usize, usize)> = Vec::new();
        let mut defers: Vec<(usize, usize)> = Vec::new();
        for e in 0..self.topo.edges.len() {
            let (a, b) = self.topo.edges[e];
            let up = self.link_up(active, a, b);
            for (s, r) in [(a, b), (b, a)] {
                let node_s = &self.nodes[s];
                let link = node_s.links.get(&r).ok_or(Error::InvariantBreach {
                    tick: k,
                    what: format!("no link mirror from {s} to {r}"),
                })?;
                let want = if link.pending_pdf {
                    true
                } else {
                    let snap = node_s.known_snapshots.get(&r).ok_or(Error::InvariantBreach {
                        tick: k,
                        what: format!("node {s} holds no gradient snapshot from {r}"),
                    })?;
                    let (sent_pdf, sent_tick) = &link.sent_pdf;
                    let u_s1 = trigger::utility_sender_grad(snap, &node_s.own_pdf, sent_pdf);
                    // Short-circuit: the density score cannot un-fire a send.
                    let u_s2 = if u_s1 > self.policy.pdf_threshold(self.radius, self.budget_degree(r)) {
                        0.0
                    } else {
                        *self
                            .supdiff_cache
                            .entry((s, *sent_tick))
                            .or_insert_with(|| {
                                trigger::utility_sender_density(&node_s.own_pdf, sent_pdf)
                            })
                    };
                    trigger::decide(
                        &self.policy,
                        (0.0, u_s1, u_s2),
                        self.radius,
                        self.budget_degree(s),
                        self.budget_degree(r),
                    )
                    .send_pdf
                };
                if want {
                    if up {
                        sends.push((s, r));
                    } else {
                        defers.push((s, r));
                    }
                }
            }
        }
        self.apply_pdf_sends(&sends, k);
        self.defer_pdf_sends(&defers);
        Ok(())
    }

    /// Simplified trigger for affine-in-noise gradients: score only the
    /// mean drift of the sender's distribution against the copy the
    /// receiver holds. No snapshots are maintained — the receiver's
    /// expected-gradient shift is exactly the per-link slope times the
    /// mean shift.
    fn exchange_pdfs_linear(&mut self, k: u64, active: &AdjacencySample) -> Result<()> {
        let coeff = self.coeff_norm.expect("checked at start of run");
        let mut sends: Vec<(usize, usize)> = Vec::new();
        let mut defers: Vec<(usize, usize)> = Vec::new();
        for e in 0..self.topo.edges.len() {
            let (a, b) = self.topo.edges[e];
            let up = self.link_up(active, a, b);
            for (s, r) in [(a, b), (b, a)] {
                let node_s = &self.nodes[s];
                let link = node_s.links.get(&r).ok_or(Error::InvariantBreach {
                    tick: k,
                    what: format!("no link mirror from {s} to {r}"),
                })?;
                let shift = node_s.own_pdf.mean() - link.sent_pdf.0.mean();
                let want = link.pending_pdf
                    || trigger::linear_send_pdf(
                        &self.policy,
                        coeff,
                        shift,
                        self.radius,
                        self.budget_degree(r),
                    );
                if want {
                    if up {
                        sends.push((s, r));
                    } else {
                        defers.push((s, r));
                    }
                }
            }
        }
        self.apply_pdf_sends(&sends, k);
        self.defer_pdf_sends(&defers);
        Ok(())
    }

    /// Every-time baseline: a distribution update on each channel the
    /// transport offers — every support edge, or every active edge —
    /// both directions, every tick.
    fn exchange_everytime(&mut self, k: u64, active: &AdjacencySample) {
        let sends: Vec<(usize, usize)> = self
            .topo
            .edges
            .iter()
            .filter(|&&(a, b)| self.link_up(active, a, b))
            .flat_map(|&(a, b)| [(a, b), (b, a)])
            .collect();
        self.apply_pdf_sends(&sends, k);
    }

    fn apply_pdf_sends(&mut self, sends: &[(usize, usize)], k: u64) {
        for &(s, r) in sends {
            let payload = self.nodes[s].own_pdf.clone();
            if self.log {
                self.messages.push(MessageRecord {
                    tick: k,
                    from: s,
                    to: r,
                    kind: MessageKind::Pdf,
                    payload: payload.wire_scalars(),
                });
            }
            self.nodes[r].known_pdfs.insert(s, (payload.clone(), k));
            let link = self.nodes[s].links.get_mut(&r).expect("mirror exists");
            link.sent_pdf = (payload, k);
            link.pending_pdf = false;
            self.pdf_count += 1;
        }
    }

    fn defer_pdf_sends(&mut self, defers: &[(usize, usize)]) {
        for &(s, r) in defers {
            self.nodes[s].links.get_mut(&r).expect("mirror exists").pending_pdf = true;
        }
    }
}
