//! Simulator for distributed stochastic epsilon-gradient tracking over
//! randomly connected networks.
//!
//! A fleet of nodes cooperatively tracks the minimizer of a sum of
//! time-varying convex costs. Each node's cost depends on random
//! environmental quantities whose distributions drift over time; nodes
//! exchange distribution descriptions and frozen gradient functions over
//! communication links that are only intermittently active, and a
//! trigger policy decides per link and per tick whether an update is
//! worth sending. The solver interleaves a disagreement-damping
//! consensus step with a projected stochastic gradient step, and the
//! analysis module evaluates the closed-form steady-state error bound
//! the scheme is designed to meet.
//!
//! The crate is deterministic end to end: every run is driven by a
//! single master seed, replications consume independent counter-mode
//! streams, and identical configurations reproduce byte-identical
//! traces.

// Parameter guards are written `!(x > 0.0)` on purpose: the negated
// comparison rejects NaN along with the out-of-range values, which
// `x <= 0.0` would silently admit.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod dist;
pub mod netgraph;
pub mod objective;
pub mod quad;
pub mod rng;
pub mod runner;
pub mod scenario;
pub mod solver;
pub mod trigger;

use thiserror::Error;

/// Crate-wide error type.
///
/// Validation failures (bad parameters, malformed configs) are ordinary
/// errors a caller can handle; [`Error::InvariantBreach`] is reserved for
/// conditions the solver asserts mid-run and maps to a distinct process
/// exit code in the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("graph needs at least {min} nodes, got {got}")]
    TooFewNodes { min: usize, got: usize },

    #[error("edge ({i}, {j}) is out of range for {n} nodes")]
    EdgeOutOfRange { i: usize, j: usize, n: usize },

    #[error("self-loop on node {0} is not allowed")]
    SelfLoop(usize),

    #[error("duplicate edge ({i}, {j})")]
    DuplicateEdge { i: usize, j: usize },

    #[error("activation probability {p} on edge ({i}, {j}) is outside (0, 1]")]
    BadActivationProbability { i: usize, j: usize, p: f64 },

    #[error("the underlying edge set does not connect all {n} nodes")]
    DisconnectedGraph { n: usize },

    #[error("could not draw a connected random geometric graph in {attempts} attempts (radius {radius})")]
    GeometricGraphFailed { attempts: usize, radius: f64 },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {diff}")]
    NotSymmetric { i: usize, j: usize, diff: f64 },

    #[error("eigensolver did not converge within {sweeps} sweeps (off-diagonal norm {off})")]
    EigenNoConvergence { sweeps: usize, off: f64 },

    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },

    #[error("{name} must be finite, got {value}")]
    NotFinite { name: &'static str, value: f64 },

    #[error("support bounds are invalid: lo = {lo}, hi = {hi}")]
    BadSupport { lo: f64, hi: f64 },

    #[error("empirical distribution needs at least one sample")]
    EmptySample,

    #[error("box bounds invalid at coordinate {index}: lower {lo} must be below upper {hi}")]
    BadBoxBounds { index: usize, lo: f64, hi: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("node {node} has no distribution entry for source node {source_node}")]
    MissingPdf { node: usize, source_node: usize },

    #[error("snapshot wire data malformed: {0}")]
    MalformedSnapshot(String),

    #[error("consensus gain {beta} must lie in (0, 1/{n})")]
    BadConsensusGain { beta: f64, n: usize },

    #[error("gradient step {alpha} must lie in (0, {limit}) = (0, m_f/L^2) for m_f = {m_f}, L = {l}")]
    BadGradientStep {
        alpha: f64,
        limit: f64,
        m_f: f64,
        l: f64,
    },

    #[error("contraction factor is {rho} >= 1 (alpha = {alpha}, m_f = {m_f}, L = {l}); no error bound exists")]
    NoContraction {
        rho: f64,
        alpha: f64,
        m_f: f64,
        l: f64,
    },

    #[error("network connectivity measure gamma = {gamma} is outside (0, 1)")]
    BadGamma { gamma: f64 },

    #[error("estimated curvature lower bound m_f = {m_f} is not positive; objective is not strongly convex on the probe set")]
    NotStronglyConvex { m_f: f64 },

    #[error("history too short: need at least {needed} entries, got {got}")]
    HistoryTooShort { needed: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("run invariant breached at tick {tick}: {what}")]
    InvariantBreach { tick: u64, what: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
