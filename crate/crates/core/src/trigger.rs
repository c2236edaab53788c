//! Event-triggered communication policy.
//!
//! Every tick, each node holding fresher information than its counterpart
//! scores the staleness two ways and sends only when a score clears its
//! threshold. The scores are built so that when *nothing* is sent, the
//! receiver's expected-gradient error provably stays within the accuracy
//! budget `epsilon / (2 * radius)` that the steady-state error bound
//! assumes; the thresholds split that budget between the two update kinds
//! (`eta` to gradient refreshes, `1 - eta` to distribution refreshes) and
//! across each node's neighbor count.
//!
//! * **Receiver-utility** `u_r`: how much the counterpart's frozen
//!   gradient function of *my* noise has drifted since I last sent mine —
//!   the integral of the pointwise gap over the noise support.
//! * **Sender-utility** `u_s1`: how much the *expected value* of the
//!   gradient function the counterpart holds moves when my distribution
//!   update replaces the copy it has.
//! * **Sender-utility** `u_s2`: the worst-case pointwise density gap
//!   between my current distribution and the copy the counterpart holds —
//!   a distribution-only trigger with threshold `nu` that also caps how
//!   much `u_r`'s integration measure can have drifted.
//!
//! All comparisons are strict: a score exactly at threshold does not send.

use serde::{Deserialize, Serialize};

use crate::dist::{sup_density_diff, Pdf};
use crate::objective::GradientSnapshot;
use crate::quad::simpson_vec;
use crate::{Error, Result};

/// Panels used by the receiver-utility integral. Fixed, not adaptive: the
/// evaluation count is part of the policy's definition.
pub const RECEIVER_UTILITY_PANELS: usize = 1024;

/// Which trigger policy governs communication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// Full scoring: integral utilities plus the density-gap trigger.
    Full,
    /// Mean-drift shortcut for costs whose snapshots are affine in the
    /// noise: only the counterpart-mean shift is scored.
    #[serde(alias = "linear")]
    LinearSimplified,
    /// Send a distribution update on every active link, every tick
    /// (baseline; never sends snapshots).
    #[serde(alias = "everytime")]
    EveryTime,
    /// Never send anything after the initial broadcast (negative-control
    /// baseline; violates the accuracy budget by construction).
    Never,
}

/// How policy messages travel relative to the random link process.
///
/// The random graph gates the *consensus* exchange; whether it also gates
/// the policy's payload traffic is a modeling choice with teeth: queueing
/// a triggered send behind a down link lets the receiver's copy go staler
/// than the thresholds were sized for, so the accuracy budget can be
/// overrun during an unlucky streak. The default therefore gives the
/// policy a dedicated always-on channel; the deferred variant is kept for
/// studying that overrun.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    /// Payloads travel over every support-graph link, every tick,
    /// independent of the link activations. The budget guarantee holds
    /// unconditionally.
    #[default]
    Support,
    /// Payloads travel only over currently active links; a triggered send
    /// on a down link queues and transmits (the then-current payload) at
    /// the link's next activation. The budget guarantee is best-effort.
    ActiveDeferred,
}

/// Trigger policy parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub mode: PolicyMode,
    /// Accuracy budget: the expected-gradient error the network tolerates.
    pub epsilon: f64,
    /// Budget split between snapshot refreshes (`eta`) and distribution
    /// refreshes (`1 - eta`).
    pub eta: f64,
    /// Density-gap threshold (and the divisor that converts the snapshot
    /// budget share into an integral threshold).
    pub nu: f64,
    /// How payloads travel relative to the link activations.
    #[serde(default)]
    pub transport: Transport,
    /// Split each node's budget across all `n` nodes instead of its
    /// actual neighbor count — a coarser, always-safe reading of the
    /// per-link shares (strictly smaller thresholds, so at least as much
    /// traffic).
    #[serde(default)]
    pub conservative_degrees: bool,
}

impl PolicyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::NonPositive { name: "epsilon", value: self.epsilon });
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(Error::NonPositive { name: "nu", value: self.nu });
        }
        Ok(())
    }

    /// Threshold the receiver-utility must exceed for a snapshot send from
    /// a node with `sender_degree` neighbors.
    pub fn snapshot_threshold(&self, radius: f64, sender_degree: usize) -> f64 {
        (self.eta / self.nu) * self.epsilon / (2.0 * radius * sender_degree as f64)
    }

    /// Threshold the sender-utility must exceed for a distribution send to
    /// a node with `receiver_degree` neighbors.
    pub fn pdf_threshold(&self, radius: f64, receiver_degree: usize) -> f64 {
        (1.0 - self.eta) * self.epsilon / (2.0 * radius * receiver_degree as f64)
    }
}

/// Outcome of scoring one directed link at one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyDecision {
    pub send_snapshot: bool,
    pub send_pdf: bool,
    pub receiver_utility: f64,
    pub sender_utility_grad: f64,
    pub sender_utility_density: f64,
}

impl PolicyDecision {
    pub fn silent() -> Self {
        PolicyDecision {
            send_snapshot: false,
            send_pdf: false,
            receiver_utility: 0.0,
            sender_utility_grad: 0.0,
            sender_utility_density: 0.0,
        }
    }
}

/// Receiver-utility: `\int || fresh(w) - held(w) || dw` over the union of
/// the distributions' supports, by fixed-panel Simpson.
///
/// `fresh` is the snapshot the sender would transmit now; `held` is the
/// one the counterpart currently holds (both functions of the same
/// scalar noise).
pub fn utility_receiver(fresh: &GradientSnapshot, held: &GradientSnapshot, support: (f64, f64)) -> Result<f64> {
    if fresh.dim() != held.dim() {
        return Err(Error::DimensionMismatch { expected: fresh.dim(), got: held.dim() });
    }
    let mut fresh_buf = nalgebra::DVector::zeros(fresh.dim());
    let mut held_buf = nalgebra::DVector::zeros(held.dim());
    let gap = simpson_vec(
        |w, out: &mut nalgebra::DVector<f64>| {
            fresh.eval_into(w, &mut fresh_buf);
            held.eval_into(w, &mut held_buf);
            out[0] = (&fresh_buf - &held_buf).norm();
        },
        support.0,
        support.1,
        RECEIVER_UTILITY_PANELS,
        1,
    );
    Ok(gap[0])
}

/// Sender-utility (gradient form): how far the expected value of the
/// snapshot the counterpart holds moves when `current` replaces `held`
/// as the integration measure: `|| E_current[snap] - E_held[snap] ||`.
///
/// Because snapshots are quadratic in the noise, the expectations are
/// exact in the distributions' first two moments.
pub fn utility_sender_grad(snapshot: &GradientSnapshot, current: &Pdf, held: &Pdf) -> f64 {
    (snapshot.expectation(current.moments()) - snapshot.expectation(held.moments())).norm()
}

/// Sender-utility (density form): worst-case pointwise density gap.
pub fn utility_sender_density(current: &Pdf, held: &Pdf) -> f64 {
    sup_density_diff(current, held)
}

/// Score one directed link under the full policy. `radius` is the
/// feasible-set scale constant; degrees are support-graph neighbor
/// counts (each node splits its budget across all links it maintains).
pub fn decide(
    params: &PolicyParams,
    utilities: (f64, f64, f64),
    radius: f64,
    sender_degree: usize,
    receiver_degree: usize,
) -> PolicyDecision {
    let (receiver_utility, sender_utility_grad, sender_utility_density) = utilities;
    match params.mode {
        PolicyMode::EveryTime => PolicyDecision {
            send_pdf: true,
            ..PolicyDecision {
                receiver_utility,
                sender_utility_grad,
                sender_utility_density,
                ..PolicyDecision::silent()
            }
        },
        PolicyMode::Never => PolicyDecision {
            receiver_utility,
            sender_utility_grad,
            sender_utility_density,
            ..PolicyDecision::silent()
        },
        PolicyMode::Full | PolicyMode::LinearSimplified => {
            let send_snapshot = receiver_utility > params.snapshot_threshold(radius, sender_degree);
            let send_pdf = sender_utility_grad > params.pdf_threshold(radius, receiver_degree)
                || sender_utility_density > params.nu;
            PolicyDecision {
                send_snapshot,
                send_pdf,
                receiver_utility,
                sender_utility_grad,
                sender_utility_density,
            }
        }
    }
}

/// Mean-drift shortcut for affine-in-noise snapshots: the expected
/// gradient the counterpart computes shifts by exactly
/// `coeff_norm * |mean shift|` per affected term, and each term carries a
/// factor 2 in the built-in quadratic costs. Sends a distribution update
/// when that drift exceeds the receiver's budget share.
pub fn linear_send_pdf(
    params: &PolicyParams,
    coeff_norm: f64,
    mean_shift: f64,
    radius: f64,
    receiver_degree: usize,
) -> bool {
    2.0 * coeff_norm * mean_shift.abs() > params.epsilon / (2.0 * radius * receiver_degree as f64)
}

/// One logged transmission, for trace inspection: the tick it happened,
/// the directed endpoints, what kind of payload it carried, and the
/// payload's flat scalar encoding (a distribution's tagged parameters, a
/// snapshot's header-plus-coefficients, or both in that order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub tick: u64,
    pub from: usize,
    pub to: usize,
    pub kind: MessageKind,
    pub payload: Vec<f64>,
}

/// Payload kind of a logged transmission. `Both` marks a single
/// transmission carrying a distribution and a snapshot together (the
/// initial broadcast under the full policy); counter reconstruction
/// counts it toward both kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Pdf,
    Snapshot,
    Both,
}

/// Online verifier for the accuracy budget: records, per node and tick,
/// the gap between the expected gradient computed from held (possibly
/// stale) distributions and the one computed from the true current
/// distributions, as a fraction of the budget `epsilon / (2 * radius)`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GuaranteeLedger {
    /// Largest observed gap / budget ratio.
    pub max_ratio: f64,
    /// Observations recorded.
    pub checked: u64,
    /// Observations whose ratio exceeded 1 (capped; the count keeps going).
    pub violations: Vec<GuaranteeViolation>,
    pub violation_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeViolation {
    pub replication: usize,
    pub tick: u64,
    pub node: usize,
    pub ratio: f64,
}

/// Cap on stored violation records (the count is exact regardless).
const MAX_STORED_VIOLATIONS: usize = 100;

impl GuaranteeLedger {
    pub fn observe(
        &mut self,
        replication: usize,
        tick: u64,
        node: usize,
        gap: f64,
        epsilon: f64,
        radius: f64,
    ) {
        let budget = epsilon / (2.0 * radius);
        let ratio = gap / budget;
        self.checked += 1;
        if ratio > self.max_ratio {
            self.max_ratio = ratio;
        }
        if ratio > 1.0 {
            self.violation_count += 1;
            if self.violations.len() < MAX_STORED_VIOLATIONS {
                self.violations.push(GuaranteeViolation { replication, tick, node, ratio });
            }
        }
    }

    /// Fold another ledger into this one (used to merge replications).
    pub fn merge(&mut self, other: &GuaranteeLedger) {
        self.max_ratio = self.max_ratio.max(other.max_ratio);
        self.checked += other.checked;
        self.violation_count += other.violation_count;
        for v in &other.violations {
            if self.violations.len() >= MAX_STORED_VIOLATIONS {
                break;
            }
            self.violations.push(*v);
        }
    }
}

/// Verdict over one or more replications' budget ledgers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuaranteeReport {
    /// Worst observed gap / budget ratio across all replications.
    pub max_ratio: f64,
    /// Total (node, tick) observations behind it.
    pub checked: u64,
    /// Observations that exceeded the budget.
    pub violation_count: u64,
    /// A bounded sample of the violations, with their coordinates.
    pub violations: Vec<GuaranteeViolation>,
    /// `max_ratio <= 1`: the stale-knowledge expected gradient stayed
    /// within `epsilon / (2 * radius)` of the true one everywhere.
    pub passed: bool,
}

/// Aggregate the per-replication budget ledgers into a single verdict:
/// the maximum observed ratio of the stale-vs-true expected-gradient gap
/// to the budget `epsilon / (2 * radius)`, with every over-budget
/// observation's (replication, tick, node) coordinates preserved (up to
/// the storage cap; the count is exact).
pub fn verify_epsilon_guarantee(ledgers: &[GuaranteeLedger]) -> GuaranteeReport {
    let mut merged = GuaranteeLedger::default();
    for ledger in ledgers {
        merged.merge(ledger);
    }
    GuaranteeReport {
        max_ratio: merged.max_ratio,
        checked: merged.checked,
        violation_count: merged.violation_count,
        passed: merged.max_ratio <= 1.0,
        violations: merged.violations,
    }
}
