//! Admission strategies, valuations, and marginal-cost pricing.
//!
//! The priced strategy (`dapa`) assigns each arriving user the decision pair
//! minimizing a monetized objective: the increase in every existing user's
//! delay caused by the newcomer, plus the newcomer's own total delay, each
//! weighted by its money-per-second rate. Maximizing the instant social
//! surplus (newcomer valuation minus post-join system valuation) is the same
//! problem up to a pair-independent constant; [`instant_surplus`] keeps the
//! surplus form alive as an independently coded cross-check.
//!
//! The payment charged on admission is the marginal cost: exactly the
//! monetized delay increase imposed on the users already in the system.
//! Under this rule, declaring one's true tolerable latency is a weakly
//! dominant strategy; [`truthfulness_probe`] exercises that property.
//!
//! The unpriced baselines are `ue` (selfish minimum-delay choice) and `rs`
//! (uniform random feasible choice).

use rand::Rng;

use crate::latency::{self, DelayBreakdown};
use crate::model::{DecisionPair, SystemState, TaskRequest, Topology};
use crate::scalar::Scalar;

/// Money-per-second rates for the three delay legs.
#[derive(Debug, Clone, PartialEq)]
pub struct Rates<S> {
    /// Per-AP transmission-time rate.
    pub alpha_per_s: Vec<S>,
    /// Per-pair transfer-time rate.
    pub beta_per_s: Vec<Vec<S>>,
    /// Per-server computation-time rate.
    pub gamma_per_s: Vec<S>,
}

impl<S: Scalar> Rates<S> {
    pub fn from_topology(topo: &Topology<S>) -> Self {
        Self {
            alpha_per_s: topo.cloudlets.iter().map(|c| c.alpha_per_s).collect(),
            beta_per_s: topo.beta_per_s.clone(),
            gamma_per_s: topo.cloudlets.iter().map(|c| c.gamma_per_s).collect(),
        }
    }

    /// Uniform rates for all APs, pairs, and servers.
    pub fn uniform(m: usize, alpha: S, beta: S, gamma: S) -> Self {
        Self {
            alpha_per_s: vec![alpha; m],
            beta_per_s: vec![vec![beta; m]; m],
            gamma_per_s: vec![gamma; m],
        }
    }
}

/// Why a request was sent to the remote cloud instead of being admitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FallbackReason {
    /// No AP covers the user's position.
    NoCoverage,
    /// Coverage exists but every pair fails a capacity constraint.
    NoFeasiblePair,
    /// The objective-optimal pair misses the declared deadline.
    DeadlineViolated,
}

impl FallbackReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            FallbackReason::NoCoverage => "no_coverage",
            FallbackReason::NoFeasiblePair => "no_feasible_pair",
            FallbackReason::DeadlineViolated => "deadline_violated",
        }
    }
}

/// Valuation bookkeeping attached to priced admissions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PricingDetail<S> {
    /// System valuation just before the join.
    pub system_valuation_before: S,
    /// System valuation over existing users just after the join.
    pub system_valuation_after: S,
    /// Instant social surplus of the chosen pair.
    pub surplus: S,
}

/// A successful admission.
#[derive(Debug, Clone, PartialEq)]
pub struct Admission<S> {
    pub pair: DecisionPair,
    pub breakdown: DelayBreakdown<S>,
    /// Charge for the admission; zero under the unpriced baselines.
    pub payment: S,
    /// The user's valuation of the experienced latency.
    pub user_valuation: S,
    /// `user_valuation - payment`.
    pub user_utility: S,
    /// Present for priced (dapa) admissions only.
    pub pricing: Option<PricingDetail<S>>,
}

/// Outcome of one admission decision.
#[derive(Debug, Clone, PartialEq)]
pub enum AdmissionOutcome<S> {
    Admitted(Admission<S>),
    CloudFallback(FallbackReason),
}

impl<S> AdmissionOutcome<S> {
    pub fn admission(&self) -> Option<&Admission<S>> {
        match self {
            AdmissionOutcome::Admitted(a) => Some(a),
            AdmissionOutcome::CloudFallback(_) => None,
        }
    }

    pub fn fallback_reason(&self) -> Option<FallbackReason> {
        match self {
            AdmissionOutcome::Admitted(_) => None,
            AdmissionOutcome::CloudFallback(r) => Some(*r),
        }
    }
}

/// The user's valuation of completing its task with the given delays:
/// its time rate times the slack left under the declared deadline.
/// Negative when the delay exceeds the deadline.
pub fn user_valuation<S: Scalar>(req: &TaskRequest<S>, breakdown: &DelayBreakdown<S>) -> S {
    req.psi_per_s * (req.deadline - breakdown.total)
}

/// Monetized delay of everyone currently in the system, at current counts:
/// per user, the AP rate times its transmission delay plus the server rate
/// times its computation delay; per pair, the transfer rate times the round
/// trips in flight.
pub fn system_valuation<S: Scalar>(
    state: &SystemState<S>,
    topo: &Topology<S>,
    rates: &Rates<S>,
) -> S {
    let mut total = per_pair_transfer_value(&state.x, topo, rates);
    for n in &state.roster {
        let t = latency::transmission_delay(
            n.data_size_mb,
            state.u[n.pair.ap],
            topo.cloudlets[n.pair.ap].bandwidth_mbps,
        );
        let c = latency::computation_delay(
            n.cycles,
            state.v[n.pair.server],
            topo.cloudlets[n.pair.server].compute_hz,
        );
        total += rates.alpha_per_s[n.pair.ap] * t + rates.gamma_per_s[n.pair.server] * c;
    }
    total
}

/// System valuation over the existing users after a hypothetical join on
/// `pair`: their transmission and computation delays are re-evaluated at the
/// raised occupancy counts. Transfer terms keep the pre-join pair counts --
/// a newcomer never changes the transfer delay between cloudlets, and its
/// own legs are valued by the user, not the system.
pub fn system_valuation_after<S: Scalar>(
    state: &SystemState<S>,
    topo: &Topology<S>,
    rates: &Rates<S>,
    pair: DecisionPair,
) -> S {
    let mut total = per_pair_transfer_value(&state.x, topo, rates);
    for n in &state.roster {
        let u_hat = state.u[n.pair.ap] + u32::from(n.pair.ap == pair.ap);
        let v_hat = state.v[n.pair.server] + u32::from(n.pair.server == pair.server);
        let t = latency::transmission_delay(
            n.data_size_mb,
            u_hat,
            topo.cloudlets[n.pair.ap].bandwidth_mbps,
        );
        let c = latency::computation_delay(
            n.cycles,
            v_hat,
            topo.cloudlets[n.pair.server].compute_hz,
        );
        total += rates.alpha_per_s[n.pair.ap] * t + rates.gamma_per_s[n.pair.server] * c;
    }
    total
}

fn per_pair_transfer_value<S: Scalar>(
    x: &[Vec<u32>],
    topo: &Topology<S>,
    rates: &Rates<S>,
) -> S {
    let mut total = S::zero();
    for (i, row) in x.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            if count > 0 {
                total += rates.beta_per_s[i][j]
                    * S::from_count(2 * count)
                    * topo.transfer_delay_s[i][j];
            }
        }
    }
    total
}

/// Instant social surplus of admitting the request on `pair`: the newcomer's
/// valuation minus the post-join system valuation.
///
/// Evaluated the slow way -- the join is applied to a copy of the state and
/// every existing user's delay is recomputed -- so it stays an independent
/// cross-check for the closed-form [`admission_cost`]. For a fixed state and
/// request, `instant_surplus + admission_cost` is the same pair-independent
/// constant for every feasible pair, so the surplus argmax and the cost
/// argmin coincide.
///
/// `pair` must be feasible for the request.
pub fn instant_surplus<S: Scalar>(
    state: &SystemState<S>,
    topo: &Topology<S>,
    rates: &Rates<S>,
    req: &TaskRequest<S>,
    pair: DecisionPair,
) -> S {
    let breakdown = latency::total_delay(state, topo, req, pair);
    let mut post = state.clone();
    post.apply_join(
        crate::model::ActiveUserRecord::from_request(req, pair, breakdown, S::zero()),
        topo,
    )
    .expect("instant_surplus requires a feasible pair");
    // Transfer value at pre-join pair counts: the newcomer is excluded.
    let mut system_value = per_pair_transfer_value(&state.x, topo, rates);
    for n in post.roster.iter().filter(|n| n.user_id != req.user_id) {
        let t = latency::transmission_delay(
            n.data_size_mb,
            post.u[n.pair.ap],
            topo.cloudlets[n.pair.ap].bandwidth_mbps,
        );
        let c = latency::computation_delay(
            n.cycles,
            post.v[n.pair.server],
            topo.cloudlets[n.pair.server].compute_hz,
        );
        system_value += rates.alpha_per_s[n.pair.ap] * t + rates.gamma_per_s[n.pair.server] * c;
    }
    user_valuation(req, &breakdown) - system_value
}

/// The monetized cost of admitting the request on `pair`: the delay increase
/// the newcomer inflicts on existing users at its AP and server, plus the
/// newcomer's own total delay, each weighted by its time rate.
///
/// Closed form: raising an AP's user count by one adds `data/bandwidth`
/// seconds to each user already there, and raising a server's task count by
/// one adds `cycles/compute` seconds to each task already there.
///
/// The priced strategy minimizes this value over the feasible pairs.
pub fn admission_cost<S: Scalar>(
    state: &SystemState<S>,
    topo: &Topology<S>,
    rates: &Rates<S>,
    req: &TaskRequest<S>,
    pair: DecisionPair,
) -> S {
    let transmission_increase = delay_increase_on_ap(state, topo, pair.ap);
    let computation_increase = delay_increase_on_server(state, topo, pair.server);
    let own = latency::total_delay(state, topo, req, pair);
    rates.alpha_per_s[pair.ap] * transmission_increase
        + rates.gamma_per_s[pair.server] * computation_increase
        + req.psi_per_s * own.total
}

/// Total transmission-delay increase over users on AP `ap` when one more
/// user connects: each gains its lone-user delay `data/bandwidth`.
fn delay_increase_on_ap<S: Scalar>(state: &SystemState<S>, topo: &Topology<S>, ap: usize) -> S {
    let bandwidth = topo.cloudlets[ap].bandwidth_mbps;
    state
        .roster
        .iter()
        .filter(|n| n.pair.ap == ap)
        .map(|n| latency::transmission_delay(n.data_size_mb, 1, bandwidth))
        .sum()
}

/// Total computation-delay increase over tasks on server `server` when one
/// more task lands: each gains its lone-task delay `cycles/compute`.
fn delay_increase_on_server<S: Scalar>(
    state: &SystemState<S>,
    topo: &Topology<S>,
    server: usize,
) -> S {
    let compute = topo.cloudlets[server].compute_hz;
    state
        .roster
        .iter()
        .filter(|n| n.pair.server == server)
        .map(|n| latency::computation_delay(n.cycles, 1, compute))
        .sum()
}

/// Marginal-cost payment for joining on `pair`: the monetized delay increase
/// imposed on the users already in the system. Always non-negative, zero in
/// an empty system, and equal to `system_valuation_after - system_valuation`
/// (the transfer terms cancel).
pub fn payment<S: Scalar>(
    state_before: &SystemState<S>,
    topo: &Topology<S>,
    rates: &Rates<S>,
    pair: DecisionPair,
) -> S {
    rates.alpha_per_s[pair.ap] * delay_increase_on_ap(state_before, topo, pair.ap)
        + rates.gamma_per_s[pair.server] * delay_increase_on_server(state_before, topo, pair.server)
}

/// Shared prologue: feasible pairs or the fallback reason.
fn feasible_or_fallback<S: Scalar>(
    state: &SystemState<S>,
    topo: &Topology<S>,
    req: &TaskRequest<S>,
) -> Result<Vec<DecisionPair>, FallbackReason> {
    if topo.covering_aps(req.position).is_empty() {
        return Err(FallbackReason::NoCoverage);
    }
    let pairs = state.feasible_pairs(topo, req);
    if pairs.is_empty() {
        return Err(FallbackReason::NoFeasiblePair);
    }
    Ok(pairs)
}

/// Priced admission: evaluates [`admission_cost`] on every feasible pair,
/// takes the argmin (first wins on ties, so lexicographically smallest),
/// checks the declared deadline on that optimum only, and prices the join
/// at marginal cost. A deadline miss on the optimum sends the request to
/// the cloud even if some other feasible pair would have met it.
pub fn dapa_decide<S: Scalar>(
    state: &SystemState<S>,
    topo: &Topology<S>,
    rates: &Rates<S>,
    req: &TaskRequest<S>,
) -> AdmissionOutcome<S> {
    let pairs = match feasible_or_fallback(state, topo, req) {
        Ok(pairs) => pairs,
        Err(reason) => return AdmissionOutcome::CloudFallback(reason),
    };
    let mut best = pairs[0];
    let mut best_cost = admission_cost(state, topo, rates, req, best);
    for &pair in &pairs[1..] {
        let cost = admission_cost(state, topo, rates, req, pair);
        if cost < best_cost {
            best = pair;
            best_cost = cost;
        }
    }
    let breakdown = latency::total_delay(state, topo, req, best);
    if !latency::meets_deadline(&breakdown, req.deadline) {
        return AdmissionOutcome::CloudFallback(FallbackReason::DeadlineViolated);
    }
    let charge = payment(state, topo, rates, best);
    let valuation = user_valuation(req, &breakdown);
    let before = system_valuation(state, topo, rates);
    let after = system_valuation_after(state, topo, rates, best);
    AdmissionOutcome::Admitted(Admission {
        pair: best,
        breakdown,
        payment: charge,
        user_valuation: valuation,
        user_utility: valuation - charge,
        pricing: Some(PricingDetail {
            system_valuation_before: before,
            system_valuation_after: after,
            surplus: valuation - after,
        }),
    })
}

/// User-equilibrium baseline: the selfish minimum-total-delay pair, deadline
/// checked on that optimum, no payment.
pub fn ue_decide<S: Scalar>(
    state: &SystemState<S>,
    topo: &Topology<S>,
    req: &TaskRequest<S>,
) -> AdmissionOutcome<S> {
    let pairs = match feasible_or_fallback(state, topo, req) {
        Ok(pairs) => pairs,
        Err(reason) => return AdmissionOutcome::CloudFallback(reason),
    };
    let mut best = pairs[0];
    let mut best_delay = latency::total_delay(state, topo, req, best);
    for &pair in &pairs[1..] {
        let bd = latency::total_delay(state, topo, req, pair);
        if bd.total < best_delay.total {
            best = pair;
            best_delay = bd;
        }
    }
    unpriced_outcome(req, best, best_delay)
}

/// Random-selection baseline: a uniform draw over the feasible pairs from
/// the run's seeded generator, deadline checked on the draw, no payment.
pub fn rs_decide<S: Scalar, R: Rng + ?Sized>(
    state: &SystemState<S>,
    topo: &Topology<S>,
    req: &TaskRequest<S>,
    rng: &mut R,
) -> AdmissionOutcome<S> {
    let pairs = match feasible_or_fallback(state, topo, req) {
        Ok(pairs) => pairs,
        Err(reason) => return AdmissionOutcome::CloudFallback(reason),
    };
    let pick = pairs[rng.random_range(0..pairs.len())];
    let breakdown = latency::total_delay(state, topo, req, pick);
    unpriced_outcome(req, pick, breakdown)
}

fn unpriced_outcome<S: Scalar>(
    req: &TaskRequest<S>,
    pair: DecisionPair,
    breakdown: DelayBreakdown<S>,
) -> AdmissionOutcome<S> {
    if !latency::meets_deadline(&breakdown, req.deadline) {
        return AdmissionOutcome::CloudFallback(FallbackReason::DeadlineViolated);
    }
    let valuation = user_valuation(req, &breakdown);
    AdmissionOutcome::Admitted(Admission {
        pair,
        breakdown,
        payment: S::zero(),
        user_valuation: valuation,
        user_utility: valuation,
        pricing: None,
    })
}

/// One misreport's outcome, valued with the user's true preferences.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow<S> {
    /// The deadline the user declared.
    pub declared_deadline: S,
    pub admitted: bool,
    /// Utility under the true valuation: zero on cloud fallback.
    pub true_utility: S,
    /// Whether the resulting delay meets the user's true deadline.
    pub satisfies_true_deadline: bool,
}

/// Utility table from probing a set of deadline misreports.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport<S> {
    pub truthful_utility: S,
    pub rows: Vec<ProbeRow<S>>,
}

impl<S: Scalar> ProbeReport<S> {
    /// Largest utility gain any misreport achieves over truth-telling,
    /// among misreports whose outcome meets the true deadline. `None` when
    /// no misreport yields such an outcome. Non-positive when truth-telling
    /// is weakly dominant.
    pub fn max_profitable_deviation(&self) -> Option<S> {
        self.rows
            .iter()
            .filter(|r| r.satisfies_true_deadline)
            .map(|r| r.true_utility - self.truthful_utility)
            .fold(None, |acc, d| Some(acc.map_or(d, |a: S| a.max(d))))
    }
}

/// Runs the priced admission once per misreported deadline and evaluates
/// each outcome with the user's *true* valuation. `req.deadline` is taken
/// as the truth; cloud fallback is worth zero.
pub fn truthfulness_probe<S: Scalar>(
    state: &SystemState<S>,
    topo: &Topology<S>,
    rates: &Rates<S>,
    req: &TaskRequest<S>,
    misreports: &[S],
) -> ProbeReport<S> {
    let true_utility_of = |outcome: &AdmissionOutcome<S>| -> (bool, S, bool) {
        match outcome {
            AdmissionOutcome::Admitted(a) => {
                let valuation = req.psi_per_s * (req.deadline - a.breakdown.total);
                (
                    true,
                    valuation - a.payment,
                    a.breakdown.total <= req.deadline,
                )
            }
            AdmissionOutcome::CloudFallback(_) => (false, S::zero(), false),
        }
    };
    let truthful = dapa_decide(state, topo, rates, req);
    let (_, truthful_utility, _) = true_utility_of(&truthful);
    let rows = misreports
        .iter()
        .map(|&declared| {
            let mut misreported = req.clone();
            misreported.deadline = declared;
            let outcome = dapa_decide(state, topo, rates, &misreported);
            let (admitted, true_utility, satisfies) = true_utility_of(&outcome);
            ProbeRow {
                declared_deadline: declared,
                admitted,
                true_utility,
                satisfies_true_deadline: satisfies,
            }
        })
        .collect();
    ProbeReport {
        truthful_utility,
        rows,
    }
}

/// Evenly spaced misreport candidates from 5% to 300% of the deadline.
pub fn misreport_grid<S: Scalar>(deadline: S, count: usize) -> Vec<S> {
    if count == 1 {
        return vec![deadline];
    }
    let lo = S::from_f64_lossy(0.05);
    let hi = S::from_f64_lossy(3.0);
    (0..count)
        .map(|k| {
            let frac = S::from_f64_lossy(k as f64 / (count - 1) as f64);
            deadline * (lo + (hi - lo) * frac)
        })
        .collect()
}
