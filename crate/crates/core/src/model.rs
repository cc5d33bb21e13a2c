//! Domain types, system topology, and join/leave state transitions.
//!
//! A deployment is a set of cloudlets, each pairing a wireless access point
//! (AP) with an edge server. A newly arriving task is assigned a decision
//! pair `(i, j)`: connect through AP `i`, execute on the server of cloudlet
//! `j`. [`SystemState`] tracks the live roster of admitted users together
//! with the per-AP, per-server, and per-pair counters the delay model reads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latency::DelayBreakdown;
use crate::scalar::Scalar;

/// 2-D position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point<S> {
    pub x: S,
    pub y: S,
}

impl<S: Scalar> Point<S> {
    pub fn new(x: S, y: S) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Self) -> S {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// A cloudlet: co-located AP and edge server with capacities and money rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cloudlet<S> {
    /// Index of this cloudlet within its topology.
    pub id: usize,
    pub position: Point<S>,
    /// Wireless coverage radius of the AP, meters.
    pub coverage_radius_m: S,
    /// Maximum number of simultaneously connected users.
    pub ap_capacity: u32,
    /// Shared uplink bandwidth, megabits per second.
    pub bandwidth_mbps: S,
    /// Aggregate server speed, CPU cycles per second.
    pub compute_hz: S,
    /// Server memory, megabytes.
    pub memory_capacity_mb: S,
    /// Monetary value of AP time, money per second.
    pub alpha_per_s: S,
    /// Monetary value of server time, money per second.
    pub gamma_per_s: S,
}

impl<S: Scalar> Cloudlet<S> {
    /// Whether a user at `position` is inside this AP's coverage disk.
    pub fn covers(&self, position: Point<S>) -> bool {
        self.position.distance(&position) <= self.coverage_radius_m
    }
}

/// The full deployment: cloudlets plus inter-cloudlet transfer data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology<S> {
    pub cloudlets: Vec<Cloudlet<S>>,
    /// One-way transfer delay between cloudlets, seconds. Symmetric, zero diagonal.
    pub transfer_delay_s: Vec<Vec<S>>,
    /// Monetary value of transfer time per pair, money per second.
    pub beta_per_s: Vec<Vec<S>>,
}

impl<S: Scalar> Topology<S> {
    pub fn new(
        cloudlets: Vec<Cloudlet<S>>,
        transfer_delay_s: Vec<Vec<S>>,
        beta_per_s: Vec<Vec<S>>,
    ) -> Result<Self, TopologyError> {
        let topo = Self {
            cloudlets,
            transfer_delay_s,
            beta_per_s,
        };
        topo.validate()?;
        Ok(topo)
    }

    /// Number of cloudlets `M`.
    pub fn len(&self) -> usize {
        self.cloudlets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloudlets.is_empty()
    }

    /// Indices of APs covering `position`, ascending.
    pub fn covering_aps(&self, position: Point<S>) -> Vec<usize> {
        self.cloudlets
            .iter()
            .filter(|c| c.covers(position))
            .map(|c| c.id)
            .collect()
    }

    /// Checks every structural invariant, naming the first violation.
    pub fn validate(&self) -> Result<(), TopologyError> {
        use TopologyError::*;
        let m = self.cloudlets.len();
        if m == 0 {
            return Err(NoCloudlets);
        }
        for (idx, c) in self.cloudlets.iter().enumerate() {
            if c.id != idx {
                return Err(IdMismatch { index: idx, id: c.id });
            }
            if c.ap_capacity < 1 {
                return Err(ApCapacityBelowOne { cloudlet: idx });
            }
            if !(c.bandwidth_mbps > S::zero()) {
                return Err(NonPositiveBandwidth { cloudlet: idx });
            }
            if !(c.compute_hz > S::zero()) {
                return Err(NonPositiveCompute { cloudlet: idx });
            }
            if !(c.memory_capacity_mb > S::zero()) {
                return Err(NonPositiveMemory { cloudlet: idx });
            }
            if !(c.coverage_radius_m > S::zero()) {
                return Err(NonPositiveRadius { cloudlet: idx });
            }
            if c.alpha_per_s < S::zero() || c.gamma_per_s < S::zero() {
                return Err(NegativeRate { cloudlet: idx });
            }
        }
        for (name, matrix) in [
            ("transfer_delay_s", &self.transfer_delay_s),
            ("beta_per_s", &self.beta_per_s),
        ] {
            if matrix.len() != m || matrix.iter().any(|row| row.len() != m) {
                return Err(MatrixShape { matrix: name });
            }
            for (i, row) in matrix.iter().enumerate() {
                for (j, &val) in row.iter().enumerate() {
                    if val < S::zero() {
                        return Err(NegativeMatrixEntry { matrix: name, i, j });
                    }
                }
            }
        }
        for i in 0..m {
            if self.transfer_delay_s[i][i] != S::zero() {
                return Err(NonzeroTransferDiagonal { cloudlet: i });
            }
            for j in 0..i {
                if self.transfer_delay_s[i][j] != self.transfer_delay_s[j][i] {
                    return Err(AsymmetricTransfer { i, j });
                }
            }
        }
        Ok(())
    }
}

/// Structural problem in a [`Topology`].
#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("topology has no cloudlets")]
    NoCloudlets,
    #[error("cloudlet at index {index} carries id {id}")]
    IdMismatch { index: usize, id: usize },
    #[error("cloudlet {cloudlet}: AP capacity must be at least 1")]
    ApCapacityBelowOne { cloudlet: usize },
    #[error("cloudlet {cloudlet}: bandwidth must be positive")]
    NonPositiveBandwidth { cloudlet: usize },
    #[error("cloudlet {cloudlet}: compute speed must be positive")]
    NonPositiveCompute { cloudlet: usize },
    #[error("cloudlet {cloudlet}: memory capacity must be positive")]
    NonPositiveMemory { cloudlet: usize },
    #[error("cloudlet {cloudlet}: coverage radius must be positive")]
    NonPositiveRadius { cloudlet: usize },
    #[error("cloudlet {cloudlet}: money rates must be non-negative")]
    NegativeRate { cloudlet: usize },
    #[error("matrix {matrix} is not square with one row per cloudlet")]
    MatrixShape { matrix: &'static str },
    #[error("matrix {matrix} entry ({i},{j}) is negative")]
    NegativeMatrixEntry { matrix: &'static str, i: usize, j: usize },
    #[error("transfer delay diagonal entry {cloudlet} must be zero")]
    NonzeroTransferDiagonal { cloudlet: usize },
    #[error("transfer delay entries ({i},{j}) and ({j},{i}) differ")]
    AsymmetricTransfer { i: usize, j: usize },
}

/// One user's offloading request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRequest<S> {
    pub user_id: u64,
    /// Arrival time, seconds.
    pub arrival_time: S,
    pub position: Point<S>,
    /// Total CPU cycles the task needs.
    pub cycles: S,
    /// Input data size, megabytes.
    pub data_size_mb: S,
    /// Declared maximum tolerable end-to-end latency, seconds.
    pub deadline: S,
    /// The user's monetary value of saved time, money per second.
    pub psi_per_s: S,
}

/// An `(AP, server)` assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DecisionPair {
    pub ap: usize,
    pub server: usize,
}

impl DecisionPair {
    pub fn new(ap: usize, server: usize) -> Self {
        Self { ap, server }
    }
}

/// Bookkeeping for an admitted user while its task is in the system.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveUserRecord<S> {
    pub user_id: u64,
    pub pair: DecisionPair,
    /// Admission time, seconds.
    pub start_time: S,
    /// Departure time: start plus the admission-time total delay, seconds.
    pub end_time: S,
    /// Delay breakdown frozen at admission.
    pub breakdown: DelayBreakdown<S>,
    pub payment: S,
    pub data_size_mb: S,
    pub cycles: S,
    /// Declared maximum tolerable latency, seconds.
    pub deadline: S,
}

impl<S: Scalar> ActiveUserRecord<S> {
    /// Builds a record with `end_time = start_time + breakdown.total`.
    pub fn new(
        user_id: u64,
        pair: DecisionPair,
        start_time: S,
        breakdown: DelayBreakdown<S>,
        payment: S,
        data_size_mb: S,
        cycles: S,
        deadline: S,
    ) -> Self {
        let end_time = start_time + breakdown.total;
        Self {
            user_id,
            pair,
            start_time,
            end_time,
            breakdown,
            payment,
            data_size_mb,
            cycles,
            deadline,
        }
    }

    pub fn from_request(
        req: &TaskRequest<S>,
        pair: DecisionPair,
        breakdown: DelayBreakdown<S>,
        payment: S,
    ) -> Self {
        Self::new(
            req.user_id,
            pair,
            req.arrival_time,
            breakdown,
            payment,
            req.data_size_mb,
            req.cycles,
            req.deadline,
        )
    }
}

/// Error from a state transition that would break a system invariant.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum StateError {
    #[error("AP {ap} is at capacity")]
    ApAtCapacity { ap: usize },
    #[error("server {server} lacks memory for the task")]
    InsufficientMemory { server: usize },
    #[error("decision pair ({ap},{server}) out of range for {cloudlets} cloudlets")]
    PairOutOfRange {
        ap: usize,
        server: usize,
        cloudlets: usize,
    },
    #[error("user {user_id} is already in the roster")]
    DuplicateUser { user_id: u64 },
    #[error("user {user_id} is not in the roster")]
    UnknownUser { user_id: u64 },
}

/// A detected inconsistency between counters and the roster.
#[derive(Debug, Error, PartialEq)]
pub enum InvariantViolation {
    #[error("AP user counts do not match a recount from the roster")]
    ApCountMismatch,
    #[error("server task counts do not match a recount from the roster")]
    ServerCountMismatch,
    #[error("pair counts do not match a recount from the roster")]
    PairCountMismatch,
    #[error("used memory does not match a recount from the roster")]
    UsedMemoryMismatch,
    #[error("total AP users differ from total server tasks")]
    FlowConservation,
    #[error("AP {ap} exceeds its capacity")]
    ApOverCapacity { ap: usize },
    #[error("server {server} exceeds its memory capacity")]
    MemoryOverCapacity { server: usize },
}

/// Live counters plus the roster of admitted users.
///
/// The counters are always derivable from the roster; they are kept
/// materialized because every delay evaluation reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState<S> {
    /// Current time, seconds. Advanced by the event loop.
    pub time: S,
    /// Users connected per AP.
    pub u: Vec<u32>,
    /// Tasks executing per server.
    pub v: Vec<u32>,
    /// Tasks per decision pair: `x[i][j]` counts users assigned `(i, j)`.
    pub x: Vec<Vec<u32>>,
    /// Memory occupied per server, megabytes. Always equal to the
    /// left-to-right sum of `data_size_mb` over the roster for that server;
    /// `apply_leave` recomputes instead of subtracting so the equality is
    /// exact in floating point.
    pub used_memory_mb: Vec<S>,
    pub roster: Vec<ActiveUserRecord<S>>,
}

impl<S: Scalar> SystemState<S> {
    /// An empty system over `m` cloudlets at time zero.
    pub fn new(m: usize) -> Self {
        Self {
            time: S::zero(),
            u: vec![0; m],
            v: vec![0; m],
            x: vec![vec![0; m]; m],
            used_memory_mb: vec![S::zero(); m],
            roster: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roster.is_empty()
    }

    /// Free memory on server `j`, megabytes.
    pub fn remaining_memory_mb(&self, topo: &Topology<S>, server: usize) -> S {
        topo.cloudlets[server].memory_capacity_mb - self.used_memory_mb[server]
    }

    /// All decision pairs the request could be admitted on, lexicographic.
    ///
    /// A pair `(i, j)` qualifies when AP `i` covers the user and has a free
    /// connection slot, and server `j` has memory for the task's data. The
    /// latency constraint is deliberately not checked here: admission checks
    /// it on the objective-optimal pair only.
    pub fn feasible_pairs(&self, topo: &Topology<S>, req: &TaskRequest<S>) -> Vec<DecisionPair> {
        let mut pairs = Vec::new();
        for i in topo.covering_aps(req.position) {
            if self.u[i] + 1 > topo.cloudlets[i].ap_capacity {
                continue;
            }
            for (j, cloudlet) in topo.cloudlets.iter().enumerate() {
                if self.used_memory_mb[j] + req.data_size_mb <= cloudlet.memory_capacity_mb {
                    pairs.push(DecisionPair::new(i, j));
                }
            }
        }
        pairs
    }

    /// Admits a user: bumps the pair's counters, reserves memory, appends
    /// the record. Rejects transitions that would exceed a capacity.
    pub fn apply_join(
        &mut self,
        record: ActiveUserRecord<S>,
        topo: &Topology<S>,
    ) -> Result<(), StateError> {
        let DecisionPair { ap, server } = record.pair;
        let m = self.len();
        if ap >= m || server >= m {
            return Err(StateError::PairOutOfRange {
                ap,
                server,
                cloudlets: m,
            });
        }
        if self.roster.iter().any(|r| r.user_id == record.user_id) {
            return Err(StateError::DuplicateUser {
                user_id: record.user_id,
            });
        }
        if self.u[ap] + 1 > topo.cloudlets[ap].ap_capacity {
            return Err(StateError::ApAtCapacity { ap });
        }
        if self.used_memory_mb[server] + record.data_size_mb
            > topo.cloudlets[server].memory_capacity_mb
        {
            return Err(StateError::InsufficientMemory { server });
        }
        self.u[ap] += 1;
        self.v[server] += 1;
        self.x[ap][server] += 1;
        self.used_memory_mb[server] += record.data_size_mb;
        self.roster.push(record);
        Ok(())
    }

    /// Removes a departed user, releasing its AP slot and server memory.
    pub fn apply_leave(&mut self, user_id: u64) -> Result<ActiveUserRecord<S>, StateError> {
        let idx = self
            .roster
            .iter()
            .position(|r| r.user_id == user_id)
            .ok_or(StateError::UnknownUser { user_id })?;
        let record = self.roster.remove(idx);
        let DecisionPair { ap, server } = record.pair;
        self.u[ap] -= 1;
        self.v[server] -= 1;
        self.x[ap][server] -= 1;
        // Recompute rather than subtract: the cached sum must stay equal to
        // a fresh left-to-right sum over the shrunk roster.
        self.used_memory_mb[server] = self
            .roster
            .iter()
            .filter(|r| r.pair.server == server)
            .map(|r| r.data_size_mb)
            .sum();
        Ok(record)
    }

    /// Recounts every counter from the roster and checks the capacity and
    /// flow-conservation constraints.
    pub fn verify_invariants(&self, topo: &Topology<S>) -> Result<(), InvariantViolation> {
        let m = self.len();
        let mut u = vec![0u32; m];
        let mut v = vec![0u32; m];
        let mut x = vec![vec![0u32; m]; m];
        let mut used = vec![S::zero(); m];
        for r in &self.roster {
            u[r.pair.ap] += 1;
            v[r.pair.server] += 1;
            x[r.pair.ap][r.pair.server] += 1;
            used[r.pair.server] += r.data_size_mb;
        }
        if u != self.u {
            return Err(InvariantViolation::ApCountMismatch);
        }
        if v != self.v {
            return Err(InvariantViolation::ServerCountMismatch);
        }
        if x != self.x {
            return Err(InvariantViolation::PairCountMismatch);
        }
        if used != self.used_memory_mb {
            return Err(InvariantViolation::UsedMemoryMismatch);
        }
        if self.u.iter().sum::<u32>() != self.v.iter().sum::<u32>() {
            return Err(InvariantViolation::FlowConservation);
        }
        for (i, cloudlet) in topo.cloudlets.iter().enumerate() {
            if self.u[i] > cloudlet.ap_capacity {
                return Err(InvariantViolation::ApOverCapacity { ap: i });
            }
            if self.used_memory_mb[i] > cloudlet.memory_capacity_mb {
                return Err(InvariantViolation::MemoryOverCapacity { server: i });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latency::DelayBreakdown;

    fn uniform_cloudlet(id: usize, x: f64, y: f64) -> Cloudlet<f64> {
        Cloudlet {
            id,
            position: Point::new(x, y),
            coverage_radius_m: 100.0,
            ap_capacity: 20,
            bandwidth_mbps: 100.0,
            compute_hz: 8e9,
            memory_capacity_mb: 8192.0,
            alpha_per_s: 50.0 / 3600.0,
            gamma_per_s: 50.0 / 3600.0,
        }
    }

    /// Eight cloudlets in a row, 300 m apart, so coverage never overlaps.
    fn row_topology(m: usize) -> Topology<f64> {
        let cloudlets: Vec<_> = (0..m)
            .map(|i| uniform_cloudlet(i, 300.0 * i as f64, 0.0))
            .collect();
        let mut transfer = vec![vec![0.2; m]; m];
        for (i, row) in transfer.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        let beta = vec![vec![50.0 / 3600.0; m]; m];
        Topology::new(cloudlets, transfer, beta).unwrap()
    }

    fn request(user_id: u64, x: f64, y: f64, data_mb: f64) -> TaskRequest<f64> {
        TaskRequest {
            user_id,
            arrival_time: 0.0,
            position: Point::new(x, y),
            cycles: data_mb * 8e6 * 1000.0,
            data_size_mb: data_mb,
            deadline: 500.0,
            psi_per_s: 1.0 / 3600.0,
        }
    }

    fn record(req: &TaskRequest<f64>, pair: DecisionPair) -> ActiveUserRecord<f64> {
        let breakdown = DelayBreakdown::new(1.0, 0.0, 2.0);
        ActiveUserRecord::from_request(req, pair, breakdown, 0.0)
    }

    #[test]
    fn coverage_is_a_distance_threshold() {
        let c = uniform_cloudlet(0, 0.0, 0.0);
        assert!(c.covers(Point::new(100.0, 0.0)));
        assert!(c.covers(Point::new(60.0, 80.0)));
        assert!(!c.covers(Point::new(100.1, 0.0)));
    }

    #[test]
    fn topology_validation_names_the_violation() {
        let mut topo = row_topology(2);
        topo.transfer_delay_s[1][1] = 0.3;
        assert_eq!(
            topo.validate(),
            Err(TopologyError::NonzeroTransferDiagonal { cloudlet: 1 })
        );
        let mut topo = row_topology(2);
        topo.transfer_delay_s[0][1] = 0.4;
        assert_eq!(
            topo.validate(),
            Err(TopologyError::AsymmetricTransfer { i: 1, j: 0 })
        );
        let mut topo = row_topology(2);
        topo.cloudlets[0].bandwidth_mbps = 0.0;
        assert_eq!(
            topo.validate(),
            Err(TopologyError::NonPositiveBandwidth { cloudlet: 0 })
        );
    }

    #[test]
    fn single_covering_ap_yields_one_row_of_pairs() {
        let topo = row_topology(8);
        let state = SystemState::new(8);
        // Inside cloudlet 3 only.
        let req = request(1, 900.0, 0.0, 10.0);
        let pairs = state.feasible_pairs(&topo, &req);
        let expected: Vec<_> = (0..8).map(|j| DecisionPair::new(3, j)).collect();
        assert_eq!(pairs, expected);
    }

    #[test]
    fn saturated_aps_leave_no_feasible_pair() {
        let topo = row_topology(2);
        let mut state = SystemState::new(2);
        let cap = topo.cloudlets[0].ap_capacity;
        for k in 0..cap as u64 {
            let req = request(k, 0.0, 0.0, 1.0);
            state
                .apply_join(record(&req, DecisionPair::new(0, 0)), &topo)
                .unwrap();
        }
        let req = request(1000, 0.0, 0.0, 1.0);
        assert!(state.feasible_pairs(&topo, &req).is_empty());
    }

    #[test]
    fn feasible_pairs_match_brute_force_filter() {
        // Independent oracle: test every (i, j) against the three admission
        // constraints directly.
        let topo = row_topology(8);
        let mut state = SystemState::new(8);
        let mut seed = 0x2545F4914F6CDD1Du64;
        let mut next = || {
            // xorshift is plenty for test data
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        // Load the system with random admissions.
        for k in 0..60u64 {
            let req = request(k, next() * 2400.0 - 150.0, 0.0, 5.0 + next() * 55.0);
            let pairs = state.feasible_pairs(&topo, &req);
            if pairs.is_empty() {
                continue;
            }
            let pick = pairs[(next() * pairs.len() as f64) as usize];
            state.apply_join(record(&req, pick), &topo).unwrap();
        }
        for probe in 0..40u64 {
            let req = request(
                10_000 + probe,
                next() * 2400.0 - 150.0,
                0.0,
                5.0 + next() * 55.0,
            );
            let mut expected = Vec::new();
            for i in 0..8 {
                for j in 0..8 {
                    let covered = topo.cloudlets[i].covers(req.position);
                    let slot_free = state.u[i] + 1 <= topo.cloudlets[i].ap_capacity;
                    let memory_ok = state.used_memory_mb[j] + req.data_size_mb
                        <= topo.cloudlets[j].memory_capacity_mb;
                    if covered && slot_free && memory_ok {
                        expected.push(DecisionPair::new(i, j));
                    }
                }
            }
            assert_eq!(state.feasible_pairs(&topo, &req), expected);
        }
    }

    #[test]
    fn join_updates_counters_and_memory() {
        let topo = row_topology(8);
        let mut state = SystemState::new(8);
        let req = request(7, 600.0, 0.0, 10.0);
        state
            .apply_join(record(&req, DecisionPair::new(2, 5)), &topo)
            .unwrap();
        assert_eq!(state.u[2], 1);
        assert_eq!(state.v[5], 1);
        assert_eq!(state.x[2][5], 1);
        assert_eq!(state.used_memory_mb[5], 10.0);
        assert_eq!(state.remaining_memory_mb(&topo, 5), 8182.0);
        assert_eq!(state.roster.len(), 1);
    }

    #[test]
    fn leave_inverts_join() {
        let topo = row_topology(8);
        let empty = SystemState::new(8);
        let mut state = empty.clone();
        let req = request(7, 600.0, 0.0, 10.0);
        state
            .apply_join(record(&req, DecisionPair::new(2, 5)), &topo)
            .unwrap();
        state.apply_leave(7).unwrap();
        assert_eq!(state, empty);
    }

    #[test]
    fn leave_twice_is_an_error() {
        let topo = row_topology(2);
        let mut state = SystemState::new(2);
        let req = request(3, 0.0, 0.0, 1.0);
        state
            .apply_join(record(&req, DecisionPair::new(0, 0)), &topo)
            .unwrap();
        state.apply_leave(3).unwrap();
        assert_eq!(
            state.apply_leave(3),
            Err(StateError::UnknownUser { user_id: 3 })
        );
    }

    #[test]
    fn duplicate_join_is_rejected() {
        let topo = row_topology(2);
        let mut state = SystemState::new(2);
        let req = request(3, 0.0, 0.0, 1.0);
        state
            .apply_join(record(&req, DecisionPair::new(0, 0)), &topo)
            .unwrap();
        assert_eq!(
            state.apply_join(record(&req, DecisionPair::new(0, 1)), &topo),
            Err(StateError::DuplicateUser { user_id: 3 })
        );
    }

    #[test]
    fn join_rejects_capacity_violations() {
        let topo = row_topology(2);
        let mut state = SystemState::new(2);
        let cap = topo.cloudlets[1].ap_capacity;
        for k in 0..cap as u64 {
            let req = request(k, 300.0, 0.0, 1.0);
            state
                .apply_join(record(&req, DecisionPair::new(1, 0)), &topo)
                .unwrap();
        }
        let req = request(999, 300.0, 0.0, 1.0);
        assert_eq!(
            state.apply_join(record(&req, DecisionPair::new(1, 0)), &topo),
            Err(StateError::ApAtCapacity { ap: 1 })
        );
        let mut big = request(998, 300.0, 0.0, 1.0);
        big.data_size_mb = 9000.0;
        assert_eq!(
            state.apply_join(record(&big, DecisionPair::new(0, 1)), &topo),
            Err(StateError::InsufficientMemory { server: 1 })
        );
    }

    #[test]
    fn counters_match_recount_after_many_random_joins() {
        let topo = row_topology(8);
        let mut state = SystemState::new(8);
        let mut seed = 99u64;
        let mut next = || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut joined = 0;
        let mut k = 0u64;
        while joined < 100 {
            k += 1;
            let req = request(k, next() * 2400.0 - 150.0, 0.0, 5.0 + next() * 55.0);
            let pairs = state.feasible_pairs(&topo, &req);
            if pairs.is_empty() {
                continue;
            }
            let pick = pairs[(next() * pairs.len() as f64) as usize];
            state.apply_join(record(&req, pick), &topo).unwrap();
            joined += 1;
        }
        // Independent recount.
        let mut u = vec![0u32; 8];
        let mut v = vec![0u32; 8];
        let mut used = vec![0.0f64; 8];
        for r in &state.roster {
            u[r.pair.ap] += 1;
            v[r.pair.server] += 1;
            used[r.pair.server] += r.data_size_mb;
        }
        assert_eq!(state.u, u);
        assert_eq!(state.v, v);
        assert_eq!(state.used_memory_mb, used);
        state.verify_invariants(&topo).unwrap();
    }

    #[test]
    fn invariants_hold_through_interleaved_joins_and_leaves() {
        let topo = row_topology(8);
        let mut state = SystemState::new(8);
        let mut seed = 0xDEADBEEFu64;
        let mut next = || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut present: Vec<u64> = Vec::new();
        for event in 0..1000u64 {
            if !present.is_empty() && next() < 0.45 {
                let victim = present.remove((next() * present.len() as f64) as usize);
                state.apply_leave(victim).unwrap();
            } else {
                let req = request(event, next() * 2400.0 - 150.0, 0.0, 5.0 + next() * 55.0);
                let pairs = state.feasible_pairs(&topo, &req);
                if pairs.is_empty() {
                    continue;
                }
                let pick = pairs[(next() * pairs.len() as f64) as usize];
                state.apply_join(record(&req, pick), &topo).unwrap();
                present.push(event);
            }
            state.verify_invariants(&topo).unwrap();
            let total_u: u32 = state.u.iter().sum();
            let total_v: u32 = state.v.iter().sum();
            assert_eq!(total_u, total_v);
        }
    }
}
