//! End-to-end delay model.
//!
//! A task's latency is the uplink transmission delay at its AP, plus the
//! inter-cloudlet transfer delay twice (task forward, result back), plus the
//! computation delay at its server. APs split bandwidth equally among their
//! connected users and servers split cycles equally among their tasks, so
//! both shared delays scale linearly with the post-join occupancy counts.
//!
//! Canonical units: seconds, megabytes (task data), megabits/second
//! (bandwidth), cycles and cycles/second (compute). Data sizes convert to
//! megabits exactly once, here.

use serde::{Deserialize, Serialize};

use crate::model::{DecisionPair, SystemState, TaskRequest, Topology};
use crate::scalar::Scalar;

/// Megabits per megabyte.
const MBITS_PER_MB: u32 = 8;

/// Per-leg delay components of one task, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayBreakdown<S> {
    /// Uplink transmission delay at the AP.
    pub transmission: S,
    /// One-way inter-cloudlet transfer delay; counted twice in `total`.
    pub transfer: S,
    /// Computation delay at the server.
    pub computation: S,
    /// `transmission + 2 * transfer + computation`.
    pub total: S,
}

impl<S: Scalar> DelayBreakdown<S> {
    pub fn new(transmission: S, transfer: S, computation: S) -> Self {
        let total = transmission + S::from_count(2) * transfer + computation;
        Self {
            transmission,
            transfer,
            computation,
            total,
        }
    }
}

/// Uplink transmission delay: data size over the equal bandwidth share,
/// i.e. `data_mbits * users_on_ap / bandwidth_mbps`.
///
/// `users_on_ap` must already include the user being evaluated.
pub fn transmission_delay<S: Scalar>(data_size_mb: S, users_on_ap: u32, bandwidth_mbps: S) -> S {
    debug_assert!(users_on_ap >= 1);
    data_size_mb * S::from_count(MBITS_PER_MB) * S::from_count(users_on_ap) / bandwidth_mbps
}

/// Computation delay: task cycles over the equal compute share,
/// i.e. `cycles * tasks_on_server / compute_hz`.
///
/// `tasks_on_server` must already include the task being evaluated.
pub fn computation_delay<S: Scalar>(cycles: S, tasks_on_server: u32, compute_hz: S) -> S {
    debug_assert!(tasks_on_server >= 1);
    cycles * S::from_count(tasks_on_server) / compute_hz
}

/// Delay breakdown the request would experience on `pair`, evaluated at
/// post-join counts (the user itself raises both occupancies by one).
pub fn total_delay<S: Scalar>(
    state: &SystemState<S>,
    topo: &Topology<S>,
    req: &TaskRequest<S>,
    pair: DecisionPair,
) -> DelayBreakdown<S> {
    let transmission = transmission_delay(
        req.data_size_mb,
        state.u[pair.ap] + 1,
        topo.cloudlets[pair.ap].bandwidth_mbps,
    );
    let transfer = topo.transfer_delay_s[pair.ap][pair.server];
    let computation = computation_delay(
        req.cycles,
        state.v[pair.server] + 1,
        topo.cloudlets[pair.server].compute_hz,
    );
    DelayBreakdown::new(transmission, transfer, computation)
}

/// Whether a breakdown meets a deadline. The bound is inclusive.
pub fn meets_deadline<S: Scalar>(breakdown: &DelayBreakdown<S>, deadline: S) -> bool {
    breakdown.total <= deadline
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Cloudlet, Point};
    use approx::assert_relative_eq;

    fn cloudlet(id: usize, bandwidth_mbps: f64, compute_hz: f64) -> Cloudlet<f64> {
        Cloudlet {
            id,
            position: Point::new(0.0, 0.0),
            coverage_radius_m: 100.0,
            ap_capacity: 30,
            bandwidth_mbps,
            compute_hz,
            memory_capacity_mb: 8192.0,
            alpha_per_s: 50.0 / 3600.0,
            gamma_per_s: 50.0 / 3600.0,
        }
    }

    fn request(data_mb: f64, cycles: f64) -> TaskRequest<f64> {
        TaskRequest {
            user_id: 0,
            arrival_time: 0.0,
            position: Point::new(0.0, 0.0),
            cycles,
            data_size_mb: data_mb,
            deadline: 100.0,
            psi_per_s: 1.0 / 3600.0,
        }
    }

    #[test]
    fn transmission_is_data_over_bandwidth_share() {
        // 12.5 MB = 100 Mb at 100 Mbps: one second alone, four seconds when
        // the AP is split four ways.
        assert_eq!(transmission_delay(12.5, 1, 100.0), 1.0);
        assert_eq!(transmission_delay(12.5, 4, 100.0), 4.0);
    }

    #[test]
    fn transmission_matches_reference_recomputation() {
        let mut state = 0x9E3779B97F4A7C15u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let d = 5.0 + 55.0 * next();
            let u = 1 + (next() * 29.0) as u32;
            let b = 40.0 + 120.0 * next();
            let expected = (d * 8.0) * (u as f64) / b;
            assert_eq!(transmission_delay(d, u, b), expected);
        }
    }

    #[test]
    fn computation_is_cycles_over_compute_share() {
        assert_eq!(computation_delay(8e9, 1, 8e9), 1.0);
        assert_eq!(computation_delay(8e9, 3, 8e9), 3.0);
    }

    #[test]
    fn cycles_per_bit_scaling() {
        // 5 MB at 1000 cycles per bit.
        let data_mb = 5.0f64;
        let cycles = data_mb * 8e6 * 1000.0;
        assert_eq!(cycles, 4e10);
        assert_eq!(computation_delay(cycles, 1, 4e10), 1.0);
    }

    #[test]
    fn same_cloudlet_pairs_have_no_transfer_term() {
        let topo = Topology::new(
            vec![cloudlet(0, 100.0, 8e9), cloudlet(1, 100.0, 8e9)],
            vec![vec![0.0, 0.3], vec![0.3, 0.0]],
            vec![vec![50.0 / 3600.0; 2]; 2],
        )
        .unwrap();
        let state = SystemState::new(2);
        let req = request(12.5, 8e9);
        let same = total_delay(&state, &topo, &req, DecisionPair::new(0, 0));
        assert_eq!(same.transfer, 0.0);
        assert_eq!(same.total, same.transmission + same.computation);
        let cross = total_delay(&state, &topo, &req, DecisionPair::new(0, 1));
        assert_eq!(cross.transfer, 0.3);
        assert_relative_eq!(cross.total, 1.0 + 0.6 + 1.0, max_relative = 1e-15);
    }

    #[test]
    fn breakdown_total_composes_the_three_legs() {
        let bd = DelayBreakdown::new(1.0, 0.3, 2.0);
        assert_relative_eq!(bd.total, 3.6, max_relative = 1e-15);
    }

    #[test]
    fn total_delay_matches_independent_composition() {
        let topo = Topology::new(
            vec![cloudlet(0, 73.0, 6.5e9), cloudlet(1, 110.0, 9e9)],
            vec![vec![0.0, 0.42], vec![0.42, 0.0]],
            vec![vec![50.0 / 3600.0; 2]; 2],
        )
        .unwrap();
        let mut state = SystemState::new(2);
        state.u = vec![3, 1];
        state.v = vec![0, 4];
        // Counters-only state is enough: total_delay never reads the roster.
        let req = request(23.0, 1.7e10);
        let bd = total_delay(&state, &topo, &req, DecisionPair::new(0, 1));
        let expected_t = transmission_delay(23.0, 4, 73.0);
        let expected_c = computation_delay(1.7e10, 5, 9e9);
        assert_eq!(bd.transmission, expected_t);
        assert_eq!(bd.computation, expected_c);
        assert_eq!(bd.total, expected_t + 2.0 * 0.42 + expected_c);
    }

    #[test]
    fn deadline_bound_is_inclusive() {
        let bd = DelayBreakdown::new(1.0, 0.0, 2.0);
        assert!(meets_deadline(&bd, 3.0));
        assert!(!meets_deadline(&bd, 3.0 - 1e-12));
        assert!(meets_deadline(&bd, 3.1));
    }

    #[test]
    fn delays_increase_with_occupancy_and_size() {
        for u in 1..20u32 {
            assert!(transmission_delay(10.0, u + 1, 100.0) > transmission_delay(10.0, u, 100.0));
        }
        assert!(transmission_delay(10.1, 3, 100.0) > transmission_delay(10.0, 3, 100.0));
        for v in 1..20u32 {
            assert!(computation_delay(1e10, v + 1, 8e9) > computation_delay(1e10, v, 8e9));
        }
        assert!(computation_delay(1.01e10, 2, 8e9) > computation_delay(1e10, 2, 8e9));
    }

    #[test]
    fn equal_share_identity() {
        // delay * bandwidth / users recovers the data size in megabits.
        for u in 1..=30u32 {
            let d = transmission_delay(12.5, u, 100.0);
            assert_relative_eq!(d * 100.0 / u as f64, 100.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn works_at_f32() {
        let d: f32 = transmission_delay(12.5f32, 4, 100.0f32);
        assert_eq!(d, 4.0f32);
        let bd = DelayBreakdown::<f32>::new(1.0, 0.5, 2.0);
        assert_eq!(bd.total, 4.0f32);
    }
}
