//! Domain types shared by every other module, and the constraint checker for
//! a single slot's slicing agreement.
//!
//! Indices are positional throughout: node `i` is `nodes[i]`, service `k` is
//! `services[k]`. Per-node, per-service tables are stored `[node][service]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::queueing;

/// Comparison tolerance for arrival rates, fractions and response times.
pub const TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A service type with its QoS deadline and reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceTypeSpec {
    pub name: String,
    /// Maximum tolerable mean response time, seconds.
    pub deadline: f64,
    /// Reward per successfully processed request.
    pub reward: f64,
    /// Requests per second one activated processing unit serves.
    pub unit_rate: f64,
}

impl ServiceTypeSpec {
    pub fn new(name: impl Into<String>, deadline: f64, reward: f64, unit_rate: f64) -> Self {
        Self {
            name: name.into(),
            deadline,
            reward,
            unit_rate,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.deadline > 0.0 && self.deadline.is_finite()) {
            return Err(ModelError::InvalidParameter(format!(
                "service {}: deadline must be > 0",
                self.name
            )));
        }
        if !(self.reward >= 0.0 && self.reward.is_finite()) {
            return Err(ModelError::InvalidParameter(format!(
                "service {}: reward must be >= 0",
                self.name
            )));
        }
        if !(self.unit_rate > 0.0 && self.unit_rate.is_finite()) {
            return Err(ModelError::InvalidParameter(format!(
                "service {}: unit_rate must be > 0",
                self.name
            )));
        }
        Ok(())
    }
}

/// Static parameters of a fog node. Energy is counted in whole units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FogNodeSpec {
    pub max_units: u32,
    /// Energy units needed to keep one processing unit on for one slot.
    pub unit_energy: u32,
    pub battery_cap: u32,
    /// Planar position in meters.
    pub position: [f64; 2],
    /// Scales every service's per-unit rate on this node.
    pub rate_multiplier: f64,
}

impl FogNodeSpec {
    pub fn new(max_units: u32, unit_energy: u32, battery_cap: u32) -> Self {
        Self {
            max_units,
            unit_energy,
            battery_cap,
            position: [0.0, 0.0],
            rate_multiplier: 1.0,
        }
    }

    pub fn at(mut self, x: f64, y: f64) -> Self {
        self.position = [x, y];
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.max_units == 0 {
            return Err(ModelError::InvalidParameter("max_units must be >= 1".into()));
        }
        if self.unit_energy == 0 {
            return Err(ModelError::InvalidParameter("unit_energy must be > 0".into()));
        }
        if self.battery_cap == 0 {
            return Err(ModelError::InvalidParameter("battery_cap must be > 0".into()));
        }
        if !(self.rate_multiplier > 0.0 && self.rate_multiplier.is_finite()) {
            return Err(ModelError::InvalidParameter("rate_multiplier must be > 0".into()));
        }
        Ok(())
    }

    /// Largest energy budget the node can usefully spend in one slot.
    pub fn max_useful_energy(&self) -> u32 {
        self.max_units.saturating_mul(self.unit_energy)
    }
}

/// How an energy allotment turns into processing units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `floor(energy / unit_energy)` units, capped at `max_units`.
    #[default]
    Whole,
    /// `energy / unit_energy` as a real number, capped at `max_units`.
    Continuous,
}

impl Activation {
    pub fn units(self, node: &FogNodeSpec, energy: u32) -> f64 {
        let raw = match self {
            Activation::Whole => (energy / node.unit_energy) as f64,
            Activation::Continuous => energy as f64 / node.unit_energy as f64,
        };
        raw.min(node.max_units as f64)
    }

    /// Service rate (requests/s) of `energy` units allotted to `service` on `node`.
    pub fn capacity(self, node: &FogNodeSpec, service: &ServiceTypeSpec, energy: u32) -> f64 {
        self.units(node, energy) * service.unit_rate * node.rate_multiplier
    }
}

/// Everything static about one slicing problem: services, nodes, who may
/// forward to whom, and the RTT between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub services: Vec<ServiceTypeSpec>,
    pub nodes: Vec<FogNodeSpec>,
    /// Sender-side neighbour sets; `i` never appears in `neighbors[i]`.
    pub neighbors: Vec<Vec<usize>>,
    /// Round-trip times in seconds; zero diagonal, `INFINITY` for unlinked pairs.
    pub rtt: Vec<Vec<f64>>,
    #[serde(default)]
    pub activation: Activation,
}

impl Network {
    /// Network with no links between nodes.
    pub fn isolated(services: Vec<ServiceTypeSpec>, nodes: Vec<FogNodeSpec>) -> Self {
        let n = nodes.len();
        let rtt = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { f64::INFINITY }).collect())
            .collect();
        Self {
            services,
            nodes,
            neighbors: vec![Vec::new(); n],
            rtt,
            activation: Activation::Whole,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// Links every ordered pair listed in `edges` both ways with RTT `tau`.
    pub fn with_links(mut self, edges: &[(usize, usize)], tau: f64) -> Self {
        for &(a, b) in edges {
            if !self.neighbors[a].contains(&b) {
                self.neighbors[a].push(b);
            }
            if !self.neighbors[b].contains(&a) {
                self.neighbors[b].push(a);
            }
            self.rtt[a][b] = tau;
            self.rtt[b][a] = tau;
        }
        for list in &mut self.neighbors {
            list.sort_unstable();
        }
        self
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn service_count(&self) -> usize {
        self.services.len()
    }

    pub fn capacity(&self, node: usize, service: usize, energy: u32) -> f64 {
        self.activation
            .capacity(&self.nodes[node], &self.services[service], energy)
    }

    /// Restriction to `members` (in the given order), keeping only links
    /// between members. Returned indices are positions in `members`.
    pub fn subnetwork(&self, members: &[usize]) -> Network {
        let pos = |g: usize| members.iter().position(|&m| m == g);
        let neighbors = members
            .iter()
            .map(|&g| {
                let mut list: Vec<usize> = self.neighbors[g].iter().filter_map(|&j| pos(j)).collect();
                list.sort_unstable();
                list
            })
            .collect();
        let rtt = members
            .iter()
            .map(|&a| members.iter().map(|&b| self.rtt[a][b]).collect())
            .collect();
        Network {
            services: self.services.clone(),
            nodes: members.iter().map(|&g| self.nodes[g].clone()).collect(),
            neighbors,
            rtt,
            activation: self.activation,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.nodes.len();
        if self.services.is_empty() {
            return Err(ModelError::InvalidParameter("no services".into()));
        }
        for s in &self.services {
            s.validate()?;
        }
        for node in &self.nodes {
            node.validate()?;
        }
        check_len("neighbors", n, self.neighbors.len())?;
        check_len("rtt rows", n, self.rtt.len())?;
        for (i, row) in self.rtt.iter().enumerate() {
            check_len("rtt columns", n, row.len())?;
            if row[i] != 0.0 {
                return Err(ModelError::InvalidParameter(format!("rtt[{i}][{i}] must be 0")));
            }
        }
        for (i, list) in self.neighbors.iter().enumerate() {
            for &j in list {
                if j >= n || j == i {
                    return Err(ModelError::InvalidParameter(format!(
                        "node {i} has invalid neighbour {j}"
                    )));
                }
                if !(self.rtt[i][j].is_finite() && self.rtt[i][j] >= 0.0) {
                    return Err(ModelError::InvalidParameter(format!("missing rtt for link {i}->{j}")));
                }
            }
        }
        Ok(())
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), ModelError> {
    if expected == found {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch { what, expected, found })
    }
}

/// Dynamic state at the start of a slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotState {
    pub battery: Vec<u32>,
    /// Request rates `[node][service]`.
    pub arrivals: Vec<Vec<f64>>,
    pub harvested_prev: Vec<u32>,
}

/// Energy units allotted `[node][service]`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EnergyDistribution(pub Vec<Vec<u32>>);

impl EnergyDistribution {
    pub fn zeros(nodes: usize, services: usize) -> Self {
        Self(vec![vec![0; services]; nodes])
    }

    pub fn node_total(&self, node: usize) -> u32 {
        self.0[node].iter().sum()
    }

    /// Energy column for one service.
    pub fn slice(&self, service: usize) -> Vec<u32> {
        self.0.iter().map(|row| row[service]).collect()
    }
}

/// Offload fractions for one service: `alpha[i][m]` is the share of node
/// `i`'s arrivals processed at `m` (`m == i` is local processing).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OffloadMatrix {
    pub alpha: Vec<Vec<f64>>,
}

impl OffloadMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            alpha: vec![vec![0.0; n]; n],
        }
    }

    pub fn from_rows(alpha: Vec<Vec<f64>>) -> Self {
        Self { alpha }
    }

    pub fn size(&self) -> usize {
        self.alpha.len()
    }

    /// Total admitted share of node `i`'s arrivals.
    pub fn admitted(&self, i: usize) -> f64 {
        self.alpha[i].iter().sum()
    }

    /// Aggregate request rate arriving for processing at `m`.
    pub fn load_at(&self, m: usize, arrivals: &[f64]) -> f64 {
        self.alpha
            .iter()
            .zip(arrivals)
            .map(|(row, &lambda)| row[m] * lambda)
            .sum()
    }
}

/// Joint outcome of one slot's slicing game.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SlicingAgreement {
    pub energy: EnergyDistribution,
    /// One matrix per service.
    pub offload: Vec<OffloadMatrix>,
    /// Realized reward of each node: its own admitted requests times the
    /// service reward, summed over services.
    pub rewards: Vec<f64>,
}

impl SlicingAgreement {
    pub fn empty(nodes: usize, services: usize) -> Self {
        Self {
            energy: EnergyDistribution::zeros(nodes, services),
            offload: vec![OffloadMatrix::zeros(nodes); services],
            rewards: vec![0.0; nodes],
        }
    }

    pub fn welfare(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Per-node contribution rewards implied by `offload` and `arrivals`.
pub fn contribution_rewards(
    services: &[ServiceTypeSpec],
    offload: &[OffloadMatrix],
    arrivals: &[Vec<f64>],
) -> Vec<f64> {
    let n = arrivals.len();
    (0..n)
        .map(|i| {
            services
                .iter()
                .zip(offload)
                .enumerate()
                .map(|(k, (s, m))| s.reward * m.admitted(i) * arrivals[i][k])
                .sum()
        })
        .collect()
}

/// One violated constraint, located by node and service.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    /// Aggregate load at `node` exceeds its service rate for `service`.
    ComputeCapacity {
        node: usize,
        service: usize,
        load: f64,
        capacity: f64,
    },
    NegativeFraction {
        node: usize,
        dest: usize,
        service: usize,
    },
    /// Load forwarded to a node outside the sender's neighbour set.
    NotNeighbor {
        node: usize,
        dest: usize,
        service: usize,
    },
    /// RTT alone on this route reaches the deadline.
    RouteTooSlow {
        node: usize,
        dest: usize,
        service: usize,
    },
    FractionSum {
        node: usize,
        service: usize,
        sum: f64,
    },
    EnergyBudget {
        node: usize,
        used: u32,
        battery: u32,
    },
    UnitLimit {
        node: usize,
        units: u32,
        max_units: u32,
    },
    Deadline {
        node: usize,
        service: usize,
        response: f64,
        deadline: f64,
    },
    RewardMismatch {
        node: usize,
        recorded: f64,
        expected: f64,
    },
}

/// Constraint violations of one service's offload matrix against the
/// per-node service rates `capacities`.
pub fn slice_violations(
    k: usize,
    deadline: f64,
    capacities: &[f64],
    arrivals: &[f64],
    neighbors: &[Vec<usize>],
    rtt: &[Vec<f64>],
    offload: &OffloadMatrix,
) -> Vec<Violation> {
    let n = capacities.len();
    let mut out = Vec::new();

    for i in 0..n {
        let mut sum = 0.0;
        for (m, &a) in offload.alpha[i].iter().enumerate() {
            sum += a;
            if a < -TOL {
                out.push(Violation::NegativeFraction {
                    node: i,
                    dest: m,
                    service: k,
                });
            }
            if a > TOL && m != i {
                if !neighbors[i].contains(&m) {
                    out.push(Violation::NotNeighbor {
                        node: i,
                        dest: m,
                        service: k,
                    });
                } else if rtt[i][m] >= deadline {
                    out.push(Violation::RouteTooSlow {
                        node: i,
                        dest: m,
                        service: k,
                    });
                }
            }
        }
        if sum > 1.0 + TOL {
            out.push(Violation::FractionSum {
                node: i,
                service: k,
                sum,
            });
        }
    }

    for m in 0..n {
        let load = offload.load_at(m, arrivals);
        if load > capacities[m] + TOL {
            out.push(Violation::ComputeCapacity {
                node: m,
                service: k,
                load,
                capacity: capacities[m],
            });
        }
    }

    for i in 0..n {
        if offload.admitted(i) * arrivals[i] <= TOL {
            continue;
        }
        let response = match queueing::response_time_forwarding(i, offload, capacities, arrivals, rtt) {
            Ok(r) => r,
            Err(_) => f64::INFINITY,
        };
        if response > deadline + TOL {
            out.push(Violation::Deadline {
                node: i,
                service: k,
                response,
                deadline,
            });
        }
    }
    out
}

/// Checks every per-slot constraint of `agr` against `net` and `state`.
///
/// Returns the full list of violated constraints (empty iff the agreement is
/// feasible). Shape mismatches are structural errors, not violations.
pub fn validate_agreement(
    net: &Network,
    state: &SlotState,
    agr: &SlicingAgreement,
) -> Result<Vec<Violation>, ModelError> {
    let n = net.node_count();
    let kk = net.service_count();
    check_len("battery", n, state.battery.len())?;
    check_len("arrivals", n, state.arrivals.len())?;
    for row in &state.arrivals {
        check_len("arrivals per node", kk, row.len())?;
    }
    check_len("energy rows", n, agr.energy.0.len())?;
    for row in &agr.energy.0 {
        check_len("energy per node", kk, row.len())?;
    }
    check_len("offload matrices", kk, agr.offload.len())?;
    for m in &agr.offload {
        check_len("offload rows", n, m.alpha.len())?;
        for row in &m.alpha {
            check_len("offload columns", n, row.len())?;
        }
    }
    check_len("rewards", n, agr.rewards.len())?;

    let mut out = Vec::new();

    for i in 0..n {
        let used = agr.energy.node_total(i);
        if used > state.battery[i] {
            out.push(Violation::EnergyBudget {
                node: i,
                used,
                battery: state.battery[i],
            });
        }
        let node = &net.nodes[i];
        let units: u32 = agr.energy.0[i].iter().map(|&e| e / node.unit_energy).sum();
        if units > node.max_units {
            out.push(Violation::UnitLimit {
                node: i,
                units,
                max_units: node.max_units,
            });
        }
    }

    for (k, service) in net.services.iter().enumerate() {
        let arrivals: Vec<f64> = state.arrivals.iter().map(|row| row[k]).collect();
        let capacities: Vec<f64> = (0..n).map(|m| net.capacity(m, k, agr.energy.0[m][k])).collect();
        out.extend(slice_violations(
            k,
            service.deadline,
            &capacities,
            &arrivals,
            &net.neighbors,
            &net.rtt,
            &agr.offload[k],
        ));
    }

    let expected = contribution_rewards(&net.services, &agr.offload, &state.arrivals);
    for (i, (&recorded, &exp)) in agr.rewards.iter().zip(&expected).enumerate() {
        if (recorded - exp).abs() > TOL * exp.abs().max(1.0) {
            out.push(Violation::RewardMismatch {
                node: i,
                recorded,
                expected: exp,
            });
        }
    }

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_node(battery: u32) -> (Network, SlotState) {
        let net = Network::isolated(
            vec![ServiceTypeSpec::new("image", 0.05, 1.0, 10.0)],
            vec![FogNodeSpec::new(100, 1, 200)],
        );
        let state = SlotState {
            battery: vec![battery],
            arrivals: vec![vec![100.0]],
            harvested_prev: vec![0],
        };
        (net, state)
    }

    #[test]
    fn all_zero_agreement_is_feasible() {
        let (net, state) = one_node(10);
        let agr = SlicingAgreement::empty(1, 1);
        assert!(validate_agreement(&net, &state, &agr).unwrap().is_empty());
    }

    #[test]
    fn local_load_over_capacity_flags_compute_constraint() {
        // 5 units * 10 req/s = 50 req/s capacity, local load 0.6 * 100 = 60.
        let (net, state) = one_node(10);
        let mut agr = SlicingAgreement::empty(1, 1);
        agr.energy.0[0][0] = 5;
        agr.offload[0].alpha[0][0] = 0.6;
        agr.rewards[0] = 60.0;
        let v = validate_agreement(&net, &state, &agr).unwrap();
        assert!(v.iter().any(|v| matches!(
            v,
            Violation::ComputeCapacity {
                node: 0,
                service: 0,
                ..
            }
        )));
    }

    #[test]
    fn energy_over_battery_flags_budget() {
        let (net, state) = one_node(10);
        let mut agr = SlicingAgreement::empty(1, 1);
        agr.energy.0[0][0] = 11;
        let v = validate_agreement(&net, &state, &agr).unwrap();
        assert_eq!(
            v,
            vec![Violation::EnergyBudget {
                node: 0,
                used: 11,
                battery: 10
            }]
        );
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let (net, state) = one_node(10);
        let agr = SlicingAgreement::empty(2, 1);
        assert!(matches!(
            validate_agreement(&net, &state, &agr),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn forwarding_outside_neighbour_set_is_flagged() {
        let net = Network::isolated(
            vec![ServiceTypeSpec::new("voice", 0.1, 1.0, 40.0)],
            vec![FogNodeSpec::new(10, 1, 10), FogNodeSpec::new(10, 1, 10)],
        );
        let state = SlotState {
            battery: vec![0, 5],
            arrivals: vec![vec![10.0], vec![0.0]],
            harvested_prev: vec![0, 0],
        };
        let mut agr = SlicingAgreement::empty(2, 1);
        agr.energy.0[1][0] = 5;
        agr.offload[0].alpha[0][1] = 0.5;
        agr.rewards[0] = 5.0;
        let v = validate_agreement(&net, &state, &agr).unwrap();
        assert!(v.contains(&Violation::NotNeighbor {
            node: 0,
            dest: 1,
            service: 0
        }));
    }

    #[test]
    fn validation_is_pure() {
        let (net, state) = one_node(3);
        let mut agr = SlicingAgreement::empty(1, 1);
        agr.energy.0[0][0] = 7;
        agr.offload[0].alpha[0][0] = 0.9;
        let a = validate_agreement(&net, &state, &agr).unwrap();
        let b = validate_agreement(&net, &state, &agr).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
    }

    #[test]
    fn whole_activation_floors_and_caps_units() {
        let node = FogNodeSpec::new(3, 2, 100);
        let s = ServiceTypeSpec::new("x", 1.0, 1.0, 10.0);
        assert_eq!(Activation::Whole.capacity(&node, &s, 5), 20.0);
        assert_eq!(Activation::Continuous.capacity(&node, &s, 5), 25.0);
        assert_eq!(Activation::Whole.capacity(&node, &s, 100), 30.0);
    }
}
