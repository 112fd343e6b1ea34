//! Discrete-time simulation: each slot the nodes pick energy budgets, the
//! orchestrator solves the slicing game over the cooperation graph, and
//! batteries evolve. Also sweeps over configuration values and report files.

mod config;
mod report;
mod sweep;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{BeliefState, FogAgent};
use crate::env::EnvAction;
use crate::game::solve_social_welfare;
use crate::model::{Network, SlicingAgreement};

pub use config::{
    parse_value, set_path, AgentSettings, ArrivalConfig, ChainConfig, Config, Coords, HarvestConfig, NodesConfig,
    PolicyKind, ServiceConfig, SolverSettings, TopologyConfig, TopologySource,
};
pub use report::{emit_report, load_report, read_records, write_records, ReportSummary};
pub use sweep::{emit_sweep, run_sweep, sweep_threads, SweepResult, SweepRow, SweepRun, THREADS_ENV};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl EngineError {
    /// Process exit code: 1 for configuration problems, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            EngineError::Config(_) => 1,
            _ => 2,
        }
    }
}

/// One node in one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: usize,
    pub node: usize,
    /// Energy harvested in the previous slot, banked at the start of this one.
    pub harvested: u32,
    /// Battery at the start of the slot.
    pub battery: u32,
    pub budget: u32,
    pub consumed: u32,
    /// Request rates per service.
    pub arrivals: Vec<f64>,
    /// Energy allotted per service.
    pub energy: Vec<u32>,
    /// Own requests/s admitted within the deadline, per service.
    pub offloaded: Vec<f64>,
    pub reward: f64,
    /// Whether the slot's welfare solve converged.
    pub certified: bool,
}

/// Episode totals, recomputable from the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub slots: usize,
    pub nodes: usize,
    /// Admitted requests/s summed over nodes and slots, per service.
    pub offloaded_per_service: Vec<f64>,
    /// `offloaded_per_service / slots`.
    pub mean_offloaded_per_slot: Vec<f64>,
    pub total_offloaded: f64,
    pub total_reward: f64,
    /// `sum_t gamma^t reward`, per node.
    pub discounted_reward: Vec<f64>,
    pub discounted_total: f64,
    /// Mean network reward per slot over slots `0..=t`.
    pub running_average_reward: Vec<f64>,
    pub uncertified_slots: usize,
}

impl Aggregates {
    pub fn from_records(records: &[SlotRecord], slots: usize, nodes: usize, services: usize, gamma: f64) -> Self {
        let mut per_service = vec![0.0; services];
        let mut discounted = vec![0.0; nodes];
        let mut slot_reward = vec![0.0; slots];
        let mut uncertified = vec![false; slots];
        for r in records {
            for (acc, x) in per_service.iter_mut().zip(&r.offloaded) {
                *acc += x;
            }
            discounted[r.node] += gamma.powi(r.slot as i32) * r.reward;
            slot_reward[r.slot] += r.reward;
            uncertified[r.slot] |= !r.certified;
        }
        let mut running = Vec::with_capacity(slots);
        let mut acc = 0.0;
        for (t, r) in slot_reward.iter().enumerate() {
            acc += r;
            running.push(acc / (t + 1) as f64);
        }
        let denom = slots.max(1) as f64;
        Self {
            slots,
            nodes,
            mean_offloaded_per_slot: per_service.iter().map(|x| x / denom).collect(),
            total_offloaded: per_service.iter().sum(),
            offloaded_per_service: per_service,
            total_reward: slot_reward.iter().sum(),
            discounted_total: discounted.iter().sum(),
            discounted_reward: discounted,
            running_average_reward: running,
            uncertified_slots: uncertified.iter().filter(|&&u| u).count(),
        }
    }
}

/// Links as `(from, to, rtt)` triples, in sender order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDump {
    pub positions: Vec<[f64; 2]>,
    pub links: Vec<(usize, usize, f64)>,
}

impl TopologyDump {
    fn of(net: &Network) -> Self {
        let links = net
            .neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().map(move |&j| (i, j, net.rtt[i][j])))
            .collect();
        Self {
            positions: net.nodes.iter().map(|n| n.position).collect(),
            links,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config: Config,
    pub policy: PolicyKind,
    pub seed: u64,
    pub topology: TopologyDump,
    pub records: Vec<SlotRecord>,
    pub aggregates: Aggregates,
    /// Final belief of each agent; empty for policies without agents.
    pub beliefs: Vec<BeliefState>,
}

impl ExperimentReport {
    pub fn recomputed_aggregates(&self) -> Aggregates {
        Aggregates::from_records(
            &self.records,
            self.config.horizon,
            self.config.nodes.count,
            self.config.services.len(),
            self.config.gamma,
        )
    }
}

/// The network a policy cooperates over in episode `seed`.
pub fn build_network(config: &Config, policy: PolicyKind, seed: u64) -> Result<Network, EngineError> {
    let topo = config.topology(policy, seed)?;
    let mut net = config.network_template()?;
    for (node, p) in net.nodes.iter_mut().zip(&topo.positions) {
        node.position = *p;
    }
    net.neighbors = topo.neighbors;
    net.rtt = topo.rtt;
    Ok(net)
}

/// Net processing units node `j` lent to others (negative: borrowed) in `agr`.
pub fn capability(net: &Network, agr: &SlicingAgreement, arrivals: &[Vec<f64>], j: usize) -> f64 {
    let n = net.node_count();
    net.services
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let a = &agr.offload[k].alpha;
            let served: f64 = (0..n).filter(|&i| i != j).map(|i| a[i][j] * arrivals[i][k]).sum();
            let sent: f64 = (0..n).filter(|&m| m != j).map(|m| a[j][m] * arrivals[j][k]).sum();
            (served - sent) / (s.unit_rate * net.nodes[j].rate_multiplier)
        })
        .sum()
}

/// Runs `config.horizon` slots under `policy`. Deterministic in
/// `(config, policy, seed)`.
pub fn run_episode(config: &Config, policy: PolicyKind, seed: u64) -> Result<ExperimentReport, EngineError> {
    config.validate()?;
    let net = build_network(config, policy, seed)?;
    let env = config.env_model()?;
    let n = net.node_count();
    let kk = net.service_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = env.initial_state(vec![config.initial_battery; n], &mut rng);

    let mut agents = Vec::new();
    if policy.uses_agents() {
        let depth = match policy {
            PolicyKind::Bpomdp(d) => d,
            _ => 0,
        };
        for i in 0..n {
            let agent = FogAgent::new(&net, &env, i, config.agent_config(depth))
                .map_err(|e| EngineError::Config(e.to_string()))?;
            agents.push(agent);
        }
    }
    let opts = config.solver.options();
    let mut records = Vec::with_capacity(config.horizon * n);

    for t in 0..config.horizon {
        let lambda = env.arrival_rates(&state);
        let budgets: Vec<u32> = (0..n)
            .map(|i| {
                let usable = state.battery[i].min(net.nodes[i].max_useful_energy());
                match agents.get(i) {
                    Some(agent) => agent.choose(state.battery[i], state.arrivals[i].clone()).min(usable),
                    None => usable,
                }
            })
            .collect();
        let sol = solve_social_welfare(&net, &lambda, &budgets, &opts)
            .map_err(|e| EngineError::Runtime(format!("slot {t}: {e}")))?;
        let agr = &sol.agreement;
        let consumed: Vec<u32> = (0..n).map(|i| agr.energy.node_total(i)).collect();
        for i in 0..n {
            records.push(SlotRecord {
                slot: t,
                node: i,
                harvested: env.harvest_level(i, state.harvest[i]),
                battery: state.battery[i],
                budget: budgets[i],
                consumed: consumed[i],
                arrivals: lambda[i].clone(),
                energy: agr.energy.0[i].clone(),
                offloaded: (0..kk).map(|k| agr.offload[k].admitted(i) * lambda[i][k]).collect(),
                reward: agr.rewards[i],
                certified: sol.certified,
            });
        }

        let action = EnvAction { consumed };
        let next = env
            .sample_step(&state, &action, &mut rng)
            .map_err(|e| EngineError::Runtime(format!("slot {t}: {e}")))?;
        if !agents.is_empty() {
            let caps: Vec<f64> = (0..n).map(|j| capability(&net, agr, &lambda, j)).collect();
            for (i, agent) in agents.iter_mut().enumerate() {
                // A refused update is counted by the agent; the episode goes on.
                let _ = agent.observe(state.battery[i], action.consumed[i], next.battery[i]);
                for j in agent.neighbors.clone() {
                    let _ = agent.observe_neighbor(j, &state.arrivals[i], caps[j]);
                }
            }
        }
        state = next;
    }

    let aggregates = Aggregates::from_records(&records, config.horizon, n, kk, config.gamma);
    Ok(ExperimentReport {
        config: config.clone(),
        policy,
        seed,
        topology: TopologyDump::of(&net),
        records,
        aggregates,
        beliefs: agents.into_iter().map(|a| a.belief).collect(),
    })
}
