//! Belief-state agents: Bayesian filtering of the physical environment,
//! Dirichlet beliefs about neighbours' types and finite-horizon lookahead.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{battery_step, EnvAction, EnvModel, EnvState, MarkovChain, Observation};
use crate::game::{solve_social_welfare, WelfareOptions};
use crate::model::{FogNodeSpec, Network, TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeliefError {
    #[error("observation has zero likelihood under the model")]
    ImpossibleObservation,
    #[error("capability {capability} of neighbour {neighbor} matches no type")]
    InconsistentOutcome { neighbor: usize, capability: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid type space: {0}")]
    InvalidTypes(String),
}

fn normalize(v: &mut [f64]) -> Result<(), BeliefError> {
    let z: f64 = v.iter().sum();
    if !(z > 0.0 && z.is_finite()) {
        return Err(BeliefError::ImpossibleObservation);
    }
    v.iter_mut().for_each(|x| *x /= z);
    Ok(())
}

/// One filter step on a finite state space:
/// `post(u) ∝ likelihood(u) * Σ_v trans(v, u) * prior(v)`.
pub fn filter_step(
    prior: &[f64],
    trans: impl Fn(usize, usize) -> f64,
    likelihood: &[f64],
) -> Result<Vec<f64>, BeliefError> {
    if prior.len() != likelihood.len() {
        return Err(BeliefError::Dimension(format!(
            "prior has {} states, likelihood {}",
            prior.len(),
            likelihood.len()
        )));
    }
    let n = prior.len();
    let mut post: Vec<f64> = (0..n)
        .map(|u| likelihood[u] * (0..n).map(|v| trans(v, u) * prior[v]).sum::<f64>())
        .collect();
    normalize(&mut post)?;
    Ok(post)
}

/// Belief over joint environment states, kept as an explicit support.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvBelief {
    pub support: Vec<(EnvState, f64)>,
    /// Updates refused because the observation was impossible.
    pub rejected: u32,
}

impl EnvBelief {
    pub fn point(state: EnvState) -> Self {
        Self {
            support: vec![(state, 1.0)],
            rejected: 0,
        }
    }

    pub fn total(&self) -> f64 {
        self.support.iter().map(|(_, p)| p).sum()
    }

    pub fn prob(&self, state: &EnvState) -> f64 {
        self.support.iter().filter(|(s, _)| s == state).map(|(_, p)| p).sum()
    }

    /// Predict through `T` and correct by `Θ`. On an impossible observation
    /// the belief is left as it was and `rejected` is incremented.
    pub fn update(&mut self, model: &EnvModel, action: &EnvAction, obs: &Observation) -> Result<(), BeliefError> {
        let mut index: HashMap<EnvState, usize> = HashMap::new();
        let mut next: Vec<(EnvState, f64)> = Vec::new();
        for (prev, p) in &self.support {
            if *p == 0.0 {
                continue;
            }
            // States that could not have paid for the action carry no weight.
            let Ok(succ) = model.successors(prev, action) else {
                continue;
            };
            for (s, t) in succ {
                let w = model.observation_prob(obs, action, &s);
                if w == 0.0 {
                    continue;
                }
                match index.get(&s) {
                    Some(&j) => next[j].1 += p * t * w,
                    None => {
                        index.insert(s.clone(), next.len());
                        next.push((s, p * t * w));
                    }
                }
            }
        }
        let mut weights: Vec<f64> = next.iter().map(|(_, p)| *p).collect();
        if let Err(e) = normalize(&mut weights) {
            self.rejected += 1;
            return Err(e);
        }
        for ((_, p), w) in next.iter_mut().zip(weights) {
            *p = w;
        }
        self.support = next;
        Ok(())
    }
}

/// Discrete node types, each a net surplus (positive) or deficit (negative)
/// of processing units offered to the neighbourhood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSpace {
    pub levels: Vec<i32>,
}

impl TypeSpace {
    /// Deficit, neutral and surplus of `step` units.
    pub fn three_level(step: u32) -> Self {
        let s = step as i32;
        Self { levels: vec![-s, 0, s] }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn validate(&self, max_units: u32) -> Result<(), BeliefError> {
        if self.levels.is_empty() {
            return Err(BeliefError::InvalidTypes("no types".into()));
        }
        if self.levels.iter().any(|l| l.unsigned_abs() > max_units) {
            return Err(BeliefError::InvalidTypes(format!(
                "a level exceeds max_units {max_units}"
            )));
        }
        Ok(())
    }

    /// Index of the level nearest to `capability`; ties go to the lower index.
    pub fn classify(&self, capability: f64) -> usize {
        let mut best = 0;
        for (t, &l) in self.levels.iter().enumerate() {
            if (l as f64 - capability).abs() < (self.levels[best] as f64 - capability).abs() {
                best = t;
            }
        }
        best
    }

    /// Indicator likelihood of an exactly observed capability.
    pub fn likelihood(&self, capability: f64) -> Vec<f64> {
        self.levels
            .iter()
            .map(|&l| if l as f64 == capability { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Dirichlet pseudo-counts `[neighbour][cell][type]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeBelief {
    counts: Vec<Vec<Vec<f64>>>,
}

impl TypeBelief {
    pub fn new(neighbors: usize, cells: usize, types: usize, prior: f64) -> Result<Self, BeliefError> {
        if !(prior > 0.0) || types == 0 || cells == 0 {
            return Err(BeliefError::InvalidTypes(
                "need a positive prior, at least one cell and one type".into(),
            ));
        }
        Ok(Self {
            counts: vec![vec![vec![prior; types]; cells]; neighbors],
        })
    }

    pub fn neighbors(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self, neighbor: usize, cell: usize) -> &[f64] {
        &self.counts[neighbor][cell]
    }

    /// Posterior mean `counts / Σ counts`.
    pub fn mean(&self, neighbor: usize, cell: usize) -> Vec<f64> {
        let c = &self.counts[neighbor][cell];
        let z: f64 = c.iter().sum();
        c.iter().map(|x| x / z).collect()
    }

    /// Conjugate update: each type gains its normalized likelihood weight.
    pub fn update(&mut self, neighbor: usize, cell: usize, likelihood: &[f64]) -> Result<(), BeliefError> {
        let row = self
            .counts
            .get_mut(neighbor)
            .and_then(|r| r.get_mut(cell))
            .ok_or_else(|| BeliefError::Dimension(format!("no cell ({neighbor}, {cell})")))?;
        if likelihood.len() != row.len() {
            return Err(BeliefError::Dimension("likelihood length".into()));
        }
        let z: f64 = likelihood.iter().sum();
        if !(z > 0.0) {
            return Err(BeliefError::InconsistentOutcome {
                neighbor,
                capability: f64::NAN,
            });
        }
        for (c, l) in row.iter_mut().zip(likelihood) {
            *c += l / z;
        }
        Ok(())
    }

    /// Records an exactly observed capability level.
    pub fn observe(
        &mut self,
        space: &TypeSpace,
        neighbor: usize,
        cell: usize,
        capability: f64,
    ) -> Result<(), BeliefError> {
        self.update(neighbor, cell, &space.likelihood(capability))
            .map_err(|e| match e {
                BeliefError::InconsistentOutcome { neighbor, .. } => {
                    BeliefError::InconsistentOutcome { neighbor, capability }
                }
                other => other,
            })
    }
}

/// An agent's belief: its own harvest level and its neighbours' types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub harvest: Vec<f64>,
    pub types: TypeBelief,
}

/// A planning problem over beliefs with integer energy actions.
pub trait BeliefModel {
    type Belief;

    /// Candidate actions in ascending energy.
    fn actions(&self, belief: &Self::Belief) -> Vec<u32>;

    fn expected_reward(&self, belief: &Self::Belief, action: u32) -> f64;

    /// Predicted observations after `action`: probability and updated belief.
    fn predict(&self, belief: &Self::Belief, action: u32) -> Vec<(f64, Self::Belief)>;

    /// Memoization key. Beliefs with equal keys are treated as equal.
    fn key(&self, belief: &Self::Belief) -> Vec<u64>;
}

struct Planner<'a, M: BeliefModel> {
    model: &'a M,
    gamma: f64,
    memo: HashMap<(usize, Vec<u64>), f64>,
}

impl<M: BeliefModel> Planner<'_, M> {
    fn value(&mut self, belief: &M::Belief, depth: usize) -> f64 {
        let key = (depth, self.model.key(belief));
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let v = self.best(belief, depth).1;
        self.memo.insert(key, v);
        v
    }

    fn best(&mut self, belief: &M::Belief, depth: usize) -> (u32, f64) {
        let mut best: Option<(u32, f64)> = None;
        for a in self.model.actions(belief) {
            let mut q = self.model.expected_reward(belief, a);
            if depth > 0 && self.gamma != 0.0 {
                for (p, next) in self.model.predict(belief, a) {
                    q += self.gamma * p * self.value(&next, depth - 1);
                }
            }
            // Actions come in ascending energy, so ties keep the cheaper one.
            let better = match best {
                None => true,
                Some((_, v)) => q > v + TOL * v.abs().max(1.0),
            };
            if better {
                best = Some((a, q));
            }
        }
        best.unwrap_or((0, 0.0))
    }
}

/// Finite-horizon value: depth 0 is the best immediate expected reward.
pub fn bellman_value<M: BeliefModel>(model: &M, belief: &M::Belief, depth: usize, gamma: f64) -> f64 {
    plan(model, belief, depth, gamma).1
}

/// The maximizing action; ties favour lower energy.
pub fn select_action<M: BeliefModel>(model: &M, belief: &M::Belief, depth: usize, gamma: f64) -> u32 {
    plan(model, belief, depth, gamma).0
}

fn plan<M: BeliefModel>(model: &M, belief: &M::Belief, depth: usize, gamma: f64) -> (u32, f64) {
    let mut planner = Planner {
        model,
        gamma,
        memo: HashMap::new(),
    };
    planner.best(belief, depth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub depth: usize,
    pub gamma: f64,
    /// Number of evenly spaced budgets considered, besides the one that
    /// just covers the node's own demand.
    pub action_levels: usize,
    pub types: TypeSpace,
    pub prior: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            gamma: 0.9,
            action_levels: 6,
            types: TypeSpace::three_level(10),
            prior: 1.0,
        }
    }
}

/// What the agent knows when planning: its own battery and arrival levels,
/// and a distribution over its current harvest level.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentView {
    pub battery: u32,
    pub arrivals: Vec<usize>,
    pub harvest: Vec<f64>,
}

type RewardKey = (Vec<usize>, u32, i32);

/// A node's energy-scheduling agent. It sees only its own chains; its
/// neighbours are folded into one virtual node whose capability is the sum
/// of their believed types.
#[derive(Debug)]
pub struct FogAgent {
    pub node: usize,
    pub neighbors: Vec<usize>,
    pub config: AgentConfig,
    pub belief: BeliefState,
    spec: FogNodeSpec,
    net: Network,
    rtt: f64,
    harvest: MarkovChain,
    arrivals: Vec<MarkovChain>,
    battery_cap: u32,
    rejected: u32,
    cache: RefCell<HashMap<RewardKey, f64>>,
}

impl FogAgent {
    /// Agent for `node` of `net`, whose chains come from `env`.
    pub fn new(net: &Network, env: &EnvModel, node: usize, config: AgentConfig) -> Result<Self, BeliefError> {
        if env.node_count() != net.node_count() || node >= net.node_count() {
            return Err(BeliefError::Dimension("network and environment disagree".into()));
        }
        let spec = net.nodes[node].clone();
        config.types.validate(spec.max_units)?;
        let neighbors = net.neighbors[node].clone();
        let rtt = if neighbors.is_empty() {
            0.0
        } else {
            neighbors.iter().map(|&j| net.rtt[node][j]).sum::<f64>() / neighbors.len() as f64
        };
        let cells = env.arrivals[node].first().map_or(1, |c| c.len());
        let types = TypeBelief::new(neighbors.len(), cells, config.types.len(), config.prior)?;
        let harvest = env.harvest[node].clone();
        Ok(Self {
            node,
            neighbors,
            belief: BeliefState {
                harvest: harvest.stationary(),
                types,
            },
            config,
            net: Network::isolated(net.services.clone(), vec![spec.clone()]).with_activation(net.activation),
            spec,
            rtt,
            harvest,
            arrivals: env.arrivals[node].clone(),
            battery_cap: env.battery_cap[node],
            rejected: 0,
            cache: RefCell::new(HashMap::new()),
        })
    }

    pub fn view(&self, battery: u32, arrivals: Vec<usize>) -> AgentView {
        AgentView {
            battery,
            arrivals,
            harvest: self.belief.harvest.clone(),
        }
    }

    /// Number of filter updates refused as impossible.
    pub fn rejected(&self) -> u32 {
        self.rejected
    }

    fn cell(&self, arrivals: &[usize]) -> usize {
        arrivals.first().copied().unwrap_or(0)
    }

    /// Own reward of the node in one slot with budget `energy`, when its
    /// neighbourhood offers `pool` surplus units (negative: asks for them).
    pub fn deterministic_reward(&self, arrivals: &[usize], energy: u32, pool: i32) -> f64 {
        let key = (arrivals.to_vec(), energy, pool);
        if let Some(&v) = self.cache.borrow().get(&key) {
            return v;
        }
        let own: Vec<f64> = arrivals.iter().zip(&self.arrivals).map(|(&a, c)| c.levels[a]).collect();
        let kk = self.net.service_count();
        let (net, lambda, budgets) = if pool == 0 || self.neighbors.is_empty() {
            (self.net.clone(), vec![own], vec![energy])
        } else {
            let mut helper = self.spec.clone();
            helper.max_units = pool.unsigned_abs();
            helper.battery_cap = helper.max_useful_energy().max(1);
            let mut nodes = self.net.nodes.clone();
            nodes.push(helper);
            let net = Network::isolated(self.net.services.clone(), nodes)
                .with_activation(self.net.activation)
                .with_links(&[(0, 1)], self.rtt);
            let mut other = vec![0.0; kk];
            let mut help = 0;
            if pool > 0 {
                help = pool as u32 * self.spec.unit_energy;
            } else if kk > 0 {
                other[0] = -pool as f64 * self.net.services[0].unit_rate * self.spec.rate_multiplier;
            }
            (net, vec![own, other], vec![energy, help])
        };
        let v = solve_social_welfare(&net, &lambda, &budgets, &WelfareOptions::default())
            .map(|s| s.agreement.rewards[0])
            .unwrap_or(0.0);
        self.cache.borrow_mut().insert(key, v);
        v
    }

    /// Distribution of the summed neighbour capability in `cell`.
    fn pool_distribution(&self, cell: usize) -> BTreeMap<i32, f64> {
        let mut dist = BTreeMap::from([(0i32, 1.0)]);
        for j in 0..self.neighbors.len() {
            let mean = self.belief.types.mean(j, cell);
            let mut next = BTreeMap::new();
            for (&sum, &p) in &dist {
                for (&level, &q) in self.config.types.levels.iter().zip(&mean) {
                    *next.entry(sum + level).or_insert(0.0) += p * q;
                }
            }
            dist = next;
        }
        dist
    }

    /// Smallest budget at which the node alone serves everything it can.
    fn covering_budget(&self, arrivals: &[usize], max: u32) -> u32 {
        let full = self.deterministic_reward(arrivals, max, 0);
        let (mut lo, mut hi) = (0, max);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.deterministic_reward(arrivals, mid, 0) >= full - 1e-9 * full.max(1.0) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    }

    /// Bayes update of the harvest belief from the battery the node now sees.
    /// `spent` is the energy consumed in the slot that just ended.
    pub fn observe(&mut self, prev_battery: u32, spent: u32, battery: u32) -> Result<(), BeliefError> {
        let chain = &self.harvest;
        let likelihood: Vec<f64> = (0..chain.len())
            .map(
                |h| match battery_step(prev_battery, chain.levels[h] as u32, spent, self.battery_cap) {
                    Ok(b) if b == battery => 1.0,
                    _ => 0.0,
                },
            )
            .collect();
        match filter_step(&self.belief.harvest, |v, u| chain.prob(v, u), &likelihood) {
            Ok(post) => {
                self.belief.harvest = post;
                Ok(())
            }
            Err(e) => {
                self.rejected += 1;
                Err(e)
            }
        }
    }

    /// Records the capability neighbour `j` (a network index) showed while the
    /// agent's arrivals were `arrivals`.
    pub fn observe_neighbor(&mut self, j: usize, arrivals: &[usize], capability: f64) -> Result<(), BeliefError> {
        let idx = self
            .neighbors
            .iter()
            .position(|&n| n == j)
            .ok_or_else(|| BeliefError::Dimension(format!("{j} is not a neighbour")))?;
        let level = self.config.types.levels[self.config.types.classify(capability)] as f64;
        let cell = self.cell(arrivals);
        self.belief.types.observe(&self.config.types, idx, cell, level)
    }

    /// Budget chosen by lookahead of the configured depth.
    pub fn choose(&self, battery: u32, arrivals: Vec<usize>) -> u32 {
        let view = self.view(battery, arrivals);
        select_action(self, &view, self.config.depth, self.config.gamma)
    }
}

impl BeliefModel for FogAgent {
    type Belief = AgentView;

    fn actions(&self, view: &AgentView) -> Vec<u32> {
        let unit = self.spec.unit_energy.max(1);
        let max_units = view.battery.min(self.spec.max_useful_energy()) / unit;
        let levels = self.config.action_levels.max(2) as u32;
        let mut units: Vec<u32> = if max_units < levels {
            (0..=max_units).collect()
        } else {
            (0..levels)
                .map(|i| (i as f64 * max_units as f64 / (levels - 1) as f64).round() as u32)
                .collect()
        };
        units.push(self.covering_budget(&view.arrivals, max_units * unit).div_ceil(unit));
        units.sort_unstable();
        units.dedup();
        units.into_iter().map(|u| u * unit).collect()
    }

    fn expected_reward(&self, view: &AgentView, action: u32) -> f64 {
        self.pool_distribution(self.cell(&view.arrivals))
            .into_iter()
            .map(|(pool, p)| p * self.deterministic_reward(&view.arrivals, action, pool))
            .sum()
    }

    fn predict(&self, view: &AgentView, action: u32) -> Vec<(f64, AgentView)> {
        let chain = &self.harvest;
        let h_next: Vec<f64> = (0..chain.len())
            .map(|u| (0..chain.len()).map(|v| view.harvest[v] * chain.prob(v, u)).sum())
            .collect();
        // Battery readings and the harvest levels consistent with each.
        let mut by_battery: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for (u, &p) in h_next.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let Ok(b) = battery_step(view.battery, chain.levels[u] as u32, action, self.battery_cap) else {
                continue;
            };
            by_battery.entry(b).or_insert_with(|| vec![0.0; chain.len()])[u] += p;
        }
        let mut out = Vec::new();
        let mut digits = vec![0usize; self.arrivals.len()];
        loop {
            let pa: f64 = self
                .arrivals
                .iter()
                .zip(&view.arrivals)
                .zip(&digits)
                .map(|((c, &from), &to)| c.prob(from, to))
                .product();
            if pa > 0.0 {
                for (&b, weights) in &by_battery {
                    let mass: f64 = weights.iter().sum();
                    out.push((
                        pa * mass,
                        AgentView {
                            battery: b,
                            arrivals: digits.clone(),
                            harvest: weights.iter().map(|w| w / mass).collect(),
                        },
                    ));
                }
            }
            let mut d = 0;
            loop {
                if d == digits.len() {
                    return out;
                }
                digits[d] += 1;
                if digits[d] < self.arrivals[d].len() {
                    break;
                }
                digits[d] = 0;
                d += 1;
            }
        }
    }

    fn key(&self, view: &AgentView) -> Vec<u64> {
        let mut k = vec![view.battery as u64];
        k.extend(view.arrivals.iter().map(|&a| a as u64));
        k.extend(view.harvest.iter().map(|p| (p * 1e9).round() as u64));
        k
    }
}

#[cfg(test)]
mod tests;
