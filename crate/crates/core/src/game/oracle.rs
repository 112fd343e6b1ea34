//! Brute-force reference solvers.
//!
//! These enumerate offload fractions on a grid and energy splits exhaustively.
//! They are exponential and meant for instances of a handful of nodes.

use std::collections::HashMap;

use crate::model::{EnergyDistribution, Network, OffloadMatrix};
use crate::queueing::{response_time_forwarding, SATURATION_EPS};

use super::{enumerate_joint, SliceInstance};

#[derive(Debug, Clone, PartialEq)]
pub struct GridSolution {
    /// Requests/s admitted within the deadline.
    pub admitted: f64,
    pub offload: OffloadMatrix,
}

/// Best offload matrix whose entries are multiples of `step`, by
/// branch-and-bound over senders and their destinations.
pub fn grid_offload(slice: &SliceInstance, step: f64) -> GridSolution {
    let n = slice.size();
    let units = (1.0 / step).round().max(1.0) as u32;
    let senders: Vec<usize> = (0..n).filter(|&i| slice.arrivals[i] > 0.0).collect();
    let dests: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&m| {
                    slice.capacities[m] > SATURATION_EPS
                        && (m == i || (slice.neighbors[i].contains(&m) && slice.rtt[i][m] < slice.deadline))
                })
                .collect()
        })
        .collect();
    let mut suffix = vec![0.0; senders.len() + 1];
    for s in (0..senders.len()).rev() {
        suffix[s] = suffix[s + 1] + slice.arrivals[senders[s]];
    }
    let mut search = Search {
        slice,
        units,
        senders,
        dests,
        suffix,
        alpha: OffloadMatrix::zeros(n),
        loads: vec![0.0; n],
        admitted: 0.0,
        best: 0.0,
        best_alpha: OffloadMatrix::zeros(n),
    };
    search.row(0, 0, units);
    GridSolution {
        admitted: search.best,
        offload: search.best_alpha,
    }
}

struct Search<'a> {
    slice: &'a SliceInstance,
    units: u32,
    senders: Vec<usize>,
    dests: Vec<Vec<usize>>,
    /// Arrivals of senders `s..`.
    suffix: Vec<f64>,
    alpha: OffloadMatrix,
    loads: Vec<f64>,
    admitted: f64,
    best: f64,
    best_alpha: OffloadMatrix,
}

impl Search<'_> {
    fn response_ok(&self, i: usize) -> bool {
        if self.alpha.admitted(i) <= 0.0 {
            return true;
        }
        match response_time_forwarding(
            i,
            &self.alpha,
            &self.slice.capacities,
            &self.slice.arrivals,
            &self.slice.rtt,
        ) {
            Ok(r) => r <= self.slice.deadline + 1e-9,
            Err(_) => false,
        }
    }

    fn row(&mut self, s: usize, d: usize, left: u32) {
        if s == self.senders.len() {
            // Loads only grow as later rows fill in, so recheck everyone.
            let done = self.senders.clone();
            if self.admitted > self.best && done.iter().all(|&i| self.response_ok(i)) {
                self.best = self.admitted;
                self.best_alpha = self.alpha.clone();
            }
            return;
        }
        let i = self.senders[s];
        let lambda = self.slice.arrivals[i];
        let last = d + 1 == self.dests[i].len();
        let own = if d == self.dests[i].len() {
            0.0
        } else {
            lambda * left as f64 / self.units as f64
        };
        let room: f64 = (0..self.slice.size())
            .map(|m| (self.slice.capacities[m] - self.loads[m]).max(0.0))
            .sum();
        if self.admitted + (own + self.suffix[s + 1]).min(room) <= self.best + 1e-12 {
            return;
        }
        if d == self.dests[i].len() {
            // A row that already misses the deadline can only get worse.
            if self.response_ok(i) {
                self.row(s + 1, 0, self.units);
            }
            return;
        }
        let m = self.dests[i][d];
        let top = self.largest_share(s, m, left);
        for u in (0..=top).rev() {
            let add = lambda * u as f64 / self.units as f64;
            if last && self.admitted + add + self.suffix[s + 1] <= self.best + 1e-12 {
                break;
            }
            self.alpha.alpha[i][m] = u as f64 / self.units as f64;
            self.loads[m] += add;
            self.admitted += add;
            self.row(s, d + 1, left - u);
            self.loads[m] -= add;
            self.admitted -= add;
            self.alpha.alpha[i][m] = 0.0;
        }
    }

    /// Largest grid share of sender `s` at `m` that keeps `m` below capacity
    /// and every earlier sender using `m` within its deadline. Both only get
    /// harder as the share grows, so bisection applies.
    fn largest_share(&mut self, s: usize, m: usize, left: u32) -> u32 {
        let i = self.senders[s];
        let earlier: Vec<usize> = self.senders[..s]
            .iter()
            .copied()
            .filter(|&j| self.alpha.alpha[j][m] > 0.0)
            .collect();
        let lambda = self.slice.arrivals[i];
        let ok = |this: &mut Self, u: u32| -> bool {
            if u == 0 {
                return true;
            }
            let add = lambda * u as f64 / this.units as f64;
            if this.loads[m] + add >= this.slice.capacities[m] - SATURATION_EPS {
                return false;
            }
            this.alpha.alpha[i][m] = u as f64 / this.units as f64;
            this.loads[m] += add;
            let fine = earlier.iter().all(|&j| this.response_ok(j));
            this.loads[m] -= add;
            this.alpha.alpha[i][m] = 0.0;
            fine
        };
        if ok(self, left) {
            return left;
        }
        let (mut lo, mut hi) = (0u32, left);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if ok(self, mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveSolution {
    pub welfare: f64,
    pub energy: EnergyDistribution,
    pub offload: Vec<OffloadMatrix>,
}

/// Best welfare over every joint integer energy split and every grid offload.
pub fn exhaustive_welfare(net: &Network, arrivals: &[Vec<f64>], budgets: &[u32], step: f64) -> ExhaustiveSolution {
    let n = net.node_count();
    let kk = net.service_count();
    let budgets: Vec<u32> = (0..n)
        .map(|i| budgets[i].min(net.nodes[i].max_useful_energy()))
        .collect();
    let per_service: Vec<Vec<f64>> = (0..kk).map(|k| arrivals.iter().map(|row| row[k]).collect()).collect();
    let mut memo: HashMap<(usize, Vec<u32>), GridSolution> = HashMap::new();
    let mut best = ExhaustiveSolution {
        welfare: f64::NEG_INFINITY,
        energy: EnergyDistribution::zeros(n, kk),
        offload: vec![OffloadMatrix::zeros(n); kk],
    };
    let mut current = vec![Vec::new(); n];
    enumerate_joint(&budgets, kk, 0, &mut current, &mut |split| {
        let mut total = 0.0;
        for k in 0..kk {
            let col: Vec<u32> = split.iter().map(|row| row[k]).collect();
            let sol = memo.entry((k, col.clone())).or_insert_with(|| {
                let slice = SliceInstance::from_network(net, k, &col, &per_service[k]);
                grid_offload(&slice, step)
            });
            total += net.services[k].reward * sol.admitted;
        }
        if total > best.welfare {
            best.welfare = total;
            best.energy = EnergyDistribution(split.to_vec());
        }
    });
    best.offload = (0..kk)
        .map(|k| {
            let col = best.energy.slice(k);
            memo[&(k, col)].offload.clone()
        })
        .collect();
    best
}

/// Searches the grid for an agreement among the nodes of `net` in which every
/// node's own reward strictly exceeds `current`. Returns the new rewards of
/// the first one found.
pub fn improving_agreement(
    net: &Network,
    arrivals: &[Vec<f64>],
    budgets: &[u32],
    current: &[f64],
    step: f64,
) -> Option<Vec<f64>> {
    let n = net.node_count();
    let kk = net.service_count();
    let eps = |c: f64| 1e-9 * (1.0 + c.abs());
    // A node can never earn more than all of its own load.
    for j in 0..n {
        let ceiling: f64 = (0..kk).map(|k| net.services[k].reward * arrivals[j][k]).sum();
        if ceiling <= current[j] + eps(current[j]) {
            return None;
        }
    }
    let budgets: Vec<u32> = (0..n)
        .map(|i| budgets[i].min(net.nodes[i].max_useful_energy()))
        .collect();
    let units = (1.0 / step).round().max(1.0) as u32;
    let mut found = None;
    let mut split = vec![Vec::new(); n];
    joint_until(&budgets, kk, 0, &mut split, &mut |split| {
        let mut search = Pareto::new(net, arrivals, split, current, units);
        search.row(0, 0, units);
        found = search.found;
        found.is_some()
    });
    found
}

fn joint_until<F: FnMut(&[Vec<u32>]) -> bool>(
    budgets: &[u32],
    kk: usize,
    i: usize,
    current: &mut Vec<Vec<u32>>,
    visit: &mut F,
) -> bool {
    if i == budgets.len() {
        return visit(current);
    }
    let mut rows = Vec::new();
    super::enumerate_row(budgets[i], 0, &mut vec![0; kk], &mut |r| rows.push(r.to_vec()));
    for r in rows {
        current[i] = r;
        if joint_until(budgets, kk, i + 1, current, visit) {
            return true;
        }
    }
    false
}

/// Depth-first search over (service, sender) rows looking for a grid offload
/// in which every node beats its threshold.
struct Pareto<'a> {
    slices: Vec<SliceInstance>,
    /// (service, sender) pairs with work, service-major.
    rows: Vec<(usize, usize)>,
    dests: Vec<Vec<usize>>,
    rewards: Vec<f64>,
    threshold: &'a [f64],
    units: u32,
    alpha: Vec<OffloadMatrix>,
    loads: Vec<Vec<f64>>,
    earned: Vec<f64>,
    /// `potential[r][j]`: reward node `j` could still earn from rows `r..`.
    potential: Vec<Vec<f64>>,
    found: Option<Vec<f64>>,
}

impl<'a> Pareto<'a> {
    fn new(net: &Network, arrivals: &[Vec<f64>], split: &[Vec<u32>], threshold: &'a [f64], units: u32) -> Self {
        let n = net.node_count();
        let kk = net.service_count();
        let energy = EnergyDistribution(split.to_vec());
        let slices = super::slices(net, &energy, arrivals);
        let mut rows = Vec::new();
        let mut dests = Vec::new();
        for (k, s) in slices.iter().enumerate() {
            for i in 0..n {
                if s.arrivals[i] <= 0.0 {
                    continue;
                }
                rows.push((k, i));
                dests.push(
                    (0..n)
                        .filter(|&m| {
                            s.capacities[m] > SATURATION_EPS
                                && (m == i || (s.neighbors[i].contains(&m) && s.rtt[i][m] < s.deadline))
                        })
                        .collect(),
                );
            }
        }
        let rewards: Vec<f64> = net.services.iter().map(|s| s.reward).collect();
        let mut potential = vec![vec![0.0; n]; rows.len() + 1];
        for r in (0..rows.len()).rev() {
            potential[r] = potential[r + 1].clone();
            let (k, i) = rows[r];
            potential[r][i] += rewards[k] * slices[k].arrivals[i];
        }
        Self {
            slices,
            rows,
            dests,
            rewards,
            threshold,
            units,
            alpha: vec![OffloadMatrix::zeros(n); kk],
            loads: vec![vec![0.0; n]; kk],
            earned: vec![0.0; n],
            potential,
            found: None,
        }
    }

    fn beats(&self, j: usize, value: f64) -> bool {
        value > self.threshold[j] + 1e-9 * (1.0 + self.threshold[j].abs())
    }

    fn response_ok(&self, k: usize, i: usize) -> bool {
        let s = &self.slices[k];
        if self.alpha[k].admitted(i) <= 0.0 {
            return true;
        }
        match response_time_forwarding(i, &self.alpha[k], &s.capacities, &s.arrivals, &s.rtt) {
            Ok(r) => r <= s.deadline + 1e-9,
            Err(_) => false,
        }
    }

    fn row(&mut self, r: usize, d: usize, left: u32) {
        if self.found.is_some() {
            return;
        }
        if r == self.rows.len() {
            let n = self.earned.len();
            let rows = self.rows.clone();
            if (0..n).all(|j| self.beats(j, self.earned[j])) && rows.iter().all(|&(k, i)| self.response_ok(k, i)) {
                self.found = Some(self.earned.clone());
            }
            return;
        }
        let (k, i) = self.rows[r];
        let lambda = self.slices[k].arrivals[i];
        let open = self.rewards[k] * lambda * left as f64 / self.units as f64;
        for j in 0..self.earned.len() {
            let extra = self.potential[r + 1][j] + if j == i { open } else { 0.0 };
            if !self.beats(j, self.earned[j] + extra) {
                return;
            }
        }
        if d == self.dests[r].len() {
            if self.response_ok(k, i) {
                self.row(r + 1, 0, self.units);
            }
            return;
        }
        let m = self.dests[r][d];
        let cap = self.slices[k].capacities[m];
        for u in (0..=left).rev() {
            let add = lambda * u as f64 / self.units as f64;
            if u > 0 && self.loads[k][m] + add >= cap - SATURATION_EPS {
                continue;
            }
            let gain = self.rewards[k] * add;
            self.alpha[k].alpha[i][m] = u as f64 / self.units as f64;
            self.loads[k][m] += add;
            self.earned[i] += gain;
            self.row(r, d + 1, left - u);
            self.loads[k][m] -= add;
            self.earned[i] -= gain;
            self.alpha[k].alpha[i][m] = 0.0;
            if self.found.is_some() {
                return;
            }
        }
    }
}
