//! Per-slot resource slicing game.
//!
//! A *slice* is the set of nodes devoting energy to one service together with
//! the offload matrix that routes that service's requests among them. Within
//! a slot the budgets are fixed; the game picks how each node splits its
//! budget across services and how each slice forwards work, maximizing total
//! deadline-met reward.

mod instance;
pub mod oracle;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use instance::{GameInstance, InstanceParseError};

use crate::lp;
use crate::model::{
    self, contribution_rewards, Activation, EnergyDistribution, FogNodeSpec, ModelError, Network, OffloadMatrix,
    ServiceTypeSpec, SlicingAgreement, SlotState, Violation,
};
use crate::queueing::{local_admitted_load, SATURATION_EPS};
use crate::topology;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("infeasible offload: {0:?}")]
    Infeasible(Vec<Violation>),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One service's slice: per-node energy, service rate and arrivals, plus the
/// sender-side neighbour sets and RTTs it may forward over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceInstance {
    pub service: usize,
    pub deadline: f64,
    pub reward: f64,
    pub energy: Vec<u32>,
    pub capacities: Vec<f64>,
    pub arrivals: Vec<f64>,
    pub neighbors: Vec<Vec<usize>>,
    pub rtt: Vec<Vec<f64>>,
}

impl SliceInstance {
    pub fn from_network(net: &Network, service: usize, energy: &[u32], arrivals: &[f64]) -> Self {
        let s = &net.services[service];
        Self {
            service,
            deadline: s.deadline,
            reward: s.reward,
            energy: energy.to_vec(),
            capacities: (0..net.node_count())
                .map(|m| net.capacity(m, service, energy[m]))
                .collect(),
            arrivals: arrivals.to_vec(),
            neighbors: net.neighbors.clone(),
            rtt: net.rtt.clone(),
        }
    }

    pub fn size(&self) -> usize {
        self.capacities.len()
    }

    /// Nodes contributing energy to the slice.
    pub fn members(&self) -> Vec<usize> {
        (0..self.size()).filter(|&i| self.energy[i] > 0).collect()
    }

    pub fn violations(&self, offload: &OffloadMatrix) -> Vec<Violation> {
        model::slice_violations(
            self.service,
            self.deadline,
            &self.capacities,
            &self.arrivals,
            &self.neighbors,
            &self.rtt,
            offload,
        )
    }

    /// Usable (sender, destination, rtt) triples: the sender has work, the
    /// destination has capacity and the RTT alone is below the deadline.
    fn routes(&self) -> Vec<Route> {
        let mut out = Vec::new();
        for i in 0..self.size() {
            if self.arrivals[i] <= 0.0 {
                continue;
            }
            let mut dests: Vec<usize> = self.neighbors[i]
                .iter()
                .copied()
                .filter(|&m| m != i && self.rtt[i][m] < self.deadline)
                .collect();
            dests.push(i);
            dests.sort_unstable();
            dests.dedup();
            for m in dests {
                if self.capacities[m] > SATURATION_EPS {
                    let tau = if m == i { 0.0 } else { self.rtt[i][m] };
                    out.push(Route { from: i, to: m, tau });
                }
            }
        }
        out
    }
}

/// Total reward of a slice under `offload`: `rho * sum_i sum_m alpha_im lambda_i`.
pub fn slice_worth(slice: &SliceInstance, offload: &OffloadMatrix) -> Result<f64, GameError> {
    if offload.size() != slice.size() {
        return Err(ModelError::DimensionMismatch {
            what: "offload rows",
            expected: slice.size(),
            found: offload.size(),
        }
        .into());
    }
    let v = slice.violations(offload);
    if !v.is_empty() {
        return Err(GameError::Infeasible(v));
    }
    Ok(slice.reward * admitted_load(offload, &slice.arrivals))
}

fn admitted_load(offload: &OffloadMatrix, arrivals: &[f64]) -> f64 {
    (0..offload.size()).map(|i| offload.admitted(i) * arrivals[i]).sum()
}

#[derive(Debug, Clone, Copy)]
struct Route {
    from: usize,
    to: usize,
    tau: f64,
}

/// Solver output for one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct OffloadSolution {
    pub offload: OffloadMatrix,
    /// Requests/s admitted within the deadline.
    pub admitted: f64,
    /// Per-destination load targets the solution was computed against.
    pub loads: Vec<f64>,
}

/// Deadline-constrained offload matrix maximizing admitted load.
///
/// For a fixed vector of per-destination load targets `L`, queueing delays
/// are constants and the problem is a linear program in the flows
/// `beta_im = alpha_im lambda_i`. The outer problem over `L` is searched by
/// branch-and-bound and local polishing, starting from the loads each node
/// would carry alone, so the result never admits less than the isolated
/// solution. Slices with many destinations get a smaller search budget.
pub fn solve_offload(slice: &SliceInstance) -> OffloadMatrix {
    solve_offload_detailed(slice, None).offload
}

/// [`solve_offload`] with an optional warm start for the load targets.
pub fn solve_offload_detailed(slice: &SliceInstance, warm: Option<&[f64]>) -> OffloadSolution {
    let n = slice.size();
    let routes = slice.routes();
    if routes.is_empty() {
        return OffloadSolution {
            offload: OffloadMatrix::zeros(n),
            admitted: 0.0,
            loads: vec![0.0; n],
        };
    }
    let lp = OffloadLp::new(slice, &routes);
    let large = lp.dests.len() > SMALL_SLICE;

    let mut local = vec![0.0; n];
    for &m in &lp.dests {
        let own = local_admitted_load(slice.capacities[m], slice.arrivals[m], lp.theta);
        local[m] = own.min(lp.hi[m]);
    }
    let mut incumbent = (local.clone(), lp.solve(&local));
    let helper = lp.helper_loads(&local);
    let sol = lp.solve(&helper);
    if sol.objective > incumbent.1.objective {
        incumbent = (helper, sol);
    }
    if let Some(w) = warm.filter(|w| w.len() == n) {
        let w: Vec<f64> = (0..n).map(|m| w[m].clamp(0.0, lp.hi[m])).collect();
        let sol = lp.solve(&w);
        if sol.objective > incumbent.1.objective {
            incumbent = (w, sol);
        }
    }
    // No solution can admit more than every request.
    let ceiling: f64 = lp.senders.iter().map(|&i| slice.arrivals[i]).sum();
    if incumbent.1.x.iter().sum::<f64>() < ceiling * (1.0 - 1e-12) {
        let limit = if large { BB_NODE_LIMIT_LARGE } else { BB_NODE_LIMIT };
        incumbent = lp.branch_and_bound(incumbent, limit, 1e-7);
    }
    let (loads, best) = lp.local_search(incumbent.0, !large);

    let offload = lp.to_offload(&best.x);
    if slice.violations(&offload).is_empty() {
        return OffloadSolution {
            admitted: admitted_load(&offload, &slice.arrivals),
            offload,
            loads,
        };
    }
    // Floating-point edge: fall back to independent local processing.
    let offload = local_only(slice);
    OffloadSolution {
        admitted: admitted_load(&offload, &slice.arrivals),
        loads: (0..n).map(|m| offload.load_at(m, &slice.arrivals)).collect(),
        offload,
    }
}

/// Admitted load of the best of three LPs: load targets at the isolated
/// local loads, at [`OffloadLp::helper_loads`], and at `warm` shifted by each node's capacity change since
/// `warm_caps` (which keeps its queueing delay). A feasible value, far
/// cheaper than a full solve.
fn quick_admitted(slice: &SliceInstance, warm: &[f64], warm_caps: &[f64]) -> (f64, Vec<f64>) {
    let n = slice.size();
    let routes = slice.routes();
    if routes.is_empty() {
        return (0.0, vec![0.0; n]);
    }
    let lp = OffloadLp::new(slice, &routes);
    let mut local = vec![0.0; n];
    for &m in &lp.dests {
        local[m] = local_admitted_load(slice.capacities[m], slice.arrivals[m], lp.theta).min(lp.hi[m]);
    }
    let warm: Vec<f64> = (0..n)
        .map(|m| {
            let w = warm.get(m).copied().unwrap_or(0.0);
            let shift = slice.capacities[m] - warm_caps.get(m).copied().unwrap_or(slice.capacities[m]);
            (w + shift).clamp(0.0, lp.hi[m])
        })
        .collect();
    let helper = lp.helper_loads(&local);
    let (mut loads, mut best) = [local, helper, warm]
        .into_iter()
        .map(|l| {
            let sol = lp.solve(&l);
            (l, sol)
        })
        .max_by(|a, b| a.1.objective.total_cmp(&b.1.objective))
        .expect("candidates");
    lp.refine(&mut loads, &mut best, QUICK_REFINE_STEPS);
    (best.x.iter().sum(), loads)
}

fn local_only(slice: &SliceInstance) -> OffloadMatrix {
    let mut out = OffloadMatrix::zeros(slice.size());
    for i in 0..slice.size() {
        let lambda = slice.arrivals[i];
        if lambda > 0.0 {
            let load = local_admitted_load(slice.capacities[i], lambda, slice.deadline);
            out.alpha[i][i] = (load / lambda) * (1.0 - 1e-12);
        }
    }
    out
}

/// Scan then golden-section refine one coordinate. Returns the best point
/// and its solution if it beats `current_value`.
fn line_search<F>(hi: f64, current: f64, current_value: f64, mut f: F) -> (f64, Option<lp::LpSolution>)
where
    F: FnMut(f64) -> lp::LpSolution,
{
    const SCAN: usize = 8;
    let mut best_x = current;
    let mut best_v = current_value;
    let mut best_sol = None;
    let consider = |x: f64, sol: lp::LpSolution, bx: &mut f64, bv: &mut f64, bs: &mut Option<lp::LpSolution>| {
        let v = sol.objective;
        if v > *bv + 1e-12 * (1.0 + bv.abs()) {
            *bx = x;
            *bv = v;
            *bs = Some(sol);
        }
        v
    };
    if hi <= 0.0 {
        return (current, None);
    }
    let mut scan = [0.0; SCAN + 1];
    let mut top = 0;
    for j in 0..=SCAN {
        let x = hi * j as f64 / SCAN as f64;
        scan[j] = consider(x, f(x), &mut best_x, &mut best_v, &mut best_sol);
        if scan[j] > scan[top] {
            top = j;
        }
    }
    let step = hi / SCAN as f64;
    let (mut a, mut b) = ((top as f64 - 1.0).max(0.0) * step, ((top + 1) as f64 * step).min(hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = consider(c, f(c), &mut best_x, &mut best_v, &mut best_sol);
    let mut fd = consider(d, f(d), &mut best_x, &mut best_v, &mut best_sol);
    for _ in 0..22 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = consider(c, f(c), &mut best_x, &mut best_v, &mut best_sol);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = consider(d, f(d), &mut best_x, &mut best_v, &mut best_sol);
        }
    }
    (best_x, best_sol)
}

/// Boxes expanded by the offload branch-and-bound before it settles for the
/// incumbent.
const BB_NODE_LIMIT: usize = 400;
const BB_NODE_LIMIT_LARGE: usize = 24;
/// Slices with more destinations than this get a cheaper search.
const SMALL_SLICE: usize = 6;
const QUICK_REFINE_STEPS: usize = 30;
/// Routes whose deadline excess is above this multiple of the deadline are
/// not offered to the LP.
const SLOW_ROUTE_LIMIT: f64 = 1e6;

struct BoxNode {
    bound: f64,
    seq: usize,
    lo: Vec<f64>,
    up: Vec<f64>,
    relaxed: Vec<f64>,
}

impl PartialEq for BoxNode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for BoxNode {}

impl PartialOrd for BoxNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for BoxNode {
    // Highest bound first; earlier boxes first among equals.
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound.total_cmp(&other.bound).then(other.seq.cmp(&self.seq))
    }
}

/// The inner LP over route flows for fixed per-destination load targets.
struct OffloadLp<'a> {
    slice: &'a SliceInstance,
    routes: &'a [Route],
    senders: Vec<usize>,
    dests: Vec<usize>,
    /// Largest useful load target per node.
    hi: Vec<f64>,
    theta: f64,
    objective: Vec<f64>,
}

impl<'a> OffloadLp<'a> {
    fn new(slice: &'a SliceInstance, routes: &'a [Route]) -> Self {
        let n = slice.size();
        let mut senders: Vec<usize> = routes.iter().map(|r| r.from).collect();
        senders.dedup();
        let mut dests: Vec<usize> = routes.iter().map(|r| r.to).collect();
        dests.sort_unstable();
        dests.dedup();
        let mut offered = vec![0.0; n];
        for r in routes {
            offered[r.to] += slice.arrivals[r.from];
        }
        let hi = (0..n)
            .map(|m| {
                let cap = slice.capacities[m];
                (cap - (cap * 1e-9).max(4.0 * SATURATION_EPS)).min(offered[m]).max(0.0)
            })
            .collect();
        // Unit weight per request, nudged toward local processing and then
        // toward lower destination indices.
        let objective = routes
            .iter()
            .map(|r| {
                if r.from == r.to {
                    1.0 + 1e-7
                } else {
                    1.0 - 1e-9 * (r.to as f64 + 1.0) / (n as f64 + 1.0)
                }
            })
            .collect();
        Self {
            slice,
            routes,
            senders,
            dests,
            hi,
            theta: slice.deadline * (1.0 - 1e-10),
            objective,
        }
    }

    /// Per destination, the largest load at which its fastest incoming
    /// route still meets the deadline, and never below `local`.
    fn helper_loads(&self, local: &[f64]) -> Vec<f64> {
        let n = self.slice.size();
        let mut tau_in = vec![f64::INFINITY; n];
        for r in self.routes.iter().filter(|r| r.from != r.to) {
            tau_in[r.to] = tau_in[r.to].min(r.tau);
        }
        (0..n)
            .map(|m| {
                let slack = self.theta - tau_in[m];
                let reach = if slack > 0.0 {
                    self.slice.capacities[m] - 1.0 / slack
                } else {
                    0.0
                };
                reach.min(self.hi[m]).max(local[m])
            })
            .collect()
    }

    fn delays(&self, loads: &[f64]) -> Vec<f64> {
        self.slice
            .capacities
            .iter()
            .zip(loads)
            .map(|(&cap, &l)| {
                let h = cap - l;
                if h > SATURATION_EPS {
                    1.0 / h
                } else {
                    f64::INFINITY
                }
            })
            .collect()
    }

    /// Exact LP for load targets `loads`: every solution is feasible.
    fn solve(&self, loads: &[f64]) -> lp::LpSolution {
        self.solve_with(&self.delays(loads), loads)
    }

    /// LP with per-destination delays `delay` and load caps `loads`.
    fn solve_with(&self, delay: &[f64], loads: &[f64]) -> lp::LpSolution {
        let nr = self.routes.len();
        let mut c = self.objective.clone();
        // Routes into a saturated destination are disabled, as are routes so
        // slow that at most a 1e-6 share of a sender's load could use them.
        for (r, route) in self.routes.iter().enumerate() {
            let excess = route.tau + delay[route.to] - self.theta;
            if !delay[route.to].is_finite() || loads[route.to] <= 0.0 || excess > SLOW_ROUTE_LIMIT * self.theta {
                c[r] = 0.0;
            }
        }
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut slow_rows = Vec::new();
        for &s in &self.senders {
            let mut row = vec![0.0; nr];
            let mut slow = vec![0.0; nr];
            let mut any_slow = false;
            for (r, route) in self.routes.iter().enumerate() {
                if route.from == s && c[r] != 0.0 {
                    row[r] = 1.0;
                    let excess = route.tau + delay[route.to] - self.theta;
                    // Round-off around an exactly met deadline; the solver's
                    // deadline margin is far wider.
                    let excess = if excess.abs() <= 1e-12 * self.theta {
                        0.0
                    } else {
                        excess
                    };
                    slow[r] = excess;
                    any_slow |= excess > 0.0;
                }
            }
            a.push(row);
            b.push(self.slice.arrivals[s]);
            if any_slow {
                slow_rows.push(a.len());
                a.push(slow);
                b.push(0.0);
            }
        }
        for &m in &self.dests {
            let row = self
                .routes
                .iter()
                .enumerate()
                .map(|(r, route)| if route.to == m && c[r] != 0.0 { 1.0 } else { 0.0 })
                .collect();
            a.push(row);
            b.push(loads[m].max(0.0));
        }
        let mut sol = lp::maximize(&c, &a, &b);
        // Round-off on badly scaled deadline rows: trim the sender's slowest
        // flows until its row holds. Lowering flows keeps every other row.
        for &k in &slow_rows {
            let row = &a[k];
            let mut order: Vec<usize> = (0..nr).filter(|&r| row[r] > 0.0 && sol.x[r] > 0.0).collect();
            order.sort_by(|&p, &q| row[q].total_cmp(&row[p]));
            for r in order {
                let lhs: f64 = row.iter().zip(&sol.x).map(|(p, q)| p * q).sum();
                if lhs <= 0.0 {
                    break;
                }
                sol.x[r] = (sol.x[r] - lhs / row[r]).max(0.0);
            }
        }
        if !lp::feasible(&a, &b, &sol.x) {
            sol.x = vec![0.0; nr];
        }
        sol.objective = sol.x.iter().zip(&c).map(|(x, w)| x * w).sum();
        sol
    }

    /// Coordinate line searches alternated with the trust-region refinement.
    fn local_search(&self, mut loads: Vec<f64>, coordinates: bool) -> (Vec<f64>, lp::LpSolution) {
        let mut best = self.solve(&loads);
        for _ in 0..30 {
            let before = best.objective;
            for &m in self.dests.iter().filter(|_| coordinates) {
                let current = loads[m];
                let mut trial = loads.clone();
                let (x, sol) = line_search(self.hi[m], current, best.objective, |x| {
                    trial[m] = x;
                    self.solve(&trial)
                });
                if let Some(sol) = sol {
                    loads[m] = x;
                    best = sol;
                }
            }
            self.refine(&mut loads, &mut best, 200);
            if best.objective - before <= 1e-10 * (1.0 + before) {
                break;
            }
        }
        (loads, best)
    }

    /// Spatial branch-and-bound over boxes of load targets.
    ///
    /// Inside a box every feasible solution has delays at least those at the
    /// box's lower corner and loads at most its upper corner, so the LP with
    /// those delays and caps bounds the box from above. Exact LPs at the
    /// loads that relaxation carries supply incumbents.
    fn branch_and_bound(
        &self,
        mut incumbent: (Vec<f64>, lp::LpSolution),
        node_limit: usize,
        tol: f64,
    ) -> (Vec<f64>, lp::LpSolution) {
        let n = self.slice.size();
        let root_lo = vec![0.0; n];
        let root_up = self.hi.clone();
        let mut heap = BinaryHeap::new();
        let mut seq = 0usize;
        let root = self.solve_with(&self.delays(&root_lo), &root_up);
        heap.push(BoxNode {
            bound: root.objective,
            seq,
            lo: root_lo,
            up: root_up,
            relaxed: root.x,
        });
        let mut expanded = 0;
        while let Some(node) = heap.pop() {
            let inc = incumbent.1.objective;
            if node.bound <= inc + tol * (1.0 + inc.abs()) || expanded >= node_limit {
                break;
            }
            expanded += 1;
            let carried = self.carried(&node.relaxed);
            let sol = self.solve(&carried);
            if sol.objective > incumbent.1.objective {
                incumbent = (carried.clone(), sol);
            }
            // Branch where the optimistic delays are most wrong.
            let true_delay = self.delays(&carried);
            let low_delay = self.delays(&node.lo);
            let mut flow = vec![0.0; n];
            for (route, &x) in self.routes.iter().zip(&node.relaxed) {
                flow[route.to] += x;
            }
            let mut pick = None;
            let mut worst = 0.0;
            for &m in &self.dests {
                if node.up[m] - node.lo[m] <= 1e-9 * (1.0 + self.hi[m]) {
                    continue;
                }
                let gap = (true_delay[m] - low_delay[m]).min(1e9);
                let score = flow[m] * gap;
                if score > worst {
                    worst = score;
                    pick = Some(m);
                }
            }
            let Some(m) = pick else { continue };
            let mid = 0.5 * (node.lo[m] + node.up[m]);
            for (lo_m, up_m) in [(node.lo[m], mid), (mid, node.up[m])] {
                let mut lo = node.lo.clone();
                let mut up = node.up.clone();
                lo[m] = lo_m;
                up[m] = up_m;
                let relax = self.solve_with(&self.delays(&lo), &up);
                let inc = incumbent.1.objective;
                if relax.objective > inc + tol * (1.0 + inc.abs()) {
                    seq += 1;
                    heap.push(BoxNode {
                        bound: relax.objective,
                        seq,
                        lo,
                        up,
                        relaxed: relax.x,
                    });
                }
            }
        }
        incumbent
    }

    fn carried(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.slice.size()];
        for (route, &x) in self.routes.iter().zip(beta) {
            out[route.to] += x;
        }
        for &m in &self.dests {
            out[m] = out[m].min(self.hi[m]);
        }
        out
    }

    /// Sequential LP with a trust region on the load targets. The queueing
    /// delay is linearized around the current targets so the LP can trade
    /// load between destinations jointly; a step is kept only if the exact
    /// inner LP at the proposed targets improves.
    fn refine(&self, loads: &mut Vec<f64>, best: &mut lp::LpSolution, max_steps: usize) {
        let scale: f64 = self.dests.iter().map(|&m| self.hi[m]).fold(0.0, f64::max);
        if scale <= 0.0 {
            return;
        }
        let mut radius = 0.25 * scale;
        let mut steps = 0;
        while radius > 1e-10 * scale && steps < max_steps {
            steps += 1;
            let proposal = self.linearized_step(loads, &best.x, radius);
            let sol = self.solve(&proposal);
            if sol.objective > best.objective + 1e-12 * (1.0 + best.objective) {
                *loads = proposal;
                *best = sol;
                radius = (radius * 2.0).min(scale);
            } else {
                radius *= 0.25;
            }
        }
    }

    fn linearized_step(&self, loads: &[f64], beta: &[f64], radius: f64) -> Vec<f64> {
        let n = self.slice.size();
        let nr = self.routes.len();
        let nd = self.dests.len();
        let mut lo = vec![0.0; n];
        let mut up = vec![0.0; n];
        let mut slope = vec![0.0; n];
        let mut delay = vec![f64::INFINITY; n];
        for &m in &self.dests {
            lo[m] = (loads[m] - radius).max(0.0);
            up[m] = (loads[m] + radius).min(self.hi[m]);
            let h = self.slice.capacities[m] - loads[m];
            if h > SATURATION_EPS {
                delay[m] = 1.0 / h;
                slope[m] = delay[m] * delay[m];
            }
        }
        // Variables: route flows, then one offset per destination above lo.
        let width = nr + nd;
        let mut c = vec![0.0; width];
        for r in 0..nr {
            if delay[self.routes[r].to].is_finite() {
                c[r] = self.objective[r];
            }
        }
        let mut a = Vec::new();
        let mut b = Vec::new();
        for &s in &self.senders {
            let mut row = vec![0.0; width];
            let mut dl = vec![0.0; width];
            let mut rhs = 0.0;
            for (r, route) in self.routes.iter().enumerate() {
                if route.from != s || c[r] == 0.0 {
                    continue;
                }
                row[r] = 1.0;
                dl[r] = route.tau + delay[route.to] - self.theta;
                let d = self.dests.binary_search(&route.to).unwrap();
                let w = beta[r] * slope[route.to];
                dl[nr + d] += w;
                rhs += w * (loads[route.to] - lo[route.to]);
            }
            a.push(row);
            b.push(self.slice.arrivals[s]);
            a.push(dl);
            b.push(rhs);
        }
        for (d, &m) in self.dests.iter().enumerate() {
            let mut row = vec![0.0; width];
            for (r, route) in self.routes.iter().enumerate() {
                if route.to == m && c[r] != 0.0 {
                    row[r] = 1.0;
                }
            }
            row[nr + d] = -1.0;
            a.push(row);
            b.push(lo[m]);
            let mut cap = vec![0.0; width];
            cap[nr + d] = 1.0;
            a.push(cap);
            b.push(up[m] - lo[m]);
        }
        let sol = lp::maximize(&c, &a, &b);
        // Propose the loads the step would actually carry.
        let mut out = loads.to_vec();
        for &m in &self.dests {
            out[m] = 0.0;
        }
        for (route, &x) in self.routes.iter().zip(&sol.x) {
            out[route.to] += x;
        }
        for &m in &self.dests {
            out[m] = out[m].clamp(lo[m], up[m]);
        }
        out
    }

    fn to_offload(&self, beta: &[f64]) -> OffloadMatrix {
        let n = self.slice.size();
        let mut out = OffloadMatrix::zeros(n);
        for (route, &x) in self.routes.iter().zip(beta) {
            if x > 1e-9 {
                out.alpha[route.from][route.to] = x / self.slice.arrivals[route.from];
            }
        }
        for row in &mut out.alpha {
            let sum: f64 = row.iter().sum();
            if sum > 1.0 {
                row.iter_mut().for_each(|a| *a /= sum);
            }
        }
        out
    }
}

/// Reward a node earns alone from `energy` units on `service`.
fn isolated_value(
    node: &FogNodeSpec,
    service: &ServiceTypeSpec,
    activation: Activation,
    lambda: f64,
    energy: u32,
) -> f64 {
    let cap = activation.capacity(node, service, energy);
    service.reward * local_admitted_load(cap, lambda, service.deadline)
}

/// Integer split of `budget` across services maximizing the reward the node
/// earns alone. Exact dynamic programme over energy units; among optimal
/// splits the most even one is returned.
///
/// Budgets above [`FogNodeSpec::max_useful_energy`] are truncated, so the
/// split may sum to less than `budget`.
pub fn solve_energy_split(
    node: &FogNodeSpec,
    budget: u32,
    arrivals: &[f64],
    services: &[ServiceTypeSpec],
    activation: Activation,
) -> Vec<u32> {
    let kk = services.len();
    if kk == 0 {
        return Vec::new();
    }
    let budget = budget.min(node.max_useful_energy()) as usize;
    let value: Vec<Vec<f64>> = (0..kk)
        .map(|k| {
            (0..=budget)
                .map(|e| isolated_value(node, &services[k], activation, arrivals[k], e as u32))
                .collect()
        })
        .collect();
    // best[k][b]: optimal value of services k.. with exactly b units.
    let mut best = vec![vec![f64::NEG_INFINITY; budget + 1]; kk + 1];
    best[kk][0] = 0.0;
    for k in (0..kk).rev() {
        for b in 0..=budget {
            best[k][b] = (0..=b)
                .map(|e| value[k][e] + best[k + 1][b - e])
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }
    let mut split = vec![0u32; kk];
    let mut left = budget;
    for k in 0..kk {
        let target = left as f64 / (kk - k) as f64;
        let tol = 1e-12 * (1.0 + best[k][left].abs());
        let e = (0..=left)
            .filter(|&e| value[k][e] + best[k + 1][left - e] >= best[k][left] - tol)
            .min_by(|&x, &y| {
                (x as f64 - target)
                    .abs()
                    .total_cmp(&(y as f64 - target).abs())
                    .then(y.cmp(&x))
            })
            .unwrap_or(left);
        split[k] = e as u32;
        left -= e;
    }
    split
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelfareOptions {
    pub max_rounds: usize,
    /// Stop when a full round improves welfare by less than this.
    pub tolerance: f64,
    /// Enumerate every joint energy split of a component when there are at
    /// most this many.
    pub exhaustive_limit: usize,
    /// Components with more nodes keep the isolated energy splits and only
    /// have their offload optimized; they are reported uncertified.
    pub coordinate_limit: usize,
}

impl Default for WelfareOptions {
    fn default() -> Self {
        Self {
            max_rounds: 200,
            tolerance: 1e-6,
            exhaustive_limit: 256,
            coordinate_limit: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WelfareSolution {
    pub agreement: SlicingAgreement,
    pub welfare: f64,
    /// False if some component hit `max_rounds` before converging or was
    /// above `coordinate_limit`.
    pub certified: bool,
    pub rounds: usize,
}

/// Welfare-maximizing agreement for fixed per-node budgets.
///
/// Connected components of the neighbour graph are solved independently.
/// Within a component, energy splits start from each node's isolated optimum
/// (or the best joint split when few enough exist to enumerate) and are
/// improved by block-coordinate ascent: move energy between two services of
/// one node, re-solve the two affected slices, keep the move if welfare rises.
pub fn solve_social_welfare(
    net: &Network,
    arrivals: &[Vec<f64>],
    budgets: &[u32],
    opts: &WelfareOptions,
) -> Result<WelfareSolution, GameError> {
    net.validate()?;
    let n = net.node_count();
    let kk = net.service_count();
    check_len("arrivals", n, arrivals.len())?;
    check_len("budgets", n, budgets.len())?;
    for row in arrivals {
        check_len("arrivals per node", kk, row.len())?;
    }

    let mut agreement = SlicingAgreement::empty(n, kk);
    let mut certified = !(n > opts.coordinate_limit && kk > 1);
    let mut rounds = 0;
    for comp in topology::components(&net.neighbors) {
        let sub = net.subnetwork(&comp);
        let sub_arrivals: Vec<Vec<f64>> = comp.iter().map(|&g| arrivals[g].clone()).collect();
        let sub_budgets: Vec<u32> = comp.iter().map(|&g| budgets[g]).collect();
        let part = solve_component(&sub, &sub_arrivals, &sub_budgets, opts);
        certified &= part.certified;
        rounds = rounds.max(part.rounds);
        for (a, &ga) in comp.iter().enumerate() {
            agreement.energy.0[ga] = part.split[a].clone();
            for k in 0..kk {
                for (b, &gb) in comp.iter().enumerate() {
                    agreement.offload[k].alpha[ga][gb] = part.offload[k].alpha[a][b];
                }
            }
        }
    }
    agreement.rewards = contribution_rewards(&net.services, &agreement.offload, arrivals);

    let state = SlotState {
        battery: budgets.to_vec(),
        arrivals: arrivals.to_vec(),
        harvested_prev: vec![0; n],
    };
    let violations = model::validate_agreement(net, &state, &agreement)?;
    if !violations.is_empty() {
        return Err(GameError::Infeasible(violations));
    }
    Ok(WelfareSolution {
        welfare: agreement.welfare(),
        agreement,
        certified,
        rounds,
    })
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), ModelError> {
    if expected == found {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch { what, expected, found })
    }
}

struct ComponentSolution {
    split: Vec<Vec<u32>>,
    offload: Vec<OffloadMatrix>,
    certified: bool,
    rounds: usize,
}

/// Memoized slice values for one component.
struct SliceCache<'a> {
    net: &'a Network,
    arrivals: Vec<Vec<f64>>,
    memo: HashMap<(usize, Vec<u32>), OffloadSolution>,
    /// Quick admitted load and the load targets that achieved it.
    quick: HashMap<(usize, Vec<u32>), (f64, Vec<f64>)>,
    warm: Vec<Vec<f64>>,
    warm_caps: Vec<Vec<f64>>,
}

impl<'a> SliceCache<'a> {
    fn new(net: &'a Network, arrivals: &[Vec<f64>]) -> Self {
        let kk = net.service_count();
        let n = net.node_count();
        Self {
            net,
            arrivals: (0..kk).map(|k| arrivals.iter().map(|row| row[k]).collect()).collect(),
            memo: HashMap::new(),
            quick: HashMap::new(),
            warm: vec![vec![0.0; n]; kk],
            warm_caps: vec![vec![0.0; n]; kk],
        }
    }

    fn value(&mut self, k: usize, column: &[u32]) -> f64 {
        self.solution(k, column).admitted * self.net.services[k].reward
    }

    fn solution(&mut self, k: usize, column: &[u32]) -> &OffloadSolution {
        let key = (k, column.to_vec());
        if !self.memo.contains_key(&key) {
            let slice = SliceInstance::from_network(self.net, k, column, &self.arrivals[k]);
            let warm = match self.quick.get(&key) {
                Some((_, loads)) => loads,
                None => &self.warm[k],
            };
            let sol = solve_offload_detailed(&slice, Some(warm));
            self.memo.insert(key.clone(), sol);
        }
        &self.memo[&key]
    }

    fn total(&mut self, split: &[Vec<u32>]) -> f64 {
        (0..self.net.service_count())
            .map(|k| {
                let col: Vec<u32> = split.iter().map(|row| row[k]).collect();
                self.value(k, &col)
            })
            .sum()
    }

    /// Like `total`, but columns without a full solution are scored by
    /// [`quick_admitted`]. Never above the full value.
    fn quick_total(&mut self, split: &[Vec<u32>]) -> f64 {
        (0..self.net.service_count())
            .map(|k| {
                let col: Vec<u32> = split.iter().map(|row| row[k]).collect();
                let reward = self.net.services[k].reward;
                if let Some(sol) = self.memo.get(&(k, col.clone())) {
                    return sol.admitted * reward;
                }
                let key = (k, col);
                if let Some((v, _)) = self.quick.get(&key) {
                    return v * reward;
                }
                let slice = SliceInstance::from_network(self.net, k, &key.1, &self.arrivals[k]);
                let (v, loads) = quick_admitted(&slice, &self.warm[k], &self.warm_caps[k]);
                self.quick.insert(key, (v, loads));
                v * reward
            })
            .sum()
    }

    fn remember(&mut self, split: &[Vec<u32>]) {
        for k in 0..self.net.service_count() {
            let col: Vec<u32> = split.iter().map(|row| row[k]).collect();
            self.warm[k] = self.solution(k, &col).loads.clone();
            self.warm_caps[k] = (0..col.len()).map(|m| self.net.capacity(m, k, col[m])).collect();
        }
    }
}

fn solve_component(net: &Network, arrivals: &[Vec<f64>], budgets: &[u32], opts: &WelfareOptions) -> ComponentSolution {
    let n = net.node_count();
    let kk = net.service_count();
    let budgets: Vec<u32> = (0..n)
        .map(|i| budgets[i].min(net.nodes[i].max_useful_energy()))
        .collect();
    let mut split: Vec<Vec<u32>> = (0..n)
        .map(|i| solve_energy_split(&net.nodes[i], budgets[i], &arrivals[i], &net.services, net.activation))
        .collect();
    let mut cache = SliceCache::new(net, arrivals);
    let mut total = cache.total(&split);
    cache.remember(&split);

    let coupled = n > 1 && kk > 1 && n <= opts.coordinate_limit;
    let quick = n > SMALL_SLICE;
    if coupled && joint_split_count(&budgets, kk) <= opts.exhaustive_limit as u128 {
        let mut current = vec![Vec::new(); n];
        enumerate_joint(&budgets, kk, 0, &mut current, &mut |cand| {
            let v = cache.total(cand);
            if v > total + 1e-12 * (1.0 + total) {
                total = v;
                split = cand.to_vec();
            }
        });
        cache.remember(&split);
    }

    let mut certified = !(n > opts.coordinate_limit && kk > 1);
    let mut rounds = 0;
    if coupled {
        certified = false;
        while rounds < opts.max_rounds {
            rounds += 1;
            let before = total;
            for i in 0..n {
                for a in 0..kk {
                    for b in 0..kk {
                        if a == b || split[i][a] == 0 {
                            continue;
                        }
                        let mut best_gain = 1e-9 * (1.0 + total);
                        let mut best_move = None;
                        for s in move_sizes(split[i][a]) {
                            let mut cand = split.clone();
                            cand[i][a] -= s;
                            cand[i][b] += s;
                            let value = if quick {
                                cache.quick_total(&cand)
                            } else {
                                cache.total(&cand)
                            };
                            let gain = value - total;
                            if gain > best_gain {
                                best_gain = gain;
                                best_move = Some(cand);
                            }
                        }
                        if let Some(cand) = best_move {
                            let value = cache.total(&cand);
                            if value > total + 1e-9 * (1.0 + total) {
                                total = value;
                                split = cand;
                                cache.remember(&split);
                            }
                        }
                    }
                }
            }
            if total - before < opts.tolerance {
                certified = true;
                break;
            }
        }
    }

    let offload = (0..kk)
        .map(|k| {
            let col: Vec<u32> = split.iter().map(|row| row[k]).collect();
            cache.solution(k, &col).offload.clone()
        })
        .collect();
    ComponentSolution {
        split,
        offload,
        certified,
        rounds,
    }
}

/// Candidate transfer sizes: every size for small slices, otherwise powers
/// of two plus the whole slice.
fn move_sizes(available: u32) -> Vec<u32> {
    if available <= 8 {
        return (1..=available).collect();
    }
    let mut out = Vec::new();
    let mut s = 1;
    while s < available {
        out.push(s);
        s *= 2;
    }
    out.push(available);
    out
}

fn joint_split_count(budgets: &[u32], kk: usize) -> u128 {
    budgets
        .iter()
        .fold(1u128, |acc, &b| acc.saturating_mul(compositions(b as u128, kk as u128)))
}

/// Number of ways to write `b` as an ordered sum of `k` non-negative parts.
fn compositions(b: u128, k: u128) -> u128 {
    // C(b + k - 1, k - 1)
    let mut c: u128 = 1;
    for j in 1..k {
        c = c.saturating_mul(b + j) / j;
    }
    c
}

/// Visits every joint split with `sum_k e_ik = budget_i`.
pub(crate) fn enumerate_joint<F: FnMut(&[Vec<u32>])>(
    budgets: &[u32],
    kk: usize,
    i: usize,
    current: &mut Vec<Vec<u32>>,
    visit: &mut F,
) {
    if i == budgets.len() {
        visit(current);
        return;
    }
    let mut row = vec![0; kk];
    enumerate_row(budgets[i], 0, &mut row, &mut |r| {
        current[i] = r.to_vec();
        enumerate_joint(budgets, kk, i + 1, current, visit);
    });
}

pub(crate) fn enumerate_row<F: FnMut(&[u32])>(left: u32, k: usize, row: &mut Vec<u32>, visit: &mut F) {
    if k + 1 == row.len() {
        row[k] = left;
        visit(row);
        return;
    }
    for e in 0..=left {
        row[k] = e;
        enumerate_row(left - e, k + 1, row, visit);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreOptions {
    /// Largest coalition size enumerated.
    pub n_max: usize,
    /// Offload-fraction grid used for deviations.
    pub alpha_step: f64,
}

impl Default for CoreOptions {
    fn default() -> Self {
        Self {
            n_max: 4,
            alpha_step: 0.05,
        }
    }
}

/// A coalition whose members, forwarding only among themselves, can each
/// earn strictly more from their own admitted load than under the agreement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deviation {
    pub members: Vec<usize>,
    /// Rewards under the agreement.
    pub current: Vec<f64>,
    /// Rewards the coalition can secure alone.
    pub deviation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoreReport {
    pub deviations: Vec<Deviation>,
    /// True when every coalition was examined.
    pub complete: bool,
    /// Largest coalition size examined.
    pub max_coalition: usize,
}

impl CoreReport {
    pub fn in_core(&self) -> bool {
        self.deviations.is_empty()
    }
}

/// Searches for profitable deviations from `agreement` among coalitions of at
/// most `opts.n_max` nodes. A coalition re-splits its members' budgets and
/// forwards on the `opts.alpha_step` grid among themselves; it deviates if
/// every member's own reward strictly rises. Rewards are never transferred
/// between nodes.
pub fn check_core(
    net: &Network,
    arrivals: &[Vec<f64>],
    budgets: &[u32],
    agreement: &SlicingAgreement,
    opts: &CoreOptions,
) -> CoreReport {
    let n = net.node_count();
    let limit = opts.n_max.min(n);
    let mut deviations = Vec::new();
    for size in 1..=limit {
        for members in subsets(n, size) {
            let sub = net.subnetwork(&members);
            let sub_arrivals: Vec<Vec<f64>> = members.iter().map(|&g| arrivals[g].clone()).collect();
            let sub_budgets: Vec<u32> = members.iter().map(|&g| budgets[g]).collect();
            let current: Vec<f64> = members.iter().map(|&g| agreement.rewards[g]).collect();
            if let Some(deviation) =
                oracle::improving_agreement(&sub, &sub_arrivals, &sub_budgets, &current, opts.alpha_step)
            {
                deviations.push(Deviation {
                    members,
                    current,
                    deviation,
                });
            }
        }
    }
    CoreReport {
        deviations,
        complete: limit == n,
        max_coalition: limit,
    }
}

fn subsets(n: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(size);
    fn rec(start: usize, n: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for j in start..n {
            cur.push(j);
            rec(j + 1, n, size, cur, out);
            cur.pop();
        }
    }
    rec(0, n, size, &mut cur, &mut out);
    out
}

/// Convenience for callers holding an energy distribution: per-service
/// slices of `net` under `energy`.
pub fn slices(net: &Network, energy: &EnergyDistribution, arrivals: &[Vec<f64>]) -> Vec<SliceInstance> {
    (0..net.service_count())
        .map(|k| {
            let col: Vec<f64> = arrivals.iter().map(|row| row[k]).collect();
            SliceInstance::from_network(net, k, &energy.slice(k), &col)
        })
        .collect()
}
