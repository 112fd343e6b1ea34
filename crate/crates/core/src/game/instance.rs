//! Line-oriented text format for slot-game instances.
//!
//! ```text
//! # comments and blank lines are ignored
//! activation whole
//! service image deadline=0.05 reward=1 unit_rate=10
//! node max_units=100 unit_energy=1 battery_cap=200 x=0 y=0 rate_multiplier=1 budget=6
//! link 0 1 rtt=0.02
//! load 0 0 lambda=100
//! ```
//!
//! Services and nodes are numbered in order of appearance. `link i j` makes
//! `j` a forwarding neighbour of `i` and sets the RTT both ways. There is one
//! `load` record per node per service; missing records mean zero arrivals.

use std::collections::HashMap;

use thiserror::Error;

use crate::model::{Activation, FogNodeSpec, ModelError, Network, ServiceTypeSpec};

#[derive(Debug, Error)]
pub enum InstanceParseError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("invalid instance: {0}")]
    Invalid(#[from] ModelError),
}

/// A network together with one slot's arrivals and energy budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct GameInstance {
    pub network: Network,
    /// `[node][service]` requests/s.
    pub arrivals: Vec<Vec<f64>>,
    pub budgets: Vec<u32>,
}

impl GameInstance {
    pub fn to_text(&self) -> String {
        let net = &self.network;
        let mut out = String::from("# fogslice game instance\n");
        let act = match net.activation {
            Activation::Whole => "whole",
            Activation::Continuous => "continuous",
        };
        out.push_str(&format!("activation {act}\n"));
        for s in &net.services {
            let name: String = s
                .name
                .chars()
                .map(|c| if c.is_whitespace() { '_' } else { c })
                .collect();
            out.push_str(&format!(
                "service {} deadline={} reward={} unit_rate={}\n",
                if name.is_empty() { "_" } else { &name },
                s.deadline,
                s.reward,
                s.unit_rate
            ));
        }
        for (node, budget) in net.nodes.iter().zip(&self.budgets) {
            out.push_str(&format!(
                "node max_units={} unit_energy={} battery_cap={} x={} y={} rate_multiplier={} budget={}\n",
                node.max_units,
                node.unit_energy,
                node.battery_cap,
                node.position[0],
                node.position[1],
                node.rate_multiplier,
                budget
            ));
        }
        for (i, list) in net.neighbors.iter().enumerate() {
            for &j in list {
                out.push_str(&format!("link {i} {j} rtt={}\n", net.rtt[i][j]));
            }
        }
        for (i, row) in self.arrivals.iter().enumerate() {
            for (k, lambda) in row.iter().enumerate() {
                out.push_str(&format!("load {i} {k} lambda={lambda}\n"));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, InstanceParseError> {
        let mut activation = Activation::Whole;
        let mut services = Vec::new();
        let mut nodes = Vec::new();
        let mut budgets = Vec::new();
        let mut links = Vec::new();
        let mut loads = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |msg: String| InstanceParseError::Syntax { line, msg };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut tokens = content.split_whitespace();
            let kind = tokens.next().unwrap_or_default();
            let mut positional = Vec::new();
            let mut keys = HashMap::new();
            for tok in tokens {
                match tok.split_once('=') {
                    Some((k, v)) => {
                        keys.insert(k, v);
                    }
                    None => positional.push(tok),
                }
            }
            let num = |key: &str| -> Result<f64, InstanceParseError> {
                let v = keys.get(key).ok_or_else(|| err(format!("missing {key}=")))?;
                v.parse::<f64>().map_err(|_| err(format!("{key}={v} is not a number")))
            };
            let int = |key: &str| -> Result<u32, InstanceParseError> {
                let v = keys.get(key).ok_or_else(|| err(format!("missing {key}=")))?;
                v.parse::<u32>()
                    .map_err(|_| err(format!("{key}={v} is not a non-negative integer")))
            };
            let index = |pos: usize| -> Result<usize, InstanceParseError> {
                let v = positional
                    .get(pos)
                    .ok_or_else(|| err(format!("missing index {}", pos + 1)))?;
                v.parse::<usize>().map_err(|_| err(format!("{v} is not an index")))
            };
            match kind {
                "activation" => {
                    activation = match positional.first().copied() {
                        Some("whole") => Activation::Whole,
                        Some("continuous") => Activation::Continuous,
                        other => return Err(err(format!("unknown activation {other:?}"))),
                    }
                }
                "service" => {
                    let name = positional.first().ok_or_else(|| err("missing service name".into()))?;
                    services.push(ServiceTypeSpec::new(
                        *name,
                        num("deadline")?,
                        num("reward")?,
                        num("unit_rate")?,
                    ));
                }
                "node" => {
                    let mut node = FogNodeSpec::new(int("max_units")?, int("unit_energy")?, int("battery_cap")?)
                        .at(num("x")?, num("y")?);
                    node.rate_multiplier = num("rate_multiplier")?;
                    nodes.push(node);
                    budgets.push(int("budget")?);
                }
                "link" => links.push((line, index(0)?, index(1)?, num("rtt")?)),
                "load" => loads.push((line, index(0)?, index(1)?, num("lambda")?)),
                other => return Err(err(format!("unknown record {other:?}"))),
            }
        }

        let mut network = Network::isolated(services, nodes);
        network.activation = activation;
        let n = network.node_count();
        let kk = network.service_count();
        let mut arrivals = vec![vec![0.0; kk]; n];
        for (line, i, j, rtt) in links {
            if i >= n || j >= n || i == j {
                return Err(InstanceParseError::Syntax {
                    line,
                    msg: format!("bad link {i} -> {j}"),
                });
            }
            if !network.neighbors[i].contains(&j) {
                network.neighbors[i].push(j);
            }
            network.rtt[i][j] = rtt;
            network.rtt[j][i] = rtt;
        }
        for list in &mut network.neighbors {
            list.sort_unstable();
        }
        for (line, i, k, lambda) in loads {
            if i >= n || k >= kk {
                return Err(InstanceParseError::Syntax {
                    line,
                    msg: format!("load for unknown node {i} or service {k}"),
                });
            }
            arrivals[i][k] = lambda;
        }
        network.validate()?;
        Ok(Self {
            network,
            arrivals,
            budgets,
        })
    }
}
