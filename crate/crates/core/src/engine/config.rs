//! Experiment configuration, read from TOML.
//!
//! ```toml
//! horizon = 50
//! seed = 0
//! gamma = 0.9
//! initial_battery = 0
//! policy = "radius_coop"
//!
//! [[services]]
//! name = "image"
//! deadline = 0.05
//! reward = 1.0
//! unit_rate = 10.0
//!
//! [nodes]
//! count = 20
//! max_units = 100
//!
//! [topology]
//! source = "synthetic"
//! radius = 500.0
//! rtt = 0.02
//!
//! [harvest]
//! max = 30
//!
//! [[arrivals]]
//! low = 50.0
//! high = 150.0
//! ```
//!
//! Every table and most keys have defaults; see the field documentation.
//! Sweep axes address keys by dotted path, e.g. `topology.rtt` or
//! `arrivals.0.high`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::belief::{AgentConfig, TypeSpace};
use crate::env::{EnvModel, MarkovChain, ObservationModel};
use crate::game::WelfareOptions;
use crate::model::{Activation, FogNodeSpec, Network, ServiceTypeSpec};
use crate::topology::{
    build_neighbors, load_positions_file, synth_topology, CoordMode, DensityProfile, NeighborRule, RttModel, Topology,
};

use super::EngineError;

/// Which cooperation structure and budget rule the nodes follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicyKind {
    /// No forwarding; every node spends what it can use.
    NoCoop,
    /// Forward to the `nearest_k` closest nodes.
    NearestNeighbor,
    /// Forward to every node within `radius`.
    RadiusCoop,
    /// Radius cooperation with budgets maximizing the expected slot reward.
    Myopic,
    /// Radius cooperation with budgets from belief lookahead of this depth.
    Bpomdp(usize),
}

impl PolicyKind {
    pub fn uses_agents(self) -> bool {
        matches!(self, PolicyKind::Myopic | PolicyKind::Bpomdp(_))
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::NoCoop => f.write_str("no_coop"),
            PolicyKind::NearestNeighbor => f.write_str("nearest_neighbor"),
            PolicyKind::RadiusCoop => f.write_str("radius_coop"),
            PolicyKind::Myopic => f.write_str("myopic"),
            PolicyKind::Bpomdp(d) => write!(f, "bpomdp:{d}"),
        }
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    /// `no_coop`, `nearest_neighbor`, `radius_coop`, `myopic`, `bpomdp` or
    /// `bpomdp:DEPTH` (default depth 2).
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "no_coop" => PolicyKind::NoCoop,
            "nearest_neighbor" => PolicyKind::NearestNeighbor,
            "radius_coop" => PolicyKind::RadiusCoop,
            "myopic" => PolicyKind::Myopic,
            "bpomdp" => PolicyKind::Bpomdp(2),
            other => match other.strip_prefix("bpomdp:").map(str::parse) {
                Some(Ok(d)) => PolicyKind::Bpomdp(d),
                _ => return Err(format!("unknown policy {other:?}")),
            },
        })
    }
}

impl TryFrom<String> for PolicyKind {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<PolicyKind> for String {
    fn from(p: PolicyKind) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub name: String,
    /// Seconds.
    pub deadline: f64,
    #[serde(default = "one")]
    pub reward: f64,
    /// Requests/s per activated unit.
    pub unit_rate: f64,
}

fn one() -> f64 {
    1.0
}

fn default_services() -> Vec<ServiceConfig> {
    vec![
        ServiceConfig {
            name: "image".into(),
            deadline: 0.05,
            reward: 1.0,
            unit_rate: 10.0,
        },
        ServiceConfig {
            name: "voice".into(),
            deadline: 0.1,
            reward: 1.0,
            unit_rate: 40.0,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodesConfig {
    pub count: usize,
    pub max_units: u32,
    pub unit_energy: u32,
    pub battery_cap: u32,
    pub rate_multiplier: f64,
}

impl Default for NodesConfig {
    fn default() -> Self {
        Self {
            count: 20,
            max_units: 100,
            unit_energy: 1,
            battery_cap: 200,
            rate_multiplier: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologySource {
    #[default]
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coords {
    #[default]
    Meters,
    Lonlat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub source: TopologySource,
    /// CSV of `id,x,y` rows, relative to the config file.
    pub path: Option<PathBuf>,
    pub coords: Coords,
    /// Layout seed for synthetic placement; the episode seed when absent.
    pub seed: Option<u64>,
    pub field_radius: f64,
    pub ring_density: Vec<f64>,
    /// Cooperation radius, meters.
    pub radius: f64,
    /// Neighbours per node under `nearest_neighbor`.
    pub nearest_k: usize,
    /// RTT between neighbours, seconds.
    pub rtt: f64,
    /// Extra RTT per meter of distance.
    pub rtt_per_meter: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        let d = DensityProfile::default();
        Self {
            source: TopologySource::Synthetic,
            path: None,
            coords: Coords::Meters,
            seed: None,
            field_radius: d.field_radius,
            ring_density: d.ring_density,
            radius: 500.0,
            nearest_k: 1,
            rtt: 0.020,
            rtt_per_meter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub levels: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
}

impl ChainConfig {
    fn build(&self) -> Result<MarkovChain, EngineError> {
        MarkovChain::new(self.levels.clone(), self.transition.clone()).map_err(|e| EngineError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarvestConfig {
    /// Uniform harvest over `levels` whole-unit values in `[0, max]`.
    pub max: u32,
    pub levels: usize,
    /// Share of nodes, spread evenly by index, that use `low_max` instead.
    pub low_fraction: f64,
    pub low_max: u32,
    /// Explicit chain for every node; overrides the uniform settings.
    pub chain: Option<ChainConfig>,
}

impl Default for HarvestConfig {
    fn default() -> Self {
        Self {
            max: 30,
            levels: 4,
            low_fraction: 0.0,
            low_max: 0,
            chain: None,
        }
    }
}

impl HarvestConfig {
    fn is_low(&self, i: usize) -> bool {
        let f = self.low_fraction.clamp(0.0, 1.0);
        ((i + 1) as f64 * f).floor() > (i as f64 * f).floor()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrivalConfig {
    pub low: f64,
    pub high: f64,
    pub levels: usize,
    pub persistence: f64,
    /// Explicit chain; overrides the quantized settings.
    pub chain: Option<ChainConfig>,
}

impl Default for ArrivalConfig {
    fn default() -> Self {
        Self {
            low: 50.0,
            high: 150.0,
            levels: 5,
            persistence: 0.8,
            chain: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSettings {
    pub action_levels: usize,
    /// Units of surplus or deficit separating the three type levels.
    pub type_step: u32,
    pub prior: f64,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self {
            action_levels: 6,
            type_step: 10,
            prior: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_rounds: usize,
    pub tolerance: f64,
    pub exhaustive_limit: usize,
    pub coordinate_limit: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let w = WelfareOptions::default();
        Self {
            max_rounds: w.max_rounds,
            tolerance: w.tolerance,
            exhaustive_limit: w.exhaustive_limit,
            coordinate_limit: w.coordinate_limit,
        }
    }
}

impl SolverSettings {
    pub fn options(&self) -> WelfareOptions {
        WelfareOptions {
            max_rounds: self.max_rounds,
            tolerance: self.tolerance,
            exhaustive_limit: self.exhaustive_limit,
            coordinate_limit: self.coordinate_limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub horizon: usize,
    /// Base seed; `run --seed` overrides it, sweeps add the replication index.
    pub seed: u64,
    pub gamma: f64,
    pub initial_battery: u32,
    pub policy: PolicyKind,
    pub activation: Activation,
    /// Pin every arrival chain at its highest level.
    pub backlogged: bool,
    pub services: Vec<ServiceConfig>,
    pub nodes: NodesConfig,
    pub topology: TopologyConfig,
    pub harvest: HarvestConfig,
    /// One entry per service; missing trailing entries use the defaults.
    pub arrivals: Vec<ArrivalConfig>,
    pub agent: AgentSettings,
    pub solver: SolverSettings,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            horizon: 50,
            seed: 0,
            gamma: 0.9,
            initial_battery: 0,
            policy: PolicyKind::RadiusCoop,
            activation: Activation::Whole,
            backlogged: false,
            services: default_services(),
            nodes: NodesConfig::default(),
            topology: TopologyConfig::default(),
            harvest: HarvestConfig::default(),
            arrivals: vec![ArrivalConfig::default(); 2],
            agent: AgentSettings::default(),
            solver: SolverSettings::default(),
            base_dir: PathBuf::new(),
        }
    }
}

fn config_err(e: impl fmt::Display) -> EngineError {
    EngineError::Config(e.to_string())
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, EngineError> {
        let value: toml::Table = toml::from_str(text).map_err(config_err)?;
        Self::from_table(value)
    }

    pub fn from_table(table: toml::Table) -> Result<Self, EngineError> {
        let explicit_arrivals = table.contains_key("arrivals");
        let mut cfg: Config = toml::Value::Table(table).try_into().map_err(config_err)?;
        if !explicit_arrivals {
            cfg.arrivals.clear();
        }
        if cfg.arrivals.len() < cfg.services.len() {
            cfg.arrivals.resize(cfg.services.len(), ArrivalConfig::default());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| EngineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// The configuration as a TOML table with every default filled in.
    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Config(m));
        if self.services.is_empty() {
            return bad("at least one service is required".into());
        }
        if self.nodes.count == 0 {
            return bad("nodes.count must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if self.arrivals.len() > self.services.len() {
            return bad("more arrival entries than services".into());
        }
        if self.initial_battery > self.nodes.battery_cap {
            return bad("initial_battery exceeds battery_cap".into());
        }
        if !(self.topology.radius >= 0.0) || !(self.topology.rtt >= 0.0) || !(self.topology.rtt_per_meter >= 0.0) {
            return bad("topology radius and rtt must be non-negative".into());
        }
        if self.topology.source == TopologySource::Csv && self.topology.path.is_none() {
            return bad("topology.source = \"csv\" needs topology.path".into());
        }
        if !(self.harvest.low_fraction >= 0.0 && self.harvest.low_fraction <= 1.0) {
            return bad("harvest.low_fraction outside [0, 1]".into());
        }
        for a in &self.arrivals {
            if a.chain.is_none() && !(a.low >= 0.0 && a.high >= a.low && (0.0..=1.0).contains(&a.persistence)) {
                return bad("arrivals need 0 <= low <= high and persistence in [0, 1]".into());
            }
        }
        if self.agent.prior <= 0.0 || self.agent.type_step > self.nodes.max_units {
            return bad("agent.prior must be positive and agent.type_step at most nodes.max_units".into());
        }
        self.network_template()?.validate().map_err(config_err)?;
        self.env_model()?.validate().map_err(config_err)?;
        Ok(())
    }

    /// Services and nodes, without links.
    pub fn network_template(&self) -> Result<Network, EngineError> {
        let services = self
            .services
            .iter()
            .map(|s| ServiceTypeSpec::new(s.name.clone(), s.deadline, s.reward, s.unit_rate))
            .collect();
        let mut node = FogNodeSpec::new(self.nodes.max_units, self.nodes.unit_energy, self.nodes.battery_cap);
        node.rate_multiplier = self.nodes.rate_multiplier;
        let net = Network::isolated(services, vec![node; self.nodes.count]).with_activation(self.activation);
        net.validate().map_err(config_err)?;
        Ok(net)
    }

    pub fn env_model(&self) -> Result<EnvModel, EngineError> {
        let n = self.nodes.count;
        let harvest = (0..n)
            .map(|i| match &self.harvest.chain {
                Some(c) => c.build(),
                None => {
                    let max = if self.harvest.is_low(i) {
                        self.harvest.low_max
                    } else {
                        self.harvest.max
                    };
                    Ok(MarkovChain::uniform_harvest(max, self.harvest.levels))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let per_service = (0..self.services.len())
            .map(|k| {
                let a = self.arrivals.get(k).cloned().unwrap_or_default();
                let chain = match &a.chain {
                    Some(c) => c.build()?,
                    None => MarkovChain::quantized_arrivals(a.low, a.high, a.levels, a.persistence),
                };
                Ok(if self.backlogged {
                    MarkovChain::constant(chain.levels[chain.max_level_index()])
                } else {
                    chain
                })
            })
            .collect::<Result<Vec<_>, EngineError>>()?;
        Ok(EnvModel {
            harvest,
            arrivals: vec![per_service; n],
            battery_cap: vec![self.nodes.battery_cap; n],
            observation: ObservationModel::ExactLocal,
        })
    }

    pub fn positions(&self, episode_seed: u64) -> Result<Vec<[f64; 2]>, EngineError> {
        let t = &self.topology;
        let pos = match t.source {
            TopologySource::Synthetic => {
                let profile = DensityProfile {
                    field_radius: t.field_radius,
                    ring_density: t.ring_density.clone(),
                };
                synth_topology(self.nodes.count, &profile, t.seed.unwrap_or(episode_seed))
            }
            TopologySource::Csv => {
                let rel = t.path.as_ref().expect("validated");
                let path = self.base_dir.join(rel);
                let mode = match t.coords {
                    Coords::Meters => CoordMode::Meters,
                    Coords::Lonlat => CoordMode::LonLat { ref_lat: None },
                };
                let rows = load_positions_file(&path, mode).map_err(config_err)?;
                if rows.len() != self.nodes.count {
                    return Err(EngineError::Config(format!(
                        "{} lists {} positions but nodes.count is {}",
                        path.display(),
                        rows.len(),
                        self.nodes.count
                    )));
                }
                rows.into_iter().map(|p| p.xy).collect()
            }
        };
        Ok(pos)
    }

    pub fn neighbor_rule(&self, policy: PolicyKind) -> NeighborRule {
        match policy {
            PolicyKind::NoCoop => NeighborRule::None,
            PolicyKind::NearestNeighbor => NeighborRule::KNearest {
                k: self.topology.nearest_k,
            },
            _ => NeighborRule::Radius {
                meters: self.topology.radius,
            },
        }
    }

    pub fn rtt_model(&self) -> RttModel {
        if self.topology.rtt_per_meter > 0.0 {
            RttModel::Linear {
                base: self.topology.rtt,
                per_meter: self.topology.rtt_per_meter,
            }
        } else {
            RttModel::Constant {
                seconds: self.topology.rtt,
            }
        }
    }

    pub fn topology(&self, policy: PolicyKind, episode_seed: u64) -> Result<Topology, EngineError> {
        Ok(build_neighbors(
            &self.positions(episode_seed)?,
            self.neighbor_rule(policy),
            self.rtt_model(),
        ))
    }

    pub fn agent_config(&self, depth: usize) -> AgentConfig {
        AgentConfig {
            depth,
            gamma: self.gamma,
            action_levels: self.agent.action_levels,
            types: TypeSpace::three_level(self.agent.type_step),
            prior: self.agent.prior,
        }
    }
}

/// Sets the value at a dotted path (`table.key`, `list.0.key`). The path must
/// already exist in `table`.
pub fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), EngineError> {
    let missing = || EngineError::Config(format!("unknown config key {path:?}"));
    let parts: Vec<&str> = path.split('.').collect();
    let (last, init) = parts.split_last().ok_or_else(missing)?;
    let mut cur: &mut toml::Value = table.get_mut(parts[0]).ok_or_else(missing)?;
    if init.is_empty() {
        *cur = value;
        return Ok(());
    }
    for part in &init[1..] {
        cur = step(cur, part).ok_or_else(missing)?;
    }
    let slot = step(cur, last).ok_or_else(missing)?;
    *slot = value;
    Ok(())
}

fn step<'a>(v: &'a mut toml::Value, part: &str) -> Option<&'a mut toml::Value> {
    match v {
        toml::Value::Table(t) => t.get_mut(part),
        toml::Value::Array(a) => part.parse::<usize>().ok().and_then(|i| a.get_mut(i)),
        _ => None,
    }
}

/// Parses one sweep value: a TOML literal if it is one, else a bare string.
pub fn parse_value(text: &str) -> toml::Value {
    let text = text.trim();
    match format!("v = {text}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}
