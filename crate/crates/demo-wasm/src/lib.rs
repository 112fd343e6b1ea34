//! Browser demo. Each export takes plain text or numbers and returns JSON.

use serde_json::json;
use wasm_bindgen::prelude::*;

use fogslice_core::engine::{run_episode, Config, PolicyKind};
use fogslice_core::game::{solve_social_welfare, GameInstance, WelfareOptions};
use fogslice_core::queueing::{optimal_local_fraction, response_time_local};

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Share of its own traffic a node keeps locally and the resulting
/// mean response time.
#[wasm_bindgen]
pub fn local_fraction(
    energy: f64,
    unit_energy: f64,
    unit_rate: f64,
    lambda: f64,
    deadline: f64,
) -> Result<String, JsError> {
    let alpha = optimal_local_fraction(energy, unit_energy, unit_rate, lambda, deadline).map_err(err)?;
    let rate = unit_rate * energy / unit_energy;
    let response = if alpha > 0.0 {
        response_time_local(alpha, lambda, rate).ok()
    } else {
        None
    };
    Ok(json!({ "alpha": alpha, "admitted": alpha * lambda, "response_time": response }).to_string())
}

/// Solves one slot's slicing game given in the line-based instance format.
#[wasm_bindgen]
pub fn solve_instance(text: &str) -> Result<String, JsError> {
    let inst = GameInstance::from_text(text).map_err(err)?;
    let sol =
        solve_social_welfare(&inst.network, &inst.arrivals, &inst.budgets, &WelfareOptions::default()).map_err(err)?;
    Ok(json!({
        "welfare": sol.welfare,
        "certified": sol.certified,
        "rounds": sol.rounds,
        "energy": sol.agreement.energy.0,
        "offload": sol.agreement.offload.iter().map(|m| &m.alpha).collect::<Vec<_>>(),
        "rewards": sol.agreement.rewards,
    })
    .to_string())
}

/// Runs one episode from a TOML config. File-based topologies are not
/// available in the browser.
#[wasm_bindgen]
pub fn simulate(config_toml: &str, policy: &str, seed: u64) -> Result<String, JsError> {
    let cfg = Config::from_toml_str(config_toml).map_err(err)?;
    let policy: PolicyKind = if policy.trim().is_empty() {
        cfg.policy
    } else {
        policy.parse().map_err(err)?
    };
    let report = run_episode(&cfg, policy, seed).map_err(err)?;
    let mut per_slot = vec![0.0; report.aggregates.slots];
    for r in &report.records {
        per_slot[r.slot] += r.offloaded.iter().sum::<f64>();
    }
    Ok(json!({
        "policy": policy.to_string(),
        "aggregates": report.aggregates,
        "offloaded_per_slot": per_slot,
        "positions": report.topology.positions,
        "links": report.topology.links,
    })
    .to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const INSTANCE: &str = include_str!("../../../configs/three_node.instance");
    const SMALL: &str = include_str!("../../../configs/small.toml");

    fn parse(s: &str) -> serde_json::Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn local_fraction_reports_deadline_response() {
        let v = parse(&local_fraction(4.0, 1.0, 10.0, 60.0, 0.05).unwrap());
        let alpha = v["alpha"].as_f64().unwrap();
        assert!(alpha > 0.0 && alpha < 1.0);
        assert!((v["response_time"].as_f64().unwrap() - 0.05).abs() < 1e-9);
    }

    #[test]
    fn instance_solution_has_one_reward_per_node() {
        let v = parse(&solve_instance(INSTANCE).unwrap());
        assert_eq!(v["rewards"].as_array().unwrap().len(), 3);
        assert!(v["welfare"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn episode_curve_matches_total() {
        let v = parse(&simulate(SMALL, "radius_coop", 3).unwrap());
        let curve: f64 = v["offloaded_per_slot"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .sum();
        let total = v["aggregates"]["total_offloaded"].as_f64().unwrap();
        assert!((curve - total).abs() <= 1e-9 * total.max(1.0));
    }
}
