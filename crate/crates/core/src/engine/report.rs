//! Report files: `slots.csv` (one row per node per slot) and `summary.json`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Aggregates, Config, EngineError, ExperimentReport, PolicyKind, SlotRecord, TopologyDump};
use crate::belief::BeliefState;

pub const SLOTS_FILE: &str = "slots.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Everything in a report except the per-slot records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub config: Config,
    pub policy: PolicyKind,
    pub seed: u64,
    pub topology: TopologyDump,
    pub aggregates: Aggregates,
    pub beliefs: Vec<BeliefState>,
}

fn header(services: &[String]) -> Vec<String> {
    let mut h: Vec<String> = ["slot", "node", "harvested", "battery", "budget", "consumed"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for prefix in ["lambda", "energy", "offloaded"] {
        h.extend(services.iter().map(|s| format!("{prefix}_{s}")));
    }
    h.push("reward".into());
    h.push("certified".into());
    h
}

/// Writes records as CSV. Columns: slot, node, harvested, battery, budget,
/// consumed, then `lambda_*`, `energy_*` and `offloaded_*` per service in
/// config order, then reward and certified.
pub fn write_records<W: Write>(out: W, services: &[String], records: &[SlotRecord]) -> Result<(), EngineError> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| EngineError::Runtime(e.to_string());
    w.write_record(header(services)).map_err(csv_err)?;
    for r in records {
        let mut row = vec![
            r.slot.to_string(),
            r.node.to_string(),
            r.harvested.to_string(),
            r.battery.to_string(),
            r.budget.to_string(),
            r.consumed.to_string(),
        ];
        row.extend(r.arrivals.iter().map(f64::to_string));
        row.extend(r.energy.iter().map(u32::to_string));
        row.extend(r.offloaded.iter().map(f64::to_string));
        row.push(r.reward.to_string());
        row.push(r.certified.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R, services: usize) -> Result<Vec<SlotRecord>, EngineError> {
    let mut rd = csv::Reader::from_reader(input);
    let bad = |msg: String| EngineError::Runtime(format!("{SLOTS_FILE}: {msg}"));
    let expected = 8 + 3 * services;
    let mut out = Vec::new();
    for (line, row) in rd.records().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        if row.len() != expected {
            return Err(bad(format!(
                "row {} has {} fields, expected {expected}",
                line + 2,
                row.len()
            )));
        }
        let field = |i: usize| &row[i];
        macro_rules! parse {
            ($i:expr) => {
                field($i)
                    .parse()
                    .map_err(|_| bad(format!("row {}: bad value {:?}", line + 2, field($i))))?
            };
        }
        let mut arrivals = Vec::with_capacity(services);
        let mut energy = Vec::with_capacity(services);
        let mut offloaded = Vec::with_capacity(services);
        for k in 0..services {
            arrivals.push(parse!(6 + k));
            energy.push(parse!(6 + services + k));
            offloaded.push(parse!(6 + 2 * services + k));
        }
        out.push(SlotRecord {
            slot: parse!(0),
            node: parse!(1),
            harvested: parse!(2),
            battery: parse!(3),
            budget: parse!(4),
            consumed: parse!(5),
            arrivals,
            energy,
            offloaded,
            reward: parse!(6 + 3 * services),
            certified: parse!(7 + 3 * services),
        });
    }
    Ok(out)
}

fn service_names(config: &Config) -> Vec<String> {
    config.services.iter().map(|s| s.name.clone()).collect()
}

/// Writes `slots.csv` and `summary.json` into `dir`, creating it.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<(), EngineError> {
    fs::create_dir_all(dir)?;
    let mut csv_bytes = Vec::new();
    write_records(&mut csv_bytes, &service_names(&report.config), &report.records)?;
    fs::write(dir.join(SLOTS_FILE), csv_bytes)?;
    let summary = ReportSummary {
        config: report.config.clone(),
        policy: report.policy,
        seed: report.seed,
        topology: report.topology.clone(),
        aggregates: report.aggregates.clone(),
        beliefs: report.beliefs.clone(),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| EngineError::Runtime(e.to_string()))?;
    fs::write(dir.join(SUMMARY_FILE), json + "\n")?;
    Ok(())
}

/// Reads a report back and checks its aggregates against the records.
pub fn load_report(dir: &Path) -> Result<ExperimentReport, EngineError> {
    let text = fs::read_to_string(dir.join(SUMMARY_FILE))?;
    let summary: ReportSummary =
        serde_json::from_str(&text).map_err(|e| EngineError::Runtime(format!("{SUMMARY_FILE}: {e}")))?;
    let file = fs::File::open(dir.join(SLOTS_FILE))?;
    let records = read_records(file, summary.config.services.len())?;
    let report = ExperimentReport {
        config: summary.config,
        policy: summary.policy,
        seed: summary.seed,
        topology: summary.topology,
        records,
        aggregates: summary.aggregates,
        beliefs: summary.beliefs,
    };
    if report.recomputed_aggregates() != report.aggregates {
        return Err(EngineError::Runtime(
            "aggregates in summary do not match the slot records".into(),
        ));
    }
    Ok(report)
}
