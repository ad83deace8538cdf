use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::types::{EpisodeTrace, Outcome, START};

pub const PRUNED_SINK: &str = "PRUNED";
pub const STEP_LIMIT_SINK: &str = "STEP_LIMIT";
pub const AGENT_ERROR_SINK: &str = "AGENT_ERROR";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flow {
    pub column: usize,
    pub source: String,
    pub target: String,
    pub count: u64,
}

/// Node-to-node flows per step column. Dispatch edges out of the start
/// state are left out; episodes that did not end through `END` flow into a
/// sink named after their outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SankeyFlows {
    pub traces: usize,
    pub flows: Vec<Flow>,
}

pub fn export_sankey(traces: &[EpisodeTrace]) -> Result<SankeyFlows, BenchError> {
    if traces.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    let mut counts: BTreeMap<(usize, String, String), u64> = BTreeMap::new();
    for t in traces {
        let mut hops: Vec<(String, String)> = t
            .edges
            .iter()
            .filter(|e| e.from.name() != START)
            .map(|e| (e.from.name().to_string(), e.to.name().to_string()))
            .collect();
        let sink = match t.outcome {
            Outcome::Success => None,
            Outcome::Pruned => Some(PRUNED_SINK),
            Outcome::StepLimit => Some(STEP_LIMIT_SINK),
            Outcome::AgentError => Some(AGENT_ERROR_SINK),
        };
        if let Some(sink) = sink {
            let last = t.executed_roles.last().map_or(START, String::as_str);
            hops.push((last.to_string(), sink.to_string()));
        }
        for (column, (source, target)) in hops.into_iter().enumerate() {
            *counts.entry((column, source, target)).or_default() += 1;
        }
    }
    let flows = counts
        .into_iter()
        .map(|((column, source, target), count)| Flow {
            column,
            source,
            target,
            count,
        })
        .collect();
    Ok(SankeyFlows {
        traces: traces.len(),
        flows,
    })
}

impl SankeyFlows {
    pub fn columns(&self) -> usize {
        self.flows.iter().map(|f| f.column + 1).max().unwrap_or(0)
    }

    pub fn column_total(&self, column: usize) -> u64 {
        self.flows.iter().filter(|f| f.column == column).map(|f| f.count).sum()
    }

    pub fn to_csv<W: Write>(&self, out: W) -> Result<(), BenchError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["column", "source", "target", "count"])?;
        for f in &self.flows {
            w.write_record([f.column.to_string(), f.source.clone(), f.target.clone(), f.count.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
