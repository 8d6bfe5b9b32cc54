//! Vital occurrence statistics over a corpus of graphs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::VitalKind;
use crate::graph::{GraphKind, TreatmentGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNeed {
    pub graph_id: String,
    pub kind: GraphKind,
    pub needs_vitals: bool,
}

/// Number of graphs of one kind and how many of them need vitals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindTally {
    pub total: usize,
    pub needing_vitals: usize,
}

impl KindTally {
    /// `None` when there are no graphs of this kind.
    pub fn ratio(&self) -> Option<f64> {
        (self.total > 0).then(|| self.needing_vitals as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    /// Requirement occurrences per kind; every catalog kind is present.
    pub counts: BTreeMap<VitalKind, usize>,
    pub graphs: Vec<GraphNeed>,
    pub treatment_paths: KindTally,
    pub standard_procedures: KindTally,
}

impl StatsReport {
    pub fn treatment_path_ratio(&self) -> Option<f64> {
        self.treatment_paths.ratio()
    }

    pub fn standard_procedure_ratio(&self) -> Option<f64> {
        self.standard_procedures.ratio()
    }

    /// Counts with zero entries dropped, ordered by descending count then kind.
    pub fn ranked_counts(&self) -> Vec<(VitalKind, usize)> {
        let mut ranked: Vec<_> = self
            .counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(&k, &c)| (k, c))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
    }
}

pub fn vital_occurrence_stats<'a, I>(corpus: I) -> StatsReport
where
    I: IntoIterator<Item = &'a TreatmentGraph>,
{
    let mut counts: BTreeMap<VitalKind, usize> =
        VitalKind::ALL.iter().map(|&k| (k, 0)).collect();
    let mut graphs = Vec::new();
    let mut treatment_paths = KindTally::default();
    let mut standard_procedures = KindTally::default();

    for graph in corpus {
        let mut needs_vitals = false;
        for node in graph.nodes() {
            needs_vitals |= !node.requirements.is_empty();
            for req in &node.requirements {
                *counts.entry(req.kind).or_default() += 1;
            }
        }
        let tally = match graph.kind() {
            GraphKind::TreatmentPath => &mut treatment_paths,
            GraphKind::StandardProcedure => &mut standard_procedures,
        };
        tally.total += 1;
        tally.needing_vitals += usize::from(needs_vitals);
        graphs.push(GraphNeed {
            graph_id: graph.id().to_string(),
            kind: graph.kind(),
            needs_vitals,
        });
    }

    StatsReport { counts, graphs, treatment_paths, standard_procedures }
}
