//! The representative set and its audited refinement loop.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ClusterGraph;
use crate::ensemble::{self, EnsembleError, RealizationEnsemble, VarianceDelta};
use crate::spatialquery::VoiSelection;

#[derive(Debug, Error)]
pub enum RepresentativeError {
    #[error("realization {0} is already a member")]
    AlreadyMember(usize),
    #[error("realization {0} is not a node of the graph")]
    UnknownNode(usize),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

pub type Result<T, E = RepresentativeError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Accept,
    Reject,
}

/// Evidence shown for a candidate before a decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub candidate: usize,
    pub outlier_score: f64,
    pub delta: VarianceDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub candidate: usize,
    pub action: Action,
    pub aggregates: ensemble::DeltaAggregates,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeSet {
    initial: Vec<usize>,
    members: Vec<usize>,
    decisions: Vec<Decision>,
}

impl RepresentativeSet {
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn initial(&self) -> &[usize] {
        &self.initial
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }

    pub fn contains(&self, node: usize) -> bool {
        self.members.contains(&node)
    }

    /// Rebuilds a set by replaying `decisions` over `initial`.
    pub fn replay(initial: &[usize], decisions: &[Decision]) -> Result<Self> {
        let mut set = Self {
            initial: initial.to_vec(),
            members: initial.to_vec(),
            decisions: Vec::new(),
        };
        for d in decisions {
            set.record(d.clone())?;
        }
        Ok(set)
    }

    fn record(&mut self, decision: Decision) -> Result<()> {
        if self.contains(decision.candidate) {
            return Err(RepresentativeError::AlreadyMember(decision.candidate));
        }
        if decision.action == Action::Accept {
            self.members.push(decision.candidate);
        }
        self.decisions.push(decision);
        Ok(())
    }
}

/// Center nodes in cluster-id order.
pub fn initial_set(graph: &ClusterGraph) -> RepresentativeSet {
    RepresentativeSet {
        initial: graph.centers.clone(),
        members: graph.centers.clone(),
        decisions: Vec::new(),
    }
}

/// VOI variance of the members versus members plus `candidate`. Pure.
pub fn evaluate_candidate(
    set: &RepresentativeSet,
    graph: &ClusterGraph,
    ens: &RealizationEnsemble,
    props: &[String],
    voi: &VoiSelection,
    candidate: usize,
) -> Result<CandidateReport> {
    if candidate >= graph.labels.len() {
        return Err(RepresentativeError::UnknownNode(candidate));
    }
    if set.contains(candidate) {
        return Err(RepresentativeError::AlreadyMember(candidate));
    }
    let before = ensemble::variance_over_voi(ens, props, &set.members, voi)?;
    let mut with = set.members.clone();
    with.push(candidate);
    let after = ensemble::variance_over_voi(ens, props, &with, voi)?;
    Ok(CandidateReport {
        candidate,
        outlier_score: graph.outlier_scores[candidate],
        delta: ensemble::variance_delta(&before, &after)?,
    })
}

fn decide(
    set: &RepresentativeSet,
    candidate: usize,
    report: &CandidateReport,
    action: Action,
) -> Result<RepresentativeSet> {
    let mut next = set.clone();
    next.record(Decision {
        candidate,
        action,
        aggregates: report.delta.aggregates,
        timestamp: Utc::now(),
    })?;
    Ok(next)
}

pub fn accept(
    set: &RepresentativeSet,
    candidate: usize,
    report: &CandidateReport,
) -> Result<RepresentativeSet> {
    decide(set, candidate, report, Action::Accept)
}

pub fn reject(
    set: &RepresentativeSet,
    candidate: usize,
    report: &CandidateReport,
) -> Result<RepresentativeSet> {
    decide(set, candidate, report, Action::Reject)
}

/// Non-members by outlier score, highest first; ties by node index.
pub fn rank_outliers(graph: &ClusterGraph, set: &RepresentativeSet) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = graph
        .outlier_scores
        .iter()
        .copied()
        .enumerate()
        .filter(|(i, _)| !set.contains(*i))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}
