//! The behavior graph: behaviors as nodes, belief predicates as edges.

pub mod executor;
pub mod predicates;

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::pending_status_for;
use crate::types::{GeoSemanticBelief, LabelId, LabelRegistry, TaskKind};
pub use predicates::{
    evaluate_predicate, evidence, BeliefPredicate, Evidence, PredicateKind, Thresholds,
};

/// A node of the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BehaviorKind {
    GeometricCoverage,
    ActiveSearch { label: LabelId },
    Inspect { label: LabelId },
    ClimbStairs { label: LabelId },
}

impl BehaviorKind {
    pub fn label(&self) -> Option<LabelId> {
        match self {
            Self::GeometricCoverage => None,
            Self::ActiveSearch { label }
            | Self::Inspect { label }
            | Self::ClimbStairs { label } => Some(*label),
        }
    }

    /// Whether the node works on one engaged object.
    pub fn is_engaged(&self) -> bool {
        !matches!(self, Self::GeometricCoverage)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::GeometricCoverage => "geometric-coverage",
            Self::ActiveSearch { .. } => "active-search",
            Self::Inspect { .. } => "inspect",
            Self::ClimbStairs { .. } => "climb-stairs",
        }
    }
}

/// Trigger families, in decreasing priority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TriggerFamily {
    /// Search reached enough confidence to act.
    Confident,
    /// Search concluded the object is absent; the track is dismissed.
    Absent,
    /// Coverage found an uninspected track worth engaging.
    Detected,
    /// The task behavior finished.
    Completed,
    /// Inspection lost confidence in its target.
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: BehaviorKind,
    pub to: BehaviorKind,
    pub family: TriggerFamily,
    pub predicate: BeliefPredicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("node {0:?} is not reachable from geometric-coverage")]
    Unreachable(BehaviorKind),
    #[error("edge {0} references a node that is not in the graph")]
    DanglingEdge(usize),
    #[error("graph has no geometric-coverage node")]
    NoCoverage,
}

/// A transition taken by [`BehaviorGraph::transition`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: BehaviorKind,
    pub to: BehaviorKind,
    pub edge: usize,
    pub family: TriggerFamily,
    pub predicate: BeliefPredicate,
    pub target: u32,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BehaviorGraph {
    pub nodes: Vec<BehaviorKind>,
    pub edges: Vec<Edge>,
    pub thresholds: Thresholds,
    pub active: BehaviorKind,
    pub engaged: Option<u32>,
}

fn task_node(label: LabelId, task: TaskKind) -> BehaviorKind {
    match task {
        TaskKind::Inspect => BehaviorKind::Inspect { label },
        TaskKind::Ascend => BehaviorKind::ClimbStairs { label },
    }
}

fn pred(kind: PredicateKind, label: LabelId) -> BeliefPredicate {
    BeliefPredicate { kind, label }
}

impl BehaviorGraph {
    fn from_edges(edges: Vec<Edge>, thresholds: Thresholds) -> Self {
        let mut nodes = vec![BehaviorKind::GeometricCoverage];
        for e in &edges {
            for n in [e.from, e.to] {
                if !nodes.contains(&n) {
                    nodes.push(n);
                }
            }
        }
        Self {
            nodes,
            edges,
            thresholds,
            active: BehaviorKind::GeometricCoverage,
            engaged: None,
        }
    }

    /// Full graph: coverage, active search and task behaviors for every
    /// label that carries a task.
    pub fn sb2g<T>(labels: &LabelRegistry<T>, thresholds: Thresholds) -> Self {
        let mut edges = Vec::new();
        let cov = BehaviorKind::GeometricCoverage;
        for (i, spec) in labels.labels.iter().enumerate() {
            let Some(task) = spec.task else { continue };
            let l = LabelId(i as u16);
            let search = BehaviorKind::ActiveSearch { label: l };
            let act = task_node(l, task);
            edges.push(Edge {
                from: search,
                to: act,
                family: TriggerFamily::Confident,
                predicate: pred(PredicateKind::Actionable, l),
            });
            edges.push(Edge {
                from: search,
                to: cov,
                family: TriggerFamily::Absent,
                predicate: pred(PredicateKind::Absent, l),
            });
            edges.push(Edge {
                from: cov,
                to: search,
                family: TriggerFamily::Detected,
                predicate: pred(PredicateKind::Search, l),
            });
            edges.push(Edge {
                from: act,
                to: cov,
                family: TriggerFamily::Completed,
                predicate: pred(PredicateKind::TaskComplete, l),
            });
            edges.push(Edge {
                from: act,
                to: search,
                family: TriggerFamily::Abort,
                predicate: pred(PredicateKind::InspectAbort, l),
            });
        }
        Self::from_edges(edges, thresholds)
    }

    /// Baseline without active search: coverage hands over to the task
    /// behavior as soon as the belief is actionable.
    pub fn coverage_inspect<T>(labels: &LabelRegistry<T>, thresholds: Thresholds) -> Self {
        let mut edges = Vec::new();
        let cov = BehaviorKind::GeometricCoverage;
        for (i, spec) in labels.labels.iter().enumerate() {
            let Some(task) = spec.task else { continue };
            let l = LabelId(i as u16);
            let act = task_node(l, task);
            edges.push(Edge {
                from: cov,
                to: act,
                family: TriggerFamily::Detected,
                predicate: pred(PredicateKind::Actionable, l),
            });
            edges.push(Edge {
                from: act,
                to: cov,
                family: TriggerFamily::Completed,
                predicate: pred(PredicateKind::TaskComplete, l),
            });
            edges.push(Edge {
                from: act,
                to: cov,
                family: TriggerFamily::Abort,
                predicate: pred(PredicateKind::InspectAbort, l),
            });
        }
        Self::from_edges(edges, thresholds)
    }

    /// Coverage alone.
    pub fn coverage_only(thresholds: Thresholds) -> Self {
        Self::from_edges(Vec::new(), thresholds)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if !self.nodes.contains(&BehaviorKind::GeometricCoverage) {
            return Err(GraphError::NoCoverage);
        }
        for (i, e) in self.edges.iter().enumerate() {
            if !self.nodes.contains(&e.from) || !self.nodes.contains(&e.to) {
                return Err(GraphError::DanglingEdge(i));
            }
        }
        let mut seen = BTreeSet::from([BehaviorKind::GeometricCoverage]);
        let mut queue = VecDeque::from([BehaviorKind::GeometricCoverage]);
        while let Some(n) = queue.pop_front() {
            for e in self.edges.iter().filter(|e| e.from == n) {
                if seen.insert(e.to) {
                    queue.push_back(e.to);
                }
            }
        }
        match self.nodes.iter().find(|n| !seen.contains(n)) {
            Some(n) => Err(GraphError::Unreachable(*n)),
            None => Ok(()),
        }
    }

    /// Families present in the edge set.
    pub fn families(&self) -> BTreeSet<TriggerFamily> {
        self.edges.iter().map(|e| e.family).collect()
    }

    /// Restart from coverage with nothing engaged.
    pub fn reset(&mut self) {
        self.active = BehaviorKind::GeometricCoverage;
        self.engaged = None;
    }

    /// Transition policy. Outgoing edges of the active node are tried by
    /// family priority, first match wins. `Detected` edges compete as a
    /// group: the pending track with the highest label probability wins,
    /// then the nearest, then the lowest id. Taking an `Absent` edge marks
    /// the track dismissed in `belief`.
    pub fn transition(&mut self, belief: &mut GeoSemanticBelief<f64>) -> Option<Transition> {
        let mut out: Vec<usize> = (0..self.edges.len())
            .filter(|&i| self.edges[i].from == self.active)
            .collect();
        out.sort_by_key(|&i| (self.edges[i].family, i));
        let mut taken: Option<Transition> = None;
        let mut detected: Option<(f64, f64, u32, usize, Evidence)> = None;
        for &i in &out {
            let e = self.edges[i];
            if e.family == TriggerFamily::Detected {
                for (id, obj) in &belief.objects {
                    if !obj.status.is_pending() || obj.floor != belief.floor {
                        continue;
                    }
                    let Some(ev) = evidence(belief, *id, e.predicate.label) else {
                        continue;
                    };
                    if !ev.satisfies(e.predicate.kind, &self.thresholds) {
                        continue;
                    }
                    let key = (ev.label_probability, ev.expected_distance, *id);
                    let better = match &detected {
                        None => true,
                        Some((p, d, bid, _, _)) => {
                            key.0 > *p
                                || (key.0 == *p && (key.1 < *d || (key.1 == *d && key.2 < *bid)))
                        }
                    };
                    if better {
                        detected = Some((key.0, key.1, *id, i, ev));
                    }
                }
                continue;
            }
            if let Some((_, _, id, di, ev)) = detected.take() {
                // the Detected group sorted ahead of this edge
                taken = Some(self.make(di, id, ev));
                break;
            }
            let Some(target) = self.engaged else { continue };
            let Some(ev) = evidence(belief, target, e.predicate.label) else {
                continue;
            };
            if ev.satisfies(e.predicate.kind, &self.thresholds) {
                taken = Some(self.make(i, target, ev));
                break;
            }
        }
        if taken.is_none() {
            if let Some((_, _, id, di, ev)) = detected {
                taken = Some(self.make(di, id, ev));
            }
        }
        let t = taken?;
        apply_transition(belief, &t);
        self.active = t.to;
        self.engaged = t.to.is_engaged().then_some(t.target);
        Some(t)
    }

    fn make(&self, edge: usize, target: u32, evidence: Evidence) -> Transition {
        let e = &self.edges[edge];
        Transition {
            from: e.from,
            to: e.to,
            edge,
            family: e.family,
            predicate: e.predicate,
            target,
            evidence,
        }
    }
}

/// Belief side effect of taking `t`: `Absent` dismisses the track, and
/// engaging a task node fixes which task the track is pending for.
pub fn apply_transition(belief: &mut GeoSemanticBelief<f64>, t: &Transition) {
    match t.family {
        TriggerFamily::Absent => {
            // a status that is already resolved stays as it is
            let _ = belief.set_status(t.target, crate::types::AffordanceStatus::Dismissed);
        }
        TriggerFamily::Detected | TriggerFamily::Confident => {
            if let Some(task) = belief_task(&t.to) {
                let _ = belief.set_status(t.target, pending_status_for(Some(task)));
            }
        }
        _ => {}
    }
}

fn belief_task(node: &BehaviorKind) -> Option<TaskKind> {
    match node {
        BehaviorKind::Inspect { .. } => Some(TaskKind::Inspect),
        BehaviorKind::ClimbStairs { .. } => Some(TaskKind::Ascend),
        _ => None,
    }
}
