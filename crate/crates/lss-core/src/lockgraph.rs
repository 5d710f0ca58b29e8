//! Lock graphs of locally-live behaviors and the polynomial decision
//! procedure for sufficient deadlock schemes.
//!
//! Nodes are locks; a process owning its lock `a` while requesting `b`
//! contributes an edge `a -> b`. The procedure trims the graph, absorbs
//! solid cycles, extends the absorbed zone along edges into it and along
//! weak cycles, and finally answers: a locally-live strategy with this
//! behavior loses iff every process is either mapped by the materialized
//! deadlock scheme or can refuse to start once its target locks are gone.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::annotate::{annotate, AnnMode};
use crate::error::{Error, Result};
use crate::model::{LockId, Lss, ProcId};
use crate::patterns2::{minimal_behaviors, Behavior2, ProcBehavior};
use crate::strategy::{local_to_rules, Strategy};

/// `(from, process, to)`.
pub type Edge = (LockId, ProcId, LockId);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strength {
    Weak,
    Strong,
}

#[derive(Debug, Clone)]
pub struct ProcInfo {
    pub name: String,
    pub locks: [LockId; 2],
    /// Solid: the process cannot block before acquiring anything.
    pub solid: bool,
    /// Request sets of hands-empty patterns; the process is Z-lockable if
    /// one of them is contained in Z.
    pub lockable: Vec<BTreeSet<LockId>>,
}

#[derive(Debug, Clone)]
pub struct LockGraph {
    pub n_locks: usize,
    pub procs: Vec<ProcInfo>,
    pub edges: BTreeMap<Edge, Strength>,
}

/// Builds the lock graph of a locally-live behavior. An edge is strong iff
/// the process has a strong edge pattern and no weak one for the same
/// directed pair.
pub fn build_lock_graph(behavior: &Behavior2) -> Result<LockGraph> {
    let mut n_locks = 0;
    let mut procs = Vec::new();
    let mut edges = BTreeMap::new();
    for (pi, pb) in behavior.0.iter().enumerate() {
        n_locks = n_locks.max(pb.locks[0].0 + 1).max(pb.locks[1].0 + 1);
        let mut lockable = Vec::new();
        for pat in &pb.patterns {
            if pat.blocks.is_empty() || pat.owns.len() > 1 {
                return Err(Error::Precondition(format!(
                    "behavior of {} is not locally live",
                    pb.name
                )));
            }
            if pat.owns.is_empty() {
                lockable.push(pat.blocks.clone());
            } else {
                let from = *pat.owns.iter().next().unwrap();
                let to = *pat.blocks.iter().next().unwrap();
                let e: Edge = (from, ProcId(pi), to);
                let s = if pat.strong { Strength::Strong } else { Strength::Weak };
                edges
                    .entry(e)
                    .and_modify(|old| {
                        if s == Strength::Weak {
                            *old = Strength::Weak;
                        }
                    })
                    .or_insert(s);
            }
        }
        procs.push(ProcInfo {
            name: pb.name.clone(),
            locks: pb.locks,
            solid: lockable.is_empty(),
            lockable,
        });
    }
    Ok(LockGraph { n_locks, procs, edges })
}

impl LockGraph {
    pub fn is_z_lockable(&self, p: usize, z: &BTreeSet<LockId>) -> bool {
        self.procs[p].lockable.iter().any(|b| b.iter().all(|t| z.contains(t)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SchemeStep {
    /// One full trim pass to fixpoint, with the edges it erased.
    TrimPass { erased: Vec<Edge> },
    /// A lock turned out to carry two solo solid edges: no scheme.
    TrimFail { lock: LockId, solo: Edge, other: Edge },
    /// A solid cycle absorbed into Z (edges in the chosen weak direction).
    CycleAbsorbed { edges: Vec<Edge>, locks: Vec<LockId> },
    /// An all-strong solid cycle without a usable weak reversal: no scheme.
    CycleFail { edges: Vec<Edge>, reason: String },
    /// A solid process lost its last edge: no scheme.
    SolidProcessStranded { proc: ProcId },
    /// An edge into Z pulled a whole equivalence class into Z.
    ReachExtended { edge: Edge, class: Vec<LockId> },
    /// A weak cycle (weak edge last) plus the classes of its locks joined Z.
    WeakCycleAbsorbed { edges: Vec<Edge>, added: Vec<LockId> },
    /// Final check: this process is neither mapped nor Z-lockable.
    NotSufficient { proc: ProcId },
    Sufficient,
}

/// Materialized sufficient deadlock scheme: the dead zone `Z` and, for
/// every process with both locks in `Z`, its assigned edge (or none).
#[derive(Debug, Clone)]
pub struct DeadlockScheme {
    pub z: BTreeSet<LockId>,
    pub ds: BTreeMap<String, Option<Edge>>,
}

impl DeadlockScheme {
    pub fn to_json(&self, locks: &[String], _procs: &[String]) -> serde_json::Value {
        serde_json::json!({
            "Z": self.z.iter().map(|t| locks[t.0].clone()).collect::<Vec<_>>(),
            "ds": self.ds.iter().map(|(p, e)| {
                let v = match e {
                    None => serde_json::Value::Null,
                    Some((f, _, t)) => serde_json::json!({
                        "from": locks[f.0], "to": locks[t.0]
                    }),
                };
                (p.clone(), v)
            }).collect::<BTreeMap<_, _>>(),
        })
    }
}

#[derive(Debug)]
pub struct SchemeOutcome {
    /// `Some` iff a sufficient deadlock scheme exists (the behavior loses).
    pub scheme: Option<DeadlockScheme>,
    pub trace: Vec<SchemeStep>,
}

enum Flow {
    Progress(bool),
    Fail,
}

struct Engine<'g> {
    g: &'g LockGraph,
    h: BTreeSet<Edge>,
    z: BTreeSet<LockId>,
    ds: BTreeMap<usize, Edge>,
    trace: Vec<SchemeStep>,
}

fn rev(e: &Edge) -> Edge {
    (e.2, e.1, e.0)
}

impl<'g> Engine<'g> {
    fn new(g: &'g LockGraph) -> Self {
        Engine {
            g,
            h: g.edges.keys().cloned().collect(),
            z: BTreeSet::new(),
            ds: BTreeMap::new(),
            trace: Vec::new(),
        }
    }

    fn solid_edge(&self, e: &Edge) -> bool {
        self.g.procs[e.1 .0].solid
    }

    fn strength(&self, e: &Edge) -> Strength {
        self.g.edges[e]
    }

    fn edges_from(&self, t: LockId) -> Vec<Edge> {
        self.h.iter().filter(|e| e.0 == t).cloned().collect()
    }

    fn is_double(&self, e: &Edge) -> bool {
        self.h.contains(&rev(e))
    }

    /// Trim to fixpoint. Candidate locks are scanned in descending index
    /// order; a lock qualifies if it has a solo solid edge plus other
    /// outgoing edges. Erasing the other edges fails when one of them is
    /// itself solo solid.
    fn trim(&mut self) -> Flow {
        let mut erased = Vec::new();
        'outer: loop {
            for ti in (0..self.g.n_locks).rev() {
                let t = LockId(ti);
                if self.z.contains(&t) {
                    continue;
                }
                let out = self.edges_from(t);
                if out.len() < 2 {
                    continue;
                }
                let solo = match out.iter().find(|e| self.solid_edge(e) && !self.is_double(e)) {
                    Some(e) => e.clone(),
                    None => continue,
                };
                for e in &out {
                    if *e == solo {
                        continue;
                    }
                    if self.solid_edge(e) && !self.is_double(e) {
                        self.trace.push(SchemeStep::TrimPass { erased });
                        self.trace.push(SchemeStep::TrimFail {
                            lock: t,
                            solo,
                            other: e.clone(),
                        });
                        return Flow::Fail;
                    }
                    self.h.remove(e);
                    erased.push(e.clone());
                }
                continue 'outer;
            }
            break;
        }
        let progressed = !erased.is_empty();
        self.trace.push(SchemeStep::TrimPass { erased });
        Flow::Progress(progressed)
    }

    /// First simple cycle of solid edges disjoint from Z, in lexicographic
    /// order (smallest start lock; edges explored in (to, proc) order; only
    /// locks >= the start lock are considered so the first cycle found
    /// starts at its minimal lock).
    fn find_solid_cycle(&self) -> Option<Vec<Edge>> {
        for start in 0..self.g.n_locks {
            let t0 = LockId(start);
            if self.z.contains(&t0) {
                continue;
            }
            let mut path: Vec<Edge> = Vec::new();
            if self.dfs_solid(t0, t0, &mut path) {
                return Some(path);
            }
        }
        None
    }

    fn dfs_solid(&self, t0: LockId, cur: LockId, path: &mut Vec<Edge>) -> bool {
        for e in self.edges_from(cur) {
            if !self.solid_edge(&e) || self.z.contains(&e.2) || e.2 .0 < t0.0 {
                continue;
            }
            if path.iter().any(|pe| pe.1 == e.1) {
                continue;
            }
            if e.2 == t0 {
                if !path.is_empty() {
                    path.push(e);
                    return true;
                }
                continue;
            }
            if path.iter().any(|pe| pe.0 == e.2) {
                continue;
            }
            path.push(e.clone());
            if self.dfs_solid(t0, e.2, path) {
                return true;
            }
            path.pop();
        }
        false
    }

    /// Absorbs every currently available solid cycle (without re-trimming
    /// in between), then lets the caller re-trim.
    fn absorb_solid_cycles(&mut self) -> Flow {
        let mut progressed = false;
        while let Some(cyc) = self.find_solid_cycle() {
            let chosen = if cyc.iter().any(|e| self.strength(e) == Strength::Weak) {
                cyc
            } else {
                let mut reversal: Vec<Edge> = cyc.iter().rev().map(rev).collect();
                if let Some(missing) = reversal.iter().find(|e| !self.h.contains(*e)) {
                    let _ = missing;
                    self.trace.push(SchemeStep::CycleFail {
                        edges: cyc,
                        reason: "strong cycle without full reversal".into(),
                    });
                    return Flow::Fail;
                }
                if reversal.iter().all(|e| self.strength(e) == Strength::Strong) {
                    self.trace.push(SchemeStep::CycleFail {
                        edges: cyc,
                        reason: "cycle strong in both directions".into(),
                    });
                    return Flow::Fail;
                }
                // rotate so the reversal also starts at its minimal lock
                let min = reversal
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, e)| e.0)
                    .map(|(i, _)| i)
                    .unwrap();
                reversal.rotate_left(min);
                reversal
            };
            let locks: Vec<LockId> = chosen.iter().map(|e| e.0).collect();
            for e in &chosen {
                self.ds.insert(e.1 .0, e.clone());
            }
            self.z.extend(locks.iter().cloned());
            for (i, &t) in locks.iter().enumerate() {
                for e in self.edges_from(t) {
                    if e != chosen[i] {
                        self.h.remove(&e);
                    }
                }
            }
            self.trace.push(SchemeStep::CycleAbsorbed { edges: chosen, locks });
            for (pi, p) in self.g.procs.iter().enumerate() {
                if p.solid && !self.h.iter().any(|e| e.1 .0 == pi) {
                    self.trace.push(SchemeStep::SolidProcessStranded { proc: ProcId(pi) });
                    return Flow::Fail;
                }
            }
            progressed = true;
        }
        Flow::Progress(progressed)
    }

    /// Equivalence class of `t` among locks outside Z, connected via double
    /// solid edges, together with a BFS parent map from the given roots.
    fn class_with_tree(&self, roots: &[LockId]) -> (BTreeSet<LockId>, BTreeMap<LockId, Edge>) {
        let mut class: BTreeSet<LockId> = roots.iter().cloned().collect();
        let mut parent: BTreeMap<LockId, Edge> = BTreeMap::new();
        let mut queue: VecDeque<LockId> = roots.iter().cloned().collect();
        while let Some(t) = queue.pop_front() {
            for e in self.edges_from(t) {
                if !self.solid_edge(&e) || !self.is_double(&e) {
                    continue;
                }
                let next = e.2;
                if self.z.contains(&next) || class.contains(&next) {
                    continue;
                }
                class.insert(next);
                // the child's outgoing edge toward its parent
                parent.insert(next, rev(&e));
                queue.push_back(next);
            }
        }
        (class, parent)
    }

    /// Pulls equivalence classes of locks with an edge into Z.
    fn extend_reach(&mut self) -> bool {
        let mut progressed = false;
        loop {
            let found = self
                .h
                .iter()
                .find(|e| !self.z.contains(&e.0) && self.z.contains(&e.2))
                .cloned();
            let e = match found {
                Some(e) => e,
                None => break,
            };
            let (class, tree) = self.class_with_tree(&[e.0]);
            self.ds.insert(e.1 .0, e.clone());
            for (_, edge) in &tree {
                self.ds.insert(edge.1 .0, edge.clone());
            }
            self.z.extend(class.iter().cloned());
            self.trace.push(SchemeStep::ReachExtended {
                edge: e,
                class: class.into_iter().collect(),
            });
            progressed = true;
        }
        progressed
    }

    /// First simple weak cycle outside Z, normalized so its weak edge comes
    /// last: a weak edge (a -> b) closed by a simple path b -> a.
    fn find_weak_cycle(&self) -> Option<Vec<Edge>> {
        let weak_edges: Vec<Edge> = self
            .h
            .iter()
            .filter(|e| {
                self.strength(e) == Strength::Weak
                    && !self.z.contains(&e.0)
                    && !self.z.contains(&e.2)
            })
            .cloned()
            .collect();
        for we in weak_edges {
            let mut path: Vec<Edge> = Vec::new();
            if we.0 == we.2 {
                continue;
            }
            if self.dfs_any(we.2, we.0, &we, &mut path) {
                path.push(we);
                return Some(path);
            }
        }
        None
    }

    fn dfs_any(&self, cur: LockId, goal: LockId, closing: &Edge, path: &mut Vec<Edge>) -> bool {
        if cur == goal {
            return true;
        }
        for e in self.edges_from(cur) {
            if self.z.contains(&e.2) || e.1 == closing.1 {
                continue;
            }
            if path.iter().any(|pe| pe.1 == e.1) {
                continue;
            }
            if e.2 != goal && (e.2 == closing.2 || path.iter().any(|pe| pe.0 == e.2)) {
                continue;
            }
            path.push(e.clone());
            if self.dfs_any(e.2, goal, closing, path) {
                return true;
            }
            path.pop();
        }
        false
    }

    /// Absorbs one weak cycle plus the equivalence classes of its locks.
    /// Every cycle process is mapped to its cycle edge; off-cycle class
    /// members get their double-solid tree edge toward the cycle.
    fn incorporate_weak_cycle(&mut self) -> bool {
        let cyc = match self.find_weak_cycle() {
            Some(c) => c,
            None => return false,
        };
        let cycle_locks: Vec<LockId> = cyc.iter().map(|e| e.0).collect();
        let (class, tree) = self.class_with_tree(&cycle_locks);
        for e in &cyc {
            self.ds.insert(e.1 .0, e.clone());
        }
        for (_, edge) in &tree {
            self.ds.insert(edge.1 .0, edge.clone());
        }
        self.z.extend(class.iter().cloned());
        self.trace.push(SchemeStep::WeakCycleAbsorbed {
            edges: cyc,
            added: class.into_iter().collect(),
        });
        true
    }

    /// Checks the materialized partial scheme: every assigned edge is a
    /// graph edge of its process with both ends in Z, every lock in Z has
    /// exactly one assigned outgoing edge, solid processes with both locks
    /// in Z are assigned, the image has no strong cycle, and no solid edge
    /// of H leaves Z.
    fn validate(&self) -> Result<()> {
        let mut outgoing: BTreeMap<LockId, usize> = BTreeMap::new();
        for (&pi, e) in &self.ds {
            if !self.g.edges.contains_key(e) || e.1 .0 != pi {
                return Err(Error::Internal(format!("ds({pi}) is not an edge of the graph")));
            }
            if !self.z.contains(&e.0) || !self.z.contains(&e.2) {
                return Err(Error::Internal(format!("ds({pi}) leaves Z")));
            }
            *outgoing.entry(e.0).or_insert(0) += 1;
        }
        for &t in &self.z {
            if outgoing.get(&t).copied().unwrap_or(0) != 1 {
                return Err(Error::Internal(format!(
                    "lock {} has {} assigned outgoing edges",
                    t.0,
                    outgoing.get(&t).copied().unwrap_or(0)
                )));
            }
        }
        for (pi, p) in self.g.procs.iter().enumerate() {
            if p.solid
                && self.z.contains(&p.locks[0])
                && self.z.contains(&p.locks[1])
                && !self.ds.contains_key(&pi)
            {
                return Err(Error::Internal(format!("solid process {} unmapped", p.name)));
            }
        }
        // image cycles must contain a weak edge
        let image: BTreeMap<LockId, Edge> =
            self.ds.values().map(|e| (e.0, e.clone())).collect();
        for &start in &self.z {
            let mut seen = BTreeSet::new();
            let mut cur = start;
            let mut trail: Vec<Edge> = Vec::new();
            while let Some(e) = image.get(&cur) {
                if e.0 == start && !trail.is_empty() {
                    break;
                }
                if !seen.insert(cur) {
                    break;
                }
                trail.push(e.clone());
                cur = e.2;
                if cur == start {
                    if trail.iter().all(|e| self.strength(e) == Strength::Strong) {
                        return Err(Error::Internal("strong cycle in scheme image".into()));
                    }
                    break;
                }
            }
        }
        for e in &self.h {
            if self.solid_edge(e) && self.z.contains(&e.0) && !self.z.contains(&e.2) {
                return Err(Error::Internal("solid edge leaves Z in H".into()));
            }
        }
        Ok(())
    }

    fn outcome_scheme(&self) -> DeadlockScheme {
        let ds = self
            .g
            .procs
            .iter()
            .enumerate()
            .filter(|(_, p)| self.z.contains(&p.locks[0]) && self.z.contains(&p.locks[1]))
            .map(|(pi, p)| (p.name.clone(), self.ds.get(&pi).cloned()))
            .collect();
        DeadlockScheme { z: self.z.clone(), ds }
    }
}

/// Runs the full staged procedure on a locally-live behavior. Returns the
/// sufficient deadlock scheme if one exists (the behavior loses) together
/// with the stage trace.
pub fn decide_sufficient_scheme(behavior: &Behavior2) -> Result<SchemeOutcome> {
    let g = build_lock_graph(behavior)?;
    // a process with no patterns at all can never be blocked, so no scheme
    // can cover it: the behavior wins outright
    if let Some(pi) = behavior.0.iter().position(|pb| pb.patterns.is_empty()) {
        return Ok(SchemeOutcome {
            scheme: None,
            trace: vec![SchemeStep::NotSufficient { proc: ProcId(pi) }],
        });
    }
    let mut eng = Engine::new(&g);
    macro_rules! stage {
        ($flow:expr) => {
            match $flow {
                Flow::Fail => {
                    return Ok(SchemeOutcome { scheme: None, trace: eng.trace })
                }
                Flow::Progress(p) => {
                    eng.validate()?;
                    p
                }
            }
        };
    }
    stage!(eng.trim());
    loop {
        let a = stage!(eng.absorb_solid_cycles());
        if !a {
            break;
        }
        stage!(eng.trim());
    }
    loop {
        let r = eng.extend_reach();
        eng.validate()?;
        let w = eng.incorporate_weak_cycle();
        eng.validate()?;
        if !r && !w {
            break;
        }
    }
    for (pi, _) in g.procs.iter().enumerate() {
        if !eng.ds.contains_key(&pi) && !g.is_z_lockable(pi, &eng.z) {
            eng.trace.push(SchemeStep::NotSufficient { proc: ProcId(pi) });
            return Ok(SchemeOutcome { scheme: None, trace: eng.trace });
        }
    }
    eng.trace.push(SchemeStep::Sufficient);
    let scheme = eng.outcome_scheme();
    Ok(SchemeOutcome { scheme: Some(scheme), trace: eng.trace })
}

#[derive(Debug)]
pub struct LocallyLiveDecision {
    pub winning: bool,
    pub strategy: Option<Strategy>,
    pub scheme: Option<DeadlockScheme>,
    pub trace: Vec<SchemeStep>,
}

/// Decides whether a 2LSS has a winning locally-live strategy: enumerates
/// the minimal locally-live achievable pattern sets per process and asks,
/// per choice, whether a sufficient deadlock scheme exists.
pub fn decide_locally_live(lss: &Lss) -> Result<LocallyLiveDecision> {
    if !lss.is_two_lock() {
        return Err(Error::NotTwoLock(
            "decide_locally_live needs at most two locks per process".into(),
        ));
    }
    let padded = lss.pad_to_two_locks()?;
    let mut anns = Vec::new();
    let mut mins = Vec::new();
    for i in 0..padded.processes.len() {
        let ann = annotate(&padded, ProcId(i), AnnMode::TwoLock, &[])?;
        let m = minimal_behaviors(&padded, &ann, true);
        if m.is_empty() {
            // this process has no locally-live strategy at all
            return Ok(LocallyLiveDecision {
                winning: false,
                strategy: None,
                scheme: None,
                trace: Vec::new(),
            });
        }
        anns.push(ann);
        mins.push(m);
    }
    let total: u128 = mins.iter().map(|m| m.len() as u128).product();
    if total > 1_000_000 {
        return Err(Error::LimitExceeded(format!("{total} behavior choices")));
    }
    let mut first: Option<(DeadlockScheme, Vec<SchemeStep>)> = None;
    let mut idx = vec![0usize; mins.len()];
    loop {
        let behavior = Behavior2(
            idx.iter()
                .enumerate()
                .map(|(p, &i)| ProcBehavior {
                    name: padded.processes[p].name.clone(),
                    locks: [padded.processes[p].locks[0], padded.processes[p].locks[1]],
                    patterns: mins[p][i].0.clone(),
                })
                .collect(),
        );
        let out = decide_sufficient_scheme(&behavior)?;
        match out.scheme {
            None => {
                let strat = Strategy(
                    idx.iter()
                        .enumerate()
                        .map(|(p, &i)| {
                            (
                                padded.processes[p].name.clone(),
                                local_to_rules(&padded, &anns[p], &mins[p][i].1),
                            )
                        })
                        .collect(),
                );
                return Ok(LocallyLiveDecision {
                    winning: true,
                    strategy: Some(strat),
                    scheme: None,
                    trace: out.trace,
                });
            }
            Some(s) => {
                if first.is_none() {
                    first = Some((s, out.trace));
                }
            }
        }
        let mut pos = mins.len();
        loop {
            if pos == 0 {
                let (scheme, trace) = first.expect("at least one choice explored");
                return Ok(LocallyLiveDecision {
                    winning: false,
                    strategy: None,
                    scheme: Some(scheme),
                    trace,
                });
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < mins[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns2::Pattern2;

    fn edge_pattern(a: LockId, b: LockId, strong: bool) -> Pattern2 {
        Pattern2 {
            owns: BTreeSet::from([a]),
            blocks: BTreeSet::from([b]),
            strong,
        }
    }

    fn lockable_pattern(b: &[LockId]) -> Pattern2 {
        Pattern2 {
            owns: BTreeSet::new(),
            blocks: b.iter().cloned().collect(),
            strong: false,
        }
    }

    /// All-fragile weak cycle over n locks: classic forced left-first
    /// philosophers shape.
    fn weak_ring(n: usize) -> Behavior2 {
        Behavior2(
            (0..n)
                .map(|i| {
                    let a = LockId(i);
                    let b = LockId((i + 1) % n);
                    ProcBehavior {
                        name: format!("p{i}"),
                        locks: [a.min(b), a.max(b)],
                        patterns: BTreeSet::from([
                            lockable_pattern(&[a]),
                            edge_pattern(a, b, false),
                        ]),
                    }
                })
                .collect(),
        )
    }

    #[test]
    fn weak_ring_has_scheme_with_all_locks() {
        let out = decide_sufficient_scheme(&weak_ring(3)).unwrap();
        let scheme = out.scheme.expect("ring deadlocks");
        assert_eq!(scheme.z, (0..3).map(LockId).collect());
        assert_eq!(scheme.ds.len(), 3);
        assert!(scheme.ds.values().all(|e| e.is_some()));
    }

    #[test]
    fn acyclic_orientation_is_winning() {
        // same ring but the last process holds the *other* lock first:
        // edges t0->t1, t1->t2, t0->t2: no cycle, no scheme
        let mut b = weak_ring(3);
        let pb = &mut b.0[2];
        pb.patterns = BTreeSet::from([
            lockable_pattern(&[LockId(0)]),
            edge_pattern(LockId(0), LockId(2), false),
        ]);
        let out = decide_sufficient_scheme(&b).unwrap();
        assert!(out.scheme.is_none());
        assert!(matches!(out.trace.last(), Some(SchemeStep::NotSufficient { .. })));
    }

    #[test]
    fn solid_two_cycle_distinct_procs_deadlocks() {
        // two solid processes on the same pair, opposite directions, weak
        let b = Behavior2(vec![
            ProcBehavior {
                name: "p0".into(),
                locks: [LockId(0), LockId(1)],
                patterns: BTreeSet::from([edge_pattern(LockId(0), LockId(1), false)]),
            },
            ProcBehavior {
                name: "p1".into(),
                locks: [LockId(0), LockId(1)],
                patterns: BTreeSet::from([edge_pattern(LockId(1), LockId(0), false)]),
            },
        ]);
        let out = decide_sufficient_scheme(&b).unwrap();
        let scheme = out.scheme.expect("cross cycle deadlocks");
        assert_eq!(scheme.z.len(), 2);
    }

    #[test]
    fn strong_cycle_without_weak_reversal_wins() {
        // both directions strong for both processes: condition (iii)
        // cannot be met, no scheme
        let b = Behavior2(vec![
            ProcBehavior {
                name: "p0".into(),
                locks: [LockId(0), LockId(1)],
                patterns: BTreeSet::from([edge_pattern(LockId(0), LockId(1), true)]),
            },
            ProcBehavior {
                name: "p1".into(),
                locks: [LockId(0), LockId(1)],
                patterns: BTreeSet::from([edge_pattern(LockId(1), LockId(0), true)]),
            },
        ]);
        let out = decide_sufficient_scheme(&b).unwrap();
        assert!(out.scheme.is_none());
        assert!(out
            .trace
            .iter()
            .any(|s| matches!(s, SchemeStep::CycleFail { .. })));
    }

    #[test]
    fn not_locally_live_behavior_rejected() {
        let b = Behavior2(vec![ProcBehavior {
            name: "p0".into(),
            locks: [LockId(0), LockId(1)],
            patterns: BTreeSet::from([Pattern2 {
                owns: BTreeSet::from([LockId(0)]),
                blocks: BTreeSet::new(),
                strong: false,
            }]),
        }]);
        assert!(build_lock_graph(&b).is_err());
    }
}
