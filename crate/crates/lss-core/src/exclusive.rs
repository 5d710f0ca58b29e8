//! Exclusive systems: whenever a state can acquire a lock, all its
//! transitions acquire that same lock. For these, winning locally-live
//! strategies can be decided in polynomial time through the graph of
//! unavoidable edges.

use std::collections::{BTreeMap, BTreeSet};

use crate::annotate::{annotate, AnnAutomaton, AnnMode};
use crate::error::{Error, Result};
use crate::model::{LockId, Lss, ProcId};
use crate::patterns2::{achievable, pattern_universe, Pattern2};
use crate::strategy::{local_to_rules, LocalStrategy, Strategy};

/// Checks exclusivity; returns the offending (process, state) pairs.
pub fn check_exclusive(lss: &Lss) -> std::result::Result<(), Vec<(String, String)>> {
    let mut bad = Vec::new();
    for p in &lss.processes {
        for s in 0..p.states.len() {
            let gets: BTreeSet<LockId> = p
                .outgoing(s)
                .iter()
                .filter_map(|&ti| match p.transitions[ti].op {
                    crate::model::LockOp::Get(t) => Some(t),
                    _ => None,
                })
                .collect();
            if gets.is_empty() {
                continue;
            }
            let all_same = gets.len() == 1
                && p.outgoing(s).iter().all(|&ti| p.transitions[ti].op.is_get());
            if !all_same {
                bad.push((p.name.clone(), p.states[s].clone()));
            }
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(bad)
    }
}

fn edge_patterns(a: LockId, b: LockId) -> [Pattern2; 2] {
    [
        Pattern2 { owns: BTreeSet::from([a]), blocks: BTreeSet::from([b]), strong: false },
        Pattern2 { owns: BTreeSet::from([a]), blocks: BTreeSet::from([b]), strong: true },
    ]
}

fn empty_hand_patterns(locks: [LockId; 2]) -> Vec<Pattern2> {
    pattern_universe(locks, true).into_iter().filter(|p| p.owns.is_empty()).collect()
}

/// The graph of unavoidable edges: `a -> b` labeled `p` is present iff
/// every locally-live strategy of `p` sometimes holds `a` while requesting
/// `b`. A process is flagged if every locally-live strategy induces at
/// least one edge.
#[derive(Debug, Clone)]
pub struct UnavoidableGraph {
    pub edges: BTreeSet<(LockId, ProcId, LockId)>,
    pub flagged: Vec<bool>,
    pub proc_locks: Vec<[LockId; 2]>,
}

impl UnavoidableGraph {
    pub fn has_double(&self, a: LockId, p: ProcId, b: LockId) -> bool {
        self.edges.contains(&(a, p, b)) && self.edges.contains(&(b, p, a))
    }
}

pub fn unavoidable_graph(lss: &Lss, anns: &[AnnAutomaton]) -> UnavoidableGraph {
    let mut edges = BTreeSet::new();
    let mut flagged = Vec::new();
    let mut proc_locks = Vec::new();
    for (pi, ann) in anns.iter().enumerate() {
        let p = &lss.processes[pi];
        let locks = [p.locks[0], p.locks[1]];
        proc_locks.push(locks);
        let universe: BTreeSet<Pattern2> = pattern_universe(locks, true).into_iter().collect();
        for (a, b) in [(locks[0], locks[1]), (locks[1], locks[0])] {
            let mut without: BTreeSet<Pattern2> = universe.clone();
            for pat in edge_patterns(a, b) {
                without.remove(&pat);
            }
            if achievable(lss, ann, &without, true).is_none() {
                edges.insert((a, ProcId(pi), b));
            }
        }
        let only_empty: BTreeSet<Pattern2> = empty_hand_patterns(locks).into_iter().collect();
        flagged.push(achievable(lss, ann, &only_empty, true).is_none());
    }
    UnavoidableGraph { edges, flagged, proc_locks }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SccClass {
    DirectDeadlock,
    DirectSemiDeadlock,
    Deadlock,
    SemiDeadlock,
    Plain,
}

#[derive(Debug, Clone)]
pub struct SccAnalysis {
    /// Condensation components in topological order (a component can only
    /// reach later-or-equal... earlier components reach later ones).
    pub sccs: Vec<Vec<LockId>>,
    pub classes: Vec<SccClass>,
    /// Locks of all components that reach a direct (semi-)deadlock.
    pub bt: BTreeSet<LockId>,
}

fn tarjan_sccs(n: usize, succ: &BTreeMap<usize, BTreeSet<usize>>) -> Vec<Vec<usize>> {
    // iterative Tarjan
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut sccs: Vec<Vec<usize>> = Vec::new();
    let mut counter = 0;
    let empty = BTreeSet::new();
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut call: Vec<(usize, std::collections::btree_set::Iter<usize>)> =
            vec![(root, succ.get(&root).unwrap_or(&empty).iter())];
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some((v, it)) = call.last_mut() {
            let v = *v;
            if let Some(&w) = it.next() {
                if index[w] == usize::MAX {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, succ.get(&w).unwrap_or(&empty).iter()));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some((u, _)) = call.last() {
                    let u = *u;
                    low[u] = low[u].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().unwrap();
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    sccs.push(comp);
                }
            }
        }
    }
    sccs
}

/// Computes components of the unavoidable-edge graph, classifies them, and
/// derives the bad-territory lock set.
pub fn classify_sccs(n_locks: usize, g: &UnavoidableGraph) -> SccAnalysis {
    let mut succ: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &(a, _, b) in &g.edges {
        succ.entry(a.0).or_default().insert(b.0);
    }
    let sccs = tarjan_sccs(n_locks, &succ);
    // topological order of the condensation, ties by smallest lock index
    let comp_of: BTreeMap<usize, usize> = sccs
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| c.iter().map(move |&l| (l, ci)))
        .collect();
    // Kahn with tie-break
    let mut csucc: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); sccs.len()];
    for &(a, _, b) in &g.edges {
        let (ca, cb) = (comp_of[&a.0], comp_of[&b.0]);
        if ca != cb {
            csucc[ca].insert(cb);
        }
    }
    let mut indeg = vec![0usize; sccs.len()];
    for s in &csucc {
        for &c in s {
            indeg[c] += 1;
        }
    }
    let mut topo: Vec<usize> = Vec::new();
    let mut avail: BTreeSet<(usize, usize)> = (0..sccs.len())
        .filter(|&c| indeg[c] == 0)
        .map(|c| (sccs[c][0], c))
        .collect();
    while let Some(&(key, c)) = avail.iter().next() {
        avail.remove(&(key, c));
        topo.push(c);
        for &d in &csucc[c] {
            indeg[d] -= 1;
            if indeg[d] == 0 {
                avail.insert((sccs[d][0], d));
            }
        }
    }
    let order = topo;
    let sccs: Vec<Vec<usize>> = order.iter().map(|&c| sccs[c].clone()).collect();
    let comp_of: BTreeMap<usize, usize> = sccs
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| c.iter().map(move |&l| (l, ci)))
        .collect();

    let mut classes = vec![SccClass::Plain; sccs.len()];
    for (ci, comp) in sccs.iter().enumerate() {
        let comp_set: BTreeSet<usize> = comp.iter().cloned().collect();
        let internal: Vec<&(LockId, ProcId, LockId)> = g
            .edges
            .iter()
            .filter(|(a, _, b)| comp_set.contains(&a.0) && comp_set.contains(&b.0))
            .collect();
        if comp.len() >= 2 && internal.iter().any(|&&(a, p, b)| !g.has_double(a, p, b)) {
            classes[ci] = SccClass::DirectDeadlock;
            continue;
        }
        if comp.len() >= 2 {
            // all edges double: one undirected edge per process; a cycle in
            // this multigraph (counting parallel edges) means deadlock
            let procs: BTreeSet<ProcId> = internal.iter().map(|&&(_, p, _)| p).collect();
            if procs.len() > comp.len() - 1 {
                classes[ci] = SccClass::DirectDeadlock;
                continue;
            }
            // a tree of double edges: semi-deadlock if some flagged process
            // has both locks inside and the tree links them without that
            // process's own edges (otherwise no simple cycle can form)
            let both_in = (0..g.flagged.len()).any(|pi| {
                if !g.flagged[pi] {
                    return false;
                }
                let (a, b) = (g.proc_locks[pi][0].0, g.proc_locks[pi][1].0);
                if !comp_set.contains(&a) || !comp_set.contains(&b) {
                    return false;
                }
                let mut seen = BTreeSet::from([a]);
                let mut stack = vec![a];
                while let Some(t) = stack.pop() {
                    for &&(x, p, y) in &internal {
                        if p.0 == pi || x.0 != t {
                            continue;
                        }
                        if seen.insert(y.0) {
                            stack.push(y.0);
                        }
                    }
                }
                seen.contains(&b)
            });
            if both_in {
                classes[ci] = SccClass::DirectSemiDeadlock;
            }
        }
    }
    // propagate backwards: a component reaching a direct (semi-)deadlock
    let mut reach_dd = vec![false; sccs.len()];
    let mut reach_sd = vec![false; sccs.len()];
    let mut csucc2: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); sccs.len()];
    for &(a, _, b) in &g.edges {
        let (ca, cb) = (comp_of[&a.0], comp_of[&b.0]);
        if ca != cb {
            csucc2[ca].insert(cb);
        }
    }
    for ci in (0..sccs.len()).rev() {
        // topological order: successors have larger indices
        reach_dd[ci] = classes[ci] == SccClass::DirectDeadlock
            || csucc2[ci].iter().any(|&d| reach_dd[d]);
        reach_sd[ci] = matches!(classes[ci], SccClass::DirectDeadlock | SccClass::DirectSemiDeadlock)
            || csucc2[ci].iter().any(|&d| reach_sd[d]);
    }
    let mut bt = BTreeSet::new();
    for ci in 0..sccs.len() {
        if classes[ci] == SccClass::Plain {
            if reach_dd[ci] {
                classes[ci] = SccClass::Deadlock;
            } else if reach_sd[ci] {
                classes[ci] = SccClass::SemiDeadlock;
            }
        }
        if reach_sd[ci] {
            bt.extend(sccs[ci].iter().map(|&l| LockId(l)));
        }
    }
    SccAnalysis {
        sccs: sccs.iter().map(|c| c.iter().map(|&l| LockId(l)).collect()).collect(),
        classes,
        bt,
    }
}

#[derive(Debug)]
pub struct ExclusiveDecision {
    pub winning: bool,
    pub strategy: Option<Strategy>,
    pub graph: UnavoidableGraph,
    pub analysis: SccAnalysis,
}

/// Decides existence of a winning locally-live strategy for an exclusive
/// 2LSS: the system wins iff some process can stay clear of the
/// bad-territory locks. On a win the full strategy is assembled: that
/// process avoids bad territory, processes that can confine themselves to
/// their unavoidable edges do so, and the rest orient their edge from bad
/// to free territory or along the component order.
pub fn decide_exclusive(lss: &Lss) -> Result<ExclusiveDecision> {
    if !lss.is_two_lock() {
        return Err(Error::NotTwoLock("decide_exclusive needs at most two locks per process".into()));
    }
    if let Err(bad) = check_exclusive(lss) {
        return Err(Error::NotExclusive(format!(
            "state {} of process {} mixes acquires with other transitions",
            bad[0].1, bad[0].0
        )));
    }
    let padded = lss.pad_to_two_locks()?;
    let anns: Vec<AnnAutomaton> = (0..padded.processes.len())
        .map(|i| annotate(&padded, ProcId(i), AnnMode::TwoLock, &[]))
        .collect::<Result<_>>()?;
    // every process needs some locally-live strategy for the question to
    // make sense; otherwise nothing wins
    let mut full_certs: Vec<LocalStrategy> = Vec::new();
    for (pi, ann) in anns.iter().enumerate() {
        let locks = [padded.processes[pi].locks[0], padded.processes[pi].locks[1]];
        let universe: BTreeSet<Pattern2> = pattern_universe(locks, true).into_iter().collect();
        match achievable(&padded, ann, &universe, true) {
            Some(c) => full_certs.push(c),
            None => {
                let g = unavoidable_graph(&padded, &anns);
                let analysis = classify_sccs(padded.locks.len(), &g);
                return Ok(ExclusiveDecision { winning: false, strategy: None, graph: g, analysis });
            }
        }
    }
    let g = unavoidable_graph(&padded, &anns);
    let analysis = classify_sccs(padded.locks.len(), &g);
    let bt = &analysis.bt;

    let comp_of: BTreeMap<usize, usize> = analysis
        .sccs
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| c.iter().map(move |t| (t.0, ci)))
        .collect();

    // the distinguished process: avoids owning or requesting bad territory
    let mut chosen: Option<(usize, LocalStrategy)> = None;
    for (pi, ann) in anns.iter().enumerate() {
        let locks = [padded.processes[pi].locks[0], padded.processes[pi].locks[1]];
        let cand: BTreeSet<Pattern2> = pattern_universe(locks, true)
            .into_iter()
            .filter(|p| {
                p.owns.iter().all(|t| !bt.contains(t)) && p.blocks.iter().all(|t| !bt.contains(t))
            })
            .collect();
        if let Some(cert) = achievable(&padded, ann, &cand, true) {
            chosen = Some((pi, cert));
            break;
        }
    }
    let (p_star, p_cert) = match chosen {
        Some(c) => c,
        None => {
            return Ok(ExclusiveDecision { winning: false, strategy: None, graph: g, analysis })
        }
    };

    // Assemble the full strategy. Every process is confined so that, within
    // free territory, the lock graph keeps exactly the components of the
    // unavoidable graph: either it induces only its unavoidable edges, or a
    // single edge oriented bad-to-free / earlier-to-later component. The
    // distinguished process additionally never touches bad territory.
    let avoid_bt = |pat: &Pattern2| {
        pat.owns.iter().all(|t| !bt.contains(t)) && pat.blocks.iter().all(|t| !bt.contains(t))
    };
    let mut locals: Vec<LocalStrategy> = Vec::with_capacity(anns.len());
    for (qi, ann) in anns.iter().enumerate() {
        let star = qi == p_star;
        let filter = |pats: Vec<Pattern2>| -> BTreeSet<Pattern2> {
            pats.into_iter().filter(|p| !star || avoid_bt(p)).collect()
        };
        let locks = [padded.processes[qi].locks[0], padded.processes[qi].locks[1]];
        // case (i): confine q to its unavoidable edges
        let mut base = empty_hand_patterns(locks);
        for &(a, p, b) in &g.edges {
            if p.0 == qi {
                base.extend(edge_patterns(a, b));
            }
        }
        if let Some(cert) = achievable(&padded, ann, &filter(base), true) {
            locals.push(cert);
            continue;
        }
        // case (ii): q induces an edge; pick its direction
        let [a, b] = locks;
        let dir = match (bt.contains(&a), bt.contains(&b)) {
            (true, true) => None, // only edges inside bad territory
            (true, false) => Some((a, b)),
            (false, true) => Some((b, a)),
            (false, false) => {
                let (ca, cb) = (comp_of[&a.0], comp_of[&b.0]);
                if ca <= cb {
                    Some((a, b))
                } else {
                    Some((b, a))
                }
            }
        };
        let cert = match dir {
            None if star => Some(p_cert.clone()),
            None => Some(full_certs[qi].clone()),
            Some((x, y)) => {
                let mut base = empty_hand_patterns(locks);
                base.extend(edge_patterns(x, y));
                achievable(&padded, ann, &filter(base), true)
            }
        };
        let cert = match cert {
            Some(c) => c,
            None if star => p_cert.clone(),
            None => {
                return Err(Error::Internal(format!(
                    "process {} cannot be oriented within the component order",
                    padded.processes[qi].name
                )))
            }
        };
        locals.push(cert);
    }
    let strat = Strategy(
        anns.iter()
            .zip(&locals)
            .map(|(ann, local)| {
                (padded.processes[ann.proc.0].name.clone(), local_to_rules(&padded, ann, local))
            })
            .collect(),
    );
    Ok(ExclusiveDecision { winning: true, strategy: Some(strat), graph: g, analysis })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_lss;

    #[test]
    fn exclusivity_check() {
        let lss = parse_lss(
            r#"{"locks": ["t1"], "processes": [
                {"id": "p", "states": ["a", "b"], "init": "a",
                 "transitions": [
                   {"src": "a", "action": "g", "op": {"kind": "get", "lock": "t1"}, "dst": "b", "controllable": false},
                   {"src": "a", "action": "skip", "op": {"kind": "nop"}, "dst": "a", "controllable": false}
                 ]}
            ]}"#,
        )
        .unwrap();
        let bad = check_exclusive(&lss).unwrap_err();
        assert_eq!(bad, vec![("p".to_string(), "a".to_string())]);
    }

    #[test]
    fn tarjan_basic() {
        let mut succ: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        succ.insert(0, BTreeSet::from([1]));
        succ.insert(1, BTreeSet::from([0, 2]));
        let sccs = tarjan_sccs(3, &succ);
        let mut sizes: Vec<usize> = sccs.iter().map(|c| c.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 2]);
    }
}
