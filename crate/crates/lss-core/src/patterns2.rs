//! Patterns of risky behavior for systems where every process uses two
//! locks, and the decision procedure for general (not necessarily locally
//! live) strategies.
//!
//! A run is risky when every transition the strategy still allows is an
//! acquire. Its pattern records the owned locks, the requested locks, and
//! whether the last lock operation was a release (strong) or not (weak).
//! A strategy loses iff one pattern per process can be selected such that
//! every requested lock is owned by someone, owned sets are disjoint, and
//! the order constraints of strong patterns are acyclic.

use std::collections::{BTreeMap, BTreeSet};

use crate::annotate::{annotate, AnnAutomaton, AnnMode, AnnState};
use crate::error::{Error, Result};
use crate::model::{LockId, Lss, ProcId};
use crate::strategy::{self, local_to_rules, LocalStrategy, Strategy};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pattern2 {
    pub owns: BTreeSet<LockId>,
    pub blocks: BTreeSet<LockId>,
    pub strong: bool,
}

impl Pattern2 {
    pub fn to_json(&self, lss: &Lss) -> serde_json::Value {
        serde_json::json!({
            "owns": self.owns.iter().map(|t| lss.locks[t.0].clone()).collect::<Vec<_>>(),
            "blocks": self.blocks.iter().map(|t| lss.locks[t.0].clone()).collect::<Vec<_>>(),
            "strong": self.strong,
        })
    }
}

/// The risky behavior of one two-lock process.
#[derive(Debug, Clone)]
pub struct ProcBehavior {
    pub name: String,
    pub locks: [LockId; 2],
    pub patterns: BTreeSet<Pattern2>,
}

/// Per-process pattern sets of a whole system.
#[derive(Debug, Clone)]
pub struct Behavior2(pub Vec<ProcBehavior>);

fn mask_to_set(mask: u64) -> BTreeSet<LockId> {
    (0..64).filter(|i| mask >> i & 1 == 1).map(|i| LockId(i as usize)).collect()
}

fn state_strong(s: &AnnState) -> bool {
    s.owned.count_ones() == 1 && s.release_bit
}

/// All patterns a process over lock pair `locks` can possibly exhibit:
/// owned and requested sets are disjoint subsets of the pair, a strong
/// pattern owns exactly one lock. In locally-live mode the requested set is
/// nonempty and owning both locks is impossible (such a process could never
/// move again).
pub fn pattern_universe(locks: [LockId; 2], locally_live: bool) -> Vec<Pattern2> {
    let [a, b] = locks;
    let subsets = [
        BTreeSet::new(),
        BTreeSet::from([a]),
        BTreeSet::from([b]),
        BTreeSet::from([a, b]),
    ];
    let mut out = Vec::new();
    for owns in &subsets {
        for blocks in &subsets {
            if !owns.is_disjoint(blocks) {
                continue;
            }
            if locally_live && (blocks.is_empty() || owns.len() == 2) {
                continue;
            }
            out.push(Pattern2 { owns: owns.clone(), blocks: blocks.clone(), strong: false });
            if owns.len() == 1 {
                out.push(Pattern2 { owns: owns.clone(), blocks: blocks.clone(), strong: true });
            }
        }
    }
    out.sort();
    out
}

/// Patterns of the risky endpoints reachable under `local` in the two-lock
/// annotated automaton.
pub fn extract_behavior(
    lss: &Lss,
    ann: &AnnAutomaton,
    local: &LocalStrategy,
) -> BTreeSet<Pattern2> {
    assert_eq!(ann.mode, AnnMode::TwoLock);
    let reach = strategy::reachable_under(lss, ann, local);
    let mut out = BTreeSet::new();
    for sid in 0..ann.n_states() {
        if !reach[sid] {
            continue;
        }
        let avail: Vec<_> = ann.trans[sid]
            .iter()
            .filter(|t| strategy::allows(lss, ann, local, sid, t.action))
            .collect();
        if avail.iter().all(|t| t.op.is_get()) {
            let s = &ann.states[sid];
            out.insert(Pattern2 {
                owns: mask_to_set(s.owned),
                blocks: avail.iter().map(|t| t.op.lock().unwrap()).collect(),
                strong: state_strong(s),
            });
        }
    }
    out
}

/// Iterative bad-state deletion: looks for a positional strategy whose
/// every reachable risky endpoint has a pattern inside `candidate`. A state
/// survives if some allowed set of its remaining transitions contains every
/// environment transition and either contains a non-acquire transition or
/// yields a candidate pattern; deleting a state deletes its in-going
/// transitions, and losing an uncontrollable in-going transition kills the
/// source. Returns the witnessing strategy, or `None`.
pub fn achievable(
    lss: &Lss,
    ann: &AnnAutomaton,
    candidate: &BTreeSet<Pattern2>,
    locally_live: bool,
) -> Option<LocalStrategy> {
    assert_eq!(ann.mode, AnnMode::TwoLock);
    let p = &lss.processes[ann.proc.0];
    let mut alive = vec![true; ann.n_states()];
    let mut chosen: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); ann.n_states()];
    loop {
        let mut changed = false;
        for sid in 0..ann.n_states() {
            if !alive[sid] {
                continue;
            }
            let s = &ann.states[sid];
            let mut good = true;
            let mut allow: BTreeSet<usize> = BTreeSet::new();
            // every environment transition must stay; one into a dead state
            // kills this state
            if ann.trans[sid].iter().any(|t| !p.controllable[t.action] && !alive[t.dst]) {
                good = false;
            } else {
                let avail: Vec<_> =
                    ann.trans[sid].iter().filter(|t| alive[t.dst]).collect();
                let env: Vec<_> =
                    avail.iter().filter(|t| !p.controllable[t.action]).collect();
                if avail.iter().any(|t| !t.op.is_get()) {
                    // keeping everything includes a non-acquire: not risky
                    allow = avail.iter().map(|t| t.action).collect();
                } else {
                    // all remaining transitions acquire: pick controllable
                    // acquires to keep, environment acquires are forced
                    let ctl: Vec<_> =
                        avail.iter().filter(|t| p.controllable[t.action]).collect();
                    let forced: BTreeSet<LockId> =
                        env.iter().map(|t| t.op.lock().unwrap()).collect();
                    let owns = mask_to_set(s.owned);
                    let strong = state_strong(s);
                    let mut found = false;
                    for m in (0..(1u32 << ctl.len())).rev() {
                        let keep: Vec<_> = (0..ctl.len()).filter(|i| m >> i & 1 == 1).collect();
                        if locally_live && keep.is_empty() && env.is_empty() {
                            continue;
                        }
                        let mut blocks = forced.clone();
                        blocks.extend(keep.iter().map(|&i| ctl[i].op.lock().unwrap()));
                        let pat = Pattern2 { owns: owns.clone(), blocks, strong };
                        if candidate.contains(&pat) {
                            allow = keep.iter().map(|&i| ctl[i].action).collect();
                            allow.extend(env.iter().map(|t| t.action));
                            found = true;
                            break;
                        }
                    }
                    good = found;
                }
            }
            if good {
                // store only the controllable part
                let ctl_allow: BTreeSet<usize> = allow
                    .iter()
                    .copied()
                    .filter(|&a| p.controllable[a])
                    .collect();
                if chosen[sid] != ctl_allow {
                    chosen[sid] = ctl_allow;
                }
            } else {
                alive[sid] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if !alive[ann.init] {
        return None;
    }
    let local: LocalStrategy = chosen;
    debug_assert!(extract_behavior(lss, ann, &local).is_subset(candidate));
    debug_assert!(!locally_live || strategy::is_locally_live(lss, ann, &local));
    Some(local)
}

/// Minimal achievable pattern sets of one process (antichain), each with a
/// witnessing strategy. Enumerates every subset of the pattern universe,
/// which is constant-size for a two-lock process.
pub fn minimal_behaviors(
    lss: &Lss,
    ann: &AnnAutomaton,
    locally_live: bool,
) -> Vec<(BTreeSet<Pattern2>, LocalStrategy)> {
    let p = &lss.processes[ann.proc.0];
    let universe = pattern_universe([p.locks[0], p.locks[1]], locally_live);
    // only patterns producible at some annotated state can ever be
    // extracted; restricting the candidate enumeration to those is sound
    // and shrinks the search space a lot
    let mut producible: BTreeSet<Pattern2> = BTreeSet::new();
    for sid in 0..ann.n_states() {
        let s = &ann.states[sid];
        let owns = mask_to_set(s.owned);
        let strong = state_strong(s);
        let gets: BTreeSet<LockId> = ann.trans[sid]
            .iter()
            .filter_map(|t| t.op.lock().filter(|_| t.op.is_get()))
            .collect();
        let gets: Vec<LockId> = gets.into_iter().collect();
        for m in 0..(1u32 << gets.len()) {
            let blocks: BTreeSet<LockId> =
                (0..gets.len()).filter(|i| m >> i & 1 == 1).map(|i| gets[i]).collect();
            producible.insert(Pattern2 { owns: owns.clone(), blocks, strong });
        }
    }
    let universe: Vec<Pattern2> =
        universe.into_iter().filter(|p| producible.contains(p)).collect();
    let n = universe.len();
    let mut realized: BTreeMap<BTreeSet<Pattern2>, LocalStrategy> = BTreeMap::new();
    for mask in 0u32..(1 << n) {
        let cand: BTreeSet<Pattern2> =
            (0..n).filter(|i| mask >> i & 1 == 1).map(|i| universe[i].clone()).collect();
        if realized.keys().any(|b| b.is_subset(&cand)) {
            continue; // a subset is already achievable; nothing new can be minimal
        }
        if let Some(cert) = achievable(lss, ann, &cand, locally_live) {
            let concrete = extract_behavior(lss, ann, &cert);
            realized.entry(concrete).or_insert(cert);
        }
    }
    let keys: Vec<_> = realized.keys().cloned().collect();
    let mut out: Vec<_> = realized
        .into_iter()
        .filter(|(b, _)| !keys.iter().any(|o| o != b && o.is_subset(b)))
        .collect();
    out.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)));
    out
}

/// A per-process pattern selection witnessing a reachable deadlock,
/// together with a compatible total lock order.
#[derive(Debug, Clone)]
pub struct DeadlockSelection {
    pub patterns: Vec<(String, Pattern2)>,
    pub order: Vec<LockId>,
}

impl DeadlockSelection {
    pub fn to_json(&self, lss: &Lss) -> serde_json::Value {
        serde_json::json!({
            "patterns": self.patterns.iter()
                .map(|(p, pat)| (p.clone(), pat.to_json(lss)))
                .collect::<BTreeMap<_, _>>(),
            "order": self.order.iter().map(|t| lss.locks[t.0].clone()).collect::<Vec<_>>(),
        })
    }
}

fn has_cycle(edges: &[(LockId, LockId)]) -> bool {
    let nodes: BTreeSet<LockId> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    // DFS-based cycle check on a tiny digraph
    fn visit(
        n: LockId,
        edges: &[(LockId, LockId)],
        state: &mut BTreeMap<LockId, u8>,
    ) -> bool {
        match state.get(&n) {
            Some(1) => return true,
            Some(2) => return false,
            _ => {}
        }
        state.insert(n, 1);
        for &(a, b) in edges {
            if a == n && visit(b, edges, state) {
                return true;
            }
        }
        state.insert(n, 2);
        false
    }
    let mut state = BTreeMap::new();
    nodes.iter().any(|&n| visit(n, edges, &mut state))
}

pub(crate) fn topo_order(all_locks: &BTreeSet<LockId>, edges: &[(LockId, LockId)]) -> Vec<LockId> {
    // Kahn's algorithm; ties broken by lock index
    let mut order = Vec::new();
    let mut remaining: BTreeSet<LockId> = all_locks.clone();
    while !remaining.is_empty() {
        let next = *remaining
            .iter()
            .find(|&&t| {
                !edges.iter().any(|&(a, b)| b == t && remaining.contains(&a) && a != t)
            })
            .expect("acyclic by construction");
        order.push(next);
        remaining.remove(&next);
    }
    order
}

/// Searches for a deadlock selection: one pattern per process such that
/// (i) every requested lock is owned, (ii) owned sets are pairwise
/// disjoint, (iii) the strong-pattern order constraints are acyclic.
pub fn deadlock_condition(behavior: &Behavior2) -> Option<DeadlockSelection> {
    let mut procs: Vec<&ProcBehavior> = behavior.0.iter().collect();
    if procs.iter().any(|p| p.patterns.is_empty()) {
        return None;
    }
    procs.sort_by_key(|p| p.patterns.len());
    let mut chosen: Vec<(String, Pattern2)> = Vec::new();
    let mut strong_edges: Vec<(LockId, LockId)> = Vec::new();

    fn rec(
        procs: &[&ProcBehavior],
        i: usize,
        owned: u64,
        chosen: &mut Vec<(String, Pattern2)>,
        strong_edges: &mut Vec<(LockId, LockId)>,
    ) -> bool {
        if i == procs.len() {
            let all_owned: BTreeSet<LockId> =
                chosen.iter().flat_map(|(_, p)| p.owns.iter().copied()).collect();
            return chosen
                .iter()
                .flat_map(|(_, p)| p.blocks.iter())
                .all(|b| all_owned.contains(b));
        }
        let pb = procs[i];
        for pat in &pb.patterns {
            if pat.owns.iter().any(|t| owned & t.bit() != 0) {
                continue;
            }
            let mut added = 0;
            if pat.strong {
                let t = *pat.owns.iter().next().expect("strong pattern owns one lock");
                let other = if pb.locks[0] == t { pb.locks[1] } else { pb.locks[0] };
                strong_edges.push((t, other));
                added = 1;
                if has_cycle(strong_edges) {
                    strong_edges.pop();
                    continue;
                }
            }
            chosen.push((pb.name.clone(), pat.clone()));
            let mask = pat.owns.iter().fold(owned, |m, t| m | t.bit());
            if rec(procs, i + 1, mask, chosen, strong_edges) {
                return true;
            }
            chosen.pop();
            for _ in 0..added {
                strong_edges.pop();
            }
        }
        false
    }

    if rec(&procs, 0, 0, &mut chosen, &mut strong_edges) {
        let all_locks: BTreeSet<LockId> =
            behavior.0.iter().flat_map(|p| p.locks.iter().copied()).collect();
        let order = topo_order(&all_locks, &strong_edges);
        chosen.sort_by(|a, b| a.0.cmp(&b.0));
        Some(DeadlockSelection { patterns: chosen, order })
    } else {
        None
    }
}

#[derive(Debug, Clone)]
pub struct GeneralDecision {
    pub winning: bool,
    pub strategy: Option<Strategy>,
    pub selection: Option<DeadlockSelection>,
}

/// Decides whether a 2LSS has some winning (not necessarily locally live)
/// control strategy: per process the minimal achievable pattern sets are
/// enumerated, and the system wins iff some choice across processes admits
/// no deadlock selection.
pub fn decide_general_2lss(lss: &Lss) -> Result<GeneralDecision> {
    if !lss.is_two_lock() {
        return Err(Error::NotTwoLock("decide_general_2lss needs at most two locks per process".into()));
    }
    let padded = lss.pad_to_two_locks()?;
    let mut d = decide_by_patterns(&padded, false)?;
    if let Some(sel) = &mut d.selection {
        // drop padding locks from the witness order
        sel.order.retain(|t| t.0 < lss.locks.len());
    }
    Ok(d)
}

pub(crate) fn decide_by_patterns(padded: &Lss, locally_live: bool) -> Result<GeneralDecision> {
    let mut anns = Vec::new();
    let mut mins = Vec::new();
    for i in 0..padded.processes.len() {
        let ann = annotate(padded, ProcId(i), AnnMode::TwoLock, &[])?;
        let m = minimal_behaviors(padded, &ann, locally_live);
        if m.is_empty() {
            // no admissible local strategy at all (locally-live mode)
            return Ok(GeneralDecision { winning: false, strategy: None, selection: None });
        }
        anns.push(ann);
        mins.push(m);
    }
    let total: u128 = mins.iter().map(|m| m.len() as u128).product();
    if total > 1_000_000 {
        return Err(Error::LimitExceeded(format!("{total} behavior choices")));
    }
    let mut first_selection = None;
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
        match deadlock_condition(&behavior) {
            None => {
                let strat = Strategy(
                    idx.iter()
                        .enumerate()
                        .map(|(p, &i)| {
                            (
                                padded.processes[p].name.clone(),
                                local_to_rules(padded, &anns[p], &mins[p][i].1),
                            )
                        })
                        .collect(),
                );
                return Ok(GeneralDecision { winning: true, strategy: Some(strat), selection: None });
            }
            Some(sel) => {
                if first_selection.is_none() {
                    first_selection = Some(sel);
                }
            }
        }
        let mut pos = mins.len();
        loop {
            if pos == 0 {
                return Ok(GeneralDecision {
                    winning: false,
                    strategy: None,
                    selection: first_selection,
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
    use crate::model::parse_lss;
    use crate::oracle::{exists_winning_oracle, OracleOpts};

    fn cross_deadlock() -> Lss {
        parse_lss(
            r#"{"locks": ["t1", "t2"], "processes": [
                {"id": "p", "states": ["a", "b", "c"], "init": "a",
                 "transitions": [
                   {"src": "a", "action": "pg1", "op": {"kind": "get", "lock": "t1"}, "dst": "b", "controllable": false},
                   {"src": "b", "action": "pg2", "op": {"kind": "get", "lock": "t2"}, "dst": "c", "controllable": false},
                   {"src": "c", "action": "ploop", "op": {"kind": "nop"}, "dst": "c", "controllable": false}
                 ]},
                {"id": "q", "states": ["a", "b", "c"], "init": "a",
                 "transitions": [
                   {"src": "a", "action": "qg2", "op": {"kind": "get", "lock": "t2"}, "dst": "b", "controllable": false},
                   {"src": "b", "action": "qg1", "op": {"kind": "get", "lock": "t1"}, "dst": "c", "controllable": false},
                   {"src": "c", "action": "qloop", "op": {"kind": "nop"}, "dst": "c", "controllable": false}
                 ]}
            ]}"#,
        )
        .unwrap()
    }

    #[test]
    fn universe_sizes() {
        let u = pattern_universe([LockId(0), LockId(1)], false);
        assert_eq!(u.len(), 13);
        let u = pattern_universe([LockId(0), LockId(1)], true);
        assert_eq!(u.len(), 7);
    }

    #[test]
    fn extract_on_cross() {
        let lss = cross_deadlock();
        let ann = annotate(&lss, ProcId(0), AnnMode::TwoLock, &[]).unwrap();
        let local: LocalStrategy = vec![BTreeSet::new(); ann.n_states()];
        let b = extract_behavior(&lss, &ann, &local);
        assert!(b.contains(&Pattern2 {
            owns: BTreeSet::new(),
            blocks: BTreeSet::from([LockId(0)]),
            strong: false
        }));
        assert!(b.contains(&Pattern2 {
            owns: BTreeSet::from([LockId(0)]),
            blocks: BTreeSet::from([LockId(1)]),
            strong: false
        }));
        assert_eq!(b.len(), 2); // state c is never risky
    }

    #[test]
    fn cross_deadlock_loses_and_matches_oracle() {
        let lss = cross_deadlock();
        let d = decide_general_2lss(&lss).unwrap();
        assert!(!d.winning);
        let sel = d.selection.unwrap();
        assert_eq!(sel.patterns.len(), 2);
        let (win, _) = exists_winning_oracle(&lss, &OracleOpts::default()).unwrap();
        assert!(!win);
    }

    #[test]
    fn single_process_waiting_is_losing() {
        // one process that just gets a lock and stops: risky sink
        let lss = parse_lss(
            r#"{"locks": ["t1"], "processes": [
                {"id": "p", "states": ["a", "b"], "init": "a",
                 "transitions": [
                   {"src": "a", "action": "g", "op": {"kind": "get", "lock": "t1"}, "dst": "b", "controllable": false}
                 ]}
            ]}"#,
        )
        .unwrap();
        let d = decide_general_2lss(&lss).unwrap();
        assert!(!d.winning); // state b is a dead end: pattern {t1} -> {} selects
    }

    #[test]
    fn achievable_certificate_behavior_contained() {
        let lss = cross_deadlock();
        let ann = annotate(&lss.pad_to_two_locks().unwrap(), ProcId(0), AnnMode::TwoLock, &[])
            .unwrap();
        for (b, cert) in minimal_behaviors(&lss.pad_to_two_locks().unwrap(), &ann, false) {
            assert!(extract_behavior(&lss.pad_to_two_locks().unwrap(), &ann, &cert).is_subset(&b));
        }
    }
}
