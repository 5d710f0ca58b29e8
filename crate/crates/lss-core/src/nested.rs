//! Nested-locking systems: releases follow the LIFO order of acquisitions.
//! Runs factor uniquely into neutral segments separated by the last
//! acquisitions of the finally-held locks (the "stairs"), and winning
//! strategies are characterized by the stair patterns a strategy can be
//! confined to.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde_json::json;

use crate::annotate::{annotate, AnnAutomaton, AnnMode};
use crate::error::{Error, Result};
use crate::model::{LockId, LockOp, Lss, ProcId};
use crate::oracle::enumerate_local_candidates;
use crate::patterns2::topo_order;
use crate::strategy::{local_to_rules, LocalStrategy, Strategy};

/// A violation of the nested discipline: a shortest local run after which a
/// release of a non-top held lock is enabled.
#[derive(Debug, Clone)]
pub struct NestedViolation {
    pub proc: String,
    pub run: Vec<(String, LockOp)>,
}

/// True iff no process can ever release a lock other than the one it
/// acquired last.
pub fn check_nested(lss: &Lss) -> (bool, Option<NestedViolation>) {
    for p in &lss.processes {
        // BFS over (state, held stack), shortest run to an enabled bad rel
        let start = (p.init, Vec::<LockId>::new());
        let mut seen: HashMap<(usize, Vec<LockId>), usize> = HashMap::new();
        let mut nodes: Vec<((usize, Vec<LockId>), Option<(usize, usize)>)> =
            vec![(start.clone(), None)];
        seen.insert(start, 0);
        let mut queue = VecDeque::from([0usize]);
        while let Some(ni) = queue.pop_front() {
            let (state, stack) = nodes[ni].0.clone();
            for &ti in p.outgoing(state) {
                let tr = &p.transitions[ti];
                match tr.op {
                    LockOp::Rel(t) if stack.contains(&t) && stack.last() != Some(&t) => {
                        let mut run = vec![(p.actions[tr.action].clone(), tr.op)];
                        let mut cur = ni;
                        while let Some((parent, pt)) = nodes[cur].1 {
                            let ptr = &p.transitions[pt];
                            run.push((p.actions[ptr.action].clone(), ptr.op));
                            cur = parent;
                        }
                        run.reverse();
                        return (false, Some(NestedViolation { proc: p.name.clone(), run }));
                    }
                    _ => {}
                }
                let next = match tr.op {
                    LockOp::Nop => Some(stack.clone()),
                    LockOp::Get(t) if !stack.contains(&t) => {
                        let mut s = stack.clone();
                        s.push(t);
                        Some(s)
                    }
                    LockOp::Rel(t) if stack.last() == Some(&t) => {
                        let mut s = stack.clone();
                        s.pop();
                        Some(s)
                    }
                    _ => None, // discipline violation or the bad rel above
                };
                if let Some(s) = next {
                    let key = (tr.dst, s);
                    if !seen.contains_key(&key) {
                        seen.insert(key.clone(), nodes.len());
                        nodes.push((key, Some((ni, ti))));
                        queue.push_back(nodes.len() - 1);
                    }
                }
            }
        }
    }
    (true, None)
}

/// The unique factorization of a nested run: neutral segments separated by
/// the last acquisitions of the finally-held locks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StairDecomposition {
    /// finally-held locks, bottom of the stack first
    pub stairs: Vec<LockId>,
    /// index into the run of each distinguished acquisition
    pub cuts: Vec<usize>,
}

pub fn stair_decompose(run: &[LockOp]) -> Result<StairDecomposition> {
    let mut stack: Vec<(LockId, usize)> = Vec::new();
    for (i, op) in run.iter().enumerate() {
        match *op {
            LockOp::Nop => {}
            LockOp::Get(t) => {
                if stack.iter().any(|&(h, _)| h == t) {
                    return Err(Error::Model(format!("run acquires held lock at step {i}")));
                }
                stack.push((t, i));
            }
            LockOp::Rel(t) => match stack.last() {
                Some(&(top, _)) if top == t => {
                    stack.pop();
                }
                Some(_) => {
                    return Err(Error::NotNested(format!(
                        "run releases non-top lock at step {i}"
                    )))
                }
                None => return Err(Error::Model(format!("run releases free lock at step {i}"))),
            },
        }
    }
    // the stack entries record exactly the last acquisitions: any later get
    // of a finally-held lock would sit above in the stack
    let stairs: Vec<LockId> = stack.iter().map(|&(t, _)| t).collect();
    let cuts: Vec<usize> = stack.iter().map(|&(_, i)| i).collect();
    debug_assert!(cuts.windows(2).all(|w| w[0] < w[1]));
    Ok(StairDecomposition { stairs, cuts })
}

impl StairDecomposition {
    /// The neutral segments u_1 .. u_{k+1} around the cuts.
    pub fn segments<'a>(&self, run: &'a [LockOp]) -> Vec<&'a [LockOp]> {
        let mut out = Vec::with_capacity(self.cuts.len() + 1);
        let mut from = 0;
        for &c in &self.cuts {
            out.push(&run[from..c]);
            from = c + 1;
        }
        out.push(&run[from..]);
        out
    }
}

/// Summary of a risky situation in a nested process: the held locks, the
/// locks it is blocked on, and the generating pairs of the acquisition
/// order (t, t') with t' operated while t was held.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct StairPattern {
    pub owns: BTreeSet<LockId>,
    pub blocks: BTreeSet<LockId>,
    pub order: BTreeSet<(LockId, LockId)>,
}

impl StairPattern {
    pub fn to_json(&self, lss: &Lss) -> serde_json::Value {
        let name = |t: &LockId| lss.locks[t.0].clone();
        json!({
            "owns": self.owns.iter().map(name).collect::<Vec<_>>(),
            "blocks": self.blocks.iter().map(name).collect::<Vec<_>>(),
            "order_pairs": self.order.iter()
                .map(|(a, b)| vec![name(a), name(b)])
                .collect::<Vec<_>>(),
        })
    }
}

fn order_pairs(stack: &[LockId], touched: &[u64]) -> BTreeSet<(LockId, LockId)> {
    let mut out = BTreeSet::new();
    for (i, &t) in stack.iter().enumerate() {
        let mut m = touched[i] & !t.bit();
        while m != 0 {
            let b = m.trailing_zeros() as usize;
            out.insert((t, LockId(b)));
            m &= m - 1;
        }
    }
    out
}

fn pairs_acyclic(pairs: &BTreeSet<(LockId, LockId)>) -> bool {
    !has_pair_cycle(pairs.iter().copied())
}

fn has_pair_cycle(pairs: impl IntoIterator<Item = (LockId, LockId)>) -> bool {
    let mut succ: BTreeMap<LockId, BTreeSet<LockId>> = BTreeMap::new();
    for (a, b) in pairs {
        succ.entry(a).or_default().insert(b);
    }
    let nodes: BTreeSet<LockId> =
        succ.iter().flat_map(|(a, bs)| std::iter::once(*a).chain(bs.iter().copied())).collect();
    let mut color: BTreeMap<LockId, u8> = BTreeMap::new();
    for &n in &nodes {
        if color.get(&n).copied().unwrap_or(0) != 0 {
            continue;
        }
        let mut stack = vec![(n, false)];
        while let Some((v, done)) = stack.pop() {
            if done {
                color.insert(v, 2);
                continue;
            }
            match color.get(&v).copied().unwrap_or(0) {
                1 => return true,
                2 => continue,
                _ => {}
            }
            color.insert(v, 1);
            stack.push((v, true));
            if let Some(bs) = succ.get(&v) {
                for &w in bs {
                    match color.get(&w).copied().unwrap_or(0) {
                        1 => return true,
                        2 => {}
                        _ => stack.push((w, false)),
                    }
                }
            }
        }
    }
    false
}

/// The stair patterns of all risky reachable states under a local strategy.
pub fn extract_stair_behavior(
    lss: &Lss,
    ann: &AnnAutomaton,
    local: &LocalStrategy,
) -> BTreeSet<StairPattern> {
    assert_eq!(ann.mode, AnnMode::Nested);
    let p = &lss.processes[ann.proc.0];
    let mut out = BTreeSet::new();
    let mut seen = vec![false; ann.n_states()];
    let mut stack = vec![ann.init];
    seen[ann.init] = true;
    while let Some(sid) = stack.pop() {
        let s = &ann.states[sid];
        let allowed: Vec<_> = ann.trans[sid]
            .iter()
            .filter(|t| !p.controllable[t.action] || local[sid].contains(&t.action))
            .collect();
        if allowed.iter().all(|t| t.op.is_get()) {
            // includes sinks: blocked on nothing, owns still held forever
            let pat = StairPattern {
                owns: s.stack.iter().copied().collect(),
                blocks: allowed.iter().map(|t| t.op.lock().unwrap()).collect(),
                order: order_pairs(&s.stack, &s.touched),
            };
            debug_assert!(pairs_acyclic(&pat.order));
            out.insert(pat);
        }
        for t in allowed {
            if !seen[t.dst] {
                seen[t.dst] = true;
                stack.push(t.dst);
            }
        }
    }
    out
}

/// Bad-state deletion on the nested annotation: keeps states whose risky
/// situations can be confined to the candidate pattern set.
pub fn achievable_nested(
    lss: &Lss,
    ann: &AnnAutomaton,
    candidate: &BTreeSet<StairPattern>,
) -> Option<LocalStrategy> {
    assert_eq!(ann.mode, AnnMode::Nested);
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
            if ann.trans[sid].iter().any(|t| !p.controllable[t.action] && !alive[t.dst]) {
                good = false;
            } else {
                let avail: Vec<_> = ann.trans[sid].iter().filter(|t| alive[t.dst]).collect();
                let env: Vec<_> = avail.iter().filter(|t| !p.controllable[t.action]).collect();
                if avail.iter().any(|t| !t.op.is_get()) {
                    allow = avail.iter().map(|t| t.action).collect();
                } else {
                    let ctl: Vec<_> = avail.iter().filter(|t| p.controllable[t.action]).collect();
                    let forced: BTreeSet<LockId> =
                        env.iter().map(|t| t.op.lock().unwrap()).collect();
                    let owns: BTreeSet<LockId> = s.stack.iter().copied().collect();
                    let order = order_pairs(&s.stack, &s.touched);
                    let mut found = false;
                    for m in (0..(1u32 << ctl.len())).rev() {
                        let keep: Vec<_> = (0..ctl.len()).filter(|i| m >> i & 1 == 1).collect();
                        let mut blocks = forced.clone();
                        blocks.extend(keep.iter().map(|&i| ctl[i].op.lock().unwrap()));
                        let pat =
                            StairPattern { owns: owns.clone(), blocks, order: order.clone() };
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
                let ctl_allow: BTreeSet<usize> =
                    allow.iter().copied().filter(|&a| p.controllable[a]).collect();
                chosen[sid] = ctl_allow;
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
    debug_assert!(extract_stair_behavior(lss, ann, &local).is_subset(candidate));
    Some(local)
}

pub type NestedBehavior = Vec<(String, BTreeSet<StairPattern>)>;

#[derive(Debug, Clone)]
pub struct StairSelection {
    pub patterns: Vec<(String, StairPattern)>,
    pub order: Vec<LockId>,
}

impl StairSelection {
    pub fn to_json(&self, lss: &Lss) -> serde_json::Value {
        json!({
            "patterns": self.patterns.iter()
                .map(|(p, pat)| json!({"process": p, "pattern": pat.to_json(lss)}))
                .collect::<Vec<_>>(),
            "order": self.order.iter().map(|t| lss.locks[t.0].clone()).collect::<Vec<_>>(),
        })
    }
}

/// One stair pattern per process with covered blocks, disjoint holdings,
/// and a total lock order compatible with every selected acquisition order.
pub fn stair_deadlock_condition(behavior: &NestedBehavior) -> Option<StairSelection> {
    if behavior.iter().any(|(_, pats)| pats.is_empty()) {
        return None;
    }
    let mut procs: Vec<&(String, BTreeSet<StairPattern>)> = behavior.iter().collect();
    procs.sort_by_key(|(_, pats)| pats.len());

    fn rec(
        procs: &[&(String, BTreeSet<StairPattern>)],
        i: usize,
        owned: u64,
        chosen: &mut Vec<(String, StairPattern)>,
        pairs: &mut Vec<(LockId, LockId)>,
    ) -> bool {
        if i == procs.len() {
            let all_owned: BTreeSet<LockId> =
                chosen.iter().flat_map(|(_, p)| p.owns.iter().copied()).collect();
            return chosen
                .iter()
                .flat_map(|(_, p)| p.blocks.iter())
                .all(|b| all_owned.contains(b));
        }
        let (name, pats) = procs[i];
        for pat in pats {
            if pat.owns.iter().any(|t| owned & t.bit() != 0) {
                continue;
            }
            pairs.extend(pat.order.iter().copied());
            if has_pair_cycle(pairs.iter().copied()) {
                pairs.truncate(pairs.len() - pat.order.len());
                continue;
            }
            chosen.push((name.clone(), pat.clone()));
            let mask = pat.owns.iter().fold(owned, |m, t| m | t.bit());
            if rec(procs, i + 1, mask, chosen, pairs) {
                return true;
            }
            chosen.pop();
            pairs.truncate(pairs.len() - pat.order.len());
        }
        false
    }

    let mut chosen = Vec::new();
    let mut pairs = Vec::new();
    if rec(&procs, 0, 0, &mut chosen, &mut pairs) {
        let locks: BTreeSet<LockId> = chosen
            .iter()
            .flat_map(|(_, p)| {
                p.owns
                    .iter()
                    .chain(p.blocks.iter())
                    .copied()
                    .chain(p.order.iter().flat_map(|&(a, b)| [a, b]))
            })
            .collect();
        let order = topo_order(&locks, &pairs);
        chosen.sort_by(|a, b| a.0.cmp(&b.0));
        Some(StairSelection { patterns: chosen, order })
    } else {
        None
    }
}

#[derive(Debug)]
pub struct NestedDecision {
    pub winning: bool,
    pub strategy: Option<Strategy>,
    pub selection: Option<StairSelection>,
}

/// Decides existence of a winning strategy for a nested-locking system by
/// enumerating, per process, the minimal achievable stair-behavior sets and
/// searching for a combination without a deadlock selection.
pub fn decide_nested(lss: &Lss, max_candidates: usize) -> Result<NestedDecision> {
    if let (false, Some(v)) = check_nested(lss) {
        return Err(Error::NotNested(format!(
            "process {} can release out of order after {} steps",
            v.proc,
            v.run.len() - 1
        )));
    }
    let anns: Vec<AnnAutomaton> = (0..lss.processes.len())
        .map(|i| annotate(lss, ProcId(i), AnnMode::Nested, &[]))
        .collect::<Result<_>>()?;
    // minimal behaviors per process, each with a certificate strategy
    let mut minimal: Vec<Vec<(BTreeSet<StairPattern>, LocalStrategy)>> = Vec::new();
    for (pi, ann) in anns.iter().enumerate() {
        let cands = enumerate_local_candidates(lss, ann, max_candidates, false)?;
        let mut behaviors: Vec<(BTreeSet<StairPattern>, LocalStrategy)> = Vec::new();
        for local in cands {
            let b = extract_stair_behavior(lss, ann, &local);
            if behaviors.iter().any(|(other, _)| other.is_subset(&b)) {
                continue;
            }
            behaviors.retain(|(other, _)| !b.is_subset(other));
            behaviors.push((b, local));
        }
        behaviors.sort_by(|a, b| (a.0.len(), &a.0).cmp(&(b.0.len(), &b.0)));
        if behaviors.is_empty() {
            return Err(Error::Internal(format!(
                "no strategy candidates for process {}",
                lss.processes[pi].name
            )));
        }
        minimal.push(behaviors);
    }
    let total: usize = minimal.iter().map(|b| b.len()).try_fold(1usize, |a, n| {
        a.checked_mul(n).filter(|&x| x <= 1_000_000)
    }).ok_or_else(|| Error::LimitExceeded("behavior combination count".into()))?;
    let _ = total;
    let mut idx = vec![0usize; minimal.len()];
    let mut first_selection: Option<StairSelection> = None;
    loop {
        let family: NestedBehavior = idx
            .iter()
            .enumerate()
            .map(|(pi, &i)| (lss.processes[pi].name.clone(), minimal[pi][i].0.clone()))
            .collect();
        match stair_deadlock_condition(&family) {
            None => {
                let strat = Strategy(
                    idx.iter()
                        .enumerate()
                        .map(|(pi, &i)| {
                            (
                                lss.processes[pi].name.clone(),
                                local_to_rules(lss, &anns[pi], &minimal[pi][i].1),
                            )
                        })
                        .collect(),
                );
                return Ok(NestedDecision {
                    winning: true,
                    strategy: Some(strat),
                    selection: None,
                });
            }
            Some(sel) => {
                if first_selection.is_none() {
                    first_selection = Some(sel);
                }
            }
        }
        // next combination
        let mut k = 0;
        loop {
            if k == idx.len() {
                return Ok(NestedDecision {
                    winning: false,
                    strategy: None,
                    selection: first_selection,
                });
            }
            idx[k] += 1;
            if idx[k] < minimal[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_lss;

    fn two_then_rel_first() -> Lss {
        parse_lss(
            r#"{"locks": ["t1", "t2"], "processes": [
                {"id": "p", "states": ["a", "b", "c", "d"], "init": "a",
                 "transitions": [
                   {"src": "a", "action": "g1", "op": {"kind": "get", "lock": "t1"}, "dst": "b", "controllable": false},
                   {"src": "b", "action": "g2", "op": {"kind": "get", "lock": "t2"}, "dst": "c", "controllable": false},
                   {"src": "c", "action": "r1", "op": {"kind": "rel", "lock": "t1"}, "dst": "d", "controllable": false}
                 ]}
            ]}"#,
        )
        .unwrap()
    }

    #[test]
    fn detects_non_nested_release() {
        let (ok, v) = check_nested(&two_then_rel_first());
        assert!(!ok);
        let v = v.unwrap();
        assert_eq!(v.proc, "p");
        let ops: Vec<LockOp> = v.run.iter().map(|(_, op)| op).copied().collect();
        assert_eq!(
            ops,
            vec![LockOp::Get(LockId(0)), LockOp::Get(LockId(1)), LockOp::Rel(LockId(0))]
        );
    }

    #[test]
    fn decompose_examples() {
        use LockOp::*;
        let d = stair_decompose(&[Get(LockId(0)), Get(LockId(1))]).unwrap();
        assert_eq!(d.stairs, vec![LockId(0), LockId(1)]);
        assert_eq!(d.cuts, vec![0, 1]);

        let d = stair_decompose(&[Get(LockId(0)), Rel(LockId(0)), Get(LockId(1))]).unwrap();
        assert_eq!(d.stairs, vec![LockId(1)]);
        assert_eq!(d.cuts, vec![2]);
        let run = [Get(LockId(0)), Rel(LockId(0)), Get(LockId(1))];
        let segs = d.segments(&run);
        assert_eq!(segs[0], &run[0..2]);
        assert!(segs[1].is_empty());

        // a re-acquisition moves the cut to the last get
        let run = [Get(LockId(0)), Get(LockId(1)), Rel(LockId(1)), Get(LockId(1))];
        let d = stair_decompose(&run).unwrap();
        assert_eq!(d.stairs, vec![LockId(0), LockId(1)]);
        assert_eq!(d.cuts, vec![0, 3]);

        assert!(matches!(
            stair_decompose(&[Get(LockId(0)), Get(LockId(1)), Rel(LockId(0))]),
            Err(Error::NotNested(_))
        ));
    }

    #[test]
    fn order_pairs_from_touched() {
        let stack = vec![LockId(0), LockId(1)];
        let touched = vec![LockId(1).bit(), 0];
        let pairs = order_pairs(&stack, &touched);
        assert_eq!(pairs, BTreeSet::from([(LockId(0), LockId(1))]));
    }

    #[test]
    fn crossing_orders_deadlock() {
        let p1 = StairPattern {
            owns: BTreeSet::from([LockId(0)]),
            blocks: BTreeSet::from([LockId(1)]),
            order: BTreeSet::from([(LockId(0), LockId(1))]),
        };
        let p2 = StairPattern {
            owns: BTreeSet::from([LockId(1)]),
            blocks: BTreeSet::from([LockId(0)]),
            order: BTreeSet::from([(LockId(1), LockId(0))]),
        };
        let fam: NestedBehavior = vec![
            ("p1".into(), BTreeSet::from([p1.clone()])),
            ("p2".into(), BTreeSet::from([p2.clone()])),
        ];
        // generators cross: no compatible total order, hence no deadlock
        assert!(stair_deadlock_condition(&fam).is_none());

        // without the order constraints the crossed hold-and-wait deadlocks
        let q1 = StairPattern { order: BTreeSet::new(), ..p1 };
        let q2 = StairPattern { order: BTreeSet::new(), ..p2 };
        let fam: NestedBehavior = vec![
            ("p1".into(), BTreeSet::from([q1])),
            ("p2".into(), BTreeSet::from([q2])),
        ];
        let sel = stair_deadlock_condition(&fam).unwrap();
        assert_eq!(sel.patterns.len(), 2);
    }

    #[test]
    fn uncovered_blocks_no_deadlock() {
        let p1 = StairPattern {
            owns: BTreeSet::new(),
            blocks: BTreeSet::from([LockId(2)]),
            order: BTreeSet::new(),
        };
        let fam: NestedBehavior = vec![("p1".into(), BTreeSet::from([p1]))];
        assert!(stair_deadlock_condition(&fam).is_none());
    }
}
