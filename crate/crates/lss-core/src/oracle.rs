//! Ground-truth procedures: strategy verification by explicit product
//! exploration and existence checking by enumerating positional local
//! strategies. Deliberately independent of the pattern machinery; the
//! decision procedures are tested against these on small instances.

use std::collections::{BTreeSet, HashMap, VecDeque};

use crate::annotate::{annotate, AnnAutomaton, AnnMode};
use crate::error::{Error, Result};
use crate::model::{LockId, LockOp, Lss, ProcId, Step};
use crate::strategy::{
    self, is_locally_live, local_to_rules, resolve_local, LocalStrategy, Strategy,
};

#[derive(Debug, Clone)]
pub struct OracleOpts {
    pub max_processes: usize,
    pub max_product_states: usize,
    pub max_candidates_per_proc: usize,
    pub locally_live: bool,
    /// Start each process with these locks already owned (ownership-seeded
    /// variant used by the init-ownership tests).
    pub initial_ownership: Option<Vec<Vec<LockId>>>,
    /// Force the annotation used for strategy enumeration instead of
    /// picking the finest sound one. Meant for equivalence tests that
    /// compare oracle runs on two renderings of the same system.
    pub ann_mode: Option<AnnMode>,
}

impl Default for OracleOpts {
    fn default() -> Self {
        OracleOpts {
            max_processes: 4,
            max_product_states: 1_000_000,
            max_candidates_per_proc: 10_000,
            locally_live: false,
            initial_ownership: None,
            ann_mode: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Verdict {
    pub winning: bool,
    /// Shortest run into a dead configuration when losing.
    pub witness: Option<Vec<Step>>,
}

fn pick_mode(strat: Option<&Strategy>) -> AnnMode {
    if let Some(s) = strat {
        if s.0.values().flatten().any(|r| r.stack.is_some()) {
            return AnnMode::Nested;
        }
        if s.0.values().flatten().any(|r| r.release_bit.is_some()) {
            return AnnMode::TwoLock;
        }
    }
    AnnMode::General
}

fn build_anns(lss: &Lss, mode: AnnMode, opts: &OracleOpts) -> Result<Vec<AnnAutomaton>> {
    let empty = Vec::new();
    let mut used = 0u64;
    if let Some(own) = &opts.initial_ownership {
        if own.len() != lss.processes.len() {
            return Err(Error::Precondition("initial ownership arity mismatch".into()));
        }
        for locks in own {
            for t in locks {
                if used & t.bit() != 0 {
                    return Err(Error::Precondition(format!(
                        "lock {} initially owned twice",
                        lss.locks[t.0]
                    )));
                }
                used |= t.bit();
            }
        }
    }
    (0..lss.processes.len())
        .map(|i| {
            let init = opts
                .initial_ownership
                .as_ref()
                .map(|o| &o[i])
                .unwrap_or(&empty);
            annotate(lss, ProcId(i), mode, init)
        })
        .collect()
}

/// BFS over the strategy-restricted product. Returns the shortest run into
/// a configuration with zero enabled steps, or `None` if every reachable
/// configuration can move.
pub fn bfs_deadlock(
    lss: &Lss,
    anns: &[AnnAutomaton],
    locals: &[LocalStrategy],
    opts: &OracleOpts,
) -> Result<Option<Vec<Step>>> {
    let init: Vec<u32> = anns.iter().map(|a| a.init as u32).collect();
    let mut index: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut parent: Vec<Option<(usize, Step)>> = vec![None];
    let mut configs = vec![init.clone()];
    index.insert(init, 0);
    let mut queue = VecDeque::from([0usize]);
    while let Some(ci) = queue.pop_front() {
        let cfg = configs[ci].clone();
        let taken: u64 = cfg
            .iter()
            .enumerate()
            .fold(0, |m, (p, &s)| m | anns[p].states[s as usize].owned);
        let mut succs: Vec<(Step, Vec<u32>)> = Vec::new();
        for (pi, ann) in anns.iter().enumerate() {
            let sid = cfg[pi] as usize;
            for t in &ann.trans[sid] {
                if !strategy::allows(lss, ann, &locals[pi], sid, t.action) {
                    continue;
                }
                if let LockOp::Get(l) = t.op {
                    if taken & l.bit() != 0 {
                        continue;
                    }
                }
                let mut next = cfg.clone();
                next[pi] = t.dst as u32;
                succs.push((Step { proc: ProcId(pi), action: t.action, op: t.op }, next));
            }
        }
        if succs.is_empty() {
            let mut trace = Vec::new();
            let mut cur = ci;
            while let Some((prev, step)) = parent[cur].clone() {
                trace.push(step);
                cur = prev;
            }
            trace.reverse();
            return Ok(Some(trace));
        }
        succs.sort_by_key(|(s, _)| {
            (s.op.rank(), lss.processes[s.proc.0].controllable[s.action], s.proc.0, s.action)
        });
        for (step, next) in succs {
            if !index.contains_key(&next) {
                if configs.len() >= opts.max_product_states {
                    return Err(Error::LimitExceeded(format!(
                        "product exceeds {} states",
                        opts.max_product_states
                    )));
                }
                let ni = configs.len();
                index.insert(next.clone(), ni);
                configs.push(next);
                parent.push(Some((ci, step)));
                queue.push_back(ni);
            }
        }
    }
    Ok(None)
}

/// Checks a user-supplied strategy. A strategy wins iff no reachable
/// strategy-restricted configuration is dead.
pub fn verify_strategy(lss: &Lss, strat: &Strategy, opts: &OracleOpts) -> Result<Verdict> {
    strat.check_names(lss)?;
    let mode = pick_mode(Some(strat));
    let lss_owned;
    let lss = if mode == AnnMode::TwoLock && !lss.is_two_lock() {
        return Err(Error::NotTwoLock("release_bit rules require a 2LSS".into()));
    } else if mode == AnnMode::TwoLock {
        lss_owned = lss.pad_to_two_locks()?;
        &lss_owned
    } else {
        lss
    };
    let anns = build_anns(lss, mode, opts)?;
    let locals: Vec<LocalStrategy> = anns
        .iter()
        .map(|a| resolve_local(lss, a, strat))
        .collect::<Result<_>>()?;
    if opts.locally_live {
        for (ann, local) in anns.iter().zip(&locals) {
            if !is_locally_live(lss, ann, local) {
                return Err(Error::Precondition(format!(
                    "strategy for process {} is not locally live",
                    lss.processes[ann.proc.0].name
                )));
            }
        }
    }
    let witness = bfs_deadlock(lss, &anns, &locals, opts)?;
    Ok(Verdict { winning: witness.is_none(), witness })
}

fn subsets_decreasing(actions: &[usize]) -> Vec<BTreeSet<usize>> {
    let n = actions.len();
    let mut subsets: Vec<BTreeSet<usize>> = (0..(1u32 << n))
        .map(|m| (0..n).filter(|i| m >> i & 1 == 1).map(|i| actions[i]).collect())
        .collect();
    subsets.sort_by(|a, b| {
        b.len().cmp(&a.len()).then_with(|| a.iter().collect::<Vec<_>>().cmp(&b.iter().collect()))
    });
    subsets
}

/// Enumerates the positional local strategies of one annotated process:
/// per annotated state, subsets of its controllable actions in decreasing
/// size (allow-all first); candidates are deduplicated when they induce the
/// same reachable restricted automaton. Errors when the raw count exceeds
/// `limit`.
pub fn enumerate_local_candidates(
    lss: &Lss,
    ann: &AnnAutomaton,
    limit: usize,
    locally_live: bool,
) -> Result<Vec<LocalStrategy>> {
    let per_state: Vec<Vec<BTreeSet<usize>>> = (0..ann.n_states())
        .map(|s| subsets_decreasing(&ann.controllable_at(lss, s)))
        .collect();
    let mut total: u128 = 1;
    for subs in &per_state {
        total = total.saturating_mul(subs.len() as u128);
        if total > limit as u128 {
            return Err(Error::LimitExceeded(format!(
                "more than {limit} candidate strategies for process {}",
                lss.processes[ann.proc.0].name
            )));
        }
    }
    let mut out: Vec<LocalStrategy> = Vec::new();
    let mut seen: HashMap<Vec<(usize, Vec<usize>)>, ()> = HashMap::new();
    let mut idx = vec![0usize; per_state.len()];
    loop {
        let cand: LocalStrategy =
            idx.iter().enumerate().map(|(s, &i)| per_state[s][i].clone()).collect();
        if !locally_live || is_locally_live(lss, ann, &cand) {
            let reach = strategy::reachable_under(lss, ann, &cand);
            let sig: Vec<(usize, Vec<usize>)> = (0..ann.n_states())
                .filter(|&s| reach[s])
                .map(|s| (s, cand[s].iter().copied().collect()))
                .collect();
            if seen.insert(sig, ()).is_none() {
                out.push(cand);
            }
        }
        // mixed-radix increment, last state fastest
        let mut pos = per_state.len();
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < per_state[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// Brute-force existence check: tries every combination of positional local
/// strategies and verifies each against the product. Returns the first
/// winning combination in enumeration order.
pub fn exists_winning_oracle(lss: &Lss, opts: &OracleOpts) -> Result<(bool, Option<Strategy>)> {
    if lss.processes.len() > opts.max_processes {
        return Err(Error::LimitExceeded(format!(
            "oracle limited to {} processes",
            opts.max_processes
        )));
    }
    // enumeration over positional strategies is complete only on a rich
    // enough annotation: stacks for nested instances, the release bit for
    // two-lock ones, the owned set otherwise
    let mode = opts.ann_mode.unwrap_or_else(|| {
        if crate::nested::check_nested(lss).0 {
            AnnMode::Nested
        } else if lss.is_two_lock() {
            AnnMode::TwoLock
        } else {
            AnnMode::General
        }
    });
    let lss_owned;
    let lss = if mode == AnnMode::TwoLock {
        lss_owned = lss.pad_to_two_locks()?;
        &lss_owned
    } else {
        lss
    };
    let anns = build_anns(lss, mode, opts)?;
    let mut candidates: Vec<Vec<LocalStrategy>> = Vec::new();
    for ann in &anns {
        let cands =
            enumerate_local_candidates(lss, ann, opts.max_candidates_per_proc, opts.locally_live)?;
        if cands.is_empty() {
            // no admissible local strategy at all (locally-live mode)
            return Ok((false, None));
        }
        candidates.push(cands);
    }
    let mut idx = vec![0usize; candidates.len()];
    loop {
        let locals: Vec<LocalStrategy> =
            idx.iter().enumerate().map(|(p, &i)| candidates[p][i].clone()).collect();
        if bfs_deadlock(lss, &anns, &locals, opts)?.is_none() {
            let doc = Strategy(
                anns.iter()
                    .zip(&locals)
                    .map(|(ann, local)| {
                        (lss.processes[ann.proc.0].name.clone(), local_to_rules(lss, ann, local))
                    })
                    .collect(),
            );
            return Ok((true, Some(doc)));
        }
        let mut pos = candidates.len();
        loop {
            if pos == 0 {
                return Ok((false, None));
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < candidates[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// External witness trace format: `[{proc, action, op}]`.
pub fn trace_to_json(lss: &Lss, trace: &[Step]) -> serde_json::Value {
    serde_json::Value::Array(
        trace
            .iter()
            .map(|s| {
                let p = &lss.processes[s.proc.0];
                let op = match s.op {
                    LockOp::Nop => serde_json::json!({"kind": "nop"}),
                    LockOp::Get(t) => serde_json::json!({"kind": "get", "lock": lss.locks[t.0]}),
                    LockOp::Rel(t) => serde_json::json!({"kind": "rel", "lock": lss.locks[t.0]}),
                };
                serde_json::json!({"proc": p.name, "action": p.actions[s.action], "op": op})
            })
            .collect(),
    )
}
