//! Annotated local automata. An annotated state carries, besides the base
//! state, what the process currently owns, plus mode-specific bookkeeping:
//!
//! * two-lock mode: the owned subset of the process's two locks and a
//!   release bit (set iff, holding exactly one lock, the last lock
//!   operation was the release of the other one);
//! * nested mode: the held-lock stack in acquisition order and, per held
//!   lock, the set of locks operated since its acquisition;
//! * general mode: the owned set only.
//!
//! Transitions that violate the lock discipline (get of an owned lock, rel
//! of an un-owned lock) are dropped. In nested mode a reachable rel of a
//! non-top lock is an error.

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::model::{LockId, LockOp, Lss, ProcId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnMode {
    TwoLock,
    Nested,
    General,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AnnState {
    pub base: usize,
    pub owned: u64,
    pub release_bit: bool,
    /// Held locks, bottom first (nested mode only; empty otherwise).
    pub stack: Vec<LockId>,
    /// Per stack entry: locks operated since that entry's acquisition.
    pub touched: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnnTransition {
    pub action: usize,
    pub op: LockOp,
    pub dst: usize,
}

#[derive(Debug, Clone)]
pub struct AnnAutomaton {
    pub mode: AnnMode,
    pub proc: ProcId,
    pub states: Vec<AnnState>,
    pub trans: Vec<Vec<AnnTransition>>,
    pub init: usize,
}

impl AnnAutomaton {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    /// Controllable action indices with an outgoing annotated transition at `sid`.
    pub fn controllable_at(&self, lss: &Lss, sid: usize) -> Vec<usize> {
        let p = &lss.processes[self.proc.0];
        let mut acts: Vec<usize> =
            self.trans[sid].iter().filter(|t| p.controllable[t.action]).map(|t| t.action).collect();
        acts.sort_unstable();
        acts.dedup();
        acts
    }
}

/// Builds the annotated automaton of `proc`, starting from `initial_owned`
/// (normally empty; the ownership-seeded oracle passes the initial locks).
pub fn annotate(
    lss: &Lss,
    proc: ProcId,
    mode: AnnMode,
    initial_owned: &[LockId],
) -> Result<AnnAutomaton> {
    let p = &lss.processes[proc.0];
    if mode == AnnMode::TwoLock && p.locks.len() != 2 {
        return Err(Error::NotTwoLock(format!(
            "process {} uses {} locks (pad first)",
            p.name,
            p.locks.len()
        )));
    }
    let init_state = {
        let mut owned = 0u64;
        let mut stack = Vec::new();
        let mut touched = Vec::new();
        for &t in initial_owned {
            owned |= t.bit();
            if mode == AnnMode::Nested {
                stack.push(t);
                touched.push(0u64);
            }
        }
        AnnState { base: p.init, owned, release_bit: false, stack, touched }
    };
    let mut index: HashMap<AnnState, usize> = HashMap::new();
    let mut states = vec![init_state.clone()];
    let mut trans: Vec<Vec<AnnTransition>> = vec![Vec::new()];
    index.insert(init_state, 0);
    let mut queue = VecDeque::from([0usize]);
    while let Some(sid) = queue.pop_front() {
        let cur = states[sid].clone();
        for &ti in p.outgoing(cur.base) {
            let tr = p.transitions[ti].clone();
            let mut next = cur.clone();
            match tr.op {
                LockOp::Nop => {}
                LockOp::Get(t) => {
                    if cur.owned & t.bit() != 0 {
                        continue;
                    }
                    next.owned |= t.bit();
                    match mode {
                        AnnMode::TwoLock => {
                            next.release_bit = false;
                        }
                        AnnMode::Nested => {
                            for tc in next.touched.iter_mut() {
                                *tc |= t.bit();
                            }
                            next.stack.push(t);
                            next.touched.push(0);
                        }
                        AnnMode::General => {}
                    }
                }
                LockOp::Rel(t) => {
                    if cur.owned & t.bit() == 0 {
                        continue;
                    }
                    next.owned &= !t.bit();
                    match mode {
                        AnnMode::TwoLock => {
                            // meaningful only while exactly one lock is held
                            next.release_bit = next.owned.count_ones() == 1;
                        }
                        AnnMode::Nested => {
                            if *cur.stack.last().expect("owned lock on stack") != t {
                                return Err(Error::NotNested(format!(
                                    "process {} releases {} which is not the top of the stack at state {}",
                                    p.name, lss.locks[t.0], p.states[cur.base]
                                )));
                            }
                            next.stack.pop();
                            next.touched.pop();
                            for tc in next.touched.iter_mut() {
                                *tc |= t.bit();
                            }
                        }
                        AnnMode::General => {}
                    }
                }
            }
            next.base = tr.dst;
            let dst = match index.get(&next) {
                Some(&d) => d,
                None => {
                    let d = states.len();
                    index.insert(next.clone(), d);
                    states.push(next);
                    trans.push(Vec::new());
                    queue.push_back(d);
                    d
                }
            };
            trans[sid].push(AnnTransition { action: tr.action, op: tr.op, dst });
        }
        trans[sid].sort_by_key(|t| (t.op.rank(), t.action));
    }
    Ok(AnnAutomaton { mode, proc, states, trans, init: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_lss;

    fn two_lock_proc() -> Lss {
        parse_lss(
            r#"{
              "locks": ["t1", "t2"],
              "processes": [
                {"id": "p", "states": ["a", "b", "c", "d"], "init": "a",
                 "transitions": [
                   {"src": "a", "action": "g1", "op": {"kind": "get", "lock": "t1"}, "dst": "b", "controllable": false},
                   {"src": "b", "action": "g2", "op": {"kind": "get", "lock": "t2"}, "dst": "c", "controllable": false},
                   {"src": "c", "action": "r2", "op": {"kind": "rel", "lock": "t2"}, "dst": "d", "controllable": false},
                   {"src": "d", "action": "back", "op": {"kind": "nop"}, "dst": "b", "controllable": false}
                 ]}
              ]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn two_lock_release_bit() {
        let lss = two_lock_proc();
        let ann = annotate(&lss, ProcId(0), AnnMode::TwoLock, &[]).unwrap();
        // a/{} -> b/{t1} bit=0 -> c/{t1,t2} -> d/{t1} bit=1 -> b/{t1} bit=1 -> ...
        let d = ann
            .states
            .iter()
            .position(|s| s.base == 3)
            .expect("state d reachable");
        assert_eq!(ann.states[d].owned, LockId(0).bit());
        assert!(ann.states[d].release_bit);
        // b is reached both with bit=0 (first visit) and bit=1 (via d)
        let bs: Vec<_> = ann.states.iter().filter(|s| s.base == 1).collect();
        assert_eq!(bs.len(), 2);
    }

    #[test]
    fn nested_stack_and_touched() {
        let lss = two_lock_proc();
        let ann = annotate(&lss, ProcId(0), AnnMode::Nested, &[]).unwrap();
        let c = ann.states.iter().position(|s| s.base == 2).unwrap();
        assert_eq!(ann.states[c].stack, vec![LockId(0), LockId(1)]);
        assert_eq!(ann.states[c].touched, vec![LockId(1).bit(), 0]);
        let d = ann.states.iter().position(|s| s.base == 3).unwrap();
        assert_eq!(ann.states[d].stack, vec![LockId(0)]);
        assert_eq!(ann.states[d].touched, vec![LockId(1).bit()]);
    }

    #[test]
    fn nested_rejects_non_lifo() {
        let lss = parse_lss(
            r#"{
              "locks": ["t1", "t2"],
              "processes": [
                {"id": "p", "states": ["a", "b", "c", "d"], "init": "a",
                 "transitions": [
                   {"src": "a", "action": "g1", "op": {"kind": "get", "lock": "t1"}, "dst": "b", "controllable": false},
                   {"src": "b", "action": "g2", "op": {"kind": "get", "lock": "t2"}, "dst": "c", "controllable": false},
                   {"src": "c", "action": "r1", "op": {"kind": "rel", "lock": "t1"}, "dst": "d", "controllable": false}
                 ]}
              ]
            }"#,
        )
        .unwrap();
        assert!(matches!(
            annotate(&lss, ProcId(0), AnnMode::Nested, &[]),
            Err(Error::NotNested(_))
        ));
    }

    #[test]
    fn discipline_violations_dropped() {
        let lss = parse_lss(
            r#"{
              "locks": ["t1"],
              "processes": [
                {"id": "p", "states": ["a", "b"], "init": "a",
                 "transitions": [
                   {"src": "a", "action": "g", "op": {"kind": "get", "lock": "t1"}, "dst": "b", "controllable": false},
                   {"src": "b", "action": "g2", "op": {"kind": "get", "lock": "t1"}, "dst": "a", "controllable": false}
                 ]}
              ]
            }"#,
        )
        .unwrap();
        let ann = annotate(&lss, ProcId(0), AnnMode::General, &[]).unwrap();
        let b = ann.states.iter().position(|s| s.base == 1).unwrap();
        assert!(ann.trans[b].is_empty());
    }
}
