//! Local control strategies, positional on annotated states.
//!
//! External form: a document mapping process ids to rules. A rule matches
//! an annotated state by base state, owned set, and (when present) release
//! bit or stack; `allow` lists the controllable actions the strategy
//! permits there. Annotated states without a matching rule default to
//! allowing every controllable action. Environment actions are always
//! allowed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::annotate::{AnnAutomaton, AnnMode};
use crate::error::{Error, Result};
use crate::model::{LockId, Lss};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct StrategyRule {
    pub state: String,
    pub owned: BTreeSet<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub release_bit: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stack: Option<Vec<String>>,
    /// locks operated while each stack entry was held; distinguishes
    /// same-stack states whose acquisition history differs
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub touched: Option<Vec<BTreeSet<String>>>,
    pub allow: BTreeSet<String>,
}

/// External strategy document: process id -> rules.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct Strategy(pub BTreeMap<String, Vec<StrategyRule>>);

impl Strategy {
    pub fn parse(text: &str) -> Result<Strategy> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("bad strategy document: {e}")))
    }

    pub fn serialize(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn check_names(&self, lss: &Lss) -> Result<()> {
        for (pname, rules) in &self.0 {
            let pid = lss
                .process_index(pname)
                .ok_or_else(|| Error::StrategyMismatch(format!("unknown process {pname}")))?;
            let p = &lss.processes[pid.0];
            for r in rules {
                if p.state_index(&r.state).is_none() {
                    return Err(Error::StrategyMismatch(format!(
                        "process {pname}: unknown state {}",
                        r.state
                    )));
                }
                for l in r
                    .owned
                    .iter()
                    .chain(r.stack.iter().flatten())
                    .chain(r.touched.iter().flatten().flatten())
                {
                    if lss.lock_index(l).is_none() {
                        return Err(Error::StrategyMismatch(format!(
                            "process {pname}: unknown lock {l}"
                        )));
                    }
                }
                for a in &r.allow {
                    match p.action_index(a) {
                        None => {
                            return Err(Error::StrategyMismatch(format!(
                                "process {pname}: unknown action {a}"
                            )))
                        }
                        Some(ai) if !p.controllable[ai] => {
                            return Err(Error::StrategyMismatch(format!(
                                "process {pname}: action {a} is not controllable"
                            )))
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(())
    }
}

/// Internal form: allowed controllable actions per annotated state.
pub type LocalStrategy = Vec<BTreeSet<usize>>;

fn lock_names(lss: &Lss, mask: u64) -> BTreeSet<String> {
    (0..lss.locks.len()).filter(|i| mask >> i & 1 == 1).map(|i| lss.locks[i].clone()).collect()
}

fn owned_mask(lss: &Lss, names: &BTreeSet<String>) -> Result<u64> {
    let mut m = 0;
    for n in names {
        m |= lss
            .lock_index(n)
            .ok_or_else(|| Error::StrategyMismatch(format!("unknown lock {n}")))?
            .bit();
    }
    Ok(m)
}

/// Resolves the external rules of one process against an annotated
/// automaton. First matching rule wins; no rule means allow-all.
pub fn resolve_local(lss: &Lss, ann: &AnnAutomaton, strat: &Strategy) -> Result<LocalStrategy> {
    let p = &lss.processes[ann.proc.0];
    let empty = Vec::new();
    let rules = strat.0.get(&p.name).unwrap_or(&empty);
    let all_ctl: BTreeSet<usize> =
        (0..p.actions.len()).filter(|&a| p.controllable[a]).collect();
    let mut out = Vec::with_capacity(ann.n_states());
    for s in &ann.states {
        let mut allowed = all_ctl.clone();
        for r in rules {
            let base_ok = p
                .state_index(&r.state)
                .ok_or_else(|| Error::StrategyMismatch(format!("unknown state {}", r.state)))?
                == s.base;
            if !base_ok || owned_mask(lss, &r.owned)? != s.owned {
                continue;
            }
            if let Some(b) = r.release_bit {
                if ann.mode != AnnMode::TwoLock || b != s.release_bit {
                    continue;
                }
            }
            if let Some(stack) = &r.stack {
                if ann.mode != AnnMode::Nested {
                    continue;
                }
                let want: Vec<String> = s.stack.iter().map(|t| lss.locks[t.0].clone()).collect();
                if *stack != want {
                    continue;
                }
            }
            if let Some(touched) = &r.touched {
                if ann.mode != AnnMode::Nested {
                    continue;
                }
                let want: Vec<BTreeSet<String>> =
                    s.touched.iter().map(|&m| lock_names(lss, m)).collect();
                if *touched != want {
                    continue;
                }
            }
            allowed = r
                .allow
                .iter()
                .map(|a| {
                    p.action_index(a)
                        .ok_or_else(|| Error::StrategyMismatch(format!("unknown action {a}")))
                })
                .collect::<Result<_>>()?;
            break;
        }
        out.push(allowed);
    }
    Ok(out)
}

/// Renders an internal local strategy back into external rules (fully
/// specified per annotated state).
pub fn local_to_rules(lss: &Lss, ann: &AnnAutomaton, local: &LocalStrategy) -> Vec<StrategyRule> {
    let p = &lss.processes[ann.proc.0];
    ann.states
        .iter()
        .zip(local)
        .map(|(s, allow)| {
            let owned = (0..lss.locks.len())
                .filter(|i| s.owned & LockId(*i).bit() != 0)
                .map(|i| lss.locks[i].clone())
                .collect();
            StrategyRule {
                state: p.states[s.base].clone(),
                owned,
                release_bit: match ann.mode {
                    AnnMode::TwoLock => Some(s.release_bit),
                    _ => None,
                },
                stack: match ann.mode {
                    AnnMode::Nested => {
                        Some(s.stack.iter().map(|t| lss.locks[t.0].clone()).collect())
                    }
                    _ => None,
                },
                touched: match ann.mode {
                    AnnMode::Nested => {
                        Some(s.touched.iter().map(|&m| lock_names(lss, m)).collect())
                    }
                    _ => None,
                },
                allow: allow.iter().map(|&a| p.actions[a].clone()).collect(),
            }
        })
        .collect()
}

/// Whether an annotated transition is allowed by `local` at `sid`.
pub fn allows(lss: &Lss, ann: &AnnAutomaton, local: &LocalStrategy, sid: usize, action: usize) -> bool {
    !lss.processes[ann.proc.0].controllable[action] || local[sid].contains(&action)
}

/// Annotated states reachable when only allowed transitions are taken.
pub fn reachable_under(lss: &Lss, ann: &AnnAutomaton, local: &LocalStrategy) -> Vec<bool> {
    let mut seen = vec![false; ann.n_states()];
    let mut stack = vec![ann.init];
    seen[ann.init] = true;
    while let Some(s) = stack.pop() {
        for t in &ann.trans[s] {
            if allows(lss, ann, local, s, t.action) && !seen[t.dst] {
                seen[t.dst] = true;
                stack.push(t.dst);
            }
        }
    }
    seen
}

/// A local strategy is locally live if every reachable annotated state has
/// at least one allowed (and hence locally executable) transition.
pub fn is_locally_live(lss: &Lss, ann: &AnnAutomaton, local: &LocalStrategy) -> bool {
    let reach = reachable_under(lss, ann, local);
    (0..ann.n_states()).all(|s| {
        !reach[s] || ann.trans[s].iter().any(|t| allows(lss, ann, local, s, t.action))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::{annotate, AnnMode};
    use crate::model::ProcId;
    use crate::model::parse_lss;

    fn sys() -> Lss {
        parse_lss(
            r#"{
              "locks": ["t1", "t2"],
              "processes": [
                {"id": "p", "states": ["a", "b"], "init": "a",
                 "transitions": [
                   {"src": "a", "action": "go", "op": {"kind": "get", "lock": "t1"}, "dst": "b", "controllable": true},
                   {"src": "a", "action": "stay", "op": {"kind": "nop"}, "dst": "a", "controllable": true}
                 ]}
              ]
            }"#,
        )
        .unwrap()
        .pad_to_two_locks()
        .unwrap()
    }

    #[test]
    fn resolve_and_default() {
        let lss = sys();
        let ann = annotate(&lss, ProcId(0), AnnMode::TwoLock, &[]).unwrap();
        let doc = r#"{"p": [{"state": "a", "owned": [], "allow": ["stay"]}]}"#;
        let strat = Strategy::parse(doc).unwrap();
        strat.check_names(&lss).unwrap();
        let local = resolve_local(&lss, &ann, &strat).unwrap();
        assert_eq!(local[ann.init], BTreeSet::from([1]));
        // state b has no rule: allow-all
        let b = ann.states.iter().position(|s| s.base == 1).unwrap();
        assert_eq!(local[b].len(), 2);
    }

    #[test]
    fn unknown_action_rejected() {
        let lss = sys();
        let strat =
            Strategy::parse(r#"{"p": [{"state": "a", "owned": [], "allow": ["nope"]}]}"#).unwrap();
        assert!(matches!(strat.check_names(&lss), Err(Error::StrategyMismatch(_))));
    }

    #[test]
    fn locally_live_detects_starvation() {
        let lss = sys();
        let ann = annotate(&lss, ProcId(0), AnnMode::TwoLock, &[]).unwrap();
        let allow_none: LocalStrategy = vec![BTreeSet::new(); ann.n_states()];
        assert!(!is_locally_live(&lss, &ann, &allow_none));
        let allow_stay: LocalStrategy = ann
            .states
            .iter()
            .map(|_| BTreeSet::from([1]))
            .collect();
        assert!(is_locally_live(&lss, &ann, &allow_stay));
    }

    #[test]
    fn rules_roundtrip() {
        let lss = sys();
        let ann = annotate(&lss, ProcId(0), AnnMode::TwoLock, &[]).unwrap();
        let local: LocalStrategy = vec![BTreeSet::from([0]); ann.n_states()];
        let rules = local_to_rules(&lss, &ann, &local);
        let strat = Strategy(BTreeMap::from([("p".to_string(), rules)]));
        let back = resolve_local(&lss, &ann, &strat).unwrap();
        assert_eq!(back, local);
    }
}
