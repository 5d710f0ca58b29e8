//! Reduction from control with initial lock ownership to the standard
//! problem. Each process gets a fresh key lock and an uncontrollable init
//! prologue: grab the initially-owned locks, cycle through every other key,
//! then keep its own key forever. The key cycling forces all prologues to
//! finish before anyone leaves theirs, so the original game starts from the
//! intended ownership.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{LockId, LockOp, Lss, ProcessAutomaton, Transition};

/// Per-process initial lock sets, in process order.
pub type InitOwnership = Vec<Vec<LockId>>;

/// Parses `{process_id: [lock...]}`; missing processes own nothing.
pub fn parse_ownership(lss: &Lss, text: &str) -> Result<InitOwnership> {
    let doc: BTreeMap<String, Vec<String>> =
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let mut own: InitOwnership = vec![Vec::new(); lss.processes.len()];
    for (proc, locks) in &doc {
        let pi = lss
            .process_index(proc)
            .ok_or_else(|| Error::Model(format!("ownership names unknown process {proc}")))?;
        own[pi.0] = locks
            .iter()
            .map(|l| {
                lss.lock_index(l)
                    .ok_or_else(|| Error::Model(format!("ownership names unknown lock {l}")))
            })
            .collect::<Result<_>>()?;
    }
    validate_ownership(lss, &own)?;
    Ok(own)
}

pub fn validate_ownership(lss: &Lss, own: &InitOwnership) -> Result<()> {
    if own.len() != lss.processes.len() {
        return Err(Error::Model("ownership must cover every process".into()));
    }
    let mut taken = 0u64;
    for (pi, locks) in own.iter().enumerate() {
        let p = &lss.processes[pi];
        for &t in locks {
            if !p.locks.contains(&t) {
                return Err(Error::Model(format!(
                    "process {} cannot initially own {}: it never uses that lock",
                    p.name, lss.locks[t.0]
                )));
            }
            if taken & t.bit() != 0 {
                return Err(Error::Model(format!(
                    "lock {} initially owned twice",
                    lss.locks[t.0]
                )));
            }
            taken |= t.bit();
        }
    }
    Ok(())
}

/// Builds the key-lock system whose winner matches the ownership-seeded
/// original.
pub fn transform_init(lss: &Lss, own: &InitOwnership) -> Result<Lss> {
    validate_ownership(lss, own)?;
    let n = lss.processes.len();
    let mut locks = lss.locks.clone();
    let key: Vec<LockId> = (0..n)
        .map(|pi| {
            locks.push(format!("k_{}", lss.processes[pi].name));
            LockId(locks.len() - 1)
        })
        .collect();
    if locks.len() > 64 {
        return Err(Error::Model("transformed system exceeds 64 locks".into()));
    }

    let mut processes = Vec::with_capacity(n);
    for (pi, p) in lss.processes.iter().enumerate() {
        // prologue ops: initial locks in declaration order, then every
        // other key taken and dropped in process order, then own key
        let mut ops: Vec<LockOp> = Vec::new();
        let mut init_sorted: Vec<LockId> = own[pi].clone();
        init_sorted.sort_unstable();
        ops.extend(init_sorted.iter().map(|&t| LockOp::Get(t)));
        for qi in 0..n {
            if qi != pi {
                ops.push(LockOp::Get(key[qi]));
                ops.push(LockOp::Rel(key[qi]));
            }
        }
        ops.push(LockOp::Get(key[pi]));

        let mut states: Vec<String> = (0..ops.len()).map(|i| format!("__init_{i}")).collect();
        let offset = states.len();
        states.extend(p.states.iter().cloned());
        let mut actions: Vec<String> = Vec::new();
        let mut controllable: Vec<bool> = Vec::new();
        let mut transitions: Vec<(usize, usize, LockOp, usize)> = Vec::new();
        for (i, &op) in ops.iter().enumerate() {
            actions.push(format!("__init_{}_{}", p.name, i));
            controllable.push(false);
            let dst = if i + 1 < ops.len() { i + 1 } else { offset + p.init };
            transitions.push((i, actions.len() - 1, op, dst));
            actions.push(format!("__idle_{}_{}", p.name, i));
            controllable.push(false);
            transitions.push((i, actions.len() - 1, LockOp::Nop, i));
        }
        let abase = actions.len();
        actions.extend(p.actions.iter().cloned());
        controllable.extend(p.controllable.iter().copied());
        for t in &p.transitions {
            transitions.push((offset + t.src, abase + t.action, t.op, offset + t.dst));
        }
        let transitions: Vec<Transition> = transitions
            .into_iter()
            .map(|(src, action, op, dst)| Transition { src, action, op, dst })
            .collect();
        processes.push(ProcessAutomaton::new(
            p.name.clone(),
            states,
            0,
            actions,
            controllable,
            transitions,
        )?);
    }
    let out = Lss { locks, processes };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_lss;

    fn two_proc() -> Lss {
        parse_lss(
            r#"{"locks": ["t"], "processes": [
                {"id": "p1", "states": ["a"], "init": "a",
                 "transitions": [
                   {"src": "a", "action": "u1", "op": {"kind": "get", "lock": "t"}, "dst": "a", "controllable": false}
                 ]},
                {"id": "p2", "states": ["a"], "init": "a",
                 "transitions": [
                   {"src": "a", "action": "u2", "op": {"kind": "nop"}, "dst": "a", "controllable": false}
                 ]}
            ]}"#,
        )
        .unwrap()
    }

    #[test]
    fn prologue_ops_in_order() {
        let lss = two_proc();
        let own = vec![vec![LockId(0)], vec![]];
        let out = transform_init(&lss, &own).unwrap();
        assert_eq!(out.locks, vec!["t", "k_p1", "k_p2"]);
        let p1 = &out.processes[0];
        let mut ops = Vec::new();
        let mut s = p1.init;
        // follow the chain of non-loop transitions until the original init
        while p1.states[s].starts_with("__init") {
            let t = p1
                .outgoing(s)
                .iter()
                .map(|&ti| &p1.transitions[ti])
                .find(|t| t.dst != t.src)
                .unwrap();
            ops.push(t.op);
            s = t.dst;
        }
        assert_eq!(
            ops,
            vec![
                LockOp::Get(LockId(0)),
                LockOp::Get(LockId(2)),
                LockOp::Rel(LockId(2)),
                LockOp::Get(LockId(1)),
            ]
        );
        assert_eq!(p1.states[s], "a");
        // every prologue state carries a nop self-loop
        for sid in 0..4 {
            assert!(p1
                .outgoing(sid)
                .iter()
                .any(|&ti| p1.transitions[ti].dst == sid
                    && p1.transitions[ti].op == LockOp::Nop));
        }
    }

    #[test]
    fn rejects_bad_ownership() {
        let lss = two_proc();
        assert!(transform_init(&lss, &vec![vec![], vec![LockId(0)]]).is_err()); // p2 never uses t
        let own = parse_ownership(&lss, r#"{"p1": ["t"]}"#).unwrap();
        assert_eq!(own, vec![vec![LockId(0)], vec![]]);
        assert!(parse_ownership(&lss, r#"{"p1": ["nope"]}"#).is_err());
    }
}
