//! Instance factories: dining philosophers (strict and flexible), the
//! exists-forall SAT gadget, and seeded random two-lock systems.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LockId, LockOp, Lss, ProcessAutomaton, Transition};

struct ProcBuilder {
    name: String,
    states: Vec<String>,
    actions: Vec<String>,
    controllable: Vec<bool>,
    transitions: Vec<Transition>,
}

impl ProcBuilder {
    fn new(name: &str, states: &[&str]) -> Self {
        ProcBuilder {
            name: name.to_string(),
            states: states.iter().map(|s| s.to_string()).collect(),
            actions: Vec::new(),
            controllable: Vec::new(),
            transitions: Vec::new(),
        }
    }

    fn action(&mut self, name: &str, controllable: bool) -> usize {
        if let Some(i) = self.actions.iter().position(|a| a == name) {
            assert_eq!(self.controllable[i], controllable);
            return i;
        }
        self.actions.push(name.to_string());
        self.controllable.push(controllable);
        self.actions.len() - 1
    }

    fn edge(&mut self, src: usize, action: &str, controllable: bool, op: LockOp, dst: usize) {
        let action = self.action(action, controllable);
        self.transitions.push(Transition { src, action, op, dst });
    }

    fn build(self, init: usize) -> Result<ProcessAutomaton> {
        ProcessAutomaton::new(
            self.name,
            self.states,
            init,
            self.actions,
            self.controllable,
            self.transitions,
        )
    }
}

/// Ring of dining philosophers; philosopher `i` (1-based) uses forks
/// `t_i` and `t_{i+1}`, with `t_{n+1} = t_1`. The choice between grabbing
/// left-first or right-first is controllable; forks are released in LIFO
/// order along each branch.
pub fn gen_philosophers(n: usize) -> Result<Lss> {
    philosophers(n, false)
}

/// Philosophers that may also put back their first fork while waiting for
/// the second. The back-off release next to an acquisition breaks
/// exclusivity, and the shared eating state breaks nested locking.
pub fn gen_flexible_philosophers(n: usize) -> Result<Lss> {
    philosophers(n, true)
}

fn philosophers(n: usize, flexible: bool) -> Result<Lss> {
    if n < 2 {
        return Err(Error::Model("need at least 2 philosophers".into()));
    }
    let locks: Vec<String> = (1..=n).map(|i| format!("t{i}")).collect();
    let mut processes = Vec::with_capacity(n);
    for i in 1..=n {
        let left = LockId(i - 1);
        let right = LockId(i % n);
        let mut b = if flexible {
            ProcBuilder::new(
                &format!("p{i}"),
                &["think", "hungry", "l", "r", "lp", "rp", "eat", "eat2"],
            )
        } else {
            ProcBuilder::new(
                &format!("p{i}"),
                &[
                    "think", "hungry", "l", "r", "lp", "rp", "eat_l", "eat_l2", "eat_r",
                    "eat_r2",
                ],
            )
        };
        let think = format!("think{i}");
        let hungry = format!("hungry{i}");
        let go_left = format!("left{i}");
        let go_right = format!("right{i}");
        let get = format!("get{i}");
        let rel = format!("rel{i}");
        b.edge(0, &think, false, LockOp::Nop, 0);
        b.edge(0, &hungry, false, LockOp::Nop, 1);
        b.edge(1, &go_left, true, LockOp::Nop, 2);
        b.edge(1, &go_right, true, LockOp::Nop, 3);
        b.edge(2, &get, false, LockOp::Get(left), 4);
        b.edge(3, &get, false, LockOp::Get(right), 5);
        if flexible {
            b.edge(4, &get, false, LockOp::Get(right), 6);
            b.edge(5, &get, false, LockOp::Get(left), 6);
            let back = format!("back{i}");
            b.edge(4, &back, false, LockOp::Rel(left), 1);
            b.edge(5, &back, false, LockOp::Rel(right), 1);
            b.edge(6, &rel, false, LockOp::Rel(right), 7);
            b.edge(7, &rel, false, LockOp::Rel(left), 0);
        } else {
            b.edge(4, &get, false, LockOp::Get(right), 6);
            b.edge(5, &get, false, LockOp::Get(left), 8);
            b.edge(6, &rel, false, LockOp::Rel(right), 7);
            b.edge(7, &rel, false, LockOp::Rel(left), 0);
            b.edge(8, &rel, false, LockOp::Rel(left), 9);
            b.edge(9, &rel, false, LockOp::Rel(right), 0);
        }
        processes.push(b.build(0)?);
    }
    let lss = Lss { locks, processes };
    lss.validate()?;
    Ok(lss)
}

/// An exists-forall SAT instance in 3-DNF: the formula is
/// ∃ exists ∀ forall. ⋁ clauses, each clause a conjunction of three
/// literals ("-" prefix negates).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QbfInstance {
    pub exists: Vec<String>,
    pub forall: Vec<String>,
    pub clauses: Vec<[String; 3]>,
}

impl QbfInstance {
    pub fn parse(text: &str) -> Result<QbfInstance> {
        let q: QbfInstance =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        let vars: BTreeSet<&String> = self.exists.iter().chain(self.forall.iter()).collect();
        if vars.len() != self.exists.len() + self.forall.len() {
            return Err(Error::Model("duplicate variable".into()));
        }
        for c in &self.clauses {
            for lit in c {
                let v = lit.strip_prefix('-').unwrap_or(lit);
                if !vars.contains(&v.to_string()) {
                    return Err(Error::Model(format!("unknown variable in literal {lit}")));
                }
            }
        }
        Ok(())
    }

    fn lit_true(&self, lit: &str, val: &dyn Fn(&str) -> bool) -> bool {
        match lit.strip_prefix('-') {
            Some(v) => !val(v),
            None => val(lit),
        }
    }

    /// Truth by direct quantifier expansion.
    pub fn evaluate(&self) -> bool {
        let n = self.exists.len();
        let m = self.forall.len();
        (0..1u64 << n).any(|xs| {
            (0..1u64 << m).all(|ys| {
                let val = |v: &str| {
                    if let Some(i) = self.exists.iter().position(|x| x == v) {
                        xs >> i & 1 == 1
                    } else {
                        let j = self.forall.iter().position(|y| y == v).unwrap();
                        ys >> j & 1 == 1
                    }
                };
                self.clauses
                    .iter()
                    .any(|c| c.iter().all(|lit| self.lit_true(lit, &val)))
            })
        })
    }
}

fn lit_lock_name(lit: &str) -> String {
    match lit.strip_prefix('-') {
        Some(v) => format!("n{v}"),
        None => lit.to_string(),
    }
}

/// The hardness gadget: a 2LSS that has a winning control strategy iff the
/// formula is true. For each existential variable a process takes both
/// polarity locks and may release one (a controllable choice of valuation);
/// for each universal variable the environment takes one polarity lock.
/// Clause watchers and per-literal processes turn "all clauses falsified"
/// into a global deadlock. These systems contain deliberate dead-end
/// states, so only the general (not locally-live) analysis applies.
pub fn gen_qbf_gadget(q: &QbfInstance) -> Result<Lss> {
    q.validate()?;
    let mut locks: Vec<String> = (1..=q.clauses.len()).map(|i| format!("t{i}")).collect();
    for x in &q.exists {
        locks.push(x.clone());
        locks.push(format!("n{x}"));
    }
    for y in &q.forall {
        locks.push(y.clone());
        locks.push(format!("n{y}"));
    }
    let lock_id = |name: &str, locks: &[String]| {
        LockId(locks.iter().position(|l| l == name).unwrap())
    };

    let mut processes = Vec::new();
    for x in &q.exists {
        let pos = lock_id(x, &locks);
        let neg = lock_id(&format!("n{x}"), &locks);
        let mut b = ProcBuilder::new(&format!("p_{x}"), &["s0", "s1", "s2", "pos", "neg", "end"]);
        b.edge(0, &format!("take_{x}"), false, LockOp::Get(pos), 1);
        b.edge(1, &format!("take_n{x}"), false, LockOp::Get(neg), 2);
        // choosing which lock to free: the freed lock is the satisfied literal
        b.edge(2, &format!("set_{x}"), true, LockOp::Nop, 3);
        b.edge(2, &format!("unset_{x}"), true, LockOp::Nop, 4);
        b.edge(3, &format!("free_{x}"), false, LockOp::Rel(pos), 5);
        b.edge(4, &format!("free_n{x}"), false, LockOp::Rel(neg), 5);
        processes.push(b.build(0)?);
    }
    for y in &q.forall {
        let pos = lock_id(y, &locks);
        let neg = lock_id(&format!("n{y}"), &locks);
        let mut b = ProcBuilder::new(&format!("q_{y}"), &["s0", "pos", "neg", "end"]);
        b.edge(0, &format!("set_{y}"), false, LockOp::Nop, 1);
        b.edge(0, &format!("unset_{y}"), false, LockOp::Nop, 2);
        b.edge(1, &format!("take_{y}"), false, LockOp::Get(pos), 3);
        b.edge(2, &format!("take_n{y}"), false, LockOp::Get(neg), 3);
        processes.push(b.build(0)?);
    }
    for (ci, clause) in q.clauses.iter().enumerate() {
        let t = LockId(ci);
        let mut b = ProcBuilder::new(&format!("pa{}", ci + 1), &["s0", "live"]);
        b.edge(0, &format!("watch{}", ci + 1), false, LockOp::Get(t), 1);
        b.edge(1, &format!("spin{}", ci + 1), false, LockOp::Nop, 1);
        processes.push(b.build(0)?);
        for (li, lit) in clause.iter().enumerate() {
            let l = lock_id(&lit_lock_name(lit), &locks);
            let tag = format!("{}_{}", ci + 1, li + 1);
            let mut b = ProcBuilder::new(&format!("pl{tag}"), &["s0", "s1", "live"]);
            b.edge(0, &format!("grab{tag}"), false, LockOp::Get(t), 1);
            b.edge(1, &format!("lit{tag}"), false, LockOp::Get(l), 2);
            b.edge(2, &format!("spinl{tag}"), false, LockOp::Nop, 2);
            processes.push(b.build(0)?);
        }
    }
    let lss = Lss { locks, processes };
    lss.validate()?;
    Ok(lss)
}

#[derive(Debug, Clone, Copy)]
pub struct RandomParams {
    pub procs: usize,
    pub states: usize,
    pub locks: usize,
    pub p_controllable: f64,
    /// Chance that a state keeps a nop escape next to its rel/get
    /// transitions. Low values force acquisitions and make deadlocks likely.
    pub p_nop: f64,
    pub exclusive: bool,
    pub nested: bool,
}

impl Default for RandomParams {
    fn default() -> Self {
        RandomParams {
            procs: 3,
            states: 5,
            locks: 4,
            p_controllable: 0.4,
            p_nop: 0.5,
            exclusive: false,
            nested: false,
        }
    }
}

/// Seeded random 2LSS. Every state carries at least one transition, so the
/// allow-all strategy is locally live in every process. States are built
/// over fixed lock contexts (owned set, or held stack when `nested`), which
/// keeps the discipline valid by construction; `exclusive` makes each
/// acquiring state acquire one lock on all its transitions.
pub fn gen_random_2lss(seed: u64, params: &RandomParams) -> Result<Lss> {
    if params.procs == 0 || params.states == 0 || params.locks == 0 {
        return Err(Error::Model("procs, states and locks must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let locks: Vec<String> = (1..=params.locks).map(|i| format!("t{i}")).collect();
    let mut processes = Vec::with_capacity(params.procs);
    for pi in 1..=params.procs {
        let a = LockId(rng.gen_range(0..params.locks));
        let b = if params.locks > 1 {
            loop {
                let b = LockId(rng.gen_range(0..params.locks));
                if b != a {
                    break b;
                }
            }
        } else {
            a
        };
        let pair = if a == b { vec![a] } else { vec![a, b] };
        // each state lives in a fixed lock context
        let contexts: Vec<Vec<LockId>> = if params.nested {
            let mut c = vec![vec![]];
            for &x in &pair {
                c.push(vec![x]);
            }
            if pair.len() == 2 {
                c.push(vec![pair[0], pair[1]]);
                c.push(vec![pair[1], pair[0]]);
            }
            c
        } else {
            let mut c = vec![vec![]];
            for &x in &pair {
                c.push(vec![x]);
            }
            if pair.len() == 2 {
                c.push(vec![pair[0], pair[1]]);
            }
            c
        };
        let ctx_of: Vec<usize> = (0..params.states)
            .map(|s| if s == 0 { 0 } else { rng.gen_range(0..contexts.len()) })
            .collect();
        let by_ctx = |c: usize, ctx_of: &[usize]| -> Vec<usize> {
            (0..params.states).filter(|&s| ctx_of[s] == c).collect()
        };
        let held = |c: &[LockId]| c.iter().fold(0u64, |m, t| m | t.bit());
        // in nested mode contexts are stacks; otherwise owned sets
        let same_set = |x: &[LockId], y: &[LockId]| {
            if params.nested {
                x == y
            } else {
                held(x) == held(y)
            }
        };
        let mut b = ProcBuilder::new(&format!("p{pi}"), &[]);
        b.states = (0..params.states).map(|s| format!("s{s}")).collect();
        let mut next_action = 0usize;
        for s in 0..params.states {
            let ctx = &contexts[ctx_of[s]];
            // moves legal from this context
            let mut gets: Vec<(LockId, usize)> = Vec::new(); // (lock, dst ctx)
            let mut rels: Vec<(LockId, usize)> = Vec::new();
            for (ci, c) in contexts.iter().enumerate() {
                for &t in &pair {
                    if held(ctx) & t.bit() == 0 {
                        let target: Vec<LockId> = if params.nested {
                            let mut v = ctx.clone();
                            v.push(t);
                            v
                        } else {
                            let mut v = ctx.clone();
                            v.push(t);
                            v.sort_unstable();
                            v
                        };
                        if same_set(c, &target) && (!params.nested || *c == target) {
                            gets.push((t, ci));
                        }
                    }
                    let can_rel = if params.nested {
                        ctx.last() == Some(&t)
                    } else {
                        held(ctx) & t.bit() != 0
                    };
                    if can_rel {
                        let target: Vec<LockId> = if params.nested {
                            ctx[..ctx.len() - 1].to_vec()
                        } else {
                            ctx.iter().copied().filter(|&x| x != t).collect()
                        };
                        if same_set(c, &target) && (!params.nested || *c == target) {
                            rels.push((t, ci));
                        }
                    }
                }
            }
            gets.dedup();
            rels.dedup();
            let gets: Vec<(LockId, Vec<usize>)> = gets
                .iter()
                .map(|&(t, ci)| (t, by_ctx(ci, &ctx_of)))
                .filter(|(_, d)| !d.is_empty())
                .collect();
            let rels: Vec<(LockId, Vec<usize>)> = rels
                .iter()
                .map(|&(t, ci)| (t, by_ctx(ci, &ctx_of)))
                .filter(|(_, d)| !d.is_empty())
                .collect();
            let n_trans = rng.gen_range(1..=3usize);
            let p_nop = params.p_nop.clamp(0.0, 1.0);
            // acquiring states take locks on every transition, so they can
            // block; they are what makes deadlocks reachable at all
            let p_acquire = if params.exclusive { 0.5 } else { (1.0 - p_nop) * 0.5 };
            let get_state = !gets.is_empty() && rng.gen_bool(p_acquire);
            if get_state {
                // exclusive instances must acquire the same lock throughout
                let fixed = gets[rng.gen_range(0..gets.len())].clone();
                for _ in 0..n_trans {
                    let (t, dsts) = if params.exclusive {
                        &fixed
                    } else {
                        &gets[rng.gen_range(0..gets.len())]
                    };
                    let dst = dsts[rng.gen_range(0..dsts.len())];
                    let ctl = rng.gen_bool(params.p_controllable);
                    b.edge(s, &format!("a{pi}_{next_action}"), ctl, LockOp::Get(*t), dst);
                    next_action += 1;
                }
                continue;
            }
            for _ in 0..n_trans {
                // rel, (when not exclusive) get, and sometimes a nop escape
                let mut options: Vec<(LockOp, usize)> = Vec::new();
                for (t, dsts) in &rels {
                    options.push((LockOp::Rel(*t), dsts[rng.gen_range(0..dsts.len())]));
                }
                if !params.exclusive {
                    for (t, dsts) in &gets {
                        options.push((LockOp::Get(*t), dsts[rng.gen_range(0..dsts.len())]));
                    }
                }
                if options.is_empty() || rng.gen_bool(p_nop) {
                    let same: Vec<usize> = by_ctx(ctx_of[s], &ctx_of);
                    options.push((LockOp::Nop, same[rng.gen_range(0..same.len())]));
                }
                let (op, dst) = options[rng.gen_range(0..options.len())];
                let ctl = rng.gen_bool(params.p_controllable);
                b.edge(s, &format!("a{pi}_{next_action}"), ctl, op, dst);
                next_action += 1;
            }
        }
        processes.push(b.build(0)?);
    }
    let lss = Lss { locks, processes };
    lss.validate()?;
    Ok(lss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exclusive::check_exclusive;
    use crate::model::{parse_lss, serialize_lss};
    use crate::nested::check_nested;

    #[test]
    fn philosophers_structure() {
        assert!(gen_philosophers(1).is_err());
        let lss = gen_philosophers(3).unwrap();
        assert_eq!(lss.locks.len(), 3);
        for t in 0..3 {
            let users = lss
                .processes
                .iter()
                .filter(|p| p.locks.contains(&LockId(t)))
                .count();
            assert_eq!(users, 2);
        }
        assert!(lss.is_two_lock());
        assert!(check_exclusive(&lss).is_ok());
        assert!(check_nested(&lss).0);
    }

    #[test]
    fn flexible_philosophers_flags() {
        let lss = gen_flexible_philosophers(2).unwrap();
        assert!(check_exclusive(&lss).is_err());
        let lss = gen_flexible_philosophers(3).unwrap();
        assert!(!check_nested(&lss).0);
    }

    #[test]
    fn qbf_parse_eval() {
        let q = QbfInstance::parse(
            r#"{"exists": ["x"], "forall": ["y"], "clauses": [["x", "x", "x"]]}"#,
        )
        .unwrap();
        assert!(q.evaluate());
        let q = QbfInstance::parse(
            r#"{"exists": ["x"], "forall": ["y"], "clauses": [["y", "y", "y"]]}"#,
        )
        .unwrap();
        assert!(!q.evaluate());
        let q = QbfInstance::parse(
            r#"{"exists": ["x"], "forall": ["y"], "clauses": [["x", "y", "y"], ["x", "-y", "-y"]]}"#,
        )
        .unwrap();
        assert!(q.evaluate());
        assert!(QbfInstance::parse(r#"{"exists": [], "forall": [], "clauses": [["z", "z", "z"]]}"#)
            .is_err());
    }

    #[test]
    fn qbf_gadget_structure() {
        let q = QbfInstance {
            exists: vec![],
            forall: vec![],
            clauses: vec![["x".into(), "x".into(), "x".into()]],
        };
        assert!(gen_qbf_gadget(&q).is_err()); // x undeclared
        let q = QbfInstance {
            exists: vec!["x".into()],
            forall: vec![],
            clauses: vec![["x".into(), "x".into(), "x".into()]],
        };
        let lss = gen_qbf_gadget(&q).unwrap();
        // p_x + watcher + 3 literal processes
        assert_eq!(lss.processes.len(), 5);
        assert!(lss.is_two_lock());
        let text = serialize_lss(&lss);
        let back = parse_lss(&text).unwrap();
        assert_eq!(serialize_lss(&back), text);
    }

    #[test]
    fn random_deterministic_and_flagged() {
        let p = RandomParams::default();
        let a = serialize_lss(&gen_random_2lss(1, &p).unwrap());
        let b = serialize_lss(&gen_random_2lss(1, &p).unwrap());
        assert_eq!(a, b);
        let c = serialize_lss(&gen_random_2lss(2, &p).unwrap());
        assert_ne!(a, c);
        for seed in 0..20 {
            let lss = gen_random_2lss(seed, &RandomParams { exclusive: true, ..p }).unwrap();
            assert!(lss.is_two_lock());
            assert!(check_exclusive(&lss).is_ok());
            let lss = gen_random_2lss(seed, &RandomParams { nested: true, ..p }).unwrap();
            assert!(check_nested(&lss).0);
        }
    }
}
