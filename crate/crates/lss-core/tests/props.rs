//! Property tests: serialization roundtrips, stair decomposition
//! uniqueness, and the pattern characterizations of winning strategies.

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lss_core::annotate::{annotate, AnnMode};
use lss_core::generators::{gen_random_2lss, RandomParams};
use lss_core::model::{owned_after, parse_lss, serialize_lss, LockId, LockOp, ProcId};
use lss_core::nested::{extract_stair_behavior, stair_deadlock_condition, stair_decompose, NestedBehavior};
use lss_core::oracle::{bfs_deadlock, enumerate_local_candidates, OracleOpts};
use lss_core::patterns2::{deadlock_condition, extract_behavior, Behavior2, ProcBehavior};
use lss_core::strategy::{local_to_rules, resolve_local, LocalStrategy, Strategy};

fn random_params(rng: &mut ChaCha8Rng, exclusive: bool, nested: bool) -> RandomParams {
    RandomParams {
        procs: rng.gen_range(1..=3),
        states: rng.gen_range(1..=5),
        locks: rng.gen_range(1..=4),
        p_controllable: rng.gen_range(0.0..1.0),
        p_nop: rng.gen_range(0.0..1.0),
        exclusive,
        nested,
    }
}

proptest! {
    /// parse ∘ serialize preserves the textual form across all generator
    /// flavors.
    #[test]
    fn serialize_parse_roundtrip(seed: u64, flavor in 0..3usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&mut rng, flavor == 1, flavor == 2);
        let lss = gen_random_2lss(seed, &p).unwrap();
        let text = serialize_lss(&lss);
        let back = parse_lss(&text).unwrap();
        back.validate().unwrap();
        prop_assert_eq!(serialize_lss(&back), text);
    }
}

/// A random nested-locking run over `n_locks` locks.
fn random_nested_run(rng: &mut ChaCha8Rng, n_locks: usize, max_len: usize) -> Vec<LockOp> {
    let len = rng.gen_range(0..=max_len);
    let mut stack: Vec<LockId> = Vec::new();
    let mut run = Vec::with_capacity(len);
    for _ in 0..len {
        let mut options: Vec<LockOp> = vec![LockOp::Nop];
        for t in 0..n_locks {
            if !stack.contains(&LockId(t)) {
                options.push(LockOp::Get(LockId(t)));
            }
        }
        if let Some(&top) = stack.last() {
            options.push(LockOp::Rel(top));
        }
        let op = options[rng.gen_range(0..options.len())];
        match op {
            LockOp::Get(t) => stack.push(t),
            LockOp::Rel(_) => {
                stack.pop();
            }
            LockOp::Nop => {}
        }
        run.push(op);
    }
    run
}

/// Whether cutting `run` at the get positions `cuts` yields a valid stair
/// factorization: every segment is a balanced neutral run and segment i
/// never touches an earlier stair lock.
fn valid_cut_set(run: &[LockOp], cuts: &[usize]) -> bool {
    let stairs: Vec<LockId> = cuts
        .iter()
        .map(|&c| match run[c] {
            LockOp::Get(t) => t,
            _ => unreachable!("cuts point at acquisitions"),
        })
        .collect();
    let mut from = 0usize;
    for i in 0..=cuts.len() {
        let to = cuts.get(i).copied().unwrap_or(run.len());
        let seg = &run[from..to];
        match owned_after(seg) {
            Some(owned) if owned.is_empty() => {}
            _ => return false,
        }
        if seg.iter().filter_map(|op| op.lock()).any(|t| stairs[..i].contains(&t)) {
            return false;
        }
        from = to + 1;
    }
    true
}

/// Criterion: on 1000 random nested runs the computed stair decomposition
/// is the unique valid factorization, its stairs are the finally held
/// locks, and its segments reassemble into the original run.
#[test]
fn stair_decomposition_unique_on_random_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let run = random_nested_run(&mut rng, 4, 14);
        let d = stair_decompose(&run).unwrap();
        assert!(valid_cut_set(&run, &d.cuts));

        // stairs are exactly what is still held at the end
        let held = owned_after(&run).unwrap();
        assert_eq!(d.stairs.iter().copied().collect::<BTreeSet<_>>(), held);
        assert_eq!(d.stairs.len(), d.cuts.len());

        // segments plus distinguished gets reassemble the run
        let mut rebuilt: Vec<LockOp> = Vec::new();
        for (i, seg) in d.segments(&run).iter().enumerate() {
            rebuilt.extend_from_slice(seg);
            if i < d.stairs.len() {
                rebuilt.push(LockOp::Get(d.stairs[i]));
            }
        }
        assert_eq!(rebuilt, run);

        // no other choice of cut positions factorizes the run
        let gets: Vec<usize> =
            (0..run.len()).filter(|&i| matches!(run[i], LockOp::Get(_))).collect();
        let mut valid = 0usize;
        for mask in 0u32..1 << gets.len() {
            let cuts: Vec<usize> =
                (0..gets.len()).filter(|i| mask >> i & 1 == 1).map(|i| gets[i]).collect();
            if valid_cut_set(&run, &cuts) {
                valid += 1;
                assert_eq!(cuts, d.cuts, "second factorization of {run:?}");
            }
        }
        assert_eq!(valid, 1);
    }
}

/// Enumerates positional strategies for every process and picks one
/// combination; `None` when some process has too many.
fn pick_locals(
    lss: &lss_core::model::Lss,
    anns: &[lss_core::annotate::AnnAutomaton],
    pick: u64,
) -> Option<Vec<LocalStrategy>> {
    let mut locals = Vec::new();
    let mut x = pick;
    for ann in anns {
        let cands = enumerate_local_candidates(lss, ann, 4096, false).ok()?;
        locals.push(cands[(x % cands.len() as u64) as usize].clone());
        x /= 7;
    }
    Some(locals)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// A strategy wins iff its extracted two-lock behavior admits no
    /// deadlock selection.
    #[test]
    fn winning_iff_no_deadlock_selection(seed: u64, pick: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = RandomParams {
            procs: 2,
            states: rng.gen_range(2..=4),
            locks: 2,
            p_controllable: rng.gen_range(0.2..1.0),
            p_nop: rng.gen_range(0.0..0.5),
            exclusive: false,
            nested: false,
        };
        let lss = gen_random_2lss(seed, &p).unwrap().pad_to_two_locks().unwrap();
        let anns: Vec<_> = (0..lss.processes.len())
            .map(|i| annotate(&lss, ProcId(i), AnnMode::TwoLock, &[]).unwrap())
            .collect();
        let Some(locals) = pick_locals(&lss, &anns, pick) else { return Ok(()) };
        let winning =
            bfs_deadlock(&lss, &anns, &locals, &OracleOpts::default()).unwrap().is_none();

        let behavior = Behavior2(
            anns.iter()
                .zip(&locals)
                .map(|(ann, local)| ProcBehavior {
                    name: lss.processes[ann.proc.0].name.clone(),
                    locks: [lss.processes[ann.proc.0].locks[0], lss.processes[ann.proc.0].locks[1]],
                    patterns: extract_behavior(&lss, ann, local),
                })
                .collect(),
        );
        prop_assert_eq!(winning, deadlock_condition(&behavior).is_none());
    }

    /// Nested analogue: a strategy wins iff the extracted stair behavior
    /// admits no stair deadlock selection.
    #[test]
    fn winning_iff_no_stair_selection(seed: u64, pick: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = RandomParams {
            procs: rng.gen_range(1..=2),
            states: rng.gen_range(2..=4),
            locks: rng.gen_range(2..=3),
            p_controllable: rng.gen_range(0.2..1.0),
            p_nop: rng.gen_range(0.0..0.5),
            exclusive: false,
            nested: true,
        };
        let lss = gen_random_2lss(seed, &p).unwrap();
        let anns: Vec<_> = (0..lss.processes.len())
            .map(|i| annotate(&lss, ProcId(i), AnnMode::Nested, &[]).unwrap())
            .collect();
        let Some(locals) = pick_locals(&lss, &anns, pick) else { return Ok(()) };
        let winning =
            bfs_deadlock(&lss, &anns, &locals, &OracleOpts::default()).unwrap().is_none();

        // the external document distinguishes every annotated state (the
        // touched sets matter), so rendering and resolving is lossless
        let strat = Strategy(
            anns.iter()
                .zip(&locals)
                .map(|(ann, local)| {
                    (lss.processes[ann.proc.0].name.clone(), local_to_rules(&lss, ann, local))
                })
                .collect(),
        );
        for (ann, local) in anns.iter().zip(&locals) {
            let resolved = resolve_local(&lss, ann, &strat).unwrap();
            prop_assert_eq!(&resolved, local);
        }

        let behavior: NestedBehavior = anns
            .iter()
            .zip(&locals)
            .map(|(ann, local)| {
                (lss.processes[ann.proc.0].name.clone(), extract_stair_behavior(&lss, ann, local))
            })
            .collect();
        prop_assert_eq!(winning, stair_deadlock_condition(&behavior).is_none());
    }
}
