//! Golden trace for the staged scheme procedure on a two-triangle graph
//! joined by a path. All nine processes are solid and every edge starts
//! out double, so the first trim pass is a no-op; absorbing the two
//! triangles breaks the doubles on the connecting path and the re-trim
//! exposes two solo solid edges out of the same lock.

use std::collections::BTreeSet;

use lss_core::lockgraph::{decide_sufficient_scheme, SchemeStep};
use lss_core::model::{LockId, ProcId};
use lss_core::patterns2::{Behavior2, Pattern2, ProcBehavior};

fn proc_both_ways(name: &str, a: usize, b: usize, fwd_weak: bool) -> ProcBehavior {
    let (a, b) = (LockId(a), LockId(b));
    let edge = |from: LockId, to: LockId, strong: bool| Pattern2 {
        owns: BTreeSet::from([from]),
        blocks: BTreeSet::from([to]),
        strong,
    };
    ProcBehavior {
        name: name.into(),
        locks: [a.min(b), a.max(b)],
        patterns: BTreeSet::from([edge(a, b, !fwd_weak), edge(b, a, true)]),
    }
}

/// Two triangles t1-t2-t3 and t4-t5-t6, each with one weak edge, plus a
/// strong double path t1 - t7 - t8 - t5 between them. Locks are 0-based
/// (t1 = lock 0), processes p1..p9 in order.
fn two_triangles_and_path() -> Behavior2 {
    Behavior2(vec![
        proc_both_ways("p1", 0, 1, false),
        proc_both_ways("p2", 1, 2, true),
        proc_both_ways("p3", 2, 0, false),
        proc_both_ways("p4", 3, 4, false),
        proc_both_ways("p5", 4, 5, true),
        proc_both_ways("p6", 5, 3, false),
        proc_both_ways("p7", 0, 6, false),
        proc_both_ways("p8", 6, 7, false),
        proc_both_ways("p9", 7, 4, false),
    ])
}

#[test]
fn staged_trace_matches() {
    let out = decide_sufficient_scheme(&two_triangles_and_path()).unwrap();
    assert!(out.scheme.is_none(), "no scheme should exist");

    let e = |f: usize, p: usize, t: usize| (LockId(f), ProcId(p), LockId(t));
    let expected = vec![
        SchemeStep::TrimPass { erased: vec![] },
        SchemeStep::CycleAbsorbed {
            edges: vec![e(0, 0, 1), e(1, 1, 2), e(2, 2, 0)],
            locks: vec![LockId(0), LockId(1), LockId(2)],
        },
        SchemeStep::CycleAbsorbed {
            edges: vec![e(3, 3, 4), e(4, 4, 5), e(5, 5, 3)],
            locks: vec![LockId(3), LockId(4), LockId(5)],
        },
        SchemeStep::TrimPass { erased: vec![e(7, 7, 6)] },
        SchemeStep::TrimFail {
            lock: LockId(6),
            solo: e(6, 6, 0),
            other: e(6, 7, 7),
        },
    ];
    assert_eq!(out.trace, expected);
}

#[test]
fn removing_one_path_process_restores_a_scheme() {
    // without p7 the path hangs off the right triangle only and trims
    // away; both triangles still deadlock
    let mut b = two_triangles_and_path();
    b.0.remove(6);
    let out = decide_sufficient_scheme(&b).unwrap();
    let scheme = out.scheme.expect("both triangles deadlock");
    for t in 0..6 {
        assert!(scheme.z.contains(&LockId(t)));
    }
}
