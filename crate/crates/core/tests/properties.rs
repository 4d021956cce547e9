//! Property tests over the spec's structural invariants: fact-file round
//! trips, merge algebra, neighborhood monotonicity, and score scaling.

use std::collections::BTreeSet;

use proptest::prelude::*;

use solaudit::facts::{
    merge_fact_sets, AccessMode, CallFact, ContractFact, ContractKind, FactSet, FunctionFact,
    FunctionKey, StateAccessFact, Visibility,
};
use solaudit::graph::{build_graph, DependencyGraph};
use solaudit::profiler::{Batch, Profiler};

fn ident(prefix: &str, idx: usize) -> String {
    format!("{prefix}{idx}")
}

/// Small random-but-valid fact sets: up to 4 contracts, 8 functions, plus
/// calls and accesses among them.
fn arb_fact_set() -> impl Strategy<Value = FactSet> {
    let function_count = 1..8usize;
    function_count
        .prop_flat_map(|n| {
            let contracts = 1..=(n.min(4));
            (Just(n), contracts)
        })
        .prop_flat_map(|(n, c)| {
            let owners = proptest::collection::vec(0..c, n);
            let calls = proptest::collection::vec((0..n, 0..n, proptest::bool::ANY), 0..12);
            let accesses =
                proptest::collection::vec((0..n, 0..3usize, proptest::bool::ANY), 0..12);
            (Just(n), Just(c), owners, calls, accesses)
        })
        .prop_map(|(n, c, owners, calls, accesses)| {
            let contracts: Vec<ContractFact> = (0..c)
                .map(|i| ContractFact {
                    name: ident("C", i),
                    source_path: format!("src/{}.sol", ident("C", i)),
                    kind: ContractKind::Contract,
                    is_template: i == 0,
                    line_count: 10,
                })
                .collect();
            let functions: Vec<FunctionFact> = (0..n)
                .map(|i| FunctionFact {
                    contract: ident("C", owners[i]),
                    name: ident("f", i),
                    signature: format!("f{i}()"),
                    visibility: Visibility::Public,
                    modifiers: vec![],
                    source_span: (1, 2),
                    body_text: format!("body {i}"),
                })
                .collect();
            let key = |i: usize| functions[i].key();
            let calls = calls
                .into_iter()
                .map(|(a, b, resolved)| CallFact {
                    caller: key(a),
                    callee: if resolved {
                        key(b)
                    } else {
                        FunctionKey(format!("IExt.e{b}(?0)"))
                    },
                    resolved,
                })
                .collect();
            let state_accesses = accesses
                .into_iter()
                .map(|(f, var, write)| StateAccessFact {
                    function: key(f),
                    variable: format!("C0.v{var}"),
                    mode: if write {
                        AccessMode::Write
                    } else {
                        AccessMode::Read
                    },
                })
                .collect();
            let mut set = FactSet {
                contracts,
                functions,
                calls,
                state_accesses,
            };
            set.canonicalize();
            set
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fact_file_round_trip(set in arb_fact_set()) {
        let loaded = FactSet::from_json(set.to_json().as_bytes()).unwrap();
        prop_assert_eq!(set, loaded);
    }

    #[test]
    fn merge_idempotent_and_identity(set in arb_fact_set()) {
        let empty = FactSet::default();
        prop_assert_eq!(&merge_fact_sets(&set, &empty).unwrap(), &set);
        prop_assert_eq!(&merge_fact_sets(&set, &set).unwrap(), &set);
    }

    #[test]
    fn merge_associative_on_disjoint_renames(set in arb_fact_set()) {
        // Three disjoint copies (renamed contracts) merge associatively.
        let rename = |set: &FactSet, tag: &str| -> FactSet {
            let mut copy = set.clone();
            for c in copy.contracts.iter_mut() {
                c.name = format!("{}{}", tag, c.name);
                c.source_path = format!("{}/{}", tag, c.source_path);
            }
            for f in copy.functions.iter_mut() {
                f.contract = format!("{}{}", tag, f.contract);
            }
            let requalify = |k: &FunctionKey| FunctionKey(format!("{}{}", tag, k.as_str()));
            for call in copy.calls.iter_mut() {
                call.caller = requalify(&call.caller);
                if call.resolved {
                    call.callee = requalify(&call.callee);
                }
            }
            for a in copy.state_accesses.iter_mut() {
                a.function = requalify(&a.function);
                a.variable = format!("{}{}", tag, a.variable);
            }
            copy.canonicalize();
            copy
        };
        let a = rename(&set, "A");
        let b = rename(&set, "B");
        let c = rename(&set, "X");
        let left = merge_fact_sets(&merge_fact_sets(&a, &b).unwrap(), &c).unwrap();
        let right = merge_fact_sets(&a, &merge_fact_sets(&b, &c).unwrap()).unwrap();
        prop_assert_eq!(left, right);
    }

    #[test]
    fn build_graph_deterministic_and_bounded(set in arb_fact_set()) {
        let g1 = build_graph(&set);
        let g2 = build_graph(&set);
        prop_assert_eq!(g1.edges(), g2.edges());
        // Edge count bound: resolved calls plus distinct writer/reader pairs.
        let resolved = set.calls.iter().filter(|c| c.resolved).count();
        let mut pairs = BTreeSet::new();
        for w in set.state_accesses.iter().filter(|a| a.mode == AccessMode::Write) {
            for r in set.state_accesses.iter().filter(|a| a.mode == AccessMode::Read) {
                if w.variable == r.variable && w.function != r.function {
                    pairs.insert((w.function.clone(), r.function.clone()));
                }
            }
        }
        prop_assert!(g1.edges().len() <= resolved + pairs.len());
    }

    #[test]
    fn caller_callee_monotone_in_depth(set in arb_fact_set(), depth in 1usize..4) {
        let graph = build_graph(&set);
        for key in graph.nodes() {
            let smaller = graph.extract_caller_callee(key, depth).unwrap();
            let larger = graph.extract_caller_callee(key, depth + 1).unwrap();
            prop_assert!(smaller.is_subset(&larger), "depth {depth} not monotone at {key}");
            prop_assert!(smaller.contains(key));
        }
    }

    #[test]
    fn score_scaling_preserves_order(set in arb_fact_set(), k in 1u32..5) {
        let graph = build_graph(&set);
        if graph.is_empty() {
            return Ok(());
        }
        let cfg = solaudit::config::AuditConfig::default();
        let profiler = Profiler::new(&set, &graph, cfg.profiler_config());
        let batch = Batch {
            id: 0,
            contracts: set.contract_names(),
            scores: Default::default(),
            tags: vec![],
            estimated_tokens: 0,
            pruned_contracts: vec![],
            truncated_functions: vec![],
        };
        let base = profiler.score_contracts(&batch, 0.5, 0.5).unwrap();
        let scaled = profiler.score_contracts(&batch, 0.5 * k as f64, 0.5 * k as f64).unwrap();
        // Scaling both weights multiplies scores and never reorders.
        for (contract, score) in &base {
            let expected = score * k as f64;
            prop_assert!((scaled[contract] - expected).abs() < 1e-9);
        }
        let order = |scores: &std::collections::BTreeMap<String, f64>| {
            let mut names: Vec<&String> = scores.keys().collect();
            names.sort_by(|a, b| {
                scores[*b].partial_cmp(&scores[*a]).unwrap().then_with(|| a.cmp(b))
            });
            names.into_iter().cloned().collect::<Vec<String>>()
        };
        prop_assert_eq!(order(&base), order(&scaled));
    }
}

/// The spec's seven-node breadth-first oracle for caller/callee extraction.
#[test]
fn caller_callee_matches_bfs_oracle() {
    // Chain with fan-in/out: g0<-g1-, g1->g2->g3->g4, g5->g3, g2->g6.
    let edges: &[(usize, usize)] = &[(1, 0), (1, 2), (2, 3), (3, 4), (5, 3), (2, 6)];
    let functions: Vec<(String, String)> =
        (0..7).map(|i| ("G".to_string(), format!("g{i}()"))).collect();
    let mut facts = FactSet {
        contracts: vec![ContractFact {
            name: "G".into(),
            source_path: "g.sol".into(),
            kind: ContractKind::Contract,
            is_template: false,
            line_count: 1,
        }],
        functions: functions
            .iter()
            .map(|(c, s)| FunctionFact {
                contract: c.clone(),
                name: s.split('(').next().unwrap().into(),
                signature: s.clone(),
                visibility: Visibility::Public,
                modifiers: vec![],
                source_span: (1, 1),
                body_text: String::new(),
            })
            .collect(),
        calls: edges
            .iter()
            .map(|(a, b)| CallFact {
                caller: FunctionKey(format!("G.g{a}()")),
                callee: FunctionKey(format!("G.g{b}()")),
                resolved: true,
            })
            .collect(),
        state_accesses: vec![],
    };
    facts.canonicalize();
    let graph = build_graph(&facts);

    // Independent BFS oracle in both directions.
    let bfs = |start: usize, depth: usize| -> BTreeSet<usize> {
        let mut result = BTreeSet::from([start]);
        for adjacency in [true, false] {
            let mut frontier = vec![start];
            let mut dist = vec![usize::MAX; 7];
            dist[start] = 0;
            while let Some(v) = frontier.pop() {
                if dist[v] == depth {
                    continue;
                }
                for &(a, b) in edges {
                    let next = if adjacency && a == v {
                        b
                    } else if !adjacency && b == v {
                        a
                    } else {
                        continue;
                    };
                    if dist[next] == usize::MAX {
                        dist[next] = dist[v] + 1;
                        result.insert(next);
                        frontier.push(next);
                    }
                }
            }
        }
        result
    };
    for start in 0..7 {
        for depth in 1..=2 {
            let got = graph
                .extract_caller_callee(&FunctionKey(format!("G.g{start}()")), depth)
                .unwrap();
            let got_ids: BTreeSet<usize> = got
                .iter()
                .map(|k| k.name()[1..].parse::<usize>().unwrap())
                .collect();
            assert_eq!(got_ids, bfs(start, depth), "start g{start} depth {depth}");
        }
    }
}

/// The spec's bridge example: two 4-cliques joined by one edge split at the
/// bridge, matching the brute-force maximum over all partitions.
#[test]
fn louvain_splits_cliques_at_bridge() {
    let mut calls = Vec::new();
    let clique = |base: usize, calls: &mut Vec<(usize, usize)>| {
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    calls.push((base + i, base + j));
                }
            }
        }
    };
    clique(0, &mut calls);
    clique(4, &mut calls);
    calls.push((0, 4)); // bridge

    let functions: Vec<(String, String)> =
        (0..8).map(|i| (format!("K{i}"), format!("k{i}()"))).collect();
    let mut facts = FactSet {
        contracts: functions
            .iter()
            .map(|(c, _)| ContractFact {
                name: c.clone(),
                source_path: format!("{c}.sol"),
                kind: ContractKind::Contract,
                is_template: false,
                line_count: 1,
            })
            .collect(),
        functions: functions
            .iter()
            .map(|(c, s)| FunctionFact {
                contract: c.clone(),
                name: s.split('(').next().unwrap().into(),
                signature: s.clone(),
                visibility: Visibility::Public,
                modifiers: vec![],
                source_span: (1, 1),
                body_text: String::new(),
            })
            .collect(),
        calls: calls
            .iter()
            .map(|(a, b)| CallFact {
                caller: FunctionKey(format!("K{a}.k{a}()")),
                callee: FunctionKey(format!("K{b}.k{b}()")),
                resolved: true,
            })
            .collect(),
        state_accesses: vec![],
    };
    facts.canonicalize();
    let graph: DependencyGraph = build_graph(&facts);
    let communities = solaudit::profiler::detect_communities(&graph, 3).unwrap();
    assert_eq!(communities.len(), 2, "split at the bridge");
    let first: BTreeSet<String> = communities[0]
        .members
        .iter()
        .map(|k| k.contract().to_string())
        .collect();
    assert_eq!(
        first,
        (0..4).map(|i| format!("K{i}")).collect::<BTreeSet<_>>()
    );
}
