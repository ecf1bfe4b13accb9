use std::collections::HashMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scratchlab::tasks::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reachability by repeated boolean matrix squaring of (I + A).
fn closure(g: &GraphInstance) -> Vec<Vec<bool>> {
    let n = g.nodes.len();
    let mut m = vec![vec![false; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = true;
    }
    for &(u, v) in &g.edges {
        m[u][v] = true;
    }
    let mut len = 1;
    while len < n {
        let mut next = vec![vec![false; n]; n];
        for i in 0..n {
            for k in (0..n).filter(|&k| m[i][k]) {
                for j in 0..n {
                    next[i][j] |= m[k][j];
                }
            }
        }
        m = next;
        len *= 2;
    }
    m
}

/// Directed distances from the adjacency matrix powers A^1, A^2, ...
fn matrix_distance(g: &GraphInstance, s: usize, t: usize) -> Option<usize> {
    let n = g.nodes.len();
    let mut frontier = vec![false; n];
    frontier[s] = true;
    if s == t {
        return Some(0);
    }
    for d in 1..=n {
        let mut next = vec![false; n];
        for &(u, v) in &g.edges {
            next[v] |= frontier[u];
        }
        if next[t] {
            return Some(d);
        }
        frontier = next;
    }
    None
}

/// Sizes of the cycles in a graph where every vertex has in and out degree 1.
fn cycle_sizes(g: &GraphInstance) -> Vec<usize> {
    let succ: HashMap<usize, usize> = g.edges.iter().copied().collect();
    let mut seen = vec![false; g.nodes.len()];
    let mut sizes = vec![];
    for start in 0..g.nodes.len() {
        let (mut v, mut len) = (start, 0);
        while !seen[v] {
            seen[v] = true;
            v = succ[&v];
            len += 1;
        }
        if len > 0 {
            sizes.push(len);
        }
    }
    sizes.sort_unstable();
    sizes
}

fn cycle_of(g: &GraphInstance, v: usize) -> usize {
    let succ: HashMap<usize, usize> = g.edges.iter().copied().collect();
    let (mut x, mut len) = (succ[&v], 1);
    while x != v {
        x = succ[&x];
        len += 1;
    }
    len
}

fn assert_regular(g: &GraphInstance) {
    for v in 0..g.nodes.len() {
        assert_eq!((g.in_degree(v), g.out_degree(v)), (1, 1));
    }
}

#[test]
fn section_example_serializes_exactly() {
    let text = "a>x;n>y;q>a;t>n;y>t;x>q;a?t;";
    let g = parse_graph(text).unwrap();
    assert_eq!(serialize_graph(&g).render(), text);
    assert_eq!(serialize_graph(&parse_graph("u>v;u?v;").unwrap()).render(), "u>v;u?v;");
    assert_eq!(connectivity_oracle(&g), 0);
    assert_eq!(distance_oracle(&g), None);
}

#[test]
fn cycle_examples() {
    let g = gen_cycle(4, Some(1), &mut rng(1)).unwrap();
    assert_eq!(cycle_sizes(&g), [8]);
    assert_eq!((connectivity_oracle(&g), distance_oracle(&g)), (1, Some(4)));
    let g = gen_cycle(2, Some(0), &mut rng(2)).unwrap();
    assert_eq!(cycle_sizes(&g), [2, 2]);
    assert_eq!(connectivity_oracle(&g), 0);
    assert!(gen_cycle(501, None, &mut rng(3)).is_err());
    assert!(gen_cycle(1, None, &mut rng(3)).is_err());
}

#[test]
fn cycle_task_structure_oracle_and_balance() {
    let mut r = rng(4);
    let mut ones = 0;
    let total = 50_000;
    for i in 0..total {
        let n = if i < 10_000 { 5 } else { 2 + i % 6 };
        let g = gen_cycle(n, None, &mut r).unwrap();
        assert_eq!(g.nodes.len(), 2 * n);
        assert_eq!(g.edges.len(), 2 * n);
        assert_regular(&g);
        let want = if g.label == 1 { vec![2 * n] } else { vec![n, n] };
        assert_eq!(cycle_sizes(&g), want);
        assert_eq!(connectivity_oracle(&g), g.label);
        if g.label == 1 {
            assert_eq!(distance_oracle(&g), Some(n));
        }
        assert_eq!(degree_shortcut(&g), 1);
        assert!(g.nodes.iter().all(|s| s.starts_with('v')));
        ones += g.label as usize;
    }
    let mean = ones as f64 / total as f64;
    assert!((mean - 0.5).abs() <= 0.01, "label mean {mean}");
}

#[test]
fn edges_are_shuffled() {
    // Under a fixed cyclic order the first edge would always leave the source.
    let mut r = rng(5);
    let from_source = (0..8000)
        .filter(|_| {
            let g = gen_cycle(4, Some(1), &mut r).unwrap();
            g.edges[0].0 == g.source()
        })
        .count();
    assert!((from_source as f64 / 8000.0 - 0.125).abs() < 0.02, "{from_source}");
}

#[test]
fn three_cycle_frequency_blocks_and_oracle() {
    let mut r = rng(6);
    let total = 30_000;
    let mut single = 0;
    for _ in 0..total {
        let g = gen_three_cycle(4, &mut r).unwrap();
        assert_eq!(connectivity_oracle(&g), g.label);
        assert_eq!(cycle_sizes(&g), if g.label == 1 { vec![12] } else { vec![4, 4, 4] });
        for (i, &(u, v)) in g.edges.iter().enumerate() {
            let level = |x: usize| g.nodes[x].split('_').nth(1).unwrap().parse::<usize>().unwrap();
            assert_eq!(level(u), i / 3);
            assert_eq!(level(v), (i / 3 + 1) % 4);
        }
        assert!(serialize_graph(&g).render().ends_with("a_0?b_0?c_0"));
        single += g.label as usize;
    }
    let freq = single as f64 / total as f64;
    assert!((freq - 2.0 / 3.0).abs() <= 0.01, "{freq}");
    assert!(gen_three_cycle(1, &mut r).is_err());
}

#[test]
fn random_graph_balance_distance_and_shortcut() {
    let mut r = rng(7);
    let total = 100_000;
    let (mut ones, mut shortcut_right) = (0, 0);
    let mut by_distance = [0usize; 5];
    for i in 0..total {
        let g = gen_random_graph(24, 24, &mut r).unwrap();
        assert_eq!(connectivity_oracle(&g), g.label);
        if i < 20_000 {
            let mut edges = g.edges.clone();
            edges.sort_unstable();
            edges.dedup();
            assert_eq!(edges.len(), 24);
            assert!(g.edges.iter().all(|e| e.0 != e.1));
            if g.label == 0 {
                assert_eq!(distance_oracle(&g), None);
            } else {
                let d = distance_oracle(&g).unwrap();
                assert_eq!(Some(d), g.meta.distance);
                by_distance[d] += 1;
                if d == 1 {
                    assert!(g.edges.contains(&(g.source(), g.target())));
                }
            }
        }
        ones += g.label as usize;
        shortcut_right += usize::from(degree_shortcut(&g) == g.label);
    }
    let mean = ones as f64 / total as f64;
    assert!((mean - 0.5).abs() <= 0.01, "label mean {mean}");
    let acc = shortcut_right as f64 / total as f64;
    assert!((acc - 0.82).abs() <= 0.02, "degree shortcut accuracy {acc}");
    let positives: usize = by_distance.iter().sum();
    for d in 1..=4 {
        let f = by_distance[d] as f64 / positives as f64;
        assert!((f - 0.25).abs() < 0.02, "distance {d}: {f}");
    }
}

#[test]
fn weak_component_negatives_make_the_shortcut_stronger() {
    let mut r = rng(15);
    let total = 10_000;
    let mut right = 0;
    for _ in 0..total {
        let g = gen_random_graph_with(24, 24, NegativePairs::WeakComponents, &mut r).unwrap();
        assert_eq!(connectivity_oracle(&g), g.label);
        if g.label == 0 {
            let wc = weak_components(&g);
            assert_ne!(wc[g.source()], wc[g.target()]);
        }
        right += usize::from(degree_shortcut(&g) == g.label);
    }
    assert!(right as f64 / total as f64 > 0.9);
}

#[test]
fn degree_shortcut_on_an_isolated_source() {
    let g = parse_graph("a>b;c?b;").unwrap();
    assert_eq!(degree_shortcut(&g), 0);
}

#[test]
fn bfs_oracles_agree_with_matrix_closure() {
    let mut r = rng(8);
    for _ in 0..1000 {
        let g = gen_random_graph(24, r.gen_range(10..40), &mut r).unwrap();
        let c = closure(&g);
        assert_eq!(connectivity_oracle(&g), u8::from(c[g.source()][g.target()]));
        assert_eq!(distance_oracle(&g), matrix_distance(&g, g.source(), g.target()));
    }
}

#[test]
fn ood_variants() {
    let mut r = rng(9);
    for _ in 0..2000 {
        let g = gen_ood_cycle(OodVariant::TrainUneven { total: 24, short: 6 }, &mut r).unwrap();
        assert_eq!(connectivity_oracle(&g), g.label);
        assert_regular(&g);
        if g.label == 0 {
            assert_eq!(cycle_sizes(&g), [6, 18]);
            assert_eq!(cycle_of(&g, g.source()), 6);
        } else {
            assert_eq!(cycle_sizes(&g), [24]);
            assert_eq!(distance_oracle(&g), Some(6));
        }
        let g = gen_ood_cycle(OodVariant::TestEven { n: 12 }, &mut r).unwrap();
        assert_eq!(g.nodes.len(), 24);
        assert_eq!(connectivity_oracle(&g), g.label);
        let g = gen_ood_cycle(OodVariant::Ood { i: 3, total: 24 }, &mut r).unwrap();
        assert_eq!(g.nodes.len(), 24);
        assert_eq!(connectivity_oracle(&g), g.label);
        let want: Vec<usize> = if g.label == 1 { vec![6, 6, 6, 6] } else { vec![3, 3, 6, 6, 6] };
        assert_eq!(cycle_sizes(&g), want);
        if g.label == 1 {
            assert_eq!(distance_oracle(&g), Some(3));
        } else {
            assert_eq!((cycle_of(&g, g.source()), cycle_of(&g, g.target())), (3, 3));
        }
        for i in 2..=12 {
            let g = gen_ood_cycle(OodVariant::Ood { i, total: 24 }, &mut r).unwrap();
            assert_eq!(connectivity_oracle(&g), g.label);
            assert_eq!(cycle_sizes(&g).iter().sum::<usize>(), 24);
        }
    }
    assert!(gen_ood_cycle(OodVariant::TrainUneven { total: 10, short: 6 }, &mut r).is_err());
}

#[test]
fn mixed_sizes_are_uniform() {
    let mut r = rng(10);
    let mut hist = [0usize; 7];
    let total = 50_000;
    for _ in 0..total {
        let g = gen_mixed(6, &mut r).unwrap();
        assert_eq!(connectivity_oracle(&g), g.label);
        hist[g.meta.n] += 1;
    }
    for &count in &hist[2..] {
        assert!((count as f64 / total as f64 - 0.2).abs() <= 0.02, "{hist:?}");
    }
    assert!((0..50).all(|_| gen_mixed(2, &mut r).unwrap().meta.n == 2));
}

#[test]
fn parity_examples_and_xor_oracle() {
    assert_eq!(parity_oracle(&Tokens::chars("_01_10_0__1_=")).unwrap(), 1);
    let mut r = rng(11);
    let full = gen_parity(8, 8, &mut r).unwrap();
    assert!(!full.question.render().contains('_'));
    assert!(gen_parity(9, 8, &mut r).is_err());
    for _ in 0..10_000 {
        let n = r.gen_range(1..=20);
        let s = gen_parity(n, 24, &mut r).unwrap();
        let text = s.question.render();
        assert_eq!(text.len(), 25);
        let ones = text.chars().filter(|&c| c == '1').count();
        let zeros = text.chars().filter(|&c| c == '0').count();
        assert_eq!(ones + zeros, n);
        assert_eq!(s.answer.render(), (ones % 2).to_string());
    }
}

#[test]
fn half_parity_examples_and_xor_oracle() {
    let mut r = rng(12);
    for _ in 0..200 {
        let s = gen_half_parity(2, &mut r).unwrap();
        assert_eq!(s.answer.render(), s.question.render()[..1]);
    }
    assert!(gen_half_parity(5, &mut r).is_err());
    for _ in 0..10_000 {
        let s = gen_half_parity(20, &mut r).unwrap();
        let text = s.question.render();
        let ones = text[..10].chars().filter(|&c| c == '1').count();
        assert_eq!(s.answer.render(), (ones % 2).to_string());
        if !text.contains('1') {
            assert_eq!(s.answer.render(), "0");
        }
    }
}

#[test]
fn addition_examples_and_integer_oracle() {
    let mut r = rng(13);
    // The worked examples are reachable under some seed.
    let hit = |format, want: &str| {
        let mut r = rng(0);
        (0..200_000).any(|_| addition_question("94", "31", 4, format, &mut r).unwrap().question.render() == want)
            || (0..200_000).any(|_| addition_question("46", "98", 4, format, &mut r).unwrap().question.render() == want)
    };
    assert!(hit(AdditionFormat::Spaces, "94_+_3__1="));
    assert!(hit(AdditionFormat::Shift, "fs$46+ih$98="));
    assert!(addition_question("07", "1", 4, AdditionFormat::Spaces, &mut r).is_err());
    assert!(gen_addition(5, 1, 4, AdditionFormat::Shift, &mut r).is_err());
    for i in 0..10_000 {
        let format = if i % 2 == 0 { AdditionFormat::Spaces } else { AdditionFormat::Shift };
        let (dx, dy) = (r.gen_range(1..=18), r.gen_range(1..=18));
        let s = gen_addition(dx, dy, 18, format, &mut r).unwrap();
        let (x, y) = addition_operands(&s.question).unwrap();
        assert_eq!((x.len(), y.len()), (dx, dy));
        let sum = x.parse::<u128>().unwrap() + y.parse::<u128>().unwrap();
        assert_eq!(s.answer.render(), sum.to_string());
        assert_eq!(addition_oracle(&s.question).unwrap(), sum.to_string());
        let text = s.question.render();
        match format {
            AdditionFormat::Spaces => assert_eq!(text.len(), 2 * 18 + 2),
            AdditionFormat::Shift => assert_eq!(text.len(), 2 * 19 + 2),
        }
    }
}

#[test]
fn samples_have_valid_states_fields() {
    let s = gen_cycle(3, None, &mut rng(14)).unwrap().to_sample();
    assert!(s.states.is_empty());
    assert_eq!(s.answer.render().len(), 1);
    let json = s.to_json();
    assert_eq!(json["question"], serialize_graph(&parse_graph(json["question"].as_str().unwrap()).unwrap()).render());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generators_are_pure_functions_of_the_seed(seed in any::<u64>(), n in 2usize..10) {
        prop_assert_eq!(gen_cycle(n, None, &mut rng(seed)).unwrap(), gen_cycle(n, None, &mut rng(seed)).unwrap());
        prop_assert_eq!(gen_three_cycle(n, &mut rng(seed)).unwrap(), gen_three_cycle(n, &mut rng(seed)).unwrap());
        prop_assert_eq!(gen_parity(n, 12, &mut rng(seed)).unwrap(), gen_parity(n, 12, &mut rng(seed)).unwrap());
        let a = gen_addition(n, 3, 10, AdditionFormat::Shift, &mut rng(seed)).unwrap();
        prop_assert_eq!(a, gen_addition(n, 3, 10, AdditionFormat::Shift, &mut rng(seed)).unwrap());
    }

    #[test]
    fn serialization_round_trips(seed in any::<u64>(), n in 2usize..12, kind in 0usize..4) {
        let mut r = rng(seed);
        let g = match kind {
            0 => gen_cycle(n, None, &mut r).unwrap(),
            1 => gen_three_cycle(n, &mut r).unwrap(),
            2 => gen_random_graph(24, 24, &mut r).unwrap(),
            _ => gen_ood_cycle(OodVariant::Ood { i: n, total: 24 }, &mut r).unwrap(),
        };
        let back = parse_graph(&serialize_graph(&g).render()).unwrap();
        prop_assert_eq!(&back.nodes, &g.nodes);
        prop_assert_eq!(&back.edges, &g.edges);
        prop_assert_eq!(&back.query, &g.query);
        prop_assert_eq!(connectivity_oracle(&back), g.label);
    }

    #[test]
    fn sample_states_exclude_reserved_tokens(seed in any::<u64>(), n in 1usize..12) {
        let mut r = rng(seed);
        let s = gen_parity(n, 12, &mut r).unwrap();
        for t in s.question.iter() {
            prop_assert!(t != START && t != EOS && t != STATE_SEP);
        }
    }
}
