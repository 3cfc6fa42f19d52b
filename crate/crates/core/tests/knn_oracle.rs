use std::collections::BTreeSet;

use evmod_core::knn::{build_knn_graph, denoise, DenoiseParams, SpatioTemporalPoint};
use proptest::prelude::*;

fn points(coords: &[[f64; 3]]) -> Vec<SpatioTemporalPoint> {
    coords
        .iter()
        .enumerate()
        .map(|(i, c)| SpatioTemporalPoint::new(c[0], c[1], c[2], i))
        .collect()
}

fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

/// All-pairs union-rule graph with ties broken by the smaller index.
fn brute_force(coords: &[[f64; 3]], k: usize) -> BTreeSet<(usize, usize)> {
    let n = coords.len();
    let mut edges = BTreeSet::new();
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (d2(&coords[i], &coords[j]), j)).collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in others.iter().take(k) {
            edges.insert((i.min(j), i.max(j)));
        }
    }
    edges
}

fn check(coords: &[[f64; 3]], k: usize) -> Result<(), TestCaseError> {
    let k = k.min(coords.len() - 1);
    let graph = build_knn_graph(&points(coords), k).unwrap();
    let got: BTreeSet<(usize, usize)> = graph.edges.iter().copied().collect();
    prop_assert_eq!(got.len(), graph.edges.len(), "duplicate edges");
    prop_assert_eq!(got, brute_force(coords, k));
    for (i, j) in &graph.edges {
        prop_assert!(i < j);
        prop_assert!(graph.neighbors(*i).contains(j) && graph.neighbors(*j).contains(i));
    }
    Ok(())
}

fn real_cloud(max_n: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-50.0f64..50.0), 2..max_n)
}

/// Small integer lattice, so many distances tie.
fn lattice_cloud(max_n: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3((0i32..6).prop_map(f64::from)), 2..max_n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matches_brute_force(coords in real_cloud(500), k in prop::sample::select(vec![1usize, 5, 45])) {
        check(&coords, k)?;
    }

    #[test]
    fn matches_brute_force_with_ties(coords in lattice_cloud(120), k in 1usize..12) {
        check(&coords, k)?;
    }

    #[test]
    fn every_node_has_at_least_k_neighbours(coords in real_cloud(200), k in 1usize..10) {
        let k = k.min(coords.len() - 1);
        let graph = build_knn_graph(&points(&coords), k).unwrap();
        for i in 0..coords.len() {
            prop_assert!(graph.degree(i) >= k);
        }
    }

    #[test]
    fn denoise_keeps_whole_components(coords in real_cloud(150), k in 1usize..6, min in 1usize..20) {
        let k = k.min(coords.len() - 1);
        let graph = build_knn_graph(&points(&coords), k).unwrap();
        let kept = denoise(&graph, DenoiseParams::components_only(min)).unwrap();
        // union-find over the brute-force edges
        let mut parent: Vec<usize> = (0..coords.len()).collect();
        fn root(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for (i, j) in brute_force(&coords, k) {
            let (a, b) = (root(&mut parent, i), root(&mut parent, j));
            parent[a] = b;
        }
        let roots: Vec<usize> = (0..coords.len()).map(|i| root(&mut parent, i)).collect();
        let expected: BTreeSet<usize> = (0..coords.len())
            .filter(|&i| roots.iter().filter(|&&r| r == roots[i]).count() >= min)
            .collect();
        let got: BTreeSet<usize> = kept.points.iter().map(|p| p.source_index).collect();
        prop_assert_eq!(kept.removed, coords.len() - got.len());
        prop_assert_eq!(got, expected);
    }
}

#[test]
fn two_points_are_linked() {
    let graph = build_knn_graph(&points(&[[0.0; 3], [1.0, 0.0, 0.0]]), 1).unwrap();
    assert_eq!(graph.edges, vec![(0, 1)]);
}

#[test]
fn one_point_is_rejected() {
    assert!(build_knn_graph(&points(&[[0.0; 3]]), 1).is_err());
}
