use citegrowth::citegraph::{as_undirected_adjacency, generate_synthetic_graph, SbmConfig};
use citegrowth::skipgram::{gradient_check, pair_gradients, pair_loss, sigmoid, train, Embedding, EmbeddingParams, NegativeSampler, TrainMode};
use citegrowth::walker::{generate_walks, WalkCorpus, WalkParams};
use proptest::prelude::*;

fn small_corpus() -> (WalkCorpus, usize) {
    let g = generate_synthetic_graph(&SbmConfig::uniform(3, 15, 0.4, 0.01, 2)).unwrap();
    let adj = as_undirected_adjacency(&g);
    let corpus = generate_walks(&adj, &WalkParams { walk_length: 20, walks_per_node: 4, seed: 2, ..Default::default() }).unwrap();
    (corpus, g.node_count())
}

fn params(epochs: usize) -> EmbeddingParams {
    EmbeddingParams { dimension: 16, window: 4, negatives: 3, epochs, seed: 5, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scalar_loss_matches_closed_form(u in -3.0f64..3.0, v in -3.0f64..3.0, n in -3.0f64..3.0) {
        let expected = -(1.0 / (1.0 + (-u * v).exp())).ln() - (1.0 / (1.0 + (u * n).exp())).ln();
        prop_assert!((pair_loss(&[u], &[v], &[&[n]]) - expected).abs() < 1e-12);
        let g = pair_gradients(&[u], &[v], &[&[n]]);
        let su = 1.0 / (1.0 + (-u * v).exp());
        let sn = 1.0 / (1.0 + (-u * n).exp());
        prop_assert!((g.u[0] - (-(1.0 - su) * v + sn * n)).abs() < 1e-12);
        prop_assert!((g.v[0] - (-(1.0 - su) * u)).abs() < 1e-12);
        prop_assert!((g.negatives[0][0] - sn * u).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable(x in -1e4f64..1e4) {
        let s = sigmoid(x);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((s + sigmoid(-x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn analytic_gradient_agrees_with_differences(
        dim in 1usize..12,
        k in 0usize..5,
        vals in prop::collection::vec(-1.0f64..1.0, 12 * 7),
    ) {
        let mut vecs: Vec<Vec<f64>> = vals.chunks(12).take(k + 2).map(|c| c[..dim].to_vec()).collect();
        let loss = |vs: &[Vec<f64>]| {
            let negs: Vec<&[f64]> = vs[2..].iter().map(Vec::as_slice).collect();
            pair_loss(&vs[0], &vs[1], &negs)
        };
        let analytic = {
            let negs: Vec<&[f64]> = vecs[2..].iter().map(Vec::as_slice).collect();
            let g = pair_gradients(&vecs[0], &vecs[1], &negs);
            let mut all = vec![g.u, g.v];
            all.extend(g.negatives);
            all
        };
        let h = 1e-5;
        for r in 0..vecs.len() {
            for c in 0..dim {
                let x = vecs[r][c];
                vecs[r][c] = x + h;
                let up = loss(&vecs);
                vecs[r][c] = x - h;
                let down = loss(&vecs);
                vecs[r][c] = x;
                let fd = (up - down) / (2.0 * h);
                prop_assert!((fd - analytic[r][c]).abs() <= 1e-7 * (1.0 + fd.abs()), "row {} col {}: {} vs {}", r, c, analytic[r][c], fd);
            }
        }
    }
}

#[test]
fn builtin_gradient_check_passes() {
    for seed in 0..5 {
        assert!(gradient_check(16, 5, 1e-5, seed) < 1e-5);
    }
}

#[test]
fn negative_sampler_uses_three_quarter_power() {
    let corpus = WalkCorpus { walks: vec![vec![0, 0, 0, 0, 1], vec![2, 2]] };
    let dist = NegativeSampler::from_corpus(&corpus, 4).unwrap().distribution();
    let w = [4f64.powf(0.75), 1.0, 2f64.powf(0.75)];
    let s: f64 = w.iter().sum();
    assert_eq!(dist.len(), 3);
    for ((node, p), wi) in dist.iter().zip(w) {
        assert!(*node < 3);
        assert!((p - wi / s).abs() < 1e-12);
    }
}

#[test]
fn loss_decreases_over_epochs() {
    let (corpus, n) = small_corpus();
    let (_, report) = train(&corpus, n, &params(4)).unwrap();
    assert_eq!(report.epoch_losses.len(), 4);
    assert!(report.epoch_losses.last().unwrap() < report.epoch_losses.first().unwrap());
}

#[test]
fn deterministic_mode_is_reproducible() {
    let (corpus, n) = small_corpus();
    let (a, _) = train(&corpus, n, &params(2)).unwrap();
    let (b, _) = train(&corpus, n, &params(2)).unwrap();
    assert_eq!(a.as_slice(), b.as_slice());
    let (c, _) = train(&corpus, n, &EmbeddingParams { seed: 6, ..params(2) }).unwrap();
    assert_ne!(a.as_slice(), c.as_slice());
}

#[test]
fn parallel_mode_produces_finite_vectors() {
    let (corpus, n) = small_corpus();
    let (e, _) = train(&corpus, n, &EmbeddingParams { mode: TrainMode::Parallel, ..params(2) }).unwrap();
    assert_eq!((e.node_count(), e.dimension()), (n, 16));
    assert!(e.as_slice().iter().all(|v| v.is_finite()));
}

#[test]
fn same_block_nodes_are_closer() {
    let (corpus, n) = small_corpus();
    let (e, _) = train(&corpus, n, &params(3)).unwrap();
    let (mut within, mut across) = (Vec::new(), Vec::new());
    for a in 0..n {
        for b in a + 1..n {
            if a / 15 == b / 15 { within.push(e.cosine(a, b)) } else { across.push(e.cosine(a, b)) }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&within) > mean(&across) + 0.1);
}

#[test]
fn text_format_round_trip() {
    let e = Embedding::from_rows(&[vec![0.5, -1.25], vec![3.0, 1e-7]]);
    let labels = vec!["a".to_string(), "b".to_string()];
    let mut buf = Vec::new();
    e.write_text(&labels, &mut buf).unwrap();
    let (l, back) = Embedding::read_text(buf.as_slice()).unwrap();
    assert_eq!(l, labels);
    assert_eq!(back, e);
    let norm = e.normalized();
    assert!((norm.row(0).iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn invalid_parameters() {
    let (corpus, n) = small_corpus();
    assert!(train(&corpus, n, &EmbeddingParams { dimension: 0, ..params(1) }).is_err());
    assert!(train(&corpus, n, &EmbeddingParams { initial_lr: -1.0, ..params(1) }).is_err());
}
