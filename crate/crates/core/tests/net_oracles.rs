use memgeom::graddecomp::{centering_term, decompose_loss, grad_parts, grad_parts_final_layer, grad_parts_layer};
use memgeom::net::{forward, init_model, loss_and_grad, train, CheckpointStore, FeedforwardModel, NetSpec, Optimizer, TrainConfig};
use memgeom::synthdata::{generate_spheres, permute_labels, SphereDatasetSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn spec(bias: bool) -> NetSpec {
    NetSpec {
        layer_widths: vec![7, 9, 8, 6, 4],
        gain: 1.3,
        bias,
        seed: 17,
    }
}

fn batch(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut r))
}

/// Random rows on the simplex.
fn distributions(rows: usize, classes: usize, seed: u64) -> DMatrix<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut m = DMatrix::from_fn(rows, classes, |_, _| r.random::<f64>() + 1e-3);
    for mut row in m.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    m
}

/// Direct `-sum P_L log softmax` evaluation.
fn ce_direct(model: &FeedforwardModel, x: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    let logits = forward(model, x).unwrap().logits;
    let mut total = 0.0;
    for i in 0..x.nrows() {
        let row = logits.row(i);
        let m = row.max();
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for c in 0..t.ncols() {
            total -= t[(i, c)] * (row[c] - lse);
        }
    }
    total / x.nrows() as f64
}

fn with_weight(model: &FeedforwardModel, layer: usize, idx: (usize, usize), delta: f64) -> FeedforwardModel {
    let mut w = model.weights().to_vec();
    w[layer][idx] += delta;
    let mut m = FeedforwardModel::from_weights(model.spec().clone(), w, model.biases().map(|b| b.to_vec())).unwrap();
    m.epoch = model.epoch;
    m
}

#[test]
fn gradient_matches_central_differences() {
    for bias in [false, true] {
        let model = init_model(&spec(bias)).unwrap();
        let x = batch(12, 7, 1);
        let t = distributions(12, 4, 2);
        let (_, g) = loss_and_grad(&model, &x, &t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-5;
        for l in 0..model.n_layers() {
            let (rows, cols) = model.weight(l + 1).shape();
            for _ in 0..20 {
                let idx = (rng.random_range(0..rows), rng.random_range(0..cols));
                let fd = (ce_direct(&with_weight(&model, l, idx, h), &x, &t)
                    - ce_direct(&with_weight(&model, l, idx, -h), &x, &t))
                    / (2.0 * h);
                let an = g.weights[l][idx];
                let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-4 || (fd - an).abs() < 1e-10, "layer {} {idx:?}: {an} vs {fd}", l + 1);
            }
        }
    }
}

#[test]
fn loss_decomposition_sums_to_cross_entropy() {
    let model = init_model(&spec(true)).unwrap();
    let x = batch(32, 7, 4);
    let t = distributions(32, 4, 5);
    let (dep, ind) = decompose_loss(&model, &x, &t).unwrap();
    assert!((dep + ind - ce_direct(&model, &x, &t)).abs() < 1e-12);
}

#[test]
fn parts_sum_to_the_total_gradient() {
    let model = init_model(&spec(false)).unwrap();
    let x = batch(20, 7, 6);
    let t = distributions(20, 4, 7);
    let reference = batch(50, 7, 8);
    let gbar = centering_term(&model, &reference).unwrap();
    let parts = grad_parts(&model, &x, &t, &gbar).unwrap();
    let (_, total) = loss_and_grad(&model, &x, &t).unwrap();
    let sum = parts.total();
    let last = model.n_layers() - 1;
    for l in 0..model.n_layers() {
        let tol = if l == last { 1e-10 } else { 1e-8 };
        assert!((&sum.weights[l] - &total.weights[l]).amax() <= tol, "layer {}", l + 1);
    }
    // the closed form and the explicit-Jacobian form agree with the VJP split
    let (dep_l, ind_l) = grad_parts_final_layer(&model, &x, &t, &reference).unwrap();
    assert!((&dep_l - &parts.dep.weights[last]).amax() < 1e-12);
    assert!((&ind_l - &parts.ind.weights[last]).amax() < 1e-12);
    for l in 1..=model.n_layers() {
        let (dep_j, ind_j) = grad_parts_layer(&model, &x, &t, &reference, l).unwrap();
        assert!((&dep_j - &parts.dep.weights[l - 1]).amax() < 1e-10, "layer {l}");
        assert!((&ind_j - &parts.ind.weights[l - 1]).amax() < 1e-10, "layer {l}");
    }
}

#[test]
fn dependent_part_finite_difference() {
    // the label-dependent loss minus its centering is linear in the logits;
    // check the final-layer part against differences of L_dep
    let model = init_model(&spec(false)).unwrap();
    let x = batch(10, 7, 9);
    let t = distributions(10, 4, 10);
    let last = model.n_layers() - 1;
    let zero_center = DMatrix::<f64>::zeros(1, 7);
    let (dep, _) = grad_parts_final_layer(&model, &x, &t, &zero_center).unwrap();
    let h = 1e-5;
    for idx in [(0, 0), (1, 3), (3, 5)] {
        let f = |d: f64| decompose_loss(&with_weight(&model, last, idx, d), &x, &t).unwrap().0;
        let fd = (f(h) - f(-h)) / (2.0 * h);
        assert!((fd - dep[idx]).abs() < 1e-7, "{idx:?}: {fd} vs {}", dep[idx]);
    }
}

#[test]
fn full_batch_descent_never_increases_loss() {
    let spheres = SphereDatasetSpec {
        n_classes: 4,
        ambient_dim: 12,
        sphere_dim: 3,
        radius: 0.5,
        train_per_class: 10,
        test_per_class: 2,
        seed: 2,
    };
    let data = permute_labels(&generate_spheres(&spheres).unwrap(), 0.2, 3).unwrap();
    let net = NetSpec::uniform(12, 10, 2, 4);
    let mut model = init_model(&net).unwrap();
    let cfg = TrainConfig {
        optimizer: Optimizer::FullBatchGd,
        learning_rate: 1e-3,
        max_epochs: 50,
        target_train_accuracy: None,
        ..TrainConfig::default()
    };
    let mut store = CheckpointStore::in_memory(&net);
    let trace = train(&mut model, &data, &cfg, &mut store).unwrap();
    assert_eq!(trace.records.len(), 51);
    for w in trace.records.windows(2) {
        assert!(w[1].loss <= w[0].loss + 1e-9, "epoch {}: {} -> {}", w[1].epoch, w[0].loss, w[1].loss);
    }
}

#[test]
fn zero_weights_give_uniform_predictions() {
    let s = spec(false);
    let w: Vec<DMatrix<f64>> = s.layer_widths.windows(2).map(|p| DMatrix::zeros(p[1], p[0])).collect();
    let model = FeedforwardModel::from_weights(s, w, None).unwrap();
    let probs = forward(&model, &batch(5, 7, 1)).unwrap().probs;
    assert!(probs.iter().all(|&p| (p - 0.25).abs() < 1e-15));
}
