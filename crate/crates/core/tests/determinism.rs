use memgeom::experiments::{rewind_layer, rewind_sweep, run_memorization_experiment, ExperimentConfig, ExperimentReport};
use memgeom::net::CheckpointStore;
use memgeom::synthdata::SphereDatasetSpec;

fn tiny() -> ExperimentConfig {
    let mut c = ExperimentConfig::small();
    c.dataset = SphereDatasetSpec {
        n_classes: 6,
        ambient_dim: 24,
        sphere_dim: 4,
        radius: 2.0,
        train_per_class: 20,
        test_per_class: 5,
        seed: 3,
    };
    c.net.hidden_widths = vec![16, 16];
    c.train.batch_size = 16;
    c.train.max_epochs = 12;
    c.train.learning_rate = 3e-3;
    c.analysis.p_sel = 6;
    c.analysis.m_sel = 4;
    c.analysis.n_samples = 20;
    c.analysis.log_spaced = 2;
    c
}

fn run(cfg: &ExperimentConfig, threads: usize) -> ExperimentReport {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| run_memorization_experiment(cfg, CheckpointStore::in_memory(&cfg.net_spec())).unwrap())
}

fn assert_same(a: &ExperimentReport, b: &ExperimentReport) {
    assert_eq!(a.data, b.data);
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.final_model, b.final_model);
    assert_eq!(a.analyzed_epochs, b.analyzed_epochs);
    assert_eq!(a.mgm, b.mgm);
    assert_eq!(a.grad, b.grad);
    for &e in a.store.epochs() {
        assert_eq!(a.store.get(e).unwrap(), b.store.get(e).unwrap());
    }
}

#[test]
fn reruns_are_bit_identical_across_thread_counts() {
    let cfg = tiny();
    let one = run(&cfg, 1);
    assert_same(&one, &run(&cfg, 1));
    assert_same(&one, &run(&cfg, 4));
}

#[test]
fn other_seed_changes_the_run() {
    let cfg = tiny();
    let mut other = cfg.clone();
    other.reseed(99);
    assert_ne!(run(&cfg, 1).final_model, run(&other, 1).final_model);
}

#[test]
fn rewinding_to_the_final_epoch_is_the_identity() {
    let cfg = tiny();
    let rep = run(&cfg, 1);
    let last = rep.final_epoch();
    for l in 1..=rep.final_model.n_layers() {
        assert_eq!(rewind_layer(&rep.final_model, &rep.store, l, last).unwrap(), rep.final_model);
        // rewinding twice to the same snapshot changes nothing further
        let once = rewind_layer(&rep.final_model, &rep.store, l, 0).unwrap();
        let init = rep.store.get(0).unwrap();
        assert_eq!(once.weight(l), init.weight(l));
        let twice = once.with_layer_from(&init, l).unwrap();
        assert_eq!(twice, once);
        // and restoring the final weights undoes it
        assert_eq!(once.with_layer_from(&rep.final_model, l).unwrap(), rep.final_model);
    }
    let layers: Vec<usize> = (1..=rep.final_model.n_layers()).collect();
    let sweep = rewind_sweep(&rep.final_model, &rep.store, &rep.data, rep.best_epoch(), &layers, &[last, 10_000]).unwrap();
    for &l in &layers {
        assert_eq!(sweep.cell(l, last).unwrap().accuracy.as_ref(), Some(&sweep.baseline_final));
        assert!(sweep.cell(l, 10_000).unwrap().error.is_some());
    }
}
