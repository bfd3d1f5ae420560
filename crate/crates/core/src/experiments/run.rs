use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::geometry::{analyze, MgmReport};
use crate::graddecomp::{subset_grad_report, GradDecompReport};
use crate::net::{forward, init_model, train, CheckpointStore, FeedforwardModel, TrainingTrace};
use crate::synthdata::{generate_spheres, permute_labels, subset_manifolds, PermutedDataset, Subset};

/// Geometry of one subset's manifolds at one layer and epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgmRow {
    pub epoch: usize,
    /// Activation layer; 0 is the input.
    pub layer: usize,
    pub subset: Subset,
    pub report: MgmReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgmTable {
    pub rows: Vec<MgmRow>,
    /// `(epoch, layer, subset, message)` for every analysis that failed.
    pub failures: Vec<(usize, usize, Subset, String)>,
}

impl MgmTable {
    pub fn get(&self, epoch: usize, layer: usize, subset: Subset) -> Option<&MgmReport> {
        self.rows
            .iter()
            .find(|r| r.epoch == epoch && r.layer == layer && r.subset == subset)
            .map(|r| &r.report)
    }

    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "epoch",
            "layer",
            "subset",
            "alpha_m",
            "r_m",
            "d_m",
            "rho_center",
            "alpha_empirical",
            "removed_center_rank",
            "n_gauss_samples",
            "seed",
        ])?;
        for r in &self.rows {
            let m = &r.report;
            w.write_record([
                r.epoch.to_string(),
                r.layer.to_string(),
                r.subset.name().to_string(),
                format!("{:?}", m.alpha_m),
                format!("{:?}", m.r_m),
                format!("{:?}", m.d_m),
                format!("{:?}", m.rho_center),
                m.alpha_empirical.map_or_else(String::new, |v| format!("{v:?}")),
                m.removed_center_rank.to_string(),
                m.n_gauss_samples.to_string(),
                m.seed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds the dataset of a config: generation followed by permutation.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<PermutedDataset> {
    let data = generate_spheres(&cfg.dataset)?;
    permute_labels(&data, cfg.epsilon, cfg.permutation_seed)
}

/// Up to `count` stored epochs spread logarithmically over `(0, final)`.
pub fn log_spaced_epochs(available: &[usize], final_epoch: usize, count: usize) -> Vec<usize> {
    if final_epoch < 2 || count == 0 {
        return Vec::new();
    }
    let mut out = BTreeSet::new();
    let top = (final_epoch as f64).ln();
    for k in 1..=count {
        let target = (top * k as f64 / (count + 1) as f64).exp();
        let nearest = available
            .iter()
            .copied()
            .filter(|&e| e > 0 && e < final_epoch)
            .min_by(|&a, &b| {
                let da = (a as f64 - target).abs();
                let db = (b as f64 - target).abs();
                da.total_cmp(&db).then(a.cmp(&b))
            });
        if let Some(e) = nearest {
            out.insert(e);
        }
    }
    out.into_iter().collect()
}

/// Epochs to analyze: explicit ones if configured, else 0, best, final and
/// the log-spaced intermediates. All must be stored.
pub fn analysis_epochs(cfg: &ExperimentConfig, store: &CheckpointStore, trace: &TrainingTrace) -> Vec<usize> {
    let mut set = BTreeSet::new();
    if cfg.analysis.epochs.is_empty() {
        set.extend([0, trace.best_epoch, trace.final_epoch]);
        set.extend(log_spaced_epochs(store.epochs(), trace.final_epoch, cfg.analysis.log_spaced));
    } else {
        set.extend(cfg.analysis.epochs.iter().copied());
    }
    set.into_iter().collect()
}

/// Activations of every requested layer for the training and test splits.
pub fn layer_activations(
    model: &FeedforwardModel,
    data: &PermutedDataset,
    layers: &[usize],
) -> Result<Vec<(usize, DMatrix<f64>, DMatrix<f64>)>> {
    let tr = forward(model, data.train_inputs())?;
    let te = forward(model, data.test_inputs())?;
    layers
        .iter()
        .map(|&l| {
            if l >= tr.activations.len() {
                return Err(Error::InvalidInput(format!("activation layer {l} does not exist")));
            }
            Ok((l, tr.activations[l].clone(), te.activations[l].clone()))
        })
        .collect()
}

/// Geometry of every configured subset and layer at the given epochs.
/// Individual failures (e.g. an empty subset) are recorded, not fatal.
pub fn analyze_epochs(
    cfg: &ExperimentConfig,
    store: &CheckpointStore,
    data: &PermutedDataset,
    epochs: &[usize],
) -> Result<MgmTable> {
    let acfg = cfg.analysis.analysis_config();
    let layers = cfg.analysis_layers();
    let mut table = MgmTable {
        rows: Vec::new(),
        failures: Vec::new(),
    };
    for &epoch in epochs {
        let model = store.get(epoch)?;
        for (layer, train_act, test_act) in layer_activations(&model, data, &layers)? {
            for &subset in &cfg.analysis.subsets {
                let act = if subset.uses_test_split() { &test_act } else { &train_act };
                let result = subset_manifolds(
                    data,
                    act,
                    subset,
                    cfg.analysis.p_sel,
                    cfg.analysis.m_sel,
                    cfg.analysis.seed,
                )
                .and_then(|set| analyze(&set, &acfg));
                match result {
                    Ok(report) => table.rows.push(MgmRow {
                        epoch,
                        layer,
                        subset,
                        report,
                    }),
                    Err(e @ (Error::EmptySubset(_) | Error::InsufficientExamples { .. })) => {
                        table.failures.push((epoch, layer, subset, e.to_string()))
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(table)
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub data: PermutedDataset,
    pub trace: TrainingTrace,
    pub final_model: FeedforwardModel,
    pub store: CheckpointStore,
    pub analyzed_epochs: Vec<usize>,
    pub mgm: MgmTable,
    pub grad: GradDecompReport,
}

impl ExperimentReport {
    pub fn best_epoch(&self) -> usize {
        self.trace.best_epoch
    }

    pub fn final_epoch(&self) -> usize {
        self.trace.final_epoch
    }
}

/// Stage at which an experiment failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Data,
    Train,
    Analyze,
    GradReport,
}

/// Trains one model and runs the geometry and gradient analyses on its
/// checkpoints. `store` receives every snapshot.
pub fn run_memorization_experiment(
    cfg: &ExperimentConfig,
    mut store: CheckpointStore,
) -> std::result::Result<ExperimentReport, (Stage, Error)> {
    cfg.validate().map_err(|e| (Stage::Data, e))?;
    let data = build_dataset(cfg).map_err(|e| (Stage::Data, e))?;
    let mut model = init_model(&cfg.net_spec()).map_err(|e| (Stage::Train, e))?;
    let trace = train(&mut model, &data, &cfg.train, &mut store).map_err(|e| (Stage::Train, e))?;
    let epochs = analysis_epochs(cfg, &store, &trace);
    let mgm = analyze_epochs(cfg, &store, &data, &epochs).map_err(|e| (Stage::Analyze, e))?;
    let grad_epochs: Vec<usize> = if cfg.analysis.grad_epochs.is_empty() {
        BTreeSet::from([0, trace.best_epoch, trace.final_epoch]).into_iter().collect()
    } else {
        cfg.analysis.grad_epochs.clone()
    };
    let grad = subset_grad_report(&store, &data, &grad_epochs).map_err(|e| (Stage::GradReport, e))?;
    Ok(ExperimentReport {
        config: cfg.clone(),
        data,
        trace,
        final_model: model,
        store,
        analyzed_epochs: epochs,
        mgm,
        grad,
    })
}
