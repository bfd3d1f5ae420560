use serde::{Deserialize, Serialize};

use super::run::{build_dataset, layer_activations};
use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::geometry::analyze;
use crate::net::{init_model, train, CheckpointStore};
use crate::synthdata::{subset_manifolds, Subset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgmSummary {
    pub alpha_m: f64,
    pub r_m: f64,
    pub d_m: f64,
    pub rho_center: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthRow {
    pub factor: f64,
    pub hidden_widths: Vec<usize>,
    pub n_params: usize,
    pub best_epoch: usize,
    pub final_epoch: usize,
    pub best_test_accuracy: f64,
    pub final_test_accuracy: f64,
    /// Test-manifold geometry at the last hidden layer.
    pub best_mgm: Option<MgmSummary>,
    pub final_mgm: Option<MgmSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthSweep {
    pub rows: Vec<WidthRow>,
    pub epsilon: f64,
}

/// Number of adjacent steps that go against the overall trend
/// (sign of `last - first`).
pub fn trend_inversions(values: &[f64]) -> usize {
    if values.len() < 2 {
        return 0;
    }
    let dir = (values[values.len() - 1] - values[0]).signum();
    values.windows(2).filter(|w| (w[1] - w[0]) * dir < 0.0).count()
}

impl WidthSweep {
    fn column(&self, f: impl Fn(&WidthRow) -> Option<f64>) -> Vec<f64> {
        self.rows.iter().filter_map(f).collect()
    }

    pub fn final_r_m(&self) -> Vec<f64> {
        self.column(|r| r.final_mgm.map(|m| m.r_m))
    }

    pub fn final_rho(&self) -> Vec<f64> {
        self.column(|r| r.final_mgm.map(|m| m.rho_center))
    }

    pub fn final_d_m(&self) -> Vec<f64> {
        self.column(|r| r.final_mgm.map(|m| m.d_m))
    }

    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = [
            "factor",
            "n_params",
            "best_epoch",
            "final_epoch",
            "best_test_accuracy",
            "final_test_accuracy",
        ]
        .map(String::from)
        .to_vec();
        for stage in ["best", "final"] {
            for m in ["alpha_m", "r_m", "d_m", "rho_center"] {
                header.push(format!("{stage}_{m}"));
            }
        }
        header.push("error".into());
        w.write_record(&header)?;
        let mgm = |m: Option<MgmSummary>| -> Vec<String> {
            match m {
                Some(m) => [m.alpha_m, m.r_m, m.d_m, m.rho_center].iter().map(|v| format!("{v:?}")).collect(),
                None => vec![String::new(); 4],
            }
        };
        for r in &self.rows {
            let mut rec = vec![
                format!("{:?}", r.factor),
                r.n_params.to_string(),
                r.best_epoch.to_string(),
                r.final_epoch.to_string(),
                format!("{:?}", r.best_test_accuracy),
                format!("{:?}", r.final_test_accuracy),
            ];
            rec.extend(mgm(r.best_mgm));
            rec.extend(mgm(r.final_mgm));
            rec.push(r.error.clone().unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn width_row(cfg: &ExperimentConfig, factor: f64) -> Result<WidthRow> {
    let mut c = cfg.clone();
    c.epsilon = cfg.width_epsilon;
    for w in &mut c.net.hidden_widths {
        *w = ((*w as f64 * factor).round() as usize).max(1);
    }
    c.validate()?;
    let data = build_dataset(&c)?;
    let spec = c.net_spec();
    let mut model = init_model(&spec)?;
    // only epoch 0, each new best and the final epoch are kept
    let mut tc = c.train.clone();
    tc.checkpoint_stride = usize::MAX;
    let mut store = CheckpointStore::in_memory(&spec);
    let trace = train(&mut model, &data, &tc, &mut store)?;
    let test_acc = |e: usize| {
        trace
            .record(e)
            .and_then(|r| r.accuracy.test)
            .ok_or_else(|| Error::Numerical(format!("no test accuracy at epoch {e}")))
    };
    let last_hidden = c.net.hidden_widths.len();
    let acfg = c.analysis.analysis_config();
    let mgm_at = |epoch: usize| -> Result<MgmSummary> {
        let m = store.get(epoch)?;
        let (_, _, test_act) = layer_activations(&m, &data, &[last_hidden])?.remove(0);
        let set = subset_manifolds(&data, &test_act, Subset::Test, c.analysis.p_sel, c.analysis.m_sel, c.analysis.seed)?;
        let r = analyze(&set, &acfg)?;
        Ok(MgmSummary {
            alpha_m: r.alpha_m,
            r_m: r.r_m,
            d_m: r.d_m,
            rho_center: r.rho_center,
        })
    };
    Ok(WidthRow {
        factor,
        hidden_widths: c.net.hidden_widths.clone(),
        n_params: spec.n_params(),
        best_epoch: trace.best_epoch,
        final_epoch: trace.final_epoch,
        best_test_accuracy: test_acc(trace.best_epoch)?,
        final_test_accuracy: test_acc(trace.final_epoch)?,
        best_mgm: Some(mgm_at(trace.best_epoch)?),
        final_mgm: Some(mgm_at(trace.final_epoch)?),
        error: None,
    })
}

/// Trains one model per hidden-width factor (label noise
/// `cfg.width_epsilon`) and records accuracies and test-manifold geometry
/// at the best and final epochs. A failing width is recorded and skipped.
pub fn width_sweep(cfg: &ExperimentConfig, factors: &[f64]) -> Result<WidthSweep> {
    if factors.len() < 3 {
        return Err(Error::Config("a width sweep needs at least 3 factors".into()));
    }
    let rows = factors
        .iter()
        .map(|&f| {
            width_row(cfg, f).unwrap_or_else(|e| {
                let mut widths = cfg.net.hidden_widths.clone();
                widths.iter_mut().for_each(|w| *w = ((*w as f64 * f).round() as usize).max(1));
                WidthRow {
                    factor: f,
                    hidden_widths: widths,
                    n_params: 0,
                    best_epoch: 0,
                    final_epoch: 0,
                    best_test_accuracy: f64::NAN,
                    final_test_accuracy: f64::NAN,
                    best_mgm: None,
                    final_mgm: None,
                    error: Some(e.to_string()),
                }
            })
        })
        .collect();
    Ok(WidthSweep {
        rows,
        epsilon: cfg.width_epsilon,
    })
}
