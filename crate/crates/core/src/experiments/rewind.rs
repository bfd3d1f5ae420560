use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::net::{accuracy_by_subset, CheckpointStore, FeedforwardModel, SubsetAccuracy};
use crate::synthdata::PermutedDataset;

/// The final model with layer `l` (1-based weight layer) taken from the
/// snapshot at `epoch`.
pub fn rewind_layer(
    final_model: &FeedforwardModel,
    store: &CheckpointStore,
    layer: usize,
    epoch: usize,
) -> Result<FeedforwardModel> {
    let snapshot = store.get(epoch)?;
    final_model.with_layer_from(&snapshot, layer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewindCell {
    pub layer: usize,
    pub epoch: usize,
    pub accuracy: Option<SubsetAccuracy>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewindResult {
    pub cells: Vec<RewindCell>,
    pub baseline_final: SubsetAccuracy,
    pub baseline_best: SubsetAccuracy,
    pub final_epoch: usize,
    pub best_epoch: usize,
}

impl RewindResult {
    pub fn cell(&self, layer: usize, epoch: usize) -> Option<&RewindCell> {
        self.cells.iter().find(|c| c.layer == layer && c.epoch == epoch)
    }

    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "epoch", "train", "test", "unpermuted", "permuted", "restored", "error"])?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:?}"));
        for c in &self.cells {
            let a = c.accuracy.as_ref();
            w.write_record([
                c.layer.to_string(),
                c.epoch.to_string(),
                opt(a.map(|a| a.train)),
                opt(a.and_then(|a| a.test)),
                opt(a.and_then(|a| a.unpermuted)),
                opt(a.and_then(|a| a.permuted)),
                opt(a.and_then(|a| a.restored)),
                c.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Accuracy of every single-layer rewind in `layers x epochs`. A failing
/// cell is recorded and the sweep continues.
pub fn rewind_sweep(
    final_model: &FeedforwardModel,
    store: &CheckpointStore,
    data: &PermutedDataset,
    best_epoch: usize,
    layers: &[usize],
    epochs: &[usize],
) -> Result<RewindResult> {
    let baseline_final = accuracy_by_subset(final_model, data)?;
    let baseline_best = accuracy_by_subset(&store.get(best_epoch)?, data)?;
    let mut cells = Vec::with_capacity(layers.len() * epochs.len());
    for &layer in layers {
        for &epoch in epochs {
            let outcome = rewind_layer(final_model, store, layer, epoch).and_then(|m| accuracy_by_subset(&m, data));
            let (accuracy, error) = match outcome {
                Ok(a) => (Some(a), None),
                Err(e) => (None, Some(e.to_string())),
            };
            cells.push(RewindCell {
                layer,
                epoch,
                accuracy,
                error,
            });
        }
    }
    Ok(RewindResult {
        cells,
        baseline_final,
        baseline_best,
        final_epoch: final_model.epoch,
        best_epoch,
    })
}
