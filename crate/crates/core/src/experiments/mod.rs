//! End-to-end experiments: training, geometry over epochs and layers,
//! gradient reports, layer rewinding and the width sweep, plus the
//! activation-dump format and SVG charts.

mod config;
mod dump;
pub mod output;
pub mod plot;
mod rewind;
mod run;
mod sweep;

pub use config::{AnalysisSchedule, ExperimentConfig, NetConfig};
pub use dump::{
    ingest_activation_dump, read_dump, read_dump_csv, write_dump, write_dump_csv, ActivationDump, DUMP_MAGIC,
    DUMP_VERSION,
};
pub use rewind::{rewind_layer, rewind_sweep, RewindCell, RewindResult};
pub use run::{
    analysis_epochs, analyze_epochs, build_dataset, layer_activations, log_spaced_epochs, run_memorization_experiment,
    ExperimentReport, MgmRow, MgmTable, Stage,
};
pub use sweep::{trend_inversions, width_sweep, MgmSummary, WidthRow, WidthSweep};
