//! Monte Carlo, joint-versus-disjoint and bootstrap-prediction harnesses,
//! plus the CSV/JSON plumbing around them.

mod io;
mod mc;
mod predict;

pub use io::{
    content_hash, load_series_csv, load_series_csv_str, write_bands_csv, write_path_csv, write_selection_csv,
    write_sidecar, write_summary_csv, write_tuning_csv, LoadedSeries,
};
pub use mc::{
    compare_joint_disjoint, run_mc, run_mc_model, DeltaRule, McConfig, McSummary, Method, MethodSummary, ParamSummary,
    QmleStart, TuningSummary,
};
pub use predict::{bootstrap_predict, fit_methods, quantile, PredictReport, SeriesPrediction};
