//! Trajectory metrics: superposed Cα-RMSE, `R_s` tables and TICA.

mod align;
mod metrics;
mod plot;
mod tica;

pub use align::{ca_rmse, kabsch, rmsd_points};
pub use metrics::{
    per_step_rmse, r_table, EvalReport, EvalSettings, MetricReport, TicaSummary, DEFAULT_S_VALUES,
};
pub use plot::write_scatter_png;
pub use tica::{
    tica_features, tica_features_on, tica_fit, tica_summary, tica_histogram, tica_project, TicaModel, TICA_EPSILON,
    TICA_LAG,
};
