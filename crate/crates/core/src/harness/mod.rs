//! Simulated experiments: single trials, class-pair grids, strategy
//! comparisons and their CSV/SVG outputs.

pub mod grid;
pub mod output;
pub mod seeds;
pub mod trial;

pub use grid::{
    cell_index, cell_label, compare_strategies, is_degenerate, run_cells, run_grid, BatchConfig, CellSummary, Comparison,
    GridSummary, QuartilePoint, TrialRecord,
};
pub use output::{write_comparison_outputs, write_grid_outputs, write_summary_csv, write_trial_outputs, write_trials_csv};
pub use seeds::derive_seed;
pub use trial::{run_trial, run_trial_with_exam, TrialConfig, TrialFailure, TrialResult, TraceEntry};
