//! LAMMPS log analysis: thermo-table parsing, simulation-type detection and
//! the rule-based quality checks.

mod plot;
mod rules;
mod sim_type;

use serde::{Deserialize, Serialize};

pub use plot::{render_svg, write_plots, PLOT_COLUMNS};
pub use rules::{count_dump_frames, evaluate_rules, AnomalyFlag, RuleQualityReport, ToleranceConfig, Verdict};
pub use sim_type::{identify_sim_type, Ensemble, SimType};
pub(crate) use sim_type::from_fixes;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ThermoError {
    #[error("no thermo block found in log")]
    NoThermoBlock,
}

/// Thermo output of a log. NaN cells are preserved.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ThermoSeries {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Inclusive `(start_row, end_row)` per run block.
    pub segments: Vec<(usize, usize)>,
}

impl ThermoSeries {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn last_segment_rows(&self) -> &[Vec<f64>] {
        match self.segments.last() {
            Some(&(start, end)) => &self.rows[start..=end],
            None => &[],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Extracts thermo blocks. A block starts at a line whose first token is
/// `Step` and ends at `Loop time`, an `ERROR` line, or end of input. Rows
/// must have one token per column and a numeric first token; other tokens
/// that fail to parse become NaN. When the header changes between blocks,
/// only blocks sharing the final header are kept.
pub fn parse_thermo(log_text: &str) -> Result<ThermoSeries, ThermoError> {
    let mut series = ThermoSeries::default();
    let mut found_header = false;
    let mut in_block = false;
    let mut block_start = 0usize;

    let close_block = |series: &mut ThermoSeries, start: usize| {
        if series.rows.len() > start {
            series.segments.push((start, series.rows.len() - 1));
        }
    };

    for line in log_text.lines() {
        let mut tokens = line.split_whitespace();
        let first = tokens.next();
        if first == Some("Step") {
            if in_block {
                close_block(&mut series, block_start);
            }
            let columns: Vec<String> = line.split_whitespace().map(str::to_string).collect();
            if found_header && columns != series.columns {
                series = ThermoSeries::default();
            }
            series.columns = columns;
            found_header = true;
            in_block = true;
            block_start = series.rows.len();
            continue;
        }
        if !in_block {
            continue;
        }
        let trimmed = line.trim_start();
        if trimmed.starts_with("Loop time") || trimmed.starts_with("ERROR") {
            close_block(&mut series, block_start);
            in_block = false;
            continue;
        }
        let cells: Vec<&str> = line.split_whitespace().collect();
        if cells.len() != series.columns.len() || cells[0].parse::<f64>().is_err() {
            continue;
        }
        series.rows.push(cells.iter().map(|c| c.parse::<f64>().unwrap_or(f64::NAN)).collect());
    }
    if in_block {
        close_block(&mut series, block_start);
    }
    if found_header {
        Ok(series)
    } else {
        Err(ThermoError::NoThermoBlock)
    }
}
