//! CSV tables and SVG charts for trial batches.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::harness::grid::{CellSummary, Comparison, GridSummary, QuartilePoint, TrialRecord};

#[derive(Serialize)]
struct TrialRow<'a> {
    cell: &'a str,
    rep: usize,
    iteration: usize,
    p_mf: f64,
    p_mg: f64,
    log_bf: f64,
    freq_hz: Option<f64>,
    intensity_db: Option<f64>,
    response: Option<u8>,
    strategy: &'a str,
}

/// One row per iteration of every trial, starting with the prior at
/// iteration 0.
pub fn write_trials_csv<W: Write>(records: &[TrialRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        let cell = r.cell_label();
        let strategy = r.strategy.name();
        let [p0, p1] = r.result.prior;
        w.serialize(TrialRow {
            cell: &cell,
            rep: r.rep,
            iteration: 0,
            p_mf: p0,
            p_mg: p1,
            log_bf: 0.0,
            freq_hz: None,
            intensity_db: None,
            response: None,
            strategy,
        })?;
        for e in &r.result.trace {
            w.serialize(TrialRow {
                cell: &cell,
                rep: r.rep,
                iteration: e.iteration,
                p_mf: e.p_mf,
                p_mg: e.p_mg,
                log_bf: e.log_bf,
                freq_hz: Some(e.observation.stimulus.frequency_hz),
                intensity_db: Some(e.observation.stimulus.intensity_db),
                response: Some(e.observation.heard as u8),
                strategy,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    cell: String,
    mean_iters: Option<f64>,
    std_iters: Option<f64>,
    median_iters: Option<f64>,
    reached: usize,
    reps: usize,
    failures: usize,
    degenerate: bool,
    strategy: &'a str,
}

/// Mean ± std of iterations to a correct decision per cell.
pub fn write_summary_csv<W: Write>(cells: &[CellSummary], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for c in cells {
        w.serialize(SummaryRow {
            cell: c.label(),
            mean_iters: c.mean_iters,
            std_iters: c.std_iters,
            median_iters: c.median_iters,
            reached: c.reached(),
            reps: c.reps,
            failures: c.failures,
            degenerate: c.degenerate,
            strategy: c.strategy.name(),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CurveRow<'a> {
    cell: String,
    strategy: &'a str,
    iteration: usize,
    q25: f64,
    median: f64,
    q75: f64,
}

/// Quartiles of the expected model's posterior per cell and iteration.
pub fn write_curves_csv<W: Write>(cells: &[CellSummary], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for c in cells {
        for q in &c.trajectory {
            w.serialize(CurveRow {
                cell: c.label(),
                strategy: c.strategy.name(),
                iteration: q.iteration,
                q25: q.q25,
                median: q.median,
                q75: q.q75,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A line with an optional shaded band.
pub struct Series<'a> {
    pub name: String,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
    pub band: Option<Vec<(f64, f64, f64)>>,
}

impl<'a> Series<'a> {
    pub fn from_quartiles(name: String, color: &'a str, q: &[QuartilePoint]) -> Self {
        Series {
            name,
            color,
            points: q.iter().map(|p| (p.iteration as f64, p.median)).collect(),
            band: Some(q.iter().map(|p| (p.iteration as f64, p.q25, p.q75)).collect()),
        }
    }
}

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Line chart over iterations with the y axis fixed to [0, 1].
pub fn line_chart_svg(title: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 150.0, 36.0, 48.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let x_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(1.0f64, f64::max);
    let sx = |x: f64| left + x / x_max * pw;
    let sy = |y: f64| top + (1.0 - y.clamp(0.0, 1.0)) * ph;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, escape(title));
    for k in 0..=4 {
        let y = k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" x2="{}" y1="{py:.1}" y2="{py:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{y:.2}</text>"##,
            left + pw,
            left - 6.0,
            sy(y) + 4.0,
            py = sy(y)
        );
    }
    let ticks = 5usize;
    for k in 0..=ticks {
        let x = x_max * k as f64 / ticks as f64;
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">{:.0}</text>"#, sx(x), top + ph + 16.0, x);
    }
    let _ = writeln!(svg, r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">iteration</text>"#, left + pw / 2.0, h - 10.0);
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for s in series {
        if let Some(band) = &s.band {
            let upper = band.iter().map(|(x, _, hi)| format!("{:.1},{:.1}", sx(*x), sy(*hi)));
            let lower = band.iter().rev().map(|(x, lo, _)| format!("{:.1},{:.1}", sx(*x), sy(*lo)));
            let pts: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(svg, r#"<polygon points="{}" fill="{}" fill-opacity="0.2" stroke="none"/>"#, pts.join(" "), s.color);
        }
        let pts: Vec<String> = s.points.iter().map(|(x, y)| format!("{:.1},{:.1}", sx(*x), sy(*y))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#, pts.join(" "), s.color);
    }
    for (i, s) in series.iter().enumerate() {
        let y = top + 10.0 + 18.0 * i as f64;
        let x = left + pw + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{x}" x2="{}" y1="{y}" y2="{y}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            x + 18.0,
            s.color,
            x + 24.0,
            y + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    Ok(std::io::BufWriter::new(fs::File::create(path)?))
}

/// `trials.csv`, `summary.csv`, `curves.csv` and one chart per cell under
/// `plots/`.
pub fn write_grid_outputs(dir: &Path, summary: &GridSummary) -> Result<()> {
    fs::create_dir_all(dir.join("plots"))?;
    write_trials_csv(&summary.records, create(&dir.join("trials.csv"))?)?;
    write_summary_csv(&summary.cells, create(&dir.join("summary.csv"))?)?;
    write_curves_csv(&summary.cells, create(&dir.join("curves.csv"))?)?;
    for c in &summary.cells {
        let name = format!("{}_{}_{}.svg", c.old_class, c.new_class, c.strategy);
        let series = [Series::from_quartiles(format!("p({})", model_tag(c)), PALETTE[0], &c.trajectory)];
        let title = format!("{} ({}, {} reps)", c.label(), c.strategy, c.reps);
        fs::write(dir.join("plots").join(name), line_chart_svg(&title, "posterior of expected model", &series))?;
    }
    Ok(())
}

/// Per-strategy tables plus `comparison.csv` and `comparison.svg`.
pub fn write_comparison_outputs(dir: &Path, cmp: &Comparison) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_trials_csv(&cmp.records, create(&dir.join("trials.csv"))?)?;
    write_summary_csv(&cmp.arms, create(&dir.join("summary.csv"))?)?;
    write_curves_csv(&cmp.arms, create(&dir.join("comparison.csv"))?)?;
    let series: Vec<Series> = cmp
        .arms
        .iter()
        .enumerate()
        .map(|(i, a)| Series::from_quartiles(a.strategy.name().to_uppercase(), PALETTE[i % PALETTE.len()], &a.trajectory))
        .collect();
    let title = format!("{}->{}", cmp.old_class, cmp.new_class);
    fs::write(dir.join("comparison.svg"), line_chart_svg(&title, "posterior of expected model", &series))?;
    Ok(())
}

/// A single trial: tables plus a chart of both model posteriors.
pub fn write_trial_outputs(dir: &Path, record: &TrialRecord, summary: &CellSummary) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_trials_csv(std::slice::from_ref(record), create(&dir.join("trials.csv"))?)?;
    write_summary_csv(std::slice::from_ref(summary), create(&dir.join("summary.csv"))?)?;
    let r = &record.result;
    let curve = |f: &dyn Fn(usize) -> f64| (0..=r.iterations()).map(|k| (k as f64, f(k))).collect::<Vec<_>>();
    let series = [
        Series { name: "p(same)".into(), color: PALETTE[0], points: curve(&|k| r.posterior_at(k, crate::models::ModelId::Same)), band: None },
        Series {
            name: "p(different)".into(),
            color: PALETTE[1],
            points: curve(&|k| r.posterior_at(k, crate::models::ModelId::Different)),
            band: None,
        },
    ];
    fs::write(dir.join("trial.svg"), line_chart_svg(&record.cell_label(), "model posterior", &series))?;
    Ok(())
}

fn model_tag(c: &CellSummary) -> &'static str {
    match c.expected {
        crate::models::ModelId::Same => "same",
        crate::models::ModelId::Different => "different",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::{CandidateGrid, Strategy};
    use crate::harness::grid::{run_cells, BatchConfig};
    use crate::harness::trial::TrialConfig;
    use crate::sim::HearingLossClass;

    fn small_summary() -> GridSummary {
        let trial = TrialConfig {
            max_iterations: 2,
            grid: CandidateGrid::new(6, 125.0, 8000.0, 5, -10.0, 110.0).unwrap(),
            ..TrialConfig::default()
        };
        let batch = BatchConfig { workers: Some(1), ..BatchConfig::new(3, 1, trial) };
        run_cells(&batch, &[(HearingLossClass::Mild, HearingLossClass::Severe)], Strategy::Bads).unwrap()
    }

    #[test]
    fn trials_table_layout() {
        let s = small_summary();
        let mut buf = Vec::new();
        write_trials_csv(&s.records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "cell,rep,iteration,p_mf,p_mg,log_bf,freq_hz,intensity_db,response,strategy");
        assert_eq!(lines[1], "mild->severe,0,0,0.5,0.5,0.0,,,,bads");
        assert_eq!(lines.len(), 2 + s.records[0].result.trace.len());
    }

    #[test]
    fn summary_table_layout() {
        let s = small_summary();
        let mut buf = Vec::new();
        write_summary_csv(&s.cells, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("cell,mean_iters,std_iters,median_iters,reached,reps,failures,degenerate,strategy\n"));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn chart_is_well_formed() {
        let q = [
            QuartilePoint { iteration: 0, q25: 0.5, median: 0.5, q75: 0.5 },
            QuartilePoint { iteration: 1, q25: 0.4, median: 0.7, q75: 0.9 },
        ];
        let svg = line_chart_svg("a<b", "p", &[Series::from_quartiles("BADS".into(), PALETTE[0], &q)]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("<polygon") && svg.contains("<polyline"));
        assert!(svg.contains("a&lt;b"));
    }

    #[test]
    fn outputs_land_on_disk() {
        let s = small_summary();
        let dir = tempfile::tempdir().unwrap();
        write_grid_outputs(dir.path(), &s).unwrap();
        for f in ["trials.csv", "summary.csv", "curves.csv", "plots/mild_severe_bads.svg"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }
}
