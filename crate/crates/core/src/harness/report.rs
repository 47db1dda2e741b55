//! Plotter-ready report files. Numbers use fixed six-decimal formatting so
//! files are byte-stable for a fixed seed.

use std::io::Write;

use super::bench::BenchReport;
use super::grid::GridResult;
use crate::simulator::TraceStats;

pub const GRID_COLUMNS: [&str; 7] = [
    "n",
    "k",
    "triggers_per_sample",
    "accepted_per_sample",
    "steps_per_sample",
    "outputs_per_sample",
    "compression_ratio",
];

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

fn stats_fields(s: &TraceStats) -> [String; 5] {
    [
        f6(s.triggers_per_sample),
        f6(s.accepted_per_sample),
        f6(s.steps_per_sample),
        f6(s.outputs_per_sample),
        f6(s.compression_ratio),
    ]
}

/// One row per (n, k) cell.
pub fn write_grid_csv<W: Write>(out: W, grid: &GridResult) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(GRID_COLUMNS)?;
    for c in &grid.cells {
        let mut row = vec![c.n.to_string(), c.k.to_string()];
        row.extend(stats_fields(&c.stats));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Compression ratio with one row per copy length and one column per match
/// length.
pub fn write_compression_pivot<W: Write>(out: W, grid: &GridResult) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["k".to_string()];
    header.extend(grid.n_values.iter().map(|n| format!("n={n}")));
    w.write_record(&header)?;
    for &k in &grid.k_values {
        let mut row = vec![k.to_string()];
        for &n in &grid.n_values {
            let c = grid.cell(n, k).expect("grid covers cross product");
            row.push(f6(c.stats.compression_ratio));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_grid_json<W: Write>(mut out: W, grid: &GridResult) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, grid)?;
    out.write_all(b"\n")
}

/// Single-row stats table for one (n, k).
pub fn write_stats_csv<W: Write>(out: W, n: usize, k: usize, stats: &TraceStats) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(GRID_COLUMNS)?;
    let mut row = vec![n.to_string(), k.to_string()];
    row.extend(stats_fields(stats));
    w.write_record(&row)?;
    w.flush()?;
    Ok(())
}

pub const BENCH_COLUMNS: [&str; 11] = [
    "model",
    "tokens_per_sec_baseline",
    "tokens_per_sec_llma",
    "time_baseline_s",
    "time_llma_s",
    "speedup",
    "steps_baseline",
    "steps_llma",
    "step_compression",
    "index_build_s",
    "repetitions",
];

pub fn write_bench_csv<W: Write>(out: W, reports: &[BenchReport]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BENCH_COLUMNS)?;
    for r in reports {
        w.write_record([
            r.label.clone(),
            f6(r.tokens_per_sec_baseline()),
            f6(r.tokens_per_sec_llma()),
            f6(r.baseline_secs),
            f6(r.llma_secs),
            format!("{:.2}x", r.speedup()),
            r.baseline_steps.to_string(),
            r.llma_steps.to_string(),
            f6(r.step_compression()),
            f6(r.index_build_secs),
            r.repetitions.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::grid::GridCell;

    fn stats(ratio: f64) -> TraceStats {
        TraceStats {
            triggers_per_sample: 1.0,
            accepted_per_sample: 2.0,
            steps_per_sample: 3.0,
            outputs_per_sample: 3.0 * ratio,
            compression_ratio: ratio,
        }
    }

    #[test]
    fn grid_tables() {
        let grid = GridResult {
            n_values: vec![1, 2],
            k_values: vec![4],
            cells: vec![
                GridCell { n: 1, k: 4, stats: stats(2.5), mean_step_latency: None },
                GridCell { n: 2, k: 4, stats: stats(2.0), mean_step_latency: None },
            ],
            best: (1, 4),
        };
        let mut buf = Vec::new();
        write_grid_csv(&mut buf, &grid).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "n,k,triggers_per_sample,accepted_per_sample,steps_per_sample,outputs_per_sample,compression_ratio\n\
             1,4,1.000000,2.000000,3.000000,7.500000,2.500000\n\
             2,4,1.000000,2.000000,3.000000,6.000000,2.000000\n"
        );
        let mut buf = Vec::new();
        write_compression_pivot(&mut buf, &grid).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "k,n=1,n=2\n4,2.500000,2.000000\n");
    }

    #[test]
    fn bench_table_columns() {
        let r = BenchReport {
            label: "scripted".into(),
            samples: 2,
            repetitions: 3,
            tokens: 100,
            baseline_secs: 2.0,
            llma_secs: 0.8,
            index_build_secs: 0.01,
            baseline_steps: 100,
            llma_steps: 40,
        };
        let mut buf = Vec::new();
        write_bench_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), BENCH_COLUMNS.join(","));
        assert_eq!(
            lines.next().unwrap(),
            "scripted,50.000000,125.000000,2.000000,0.800000,2.50x,100,40,2.500000,0.010000,3"
        );
    }
}
