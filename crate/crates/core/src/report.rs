//! Plain-text tables for terminals.

use std::fmt::Write;

use crate::archive::{AspectTable, RunRecord, Summary};
use crate::shape::{Aspect, ShapeTrace};

pub fn render_trace(trace: &ShapeTrace) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<8} {:>5} {:>5} {:>5}  aspect",
        "layer", "x", "y", "c"
    )
    .unwrap();
    for (name, s) in trace.stages() {
        writeln!(
            out,
            "{:<8} {:>5} {:>5} {:>5}  {}",
            name,
            s.width_x,
            s.height_y,
            s.channels,
            s.aspect().label()
        )
        .unwrap();
    }
    writeln!(out, "flatten  {}", trace.flatten).unwrap();
    writeln!(out, "params   {}", trace.param_count).unwrap();
    out
}

pub fn render_summary(summary: &Summary) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:>5} {:>10} {:>10} {:>10} {:>10} {:>12} {:>12}",
        "runs", "Acc(max)", "Acc(min)", "Acc(mean)", "Acc(std)", "Time(mean)", "Total Time"
    )
    .unwrap();
    writeln!(
        out,
        "{:>5} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>12.3} {:>12.3}",
        summary.runs,
        summary.acc_max,
        summary.acc_min,
        summary.acc_mean,
        summary.acc_std,
        summary.time_mean,
        summary.total_time
    )
    .unwrap();
    out
}

pub fn render_runs(records: &[RunRecord]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:>4}  {:<44} {:>8}  {:>4}",
        "run", "best_vector", "fitness", "wins"
    )
    .unwrap();
    for r in records {
        let wins = r
            .wins_generation
            .map(|g| g.to_string())
            .unwrap_or_else(|| "-".into());
        writeln!(
            out,
            "{:>4}  {:<44} {:>8.4}  {:>4}",
            r.run,
            r.best_vector.to_string(),
            r.best_fitness,
            wins
        )
        .unwrap();
    }
    out
}

pub fn render_aspect_table(table: &AspectTable) -> String {
    let mut out = String::new();
    write!(out, "{:<6}", "").unwrap();
    for layer in AspectTable::LAYERS {
        write!(out, " {layer:>6}").unwrap();
    }
    out.push('\n');
    for (aspect, row) in Aspect::ALL.iter().zip(&table.counts) {
        write!(out, "{:<6}", aspect.label()).unwrap();
        for c in row {
            write!(out, " {c:>6}").unwrap();
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::{propagate_shapes, ImageShape};
    use crate::space::baseline_vector;

    #[test]
    fn trace_table() {
        let t = propagate_shapes(&baseline_vector(), &ImageShape::new(28, 28, 1).unwrap()).unwrap();
        let text = render_trace(&t);
        assert!(text.contains("pool2        4     4    64  x=y"));
        assert!(text.ends_with("params   155606\n"));
    }

    #[test]
    fn aspect_rows() {
        let table = AspectTable {
            counts: [[0, 1, 0, 0, 0], [0, 0, 0, 0, 0], [1, 0, 1, 1, 1]],
        };
        let text = render_aspect_table(&table);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].contains("Input"));
        assert!(lines[1].starts_with("x>y"));
        assert!(lines[3].starts_with("x=y"));
    }
}
