//! CSV tables and the gnuplot script that draws them.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{ensure, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Text(String),
    Int(u64),
    Num(f64),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            // shortest round-trip form; always '.' as decimal separator
            Cell::Num(x) => format!("{x:?}"),
        }
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::Int(i as u64)
    }
}

/// How the plot script should draw a table.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotSpec {
    pub x: String,
    pub y: String,
    pub log_x: bool,
    pub log_y: bool,
    pub title: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub file: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub plot: Option<PlotSpec>,
}

impl Table {
    pub fn new(file: &str, columns: &[&str]) -> Self {
        Table { file: file.to_string(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new(), plot: None }
    }

    pub fn with_columns(file: &str, columns: Vec<String>) -> Self {
        Table { file: file.to_string(), columns, rows: Vec::new(), plot: None }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len(), "{}", self.file);
        self.rows.push(row);
    }

    pub fn plot(mut self, x: &str, y: &str, log_x: bool, log_y: bool, title: &str) -> Self {
        self.plot = Some(PlotSpec { x: x.into(), y: y.into(), log_x, log_y, title: title.into() });
        self
    }

    /// Header row, comma separated, LF line endings.
    pub fn write(&self, dir: &Path) -> Result<()> {
        ensure!(self.rows.iter().all(|r| r.len() == self.columns.len()), "ragged table {}", self.file);
        let mut w = csv::WriterBuilder::new().delimiter(b',').terminator(csv::Terminator::Any(b'\n')).from_path(dir.join(&self.file))?;
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::render))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn column_index(t: &Table, name: &str) -> Option<usize> {
    t.columns.iter().position(|c| c == name).map(|i| i + 1)
}

/// One PNG per plottable table; run with `gnuplot plot.gp` inside the
/// output directory.
pub fn gnuplot_script(tables: &[Table]) -> String {
    let mut s = String::new();
    s.push_str("# generated by grushin; run `gnuplot plot.gp` in this directory\n");
    s.push_str("set datafile separator ','\n");
    s.push_str("set key autotitle columnhead\n");
    s.push_str("set terminal pngcairo size 900,600\n");
    s.push_str("set grid\n");
    for t in tables {
        let Some(p) = &t.plot else { continue };
        let (Some(x), Some(y)) = (column_index(t, &p.x), column_index(t, &p.y)) else { continue };
        let stem = t.file.trim_end_matches(".csv");
        let _ = writeln!(s, "\nset output '{stem}.png'");
        let _ = writeln!(s, "set title '{}'", p.title.replace('\'', "''"));
        let _ = writeln!(s, "set xlabel '{}'", p.x);
        let _ = writeln!(s, "set ylabel '{}'", p.y);
        let _ = writeln!(s, "{}set logscale x", if p.log_x { "" } else { "un" });
        let _ = writeln!(s, "{}set logscale y", if p.log_y { "" } else { "un" });
        let _ = writeln!(s, "plot '{}' using {x}:{y} with points pointtype 7", t.file);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_dialect() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new("t.csv", &["name", "lhs_alpha3_term"]);
        t.push(vec!["a,b".into(), 0.1.into()]);
        t.push(vec!["c".into(), 1e-300.into()]);
        t.write(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
        assert_eq!(text, "name,lhs_alpha3_term\n\"a,b\",0.1\nc,1e-300\n");
    }

    #[test]
    fn script_mentions_plotted_tables() {
        let t = Table::new("k.csv", &["k", "sup_slope"]).plot("k", "sup_slope", true, false, "slopes");
        let s = gnuplot_script(&[t, Table::new("skip.csv", &["a"])]);
        assert!(s.contains("plot 'k.csv' using 1:2"));
        assert!(!s.contains("skip.csv"));
    }
}
