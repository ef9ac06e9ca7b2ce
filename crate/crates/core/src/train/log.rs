use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;

/// Losses observed at one iteration, before that iteration's update.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iter: u64,
    pub phase: u8,
    pub loss_total: f64,
    pub loss_cls: f64,
    /// Unweighted `‖â_l − a_l‖²` per boundary.
    pub recon: Vec<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRow {
    pub iter: u64,
    pub phase: u8,
    pub top1: f64,
    pub recon_l2: f64,
}

/// Per-iteration training metrics of one or more phases.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub depth: usize,
    pub rows: Vec<MetricsRow>,
    pub validation: Vec<ValidationRow>,
}

impl MetricsLog {
    pub fn new(depth: usize) -> Self {
        MetricsLog {
            depth,
            ..Default::default()
        }
    }

    pub fn extend(&mut self, other: MetricsLog) {
        self.rows.extend(other.rows);
        self.validation.extend(other.validation);
    }

    pub fn header(&self) -> String {
        let mut h = String::from("iter,phase,loss_total,loss_cls");
        for l in 0..self.depth {
            write!(h, ",loss_recon_l{l}").unwrap();
        }
        h.push_str(",lr");
        h
    }

    pub fn row_line(row: &MetricsRow) -> String {
        let mut s = format!("{},{},{},{}", row.iter, row.phase, row.loss_total, row.loss_cls);
        for v in &row.recon {
            write!(s, ",{v}").unwrap();
        }
        write!(s, ",{}", row.lr).unwrap();
        s
    }

    /// CSV text. The optional `comment` becomes a leading `# ` line, the
    /// only place run-dependent text such as timestamps may appear.
    pub fn to_csv(&self, comment: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(c) = comment {
            writeln!(s, "# {c}").unwrap();
        }
        writeln!(s, "{}", self.header()).unwrap();
        for r in &self.rows {
            writeln!(s, "{}", Self::row_line(r)).unwrap();
        }
        s
    }

    pub fn validation_csv(&self) -> String {
        let mut s = String::from("iter,phase,top1,recon_l2\n");
        for v in &self.validation {
            writeln!(s, "{},{},{},{}", v.iter, v.phase, v.top1, v.recon_l2).unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        fs::write(path, self.to_csv(comment))?;
        Ok(())
    }
}
