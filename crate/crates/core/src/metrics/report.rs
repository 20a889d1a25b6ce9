use std::fmt;

use crate::labels::CLASS_NAMES;

use super::EVAL_CLASSES;

/// Metrics of one evaluation run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    /// IoU of ids 1..=14 in id order; `None` for classes absent from both maps.
    pub per_class_iou: [Option<f64>; EVAL_CLASSES],
    pub miou: f64,
    pub ssim: f64,
    /// `(resolution, SWD × 10³)`, finest level first.
    pub swd_per_level: Vec<(usize, f64)>,
    pub swd_avg: f64,
    pub frechet: Option<f64>,
    /// Free-form note printed under the table and as a CSV comment.
    pub note: Option<String>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |v| format!("{v:.6}"))
}

impl MetricReport {
    pub fn csv_header(&self) -> String {
        let mut cols: Vec<String> = CLASS_NAMES[1..].iter().map(|n| format!("iou_{}", n.to_lowercase().replace('-', "_"))).collect();
        cols.extend(["miou".into(), "ssim".into(), "frechet".into()]);
        cols.extend(self.swd_per_level.iter().map(|(r, _)| format!("swd_x1e3_{r}")));
        cols.push("swd_x1e3_avg".into());
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols: Vec<String> = self.per_class_iou.iter().map(|&v| cell(v)).collect();
        cols.extend([cell(Some(self.miou)), cell(Some(self.ssim)), cell(self.frechet)]);
        cols.extend(self.swd_per_level.iter().map(|&(_, v)| cell(Some(v))));
        cols.push(cell(Some(self.swd_avg)));
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some(n) = &self.note {
            out.push_str(&format!("# {n}\n"));
        }
        out.push_str(&self.csv_header());
        out.push('\n');
        out.push_str(&self.csv_row());
        out.push('\n');
        out
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14} {:>8}", "class", "IoU")?;
        for (name, v) in CLASS_NAMES[1..].iter().zip(&self.per_class_iou) {
            match v {
                Some(v) => writeln!(f, "{name:<14} {:>8.2}", 100.0 * v)?,
                None => writeln!(f, "{name:<14} {:>8}", "-")?,
            }
        }
        writeln!(f, "{:<14} {:>8.2}", "mIoU", 100.0 * self.miou)?;
        writeln!(f)?;
        let mut head = format!("{:>8} {:>10}", "SSIM", "FID");
        let mut row = format!(
            "{:>8.4} {:>10}",
            self.ssim,
            self.frechet.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
        );
        for (r, v) in &self.swd_per_level {
            head.push_str(&format!(" {r:>8}"));
            row.push_str(&format!(" {v:>8.2}"));
        }
        head.push_str(&format!(" {:>8}", "avg"));
        row.push_str(&format!(" {:>8.2}", self.swd_avg));
        writeln!(f, "{head}")?;
        writeln!(f, "{row}")?;
        if let Some(n) = &self.note {
            writeln!(f, "note: {n}")?;
        }
        Ok(())
    }
}
