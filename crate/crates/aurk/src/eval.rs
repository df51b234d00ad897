//! Evaluation: frame-based per-AU F1, activity-duration statistics and the
//! duration/improvement correlation report.

use crate::au_table::AUPartitionTable;
use crate::error::{Error, Result};
use crate::labels::ImageLabel;

/// Per-AU confusion counts over a frame stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    /// Precision with the zero-denominator convention P = 0.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    /// Recall with the zero-denominator convention R = 0.
    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    /// F1 = 2PR / (P + R); 0 when both P and R are 0.
    pub fn f1(&self) -> f64 {
        let p = self.precision();
        let r = self.recall();
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Frame-based evaluation report.
#[derive(Debug, Clone)]
pub struct EvalReport {
    /// (AU number, F1), in AU-universe order.
    pub per_au_f1: Vec<(u16, f64)>,
    /// Unweighted mean over all configured AUs.
    pub avg_f1: f64,
    pub counts: Vec<(u16, Confusion)>,
}

impl EvalReport {
    /// CSV with AU rows and one method column, plus the Avg row.
    pub fn to_csv(&self, method: &str) -> String {
        let mut out = format!("au,{method}\n");
        for &(au, f1) in &self.per_au_f1 {
            out.push_str(&format!("{au},{f1}\n"));
        }
        out.push_str(&format!("Avg,{}\n", self.avg_f1));
        out
    }

    /// Machine-readable summary.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{\n  \"per_au_f1\": {");
        for (i, &(au, f1)) in self.per_au_f1.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            out.push_str(&format!("\"{au}\": {f1}"));
        }
        out.push_str(&format!("}},\n  \"avg_f1\": {}\n}}\n", self.avg_f1));
        out
    }
}

/// Accumulate confusion counts per AU column; associative merge makes the
/// fold safe to parallelize.
#[derive(Debug, Clone)]
pub struct F1Accumulator {
    aus: Vec<u16>,
    counts: Vec<Confusion>,
}

impl F1Accumulator {
    pub fn new(table: &AUPartitionTable) -> Self {
        F1Accumulator {
            aus: table.aus.clone(),
            counts: vec![Confusion::default(); table.label_count()],
        }
    }

    pub fn add(&mut self, pred: &ImageLabel, gt: &ImageLabel) -> Result<()> {
        if pred.len() != self.aus.len() || gt.len() != self.aus.len() {
            return Err(Error::Shape(format!(
                "prediction has {} columns, ground truth {}, expected {}",
                pred.len(),
                gt.len(),
                self.aus.len()
            )));
        }
        for (col, c) in self.counts.iter_mut().enumerate() {
            match (pred.get(col), gt.get(col)) {
                (1, 1) => c.tp += 1,
                (1, 0) => c.fp += 1,
                (0, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &F1Accumulator) {
        assert_eq!(self.aus, other.aus);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.merge(b);
        }
    }

    pub fn finish(&self) -> EvalReport {
        let per_au_f1: Vec<(u16, f64)> = self
            .aus
            .iter()
            .zip(&self.counts)
            .map(|(&au, c)| (au, c.f1()))
            .collect();
        let avg_f1 = if per_au_f1.is_empty() {
            0.0
        } else {
            per_au_f1.iter().map(|&(_, f)| f).sum::<f64>() / per_au_f1.len() as f64
        };
        EvalReport {
            per_au_f1,
            avg_f1,
            counts: self
                .aus
                .iter()
                .zip(&self.counts)
                .map(|(&au, &c)| (au, c))
                .collect(),
        }
    }
}

/// Frame-based F1 per AU over aligned prediction / ground-truth streams.
pub fn f1_per_au(
    preds: &[ImageLabel],
    gts: &[ImageLabel],
    table: &AUPartitionTable,
) -> Result<EvalReport> {
    if preds.len() != gts.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} ground-truth frames",
            preds.len(),
            gts.len()
        )));
    }
    let mut acc = F1Accumulator::new(table);
    for (p, g) in preds.iter().zip(gts) {
        acc.add(p, g)?;
    }
    Ok(acc.finish())
}

/// Activity segments of one AU's per-frame binary timeline.
///
/// A segment is a maximal run of consecutive 1s. Returns
/// (average duration in frames, segment count); (0, 0) for all-zero input.
pub fn duration_segments(timeline: &[u8]) -> (f64, usize) {
    let mut segments = 0usize;
    let mut active_frames = 0usize;
    let mut in_run = false;
    for &b in timeline {
        debug_assert!(b <= 1);
        if b == 1 {
            active_frames += 1;
            if !in_run {
                segments += 1;
                in_run = true;
            }
        } else {
            in_run = false;
        }
    }
    if segments == 0 {
        (0.0, 0)
    } else {
        (active_frames as f64 / segments as f64, segments)
    }
}

/// Duration statistics per AU over a label stream.
#[derive(Debug, Clone)]
pub struct DurationStats {
    /// (AU number, average duration, segment count)
    pub rows: Vec<(u16, f64, usize)>,
}

impl DurationStats {
    pub fn compute(gts: &[ImageLabel], table: &AUPartitionTable) -> Result<DurationStats> {
        let l = table.label_count();
        for g in gts {
            if g.len() != l {
                return Err(Error::Shape("label length mismatch".into()));
            }
        }
        let rows = table
            .aus
            .iter()
            .enumerate()
            .map(|(col, &au)| {
                let timeline: Vec<u8> = gts.iter().map(|g| g.get(col)).collect();
                let (avg, count) = duration_segments(&timeline);
                (au, avg, count)
            })
            .collect();
        Ok(DurationStats { rows })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("au,avg_duration,seg_count\n");
        for &(au, avg, count) in &self.rows {
            out.push_str(&format!("{au},{avg},{count}\n"));
        }
        out
    }
}

/// Pearson correlation between two aligned series.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape("correlation needs aligned series".into()));
    }
    let n = a.len() as f64;
    if a.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "correlation needs at least 3 points, got {}",
            a.len()
        )));
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Numeric("correlation of a constant series".into()));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Correlation report between per-AU F1 improvement and activity duration.
#[derive(Debug, Clone)]
pub struct CorrelationReport {
    pub aus: Vec<u16>,
    pub improvement: Vec<f64>,
    /// Durations scaled by the configured factor for plotting.
    pub scaled_duration: Vec<f64>,
    pub pearson_r: f64,
    pub scale: f64,
}

/// Build the report; duration is rescaled (default factor 1/60) so both
/// series share one axis.
pub fn correlation_report(
    aus: &[u16],
    f1_improvement: &[f64],
    avg_duration: &[f64],
    scale: f64,
) -> Result<CorrelationReport> {
    if aus.len() != f1_improvement.len() || aus.len() != avg_duration.len() {
        return Err(Error::Shape("correlation inputs must align per AU".into()));
    }
    if aus.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "correlation needs at least 3 AUs, got {}",
            aus.len()
        )));
    }
    let r = pearson(f1_improvement, avg_duration)?;
    Ok(CorrelationReport {
        aus: aus.to_vec(),
        improvement: f1_improvement.to_vec(),
        scaled_duration: avg_duration.iter().map(|&d| d * scale).collect(),
        pearson_r: r,
        scale,
    })
}

impl CorrelationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("au,f1_improvement,scaled_duration\n");
        for i in 0..self.aus.len() {
            out.push_str(&format!(
                "{},{},{}\n",
                self.aus[i], self.improvement[i], self.scaled_duration[i]
            ));
        }
        out.push_str(&format!("pearson_r,{},\n", self.pearson_r));
        out
    }

    /// Self-contained SVG plot of the two series.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (640.0, 360.0, 40.0);
        let n = self.aus.len();
        let all: Vec<f64> = self
            .improvement
            .iter()
            .chain(&self.scaled_duration)
            .copied()
            .collect();
        let lo = all.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-9);
        let sx = |i: usize| pad + (w - 2.0 * pad) * i as f64 / (n - 1).max(1) as f64;
        let sy = |v: f64| h - pad - (h - 2.0 * pad) * (v - lo) / span;
        let path = |vals: &[f64]| {
            vals.iter()
                .enumerate()
                .map(|(i, &v)| {
                    format!(
                        "{}{:.2},{:.2}",
                        if i == 0 { "M" } else { "L" },
                        sx(i),
                        sy(v)
                    )
                })
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
             viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
        );
        svg.push_str(&format!(
            "<path d=\"{}\" stroke=\"#c0392b\" fill=\"none\" stroke-width=\"2\"/>\n",
            path(&self.improvement)
        ));
        svg.push_str(&format!(
            "<path d=\"{}\" stroke=\"#2c3e50\" fill=\"none\" stroke-width=\"2\"/>\n",
            path(&self.scaled_duration)
        ));
        for (i, au) in self.aus.iter().enumerate() {
            svg.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">{au}</text>\n",
                sx(i),
                h - pad / 2.0
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{pad}\" y=\"{:.2}\" font-size=\"12\">red: F1 improvement, dark: duration x {}; r = {:.4}</text>\n",
            pad / 2.0,
            self.scale,
            self.pearson_r
        ));
        svg.push_str("</svg>\n");
        svg
    }
}
