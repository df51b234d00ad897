//! RoI-level label algebra.
//!
//! Image-level labels spread onto bounding-box rows under the partition
//! rule's space constraint: a row only carries the AUs of its group plus
//! the AUs of the groups it fetches from; everything else is forced to 0.
//! Predictions come back by thresholding logits at zero and OR-merging the
//! rows into one image-level vector.

use crate::au_table::{AUPartitionTable, RowSlot};
use crate::error::{Error, Result};

/// Image-level binary AU vector, one bit per AU column of the active table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageLabel {
    bits: Vec<u8>,
}

impl ImageLabel {
    pub fn new(bits: Vec<u8>) -> Self {
        debug_assert!(bits.iter().all(|&b| b <= 1));
        ImageLabel { bits }
    }

    pub fn zeros(len: usize) -> Self {
        ImageLabel { bits: vec![0; len] }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, col: usize) -> u8 {
        self.bits[col]
    }

    pub fn set(&mut self, col: usize, value: u8) {
        self.bits[col] = value;
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }
}

/// RoI-level label matrix: one row per bounding box, one column per AU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<u8>,
    row_slots: Vec<RowSlot>,
}

impl LabelMatrix {
    pub fn zeros(table: &AUPartitionTable) -> Self {
        let row_slots = table.rows();
        let rows = row_slots.len();
        let cols = table.label_count();
        LabelMatrix {
            rows,
            cols,
            bits: vec![0; rows * cols],
            row_slots,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.bits[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.bits[row * self.cols + col] = value;
    }

    /// Group id behind a row.
    pub fn row_group(&self, row: usize) -> u8 {
        self.row_slots[row].0
    }

    pub fn row_slots(&self) -> &[RowSlot] {
        &self.row_slots
    }

    pub fn row_bits(&self, row: usize) -> &[u8] {
        &self.bits[row * self.cols..(row + 1) * self.cols]
    }

    /// Dense f64 view for the loss (row-major R x L).
    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }

    /// Swap two rows (mirroring swaps a symmetric group's sides).
    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for col in 0..self.cols {
            let (va, vb) = (self.get(a, col), self.get(b, col));
            self.set(a, col, vb);
            self.set(b, col, va);
        }
    }
}

/// Allowed columns per row under the space constraint.
fn support(table: &AUPartitionTable) -> Vec<Vec<bool>> {
    table
        .rows()
        .iter()
        .map(|&(gid, _)| {
            let mut allow = vec![false; table.label_count()];
            for au in table.effective_aus(gid) {
                if let Some(col) = table.au_col(au) {
                    allow[col] = true;
                }
            }
            allow
        })
        .collect()
}

/// Spread an image-level label onto RoI rows.
///
/// `bits[i][j] = img[j]` when AU j is in row i's effective AU set (its
/// group's own AUs plus fetched AUs), else 0. Both boxes of a symmetric
/// group receive identical rows.
pub fn assign_roi_labels(img: &ImageLabel, table: &AUPartitionTable) -> Result<LabelMatrix> {
    if img.len() != table.label_count() {
        return Err(Error::Shape(format!(
            "image label has {} columns, table has {}",
            img.len(),
            table.label_count()
        )));
    }
    let masks = support(table);
    let mut m = LabelMatrix::zeros(table);
    for (row, allow) in masks.iter().enumerate() {
        for col in 0..m.cols {
            if allow[col] {
                m.set(row, col, img.get(col));
            }
        }
    }
    Ok(m)
}

/// Zero out entries outside each row's effective AU set. Idempotent.
pub fn apply_space_constraint(m: &mut LabelMatrix, table: &AUPartitionTable) -> Result<()> {
    if m.cols != table.label_count() || m.row_slots != table.rows() {
        return Err(Error::Shape("label matrix does not match table".into()));
    }
    let masks = support(table);
    for (row, allow) in masks.iter().enumerate() {
        for col in 0..m.cols {
            if !allow[col] {
                m.set(row, col, 0);
            }
        }
    }
    Ok(())
}

/// Threshold logits at zero (strictly greater than 0 becomes 1), then
/// re-apply the space constraint.
pub fn binarize_logits(logits: &[f64], table: &AUPartitionTable) -> Result<LabelMatrix> {
    let rows = table.row_count();
    let cols = table.label_count();
    if logits.len() != rows * cols {
        return Err(Error::Shape(format!(
            "logits have {} entries, expected {rows}x{cols}",
            logits.len()
        )));
    }
    if let Some(pos) = logits.iter().position(|v| v.is_nan()) {
        return Err(Error::Numeric(format!(
            "NaN logit at row {}, col {}",
            pos / cols,
            pos % cols
        )));
    }
    let mut m = LabelMatrix::zeros(table);
    for row in 0..rows {
        for col in 0..cols {
            m.set(row, col, u8::from(logits[row * cols + col] > 0.0));
        }
    }
    apply_space_constraint(&mut m, table)?;
    Ok(m)
}

/// Bit-wise OR of all rows: the image-level prediction.
pub fn merge_roi_predictions(m: &LabelMatrix) -> ImageLabel {
    let mut out = ImageLabel::zeros(m.cols());
    for row in 0..m.rows() {
        for col in 0..m.cols() {
            if m.get(row, col) == 1 {
                out.set(col, 1);
            }
        }
    }
    out
}

/// Label file CSV: `frame_id,au_<n>,...` header naming the dataset's AU
/// numbers, then one 0/1 row per frame.
pub fn write_label_file(table: &AUPartitionTable, rows: &[(String, ImageLabel)]) -> String {
    let mut s = String::from("frame_id");
    for au in &table.aus {
        s.push_str(&format!(",au_{au}"));
    }
    s.push('\n');
    for (frame_id, label) in rows {
        s.push_str(frame_id);
        for col in 0..label.len() {
            s.push_str(&format!(",{}", label.get(col)));
        }
        s.push('\n');
    }
    s
}

/// Parse a label file. Returns the AU numbers from the header and the
/// per-frame labels in file order.
pub fn read_label_file(text: &str) -> Result<(Vec<u16>, Vec<(String, ImageLabel)>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('#')
    });
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Format("label file is empty".into()))?;
    let mut cols = header.trim().split(',');
    if cols.next() != Some("frame_id") {
        return Err(Error::Format(
            "label header must start with frame_id".into(),
        ));
    }
    let aus: Vec<u16> = cols
        .map(|c| {
            c.trim()
                .strip_prefix("au_")
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad label column {c:?}")))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        let mut fields = line.trim().split(',');
        let frame_id = fields
            .next()
            .ok_or_else(|| Error::Format(format!("line {}: empty", lineno + 1)))?
            .to_string();
        let bits: Vec<u8> = fields
            .map(|f| match f.trim() {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(Error::Format(format!(
                    "line {}: label bit {other:?}",
                    lineno + 1
                ))),
            })
            .collect::<Result<_>>()?;
        if bits.len() != aus.len() {
            return Err(Error::Format(format!(
                "line {}: {} bits for {} AUs",
                lineno + 1,
                bits.len(),
                aus.len()
            )));
        }
        rows.push((frame_id, ImageLabel::new(bits)));
    }
    Ok((aus, rows))
}
