//! 68-point facial landmark records.
//!
//! File format (one record per frame, CSV):
//! `frame_id,x0,y0,...,x67,y67,width,height`. Indices in the file are
//! zero-based; prose and the layout table use the conventional one-based
//! numbering `lm1..lm68` (lmK = file index K-1).

use crate::error::{Error, Result};
use crate::geom::Point;

pub const LANDMARK_COUNT: usize = 68;

/// Validated landmark set for one image.
#[derive(Debug, Clone)]
pub struct Landmarks68 {
    points: Vec<Point>,
    image_width: u32,
    image_height: u32,
    clamp_count: usize,
}

impl Landmarks68 {
    /// Validate and clamp raw coordinates. Out-of-bounds coordinates are
    /// clamped to the image (real landmark detectors overshoot near
    /// borders); the number of clamped values is retained as a warning flag.
    pub fn new(raw: Vec<(f64, f64)>, image_width: u32, image_height: u32) -> Result<Self> {
        if raw.len() != LANDMARK_COUNT {
            return Err(Error::Format(format!(
                "expected {LANDMARK_COUNT} landmark points, got {}",
                raw.len()
            )));
        }
        if image_width == 0 || image_height == 0 {
            return Err(Error::Format("image dimensions must be positive".into()));
        }
        let x_max = (image_width - 1) as f64;
        let y_max = (image_height - 1) as f64;
        let mut clamp_count = 0;
        let mut points = Vec::with_capacity(LANDMARK_COUNT);
        for (i, &(x, y)) in raw.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::Format(format!("landmark {} is not finite", i + 1)));
            }
            let cx = x.clamp(0.0, x_max);
            let cy = y.clamp(0.0, y_max);
            if cx != x || cy != y {
                clamp_count += 1;
            }
            points.push(Point::new(cx, cy));
        }
        Ok(Landmarks68 {
            points,
            image_width,
            image_height,
            clamp_count,
        })
    }

    /// One-based accessor matching the lm1..lm68 naming.
    pub fn lm(&self, no: usize) -> Point {
        assert!((1..=LANDMARK_COUNT).contains(&no), "landmark number {no}");
        self.points[no - 1]
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn image_width(&self) -> u32 {
        self.image_width
    }

    pub fn image_height(&self) -> u32 {
        self.image_height
    }

    /// How many coordinates were clamped to the image bounds on ingest.
    pub fn clamp_count(&self) -> usize {
        self.clamp_count
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Landmarks68 {
        Landmarks68 {
            points: self
                .points
                .iter()
                .map(|p| Point::new(p.x + dx, p.y + dy))
                .collect(),
            image_width: self.image_width,
            image_height: self.image_height,
            clamp_count: self.clamp_count,
        }
    }
}

/// Parse one CSV landmark record.
pub fn parse_landmarks(record: &str) -> Result<(String, Landmarks68)> {
    let fields: Vec<&str> = record.trim().split(',').collect();
    let expected = 1 + 2 * LANDMARK_COUNT + 2;
    if fields.len() != expected {
        return Err(Error::Format(format!(
            "landmark record has {} fields, expected {expected}",
            fields.len()
        )));
    }
    let frame_id = fields[0].to_string();
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Format(format!("non-numeric field {s:?} in frame {frame_id}")))
    };
    let mut raw = Vec::with_capacity(LANDMARK_COUNT);
    for i in 0..LANDMARK_COUNT {
        raw.push((num(fields[1 + 2 * i])?, num(fields[2 + 2 * i])?));
    }
    let width = num(fields[expected - 2])? as u32;
    let height = num(fields[expected - 1])? as u32;
    Ok((frame_id, Landmarks68::new(raw, width, height)?))
}

/// Read a landmark file: optional header line, then one record per frame.
pub fn read_landmark_file(text: &str) -> Result<Vec<(String, Landmarks68)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if lineno == 0 && line.starts_with("frame_id") {
            continue;
        }
        let rec = parse_landmarks(line)
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Serialize records in the documented CSV layout.
pub fn write_landmark_file(records: &[(String, Landmarks68)]) -> String {
    let mut s = String::new();
    for (frame_id, lm) in records {
        s.push_str(frame_id);
        for p in lm.points() {
            s.push_str(&format!(",{},{}", p.x, p.y));
        }
        s.push_str(&format!(",{},{}\n", lm.image_width(), lm.image_height()));
    }
    s
}
