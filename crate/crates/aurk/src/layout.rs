//! The 43-region face partition.
//!
//! A versioned layout table (`roi_layout.v1`, embedded as the default) fixes
//! every region as a rectangle of lattice cells; lattice nodes are affine
//! combinations of the 68 landmarks. Because all coefficients sum to one,
//! the whole partition translates exactly with the landmarks.
//!
//! Pixel ownership: regions are rasterized in ascending roi_no order and a
//! pixel on a shared boundary belongs to the first (lowest-numbered) region
//! that claims it. Together the 43 region masks tile the image: every pixel
//! has exactly one owner.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::geom::{PixelMask, Point, Polygon};
use crate::landmarks::{Landmarks68, LANDMARK_COUNT};

pub const BASIC_ROI_COUNT: usize = 43;

/// Named points computed from a landmark set (lattice carriers plus
/// documented auxiliary points such as `mid_13_29`).
#[derive(Debug, Clone)]
pub struct DerivedPoints {
    names: Vec<String>,
    points: Vec<Point>,
}

impl DerivedPoints {
    pub fn get(&self, name: &str) -> Option<Point> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.points[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Point)> + '_ {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.points.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One of the 43 basic regions, as a simple polygon in image coordinates.
#[derive(Debug, Clone)]
pub struct BasicRoi {
    pub roi_no: u8,
    pub polygon: Polygon,
}

#[derive(Debug, Clone, Copy)]
enum Ref {
    Landmark(usize),
    Named(usize),
}

#[derive(Debug, Clone)]
struct PointDef {
    name: String,
    terms: Vec<(f64, Ref)>,
}

#[derive(Debug, Clone, Copy)]
enum RowCarrier {
    Level(Ref),
    Sided { left: Ref, center: Ref, right: Ref },
}

#[derive(Debug, Clone, Copy)]
struct RoiRect {
    roi_no: u8,
    r0: usize,
    c0: usize,
    r1: usize,
    c1: usize,
}

/// Parsed layout table.
#[derive(Debug, Clone)]
pub struct Layout {
    points: Vec<PointDef>,
    rows: Vec<RowCarrier>,
    cols: Vec<Ref>,
    rois: Vec<RoiRect>,
}

impl Layout {
    pub fn parse(text: &str) -> Result<Layout> {
        let mut points: Vec<PointDef> = Vec::new();
        let mut name_index: HashMap<String, usize> = HashMap::new();
        let mut rows: Vec<(usize, RowCarrier)> = Vec::new();
        let mut cols: Vec<(usize, Ref)> = Vec::new();
        let mut rois: Vec<RoiRect> = Vec::new();
        let mut version_seen = false;

        let resolve = |tok: &str, names: &HashMap<String, usize>| -> Result<Ref> {
            if let Some(k) = tok.strip_prefix("lm") {
                if let Ok(no) = k.parse::<usize>() {
                    if (1..=LANDMARK_COUNT).contains(&no) {
                        return Ok(Ref::Landmark(no));
                    }
                    return Err(Error::Format(format!(
                        "landmark number out of range: {tok}"
                    )));
                }
            }
            names
                .get(tok)
                .map(|&i| Ref::Named(i))
                .ok_or_else(|| Error::Format(format!("unknown point {tok:?}")))
        };

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Format(format!("layout line {}: {msg}", lineno + 1));
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks[0] {
                "layout" => {
                    if toks.get(1) != Some(&"v1") {
                        return Err(err(format!("unsupported layout version {:?}", toks.get(1))));
                    }
                    version_seen = true;
                }
                "point" => {
                    if toks.len() < 4 || toks[2] != "=" {
                        return Err(err("expected `point NAME = EXPR`".into()));
                    }
                    let name = toks[1].to_string();
                    if name_index.contains_key(&name) {
                        return Err(err(format!("duplicate point {name:?}")));
                    }
                    let mut terms = Vec::new();
                    let mut sign = 1.0;
                    let mut weight_sum = 0.0;
                    for &tok in &toks[3..] {
                        match tok {
                            "+" => sign = 1.0,
                            "-" => sign = -1.0,
                            term => {
                                let (coef, r) = match term.split_once('*') {
                                    Some((c, r)) => {
                                        let c: f64 = c.parse().map_err(|_| {
                                            err(format!("bad coefficient in {term:?}"))
                                        })?;
                                        (c, r)
                                    }
                                    None => (1.0, term),
                                };
                                let coef = sign * coef;
                                weight_sum += coef;
                                terms.push((coef, resolve(r, &name_index)?));
                                sign = 1.0;
                            }
                        }
                    }
                    if (weight_sum - 1.0).abs() > 1e-9 {
                        return Err(err(format!(
                            "point {name:?} coefficients sum to {weight_sum}, expected 1 \
                             (translation equivariance)"
                        )));
                    }
                    name_index.insert(name.clone(), points.len());
                    points.push(PointDef { name, terms });
                }
                "row" => {
                    let idx: usize = toks
                        .get(1)
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err("bad row index".into()))?;
                    let refs = &toks[3..];
                    let carrier = match refs.len() {
                        1 => RowCarrier::Level(resolve(refs[0], &name_index)?),
                        3 => RowCarrier::Sided {
                            left: resolve(refs[0], &name_index)?,
                            center: resolve(refs[1], &name_index)?,
                            right: resolve(refs[2], &name_index)?,
                        },
                        n => return Err(err(format!("row takes 1 or 3 carriers, got {n}"))),
                    };
                    rows.push((idx, carrier));
                }
                "col" => {
                    let idx: usize = toks
                        .get(1)
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err("bad col index".into()))?;
                    let r = resolve(
                        toks.get(3)
                            .ok_or_else(|| err("missing col carrier".into()))?,
                        &name_index,
                    )?;
                    cols.push((idx, r));
                }
                "roi" => {
                    if toks.len() != 8 || toks[2] != "=" || toks[3] != "rect" {
                        return Err(err("expected `roi N = rect r0 c0 r1 c1`".into()));
                    }
                    let roi_no: u8 = toks[1].parse().map_err(|_| err("bad roi number".into()))?;
                    let nums: Vec<usize> = toks[4..8]
                        .iter()
                        .map(|t| t.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| err("bad rect bounds".into()))?;
                    let (r0, c0, r1, c1) = (nums[0], nums[1], nums[2], nums[3]);
                    if r0 >= r1 || c0 >= c1 {
                        return Err(err("rect bounds must be increasing".into()));
                    }
                    rois.push(RoiRect {
                        roi_no,
                        r0,
                        c0,
                        r1,
                        c1,
                    });
                }
                other => return Err(err(format!("unknown directive {other:?}"))),
            }
        }

        if !version_seen {
            return Err(Error::Format(
                "layout file missing `layout v1` header".into(),
            ));
        }
        rows.sort_by_key(|&(i, _)| i);
        cols.sort_by_key(|&(i, _)| i);
        for (want, (got, _)) in rows.iter().enumerate().map(|(i, r)| (i, *r)) {
            if got != want {
                return Err(Error::Format(format!(
                    "row indices not contiguous at {want}"
                )));
            }
        }
        for (want, (got, _)) in cols.iter().enumerate().map(|(i, c)| (i, *c)) {
            if got != want {
                return Err(Error::Format(format!(
                    "col indices not contiguous at {want}"
                )));
            }
        }
        let layout = Layout {
            points,
            rows: rows.into_iter().map(|(_, r)| r).collect(),
            cols: cols.into_iter().map(|(_, c)| c).collect(),
            rois,
        };
        layout.check_tiling()?;
        Ok(layout)
    }

    /// Every lattice cell must be covered by exactly one region, and the
    /// region numbers must be exactly 1..=43, each once.
    fn check_tiling(&self) -> Result<()> {
        let n_rows = self.rows.len().saturating_sub(1);
        let n_cols = self.cols.len().saturating_sub(1);
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::Format(
                "layout needs at least 2 rows and 2 cols".into(),
            ));
        }
        let mut cover = vec![0u32; n_rows * n_cols];
        let mut seen = [false; BASIC_ROI_COUNT + 1];
        for roi in &self.rois {
            if roi.roi_no == 0 || roi.roi_no as usize > BASIC_ROI_COUNT {
                return Err(Error::Format(format!(
                    "roi number {} out of 1..=43",
                    roi.roi_no
                )));
            }
            if seen[roi.roi_no as usize] {
                return Err(Error::Format(format!("roi {} defined twice", roi.roi_no)));
            }
            seen[roi.roi_no as usize] = true;
            if roi.r1 > n_rows || roi.c1 > n_cols {
                return Err(Error::Format(format!(
                    "roi {} exceeds the lattice",
                    roi.roi_no
                )));
            }
            for r in roi.r0..roi.r1 {
                for c in roi.c0..roi.c1 {
                    cover[r * n_cols + c] += 1;
                }
            }
        }
        if let Some(missing) = (1..=BASIC_ROI_COUNT).find(|&n| !seen[n]) {
            return Err(Error::Format(format!("roi {missing} missing from layout")));
        }
        if let Some(idx) = cover.iter().position(|&c| c != 1) {
            return Err(Error::Format(format!(
                "lattice cell (row {}, col {}) covered {} times",
                idx / n_cols,
                idx % n_cols,
                cover[idx]
            )));
        }
        Ok(())
    }

    fn eval_ref(&self, r: Ref, lm: &Landmarks68, env: &[Point]) -> Point {
        match r {
            Ref::Landmark(no) => lm.lm(no),
            Ref::Named(i) => env[i],
        }
    }

    /// Evaluate every named point for one landmark set.
    pub fn derive(&self, lm: &Landmarks68) -> DerivedPoints {
        let mut env: Vec<Point> = Vec::with_capacity(self.points.len());
        for def in &self.points {
            let mut x = 0.0;
            let mut y = 0.0;
            for &(w, r) in &def.terms {
                let p = self.eval_ref(r, lm, &env);
                x += w * p.x;
                y += w * p.y;
            }
            env.push(Point::new(x, y));
        }
        DerivedPoints {
            names: self.points.iter().map(|d| d.name.clone()).collect(),
            points: env,
        }
    }

    fn node(&self, r: usize, c: usize, lm: &Landmarks68, env: &[Point]) -> Point {
        let x = self.eval_ref(self.cols[c], lm, env).x;
        let carrier = match self.rows[r] {
            RowCarrier::Level(p) => p,
            RowCarrier::Sided {
                left,
                center,
                right,
            } => {
                let mid = (self.cols.len() - 1) / 2;
                if c < mid {
                    left
                } else if c == mid {
                    center
                } else {
                    right
                }
            }
        };
        Point::new(x, self.eval_ref(carrier, lm, env).y)
    }

    /// Build the 43 region polygons for one face.
    ///
    /// Fails with `DegenerateRegion` when the landmark configuration folds
    /// the lattice (zero-area or self-intersecting region).
    pub fn partition(&self, lm: &Landmarks68, dp: &DerivedPoints) -> Result<Vec<BasicRoi>> {
        let env = &dp.points;
        let mut out = Vec::with_capacity(self.rois.len());
        let mut rois = self.rois.clone();
        rois.sort_by_key(|r| r.roi_no);
        for rect in &rois {
            let mut vs: Vec<Point> = Vec::new();
            for c in rect.c0..=rect.c1 {
                vs.push(self.node(rect.r0, c, lm, env));
            }
            for r in rect.r0 + 1..=rect.r1 {
                vs.push(self.node(r, rect.c1, lm, env));
            }
            for c in (rect.c0..rect.c1).rev() {
                vs.push(self.node(rect.r1, c, lm, env));
            }
            for r in (rect.r0 + 1..rect.r1).rev() {
                vs.push(self.node(r, rect.c0, lm, env));
            }
            let polygon = Polygon::new(vs);
            if polygon.len() < 3 || polygon.signed_area() <= 1e-9 {
                return Err(Error::DegenerateRegion {
                    roi_no: rect.roi_no,
                    detail: format!("area {:.3e}", polygon.signed_area()),
                });
            }
            if !polygon.is_simple() {
                return Err(Error::DegenerateRegion {
                    roi_no: rect.roi_no,
                    detail: "polygon self-intersects".into(),
                });
            }
            out.push(BasicRoi {
                roi_no: rect.roi_no,
                polygon,
            });
        }
        Ok(out)
    }
}

/// The embedded default layout table.
pub fn default_layout() -> &'static Layout {
    static LAYOUT: OnceLock<Layout> = OnceLock::new();
    LAYOUT.get_or_init(|| {
        Layout::parse(include_str!("../data/roi_layout.v1")).expect("embedded layout is valid")
    })
}

pub fn default_layout_text() -> &'static str {
    include_str!("../data/roi_layout.v1")
}

/// Evaluate the default layout's derived points.
pub fn derive_points(lm: &Landmarks68) -> DerivedPoints {
    default_layout().derive(lm)
}

/// Partition one face into the 43 basic regions using the default layout.
pub fn partition_basic_rois(lm: &Landmarks68, dp: &DerivedPoints) -> Result<Vec<BasicRoi>> {
    default_layout().partition(lm, dp)
}

/// Per-pixel region ownership. 43 region masks that tile the image exactly:
/// every pixel has one owner.
#[derive(Debug, Clone)]
pub struct OwnerMap {
    width: u32,
    height: u32,
    owner: Vec<u8>,
}

impl OwnerMap {
    /// Assign every pixel to a region. Scanline claims run in ascending
    /// roi_no order, so a pixel center on a shared boundary goes to the
    /// lower region number. The rare pixel claimed by no scanline (exactly
    /// on an excluded boundary, or outside the partition hull) falls back
    /// to boundary-inclusive containment, then to the nearest region edge.
    pub fn build(rois: &[BasicRoi], width: u32, height: u32) -> OwnerMap {
        let mut owner = vec![0u8; width as usize * height as usize];
        for roi in rois {
            let no = roi.roi_no;
            roi.polygon.rasterize_into(width, height, |px, py| {
                let slot = &mut owner[py as usize * width as usize + px as usize];
                if *slot == 0 {
                    *slot = no;
                }
            });
        }
        for py in 0..height {
            for px in 0..width {
                let idx = py as usize * width as usize + px as usize;
                if owner[idx] != 0 {
                    continue;
                }
                let center = Point::new(px as f64 + 0.5, py as f64 + 0.5);
                for roi in rois {
                    if roi.polygon.contains_inclusive(center, 1e-9) {
                        owner[idx] = roi.roi_no;
                        break;
                    }
                }
                if owner[idx] == 0 {
                    let mut best = f64::INFINITY;
                    for roi in rois {
                        let d = roi.polygon.edge_dist_sq(center);
                        if d < best {
                            best = d;
                            owner[idx] = roi.roi_no;
                        }
                    }
                }
            }
        }
        OwnerMap {
            width,
            height,
            owner,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn owner_of(&self, px: u32, py: u32) -> u8 {
        self.owner[py as usize * self.width as usize + px as usize]
    }

    /// Pixel mask of one region.
    pub fn mask_of(&self, roi_no: u8) -> PixelMask {
        let mut mask = PixelMask::new(self.width, self.height);
        for py in 0..self.height {
            for px in 0..self.width {
                if self.owner_of(px, py) == roi_no {
                    mask.set(px, py, true);
                }
            }
        }
        mask
    }

    /// Pixel count per region, indexed by roi_no (slot 0 unused).
    pub fn counts(&self) -> [usize; BASIC_ROI_COUNT + 1] {
        let mut counts = [0usize; BASIC_ROI_COUNT + 1];
        for &o in &self.owner {
            counts[o as usize] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::template_landmarks;

    fn face(width: u32, height: u32) -> Landmarks68 {
        template_landmarks(width, height, 0.62, 0.5, 0.52)
    }

    #[test]
    fn default_layout_parses_with_43_regions() {
        let layout = default_layout();
        assert_eq!(layout.rois.len(), BASIC_ROI_COUNT);
    }

    #[test]
    fn derived_midpoint_is_coordinate_wise_mean() {
        let mut pts: Vec<(f64, f64)> = face(512, 512).points().iter().map(|p| (p.x, p.y)).collect();
        pts[12] = (100.0, 200.0); // lm13
        pts[28] = (120.0, 240.0); // lm29
        let lm = Landmarks68::new(pts, 512, 512).unwrap();
        let dp = derive_points(&lm);
        assert_eq!(dp.get("mid_13_29"), Some(Point::new(110.0, 220.0)));
    }

    #[test]
    fn coincident_landmarks_give_coincident_midpoint() {
        let mut pts: Vec<(f64, f64)> = face(512, 512).points().iter().map(|p| (p.x, p.y)).collect();
        pts[12] = (50.0, 50.0);
        pts[28] = (50.0, 50.0);
        let lm = Landmarks68::new(pts, 512, 512).unwrap();
        let dp = derive_points(&lm);
        assert_eq!(dp.get("mid_13_29"), Some(Point::new(50.0, 50.0)));
    }

    #[test]
    fn degenerate_face_maps_every_derived_point_to_origin() {
        let lm = Landmarks68::new(vec![(0.0, 0.0); 68], 512, 512).unwrap();
        let dp = derive_points(&lm);
        for (name, p) in dp.iter() {
            assert_eq!(p, Point::new(0.0, 0.0), "point {name}");
        }
    }

    #[test]
    fn partition_produces_43_simple_regions() {
        let lm = face(512, 512);
        let dp = derive_points(&lm);
        let rois = partition_basic_rois(&lm, &dp).unwrap();
        assert_eq!(rois.len(), BASIC_ROI_COUNT);
        for (i, roi) in rois.iter().enumerate() {
            assert_eq!(roi.roi_no as usize, i + 1);
            assert!(roi.polygon.is_simple());
            assert!(roi.polygon.area() > 0.0);
        }
    }

    #[test]
    fn collinear_landmarks_are_degenerate() {
        let pts: Vec<(f64, f64)> = (0..68).map(|i| (i as f64, 100.0)).collect();
        let lm = Landmarks68::new(pts, 512, 512).unwrap();
        let dp = derive_points(&lm);
        let err = partition_basic_rois(&lm, &dp).unwrap_err();
        assert!(matches!(err, Error::DegenerateRegion { .. }), "{err}");
    }

    #[test]
    fn translation_moves_every_vertex_exactly() {
        // Dyadic coordinates and offsets keep the affine arithmetic exact,
        // so vertex equality here is bitwise.
        let lm = face(512, 512);
        let pts: Vec<(f64, f64)> = lm
            .points()
            .iter()
            .map(|p| ((p.x * 8.0).round() / 8.0, (p.y * 8.0).round() / 8.0))
            .collect();
        let lm = Landmarks68::new(pts, 2048, 2048).unwrap();
        let (dx, dy) = (64.25, 33.5);
        let moved = lm.translate(dx, dy);
        let a = partition_basic_rois(&lm, &derive_points(&lm)).unwrap();
        let b = partition_basic_rois(&moved, &derive_points(&moved)).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.polygon.len(), rb.polygon.len());
            for (va, vb) in ra.polygon.vertices().iter().zip(rb.polygon.vertices()) {
                assert_eq!(va.x + dx, vb.x, "roi {}", ra.roi_no);
                assert_eq!(va.y + dy, vb.y, "roi {}", ra.roi_no);
            }
        }
    }

    #[test]
    fn owner_map_tiles_the_image() {
        let lm = face(128, 128);
        let dp = derive_points(&lm);
        let rois = partition_basic_rois(&lm, &dp).unwrap();
        let map = OwnerMap::build(&rois, 128, 128);
        let counts = map.counts();
        assert_eq!(counts[0], 0, "unassigned pixels");
        let total: usize = counts[1..].iter().sum();
        assert_eq!(total, 128 * 128);
        for (no, &c) in counts.iter().enumerate().skip(1) {
            assert!(c > 0, "roi {no} owns no pixels");
        }
    }

    #[test]
    fn determinism_same_bytes_same_polygons() {
        let lm = face(256, 256);
        let dp1 = derive_points(&lm);
        let dp2 = derive_points(&lm);
        let a = partition_basic_rois(&lm, &dp1).unwrap();
        let b = partition_basic_rois(&lm, &dp2).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.polygon.vertices(), rb.polygon.vertices());
        }
    }
}
