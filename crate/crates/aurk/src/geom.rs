//! Planar geometry: points, simple polygons, and even-odd rasterization.
//!
//! Pixel (px, py) is sampled at its center (px + 0.5, py + 0.5). Scanline
//! filling and point-in-polygon queries share one edge-crossing helper so the
//! two routes agree bit for bit.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist_sq(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Where a horizontal scanline at height `cy` crosses edge (a, b).
///
/// Edges are half-open in y ([min(ay,by), max(ay,by))), which gives each
/// crossing to exactly one of two edges meeting at a shared vertex.
/// Horizontal edges never cross.
fn edge_crossing_x(a: Point, b: Point, cy: f64) -> Option<f64> {
    let crosses = (a.y <= cy && cy < b.y) || (b.y <= cy && cy < a.y);
    if !crosses {
        return None;
    }
    Some(a.x + (cy - a.y) / (b.y - a.y) * (b.x - a.x))
}

/// Twice the signed area of triangle (a, b, c); sign gives orientation.
fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    orient(a, b, p) == 0.0
        && p.x >= a.x.min(b.x)
        && p.x <= a.x.max(b.x)
        && p.y >= a.y.min(b.y)
        && p.y <= a.y.max(b.y)
}

fn segments_intersect(p1: Point, p2: Point, p3: Point, p4: Point) -> bool {
    let o1 = orient(p1, p2, p3);
    let o2 = orient(p1, p2, p4);
    let o3 = orient(p3, p4, p1);
    let o4 = orient(p3, p4, p2);
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    (o1 == 0.0 && on_segment(p1, p2, p3))
        || (o2 == 0.0 && on_segment(p1, p2, p4))
        || (o3 == 0.0 && on_segment(p3, p4, p1))
        || (o4 == 0.0 && on_segment(p3, p4, p2))
}

#[derive(Debug, Clone)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    /// Build from a vertex list, dropping consecutive duplicates.
    pub fn new(vertices: Vec<Point>) -> Self {
        let mut vs: Vec<Point> = Vec::with_capacity(vertices.len());
        for v in vertices {
            if vs.last().map_or(true, |&l| l != v) {
                vs.push(v);
            }
        }
        if vs.len() > 1 && vs.first() == vs.last() {
            vs.pop();
        }
        Polygon { vertices: vs }
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Signed area via the shoelace formula (positive = clockwise in
    /// y-down screen coordinates).
    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        if n < 3 {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            acc += a.x * b.y - b.x * a.y;
        }
        acc / 2.0
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// True when no two non-adjacent edges intersect. Collinear runs of
    /// vertices along one boundary are allowed.
    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        let es: Vec<(Point, Point)> = self.edges().collect();
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                if segments_intersect(es[i].0, es[i].1, es[j].0, es[j].1) {
                    return false;
                }
            }
        }
        true
    }

    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        let mut x_min = f64::INFINITY;
        let mut y_min = f64::INFINITY;
        let mut x_max = f64::NEG_INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for v in &self.vertices {
            x_min = x_min.min(v.x);
            y_min = y_min.min(v.y);
            x_max = x_max.max(v.x);
            y_max = y_max.max(v.y);
        }
        (y_min, x_min, y_max, x_max)
    }

    /// Even-odd containment of an arbitrary sample point, consistent with
    /// `rasterize` at pixel centers.
    pub fn contains(&self, p: Point) -> bool {
        let mut greater = 0usize;
        for (a, b) in self.edges() {
            if let Some(x) = edge_crossing_x(a, b, p.y) {
                if x > p.x {
                    greater += 1;
                }
            }
        }
        greater % 2 == 1
    }

    /// Containment with the boundary counted as inside.
    pub fn contains_inclusive(&self, p: Point, eps: f64) -> bool {
        if self.contains(p) {
            return true;
        }
        self.edge_dist_sq(p) <= eps * eps
    }

    /// Squared distance from `p` to the polygon boundary.
    pub fn edge_dist_sq(&self, p: Point) -> f64 {
        let mut best = f64::INFINITY;
        for (a, b) in self.edges() {
            let abx = b.x - a.x;
            let aby = b.y - a.y;
            let len_sq = abx * abx + aby * aby;
            let t = if len_sq == 0.0 {
                0.0
            } else {
                (((p.x - a.x) * abx + (p.y - a.y) * aby) / len_sq).clamp(0.0, 1.0)
            };
            let q = Point::new(a.x + t * abx, a.y + t * aby);
            best = best.min(p.dist_sq(&q));
        }
        best
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Polygon {
        Polygon {
            vertices: self
                .vertices
                .iter()
                .map(|v| Point::new(v.x + dx, v.y + dy))
                .collect(),
        }
    }

    /// Even-odd scanline fill sampled at pixel centers.
    pub fn rasterize(&self, width: u32, height: u32) -> PixelMask {
        let mut mask = PixelMask::new(width, height);
        self.rasterize_into(width, height, |px, py| mask.set(px, py, true));
        mask
    }

    /// Scanline fill driving a callback per covered pixel.
    pub fn rasterize_into<F: FnMut(u32, u32)>(&self, width: u32, height: u32, mut f: F) {
        if self.vertices.len() < 3 || width == 0 || height == 0 {
            return;
        }
        let (y_min, _, y_max, _) = self.bbox();
        let row_lo = y_min.floor().max(0.0) as u32;
        let row_hi = (y_max.ceil() as i64).min(height as i64).max(0) as u32;
        let mut xs: Vec<f64> = Vec::with_capacity(8);
        for py in row_lo..row_hi {
            let cy = py as f64 + 0.5;
            xs.clear();
            for (a, b) in self.edges() {
                if let Some(x) = edge_crossing_x(a, b, cy) {
                    xs.push(x);
                }
            }
            xs.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            for pair in xs.chunks_exact(2) {
                // center >= x0 and center < x1
                let px_lo = (pair[0] - 0.5).ceil().max(0.0) as i64;
                let px_hi = ((pair[1] - 0.5).ceil() as i64).min(width as i64);
                for px in px_lo..px_hi {
                    f(px as u32, py);
                }
            }
        }
    }
}

/// Dense boolean pixel mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: u32, height: u32) -> Self {
        PixelMask {
            width,
            height,
            bits: vec![false; (width as usize) * (height as usize)],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, px: u32, py: u32) -> bool {
        self.bits[py as usize * self.width as usize + px as usize]
    }

    #[inline]
    pub fn set(&mut self, px: u32, py: u32, value: bool) {
        self.bits[py as usize * self.width as usize + px as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn union_in_place(&mut self, other: &PixelMask) {
        assert_eq!(self.bits.len(), other.bits.len(), "mask size mismatch");
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    pub fn is_superset_of(&self, other: &PixelMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| a || !b)
    }

    pub fn intersects(&self, other: &PixelMask) -> bool {
        self.bits.iter().zip(&other.bits).any(|(&a, &b)| a && b)
    }

    /// Tight axis-aligned hull of the set pixels, as
    /// (y_min, x_min, y_max, x_max) with exclusive max edges.
    pub fn tight_bbox(&self) -> Option<(f64, f64, f64, f64)> {
        let mut y_min = u32::MAX;
        let mut x_min = u32::MAX;
        let mut y_max = 0u32;
        let mut x_max = 0u32;
        let mut any = false;
        for py in 0..self.height {
            for px in 0..self.width {
                if self.get(px, py) {
                    any = true;
                    y_min = y_min.min(py);
                    x_min = x_min.min(px);
                    y_max = y_max.max(py);
                    x_max = x_max.max(px);
                }
            }
        }
        if any {
            Some((
                y_min as f64,
                x_min as f64,
                (y_max + 1) as f64,
                (x_max + 1) as f64,
            ))
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn square(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
        Polygon::new(vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ])
    }

    #[test]
    fn axis_aligned_square_fills_expected_pixels() {
        let mask = square(0.0, 0.0, 4.0, 4.0).rasterize(8, 8);
        assert_eq!(mask.count(), 16);
        assert!(mask.get(0, 0) && mask.get(3, 3));
        assert!(!mask.get(4, 0) && !mask.get(0, 4));
    }

    #[test]
    fn polygon_outside_image_rasterizes_empty() {
        let mask = square(20.0, 20.0, 30.0, 30.0).rasterize(8, 8);
        assert!(mask.is_empty());
    }

    #[test]
    fn triangle_matches_point_in_polygon_oracle() {
        let tri = Polygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(4.0, 0.0),
            Point::new(0.0, 4.0),
        ]);
        let mask = tri.rasterize(8, 8);
        let mut oracle_count = 0;
        for py in 0..8u32 {
            for px in 0..8u32 {
                let inside = tri.contains(Point::new(px as f64 + 0.5, py as f64 + 0.5));
                assert_eq!(mask.get(px, py), inside, "pixel ({px},{py})");
                oracle_count += usize::from(inside);
            }
        }
        assert_eq!(mask.count(), oracle_count);
    }

    #[test]
    fn random_polygons_match_point_in_polygon_oracle() {
        // 100 random simple-ish polygons, <=12 vertices, on grids up to 64x64.
        let mut rng = Rng::new(0x9e1);
        let mut tested = 0;
        while tested < 100 {
            let n = 3 + rng.below(10);
            let w = 16 + rng.below(49) as u32;
            let h = 16 + rng.below(49) as u32;
            // star-shaped construction: sorted angles around a center
            let cx = rng.uniform(8.0, w as f64 - 8.0);
            let cy = rng.uniform(8.0, h as f64 - 8.0);
            let mut angles: Vec<f64> = (0..n)
                .map(|_| rng.uniform(0.0, std::f64::consts::TAU))
                .collect();
            angles.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            angles.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
            if angles.len() < 3 {
                continue;
            }
            let poly = Polygon::new(
                angles
                    .iter()
                    .map(|&t| {
                        let r = rng.uniform(2.0, 14.0);
                        Point::new(cx + r * t.cos(), cy + r * t.sin())
                    })
                    .collect(),
            );
            if !poly.is_simple() {
                continue;
            }
            let mask = poly.rasterize(w, h);
            for py in 0..h {
                for px in 0..w {
                    let inside = poly.contains(Point::new(px as f64 + 0.5, py as f64 + 0.5));
                    assert_eq!(mask.get(px, py), inside, "pixel ({px},{py}) of #{tested}");
                }
            }
            tested += 1;
        }
    }

    #[test]
    fn simplicity_detects_self_intersection() {
        let bowtie = Polygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(4.0, 4.0),
            Point::new(4.0, 0.0),
            Point::new(0.0, 4.0),
        ]);
        assert!(!bowtie.is_simple());
        assert!(square(0.0, 0.0, 4.0, 4.0).is_simple());
    }

    #[test]
    fn collinear_boundary_runs_are_simple() {
        let poly = Polygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(4.0, 0.0),
            Point::new(4.0, 4.0),
            Point::new(0.0, 4.0),
        ]);
        assert!(poly.is_simple());
        assert_eq!(poly.area(), 16.0);
    }

    #[test]
    fn signed_area_orientation() {
        let cw = square(0.0, 0.0, 2.0, 2.0); // y-down clockwise
        assert!(cw.signed_area() > 0.0);
        assert_eq!(cw.area(), 4.0);
    }

    #[test]
    fn tight_bbox_of_rectangle_mask() {
        let mask = square(20.0, 10.0, 40.0, 30.0).rasterize(64, 64);
        assert_eq!(mask.tight_bbox(), Some((10.0, 20.0, 30.0, 40.0)));
    }
}
