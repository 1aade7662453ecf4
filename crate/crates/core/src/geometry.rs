//! 2D geometry: boundary polygons, mean-value coordinates and similarity
//! transforms.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RasterMap;

pub type Vec2 = Vector2<f64>;

/// Distance below which a query point snaps to a vertex or edge.
pub const SNAP_EPS: f64 = 1e-6;

#[inline]
pub fn cross(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Closed loop of subpixel points. Orientation is counterclockwise in the raw
/// `(x, y)` pixel frame, i.e. the shoelace area is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPolygon {
    points: Vec<Vec2>,
}

impl BoundaryPolygon {
    /// Validates vertex count, distinct consecutive points and nonzero area,
    /// and reorients to counterclockwise if needed.
    pub fn new(points: Vec<Vec2>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Degenerate(format!(
                "polygon needs at least 3 vertices, got {}",
                points.len()
            )));
        }
        let n = points.len();
        for i in 0..n {
            if (points[(i + 1) % n] - points[i]).norm() <= 1e-9 {
                return Err(Error::Degenerate(format!(
                    "coincident consecutive vertices at {i}"
                )));
            }
        }
        let mut poly = Self { points };
        let area = poly.signed_area();
        if area.abs() < 1e-12 {
            return Err(Error::Degenerate(
                "polygon has zero area (collinear vertices)".into(),
            ));
        }
        if area < 0.0 {
            poly.points.reverse();
        }
        Ok(poly)
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn signed_area(&self) -> f64 {
        signed_area(&self.points)
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.points.len();
        (0..n)
            .map(|i| (self.points[(i + 1) % n] - self.points[i]).norm())
            .sum()
    }

    /// Even-odd point containment.
    pub fn contains(&self, p: Vec2) -> bool {
        point_in_polygon(&self.points, p)
    }

    /// O(m^2) check that no two non-adjacent edges intersect.
    pub fn is_simple(&self) -> bool {
        is_simple(&self.points)
    }

    /// Minimum distance from `p` to the closed polyline.
    pub fn distance_to(&self, p: Vec2) -> f64 {
        let n = self.points.len();
        (0..n)
            .map(|i| point_segment_distance(p, self.points[i], self.points[(i + 1) % n]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn translated(&self, t: Vec2) -> Self {
        Self {
            points: self.points.iter().map(|p| p + t).collect(),
        }
    }

    /// Mirrors about the vertical line `x = axis`. Reverses the vertex order
    /// so the result stays counterclockwise.
    pub fn mirrored_x(&self, axis: f64) -> Self {
        let mut pts: Vec<Vec2> = self
            .points
            .iter()
            .map(|p| Vec2::new(2.0 * axis - p.x, p.y))
            .collect();
        pts.reverse();
        Self { points: pts }
    }

    /// Mask of all pixels whose centers lie inside the polygon.
    pub fn rasterize(&self, width: usize, height: usize) -> RasterMap {
        rasterize_polygon(&self.points, width, height)
    }

    /// Symmetric Hausdorff distance between the two closed polylines, measured
    /// from every vertex of each to the other polyline.
    pub fn hausdorff(&self, other: &BoundaryPolygon) -> f64 {
        let a = self
            .points
            .iter()
            .map(|&p| other.distance_to(p))
            .fold(0.0, f64::max);
        let b = other
            .points
            .iter()
            .map(|&p| self.distance_to(p))
            .fold(0.0, f64::max);
        a.max(b)
    }
}

pub fn signed_area(points: &[Vec2]) -> f64 {
    let n = points.len();
    0.5 * (0..n)
        .map(|i| cross(&points[i], &points[(i + 1) % n]))
        .sum::<f64>()
}

pub fn point_in_polygon(points: &[Vec2], p: Vec2) -> bool {
    let n = points.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (points[i], points[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let xi = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < xi {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    cross(&(b - a), &(c - a))
}

/// Closed-segment intersection test.
pub fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |a: Vec2, b: Vec2, c: Vec2, d: f64| {
        d == 0.0
            && c.x >= a.x.min(b.x)
            && c.x <= a.x.max(b.x)
            && c.y >= a.y.min(b.y)
            && c.y <= a.y.max(b.y)
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

pub fn is_simple(points: &[Vec2]) -> bool {
    let n = points.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (points[i], points[(i + 1) % n]);
        let (minx, maxx) = (a.x.min(b.x), a.x.max(b.x));
        let (miny, maxy) = (a.y.min(b.y), a.y.max(b.y));
        for j in i + 1..n {
            // adjacent edges share a vertex
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (points[j], points[(j + 1) % n]);
            if c.x.max(d.x) < minx
                || c.x.min(d.x) > maxx
                || c.y.max(d.y) < miny
                || c.y.min(d.y) > maxy
            {
                continue;
            }
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Scanline fill of pixel centers inside a polygon (even-odd rule).
pub fn rasterize_polygon(points: &[Vec2], width: usize, height: usize) -> RasterMap {
    let mut mask = RasterMap::mask(width, height);
    let n = points.len();
    let mut xs = Vec::new();
    for y in 0..height {
        let py = y as f64;
        xs.clear();
        for i in 0..n {
            let (a, b) = (points[i], points[(i + 1) % n]);
            if (a.y > py) != (b.y > py) {
                xs.push(a.x + (py - a.y) / (b.y - a.y) * (b.x - a.x));
            }
        }
        xs.sort_by(|a, b| a.total_cmp(b));
        for pair in xs.chunks_exact(2) {
            let x0 = pair[0].ceil().max(0.0) as i64;
            let x1 = pair[1].floor().min(width as f64 - 1.0) as i64;
            for x in x0..=x1 {
                // half-open span (x0, x1]
                if (x as f64) > pair[0] {
                    mask.set(x as usize, y, 0, 1.0);
                }
            }
        }
    }
    mask
}

/// Mean-value coordinates of `x` with respect to the polygon vertices.
///
/// Uses the tangent-half-angle form. Points within [`SNAP_EPS`] of a vertex
/// get that vertex's indicator; points within [`SNAP_EPS`] of an edge are
/// linearly interpolated between its endpoints. Points outside the polygon
/// get the (signed) extension, which still reproduces `x` exactly.
pub fn mvc_weights(x: Vec2, poly: &BoundaryPolygon) -> Result<Vec<f64>> {
    let mut w = Vec::with_capacity(poly.len());
    mvc_weights_into(x, poly.points(), &mut w)?;
    Ok(w)
}

/// Allocation-free variant of [`mvc_weights`] over raw points.
pub fn mvc_weights_into(x: Vec2, pts: &[Vec2], out: &mut Vec<f64>) -> Result<()> {
    let m = pts.len();
    out.clear();
    out.resize(m, 0.0);
    if m < 3 {
        return Err(Error::Degenerate(
            "mean-value coordinates need at least 3 vertices".into(),
        ));
    }
    let mut dists = Vec::with_capacity(m);
    for (i, p) in pts.iter().enumerate() {
        let r = (p - x).norm();
        if r < SNAP_EPS {
            out[i] = 1.0;
            return Ok(());
        }
        dists.push(r);
    }
    let mut tan_half = Vec::with_capacity(m);
    for i in 0..m {
        let j = (i + 1) % m;
        let (di, dj) = (pts[i] - x, pts[j] - x);
        let c = cross(&di, &dj);
        let dot = di.dot(&dj);
        let edge_len = (pts[j] - pts[i]).norm();
        if dot < 0.0 && c.abs() / edge_len < SNAP_EPS {
            // x lies on edge (i, j): MVC's boundary limit is linear interpolation
            let (ri, rj) = (dists[i], dists[j]);
            out[i] = rj / (ri + rj);
            out[j] = ri / (ri + rj);
            return Ok(());
        }
        let denom = dists[i] * dists[j] + dot;
        tan_half.push(c / denom);
    }
    let mut sum = 0.0;
    for i in 0..m {
        let prev = tan_half[(i + m - 1) % m];
        let w = (prev + tan_half[i]) / dists[i];
        out[i] = w;
        sum += w;
    }
    if !sum.is_finite() || sum.abs() < 1e-300 {
        return Err(Error::Degenerate(format!(
            "mean-value weights do not normalize at ({:.3}, {:.3}); polygon is degenerate",
            x.x, x.y
        )));
    }
    out.iter_mut().for_each(|w| *w /= sum);
    Ok(())
}

/// Uniform scale, rotation and translation: `p -> scale * R(angle) * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform2D {
    pub angle: f64,
    pub scale: f64,
    pub translation: Vec2,
}

impl SimilarityTransform2D {
    pub fn identity() -> Self {
        Self {
            angle: 0.0,
            scale: 1.0,
            translation: Vec2::zeros(),
        }
    }

    fn linear(&self) -> Matrix2<f64> {
        let (s, c) = self.angle.sin_cos();
        Matrix2::new(c, -s, s, c) * self.scale
    }

    pub fn apply(&self, p: Vec2) -> Vec2 {
        self.linear() * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let inv = Self {
            angle: -self.angle,
            scale: 1.0 / self.scale,
            translation: Vec2::zeros(),
        };
        Self {
            translation: -inv.apply(self.translation),
            ..inv
        }
    }

    /// `self` after `other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            angle: self.angle + other.angle,
            scale: self.scale * other.scale,
            translation: self.apply(other.translation),
        }
    }

    /// The transform taking `b0 -> a0` and `b1 -> a1`.
    pub fn from_endpoints(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> Result<Self> {
        let va = a1 - a0;
        let vb = b1 - b0;
        if va.norm() <= 1e-9 || vb.norm() <= 1e-9 {
            return Err(Error::Degenerate("similarity endpoints coincide".into()));
        }
        let scale = va.norm() / vb.norm();
        let angle = cross(&vb, &va).atan2(vb.dot(&va));
        let mut t = Self {
            angle,
            scale,
            translation: Vec2::zeros(),
        };
        t.translation = a0 - t.apply(b0);
        Ok(t)
    }
}

pub fn similarity_from_endpoints(
    a0: Vec2,
    a1: Vec2,
    b0: Vec2,
    b1: Vec2,
) -> Result<SimilarityTransform2D> {
    SimilarityTransform2D::from_endpoints(a0, a1, b0, b1)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn square() -> BoundaryPolygon {
        BoundaryPolygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ])
        .unwrap()
    }

    /// Random star-shaped (hence simple) polygon around the origin.
    pub(crate) fn random_star(rng: &mut ChaCha8Rng, n: usize, convex: bool) -> BoundaryPolygon {
        let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        angles.sort_by(|a, b| a.total_cmp(b));
        let pts = angles
            .iter()
            .map(|&a| {
                let r = if convex {
                    10.0
                } else {
                    rng.random_range(3.0..10.0)
                };
                Vec2::new(r * a.cos(), r * a.sin())
            })
            .collect();
        BoundaryPolygon::new(pts).unwrap()
    }

    fn interior_point(rng: &mut ChaCha8Rng, poly: &BoundaryPolygon) -> Vec2 {
        loop {
            let p = Vec2::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
            if poly.contains(p) && poly.distance_to(p) > 1e-3 {
                return p;
            }
        }
    }

    #[test]
    fn unit_square_center_is_uniform() {
        let w = mvc_weights(Vec2::new(0.5, 0.5), &square()).unwrap();
        for wi in w {
            assert!((wi - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn snaps_to_nearby_vertex() {
        let w = mvc_weights(Vec2::new(1.0 - 1e-7, 1.0), &square()).unwrap();
        assert_eq!(w, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn on_edge_is_linear_interpolation() {
        let w = mvc_weights(Vec2::new(0.25, 0.0), &square()).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-12 && (w[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn collinear_polygon_rejected() {
        let pts = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(2.0, 0.0),
        ];
        assert!(BoundaryPolygon::new(pts.clone()).is_err());
        let mut out = Vec::new();
        assert!(mvc_weights_into(Vec2::new(0.5, 1.0), &pts, &mut out).is_err());
    }

    #[test]
    fn random_convex_heptagon_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let poly = random_star(&mut rng, 7, true);
        for _ in 0..100 {
            let x = interior_point(&mut rng, &poly);
            let w = mvc_weights(x, &poly).unwrap();
            let sum: f64 = w.iter().sum();
            let recon: Vec2 = w.iter().zip(poly.points()).map(|(wi, p)| p * *wi).sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!((recon - x).norm() < 1e-6);
            assert!(
                w.iter().all(|&wi| wi >= -1e-12),
                "convex polygon gives nonnegative weights"
            );
        }
    }

    #[test]
    fn weights_are_continuous() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let poly = random_star(&mut rng, 12, false);
            let x = interior_point(&mut rng, &poly);
            let d = Vec2::new(1e-6, -1e-6);
            let (a, b) = (
                mvc_weights(x, &poly).unwrap(),
                mvc_weights(x + d, &poly).unwrap(),
            );
            for (wa, wb) in a.iter().zip(&b) {
                assert!((wa - wb).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn similarity_examples() {
        let o = Vec2::new(0.0, 0.0);
        let ex = Vec2::new(1.0, 0.0);
        let t = similarity_from_endpoints(o, ex, o, ex).unwrap();
        assert!(
            t.angle.abs() < 1e-12 && (t.scale - 1.0).abs() < 1e-12 && t.translation.norm() < 1e-12
        );

        let t = similarity_from_endpoints(o, Vec2::new(2.0, 0.0), o, ex).unwrap();
        assert!((t.scale - 2.0).abs() < 1e-12 && t.angle.abs() < 1e-12);

        let t = similarity_from_endpoints(o, Vec2::new(0.0, 1.0), o, ex).unwrap();
        assert!((t.angle - PI / 2.0).abs() < 1e-12 && (t.scale - 1.0).abs() < 1e-12);
        assert!((t.apply(ex) - Vec2::new(0.0, 1.0)).norm() < 1e-9);

        assert!(similarity_from_endpoints(o, o, o, ex).is_err());
    }

    #[test]
    fn rasterize_square_counts_centers() {
        let poly = BoundaryPolygon::new(vec![
            Vec2::new(0.5, 0.5),
            Vec2::new(3.5, 0.5),
            Vec2::new(3.5, 2.5),
            Vec2::new(0.5, 2.5),
        ])
        .unwrap();
        let m = poly.rasterize(5, 5);
        assert_eq!(m.count_set(), 6);
        assert!(m.is_set(1, 1) && m.is_set(3, 2) && !m.is_set(0, 0));
    }

    #[test]
    fn simplicity_detects_bowtie() {
        let bow = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
        ];
        assert!(!is_simple(&bow));
        assert!(square().is_simple());
    }

    proptest! {
        #[test]
        fn similarity_round_trips(
            ax in -50.0..50.0f64, ay in -50.0..50.0f64, bx in -50.0..50.0f64, by in -50.0..50.0f64,
            px in -100.0..100.0f64, py in -100.0..100.0f64,
        ) {
            let a0 = Vec2::new(ax, ay);
            let b0 = Vec2::new(bx, by);
            let t = similarity_from_endpoints(a0, a0 + Vec2::new(3.0, 1.0), b0, b0 + Vec2::new(-1.0, 2.0)).unwrap();
            let p = Vec2::new(px, py);
            prop_assert!((t.inverse().apply(t.apply(p)) - p).norm() < 1e-9);
            prop_assert!((t.apply(b0) - a0).norm() < 1e-9);
        }
    }
}
