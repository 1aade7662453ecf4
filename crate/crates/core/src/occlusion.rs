//! Completion of the merged head, torso and legs boundary where arms
//! occlude it: occluded runs are replaced by matched template segments.

use serde::{Deserialize, Serialize};

use crate::boundary::Correspondence;
use crate::error::{Error, Result};
use crate::geometry::{is_simple, BoundaryPolygon, SimilarityTransform2D, Vec2};
use crate::raster::RasterMap;

/// Cyclic index interval `start, start + 1, ..., start + len - 1 (mod n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub start: usize,
    pub len: usize,
}

impl Run {
    pub fn end(&self, n: usize) -> usize {
        (self.start + self.len - 1) % n
    }

    pub fn indices(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).map(move |k| (self.start + k) % n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionBoundary {
    pub polygon: BoundaryPolygon,
    /// Disjoint, each at least 2 points long.
    pub occluded_runs: Vec<Run>,
}

/// A point counts as inside `o` when any of the up to four pixel centers
/// around it is set.
fn inside(o: &RasterMap, p: Vec2) -> bool {
    let (x0, y0) = (p.x.floor() as i64, p.y.floor() as i64);
    let (x1, y1) = (p.x.ceil() as i64, p.y.ceil() as i64);
    [(x0, y0), (x1, y0), (x0, y1), (x1, y1)]
        .into_iter()
        .any(|(x, y)| o.is_set_i(x, y))
}

/// Maximal cyclic runs of boundary points inside `o`; single points drop.
pub fn find_occluded_runs(boundary: &BoundaryPolygon, o: &RasterMap) -> RegionBoundary {
    let pts = boundary.points();
    let n = pts.len();
    let flags: Vec<bool> = pts.iter().map(|&p| inside(o, p)).collect();
    let mut runs = Vec::new();
    if flags.iter().all(|&f| f) {
        runs.push(Run { start: 0, len: n });
    } else if flags.iter().any(|&f| f) {
        // start scanning just after an outside point so no run wraps the scan
        let first_out = flags.iter().position(|&f| !f).unwrap();
        let mut k = 0;
        while k < n {
            let i = (first_out + k) % n;
            if !flags[i] {
                k += 1;
                continue;
            }
            let mut len = 0;
            while k + len < n && flags[(first_out + k + len) % n] {
                len += 1;
            }
            if len >= 2 {
                runs.push(Run { start: i, len });
            }
            k += len;
        }
        runs.sort_by_key(|r| r.start);
    }
    RegionBoundary {
        polygon: boundary.clone(),
        occluded_runs: runs,
    }
}

fn resample_polyline(points: &[Vec2], count: usize) -> Vec<Vec2> {
    let mut cum = vec![0.0];
    for w in points.windows(2) {
        cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
    }
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(count);
    let mut seg = 0;
    for k in 0..count {
        let s = total * k as f64 / (count - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 {
            ((s - cum[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(points[seg] + (points[seg + 1] - points[seg]) * t);
    }
    out
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ReplaceReport {
    pub replaced: usize,
    pub skipped_degenerate: usize,
    pub reverted_self_intersection: usize,
}

/// Replaces each run by the template sub-polyline between the images of
/// its endpoints under `corr`, mapped by the similarity taking the
/// sub-polyline endpoints onto the run endpoints and resampled to the run's
/// point count. Points outside the runs are untouched. A splice that makes
/// the polygon non-simple is reverted.
pub fn replace_occluded_runs(
    region: &RegionBoundary,
    template: &BoundaryPolygon,
    corr: &Correspondence,
) -> Result<(BoundaryPolygon, ReplaceReport)> {
    let n = region.polygon.len();
    let m = template.len();
    if corr.len() != n || corr.template_len() != m {
        return Err(Error::InvalidInput(format!(
            "correspondence is {}→{}, boundaries are {n}→{m}",
            corr.len(),
            corr.template_len()
        )));
    }
    let phi = corr.phi();
    let q = template.points();
    let mut pts = region.polygon.points().to_vec();
    let mut report = ReplaceReport::default();
    for run in &region.occluded_runs {
        let (s, e) = (run.start, run.end(n));
        let (a0, a1) = (pts[s], pts[e]);
        let (b0, b1) = (phi[s], phi[e]);
        let span = (b1 + m - b0) % m;
        if span == 0 || (a1 - a0).norm() <= 1e-9 {
            log::warn!("occluded run at {s} has degenerate endpoints; kept");
            report.skipped_degenerate += 1;
            continue;
        }
        let sub: Vec<Vec2> = (0..=span).map(|k| q[(b0 + k) % m]).collect();
        let t = SimilarityTransform2D::from_endpoints(a0, a1, q[b0], q[b1])?;
        let mut new: Vec<Vec2> = resample_polyline(&sub, run.len.max(2))
            .into_iter()
            .map(|p| t.apply(p))
            .collect();
        new[0] = a0;
        *new.last_mut().unwrap() = a1;
        let saved: Vec<Vec2> = run.indices(n).map(|i| pts[i]).collect();
        for (i, p) in run.indices(n).zip(&new) {
            pts[i] = *p;
        }
        let distinct = (0..n).all(|i| (pts[(i + 1) % n] - pts[i]).norm() > 1e-9);
        if !distinct || !is_simple(&pts) || crate::geometry::signed_area(&pts) <= 0.0 {
            log::warn!("splice at run {s} self-intersects; original run kept");
            for (i, p) in run.indices(n).zip(saved) {
                pts[i] = p;
            }
            report.reverted_self_intersection += 1;
            continue;
        }
        report.replaced += 1;
    }
    Ok((BoundaryPolygon::new(pts)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::point_segment_distance;

    fn square(n_side: usize, size: f64) -> BoundaryPolygon {
        let mut p = Vec::new();
        let corners = [
            Vec2::new(0.0, 0.0),
            Vec2::new(size, 0.0),
            Vec2::new(size, size),
            Vec2::new(0.0, size),
        ];
        for c in 0..4 {
            let (a, b) = (corners[c], corners[(c + 1) % 4]);
            for k in 0..n_side {
                p.push(a + (b - a) * (k as f64 / n_side as f64));
            }
        }
        BoundaryPolygon::new(p).unwrap()
    }

    #[test]
    fn runs_from_mask() {
        let poly = square(10, 20.0);
        let empty = RasterMap::mask(30, 30);
        assert!(find_occluded_runs(&poly, &empty).occluded_runs.is_empty());
        let o = RasterMap::mask_from_fn(30, 30, |x, y| x >= 19 && (5..=15).contains(&y));
        let r = find_occluded_runs(&poly, &o);
        assert_eq!(r.occluded_runs.len(), 1);
        let run = r.occluded_runs[0];
        for i in run.indices(40) {
            assert!((poly.points()[i].x - 20.0).abs() < 1e-12);
        }
        // runs wrapping the start index stay whole
        let o = RasterMap::mask_from_fn(30, 30, |x, y| x <= 5 && y <= 5);
        let r = find_occluded_runs(&poly, &o);
        assert_eq!(r.occluded_runs.len(), 1);
        assert!(r.occluded_runs[0].indices(40).any(|i| i == 0));
        assert!(r.occluded_runs[0].indices(40).any(|i| i == 39));
    }

    #[test]
    fn identical_segment_is_noop() {
        let poly = square(10, 20.0);
        let corr = Correspondence::new((0..40).collect(), 40, 4, 0.0).unwrap();
        let region = RegionBoundary {
            polygon: poly.clone(),
            occluded_runs: vec![Run { start: 12, len: 8 }],
        };
        let (out, rep) = replace_occluded_runs(&region, &poly, &corr).unwrap();
        assert_eq!(rep.replaced, 1);
        for (a, b) in out.points().iter().zip(poly.points()) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn half_circle_scales_by_endpoints() {
        // input: rectangle whose bottom edge (0,0)..(4,0) is one run
        let mut inp = Vec::new();
        for k in 0..=8 {
            inp.push(Vec2::new(k as f64 * 0.5, 0.0));
        }
        inp.extend([Vec2::new(4.0, 3.0), Vec2::new(0.0, 3.0)]);
        let input = BoundaryPolygon::new(inp).unwrap();
        // template: half circle of diameter 2 below (0,0)..(2,0), then a lid
        let mut tp = Vec::new();
        for k in 0..=16 {
            let a = std::f64::consts::PI * (1.0 + k as f64 / 16.0);
            tp.push(Vec2::new(1.0 + a.cos(), a.sin()));
        }
        tp.push(Vec2::new(2.0, 1.0));
        tp.push(Vec2::new(0.0, 1.0));
        let template = BoundaryPolygon::new(tp.clone()).unwrap();
        assert_eq!(template.points()[0], tp[0]);
        let mut phi: Vec<usize> = (0..=8).map(|k| 2 * k).collect();
        phi.extend([17, 18]);
        let corr = Correspondence::new(phi, 19, 4, 0.0).unwrap();
        let region = RegionBoundary {
            polygon: input,
            occluded_runs: vec![Run { start: 0, len: 9 }],
        };
        let (out, rep) = replace_occluded_runs(&region, &template, &corr).unwrap();
        assert_eq!(rep.replaced, 1);
        let center = Vec2::new(2.0, 0.0);
        for p in &out.points()[..9] {
            assert!(((p - center).norm() - 2.0).abs() < 0.05, "{p:?}");
            assert!(p.y <= 1e-12);
        }
        assert!((out.points()[0] - Vec2::new(0.0, 0.0)).norm() < 1e-9);
        assert!((out.points()[8] - Vec2::new(4.0, 0.0)).norm() < 1e-9);
        assert_eq!(out.points()[9], Vec2::new(4.0, 3.0));
    }

    #[test]
    fn self_intersecting_splice_reverts() {
        let poly = square(10, 20.0);
        // template bottom edge bulges far past the opposite side
        let mut tp: Vec<Vec2> = square(10, 20.0).points().to_vec();
        for (k, p) in tp.iter_mut().enumerate().take(10).skip(1) {
            p.y = 28.0 * ((k as f64) * std::f64::consts::PI / 10.0).sin();
        }
        let template = BoundaryPolygon::new(tp).unwrap();
        let corr = Correspondence::new((0..40).collect(), 40, 4, 0.0).unwrap();
        let region = RegionBoundary {
            polygon: poly.clone(),
            occluded_runs: vec![Run { start: 0, len: 11 }],
        };
        let (out, rep) = replace_occluded_runs(&region, &template, &corr).unwrap();
        assert_eq!(rep.reverted_self_intersection, 1);
        assert_eq!(out, poly);
    }

    #[test]
    fn degenerate_endpoints_are_skipped() {
        let poly = square(10, 20.0);
        let mut phi: Vec<usize> = (0..40).collect();
        phi[12] = 11;
        let corr = Correspondence::new(phi, 40, 4, 0.0).unwrap();
        let region = RegionBoundary {
            polygon: poly.clone(),
            occluded_runs: vec![Run { start: 11, len: 2 }],
        };
        let (out, rep) = replace_occluded_runs(&region, &poly, &corr).unwrap();
        assert_eq!(rep.skipped_degenerate, 1);
        assert_eq!(out, poly);
        let _ = point_segment_distance(Vec2::zeros(), Vec2::zeros(), Vec2::new(1.0, 0.0));
    }
}
