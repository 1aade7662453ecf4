//! Silhouette boundary tracing, arc-length resampling and the cyclic
//! dynamic-programming correspondence between two boundaries.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundaryPolygon, Vec2};
use crate::morph;
use crate::raster::RasterMap;

/// Default maximum forward jump of the correspondence.
pub const DEFAULT_KAPPA: usize = 32;
/// Default number of anchor candidates tried for the cyclic DP.
pub const DEFAULT_ANCHORS: usize = 16;
/// Default vertex count for resampled boundaries.
pub const DEFAULT_RESAMPLE: usize = 512;

/// Selects the largest 4-connected component and fills its holes. Warns when
/// other components are dropped.
pub fn clean_mask(mask: &RasterMap) -> Result<RasterMap> {
    let (largest, count) = morph::largest_component(mask);
    if count == 0 {
        return Err(Error::InvalidInput("mask is empty".into()));
    }
    if count > 1 {
        log::warn!("mask has {count} components; keeping the largest");
    }
    Ok(morph::fill_holes(&largest))
}

/// Traces the outer contour of the largest foreground component.
///
/// Vertices sit at the midpoints between 4-adjacent foreground and background
/// pixel centers (the marching-squares contour at threshold 0.5). Diagonal
/// foreground contacts are treated as separated, so the contour stays simple.
pub fn extract_boundary(mask: &RasterMap) -> Result<BoundaryPolygon> {
    let mask = clean_mask(mask)?;
    trace_clean(&mask)
}

/// Directed crack edge on the pixel-corner lattice. Corner `(cx, cy)` sits at
/// `(cx - 0.5, cy - 0.5)`; the foreground pixel lies to the left.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
struct Crack {
    from: (i64, i64),
    dir: (i64, i64),
}

fn trace_clean(mask: &RasterMap) -> Result<BoundaryPolygon> {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut outgoing: HashMap<(i64, i64), Vec<(i64, i64)>> = HashMap::new();
    let mut start = None;
    for y in 0..h {
        for x in 0..w {
            if !mask.is_set_i(x, y) {
                continue;
            }
            let mut add =
                |from: (i64, i64), dir: (i64, i64)| outgoing.entry(from).or_default().push(dir);
            if !mask.is_set_i(x, y - 1) {
                add((x, y), (1, 0));
                if start.is_none() {
                    start = Some(Crack {
                        from: (x, y),
                        dir: (1, 0),
                    });
                }
            }
            if !mask.is_set_i(x + 1, y) {
                add((x + 1, y), (0, 1));
            }
            if !mask.is_set_i(x, y + 1) {
                add((x + 1, y + 1), (-1, 0));
            }
            if !mask.is_set_i(x - 1, y) {
                add((x, y + 1), (0, -1));
            }
        }
    }
    let start = start.ok_or_else(|| Error::InvalidInput("mask is empty".into()))?;
    let mut points = Vec::new();
    let mut cur = start;
    loop {
        let (fx, fy) = cur.from;
        let (dx, dy) = cur.dir;
        points.push(Vec2::new(
            fx as f64 - 0.5 + 0.5 * dx as f64,
            fy as f64 - 0.5 + 0.5 * dy as f64,
        ));
        let to = (fx + dx, fy + dy);
        let outs = outgoing
            .get(&to)
            .ok_or_else(|| Error::Degenerate("open contour".into()))?;
        // left turn first keeps diagonal foreground contacts separated
        let candidates = [(-dy, dx), (dx, dy), (dy, -dx)];
        let next = candidates
            .iter()
            .copied()
            .find(|d| outs.contains(d))
            .ok_or_else(|| Error::Degenerate("contour dead end".into()))?;
        cur = Crack {
            from: to,
            dir: next,
        };
        if cur == start {
            break;
        }
        if points.len() > (4 * w * h) as usize {
            return Err(Error::Degenerate("contour did not close".into()));
        }
    }
    BoundaryPolygon::new(points)
}

/// Resamples a closed polygon to `target_count` points equally spaced by arc
/// length, starting at the first vertex.
pub fn resample_boundary(poly: &BoundaryPolygon, target_count: usize) -> Result<BoundaryPolygon> {
    if target_count < 3 {
        return Err(Error::InvalidInput(format!(
            "resample target {target_count} < 3"
        )));
    }
    let pts = poly.points();
    let n = pts.len();
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    for i in 0..n {
        let l = (pts[(i + 1) % n] - pts[i]).norm();
        cum.push(cum[i] + l);
    }
    let total = cum[n];
    let step = total / target_count as f64;
    let mut out = Vec::with_capacity(target_count);
    let mut seg = 0;
    for k in 0..target_count {
        let s = k as f64 * step;
        while seg + 1 < n && cum[seg + 1] <= s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
        out.push(pts[seg] + (pts[(seg + 1) % n] - pts[seg]) * t);
    }
    BoundaryPolygon::new(out)
}

/// Cyclic, monotone index map from an input boundary (length `m`) into a
/// template boundary (length `n`). Every forward jump, including the closing
/// one, lies in `[0, kappa]` and the jumps sum to exactly one turn `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    phi: Vec<usize>,
    n: usize,
    kappa: usize,
    /// Sum of Euclidean distances between matched points.
    pub distance_cost: f64,
    /// Distance cost plus one unit per transition.
    pub total_cost: f64,
}

impl Correspondence {
    /// Validates the jump and winding invariants.
    pub fn new(phi: Vec<usize>, n: usize, kappa: usize, distance_cost: f64) -> Result<Self> {
        let m = phi.len();
        if m == 0 || n == 0 {
            return Err(Error::InvalidInput("empty correspondence".into()));
        }
        let mut turn = 0;
        for i in 0..m {
            if phi[i] >= n {
                return Err(Error::InvalidInput(format!(
                    "phi[{i}] = {} out of range {n}",
                    phi[i]
                )));
            }
            let jump = (phi[(i + 1) % m] + n - phi[i]) % n;
            if jump > kappa {
                return Err(Error::InvalidInput(format!(
                    "jump {jump} at {i} exceeds kappa {kappa}"
                )));
            }
            turn += jump;
        }
        // jumps are read mod n, so a single jump of exactly n shows up as 0
        if turn != n && !(turn == 0 && kappa >= n) {
            return Err(Error::InvalidInput(format!(
                "correspondence winds {turn} template steps, expected exactly {n}"
            )));
        }
        Ok(Self {
            phi,
            n,
            kappa,
            distance_cost,
            total_cost: distance_cost + m as f64,
        })
    }

    pub fn phi(&self) -> &[usize] {
        &self.phi
    }
    pub fn template_len(&self) -> usize {
        self.n
    }
    pub fn kappa(&self) -> usize {
        self.kappa
    }
    pub fn len(&self) -> usize {
        self.phi.len()
    }
    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MatchOptions {
    pub kappa: usize,
    /// Number of template vertices nearest to input vertex 0 tried as anchors.
    pub anchors: usize,
    /// Try every template vertex as anchor (exact cyclic optimum).
    pub full_sweep: bool,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            kappa: DEFAULT_KAPPA,
            anchors: DEFAULT_ANCHORS,
            full_sweep: false,
        }
    }
}

/// Matches with default anchors and the given `kappa`.
pub fn match_boundaries(
    input: &BoundaryPolygon,
    template: &BoundaryPolygon,
    kappa: usize,
) -> Result<Correspondence> {
    match_boundaries_with(
        input.points(),
        template.points(),
        &MatchOptions {
            kappa,
            ..Default::default()
        },
    )
}

struct AnchorResult {
    anchor: usize,
    cost: f64,
    phi: Vec<usize>,
}

/// Minimizes `sum_i |p_i - q_phi(i)| + T` over cyclic monotone maps.
///
/// The cycle is cut by fixing `phi[0]` to an anchor; for each anchor a
/// linear-chain DP over unwrapped offsets `c_i = phi[i] - anchor` in `[0, n]`
/// runs with the closing jump `n - c_{m-1}` constrained to `[0, kappa]`.
pub fn match_boundaries_with(
    input: &[Vec2],
    template: &[Vec2],
    opts: &MatchOptions,
) -> Result<Correspondence> {
    let (m, n) = (input.len(), template.len());
    let kappa = opts.kappa;
    if m == 0 || n == 0 {
        return Err(Error::InvalidInput("cannot match empty boundaries".into()));
    }
    if kappa == 0 {
        return Err(Error::InvalidInput("kappa must be at least 1".into()));
    }
    if kappa * m < n {
        return Err(Error::Infeasible(format!(
            "{m} input vertices with max jump {kappa} cannot cover {n} template vertices"
        )));
    }
    let anchors: Vec<usize> = if opts.full_sweep || opts.anchors >= n {
        (0..n).collect()
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        let p0 = input[0];
        order.sort_by(|&a, &b| {
            (template[a] - p0)
                .norm()
                .total_cmp(&(template[b] - p0).norm())
                .then(a.cmp(&b))
        });
        order.truncate(opts.anchors.max(1));
        order.sort_unstable();
        order
    };

    let results: Vec<AnchorResult> = anchors
        .par_iter()
        .filter_map(|&a| dp_for_anchor(input, template, kappa, a))
        .collect();
    let best = results
        .into_iter()
        .min_by(|x, y| x.cost.total_cmp(&y.cost).then(x.anchor.cmp(&y.anchor)))
        .ok_or_else(|| {
            Error::Infeasible("no anchor admits a cyclic mapping within kappa".into())
        })?;
    Correspondence::new(best.phi, n, kappa, best.cost)
}

fn dp_for_anchor(
    input: &[Vec2],
    template: &[Vec2],
    kappa: usize,
    anchor: usize,
) -> Option<AnchorResult> {
    let (m, n) = (input.len(), template.len());
    let width = n + 1;
    let dist = |i: usize, c: usize| (input[i] - template[(anchor + c) % n]).norm();
    let mut prev = vec![f64::INFINITY; width];
    prev[0] = dist(0, 0);
    let mut cur = vec![f64::INFINITY; width];
    let mut back = vec![0u16; m * width];
    for i in 1..m {
        // offsets reachable at step i and still able to close the cycle
        let hi = (i * kappa).min(n);
        let lo = n.saturating_sub((m - i) * kappa);
        cur.iter_mut().for_each(|v| *v = f64::INFINITY);
        for c in lo..=hi {
            let mut best = f64::INFINITY;
            let mut best_jump = 0u16;
            for j in 0..=kappa.min(c) {
                let v = prev[c - j];
                // strict < keeps the smallest jump on ties
                if v < best {
                    best = v;
                    best_jump = j as u16;
                }
            }
            if best.is_finite() {
                cur[c] = best + dist(i, c);
                back[i * width + c] = best_jump;
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let mut best = f64::INFINITY;
    let mut best_c = usize::MAX;
    // closing jump n - c in [0, kappa]; prefer the smallest closing jump
    for c in (n.saturating_sub(kappa)..=n).rev() {
        if prev[c] < best {
            best = prev[c];
            best_c = c;
        }
    }
    if !best.is_finite() {
        return None;
    }
    let mut phi = vec![0usize; m];
    let mut c = best_c;
    for i in (0..m).rev() {
        phi[i] = (anchor + c) % n;
        if i > 0 {
            c -= back[i * width + c] as usize;
        }
    }
    debug_assert_eq!(c, 0);
    Some(AnchorResult {
        anchor,
        cost: best,
        phi,
    })
}
