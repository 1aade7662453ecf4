//! Mean-value-coordinate inverse warp from the input silhouette into the
//! template image, map pull-back and harmonic hole filling.

use rayon::prelude::*;

use crate::boundary::Correspondence;
use crate::error::{Error, Result};
use crate::geometry::{mvc_weights_into, BoundaryPolygon, Vec2, SNAP_EPS};
use crate::raster::{RasterMap, Semantic};

/// Residual threshold for the Gauss-Seidel hole fill.
pub const FILL_TOL: f64 = 1e-6;
pub const FILL_MAX_ITERS: usize = 10_000;

/// Smooth map `f(x) = sum_i lambda_i(x) q_phi(i)` where `lambda` are the
/// mean-value coordinates of `x` in the input boundary.
#[derive(Debug, Clone)]
pub struct Warp {
    input: Vec<Vec2>,
    targets: Vec<Vec2>,
}

impl Warp {
    pub fn new(
        input_poly: &BoundaryPolygon,
        template_poly: &BoundaryPolygon,
        corr: &Correspondence,
    ) -> Result<Self> {
        if corr.len() != input_poly.len() || corr.template_len() != template_poly.len() {
            return Err(Error::InvalidInput(format!(
                "correspondence {}->{} does not fit polygons {}->{}",
                corr.len(),
                corr.template_len(),
                input_poly.len(),
                template_poly.len()
            )));
        }
        let targets = corr
            .phi()
            .iter()
            .map(|&j| template_poly.points()[j])
            .collect();
        Ok(Self {
            input: input_poly.points().to_vec(),
            targets,
        })
    }

    pub fn map_point(&self, x: Vec2) -> Result<Vec2> {
        let mut w = Vec::with_capacity(self.input.len());
        self.map_with(x, &mut w)
    }

    fn map_with(&self, x: Vec2, scratch: &mut Vec<f64>) -> Result<Vec2> {
        mvc_weights_into(x, &self.input, scratch)?;
        Ok(scratch.iter().zip(&self.targets).map(|(w, q)| q * *w).sum())
    }
}

/// Per-pixel template coordinates for every pixel of the input silhouette.
#[derive(Debug, Clone)]
pub struct WarpField {
    domain: RasterMap,
    targets: Vec<Vec2>,
    valid: Vec<bool>,
    template_support: Option<RasterMap>,
}

impl WarpField {
    pub fn domain(&self) -> &RasterMap {
        &self.domain
    }

    /// Template coordinates of pixel `(x, y)`; `None` outside the domain.
    pub fn target(&self, x: usize, y: usize) -> Option<Vec2> {
        self.domain
            .is_set(x, y)
            .then(|| self.targets[y * self.domain.width() + x])
    }

    /// False where `f(x)` leaves the template silhouette.
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.domain.width() + x]
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn invalid_count(&self) -> usize {
        (0..self.valid.len())
            .filter(|&i| self.domain.data()[i] >= 0.5 && !self.valid[i])
            .count()
    }

    /// Restricts map sampling to pixels inside the template silhouette.
    pub fn with_template_support(mut self, support: RasterMap) -> Self {
        self.template_support = Some(support);
        self
    }
}

/// Evaluates the warp at every domain pixel.
pub fn build_warp(
    input_poly: &BoundaryPolygon,
    template_poly: &BoundaryPolygon,
    corr: &Correspondence,
    domain: &RasterMap,
) -> Result<WarpField> {
    let warp = Warp::new(input_poly, template_poly, corr)?;
    let (w, h) = (domain.width(), domain.height());
    let rows: Vec<Result<Vec<(Vec2, bool)>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut scratch = Vec::with_capacity(input_poly.len());
            let mut row = Vec::with_capacity(w);
            for x in 0..w {
                if domain.is_set(x, y) {
                    let t = warp.map_with(Vec2::new(x as f64, y as f64), &mut scratch)?;
                    row.push((
                        t,
                        template_poly.contains(t) || template_poly.distance_to(t) < SNAP_EPS,
                    ));
                } else {
                    row.push((Vec2::zeros(), false));
                }
            }
            Ok(row)
        })
        .collect();
    let mut targets = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for row in rows {
        for (t, v) in row? {
            targets.push(t);
            valid.push(v);
        }
    }
    Ok(WarpField {
        domain: domain.clone(),
        targets,
        valid,
        template_support: None,
    })
}

/// A map pulled back through a warp, with the pixels that need filling.
#[derive(Debug, Clone)]
pub struct WarpedMap {
    pub map: RasterMap,
    pub valid: Vec<bool>,
}

/// Pulls `source` back onto the warp domain: bilinear for continuous maps,
/// nearest for labels. Normals and skinning weights are renormalized.
pub fn warp_map(field: &WarpField, source: &RasterMap) -> Result<WarpedMap> {
    let sem = source.semantic();
    if !matches!(
        sem,
        Semantic::Depth | Semantic::Normal | Semantic::Skinning | Semantic::Label | Semantic::Color
    ) {
        return Err(Error::InvalidInput(format!("cannot warp a {sem:?} map")));
    }
    if let Some(s) = &field.template_support {
        if !s.same_shape(source) {
            return Err(Error::InvalidInput(
                "template support and source sizes differ".into(),
            ));
        }
    }
    let (w, h) = (field.domain.width(), field.domain.height());
    let ch = source.channels();
    let mut out = RasterMap::new(w, h, ch, sem)?;
    let mut valid = vec![false; w * h];
    let mut buf = vec![0.0f64; ch];
    for y in 0..h {
        for x in 0..w {
            if !field.domain.is_set(x, y) {
                continue;
            }
            let i = y * w + x;
            if !field.valid[i] {
                continue;
            }
            let t = field.targets[i];
            let ok = if sem == Semantic::Label {
                sample_nearest(source, field.template_support.as_ref(), t, &mut buf)
            } else {
                sample_bilinear(source, field.template_support.as_ref(), t, &mut buf)
            };
            if !ok {
                continue;
            }
            renormalize(sem, &mut buf);
            let px = out.pixel_mut(x, y);
            for c in 0..ch {
                px[c] = buf[c] as f32;
            }
            valid[i] = true;
        }
    }
    Ok(WarpedMap { map: out, valid })
}

fn supported(support: Option<&RasterMap>, x: i64, y: i64, source: &RasterMap) -> bool {
    source.in_bounds(x, y) && support.is_none_or(|s| s.is_set(x as usize, y as usize))
}

/// Bilinear sample over supported texels, renormalizing the weights.
fn sample_bilinear(
    source: &RasterMap,
    support: Option<&RasterMap>,
    t: Vec2,
    out: &mut [f64],
) -> bool {
    let (x0, y0) = (t.x.floor(), t.y.floor());
    let (fx, fy) = (t.x - x0, t.y - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    out.iter_mut().for_each(|o| *o = 0.0);
    let mut wsum = 0.0;
    for (dx, dy, w) in [
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ] {
        if w <= 0.0 {
            continue;
        }
        let (sx, sy) = (x0 + dx, y0 + dy);
        if !supported(support, sx, sy, source) {
            continue;
        }
        for (o, v) in out.iter_mut().zip(source.pixel(sx as usize, sy as usize)) {
            *o += w * *v as f64;
        }
        wsum += w;
    }
    if wsum <= 1e-12 {
        return false;
    }
    out.iter_mut().for_each(|o| *o /= wsum);
    true
}

/// Nearest supported texel among the four surrounding `t`.
fn sample_nearest(
    source: &RasterMap,
    support: Option<&RasterMap>,
    t: Vec2,
    out: &mut [f64],
) -> bool {
    let (x0, y0) = (t.x.floor() as i64, t.y.floor() as i64);
    let mut best: Option<(f64, i64, i64)> = None;
    for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
        let (sx, sy) = (x0 + dx, y0 + dy);
        if !supported(support, sx, sy, source) {
            continue;
        }
        let d = (t - Vec2::new(sx as f64, sy as f64)).norm_squared();
        if best.is_none_or(|(bd, _, _)| d < bd) {
            best = Some((d, sx, sy));
        }
    }
    let Some((_, sx, sy)) = best else {
        return false;
    };
    for (o, v) in out.iter_mut().zip(source.pixel(sx as usize, sy as usize)) {
        *o = *v as f64;
    }
    true
}

/// Unit-length normals and nonnegative, sum-to-one skinning weights.
pub(crate) fn renormalize(sem: Semantic, px: &mut [f64]) {
    match sem {
        Semantic::Normal => {
            let n = px.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 1e-12 {
                px.iter_mut().for_each(|v| *v /= n);
            } else {
                px.copy_from_slice(&[0.0, 0.0, 1.0]);
            }
        }
        Semantic::Skinning => {
            px.iter_mut().for_each(|v| *v = v.max(0.0));
            let s: f64 = px.iter().sum();
            if s > 1e-12 {
                px.iter_mut().for_each(|v| *v /= s);
            } else {
                let u = 1.0 / px.len() as f64;
                px.iter_mut().for_each(|v| *v = u);
            }
        }
        _ => {}
    }
}

const N4: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

/// Harmonic (discrete Laplace, 4-neighborhood) fill of the invalid pixels of
/// `map` inside `domain`, with the valid pixels as Dirichlet data.
///
/// Unknowns start from the nearest valid value (breadth-first within the
/// domain), then Gauss-Seidel sweeps run until the largest update drops
/// below [`FILL_TOL`] or [`FILL_MAX_ITERS`] sweeps. Valid pixels are never
/// written. Labels are filled by nearest valid label instead.
pub fn fill_holes(map: &RasterMap, valid: &[bool], domain: &RasterMap) -> Result<RasterMap> {
    let (w, h) = (map.width(), map.height());
    let ch = map.channels();
    let in_domain = |i: usize| domain.data()[i] >= 0.5;
    let unknown: Vec<usize> = (0..w * h).filter(|&i| in_domain(i) && !valid[i]).collect();
    if unknown.is_empty() {
        return Ok(map.clone());
    }
    if !(0..w * h).any(|i| in_domain(i) && valid[i]) {
        return Err(Error::InvalidInput(
            "hole filling needs at least one valid pixel".into(),
        ));
    }
    let mut out = map.clone();
    seed_from_nearest(&mut out, valid, domain)?;
    if map.semantic() == Semantic::Label {
        return Ok(out);
    }
    let nbrs: Vec<Vec<usize>> = unknown
        .iter()
        .map(|&i| {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            N4.iter()
                .filter_map(|&(dx, dy)| {
                    let (nx, ny) = (x + dx, y + dy);
                    (domain.is_set_i(nx, ny)).then(|| ny as usize * w + nx as usize)
                })
                .collect()
        })
        .collect();
    let data = out.data_mut();
    let mut vals: Vec<f64> = data.iter().map(|&v| v as f64).collect();
    for _ in 0..FILL_MAX_ITERS {
        let mut max_delta = 0.0f64;
        for (k, &i) in unknown.iter().enumerate() {
            if nbrs[k].is_empty() {
                continue;
            }
            let inv = 1.0 / nbrs[k].len() as f64;
            for c in 0..ch {
                let s: f64 = nbrs[k].iter().map(|&j| vals[j * ch + c]).sum();
                let v = s * inv;
                max_delta = max_delta.max((v - vals[i * ch + c]).abs());
                vals[i * ch + c] = v;
            }
        }
        if max_delta < FILL_TOL {
            break;
        }
    }
    let sem = map.semantic();
    let mut px = vec![0.0; ch];
    for &i in &unknown {
        px.copy_from_slice(&vals[i * ch..(i + 1) * ch]);
        renormalize(sem, &mut px);
        for c in 0..ch {
            data[i * ch + c] = px[c] as f32;
        }
    }
    Ok(out)
}

/// Copies into every invalid domain pixel the value of the nearest valid
/// pixel, by breadth-first search through the domain; pixels unreachable
/// through the domain take the Euclidean-nearest valid pixel.
fn seed_from_nearest(map: &mut RasterMap, valid: &[bool], domain: &RasterMap) -> Result<()> {
    let (w, h) = (map.width(), map.height());
    let ch = map.channels();
    let mut src = vec![usize::MAX; w * h];
    let mut queue = std::collections::VecDeque::new();
    for i in 0..w * h {
        if domain.data()[i] >= 0.5 && valid[i] {
            src[i] = i;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for &(dx, dy) in &N4 {
            let (nx, ny) = (x + dx, y + dy);
            if domain.is_set_i(nx, ny) {
                let j = ny as usize * w + nx as usize;
                if src[j] == usize::MAX {
                    src[j] = src[i];
                    queue.push_back(j);
                }
            }
        }
    }
    let valid_pixels: Vec<usize> = (0..w * h).filter(|&i| src[i] == i).collect();
    let data = map.data_mut();
    for i in 0..w * h {
        if domain.data()[i] < 0.5 || valid[i] {
            continue;
        }
        let s = if src[i] != usize::MAX {
            src[i]
        } else {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            *valid_pixels
                .iter()
                .min_by(|&&a, &&b| {
                    let da = ((a % w) as f64 - x).powi(2) + ((a / w) as f64 - y).powi(2);
                    let db = ((b % w) as f64 - x).powi(2) + ((b / w) as f64 - y).powi(2);
                    da.total_cmp(&db)
                })
                .ok_or_else(|| Error::InvalidInput("no valid pixels".into()))?
        };
        for c in 0..ch {
            data[i * ch + c] = data[s * ch + c];
        }
    }
    Ok(())
}
