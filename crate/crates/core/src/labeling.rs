//! Body-part labeling: template-shaped initial labels, occlusion detection
//! through part-wise warps, and color-driven refinement inside the
//! occlusion mask.

use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{extract_boundary, match_boundaries, resample_boundary};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::gmm::GmmColorModel;
use crate::morph;
use crate::mrf::{alpha_expansion, grid_edges_8, PairwiseGraph};
use crate::raster::{RasterMap, Semantic};
use crate::template::{Part, TemplateRender, View, PART_COUNT};
use crate::warp::Warp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelParams {
    /// Smoothness weight of the initial labeling at `gamma_reference_size`.
    pub gamma_init: f64,
    /// Image size (longest side, px) at which `gamma_init` applies verbatim;
    /// the weight scales with the squared size ratio.
    pub gamma_reference_size: f64,
    pub gamma_refine: f64,
    /// Occlusion threshold as a fraction of the template bounding diameter.
    pub tau_fraction: f64,
    pub occlusion_dilation: f64,
    pub gmm_components: usize,
    pub em_iterations: usize,
    pub refine_iterations: usize,
    pub part_resample: usize,
    pub part_kappa: usize,
    pub seed: u64,
}

impl Default for LabelParams {
    fn default() -> Self {
        Self {
            gamma_init: 16.0,
            gamma_reference_size: 1024.0,
            gamma_refine: 8.0,
            tau_fraction: 0.05,
            occlusion_dilation: 9.0,
            gmm_components: crate::gmm::DEFAULT_COMPONENTS,
            em_iterations: crate::gmm::DEFAULT_EM_ITERS,
            refine_iterations: 5,
            part_resample: 128,
            part_kappa: 8,
            seed: 0,
        }
    }
}

impl LabelParams {
    /// Distance unaries total `O(size^3)` over a part and Potts cuts
    /// `O(size)`, so the initial weight scales with `size^2`.
    pub fn effective_gamma_init(&self, width: usize, height: usize) -> f64 {
        let r = width.max(height) as f64 / self.gamma_reference_size;
        self.gamma_init * r * r
    }
}

fn pixel_nodes(mask: &RasterMap) -> (Vec<usize>, Vec<usize>) {
    let n = mask.len_pixels();
    let mut index = vec![usize::MAX; n];
    let mut nodes = Vec::new();
    for i in 0..n {
        if mask.data()[i] >= 0.5 {
            index[i] = nodes.len();
            nodes.push(i);
        }
    }
    (index, nodes)
}

/// Minimizes `sum_p U(p, l) + gamma * sum_(p,q in N8) [l_p != l_q]` over
/// the pixels of `s`, where `U(p, l)` is the Euclidean distance from `p` to
/// the nearest template pixel labeled `l`. Pixels outside `s` get label 0.
pub fn initial_labels(
    s: &RasterMap,
    template_labels: &RasterMap,
    template_mask: &RasterMap,
    gamma: f64,
) -> Result<RasterMap> {
    if !s.same_shape(template_mask)
        || template_labels.width() != s.width()
        || template_labels.height() != s.height()
    {
        return Err(Error::InvalidInput(
            "input and template maps differ in size".into(),
        ));
    }
    if s.count_set() == 0 {
        return Err(Error::InvalidInput("empty silhouette".into()));
    }
    let (w, h) = (s.width(), s.height());
    let dist: Vec<Vec<f64>> = (0..PART_COUNT)
        .into_par_iter()
        .map(|l| {
            morph::distance_transform(w, h, |x, y| {
                template_mask.is_set(x, y) && template_labels.label_at(x, y) == l as i32
            })
        })
        .collect();
    let (index, nodes) = pixel_nodes(s);
    let mut g = PairwiseGraph::new(nodes.len(), PART_COUNT)?;
    for (k, &i) in nodes.iter().enumerate() {
        for (l, d) in dist.iter().enumerate() {
            g.set_unary(k, l, d[i]);
        }
    }
    for (p, q, _) in grid_edges_8(w, h) {
        if index[p] != usize::MAX && index[q] != usize::MAX {
            g.add_edge(index[p], index[q], gamma)?;
        }
    }
    let init = g.unary_argmin();
    let r = alpha_expansion(&g, &init)?;
    log::debug!(
        "initial labels: energy {:.3} after {} sweeps",
        r.energy(),
        r.sweeps
    );
    let mut out = RasterMap::new(w, h, 1, Semantic::Label)?;
    for (k, &i) in nodes.iter().enumerate() {
        out.data_mut()[i] = r.labeling[k] as f32;
    }
    Ok(out)
}

fn label_mask(labels: &RasterMap, domain: &RasterMap, parts: &[usize]) -> RasterMap {
    RasterMap::mask_from_fn(labels.width(), labels.height(), |x, y| {
        domain.is_set(x, y) && parts.contains(&(labels.label_at(x, y) as usize))
    })
}

/// Maps input pixels of one part into the template image.
struct PartWarp {
    warp: Warp,
}

impl PartWarp {
    fn build(input: &RasterMap, template: &RasterMap, params: &LabelParams) -> Result<Self> {
        let a = resample_boundary(&extract_boundary(input)?, params.part_resample)?;
        let b = resample_boundary(&extract_boundary(template)?, params.part_resample)?;
        let corr = match_boundaries(&a, &b, params.part_kappa)?;
        Ok(Self {
            warp: Warp::new(&a, &b, &corr)?,
        })
    }
}

/// 3D point of template part `part` seen near image point `t`: bilinear
/// over the template pixels of that part, back-projected.
fn template_point(t: &TemplateRender, part: usize, at: Vec2) -> Option<Point3<f64>> {
    let (x0, y0) = (at.x.floor(), at.y.floor());
    let (fx, fy) = (at.x - x0, at.y - y0);
    let mut acc = 0.0;
    let mut wsum = 0.0;
    for (dx, dy, w) in [
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ] {
        let (x, y) = (x0 as i64 + dx, y0 as i64 + dy);
        if w > 0.0
            && t.silhouette.is_set_i(x, y)
            && t.label.label_at(x as usize, y as usize) == part as i32
        {
            acc += w * t.depth.get(x as usize, y as usize, 0) as f64;
            wsum += w;
        }
    }
    if wsum < 1e-9 {
        // nearest same-part pixel within a small window
        let (cx, cy) = (at.x.round() as i64, at.y.round() as i64);
        let mut best: Option<(f64, i64, i64)> = None;
        for y in cy - 3..=cy + 3 {
            for x in cx - 3..=cx + 3 {
                if t.silhouette.is_set_i(x, y)
                    && t.label.label_at(x as usize, y as usize) == part as i32
                {
                    let d = (x as f64 - at.x).powi(2) + (y as f64 - at.y).powi(2);
                    if best.is_none_or(|b| d < b.0) {
                        best = Some((d, x, y));
                    }
                }
            }
        }
        let (_, x, y) = best?;
        return Some(t.camera.back_project(
            t.view,
            x as f64,
            y as f64,
            t.depth.get(x as usize, y as usize, 0) as f64,
        ));
    }
    Some(t.camera.back_project(t.view, at.x, at.y, acc / wsum))
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct OcclusionStats {
    pub pairs_tested: usize,
    pub pairs_flagged: usize,
    pub parts_skipped: Vec<String>,
    pub tau: f64,
}

/// Flags 4-neighbor pixel pairs `(p, q)` with `p` on an arm and a
/// different label at `q` whose template surface points, reached through
/// part-wise warps, are more than `tau` apart. Returns the flagged pixels
/// dilated by `params.occlusion_dilation`, restricted to `s`.
pub fn detect_occlusion_mask(
    labels: &RasterMap,
    s: &RasterMap,
    template: &TemplateRender,
    tau: f64,
    params: &LabelParams,
) -> Result<(RasterMap, OcclusionStats)> {
    if template.view != View::Front {
        return Err(Error::InvalidInput(
            "occlusion detection needs the front template render".into(),
        ));
    }
    let (w, h) = (s.width(), s.height());
    let mut stats = OcclusionStats {
        tau,
        ..Default::default()
    };
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !s.is_set(x, y) {
                continue;
            }
            let l = labels.label_at(x, y) as usize;
            if !Part::from_id(l).is_some_and(Part::is_arm) {
                continue;
            }
            for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if s.is_set_i(nx, ny) && labels.label_at(nx as usize, ny as usize) as usize != l {
                    pairs.push((y * w + x, ny as usize * w + nx as usize));
                }
            }
        }
    }
    let mut involved: Vec<usize> = pairs
        .iter()
        .flat_map(|&(p, q)| [p, q])
        .map(|i| labels.data()[i] as usize)
        .collect();
    involved.sort_unstable();
    involved.dedup();
    let warps: Vec<Option<PartWarp>> = (0..PART_COUNT)
        .into_par_iter()
        .map(|l| {
            if !involved.contains(&l) {
                return None;
            }
            let (input, _) = morph::largest_component(&label_mask(labels, s, &[l]));
            let (tmpl, _) =
                morph::largest_component(&label_mask(&template.label, &template.silhouette, &[l]));
            if input.count_set() < 4 || tmpl.count_set() < 4 {
                return None;
            }
            PartWarp::build(&input, &tmpl, params).ok()
        })
        .collect();
    for &l in &involved {
        if warps[l].is_none() {
            let name = Part::from_id(l).map_or("unknown", Part::name);
            log::warn!("part {name} has no usable warp; its pairs are skipped");
            stats.parts_skipped.push(name.to_string());
        }
    }
    let point = |i: usize| -> Option<Option<Point3<f64>>> {
        let l = labels.data()[i] as usize;
        let pw = warps[l].as_ref()?;
        let p = Vec2::new((i % w) as f64, (i / w) as f64);
        Some(
            pw.warp
                .map_point(p)
                .ok()
                .and_then(|t| template_point(template, l, t)),
        )
    };
    let mut flagged = RasterMap::mask(w, h);
    for &(p, q) in &pairs {
        let (Some(a), Some(b)) = (point(p), point(q)) else {
            continue;
        };
        stats.pairs_tested += 1;
        let far = match (a, b) {
            (Some(a), Some(b)) => (a - b).norm() > tau,
            _ => true,
        };
        if far {
            stats.pairs_flagged += 1;
            flagged.data_mut()[p] = 1.0;
            flagged.data_mut()[q] = 1.0;
        }
    }
    let mask = morph::intersection(&morph::dilate(&flagged, params.occlusion_dilation), s);
    Ok((
        if stats.pairs_flagged == 0 {
            RasterMap::mask(w, h)
        } else {
            mask
        },
        stats,
    ))
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RefineStats {
    pub iterations: usize,
    pub energies: Vec<f64>,
    pub beta: f64,
    pub changed_pixels: usize,
}

fn color_at(img: &RasterMap, i: usize) -> Vector3<f64> {
    let c = img.channels();
    let d = &img.data()[i * c..i * c + 3];
    Vector3::new(d[0] as f64, d[1] as f64, d[2] as f64)
}

/// Relabels the pixels of `o` by alternating per-label color mixtures
/// (fitted over all of `s`) with alpha-expansion of
/// `-log GMM(l_p, I_p) + gamma * C_pq * exp(-beta |I_p - I_q|^2) [l_p != l_q]`.
/// Labels outside `o` are fixed.
pub fn refine_labels(
    labels: &RasterMap,
    s: &RasterMap,
    image: &RasterMap,
    o: &RasterMap,
    params: &LabelParams,
) -> Result<(RasterMap, RefineStats)> {
    if image.channels() < 3 || image.width() != s.width() || image.height() != s.height() {
        return Err(Error::InvalidInput(
            "color image must be RGB and match the silhouette".into(),
        ));
    }
    let mut stats = RefineStats::default();
    let (w, h) = (s.width(), s.height());
    let region = morph::intersection(o, s);
    if region.count_set() == 0 {
        return Ok((labels.clone(), stats));
    }
    let (index, nodes) = pixel_nodes(&region);
    let edges: Vec<(usize, usize, f64)> = grid_edges_8(w, h)
        .into_iter()
        .filter(|&(p, q, _)| {
            s.data()[p] >= 0.5
                && s.data()[q] >= 0.5
                && (index[p] != usize::MAX || index[q] != usize::MAX)
        })
        .map(|(p, q, diag)| {
            (
                p,
                q,
                if diag {
                    std::f64::consts::FRAC_1_SQRT_2
                } else {
                    1.0
                },
            )
        })
        .collect();
    let inside: Vec<f64> = edges
        .iter()
        .filter(|&&(p, q, _)| index[p] != usize::MAX && index[q] != usize::MAX)
        .map(|&(p, q, _)| (color_at(image, p) - color_at(image, q)).norm_squared())
        .collect();
    let mean = if inside.is_empty() {
        0.0
    } else {
        inside.iter().sum::<f64>() / inside.len() as f64
    };
    let beta = if mean > 0.0 { 1.0 / (2.0 * mean) } else { 0.0 };
    stats.beta = beta;
    let present: Vec<bool> = (0..PART_COUNT)
        .map(|l| (0..w * h).any(|i| s.data()[i] >= 0.5 && labels.data()[i] as usize == l))
        .collect();
    let mut current = labels.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    for _ in 0..params.refine_iterations {
        stats.iterations += 1;
        let models: Vec<Option<GmmColorModel>> = (0..PART_COUNT)
            .map(|l| {
                let samples: Vec<Vector3<f64>> = (0..w * h)
                    .filter(|&i| s.data()[i] >= 0.5 && current.data()[i] as usize == l)
                    .map(|i| color_at(image, i))
                    .collect();
                GmmColorModel::fit(
                    &samples,
                    params.gmm_components,
                    params.em_iterations,
                    &mut rng,
                )
            })
            .collect();
        let mut g = PairwiseGraph::new(nodes.len(), PART_COUNT)?;
        for (k, &i) in nodes.iter().enumerate() {
            let c = color_at(image, i);
            for l in 0..PART_COUNT {
                let u = if !present[l] {
                    f64::INFINITY
                } else {
                    models[l].as_ref().map_or(0.0, |m| -m.log_likelihood(&c))
                };
                g.set_unary(k, l, u);
            }
        }
        // pairwise terms to fixed neighbors fold into unaries
        let mut extra = vec![0.0; nodes.len() * PART_COUNT];
        for &(p, q, c) in &edges {
            let wpq = params.gamma_refine
                * c
                * (-beta * (color_at(image, p) - color_at(image, q)).norm_squared()).exp();
            match (index[p], index[q]) {
                (a, b) if a != usize::MAX && b != usize::MAX => g.add_edge(a, b, wpq)?,
                (a, _) if a != usize::MAX => {
                    let lq = current.data()[q] as usize;
                    (0..PART_COUNT)
                        .filter(|&l| l != lq)
                        .for_each(|l| extra[a * PART_COUNT + l] += wpq);
                }
                (_, b) => {
                    let lp = current.data()[p] as usize;
                    (0..PART_COUNT)
                        .filter(|&l| l != lp)
                        .for_each(|l| extra[b * PART_COUNT + l] += wpq);
                }
            }
        }
        for k in 0..nodes.len() {
            for l in 0..PART_COUNT {
                let u = g.unary(k, l);
                g.set_unary(k, l, u + extra[k * PART_COUNT + l]);
            }
        }
        let init: Vec<usize> = nodes.iter().map(|&i| current.data()[i] as usize).collect();
        let r = alpha_expansion(&g, &init)?;
        stats.energies.push(r.energy());
        let changed = r.labeling.iter().zip(&init).filter(|(a, b)| a != b).count();
        for (k, &i) in nodes.iter().enumerate() {
            current.data_mut()[i] = r.labeling[k] as f32;
        }
        if changed == 0 {
            break;
        }
    }
    stats.changed_pixels = (0..w * h)
        .filter(|&i| current.data()[i] != labels.data()[i])
        .count();
    Ok((current, stats))
}
