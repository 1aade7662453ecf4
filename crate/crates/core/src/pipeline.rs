//! End-to-end reconstruction: labels, occlusion completion, per-region
//! warping and integration, stitching, smoothing, rigging and texturing.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::boundary::{
    clean_mask, extract_boundary, match_boundaries, resample_boundary, DEFAULT_KAPPA,
    DEFAULT_RESAMPLE,
};
use crate::error::{Error, Result, StageExt};
use crate::geometry::BoundaryPolygon;
use crate::integrate::{integrate_normals, IntegrationProblem, DEFAULT_NZ_FLOOR};
use crate::labeling::{
    detect_occlusion_mask, initial_labels, refine_labels, LabelParams, OcclusionStats, RefineStats,
};
use crate::mesh::{
    laplacian_smooth, mesh_from_depth, rasterize_mesh, stitch, RiggedMesh, Side, StitchReport,
    Surface,
};
use crate::morph;
use crate::occlusion::{find_occluded_runs, replace_occluded_runs, ReplaceReport, Run};
use crate::raster::{mask_iou, RasterMap, Semantic};
use crate::skeleton::{Clip, Pose};
use crate::template::{render_template, Camera, Part, TemplateBody, TemplateRender, View};
use crate::texture::{
    assemble_atlas, blend_seam, fill_hidden, project_front, synthesize_back, BackMode,
    DEFAULT_SEAM_BAND,
};
use crate::warp::{build_warp, fill_holes, warp_map};

/// Arm regions smaller than this many pixels are not meshed.
pub const MIN_REGION_PIXELS: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub boundary_points: usize,
    pub kappa: usize,
    pub labels: LabelParams,
    pub nz_floor: f64,
    /// Use the warped template depth instead of integrating normals.
    pub depth_warp_baseline: bool,
    pub smoothing_iterations: usize,
    pub smoothing_step: f64,
    pub smoothing_rings: usize,
    /// Clearance kept between an arm's back surface and the body's front
    /// surface, in model units.
    pub arm_clearance: f64,
    pub back_mode: BackMode,
    pub seam_band: usize,
    pub seed: u64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            boundary_points: DEFAULT_RESAMPLE,
            kappa: DEFAULT_KAPPA,
            labels: LabelParams::default(),
            nz_floor: DEFAULT_NZ_FLOOR,
            depth_warp_baseline: false,
            smoothing_iterations: 3,
            smoothing_step: 0.5,
            smoothing_rings: 2,
            arm_clearance: 0.01,
            back_mode: BackMode::Mirror,
            seam_band: DEFAULT_SEAM_BAND,
            seed: 0,
        }
    }
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        if self.boundary_points < 8 {
            return Err(Error::InvalidInput(
                "boundary_points must be at least 8".into(),
            ));
        }
        if self.kappa == 0 || self.labels.part_kappa == 0 {
            return Err(Error::InvalidInput("kappa must be positive".into()));
        }
        if !(self.smoothing_step >= 0.0 && self.smoothing_step <= 1.0) {
            return Err(Error::InvalidInput(
                "smoothing_step must lie in [0, 1]".into(),
            ));
        }
        if self.seam_band == 0 {
            return Err(Error::InvalidInput("seam_band must be at least 1".into()));
        }
        if !(self.arm_clearance >= 0.0) {
            return Err(Error::InvalidInput(
                "arm_clearance must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Everything the pipeline reads.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub silhouette: RasterMap,
    pub color: Option<RasterMap>,
    pub template: TemplateBody,
    /// Template pose matching the silhouette.
    pub pose: Pose,
    pub camera: Camera,
    /// Back label map in the back view's frame; defaults to the mirrored
    /// front labels.
    pub back_labels: Option<RasterMap>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SideStats {
    pub matching_cost: f64,
    pub invalid_warp_pixels: usize,
    pub integration_energy: f64,
    pub solver_iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionStats {
    pub name: String,
    pub pixels: usize,
    pub front: SideStats,
    pub back: SideStats,
    pub stitch: StitchReport,
    /// Mean `z_front - z_back` over the region, in model units.
    pub mean_thickness: f64,
    pub lift: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompletionStats {
    pub occlusion_pixels: usize,
    pub runs: Vec<Run>,
    pub replace: ReplaceReport,
    pub matching_cost: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    /// Stage name and wall time in milliseconds, in execution order.
    pub timings: Vec<(String, f64)>,
    pub occlusion: OcclusionStats,
    pub refine: Option<RefineStats>,
    pub completion: Option<CompletionStats>,
    pub regions: Vec<RegionStats>,
    pub iou: f64,
    pub closed: bool,
    pub components: usize,
    pub vertices: usize,
    pub triangles: usize,
    pub max_weight_error: f64,
    /// Smallest arm-back to body-front gap over overlapping pixels.
    pub min_arm_clearance: Option<f64>,
    pub back_provenance: Option<BTreeMap<i32, BTreeMap<i32, usize>>>,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub mesh: RiggedMesh,
    pub report: Report,
    /// Named intermediate maps, in the front frame.
    pub intermediates: BTreeMap<String, RasterMap>,
    /// Head, torso and legs boundary after occlusion completion.
    pub completed_boundary: Option<BoundaryPolygon>,
}

/// Per-region output before merging.
#[derive(Debug, Clone)]
pub struct RegionResult {
    pub surface: Surface,
    pub domain: RasterMap,
    /// Front height `scale * z`.
    pub front_height: RasterMap,
    /// Back height `-scale * z`, in the front frame.
    pub back_height: RasterMap,
    pub stats: RegionStats,
}

struct Timer {
    log: Vec<(String, f64)>,
    at: Instant,
}

impl Timer {
    fn new() -> Self {
        Self {
            log: Vec::new(),
            at: Instant::now(),
        }
    }

    fn lap(&mut self, name: &str) {
        let now = Instant::now();
        self.log
            .push((name.to_string(), (now - self.at).as_secs_f64() * 1e3));
        self.at = now;
    }
}

struct SideResult {
    height: RasterMap,
    skinning: RasterMap,
    stats: SideStats,
}

/// Warps the template maps onto `domain` (in the template render's frame)
/// and recovers the height by integrating the warped normals.
fn reconstruct_side(
    domain: &RasterMap,
    tmpl: &TemplateRender,
    params: &Params,
) -> Result<SideResult> {
    let poly =
        resample_boundary(&extract_boundary(domain)?, params.boundary_points).stage("boundary")?;
    let tpoly = resample_boundary(&extract_boundary(&tmpl.silhouette)?, params.boundary_points)
        .stage("boundary")?;
    let corr = match_boundaries(&poly, &tpoly, params.kappa).stage("matching")?;
    let field = build_warp(&poly, &tpoly, &corr, domain)
        .stage("warp")?
        .with_template_support(tmpl.silhouette.clone());
    let mut stats = SideStats {
        matching_cost: corr.total_cost,
        invalid_warp_pixels: field.invalid_count(),
        ..Default::default()
    };
    let pull = |src: &RasterMap| -> Result<RasterMap> {
        let w = warp_map(&field, src)?;
        fill_holes(&w.map, &w.valid, domain)
    };
    let normal = pull(&tmpl.normal).stage("warp")?;
    let depth = pull(&tmpl.depth).stage("warp")?;
    let skinning = pull(&tmpl.skinning).stage("warp")?;
    let height = if params.depth_warp_baseline {
        depth
    } else {
        let mut problem =
            IntegrationProblem::new(normal, depth, domain.clone()).stage("integrate")?;
        problem.nz_floor = params.nz_floor;
        let r = integrate_normals(&problem).stage("integrate")?;
        stats.integration_energy = r.energy;
        stats.solver_iterations = r.stats.iterations;
        r.depth
    };
    Ok(SideResult {
        height,
        skinning,
        stats,
    })
}

/// Builds the closed surface of one region from its front and back
/// template renders. `mask` is in the front frame.
pub fn reconstruct_region(
    name: &str,
    mask: &RasterMap,
    front: &TemplateRender,
    back: &TemplateRender,
    params: &Params,
) -> Result<RegionResult> {
    if front.view != View::Front || back.view != View::Back {
        return Err(Error::InvalidInput(
            "region templates must be a front and a back render".into(),
        ));
    }
    let domain = clean_mask(mask)?;
    let f = reconstruct_side(&domain, front, params).stage("front")?;
    let b = reconstruct_side(&domain.mirrored(), back, params).stage("back")?;
    let back_height = b.height.mirrored();
    let back_skin = b.skinning.mirrored();
    let cam = &front.camera;
    let fm = mesh_from_depth(&f.height, &f.skinning, &domain, Side::Front, cam).stage("mesh")?;
    let bm = mesh_from_depth(&back_height, &back_skin, &domain, Side::Back, cam).stage("mesh")?;
    let (surface, stitch_report) = stitch(&fm, &bm).stage("stitch")?;
    let s = cam.scale();
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..domain.len_pixels() {
        if domain.data()[i] >= 0.5 {
            sum += (f.height.data()[i] + back_height.data()[i]) as f64 / s;
            n += 1;
        }
    }
    let stats = RegionStats {
        name: name.to_string(),
        pixels: n,
        front: f.stats,
        back: b.stats,
        stitch: stitch_report,
        mean_thickness: sum / n as f64,
        lift: 0.0,
    };
    Ok(RegionResult {
        surface,
        domain,
        front_height: f.height,
        back_height,
        stats,
    })
}

/// Moves every vertex along its front camera ray by `dz` in depth.
fn lift_along_rays(surface: &mut Surface, camera: &Camera, dz: f64) {
    for v in surface.vertices.iter_mut() {
        let (u, y) = camera.project(View::Front, v);
        *v = camera.back_project(View::Front, u, y, (v.z + dz) * camera.scale());
    }
}

fn part_mask(s: &RasterMap, labels: &RasterMap, parts: &[Part]) -> RasterMap {
    let ids: Vec<i32> = parts.iter().map(|p| p.id() as i32).collect();
    RasterMap::mask_from_fn(s.width(), s.height(), |x, y| {
        s.is_set(x, y) && ids.contains(&labels.label_at(x, y))
    })
}

fn check_inputs(inputs: &Inputs) -> Result<()> {
    let s = &inputs.silhouette;
    if s.channels() != 1 {
        return Err(Error::InvalidInput(
            "silhouette must be single-channel".into(),
        ));
    }
    if s.count_set() == 0 {
        return Err(Error::InvalidInput("silhouette is empty".into()));
    }
    if inputs.camera.width != s.width() || inputs.camera.height != s.height() {
        return Err(Error::InvalidInput(format!(
            "camera is {}x{}, silhouette {}x{}",
            inputs.camera.width,
            inputs.camera.height,
            s.width(),
            s.height()
        )));
    }
    if let Some(c) = &inputs.color {
        if c.width() != s.width() || c.height() != s.height() || c.channels() != 3 {
            return Err(Error::InvalidInput(
                "color image must be RGB and match the silhouette".into(),
            ));
        }
    }
    if let Some(l) = &inputs.back_labels {
        if !l.same_shape(s) {
            return Err(Error::InvalidInput(
                "back label map must match the silhouette".into(),
            ));
        }
    }
    let (_, sizes) = morph::components(s, false);
    if sizes.len() > 1 {
        log::warn!(
            "silhouette has {} components; only the largest is used",
            sizes.len()
        );
    }
    inputs.template.validate()?;
    if inputs.pose.rotations.len() != inputs.template.skeleton.len() {
        return Err(Error::InvalidInput(
            "pose and template skeleton differ in joint count".into(),
        ));
    }
    Ok(())
}

fn mean_thickness_at(
    a: &RegionResult,
    mask: &RasterMap,
    scale: f64,
    front: bool,
) -> Vec<(usize, f64)> {
    (0..mask.len_pixels())
        .filter(|&i| mask.data()[i] >= 0.5 && a.domain.data()[i] >= 0.5)
        .map(|i| {
            let z = if front {
                a.front_height.data()[i] as f64 / scale
            } else {
                -(a.back_height.data()[i] as f64) / scale
            };
            (i, z)
        })
        .collect()
}

/// Runs the full pipeline.
pub fn reconstruct(inputs: &Inputs, params: &Params) -> Result<Reconstruction> {
    params.validate()?;
    check_inputs(inputs).stage("input")?;
    let mut timer = Timer::new();
    let mut inter = BTreeMap::new();
    let (w, h) = (inputs.silhouette.width(), inputs.silhouette.height());
    let cam = &inputs.camera;
    let s = clean_mask(&inputs.silhouette).stage("input")?;
    let body = &inputs.template;
    let pose = &inputs.pose;
    let render = |view: View, parts: Option<&[Part]>| {
        render_template(body, pose, cam, view, parts).stage("template")
    };
    let t_front = render(View::Front, None)?;
    let t_back = render(View::Back, None)?;
    timer.lap("template");

    let mut lp = params.labels.clone();
    lp.seed = params.seed;
    let labels = initial_labels(
        &s,
        &t_front.label,
        &t_front.silhouette,
        lp.effective_gamma_init(w, h),
    )
    .stage("labels")?;
    timer.lap("labels");
    let tau = lp.tau_fraction * body.bounding_diameter(pose)?;
    let (o, occ_stats) =
        detect_occlusion_mask(&labels, &s, &t_front, tau, &lp).stage("occlusion")?;
    timer.lap("occlusion");
    inter.insert("labels_initial".to_string(), labels.clone());
    inter.insert("occlusion".to_string(), o.clone());

    let mut regions: Vec<RegionResult> = Vec::new();
    let mut refine = None;
    let mut completion = None;
    let mut completed_boundary = None;
    let mut final_labels = labels.clone();
    let mut hidden = RasterMap::mask(w, h);
    let mut known_body = s.clone();
    let mut clearance: Option<f64> = None;
    if o.count_set() == 0 {
        let r = reconstruct_region("body", &s, &t_front, &t_back, params).stage("region")?;
        timer.lap("region:body");
        regions.push(r);
    } else {
        let (refined, rstats) = refine_labels(
            &labels,
            &s,
            inputs
                .color
                .as_ref()
                .unwrap_or(&s.clone().with_semantic(Semantic::Color)),
            &o,
            &lp,
        )
        .stage("refine")?;
        refine = Some(rstats);
        final_labels = refined;
        inter.insert("labels_refined".to_string(), final_labels.clone());
        timer.lap("refine");

        let (b_mask, _) = morph::largest_component(&part_mask(&s, &final_labels, &Part::BODY));
        if b_mask.count_set() < MIN_REGION_PIXELS {
            return Err(
                Error::Degenerate("head, torso and legs region is empty".into())
                    .in_stage("completion"),
            );
        }
        let tb_front = render(View::Front, Some(&Part::BODY))?;
        let tb_back = render(View::Back, Some(&Part::BODY))?;
        let db = resample_boundary(&extract_boundary(&b_mask)?, params.boundary_points)
            .stage("completion")?;
        let dt = resample_boundary(
            &extract_boundary(&tb_front.silhouette)?,
            params.boundary_points,
        )
        .stage("completion")?;
        let corr = match_boundaries(&db, &dt, params.kappa).stage("completion")?;
        let region = find_occluded_runs(&db, &o);
        let (done, rep) = replace_occluded_runs(&region, &dt, &corr).stage("completion")?;
        let completed = morph::largest_component(&done.rasterize(w, h)).0;
        inter.insert("body_completed".to_string(), completed.clone());
        completion = Some(CompletionStats {
            occlusion_pixels: o.count_set(),
            runs: region.occluded_runs.clone(),
            replace: rep,
            matching_cost: corr.total_cost,
        });
        completed_boundary = Some(done);
        timer.lap("completion");

        let body_region =
            reconstruct_region("body", &completed, &tb_front, &tb_back, params).stage("region")?;
        timer.lap("region:body");
        let mut arm_masks = RasterMap::mask(w, h);
        for (name, parts) in [("left_arm", Part::LEFT_ARM), ("right_arm", Part::RIGHT_ARM)] {
            let (arm, _) = morph::largest_component(&part_mask(&s, &final_labels, &parts));
            if arm.count_set() < MIN_REGION_PIXELS {
                log::warn!("{name} region has {} pixels; not meshed", arm.count_set());
                continue;
            }
            let ta_front = render(View::Front, Some(&parts))?;
            let ta_back = render(View::Back, Some(&parts))?;
            let mut r =
                reconstruct_region(name, &arm, &ta_front, &ta_back, params).stage("region")?;
            // keep the arm's back surface in front of the body's front surface
            let overlap = morph::intersection(&r.domain, &body_region.domain);
            let arm_back: BTreeMap<usize, f64> =
                mean_thickness_at(&r, &overlap, cam.scale(), false)
                    .into_iter()
                    .collect();
            let body_front = mean_thickness_at(&body_region, &overlap, cam.scale(), true);
            let need = body_front
                .iter()
                .map(|(i, zb)| zb - arm_back[i] + params.arm_clearance)
                .fold(f64::NEG_INFINITY, f64::max);
            if need > 0.0 {
                lift_along_rays(&mut r.surface, cam, need);
                r.stats.lift = need;
            }
            if !body_front.is_empty() {
                let lifted = r.stats.lift;
                let gap = body_front
                    .iter()
                    .map(|(i, zb)| arm_back[i] + lifted - zb)
                    .fold(f64::INFINITY, f64::min);
                clearance = Some(clearance.map_or(gap, |c: f64| c.min(gap)));
            }
            arm_masks = morph::union(&arm_masks, &r.domain);
            timer.lap(&format!("region:{name}"));
            regions.push(r);
        }
        hidden = morph::intersection(&body_region.domain, &arm_masks);
        known_body = RasterMap::mask_from_fn(w, h, |x, y| {
            body_region.domain.is_set(x, y) && s.is_set(x, y) && !arm_masks.is_set(x, y)
        });
        regions.insert(0, body_region);
    }
    inter.insert("labels".to_string(), final_labels.clone());
    inter.insert("hidden".to_string(), hidden.clone());

    // merge, smooth seams, rig
    let mut surface = regions[0].surface.clone();
    for r in &regions[1..] {
        surface.append(&r.surface)?;
    }
    let active = surface.seam_neighborhood(params.smoothing_rings);
    let rays = surface.view_rays(cam);
    surface.vertices = laplacian_smooth(
        &surface.vertices,
        &surface.triangles,
        &active,
        params.smoothing_iterations,
        params.smoothing_step,
        Some(&rays),
    );
    let body_vertices = regions[0].surface.vertices.len();
    let mut mesh = RiggedMesh::new(surface, body.skeleton.clone()).stage("rig")?;
    if hidden.count_set() > 0 {
        let marked: Vec<bool> = (0..mesh.vertices.len())
            .map(|i| {
                let [x, y] = mesh.pixels[i];
                i < body_vertices && hidden.is_set_i(x.round() as i64, y.round() as i64)
            })
            .collect();
        mesh.use_hidden_tile(&marked);
    }
    timer.lap("mesh");

    let mut provenance = None;
    if let Some(color) = &inputs.color {
        let front = project_front(color, &s, Some(&hidden)).stage("texture")?;
        let hidden_tile = fill_hidden(&front.tile, &known_body, &hidden).stage("texture")?;
        let back = synthesize_back(
            &front.tile,
            &s,
            params.back_mode,
            Some(&final_labels),
            inputs.back_labels.as_ref(),
        )
        .stage("texture")?;
        let (ft, bt) =
            blend_seam(&front.tile, &back.tile, &s, params.seam_band).stage("texture")?;
        let mut ht = hidden_tile;
        for i in 0..w * h {
            if hidden.data()[i] < 0.5 {
                ht.data_mut()[i * 3..i * 3 + 3].copy_from_slice(&[0.0; 3]);
            }
        }
        mesh.texture = Some(assemble_atlas(&[&ft, &bt, &ht])?);
        if params.back_mode == BackMode::Inpaint {
            provenance = Some(back.provenance);
        }
        timer.lap("texture");
    }

    let raster = rasterize_mesh(&mesh.vertices, &mesh.triangles, cam, View::Front);
    let iou = mask_iou(&raster, &s);
    let max_weight_error = mesh
        .weights
        .chunks(mesh.bones())
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    inter.insert("mesh_silhouette".to_string(), raster);
    for r in &regions {
        inter.insert(
            format!("{}_front_height", r.stats.name),
            r.front_height.clone(),
        );
        inter.insert(
            format!("{}_back_height", r.stats.name),
            r.back_height.clone(),
        );
    }
    timer.lap("report");
    let report = Report {
        timings: timer.log,
        occlusion: occ_stats,
        refine,
        completion,
        iou,
        closed: mesh.is_closed(),
        components: mesh.components().1,
        vertices: mesh.vertices.len(),
        triangles: mesh.triangles.len(),
        max_weight_error,
        min_arm_clearance: clearance,
        back_provenance: provenance,
        regions: regions.into_iter().map(|r| r.stats).collect(),
    };
    log::info!(
        "reconstruction: IoU {:.4}, {} vertices, {} triangles",
        report.iou,
        report.vertices,
        report.triangles
    );
    Ok(Reconstruction {
        mesh,
        report,
        intermediates: inter,
        completed_boundary,
    })
}

/// Posed vertex positions for every frame of `clip`.
pub fn animate(mesh: &RiggedMesh, clip: &Clip) -> Result<Vec<Vec<Point3<f64>>>> {
    clip.poses(&mesh.skeleton)?
        .iter()
        .map(|p| mesh.posed_vertices(p))
        .collect()
}
