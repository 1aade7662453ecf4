//! Deterministic synthetic inputs with ground truth for the end-to-end
//! tests.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundaryPolygon, Vec2};
use crate::morph;
use crate::raster::{RasterMap, Semantic};
use crate::skeleton::{Pose, PoseFrame};
use crate::template::{render_template, Camera, Part, TemplateBody, TemplateRender, View};

/// Extra arm radius of the subject in the occlusion fixtures (3 px).
pub const ARM_THICKENING: f64 = 0.025;
pub const CLOTHING_DILATION: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureName {
    PlainTpose,
    DilatedClothing,
    ConcaveSleeves,
    ArmOverTorso,
    ArmOverTorsoTwotone,
}

impl FixtureName {
    pub const ALL: [FixtureName; 5] = [
        FixtureName::PlainTpose,
        FixtureName::DilatedClothing,
        FixtureName::ConcaveSleeves,
        FixtureName::ArmOverTorso,
        FixtureName::ArmOverTorsoTwotone,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FixtureName::PlainTpose => "plain_tpose",
            FixtureName::DilatedClothing => "dilated_clothing",
            FixtureName::ConcaveSleeves => "concave_sleeves",
            FixtureName::ArmOverTorso => "arm_over_torso",
            FixtureName::ArmOverTorsoTwotone => "arm_over_torso_twotone",
        }
    }

    pub fn occluded(self) -> bool {
        matches!(
            self,
            FixtureName::ArmOverTorso | FixtureName::ArmOverTorsoTwotone
        )
    }
}

impl std::str::FromStr for FixtureName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FixtureName::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown fixture {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Front render of the subject's own body.
    pub subject: TemplateRender,
    /// Arm pixels whose 4-neighbor is a body pixel more than `tau` away in 3D.
    pub occlusion_contour: RasterMap,
    /// Head, torso and legs of the subject rendered without arms.
    pub body_without_arms: RasterMap,
    /// Visible head, torso and legs, plus the arm-free body pixels lying
    /// more than `tau` behind the arm surface in front of them.
    pub body_unoccluded: RasterMap,
    pub tau: f64,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: FixtureName,
    pub silhouette: RasterMap,
    pub color: RasterMap,
    pub template: TemplateBody,
    pub pose: Pose,
    pub camera: Camera,
    /// Image positions of the skeleton joints.
    pub joints_2d: Vec<[f64; 2]>,
    pub truth: GroundTruth,
}

/// Default occlusion threshold as a fraction of the bounding diameter.
pub const TAU_FRACTION: f64 = 0.05;

/// Right forearm folded across the chest, in front of the torso.
pub fn arm_over_torso_pose(body: &TemplateBody) -> Result<Pose> {
    let s = &body.skeleton;
    Pose::rest(s.len())
        .aim(s, "shoulder_r", Vector3::new(-0.06, -0.17, 0.2))?
        .aim(s, "elbow_r", Vector3::new(1.0, 0.15, 0.0))
}

fn part_color(part: Part) -> [f64; 3] {
    match part {
        Part::Head => [0.85, 0.68, 0.55],
        Part::Torso => [0.2, 0.35, 0.7],
        Part::LeftUpperArm | Part::RightUpperArm => [0.25, 0.4, 0.75],
        Part::LeftLowerArm | Part::RightLowerArm | Part::LeftHand | Part::RightHand => {
            [0.85, 0.66, 0.52]
        }
        Part::LeftLeg | Part::RightLeg => [0.25, 0.25, 0.3],
    }
}

/// Shaded per-part colors, or flat red arms on a flat blue body.
fn shade(render: &TemplateRender, silhouette: &RasterMap, twotone: bool) -> Result<RasterMap> {
    let (w, h) = (silhouette.width(), silhouette.height());
    let mut img = RasterMap::new(w, h, 3, Semantic::Color)?;
    img.fill(&[1.0, 1.0, 1.0]);
    // nearest rendered pixel for silhouette pixels outside the render
    let mut nearest = vec![usize::MAX; w * h];
    {
        let mut queue = std::collections::VecDeque::new();
        for i in 0..w * h {
            if render.silhouette.data()[i] >= 0.5 {
                nearest[i] = i;
                queue.push_back(i);
            }
        }
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                if render.silhouette.in_bounds(x + dx, y + dy) {
                    let j = (y + dy) as usize * w + (x + dx) as usize;
                    if nearest[j] == usize::MAX {
                        nearest[j] = nearest[i];
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            if !silhouette.is_set(x, y) {
                continue;
            }
            let src = nearest[y * w + x];
            let (sx, sy) = (src % w, src / w);
            let part = Part::from_id(render.label.label_at(sx, sy) as usize).unwrap_or(Part::Torso);
            let c = if twotone {
                if part.is_arm() {
                    [1.0, 0.0, 0.0]
                } else {
                    [0.0, 0.0, 1.0]
                }
            } else {
                let k = 0.55 + 0.45 * render.normal.get(sx, sy, 2).max(0.0) as f64;
                part_color(part).map(|v| v * k)
            };
            let px = img.pixel_mut(x, y);
            for c_ in 0..3 {
                px[c_] = c[c_] as f32;
            }
        }
    }
    Ok(img)
}

/// Bell sleeves hanging below each forearm, leaving a notch at the hand.
fn add_sleeves(
    mask: &RasterMap,
    body: &TemplateBody,
    pose: &Pose,
    camera: &Camera,
) -> Result<RasterMap> {
    let world = body.skeleton.world(pose)?;
    let s = &body.skeleton;
    let mut out = mask.clone();
    for (elbow, wrist) in [("elbow_l", "wrist_l"), ("elbow_r", "wrist_r")] {
        let e = world[s.index_of(elbow).unwrap()].translation.vector;
        let wr = world[s.index_of(wrist).unwrap()].translation.vector;
        let (eu, ev) = camera.project(View::Front, &e.into());
        let (wu, wv) = camera.project(View::Front, &wr.into());
        let inward = (eu - wu).signum();
        let pts = vec![
            Vec2::new(eu, ev),
            Vec2::new(wu + inward * 6.0, wv),
            Vec2::new(wu + inward * 2.0, wv + 16.0),
            Vec2::new(eu - inward * 4.0, ev + 8.0),
        ];
        let poly = BoundaryPolygon::new(pts)?;
        out = morph::union(&out, &poly.rasterize(mask.width(), mask.height()));
    }
    Ok(out)
}

fn occlusion_contour(render: &TemplateRender, tau: f64) -> RasterMap {
    let (w, h) = (render.camera.width, render.camera.height);
    let cam = &render.camera;
    let point = |x: usize, y: usize| {
        cam.back_project(
            View::Front,
            x as f64,
            y as f64,
            render.depth.get(x, y, 0) as f64,
        )
    };
    let part = |x: usize, y: usize| Part::from_id(render.label.label_at(x, y) as usize);
    let mut out = RasterMap::mask(w, h);
    for y in 0..h {
        for x in 0..w {
            if !render.silhouette.is_set(x, y) || !part(x, y).is_some_and(Part::is_arm) {
                continue;
            }
            for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if !render.silhouette.is_set_i(nx, ny) {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if part(nx, ny).is_some_and(|p| Part::BODY.contains(&p))
                    && (point(x, y) - point(nx, ny)).norm() > tau
                {
                    out.set(x, y, 0, 1.0);
                    out.set(nx, ny, 0, 1.0);
                }
            }
        }
    }
    out
}

fn unoccluded_body(full: &TemplateRender, free: &TemplateRender, tau: f64) -> RasterMap {
    let s = full.camera.scale();
    RasterMap::mask_from_fn(full.silhouette.width(), full.silhouette.height(), |x, y| {
        if !free.silhouette.is_set(x, y) {
            return false;
        }
        let visible =
            Part::from_id(full.label.label_at(x, y) as usize).is_some_and(|p| !p.is_arm());
        let gap = (full.depth.get(x, y, 0) - free.depth.get(x, y, 0)) as f64 / s;
        visible || gap > tau
    })
}

pub fn make_fixture(name: FixtureName) -> Result<Fixture> {
    make_fixture_sized(name, 256)
}

pub fn make_fixture_sized(name: FixtureName, size: usize) -> Result<Fixture> {
    let camera = Camera::square(size);
    let template = TemplateBody::default_body();
    let (subject, pose) = if name == FixtureName::ArmOverTorsoTwotone {
        let pose = arm_over_torso_pose(&template)?;
        (template.clone().with_thicker_arms(ARM_THICKENING), pose)
    } else if name.occluded() {
        (template.clone(), arm_over_torso_pose(&template)?)
    } else {
        (template.clone(), Pose::rest(template.skeleton.len()))
    };
    let render = render_template(&subject, &pose, &camera, View::Front, None)?;
    let silhouette = match name {
        FixtureName::DilatedClothing => morph::dilate(&render.silhouette, CLOTHING_DILATION),
        FixtureName::ConcaveSleeves => add_sleeves(&render.silhouette, &subject, &pose, &camera)?,
        _ => render.silhouette.clone(),
    };
    let color = shade(
        &render,
        &silhouette,
        name == FixtureName::ArmOverTorsoTwotone,
    )?;
    let tau = TAU_FRACTION * subject.bounding_diameter(&pose)?;
    let occlusion_contour = occlusion_contour(&render, tau);
    let free = render_template(&subject, &pose, &camera, View::Front, Some(&Part::BODY))?;
    let body_unoccluded = unoccluded_body(&render, &free, tau);
    let body_without_arms = free.silhouette;
    let world = template.skeleton.world(&pose)?;
    let joints_2d = world
        .iter()
        .map(|m| {
            let (u, v) = camera.project(View::Front, &m.translation.vector.into());
            [u, v]
        })
        .collect();
    Ok(Fixture {
        name,
        silhouette,
        color,
        template,
        pose,
        camera,
        joints_2d,
        truth: GroundTruth {
            subject: render,
            occlusion_contour,
            body_without_arms,
            body_unoccluded,
            tau,
        },
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub name: FixtureName,
    pub mask: String,
    pub color: String,
    pub template: String,
    pub pose: PoseFrame,
    pub camera: Camera,
    pub joints_2d: Vec<[f64; 2]>,
    pub truth: std::collections::BTreeMap<String, String>,
}

impl Fixture {
    /// Writes `mask.png`, `color.png`, `template.json`, ground-truth maps
    /// and `fixture.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.silhouette.save_png(dir.join("mask.png"))?;
        self.color.save_png(dir.join("color.png"))?;
        std::fs::write(
            dir.join("template.json"),
            serde_json::to_string_pretty(&self.template)?,
        )?;
        self.truth
            .occlusion_contour
            .save_fmap(dir.join("truth_occlusion_contour.fmap"))?;
        self.truth
            .body_without_arms
            .save_fmap(dir.join("truth_body_without_arms.fmap"))?;
        self.truth
            .body_unoccluded
            .save_fmap(dir.join("truth_body_unoccluded.fmap"))?;
        self.truth.subject.save(dir.join("truth_subject"))?;
        let truth = [
            ("occlusion_contour", "truth_occlusion_contour.fmap"),
            ("body_without_arms", "truth_body_without_arms.fmap"),
            ("body_unoccluded", "truth_body_unoccluded.fmap"),
            ("subject", "truth_subject"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        let manifest = FixtureManifest {
            name: self.name,
            mask: "mask.png".into(),
            color: "color.png".into(),
            template: "template.json".into(),
            pose: self.pose.to_frame(&self.template.skeleton),
            camera: self.camera,
            joints_2d: self.joints_2d.clone(),
            truth,
        };
        std::fs::write(
            dir.join("fixture.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::mask_iou;

    #[test]
    fn plain_and_dilated() {
        let plain = make_fixture(FixtureName::PlainTpose).unwrap();
        assert_eq!(plain.silhouette, plain.truth.subject.silhouette);
        assert_eq!(plain.truth.occlusion_contour.count_set(), 0);
        let dil = make_fixture(FixtureName::DilatedClothing).unwrap();
        assert_eq!(dil.silhouette, morph::dilate(&plain.silhouette, 6.0));
    }

    #[test]
    fn sleeves_add_area() {
        let plain = make_fixture(FixtureName::PlainTpose).unwrap();
        let sl = make_fixture(FixtureName::ConcaveSleeves).unwrap();
        assert!(sl.silhouette.count_set() > plain.silhouette.count_set() + 200);
        assert!(mask_iou(&sl.silhouette, &plain.silhouette) > 0.8);
    }

    #[test]
    fn arm_over_torso_has_contour_and_twotone_colors() {
        let f = make_fixture(FixtureName::ArmOverTorsoTwotone).unwrap();
        assert!(f.truth.occlusion_contour.count_set() > 50);
        let mut reds = 0;
        for y in 0..256 {
            for x in 0..256 {
                if f.silhouette.is_set(x, y) {
                    let p = f.color.pixel(x, y);
                    assert!(p == [1.0, 0.0, 0.0] || p == [0.0, 0.0, 1.0]);
                    reds += (p[0] == 1.0) as usize;
                }
            }
        }
        assert!(reds > 500);
        assert!("arm_over_torso".parse::<FixtureName>().is_ok());
        assert!("nope".parse::<FixtureName>().is_err());
    }
}
