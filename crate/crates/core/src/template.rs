//! Capsule-and-ellipsoid template body, pinhole camera and ray-cast map
//! rendering from the front and the back.

use std::path::Path;

use nalgebra::{Isometry3, Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{RasterMap, Semantic};
use crate::skeleton::{Joint, Pose, Skeleton};

/// Body-part label alphabet, in label-id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Head,
    Torso,
    LeftUpperArm,
    LeftLowerArm,
    LeftHand,
    RightUpperArm,
    RightLowerArm,
    RightHand,
    LeftLeg,
    RightLeg,
}

pub const PART_COUNT: usize = 10;

impl Part {
    pub const ALL: [Part; PART_COUNT] = [
        Part::Head,
        Part::Torso,
        Part::LeftUpperArm,
        Part::LeftLowerArm,
        Part::LeftHand,
        Part::RightUpperArm,
        Part::RightLowerArm,
        Part::RightHand,
        Part::LeftLeg,
        Part::RightLeg,
    ];
    pub const LEFT_ARM: [Part; 3] = [Part::LeftUpperArm, Part::LeftLowerArm, Part::LeftHand];
    pub const RIGHT_ARM: [Part; 3] = [Part::RightUpperArm, Part::RightLowerArm, Part::RightHand];
    /// Head, torso and legs: the region completed behind occluding arms.
    pub const BODY: [Part; 4] = [Part::Head, Part::Torso, Part::LeftLeg, Part::RightLeg];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Part> {
        Part::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Part::Head => "head",
            Part::Torso => "torso",
            Part::LeftUpperArm => "left_upper_arm",
            Part::LeftLowerArm => "left_lower_arm",
            Part::LeftHand => "left_hand",
            Part::RightUpperArm => "right_upper_arm",
            Part::RightLowerArm => "right_lower_arm",
            Part::RightHand => "right_hand",
            Part::LeftLeg => "left_leg",
            Part::RightLeg => "right_leg",
        }
    }

    pub fn is_arm(self) -> bool {
        Part::LEFT_ARM.contains(&self) || Part::RIGHT_ARM.contains(&self)
    }
}

/// Sidecar legend mapping label ids to part names.
pub fn label_legend() -> serde_json::Value {
    serde_json::Value::Object(
        Part::ALL
            .iter()
            .map(|p| (p.id().to_string(), serde_json::Value::from(p.name())))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Capsule {
        a: [f64; 3],
        b: [f64; 3],
        radius: f64,
    },
    Ellipsoid {
        center: [f64; 3],
        radii: [f64; 3],
    },
}

impl Shape {
    fn nominal_radius(&self) -> f64 {
        match self {
            Shape::Capsule { radius, .. } => *radius,
            Shape::Ellipsoid { radii, .. } => (radii[0] + radii[1] + radii[2]) / 3.0,
        }
    }

    /// Entry distance and outward normal for a unit-direction ray.
    fn intersect(&self, ro: &Point3<f64>, rd: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        match self {
            Shape::Capsule { a, b, radius } => {
                capsule_hit(ro, rd, &Point3::from(*a), &Point3::from(*b), *radius)
            }
            Shape::Ellipsoid { center, radii } => {
                ellipsoid_hit(ro, rd, &Point3::from(*center), &Vector3::from(*radii))
            }
        }
    }

    fn extremes(&self) -> Vec<(Point3<f64>, f64)> {
        match self {
            Shape::Capsule { a, b, radius } => {
                vec![(Point3::from(*a), *radius), (Point3::from(*b), *radius)]
            }
            Shape::Ellipsoid { center, radii } => vec![(
                Point3::from(*center),
                radii.iter().cloned().fold(0.0, f64::max),
            )],
        }
    }
}

fn sphere_hit(ro: &Point3<f64>, rd: &Vector3<f64>, c: &Point3<f64>, r: f64) -> Option<f64> {
    let oc = ro - c;
    let b = oc.dot(rd);
    let h = b * b - (oc.norm_squared() - r * r);
    (h >= 0.0).then(|| -b - h.sqrt())
}

fn capsule_hit(
    ro: &Point3<f64>,
    rd: &Vector3<f64>,
    pa: &Point3<f64>,
    pb: &Point3<f64>,
    r: f64,
) -> Option<(f64, Vector3<f64>)> {
    let ba = pb - pa;
    let oa = ro - pa;
    let baba = ba.norm_squared();
    let bard = ba.dot(rd);
    let baoa = ba.dot(&oa);
    let mut best: Option<f64> = None;
    let mut keep = |t: f64| {
        if t > 0.0 && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };
    let a = baba - bard * bard;
    if a > 1e-12 * baba {
        let b = baba * rd.dot(&oa) - baoa * bard;
        let c = baba * oa.norm_squared() - baoa * baoa - r * r * baba;
        let h = b * b - a * c;
        if h >= 0.0 {
            let t = (-b - h.sqrt()) / a;
            let y = baoa + t * bard;
            if y > 0.0 && y < baba {
                keep(t);
            }
        }
    }
    if let Some(t) = sphere_hit(ro, rd, pa, r) {
        keep(t);
    }
    if let Some(t) = sphere_hit(ro, rd, pb, r) {
        keep(t);
    }
    let t = best?;
    let p = ro + rd * t;
    let s = ((p - pa).dot(&ba) / baba).clamp(0.0, 1.0);
    let n = (p - (pa + ba * s)).normalize();
    Some((t, n))
}

fn ellipsoid_hit(
    ro: &Point3<f64>,
    rd: &Vector3<f64>,
    c: &Point3<f64>,
    radii: &Vector3<f64>,
) -> Option<(f64, Vector3<f64>)> {
    let o = (ro - c).component_div(radii);
    let d = rd.component_div(radii);
    let a = d.norm_squared();
    let b = o.dot(&d);
    let cc = o.norm_squared() - 1.0;
    let h = b * b - a * cc;
    if h < 0.0 {
        return None;
    }
    let t = (-b - h.sqrt()) / a;
    if t <= 0.0 {
        return None;
    }
    let p = ro + rd * t;
    let n = (p - c)
        .component_div(&radii.component_mul(radii))
        .normalize();
    Some((t, n))
}

/// One solid attached rigidly to a bone; coordinates are rest-pose world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub part: Part,
    pub bone: usize,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateBody {
    pub skeleton: Skeleton,
    pub primitives: Vec<Primitive>,
    /// Model units per meter.
    pub scale: f64,
}

/// Joint names of the default skeleton, in index order.
pub const JOINT_NAMES: [&str; 19] = [
    "root",
    "spine1",
    "spine2",
    "neck",
    "head",
    "clavicle_l",
    "shoulder_l",
    "elbow_l",
    "wrist_l",
    "clavicle_r",
    "shoulder_r",
    "elbow_r",
    "wrist_r",
    "hip_l",
    "knee_l",
    "ankle_l",
    "hip_r",
    "knee_r",
    "ankle_r",
];

/// Vertical offset that centers the default body on the optical axis.
const BODY_LIFT: f64 = 0.065;

impl TemplateBody {
    /// T-posed default body, about 1.82 model units tall, facing +z with
    /// its left side toward +x.
    pub fn default_body() -> Self {
        let lift = |p: [f64; 3]| [p[0], p[1] + BODY_LIFT, p[2]];
        let world: [(usize, [f64; 3]); 19] = [
            (usize::MAX, [0.0, 0.0, 0.0]),
            (0, [0.0, 0.15, 0.0]),
            (1, [0.0, 0.33, 0.0]),
            (2, [0.0, 0.56, 0.0]),
            (3, [0.0, 0.64, 0.0]),
            (2, [0.04, 0.5, 0.0]),
            (5, [0.2, 0.5, 0.0]),
            (6, [0.47, 0.5, 0.0]),
            (7, [0.71, 0.5, 0.0]),
            (2, [-0.04, 0.5, 0.0]),
            (9, [-0.2, 0.5, 0.0]),
            (10, [-0.47, 0.5, 0.0]),
            (11, [-0.71, 0.5, 0.0]),
            (0, [0.1, -0.06, 0.0]),
            (13, [0.1, -0.5, 0.0]),
            (14, [0.1, -0.9, 0.0]),
            (0, [-0.1, -0.06, 0.0]),
            (16, [-0.1, -0.5, 0.0]),
            (17, [-0.1, -0.9, 0.0]),
        ];
        let joints = world
            .iter()
            .enumerate()
            .map(|(i, &(parent, p))| {
                let p = lift(p);
                let t = if parent == usize::MAX {
                    p
                } else {
                    let q = lift(world[parent].1);
                    [p[0] - q[0], p[1] - q[1], p[2] - q[2]]
                };
                Joint {
                    name: JOINT_NAMES[i].into(),
                    parent: (parent != usize::MAX).then_some(parent),
                    rest_rotation: [1.0, 0.0, 0.0, 0.0],
                    rest_translation: t,
                }
            })
            .collect();
        let skeleton = Skeleton::new(joints).expect("default skeleton is valid");
        let cap = |part, bone, a: [f64; 3], b: [f64; 3], radius| Primitive {
            part,
            bone,
            shape: Shape::Capsule {
                a: lift(a),
                b: lift(b),
                radius,
            },
        };
        let ell = |part, bone, center: [f64; 3], radii| Primitive {
            part,
            bone,
            shape: Shape::Ellipsoid {
                center: lift(center),
                radii,
            },
        };
        let mut primitives = vec![
            ell(Part::Head, 4, [0.0, 0.73, 0.0], [0.09, 0.115, 0.1]),
            cap(Part::Head, 3, [0.0, 0.54, 0.0], [0.0, 0.66, 0.0], 0.05),
            ell(Part::Torso, 2, [0.0, 0.38, 0.0], [0.19, 0.2, 0.11]),
            ell(Part::Torso, 1, [0.0, 0.16, 0.0], [0.165, 0.17, 0.1]),
            ell(Part::Torso, 0, [0.0, -0.02, 0.0], [0.175, 0.13, 0.1]),
        ];
        for (sx, base, arm, leg) in [
            (
                1.0,
                5,
                [Part::LeftUpperArm, Part::LeftLowerArm, Part::LeftHand],
                (13, Part::LeftLeg),
            ),
            (
                -1.0,
                9,
                [Part::RightUpperArm, Part::RightLowerArm, Part::RightHand],
                (16, Part::RightLeg),
            ),
        ] {
            let x = |v: f64| sx * v;
            primitives.push(cap(
                Part::Torso,
                base,
                [x(0.04), 0.5, 0.0],
                [x(0.2), 0.5, 0.0],
                0.06,
            ));
            primitives.push(cap(
                arm[0],
                base + 1,
                [x(0.2), 0.5, 0.0],
                [x(0.47), 0.5, 0.0],
                0.05,
            ));
            primitives.push(cap(
                arm[1],
                base + 2,
                [x(0.47), 0.5, 0.0],
                [x(0.71), 0.5, 0.0],
                0.042,
            ));
            primitives.push(ell(
                arm[2],
                base + 3,
                [x(0.785), 0.5, 0.0],
                [0.075, 0.05, 0.028],
            ));
            let (hip, part) = leg;
            primitives.push(cap(
                part,
                hip,
                [x(0.1), -0.06, 0.0],
                [x(0.1), -0.5, 0.0],
                0.075,
            ));
            primitives.push(cap(
                part,
                hip + 1,
                [x(0.1), -0.5, 0.0],
                [x(0.1), -0.9, 0.0],
                0.055,
            ));
            primitives.push(ell(
                part,
                hip + 2,
                [x(0.1), -0.94, 0.05],
                [0.045, 0.035, 0.1],
            ));
        }
        Self {
            skeleton,
            primitives,
            scale: 1.0,
        }
    }

    /// Same body with every arm primitive's radii grown by `dr`.
    pub fn with_thicker_arms(mut self, dr: f64) -> Self {
        for p in self.primitives.iter_mut().filter(|p| p.part.is_arm()) {
            match &mut p.shape {
                Shape::Capsule { radius, .. } => *radius += dr,
                Shape::Ellipsoid { radii, .. } => {
                    radii[1] += dr;
                    radii[2] += dr;
                    radii[0] += dr;
                }
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.skeleton.len();
        for p in &self.primitives {
            if p.bone >= b {
                return Err(Error::InvalidInput(format!(
                    "primitive bone {} out of range",
                    p.bone
                )));
            }
            let ok = match &p.shape {
                Shape::Capsule { radius, .. } => *radius > 0.0,
                Shape::Ellipsoid { radii, .. } => radii.iter().all(|r| *r > 0.0),
            };
            if !ok {
                return Err(Error::InvalidInput(
                    "primitive radii must be positive".into(),
                ));
            }
        }
        if !(self.scale > 0.0) {
            return Err(Error::InvalidInput("body scale must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let b: TemplateBody = serde_json::from_str(text)?;
        b.validate()?;
        Ok(b)
    }

    /// Diameter of a sphere enclosing the posed body.
    pub fn bounding_diameter(&self, pose: &Pose) -> Result<f64> {
        let m = self.skeleton.skinning_transforms(pose)?;
        let pts: Vec<(Point3<f64>, f64)> = self
            .primitives
            .iter()
            .flat_map(|p| {
                p.shape
                    .extremes()
                    .into_iter()
                    .map(|(q, r)| (m[p.bone] * q, r))
                    .collect::<Vec<_>>()
            })
            .collect();
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for (q, r) in &pts {
            lo = lo.inf(&(q.coords - Vector3::repeat(*r)));
            hi = hi.sup(&(q.coords + Vector3::repeat(*r)));
        }
        let c = (lo + hi) / 2.0;
        Ok(2.0
            * pts
                .iter()
                .map(|(q, r)| (q.coords - c).norm() + r)
                .fold(0.0, f64::max))
    }
}

/// Pinhole camera on the +z axis at `distance`, looking toward -z, with
/// the principal point at the image center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Front,
    /// Camera reflected through the body plane: the subject's left appears
    /// on image left.
    Back,
}

impl Default for Camera {
    fn default() -> Self {
        Self::square(256)
    }
}

impl Camera {
    /// 20 units away with about 120 px per unit at 256 px; `focal` scales
    /// with the image size.
    pub fn square(size: usize) -> Self {
        Self {
            width: size,
            height: size,
            focal: 2400.0 * size as f64 / 256.0,
            distance: 20.0,
        }
    }

    pub fn cx(&self) -> f64 {
        (self.width as f64 - 1.0) / 2.0
    }

    pub fn cy(&self) -> f64 {
        (self.height as f64 - 1.0) / 2.0
    }

    /// Pixels per model unit at the body plane; height maps are `scale * z`.
    pub fn scale(&self) -> f64 {
        self.focal / self.distance
    }

    fn ray(&self, view: View, u: f64, v: f64) -> (Point3<f64>, Vector3<f64>) {
        let (dx, dy) = ((u - self.cx()) / self.focal, -(v - self.cy()) / self.focal);
        match view {
            View::Front => (
                Point3::new(0.0, 0.0, self.distance),
                Vector3::new(dx, dy, -1.0).normalize(),
            ),
            View::Back => (
                Point3::new(0.0, 0.0, -self.distance),
                Vector3::new(-dx, dy, 1.0).normalize(),
            ),
        }
    }

    pub fn project(&self, view: View, p: &Point3<f64>) -> (f64, f64) {
        match view {
            View::Front => {
                let zc = self.distance - p.z;
                (
                    self.cx() + self.focal * p.x / zc,
                    self.cy() - self.focal * p.y / zc,
                )
            }
            View::Back => {
                let zc = self.distance + p.z;
                (
                    self.cx() - self.focal * p.x / zc,
                    self.cy() - self.focal * p.y / zc,
                )
            }
        }
    }

    /// World point seen at pixel `(u, v)` with height `h` toward the viewer.
    pub fn back_project(&self, view: View, u: f64, v: f64, h: f64) -> Point3<f64> {
        let s = self.scale();
        match view {
            View::Front => {
                let z = h / s;
                let zc = self.distance - z;
                Point3::new(
                    (u - self.cx()) * zc / self.focal,
                    -(v - self.cy()) * zc / self.focal,
                    z,
                )
            }
            View::Back => {
                let z = -h / s;
                let zc = self.distance + z;
                Point3::new(
                    -(u - self.cx()) * zc / self.focal,
                    -(v - self.cy()) * zc / self.focal,
                    z,
                )
            }
        }
    }

    /// Normal in image axes (x right, y down, z toward the viewer).
    pub fn to_image_normal(&self, view: View, n: &Vector3<f64>) -> Vector3<f64> {
        match view {
            View::Front => Vector3::new(n.x, -n.y, n.z),
            View::Back => Vector3::new(-n.x, -n.y, -n.z),
        }
    }
}

/// Silhouette, height, normal, skinning and label maps of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateRender {
    pub view: View,
    pub camera: Camera,
    pub silhouette: RasterMap,
    pub depth: RasterMap,
    pub normal: RasterMap,
    pub skinning: RasterMap,
    pub label: RasterMap,
}

/// Blend weights of `bone` with its parent and children within 1.5 radii
/// of the shared joints.
fn skin_weights(
    skel: &Skeleton,
    rest_joints: &[Point3<f64>],
    bone: usize,
    radius: f64,
    p: &Point3<f64>,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|w| *w = 0.0);
    let reach = 1.5 * radius;
    let fall = |d: f64| {
        if d < reach {
            0.5 * (1.0 - d / reach)
        } else {
            0.0
        }
    };
    out[bone] = 1.0;
    if let Some(parent) = skel.joints()[bone].parent {
        out[parent] += fall((p - rest_joints[bone]).norm());
    }
    for c in skel.children(bone) {
        out[c] += fall((p - rest_joints[c]).norm());
    }
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|w| *w /= s);
}

/// Ray-casts the posed body. With `parts`, only primitives of those parts
/// are drawn.
pub fn render_template(
    body: &TemplateBody,
    pose: &Pose,
    camera: &Camera,
    view: View,
    parts: Option<&[Part]>,
) -> Result<TemplateRender> {
    body.validate()?;
    let (w, h) = (camera.width, camera.height);
    if w == 0 || h == 0 {
        return Err(Error::InvalidInput("empty render size".into()));
    }
    let m = body.skeleton.skinning_transforms(pose)?;
    let inv: Vec<Isometry3<f64>> = m.iter().map(|t| t.inverse()).collect();
    let rest_joints = body.skeleton.rest_positions();
    let bones = body.skeleton.len();
    let prims: Vec<&Primitive> = body
        .primitives
        .iter()
        .filter(|p| parts.is_none_or(|ps| ps.contains(&p.part)))
        .collect();
    let s = camera.scale();
    type Px = Option<(f32, [f32; 3], Vec<f64>, usize)>;
    let rows: Vec<Vec<Px>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let (ro, rd) = camera.ray(view, x as f64, y as f64);
                    let mut best: Option<(f64, Vector3<f64>, Point3<f64>, &Primitive)> = None;
                    for p in &prims {
                        let (lo, ld) = (inv[p.bone] * ro, inv[p.bone].rotation * rd);
                        if let Some((t, n)) = p.shape.intersect(&lo, &ld) {
                            if best.as_ref().is_none_or(|b| t < b.0) {
                                best = Some((t, n, lo + ld * t, p));
                            }
                        }
                    }
                    let (t, n_rest, rest_hit, prim) = best?;
                    let hit = ro + rd * t;
                    let n = camera.to_image_normal(view, &(m[prim.bone].rotation * n_rest));
                    let depth = match view {
                        View::Front => s * hit.z,
                        View::Back => -s * hit.z,
                    };
                    let mut wts = vec![0.0; bones];
                    skin_weights(
                        &body.skeleton,
                        &rest_joints,
                        prim.bone,
                        prim.shape.nominal_radius(),
                        &rest_hit,
                        &mut wts,
                    );
                    Some((
                        depth as f32,
                        [n.x as f32, n.y as f32, n.z as f32],
                        wts,
                        prim.part.id(),
                    ))
                })
                .collect()
        })
        .collect();
    let mut silhouette = RasterMap::mask(w, h);
    let mut depth = RasterMap::new(w, h, 1, Semantic::Depth)?;
    let mut normal = RasterMap::new(w, h, 3, Semantic::Normal)?;
    let mut skinning = RasterMap::new(w, h, bones, Semantic::Skinning)?;
    let mut label = RasterMap::new(w, h, 1, Semantic::Label)?;
    for (y, row) in rows.into_iter().enumerate() {
        for (x, px) in row.into_iter().enumerate() {
            let Some((d, n, wts, l)) = px else { continue };
            silhouette.set(x, y, 0, 1.0);
            depth.set(x, y, 0, d);
            normal.pixel_mut(x, y).copy_from_slice(&n);
            for (o, v) in skinning.pixel_mut(x, y).iter_mut().zip(&wts) {
                *o = *v as f32;
            }
            label.set(x, y, 0, l as f32);
        }
    }
    if silhouette.count_set() == 0 {
        return Err(Error::InvalidInput(
            "template projects to an empty silhouette".into(),
        ));
    }
    Ok(TemplateRender {
        view,
        camera: *camera,
        silhouette,
        depth,
        normal,
        skinning,
        label,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RenderManifest {
    view: View,
    camera: Camera,
    maps: std::collections::BTreeMap<String, String>,
    labels: serde_json::Value,
}

impl TemplateRender {
    /// Writes every map as `.fmap` plus `manifest.json` and `labels.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut maps = std::collections::BTreeMap::new();
        for (name, map) in self.maps() {
            let file = format!("{name}.fmap");
            map.save_fmap(dir.join(&file))?;
            maps.insert(name.to_string(), file);
        }
        let manifest = RenderManifest {
            view: self.view,
            camera: self.camera,
            maps,
            labels: label_legend(),
        };
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        std::fs::write(
            dir.join("labels.json"),
            serde_json::to_string_pretty(&label_legend())?,
        )?;
        Ok(())
    }

    /// Loads a map set written by [`TemplateRender::save`] or produced
    /// externally in the same layout.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: RenderManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let get = |name: &str| -> Result<RasterMap> {
            let file = manifest
                .maps
                .get(name)
                .ok_or_else(|| Error::Format(format!("manifest lacks map {name}")))?;
            RasterMap::load_fmap(dir.join(file))
        };
        let r = Self {
            view: manifest.view,
            camera: manifest.camera,
            silhouette: get("silhouette")?,
            depth: get("depth")?,
            normal: get("normal")?,
            skinning: get("skinning")?,
            label: get("label")?,
        };
        let shapes_agree = r
            .maps()
            .iter()
            .all(|(_, m)| m.width() == r.camera.width && m.height() == r.camera.height);
        if !shapes_agree {
            return Err(Error::Format(
                "render maps disagree with the camera size".into(),
            ));
        }
        Ok(r)
    }

    fn maps(&self) -> [(&'static str, &RasterMap); 5] {
        [
            ("silhouette", &self.silhouette),
            ("depth", &self.depth),
            ("normal", &self.normal),
            ("skinning", &self.skinning),
            ("label", &self.label),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::mask_iou;

    fn sphere_body() -> TemplateBody {
        let skeleton = Skeleton::new(vec![Joint {
            name: "root".into(),
            parent: None,
            rest_rotation: [1.0, 0.0, 0.0, 0.0],
            rest_translation: [0.0; 3],
        }])
        .unwrap();
        TemplateBody {
            skeleton,
            primitives: vec![Primitive {
                part: Part::Torso,
                bone: 0,
                shape: Shape::Ellipsoid {
                    center: [0.0; 3],
                    radii: [1.0; 3],
                },
            }],
            scale: 1.0,
        }
    }

    #[test]
    fn unit_sphere_renders_a_disc() {
        let cam = Camera {
            width: 65,
            height: 65,
            focal: 500.0,
            distance: 20.0,
        };
        let r = render_template(&sphere_body(), &Pose::rest(1), &cam, View::Front, None).unwrap();
        let n = r.normal.pixel(32, 32);
        assert!((n[0]).abs() < 1e-3 && (n[1]).abs() < 1e-3 && (n[2] - 1.0).abs() < 1e-3);
        // radius ~ f / sqrt(d^2 - 1) = 25.03 px
        let area = r.silhouette.count_set() as f64;
        let expect = std::f64::consts::PI * (500.0f64 / (400.0f64 - 1.0).sqrt()).powi(2);
        assert!((area - expect).abs() / expect < 0.03, "{area} vs {expect}");
        assert!((r.depth.get(32, 32, 0) - 25.0).abs() < 1e-3);
        let w: f32 = r.skinning.pixel(32, 32).iter().sum();
        assert!((w - 1.0).abs() < 1e-6);
    }

    #[test]
    fn default_body_labels_and_sides() {
        let body = TemplateBody::default_body();
        let cam = Camera::default();
        let r = render_template(&body, &Pose::rest(19), &cam, View::Front, None).unwrap();
        let mut seen = [0usize; PART_COUNT];
        let mut left_x = 0.0;
        let mut right_x = 0.0;
        for y in 0..256 {
            for x in 0..256 {
                if r.silhouette.is_set(x, y) {
                    let l = r.label.label_at(x, y) as usize;
                    seen[l] += 1;
                    if l == Part::LeftHand.id() {
                        left_x += x as f64;
                    }
                    if l == Part::RightHand.id() {
                        right_x += x as f64;
                    }
                    let s: f32 = r.skinning.pixel(x, y).iter().sum();
                    assert!((s - 1.0).abs() < 1e-5);
                }
            }
        }
        assert!(seen.iter().all(|&c| c > 0), "{seen:?}");
        assert!(left_x / seen[Part::LeftHand.id()] as f64 > 128.0);
        assert!(right_x / seen[Part::RightHand.id()] as f64 > 0.0);
        assert!(right_x / (seen[Part::RightHand.id()] as f64) < 128.0);
    }

    #[test]
    fn back_view_mirrors_front() {
        let body = TemplateBody::default_body();
        let cam = Camera::default();
        let pose = Pose::rest(19);
        let f = render_template(&body, &pose, &cam, View::Front, None).unwrap();
        let b = render_template(&body, &pose, &cam, View::Back, None).unwrap();
        assert!(mask_iou(&b.silhouette.mirrored(), &f.silhouette) >= 0.99);
        // the back height at a torso pixel is the distance behind the body plane
        let (x, y) = (128, 110);
        assert!(f.depth.get(x, y, 0) > 0.0 && b.depth.get(x, y, 0) > 0.0);
    }

    #[test]
    fn back_projection_inverts_rendering() {
        let cam = Camera::default();
        for view in [View::Front, View::Back] {
            let p = Point3::new(0.31, -0.42, 0.07);
            let (u, v) = cam.project(view, &p);
            let h = match view {
                View::Front => cam.scale() * p.z,
                View::Back => -cam.scale() * p.z,
            };
            assert!((cam.back_project(view, u, v, h) - p).norm() < 1e-12);
        }
    }

    #[test]
    fn render_is_deterministic_and_round_trips() {
        let body = TemplateBody::default_body();
        let cam = Camera::square(96);
        let a = render_template(&body, &Pose::rest(19), &cam, View::Front, None).unwrap();
        let b = render_template(&body, &Pose::rest(19), &cam, View::Front, None).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        assert_eq!(TemplateRender::load(dir.path()).unwrap(), a);
        let json = serde_json::to_string(&body).unwrap();
        assert_eq!(TemplateBody::from_json(&json).unwrap(), body);
    }

    #[test]
    fn part_filter_and_empty_projection() {
        let body = TemplateBody::default_body();
        let cam = Camera::default();
        let arm = render_template(
            &body,
            &Pose::rest(19),
            &cam,
            View::Front,
            Some(&Part::LEFT_ARM),
        )
        .unwrap();
        for y in 0..256 {
            for x in 0..256 {
                if arm.silhouette.is_set(x, y) {
                    assert!(Part::from_id(arm.label.label_at(x, y) as usize)
                        .unwrap()
                        .is_arm());
                }
            }
        }
        assert!(render_template(&body, &Pose::rest(19), &cam, View::Front, Some(&[])).is_err());
    }
}
