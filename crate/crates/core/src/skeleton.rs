//! Joint hierarchy, poses, motion clips and linear blend skinning.

use std::collections::BTreeMap;

use nalgebra::{Isometry3, Point3, Quaternion, Translation3, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const QUAT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Local rest rotation relative to the parent, as `[w, x, y, z]`.
    pub rest_rotation: [f64; 4],
    /// Local rest offset from the parent joint.
    pub rest_translation: [f64; 3],
}

impl Joint {
    fn local_rest(&self) -> Isometry3<f64> {
        let [w, x, y, z] = self.rest_rotation;
        Isometry3::from_parts(
            Translation3::new(
                self.rest_translation[0],
                self.rest_translation[1],
                self.rest_translation[2],
            ),
            UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
        )
    }
}

/// Topologically sorted: every parent index is smaller than its child's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Joint>", into = "Vec<Joint>")]
pub struct Skeleton {
    joints: Vec<Joint>,
}

impl TryFrom<Vec<Joint>> for Skeleton {
    type Error = Error;
    fn try_from(joints: Vec<Joint>) -> Result<Self> {
        Skeleton::new(joints)
    }
}

impl From<Skeleton> for Vec<Joint> {
    fn from(s: Skeleton) -> Self {
        s.joints
    }
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::InvalidInput("skeleton has no joints".into()));
        }
        let roots = joints.iter().filter(|j| j.parent.is_none()).count();
        if roots != 1 || joints[0].parent.is_some() {
            return Err(Error::InvalidInput(
                "skeleton needs exactly one root, stored first".into(),
            ));
        }
        for (i, j) in joints.iter().enumerate() {
            if let Some(p) = j.parent {
                if p >= i {
                    return Err(Error::InvalidInput(format!(
                        "joint {} has parent {p} not before it",
                        j.name
                    )));
                }
            }
            let n: f64 = j.rest_rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > QUAT_TOL {
                return Err(Error::InvalidInput(format!(
                    "joint {} rest rotation is not unit",
                    j.name
                )));
            }
        }
        let mut names: Vec<&str> = joints.iter().map(|j| j.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("duplicate joint names".into()));
        }
        Ok(Self { joints })
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn children(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.joints.len()).filter(move |&c| self.joints[c].parent == Some(j))
    }

    pub fn rest_world(&self) -> Vec<Isometry3<f64>> {
        self.world(&Pose::rest(self.len())).expect("rest pose fits")
    }

    pub fn rest_positions(&self) -> Vec<Point3<f64>> {
        self.rest_world()
            .iter()
            .map(|m| Point3::from(m.translation.vector))
            .collect()
    }

    /// Posed world transforms: `W_j = W_parent * T(rest offset) * R(rest) * q_j`.
    pub fn world(&self, pose: &Pose) -> Result<Vec<Isometry3<f64>>> {
        pose.check(self.len())?;
        let mut out: Vec<Isometry3<f64>> = Vec::with_capacity(self.len());
        for (i, j) in self.joints.iter().enumerate() {
            let mut local = j.local_rest();
            local.rotation *= pose.rotations[i];
            let w = match j.parent {
                Some(p) => out[p] * local,
                None => {
                    local.translation.vector += pose.root_translation;
                    local
                }
            };
            out.push(w);
        }
        Ok(out)
    }

    /// Bone matrices `M_b = W_b(pose) * W_b(rest)^-1`.
    pub fn skinning_transforms(&self, pose: &Pose) -> Result<Vec<Isometry3<f64>>> {
        let rest = self.rest_world();
        Ok(self
            .world(pose)?
            .iter()
            .zip(&rest)
            .map(|(p, r)| p * r.inverse())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub rotations: Vec<UnitQuaternion<f64>>,
    pub root_translation: Vector3<f64>,
}

impl Pose {
    pub fn rest(joints: usize) -> Self {
        Self {
            rotations: vec![UnitQuaternion::identity(); joints],
            root_translation: Vector3::zeros(),
        }
    }

    fn check(&self, joints: usize) -> Result<()> {
        if self.rotations.len() != joints {
            return Err(Error::InvalidInput(format!(
                "pose has {} rotations for {joints} joints",
                self.rotations.len()
            )));
        }
        Ok(())
    }

    /// Sets joint `name` to a rotation of `angle` radians about `axis`.
    pub fn with_rotation(
        mut self,
        skel: &Skeleton,
        name: &str,
        axis: Vector3<f64>,
        angle: f64,
    ) -> Result<Self> {
        let i = skel
            .index_of(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown joint {name}")))?;
        let axis = nalgebra::Unit::try_new(axis, 1e-12)
            .ok_or_else(|| Error::InvalidInput("zero rotation axis".into()))?;
        self.rotations[i] = UnitQuaternion::from_axis_angle(&axis, angle);
        Ok(self)
    }

    /// Rotation that takes the rest direction of bone `name` (toward its
    /// first child) onto `target`, expressed locally for that joint.
    pub fn aim(mut self, skel: &Skeleton, name: &str, target: Vector3<f64>) -> Result<Self> {
        let i = skel
            .index_of(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown joint {name}")))?;
        let child = skel
            .children(i)
            .next()
            .ok_or_else(|| Error::InvalidInput(format!("joint {name} has no child")))?;
        let world = skel.world(&self)?;
        let rest_dir = world[i].rotation * Vector3::from(skel.joints()[child].rest_translation);
        let rot = UnitQuaternion::rotation_between(&rest_dir, &target)
            .ok_or_else(|| Error::Degenerate("antiparallel aim direction".into()))?;
        // world delta -> local delta
        let frame = world[i].rotation * self.rotations[i].inverse();
        self.rotations[i] = frame.inverse() * rot * frame * self.rotations[i];
        Ok(self)
    }

    pub fn to_frame(&self, skel: &Skeleton) -> PoseFrame {
        PoseFrame {
            rotations: skel
                .joints()
                .iter()
                .zip(&self.rotations)
                .map(|(j, q)| (j.name.clone(), [q.w, q.i, q.j, q.k]))
                .collect(),
            root_translation: Some(self.root_translation.into()),
        }
    }
}

/// Serialized pose: `[w, x, y, z]` per joint name; missing joints rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    pub rotations: BTreeMap<String, [f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_translation: Option<[f64; 3]>,
}

impl PoseFrame {
    pub fn to_pose(&self, skel: &Skeleton) -> Result<Pose> {
        let unknown: Vec<&str> = self
            .rotations
            .keys()
            .filter(|n| skel.index_of(n).is_none())
            .map(String::as_str)
            .collect();
        if !unknown.is_empty() {
            return Err(Error::InvalidInput(format!(
                "unknown joints: {}",
                unknown.join(", ")
            )));
        }
        let mut pose = Pose::rest(skel.len());
        for (name, &[w, x, y, z]) in &self.rotations {
            let q = Quaternion::new(w, x, y, z);
            if (q.norm() - 1.0).abs() > QUAT_TOL {
                return Err(Error::InvalidInput(format!(
                    "rotation of {name} is not a unit quaternion"
                )));
            }
            pose.rotations[skel.index_of(name).unwrap()] = UnitQuaternion::new_unchecked(q);
        }
        if let Some(t) = self.root_translation {
            pose.root_translation = Vector3::from(t);
        }
        Ok(pose)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub fps: f64,
    pub frames: Vec<PoseFrame>,
}

impl Clip {
    pub fn poses(&self, skel: &Skeleton) -> Result<Vec<Pose>> {
        if !(self.fps > 0.0) {
            return Err(Error::InvalidInput(
                "clip frame rate must be positive".into(),
            ));
        }
        self.frames.iter().map(|f| f.to_pose(skel)).collect()
    }
}

/// `v' = sum_b w_b M_b v`. `weights` is row-major, one row of `bones`
/// entries per vertex.
pub fn lbs(
    vertices: &[Point3<f64>],
    weights: &[f64],
    skel: &Skeleton,
    pose: &Pose,
) -> Result<Vec<Point3<f64>>> {
    let bones = skel.len();
    if weights.len() != vertices.len() * bones {
        return Err(Error::InvalidInput(format!(
            "{} weights for {} vertices x {bones} bones",
            weights.len(),
            vertices.len()
        )));
    }
    let m = skel.skinning_transforms(pose)?;
    Ok(vertices
        .par_iter()
        .zip(weights.par_chunks(bones))
        .map(|(v, w)| {
            let mut acc = Vector3::zeros();
            for (b, &wb) in w.iter().enumerate() {
                if wb != 0.0 {
                    acc += (m[b] * v).coords * wb;
                }
            }
            Point3::from(acc)
        })
        .collect())
}
