//! Mesh serialization: lossless JSON dump and glTF 2.0 with skin, texture
//! and optional animation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::mesh::{RiggedMesh, Side, VertexKind};
use crate::skeleton::{Clip, Pose, Skeleton};

/// Influences kept per vertex in glTF.
pub const GLTF_INFLUENCES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshDump {
    pub width: usize,
    pub height: usize,
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
    pub triangle_sides: Vec<Side>,
    pub kinds: Vec<VertexKind>,
    pub pixels: Vec<[f64; 2]>,
    pub weights: Vec<Vec<f64>>,
    pub uvs: Vec<[f64; 2]>,
    pub back_uvs: Vec<[f64; 2]>,
    pub skeleton: Skeleton,
}

impl From<&RiggedMesh> for MeshDump {
    fn from(m: &RiggedMesh) -> Self {
        Self {
            width: m.width,
            height: m.height,
            vertices: m.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
            triangles: m.triangles.clone(),
            triangle_sides: m.triangle_sides.clone(),
            kinds: m.kinds.clone(),
            pixels: m.pixels.clone(),
            weights: m.weights.chunks(m.bones()).map(<[f64]>::to_vec).collect(),
            uvs: m.uvs.clone(),
            back_uvs: m.back_uvs.clone(),
            skeleton: m.skeleton.clone(),
        }
    }
}

impl MeshDump {
    pub fn into_mesh(self) -> Result<RiggedMesh> {
        let n = self.vertices.len();
        let b = self.skeleton.len();
        if [
            self.kinds.len(),
            self.pixels.len(),
            self.weights.len(),
            self.uvs.len(),
            self.back_uvs.len(),
        ]
        .iter()
        .any(|&l| l != n)
            || self.triangle_sides.len() != self.triangles.len()
            || self.weights.iter().any(|r| r.len() != b)
        {
            return Err(Error::Format("mesh dump arrays disagree in length".into()));
        }
        let mesh = RiggedMesh {
            vertices: self
                .vertices
                .iter()
                .map(|v| Point3::new(v[0], v[1], v[2]))
                .collect(),
            triangles: self.triangles,
            triangle_sides: self.triangle_sides,
            kinds: self.kinds,
            weights: self.weights.concat(),
            uvs: self.uvs,
            back_uvs: self.back_uvs,
            skeleton: self.skeleton,
            texture: None,
            pixels: self.pixels,
            width: self.width,
            height: self.height,
        };
        mesh.validate()?;
        Ok(mesh)
    }
}

/// Deterministic pretty JSON; floats round-trip exactly.
pub fn mesh_to_json(mesh: &RiggedMesh) -> Result<String> {
    Ok(serde_json::to_string_pretty(&MeshDump::from(mesh))?)
}

pub fn mesh_from_json(text: &str) -> Result<RiggedMesh> {
    serde_json::from_str::<MeshDump>(text)?.into_mesh()
}

/// Per-frame posed vertex positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDump {
    pub frame: usize,
    pub time: f64,
    pub vertices: Vec<[f64; 3]>,
}

struct Bin {
    data: Vec<u8>,
    views: Vec<Value>,
    accessors: Vec<Value>,
}

impl Bin {
    fn push(&mut self, bytes: Vec<u8>, target: Option<u32>) -> usize {
        while self.data.len() % 4 != 0 {
            self.data.push(0);
        }
        let mut view =
            json!({ "buffer": 0, "byteOffset": self.data.len(), "byteLength": bytes.len() });
        if let Some(t) = target {
            view["target"] = json!(t);
        }
        self.data.extend(bytes);
        self.views.push(view);
        self.views.len() - 1
    }

    fn accessor(
        &mut self,
        bytes: Vec<u8>,
        target: Option<u32>,
        component: u32,
        count: usize,
        kind: &str,
        extra: Value,
    ) -> usize {
        let view = self.push(bytes, target);
        let mut a =
            json!({ "bufferView": view, "componentType": component, "count": count, "type": kind });
        if let (Value::Object(a), Value::Object(e)) = (&mut a, extra) {
            a.extend(e);
        }
        self.accessors.push(a);
        self.accessors.len() - 1
    }
}

const FLOAT: u32 = 5126;
const U16: u32 = 5123;
const U32: u32 = 5125;
const ARRAY_BUFFER: u32 = 34962;
const ELEMENT_ARRAY_BUFFER: u32 = 34963;

fn f32s(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values
        .into_iter()
        .flat_map(|v| (v as f32).to_le_bytes())
        .collect()
}

fn area_normals(v: &[Point3<f64>], tris: &[[u32; 3]]) -> Vec<Vector3<f64>> {
    let mut n = vec![Vector3::zeros(); v.len()];
    for t in tris {
        let [a, b, c] = t.map(|i| v[i as usize]);
        let f = (b - a).cross(&(c - a));
        for &i in t {
            n[i as usize] += f;
        }
    }
    n.into_iter()
        .map(|x| x.try_normalize(1e-300).unwrap_or(Vector3::z()))
        .collect()
}

/// Largest `k` weights of a row, renormalized, with their bone indices.
pub fn top_influences(row: &[f64], k: usize) -> (Vec<u16>, Vec<f64>) {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    let s: f64 = idx.iter().map(|&i| row[i]).sum();
    let mut joints: Vec<u16> = idx.iter().map(|&i| i as u16).collect();
    let mut weights: Vec<f64> = idx
        .iter()
        .map(|&i| if s > 0.0 { row[i] / s } else { 0.0 })
        .collect();
    while joints.len() < k {
        joints.push(0);
        weights.push(0.0);
    }
    if s <= 0.0 {
        weights[0] = 1.0;
    }
    (joints, weights)
}

fn mat4(m: &Matrix4<f64>) -> Vec<f64> {
    m.as_slice().to_vec()
}

/// Writes `<stem>.gltf`, `<stem>.bin` and, with a texture, `<stem>.png`
/// into `dir`. Vertices shared by front and back triangles with different
/// atlas coordinates are duplicated. A clip adds one rotation channel per
/// joint and a root translation channel.
pub fn write_gltf(
    mesh: &RiggedMesh,
    dir: impl AsRef<Path>,
    stem: &str,
    clip: Option<&Clip>,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let skel = &mesh.skeleton;
    let bones = skel.len();
    if bones > u16::MAX as usize {
        return Err(Error::InvalidInput("too many joints for glTF".into()));
    }
    // (vertex, uv set) -> output vertex
    let mut remap: BTreeMap<(u32, bool), u32> = BTreeMap::new();
    let mut order: Vec<(u32, bool)> = Vec::new();
    let mut indices = Vec::with_capacity(mesh.triangles.len() * 3);
    for (t, side) in mesh.triangles.iter().zip(&mesh.triangle_sides) {
        for &v in t {
            let back_set = *side == Side::Back && mesh.kinds[v as usize].side() == Side::Front;
            let key = (v, back_set);
            let id = *remap.entry(key).or_insert_with(|| {
                order.push(key);
                (order.len() - 1) as u32
            });
            indices.push(id);
        }
    }
    let normals = area_normals(&mesh.vertices, &mesh.triangles);
    let mut bin = Bin {
        data: Vec::new(),
        views: Vec::new(),
        accessors: Vec::new(),
    };
    let count = order.len();
    let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
    for &(v, _) in &order {
        let p = mesh.vertices[v as usize];
        for k in 0..3 {
            lo[k] = lo[k].min(p[k] as f32 as f64);
            hi[k] = hi[k].max(p[k] as f32 as f64);
        }
    }
    let pos = bin.accessor(
        f32s(order.iter().flat_map(|&(v, _)| {
            mesh.vertices[v as usize]
                .coords
                .iter()
                .copied()
                .collect::<Vec<_>>()
        })),
        Some(ARRAY_BUFFER),
        FLOAT,
        count,
        "VEC3",
        json!({ "min": lo, "max": hi }),
    );
    let nrm = bin.accessor(
        f32s(
            order
                .iter()
                .flat_map(|&(v, _)| normals[v as usize].iter().copied().collect::<Vec<_>>()),
        ),
        Some(ARRAY_BUFFER),
        FLOAT,
        count,
        "VEC3",
        json!({}),
    );
    let uv = bin.accessor(
        f32s(order.iter().flat_map(|&(v, back)| {
            let uv = if back {
                mesh.back_uvs[v as usize]
            } else {
                mesh.uvs[v as usize]
            };
            uv.to_vec()
        })),
        Some(ARRAY_BUFFER),
        FLOAT,
        count,
        "VEC2",
        json!({}),
    );
    let mut jbytes = Vec::new();
    let mut wvals = Vec::new();
    for &(v, _) in &order {
        let row = &mesh.weights[v as usize * bones..(v as usize + 1) * bones];
        let (j, w) = top_influences(row, GLTF_INFLUENCES);
        jbytes.extend(j.iter().flat_map(|x| x.to_le_bytes()));
        wvals.extend(w);
    }
    let joints = bin.accessor(jbytes, Some(ARRAY_BUFFER), U16, count, "VEC4", json!({}));
    let weights = bin.accessor(
        f32s(wvals),
        Some(ARRAY_BUFFER),
        FLOAT,
        count,
        "VEC4",
        json!({}),
    );
    let idx = bin.accessor(
        indices.iter().flat_map(|i| i.to_le_bytes()).collect(),
        Some(ELEMENT_ARRAY_BUFFER),
        U32,
        indices.len(),
        "SCALAR",
        json!({}),
    );
    let rest = skel.rest_world();
    let ibm = bin.accessor(
        f32s(
            rest.iter()
                .flat_map(|m| mat4(&m.inverse().to_homogeneous())),
        ),
        None,
        FLOAT,
        bones,
        "MAT4",
        json!({}),
    );

    // nodes: joints first, then the mesh node
    let mut nodes: Vec<Value> = skel
        .joints()
        .iter()
        .enumerate()
        .map(|(j, joint)| {
            let [w, x, y, z] = joint.rest_rotation;
            let children: Vec<usize> = skel.children(j).collect();
            let mut n = json!({ "name": joint.name, "translation": joint.rest_translation, "rotation": [x, y, z, w] });
            if !children.is_empty() {
                n["children"] = json!(children);
            }
            n
        })
        .collect();
    nodes.push(json!({ "name": stem, "mesh": 0, "skin": 0 }));
    let mut primitive = json!({
        "attributes": { "POSITION": pos, "NORMAL": nrm, "TEXCOORD_0": uv, "JOINTS_0": joints, "WEIGHTS_0": weights },
        "indices": idx,
        "mode": 4,
    });
    let mut doc = json!({
        "asset": { "version": "2.0", "generator": "silrig" },
        "scene": 0,
        "scenes": [{ "nodes": [0, bones] }],
        "nodes": nodes,
        "meshes": [{ "name": stem, "primitives": [] }],
        "skins": [{ "joints": (0..bones).collect::<Vec<_>>(), "inverseBindMatrices": ibm, "skeleton": 0 }],
    });
    if let Some(tex) = &mesh.texture {
        let png = format!("{stem}.png");
        tex.save_png(dir.join(&png))?;
        doc["images"] = json!([{ "uri": png }]);
        doc["samplers"] =
            json!([{ "magFilter": 9729, "minFilter": 9729, "wrapS": 33071, "wrapT": 33071 }]);
        doc["textures"] = json!([{ "source": 0, "sampler": 0 }]);
        doc["materials"] = json!([{ "pbrMetallicRoughness": { "baseColorTexture": { "index": 0 }, "metallicFactor": 0.0 }, "doubleSided": false }]);
        primitive["material"] = json!(0);
    }
    doc["meshes"][0]["primitives"] = json!([primitive]);
    if let Some(clip) = clip {
        let poses: Vec<Pose> = clip.poses(skel)?;
        let times: Vec<f64> = (0..poses.len()).map(|k| k as f64 / clip.fps).collect();
        let tmax = times.last().copied().unwrap_or(0.0);
        let input = bin.accessor(
            f32s(times.iter().copied()),
            None,
            FLOAT,
            times.len(),
            "SCALAR",
            json!({ "min": [0.0], "max": [tmax] }),
        );
        let mut samplers = Vec::new();
        let mut channels = Vec::new();
        for (j, joint) in skel.joints().iter().enumerate() {
            let [w, x, y, z] = joint.rest_rotation;
            let r0 =
                nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
            let vals = poses.iter().flat_map(|p| {
                let q = r0 * p.rotations[j];
                [q.i, q.j, q.k, q.w]
            });
            let out = bin.accessor(f32s(vals), None, FLOAT, poses.len(), "VEC4", json!({}));
            samplers.push(json!({ "input": input, "output": out, "interpolation": "LINEAR" }));
            channels.push(json!({ "sampler": samplers.len() - 1, "target": { "node": j, "path": "rotation" } }));
        }
        let t0 = Vector3::from(skel.joints()[0].rest_translation);
        let vals = poses.iter().flat_map(|p| {
            let t = t0 + p.root_translation;
            [t.x, t.y, t.z]
        });
        let out = bin.accessor(f32s(vals), None, FLOAT, poses.len(), "VEC3", json!({}));
        samplers.push(json!({ "input": input, "output": out, "interpolation": "LINEAR" }));
        channels.push(json!({ "sampler": samplers.len() - 1, "target": { "node": 0, "path": "translation" } }));
        doc["animations"] = json!([{ "name": "clip", "samplers": samplers, "channels": channels }]);
    }
    let bin_name = format!("{stem}.bin");
    doc["buffers"] = json!([{ "uri": bin_name, "byteLength": bin.data.len() }]);
    doc["bufferViews"] = json!(bin.views);
    doc["accessors"] = json!(bin.accessors);
    std::fs::write(dir.join(&bin_name), &bin.data)?;
    let path = dir.join(format!("{stem}.gltf"));
    std::fs::write(&path, serde_json::to_string_pretty(&doc)?)?;
    Ok(path)
}
