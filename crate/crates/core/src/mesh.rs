//! Triangle meshes from front/back height maps: grid meshing, seam
//! stitching, seam smoothing, silhouette rasterization and skinning.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{RasterMap, Semantic};
use crate::skeleton::{lbs, Pose, Skeleton};
use crate::template::{Camera, View};

pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Front,
    Back,
}

impl Side {
    pub fn view(self) -> View {
        match self {
            Side::Front => View::Front,
            Side::Back => View::Back,
        }
    }
}

/// Where a vertex came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexKind {
    Front,
    Back,
    /// Front and back boundary vertices merged.
    Seam,
    /// Midpoint inserted on an interior edge joining two seam vertices.
    FrontSplit,
    BackSplit,
}

impl VertexKind {
    pub fn side(self) -> Side {
        match self {
            VertexKind::Back | VertexKind::BackSplit => Side::Back,
            _ => Side::Front,
        }
    }
}

/// One side of a surface. Pixels are in the front image frame for both
/// sides.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenMesh {
    pub side: Side,
    pub width: usize,
    pub height: usize,
    pub vertices: Vec<Point3<f64>>,
    /// Source pixel of each vertex; `None` for inserted midpoints.
    pub pixels: Vec<Option<[u32; 2]>>,
    pub triangles: Vec<[u32; 3]>,
    /// Row-major `vertices.len() x bones`.
    pub weights: Vec<f64>,
    pub bones: usize,
    pub camera: Camera,
}

/// One vertex per mask pixel at height `h` (toward the side's viewer),
/// two triangles per fully covered 2x2 block. Back maps are given in the
/// front image frame. Front triangles face the front camera, back
/// triangles face away from it.
pub fn mesh_from_depth(
    height: &RasterMap,
    skinning: &RasterMap,
    mask: &RasterMap,
    side: Side,
    camera: &Camera,
) -> Result<OpenMesh> {
    let (w, h) = (mask.width(), mask.height());
    if height.width() != w
        || height.height() != h
        || skinning.width() != w
        || skinning.height() != h
    {
        return Err(Error::InvalidInput(
            "height, skinning and mask sizes differ".into(),
        ));
    }
    if camera.width != w || camera.height != h {
        return Err(Error::InvalidInput(
            "camera does not match the map size".into(),
        ));
    }
    let count = mask.count_set();
    if count < 3 {
        return Err(Error::InvalidInput(format!(
            "mesh needs at least 3 foreground pixels, got {count}"
        )));
    }
    let bones = skinning.channels();
    let mut index = vec![u32::MAX; w * h];
    let mut vertices = Vec::with_capacity(count);
    let mut pixels = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count * bones);
    for y in 0..h {
        for x in 0..w {
            if !mask.is_set(x, y) {
                continue;
            }
            index[y * w + x] = vertices.len() as u32;
            let hv = height.get(x, y, 0) as f64;
            let u = match side {
                Side::Front => x as f64,
                Side::Back => (w - 1 - x) as f64,
            };
            vertices.push(camera.back_project(side.view(), u, y as f64, hv));
            pixels.push(Some([x as u32, y as u32]));
            let px = skinning.pixel(x, y);
            let sum: f64 = px.iter().map(|&v| v.max(0.0) as f64).sum();
            if sum > 0.0 {
                weights.extend(px.iter().map(|&v| v.max(0.0) as f64 / sum));
            } else {
                weights.extend((0..bones).map(|b| if b == 0 { 1.0 } else { 0.0 }));
            }
        }
    }
    let mut triangles = Vec::new();
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            let (a, b, c, d) = (
                index[y * w + x],
                index[y * w + x + 1],
                index[(y + 1) * w + x],
                index[(y + 1) * w + x + 1],
            );
            if [a, b, c, d].contains(&u32::MAX) {
                continue;
            }
            match side {
                Side::Front => {
                    triangles.push([a, c, d]);
                    triangles.push([a, d, b]);
                }
                Side::Back => {
                    triangles.push([a, d, c]);
                    triangles.push([a, b, d]);
                }
            }
        }
    }
    Ok(OpenMesh {
        side,
        width: w,
        height: h,
        vertices,
        pixels,
        triangles,
        weights,
        bones,
        camera: *camera,
    })
}

fn edge_key(a: u32, b: u32) -> (u32, u32) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Number of triangles using each undirected edge.
pub fn edge_use(triangles: &[[u32; 3]]) -> HashMap<(u32, u32), u32> {
    let mut m = HashMap::with_capacity(triangles.len() * 2);
    for t in triangles {
        for k in 0..3 {
            *m.entry(edge_key(t[k], t[(k + 1) % 3])).or_insert(0) += 1;
        }
    }
    m
}

/// Every edge is used by exactly two triangles.
pub fn is_closed(triangles: &[[u32; 3]]) -> bool {
    !triangles.is_empty() && edge_use(triangles).values().all(|&c| c == 2)
}

/// Each directed edge occurs once and its reverse once.
pub fn is_consistently_oriented(triangles: &[[u32; 3]]) -> bool {
    let mut dir: HashMap<(u32, u32), u32> = HashMap::new();
    for t in triangles {
        for k in 0..3 {
            *dir.entry((t[k], t[(k + 1) % 3])).or_insert(0) += 1;
        }
    }
    dir.iter()
        .all(|(&(a, b), &c)| c == 1 && dir.get(&(b, a)) == Some(&1))
}

/// `V - E + F` over the vertices referenced by `triangles`.
pub fn euler_characteristic(triangles: &[[u32; 3]]) -> i64 {
    let mut verts: Vec<u32> = triangles.iter().flatten().copied().collect();
    verts.sort_unstable();
    verts.dedup();
    verts.len() as i64 - edge_use(triangles).len() as i64 + triangles.len() as i64
}

pub fn triangle_area(v: &[Point3<f64>], t: &[u32; 3]) -> f64 {
    let (a, b, c) = (v[t[0] as usize], v[t[1] as usize], v[t[2] as usize]);
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Signed volume enclosed by a closed, outward-oriented surface.
pub fn signed_volume(v: &[Point3<f64>], triangles: &[[u32; 3]]) -> f64 {
    triangles
        .iter()
        .map(|t| {
            let (a, b, c) = (
                v[t[0] as usize].coords,
                v[t[1] as usize].coords,
                v[t[2] as usize].coords,
            );
            a.dot(&b.cross(&c)) / 6.0
        })
        .sum()
}

impl OpenMesh {
    /// Pixels of vertices lying on an edge used by one triangle.
    pub fn boundary_pixels(&self) -> BTreeMap<[u32; 2], u32> {
        let mut out = BTreeMap::new();
        for (&(a, b), &c) in &edge_use(&self.triangles) {
            if c == 1 {
                for v in [a, b] {
                    if let Some(p) = self.pixels[v as usize] {
                        out.insert(p, v);
                    }
                }
            }
        }
        out
    }

    fn push_midpoint(&mut self, a: u32, b: u32) -> u32 {
        let (a, b) = (a as usize, b as usize);
        let m = self.vertices.len();
        self.vertices.push(Point3::from(
            (self.vertices[a].coords + self.vertices[b].coords) * 0.5,
        ));
        self.pixels.push(None);
        let bones = self.bones;
        for k in 0..bones {
            let v = 0.5 * (self.weights[a * bones + k] + self.weights[b * bones + k]);
            self.weights.push(v);
        }
        m as u32
    }

    /// Splits every interior edge whose endpoints both lie on the boundary.
    /// After the split no interior edge joins two boundary vertices.
    fn split_chords(&mut self, boundary: &[bool]) -> usize {
        let uses = edge_use(&self.triangles);
        let mut chords: Vec<(u32, u32)> = uses
            .iter()
            .filter(|(&(a, b), &c)| c == 2 && boundary[a as usize] && boundary[b as usize])
            .map(|(&e, _)| e)
            .collect();
        chords.sort_unstable();
        for &(a, b) in &chords {
            let m = self.push_midpoint(a, b);
            let mut added = Vec::new();
            for t in self.triangles.iter_mut() {
                for k in 0..3 {
                    let (p, q, r) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
                    if edge_key(p, q) == (a, b) {
                        *t = [p, m, r];
                        added.push([m, q, r]);
                        break;
                    }
                }
            }
            self.triangles.extend(added);
        }
        chords.len()
    }
}

/// Closed surface assembled from stitched sides.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub width: usize,
    pub height: usize,
    pub vertices: Vec<Point3<f64>>,
    pub kinds: Vec<VertexKind>,
    pub pixels: Vec<Option<[u32; 2]>>,
    pub triangles: Vec<[u32; 3]>,
    pub triangle_sides: Vec<Side>,
    pub weights: Vec<f64>,
    pub bones: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct StitchReport {
    pub seam_vertices: usize,
    pub chords_split: usize,
    pub max_seam_gap: f64,
}

/// Merges the boundary vertices of `front` and `back` by pixel identity.
/// A merged vertex takes the mean depth of the two and sits on the front
/// camera ray of its pixel; its weights are the renormalized mean. Interior edges joining two boundary
/// vertices are split first. Unreferenced vertices are dropped.
pub fn stitch(front: &OpenMesh, back: &OpenMesh) -> Result<(Surface, StitchReport)> {
    if front.side != Side::Front || back.side != Side::Back {
        return Err(Error::InvalidInput(
            "stitch expects a front and a back mesh".into(),
        ));
    }
    if front.bones != back.bones || front.width != back.width || front.height != back.height {
        return Err(Error::InvalidInput(
            "front and back meshes differ in size or bone count".into(),
        ));
    }
    let fb = front.boundary_pixels();
    let bb = back.boundary_pixels();
    let diff = fb.keys().filter(|p| !bb.contains_key(*p)).count()
        + bb.keys().filter(|p| !fb.contains_key(*p)).count();
    if diff > 0 {
        return Err(Error::InvalidInput(format!(
            "front and back boundaries differ in {diff} pixels"
        )));
    }
    if fb.is_empty() {
        return Err(Error::Degenerate("meshes have no boundary".into()));
    }
    let mut front = front.clone();
    let mut back = back.clone();
    let mut fmark = vec![false; front.vertices.len()];
    fb.values().for_each(|&v| fmark[v as usize] = true);
    let mut bmark = vec![false; back.vertices.len()];
    bb.values().for_each(|&v| bmark[v as usize] = true);
    let mut report = StitchReport {
        seam_vertices: fb.len(),
        ..Default::default()
    };
    report.chords_split = front.split_chords(&fmark) + back.split_chords(&bmark);

    let bones = front.bones;
    let mut vertices = Vec::new();
    let mut kinds = Vec::new();
    let mut pixels = Vec::new();
    let mut weights = Vec::new();
    let mut fmap = vec![u32::MAX; front.vertices.len()];
    let mut used = vec![false; front.vertices.len()];
    front
        .triangles
        .iter()
        .flatten()
        .for_each(|&v| used[v as usize] = true);
    for i in 0..front.vertices.len() {
        if !used[i] {
            continue;
        }
        fmap[i] = vertices.len() as u32;
        let seam = i < fmark.len() && fmark[i];
        let kind = match (seam, front.pixels[i].is_some()) {
            (true, _) => VertexKind::Seam,
            (false, true) => VertexKind::Front,
            (false, false) => VertexKind::FrontSplit,
        };
        vertices.push(front.vertices[i]);
        kinds.push(kind);
        pixels.push(front.pixels[i]);
        weights.extend_from_slice(&front.weights[i * bones..(i + 1) * bones]);
    }
    let mut bmap = vec![u32::MAX; back.vertices.len()];
    let mut bused = vec![false; back.vertices.len()];
    back.triangles
        .iter()
        .flatten()
        .for_each(|&v| bused[v as usize] = true);
    for i in 0..back.vertices.len() {
        if !bused[i] {
            continue;
        }
        if i < bmark.len() && bmark[i] {
            let p = back.pixels[i].unwrap();
            let fi = fb[&p] as usize;
            let t = fmap[fi] as usize;
            report.max_seam_gap = report
                .max_seam_gap
                .max((vertices[t] - back.vertices[i]).norm());
            let z = 0.5 * (vertices[t].z + back.vertices[i].z);
            let cam = &front.camera;
            vertices[t] = cam.back_project(View::Front, p[0] as f64, p[1] as f64, z * cam.scale());
            let row = &mut weights[t * bones..(t + 1) * bones];
            for (k, w) in row.iter_mut().enumerate() {
                *w = 0.5 * (*w + back.weights[i * bones + k]);
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|w| *w /= s);
            bmap[i] = t as u32;
        } else {
            bmap[i] = vertices.len() as u32;
            vertices.push(back.vertices[i]);
            kinds.push(if back.pixels[i].is_some() {
                VertexKind::Back
            } else {
                VertexKind::BackSplit
            });
            pixels.push(back.pixels[i]);
            weights.extend_from_slice(&back.weights[i * bones..(i + 1) * bones]);
        }
    }
    let mut triangles: Vec<[u32; 3]> = front
        .triangles
        .iter()
        .map(|t| t.map(|v| fmap[v as usize]))
        .collect();
    let mut triangle_sides = vec![Side::Front; triangles.len()];
    triangles.extend(back.triangles.iter().map(|t| t.map(|v| bmap[v as usize])));
    triangle_sides.resize(triangles.len(), Side::Back);
    let surface = Surface {
        width: front.width,
        height: front.height,
        vertices,
        kinds,
        pixels,
        triangles,
        triangle_sides,
        weights,
        bones,
    };
    Ok((surface, report))
}

impl Surface {
    pub fn is_closed(&self) -> bool {
        is_closed(&self.triangles)
    }

    /// Appends `other` as a separate connected component.
    pub fn append(&mut self, other: &Surface) -> Result<()> {
        if other.bones != self.bones {
            return Err(Error::InvalidInput("bone counts differ".into()));
        }
        let off = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.kinds.extend_from_slice(&other.kinds);
        self.pixels.extend_from_slice(&other.pixels);
        self.weights.extend_from_slice(&other.weights);
        self.triangles
            .extend(other.triangles.iter().map(|t| t.map(|v| v + off)));
        self.triangle_sides.extend_from_slice(&other.triangle_sides);
        Ok(())
    }

    /// Vertices within `rings` edges of a seam vertex.
    pub fn seam_neighborhood(&self, rings: usize) -> Vec<bool> {
        let adj = adjacency(self.vertices.len(), &self.triangles);
        let mut mark: Vec<bool> = self.kinds.iter().map(|&k| k == VertexKind::Seam).collect();
        for _ in 0..rings {
            let prev = mark.clone();
            for (v, nbrs) in adj.iter().enumerate() {
                if !prev[v] && nbrs.iter().any(|&n| prev[n as usize]) {
                    mark[v] = true;
                }
            }
        }
        mark
    }

    /// Unit ray directions from the camera that sees each vertex: the
    /// front camera for front and seam vertices, the back camera otherwise.
    pub fn view_rays(&self, camera: &Camera) -> Vec<Vector3<f64>> {
        let front = Point3::new(0.0, 0.0, camera.distance);
        let back = Point3::new(0.0, 0.0, -camera.distance);
        self.vertices
            .iter()
            .zip(&self.kinds)
            .map(|(v, k)| match k.side() {
                Side::Front => (v - front).normalize(),
                Side::Back => (v - back).normalize(),
            })
            .collect()
    }
}

/// Sorted neighbor lists.
pub fn adjacency(n: usize, triangles: &[[u32; 3]]) -> Vec<Vec<u32>> {
    let mut adj = vec![Vec::new(); n];
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            adj[a as usize].push(b);
            adj[b as usize].push(a);
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    adj
}

/// Uniform Laplacian steps `v += step * (mean(neighbors) - v)` on the
/// `active` vertices. With `rays`, each displacement is projected onto the
/// vertex's ray so its image position is kept.
pub fn laplacian_smooth(
    vertices: &[Point3<f64>],
    triangles: &[[u32; 3]],
    active: &[bool],
    iterations: usize,
    step: f64,
    rays: Option<&[Vector3<f64>]>,
) -> Vec<Point3<f64>> {
    let mut v = vertices.to_vec();
    if step == 0.0 || iterations == 0 {
        return v;
    }
    let adj = adjacency(v.len(), triangles);
    for _ in 0..iterations {
        let next: Vec<Point3<f64>> = (0..v.len())
            .into_par_iter()
            .map(|i| {
                if !active[i] || adj[i].is_empty() {
                    return v[i];
                }
                let mean = adj[i]
                    .iter()
                    .map(|&j| v[j as usize].coords)
                    .sum::<Vector3<f64>>()
                    / adj[i].len() as f64;
                let mut d = (mean - v[i].coords) * step;
                if let Some(r) = rays {
                    d = r[i] * r[i].dot(&d);
                }
                v[i] + d
            })
            .collect();
        v = next;
    }
    v
}

/// Vertices on edges used by a single triangle.
pub fn open_boundary(n: usize, triangles: &[[u32; 3]]) -> Vec<bool> {
    let mut b = vec![false; n];
    for (&(x, y), &c) in &edge_use(triangles) {
        if c == 1 {
            b[x as usize] = true;
            b[y as usize] = true;
        }
    }
    b
}

/// Pixel centers covered by the projected triangles, edges inclusive.
pub fn rasterize_mesh(
    vertices: &[Point3<f64>],
    triangles: &[[u32; 3]],
    camera: &Camera,
    view: View,
) -> RasterMap {
    let (w, h) = (camera.width, camera.height);
    let proj: Vec<(f64, f64)> = vertices.iter().map(|p| camera.project(view, p)).collect();
    let mut mask = RasterMap::mask(w, h);
    const EPS: f64 = 1e-9;
    for t in triangles {
        let [a, b, c] = t.map(|i| proj[i as usize]);
        let area = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
        if area.abs() < 1e-15 {
            continue;
        }
        let x0 = a.0.min(b.0).min(c.0).ceil().max(0.0) as i64;
        let x1 = a.0.max(b.0).max(c.0).floor().min(w as f64 - 1.0) as i64;
        let y0 = a.1.min(b.1).min(c.1).ceil().max(0.0) as i64;
        let y1 = a.1.max(b.1).max(c.1).floor().min(h as f64 - 1.0) as i64;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (px, py) = (x as f64, y as f64);
                let e = |p: (f64, f64), q: (f64, f64)| {
                    ((q.0 - p.0) * (py - p.1) - (q.1 - p.1) * (px - p.0)) / area
                };
                if e(a, b) >= -EPS && e(b, c) >= -EPS && e(c, a) >= -EPS {
                    mask.data_mut()[y as usize * w + x as usize] = 1.0;
                }
            }
        }
    }
    mask
}

/// Closed, skinned and textured surface.
#[derive(Debug, Clone)]
pub struct RiggedMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub triangle_sides: Vec<Side>,
    pub kinds: Vec<VertexKind>,
    /// Row-major `vertices.len() x skeleton.len()`, rows sum to one.
    pub weights: Vec<f64>,
    /// Atlas coordinates: front tile for front and seam vertices, back tile
    /// for back vertices, hidden tile after [`RiggedMesh::use_hidden_tile`].
    pub uvs: Vec<[f64; 2]>,
    /// Back-tile coordinates of every vertex, used by back triangles.
    pub back_uvs: Vec<[f64; 2]>,
    pub skeleton: Skeleton,
    /// `ATLAS_TILES * W x H` RGB atlas.
    pub texture: Option<RasterMap>,
    /// Pixel position of each vertex in the front frame.
    pub pixels: Vec<[f64; 2]>,
    pub width: usize,
    pub height: usize,
}

/// Atlas tiles, left to right: front, back, hidden front.
pub const ATLAS_TILES: usize = 3;
pub const FRONT_TILE: usize = 0;
pub const BACK_TILE: usize = 1;
pub const HIDDEN_TILE: usize = 2;

/// Atlas coordinate of front-frame pixel `p` in `tile`; the back tile is
/// indexed in the back view's frame.
pub fn atlas_uv(tile: usize, p: [f64; 2], width: usize, height: usize) -> [f64; 2] {
    let (w, h) = (width as f64, height as f64);
    let x = if tile == BACK_TILE {
        w - 1.0 - p[0]
    } else {
        p[0]
    };
    [
        (tile as f64 * w + x + 0.5) / (ATLAS_TILES as f64 * w),
        (p[1] + 0.5) / h,
    ]
}

impl RiggedMesh {
    pub fn new(surface: Surface, skeleton: Skeleton) -> Result<Self> {
        if surface.bones != skeleton.len() {
            return Err(Error::InvalidInput(format!(
                "surface has {} weight channels, skeleton {} joints",
                surface.bones,
                skeleton.len()
            )));
        }
        let (w, h) = (surface.width, surface.height);
        let pixel_of = |i: usize| -> [f64; 2] {
            if let Some(p) = surface.pixels[i] {
                return [p[0] as f64, p[1] as f64];
            }
            // midpoints: average of pixel neighbors
            let mut acc = [0.0, 0.0];
            let mut n = 0.0;
            for t in surface.triangles.iter().filter(|t| t.contains(&(i as u32))) {
                for &v in t {
                    if let Some(p) = surface.pixels[v as usize] {
                        acc[0] += p[0] as f64;
                        acc[1] += p[1] as f64;
                        n += 1.0;
                    }
                }
            }
            if n > 0.0 {
                [acc[0] / n, acc[1] / n]
            } else {
                [0.0, 0.0]
            }
        };
        let pix: Vec<[f64; 2]> = (0..surface.vertices.len()).map(pixel_of).collect();
        let uvs = pix
            .iter()
            .zip(&surface.kinds)
            .map(|(&p, k)| {
                atlas_uv(
                    if k.side() == Side::Back {
                        BACK_TILE
                    } else {
                        FRONT_TILE
                    },
                    p,
                    w,
                    h,
                )
            })
            .collect();
        let back_uvs = pix.iter().map(|&p| atlas_uv(BACK_TILE, p, w, h)).collect();
        let mesh = Self {
            vertices: surface.vertices,
            triangles: surface.triangles,
            triangle_sides: surface.triangle_sides,
            kinds: surface.kinds,
            weights: surface.weights,
            uvs,
            back_uvs,
            skeleton,
            texture: None,
            pixels: pix,
            width: w,
            height: h,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Points the front coordinates of the marked non-back vertices at the
    /// hidden tile.
    pub fn use_hidden_tile(&mut self, marked: &[bool]) {
        for (i, &m) in marked.iter().enumerate() {
            if m && self.kinds[i].side() == Side::Front {
                self.uvs[i] = atlas_uv(HIDDEN_TILE, self.pixels[i], self.width, self.height);
            }
        }
    }

    pub fn bones(&self) -> usize {
        self.skeleton.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        let b = self.bones();
        if self.weights.len() != self.vertices.len() * b {
            return Err(Error::Degenerate("weight table size mismatch".into()));
        }
        if self.triangles.iter().flatten().any(|&v| v >= n) {
            return Err(Error::Degenerate("triangle index out of range".into()));
        }
        for (i, row) in self.weights.chunks(b).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-5 || row.iter().any(|&w| w < 0.0) {
                return Err(Error::Degenerate(format!("vertex {i} weights sum to {s}")));
            }
        }
        if let Some(t) = self
            .triangles
            .iter()
            .find(|t| triangle_area(&self.vertices, t) <= MIN_TRIANGLE_AREA)
        {
            return Err(Error::Degenerate(format!("degenerate triangle {t:?}")));
        }
        Ok(())
    }

    pub fn is_closed(&self) -> bool {
        is_closed(&self.triangles)
    }

    /// Linear blend skinning of the rest vertices.
    pub fn posed_vertices(&self, pose: &Pose) -> Result<Vec<Point3<f64>>> {
        lbs(&self.vertices, &self.weights, &self.skeleton, pose)
    }

    /// Connected components of the triangle graph, as a per-vertex id.
    pub fn components(&self) -> (Vec<u32>, usize) {
        let adj = adjacency(self.vertices.len(), &self.triangles);
        let mut comp = vec![u32::MAX; self.vertices.len()];
        let mut count = 0;
        for s in 0..self.vertices.len() {
            if comp[s] != u32::MAX {
                continue;
            }
            let mut stack = vec![s];
            comp[s] = count;
            while let Some(v) = stack.pop() {
                for &u in &adj[v] {
                    if comp[u as usize] == u32::MAX {
                        comp[u as usize] = count;
                        stack.push(u as usize);
                    }
                }
            }
            count += 1;
        }
        (comp, count as usize)
    }
}

/// A weight map with every pixel fully bound to `bone`.
pub fn constant_skinning(
    width: usize,
    height: usize,
    bones: usize,
    bone: usize,
) -> Result<RasterMap> {
    let mut m = RasterMap::new(width, height, bones, Semantic::Skinning)?;
    let mut px = vec![0.0; bones];
    px[bone] = 1.0;
    m.fill(&px);
    Ok(m)
}
