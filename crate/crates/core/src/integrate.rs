//! Depth from normals: least-squares integration of the gradient field
//! implied by a normal map, with the silhouette-boundary depth held fixed.

use crate::error::{Error, Result};
use crate::morph::boundary_pixels;
use crate::raster::{RasterMap, Semantic};
use crate::sparse::{pcg, CsrMatrix, SolveStats};

pub const DEFAULT_NZ_FLOOR: f64 = 0.05;
pub const CG_TOL: f64 = 1e-8;

/// Normals are in the image frame: x right, y down, z toward the viewer.
#[derive(Debug, Clone)]
pub struct IntegrationProblem {
    pub normals: RasterMap,
    /// Read only at the boundary pixels of `domain`.
    pub boundary_depth: RasterMap,
    pub domain: RasterMap,
    pub nz_floor: f64,
}

impl IntegrationProblem {
    pub fn new(normals: RasterMap, boundary_depth: RasterMap, domain: RasterMap) -> Result<Self> {
        let p = Self {
            normals,
            boundary_depth,
            domain,
            nz_floor: DEFAULT_NZ_FLOOR,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if self.normals.semantic() != Semantic::Normal || self.normals.channels() != 3 {
            return Err(Error::InvalidInput(
                "normals must be a 3-channel normal map".into(),
            ));
        }
        if !self.normals.same_shape(&self.domain) || !self.boundary_depth.same_shape(&self.domain) {
            return Err(Error::InvalidInput(
                "integration inputs differ in size".into(),
            ));
        }
        if self.domain.count_set() == 0 {
            return Err(Error::InvalidInput("empty integration domain".into()));
        }
        if !(self.nz_floor > 0.0 && self.nz_floor <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "nz floor {} outside (0, 1]",
                self.nz_floor
            )));
        }
        Ok(())
    }

    /// Target depth gradient `(-nx / nz, -ny / nz)` at a pixel.
    pub fn gradient(&self, x: usize, y: usize) -> (f64, f64) {
        let n = self.normals.pixel(x, y);
        let nz = (n[2] as f64).max(self.nz_floor);
        (-(n[0] as f64) / nz, -(n[1] as f64) / nz)
    }

    /// Target of `Z_q - Z_p` along one edge: Simpson's rule with the
    /// midpoint normal taken as the mean of the endpoint normals.
    fn edge_target(&self, p: (usize, usize), q: (usize, usize), axis: usize) -> f64 {
        let (np, nq) = (self.normals.pixel(p.0, p.1), self.normals.pixel(q.0, q.1));
        let slope = |t: f64, z: f64| -t / z.max(self.nz_floor);
        let gp = slope(np[axis] as f64, np[2] as f64);
        let gq = slope(nq[axis] as f64, nq[2] as f64);
        let gm = slope(
            0.5 * (np[axis] + nq[axis]) as f64,
            0.5 * (np[2] + nq[2]) as f64,
        );
        (gp + 4.0 * gm + gq) / 6.0
    }

    /// `(p, q, d)` for each 4-neighbor pair in the domain with `q` right of
    /// or below `p`; `d` is the target of `Z_q - Z_p`.
    fn edges(&self) -> Vec<(usize, usize, f64)> {
        let (w, h) = (self.domain.width(), self.domain.height());
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if !self.domain.is_set(x, y) {
                    continue;
                }
                if x + 1 < w && self.domain.is_set(x + 1, y) {
                    out.push((
                        y * w + x,
                        y * w + x + 1,
                        self.edge_target((x, y), (x + 1, y), 0),
                    ));
                }
                if y + 1 < h && self.domain.is_set(x, y + 1) {
                    out.push((
                        y * w + x,
                        (y + 1) * w + x,
                        self.edge_target((x, y), (x, y + 1), 1),
                    ));
                }
            }
        }
        out
    }

    /// Least-squares residual of a depth map against the gradient field.
    pub fn energy(&self, depth: &RasterMap) -> f64 {
        let d = depth.data();
        self.edges()
            .iter()
            .map(|&(p, q, g)| {
                let r = d[q] as f64 - d[p] as f64 - g;
                r * r
            })
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct IntegrationResult {
    pub depth: RasterMap,
    pub stats: SolveStats,
    pub energy: f64,
}

/// Minimizes the gradient residual over the interior pixels with Dirichlet
/// data on the domain's boundary pixels. Disconnected components decouple.
pub fn integrate_normals(problem: &IntegrationProblem) -> Result<IntegrationResult> {
    problem.validate()?;
    let dom = &problem.domain;
    let (w, h) = (dom.width(), dom.height());
    let fixed = boundary_pixels(dom);
    let mut index = vec![usize::MAX; w * h];
    let mut unknowns = Vec::new();
    for i in 0..w * h {
        if dom.data()[i] >= 0.5 && fixed.data()[i] < 0.5 {
            index[i] = unknowns.len();
            unknowns.push(i);
        }
    }
    let mut depth = RasterMap::new(w, h, 1, Semantic::Depth)?;
    for i in 0..w * h {
        if fixed.data()[i] >= 0.5 {
            let v = problem.boundary_depth.data()[i];
            if !v.is_finite() {
                return Err(Error::InvalidInput("non-finite boundary depth".into()));
            }
            depth.data_mut()[i] = v;
        }
    }
    let n = unknowns.len();
    let mut stats = SolveStats {
        iterations: 0,
        relative_residual: 0.0,
    };
    if n > 0 {
        let mut trips = Vec::new();
        let mut rhs = vec![0.0; n];
        for (p, q, d) in problem.edges() {
            // (Z_q - Z_p - d)^2
            let (ip, iq) = (index[p], index[q]);
            if ip != usize::MAX {
                trips.push((ip, ip, 1.0));
                rhs[ip] -= d;
                if iq != usize::MAX {
                    trips.push((ip, iq, -1.0));
                } else {
                    rhs[ip] += depth.data()[q] as f64;
                }
            }
            if iq != usize::MAX {
                trips.push((iq, iq, 1.0));
                rhs[iq] += d;
                if ip != usize::MAX {
                    trips.push((iq, ip, -1.0));
                } else {
                    rhs[iq] += depth.data()[p] as f64;
                }
            }
        }
        let a = CsrMatrix::from_triplets(n, trips);
        let (z, s) = pcg(&a, &rhs, None, CG_TOL, 20 * n + 100)?;
        stats = s;
        for (k, &i) in unknowns.iter().enumerate() {
            depth.data_mut()[i] = z[k] as f32;
        }
    }
    let energy = problem.energy(&depth);
    Ok(IntegrationResult {
        depth,
        stats,
        energy,
    })
}
