//! Binary mask morphology, connected components and exact Euclidean
//! distance transforms.

use std::collections::VecDeque;

use crate::raster::RasterMap;

const N4: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
pub const N8: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Connected components of the set pixels. Returns a per-pixel component id
/// (`u32::MAX` for background) and the size of each component.
pub fn components(mask: &RasterMap, eight: bool) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = (mask.width(), mask.height());
    let mut ids = vec![u32::MAX; w * h];
    let mut sizes = Vec::new();
    let nbrs: &[(i64, i64)] = if eight { &N8 } else { &N4 };
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if ids[start] != u32::MAX || !mask.is_set(start % w, start / w) {
            continue;
        }
        let id = sizes.len() as u32;
        ids[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for &(dx, dy) in nbrs {
                let (nx, ny) = (x + dx, y + dy);
                if mask.is_set_i(nx, ny) {
                    let j = ny as usize * w + nx as usize;
                    if ids[j] == u32::MAX {
                        ids[j] = id;
                        queue.push_back(j);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (ids, sizes)
}

/// Keeps only the largest 4-connected component (lowest id on ties).
/// Returns the cleaned mask and the number of components found.
pub fn largest_component(mask: &RasterMap) -> (RasterMap, usize) {
    let (ids, sizes) = components(mask, false);
    let mut out = RasterMap::mask(mask.width(), mask.height());
    let Some(best) = (0..sizes.len()).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
    else {
        return (out, 0);
    };
    for (i, &id) in ids.iter().enumerate() {
        if id == best as u32 {
            out.data_mut()[i] = 1.0;
        }
    }
    (out, sizes.len())
}

/// Fills background pixels that are not 8-connected to the image border.
pub fn fill_holes(mask: &RasterMap) -> RasterMap {
    let (w, h) = (mask.width(), mask.height());
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if (x == 0 || y == 0 || x == w - 1 || y == h - 1) && !mask.is_set(x, y) {
                outside[y * w + x] = true;
                queue.push_back(y * w + x);
            }
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for &(dx, dy) in &N8 {
            let (nx, ny) = (x + dx, y + dy);
            if mask.in_bounds(nx, ny) && !mask.is_set(nx as usize, ny as usize) {
                let j = ny as usize * w + nx as usize;
                if !outside[j] {
                    outside[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    let mut out = RasterMap::mask(w, h);
    for (i, o) in outside.iter().enumerate() {
        out.data_mut()[i] = if *o { 0.0 } else { 1.0 };
    }
    out
}

/// 1D squared distance transform (lower envelope of parabolas).
fn dt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let mut first = None;
    for q in 0..n {
        if f[q].is_finite() {
            first = Some(q);
            break;
        }
    }
    let Some(q0) = first else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    v[0] = q0;
    for q in q0 + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64))
                / (2.0 * q as f64 - 2.0 * p as f64);
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Exact Euclidean distance from every pixel to the nearest pixel where
/// `source(x, y)` is true. Infinite everywhere if there are no sources.
pub fn distance_transform(
    width: usize,
    height: usize,
    source: impl Fn(usize, usize) -> bool,
) -> Vec<f64> {
    let mut grid = vec![f64::INFINITY; width * height];
    for y in 0..height {
        for x in 0..width {
            if source(x, y) {
                grid[y * width + x] = 0.0;
            }
        }
    }
    let n = width.max(height);
    let (mut f, mut out, mut v, mut z) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0usize; n],
        vec![0.0; n + 1],
    );
    for x in 0..width {
        for y in 0..height {
            f[y] = grid[y * width + x];
        }
        dt_1d(&f[..height], &mut out[..height], &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = out[y];
        }
    }
    for y in 0..height {
        f[..width].copy_from_slice(&grid[y * width..(y + 1) * width]);
        dt_1d(&f[..width], &mut out[..width], &mut v, &mut z);
        grid[y * width..(y + 1) * width].copy_from_slice(&out[..width]);
    }
    grid.iter_mut().for_each(|d| *d = d.sqrt());
    grid
}

/// Euclidean disk dilation.
pub fn dilate(mask: &RasterMap, radius: f64) -> RasterMap {
    let d = distance_transform(mask.width(), mask.height(), |x, y| mask.is_set(x, y));
    let mut out = RasterMap::mask(mask.width(), mask.height());
    for (o, &di) in out.data_mut().iter_mut().zip(&d) {
        *o = if di <= radius { 1.0 } else { 0.0 };
    }
    out
}

/// Euclidean disk erosion.
pub fn erode(mask: &RasterMap, radius: f64) -> RasterMap {
    let d = distance_transform(mask.width(), mask.height(), |x, y| !mask.is_set(x, y));
    let mut out = RasterMap::mask(mask.width(), mask.height());
    for (o, &di) in out.data_mut().iter_mut().zip(&d) {
        *o = if di > radius { 1.0 } else { 0.0 };
    }
    out
}

/// Set pixels with at least one 4-neighbor outside the mask (or the frame).
pub fn boundary_pixels(mask: &RasterMap) -> RasterMap {
    let mut out = RasterMap::mask(mask.width(), mask.height());
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.is_set(x, y)
                && N4
                    .iter()
                    .any(|&(dx, dy)| !mask.is_set_i(x as i64 + dx, y as i64 + dy))
            {
                out.set(x, y, 0, 1.0);
            }
        }
    }
    out
}

pub fn union(a: &RasterMap, b: &RasterMap) -> RasterMap {
    let mut out = a.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
        *o = if *o >= 0.5 || v >= 0.5 { 1.0 } else { 0.0 };
    }
    out
}

pub fn intersection(a: &RasterMap, b: &RasterMap) -> RasterMap {
    let mut out = a.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
        *o = if *o >= 0.5 && v >= 0.5 { 1.0 } else { 0.0 };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edt_matches_brute_force() {
        let (w, h) = (13, 9);
        let src = |x: usize, y: usize| (x * 7 + y * 3) % 11 == 0;
        let d = distance_transform(w, h, src);
        for y in 0..h {
            for x in 0..w {
                let mut best = f64::INFINITY;
                for sy in 0..h {
                    for sx in 0..w {
                        if src(sx, sy) {
                            let dd = ((x as f64 - sx as f64).powi(2)
                                + (y as f64 - sy as f64).powi(2))
                            .sqrt();
                            best = best.min(dd);
                        }
                    }
                }
                assert!((d[y * w + x] - best).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn holes_filled_and_largest_kept() {
        let m = RasterMap::mask_from_fn(10, 10, |x, y| {
            let ring = (1..=5).contains(&x) && (1..=5).contains(&y) && !(x == 3 && y == 3);
            ring || (x == 8 && y == 8)
        });
        let (big, n) = largest_component(&m);
        assert_eq!(n, 2);
        assert_eq!(big.count_set(), 24);
        assert_eq!(fill_holes(&big).count_set(), 25);
    }

    #[test]
    fn dilation_radius() {
        let m = RasterMap::mask_from_fn(21, 21, |x, y| x == 10 && y == 10);
        let d = dilate(&m, 2.0);
        assert_eq!(d.count_set(), 13);
        assert_eq!(erode(&d, 1.0).count_set(), 5);
    }
}
