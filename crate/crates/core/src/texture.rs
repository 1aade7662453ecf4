//! Texture atlas: front projection, back synthesis, hidden-region fill and
//! gradient-domain seam blending.
//!
//! The back tile is indexed in the back view's own frame: back pixel
//! `(x, y)` lies behind front pixel `(W - 1 - x, y)`.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morph;
use crate::raster::{RasterMap, Semantic};
use crate::sparse::{pcg, CsrMatrix};

pub const DEFAULT_SEAM_BAND: usize = 8;
pub const COHERENCE_PATCH: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackMode {
    #[default]
    Mirror,
    Inpaint,
}

impl std::str::FromStr for BackMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mirror" => Ok(BackMode::Mirror),
            "inpaint" => Ok(BackMode::Inpaint),
            _ => Err(Error::InvalidInput(format!(
                "unknown back texture mode {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrontTile {
    pub tile: RasterMap,
    /// Pixels whose front surface is hidden behind another part.
    pub flagged: RasterMap,
}

/// Copies `image` inside `s`; `hidden` marks pixels to be filled later.
pub fn project_front(
    image: &RasterMap,
    s: &RasterMap,
    hidden: Option<&RasterMap>,
) -> Result<FrontTile> {
    if image.channels() != 3 || image.width() != s.width() || image.height() != s.height() {
        return Err(Error::InvalidInput(
            "color image must be RGB and match the silhouette".into(),
        ));
    }
    let mut tile = RasterMap::new(s.width(), s.height(), 3, Semantic::Color)?;
    for y in 0..s.height() {
        for x in 0..s.width() {
            if s.is_set(x, y) {
                tile.pixel_mut(x, y).copy_from_slice(image.pixel(x, y));
            }
        }
    }
    let flagged = match hidden {
        Some(h) => morph::intersection(h, s),
        None => RasterMap::mask(s.width(), s.height()),
    };
    Ok(FrontTile { tile, flagged })
}

fn mean_color(tile: &RasterMap, pick: impl Fn(usize) -> bool) -> Option<[f32; 3]> {
    let mut acc = [0.0f64; 3];
    let mut n = 0usize;
    for i in 0..tile.len_pixels() {
        if pick(i) {
            for (c, a) in acc.iter_mut().enumerate() {
                *a += tile.data()[i * 3 + c] as f64;
            }
            n += 1;
        }
    }
    (n > 0).then(|| acc.map(|a| (a / n as f64) as f32))
}

/// Per-pixel mean over the `k x k` window, restricted to `mask`.
fn patch_means(tile: &RasterMap, mask: &[bool], k: usize) -> Vec<[f32; 3]> {
    let (w, h) = (tile.width(), tile.height());
    let r = (k / 2) as i64;
    let mut out = vec![[0.0f32; 3]; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let i = y as usize * w + x as usize;
            if !mask[i] {
                continue;
            }
            let mut acc = [0.0f64; 3];
            let mut n = 0.0;
            for yy in (y - r).max(0)..=(y + r).min(h as i64 - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w as i64 - 1) {
                    let j = yy as usize * w + xx as usize;
                    if mask[j] {
                        for (c, a) in acc.iter_mut().enumerate() {
                            *a += tile.data()[j * 3 + c] as f64;
                        }
                        n += 1.0;
                    }
                }
            }
            out[i] = acc.map(|a| (a / n) as f32);
        }
    }
    out
}

/// Back tile plus, per back label, how many pixels were drawn from each
/// donor label.
#[derive(Debug, Clone)]
pub struct BackTile {
    pub tile: RasterMap,
    pub provenance: BTreeMap<i32, BTreeMap<i32, usize>>,
}

/// Mirror mode copies the front tile mirrored. Inpaint mode fills each back
/// pixel from front pixels carrying the same label as the back label map
/// (`back_labels`, back frame; defaults to the mirrored front labels):
/// label-mean seed, then one coherence pass snapping each pixel to the
/// donor pixel whose patch mean is nearest.
pub fn synthesize_back(
    front: &RasterMap,
    s: &RasterMap,
    mode: BackMode,
    front_labels: Option<&RasterMap>,
    back_labels: Option<&RasterMap>,
) -> Result<BackTile> {
    let (w, h) = (s.width(), s.height());
    if front.width() != w || front.height() != h || front.channels() != 3 {
        return Err(Error::InvalidInput(
            "front tile must be RGB and match the silhouette".into(),
        ));
    }
    let mut provenance = BTreeMap::new();
    if mode == BackMode::Mirror {
        return Ok(BackTile {
            tile: front.mirrored(),
            provenance,
        });
    }
    let flabels = match front_labels {
        Some(l) => l.clone(),
        None => RasterMap::new(w, h, 1, Semantic::Label)?,
    };
    let blabels = match back_labels {
        Some(l) => l.clone(),
        None => flabels.mirrored(),
    };
    let back_mask = s.mirrored();
    let front_mask: Vec<bool> = (0..w * h).map(|i| s.data()[i] >= 0.5).collect();
    let global = mean_color(front, |i| front_mask[i]).unwrap_or([0.5; 3]);
    let means = patch_means(front, &front_mask, COHERENCE_PATCH);
    let mut tile = RasterMap::new(w, h, 3, Semantic::Color)?;
    let mut labels: Vec<i32> = (0..w * h)
        .filter(|&i| back_mask.data()[i] >= 0.5)
        .map(|i| blabels.data()[i] as i32)
        .collect();
    labels.sort_unstable();
    labels.dedup();
    for l in labels {
        let donors: Vec<usize> = (0..w * h)
            .filter(|&i| front_mask[i] && flabels.data()[i] as i32 == l)
            .collect();
        let targets: Vec<usize> = (0..w * h)
            .filter(|&i| back_mask.data()[i] >= 0.5 && blabels.data()[i] as i32 == l)
            .collect();
        let counts = provenance.entry(l).or_insert_with(BTreeMap::new);
        if donors.is_empty() {
            log::warn!("label {l} has no front pixels; back filled with the global mean");
            for &i in &targets {
                tile.data_mut()[i * 3..i * 3 + 3].copy_from_slice(&global);
            }
            *counts.entry(-1).or_insert(0) += targets.len();
            continue;
        }
        let seed = mean_color(front, |i| front_mask[i] && flabels.data()[i] as i32 == l).unwrap();
        for &i in &targets {
            // the seed is the label mean; snap to the donor whose patch mean
            // is nearest to the seed shifted by the mirrored front detail
            let (x, y) = (i % w, i / w);
            let mirror = y * w + (w - 1 - x);
            let want = if front_mask[mirror] && flabels.data()[mirror] as i32 == l {
                means[mirror]
            } else {
                seed
            };
            let best = donors
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let da: f32 = (0..3).map(|c| (means[a][c] - want[c]).powi(2)).sum();
                    let db: f32 = (0..3).map(|c| (means[b][c] - want[c]).powi(2)).sum();
                    da.total_cmp(&db).then(a.cmp(&b))
                })
                .unwrap();
            let src = front.data()[best * 3..best * 3 + 3].to_vec();
            tile.data_mut()[i * 3..i * 3 + 3].copy_from_slice(&src);
            *counts.entry(flabels.data()[best] as i32).or_insert(0) += 1;
        }
    }
    Ok(BackTile { tile, provenance })
}

/// Harmonic fill of the `fill` pixels of `tile` from the `known` pixels
/// (4-neighbor Laplace, Dirichlet on known neighbors). Fill components
/// without known neighbors take the mean of all known pixels.
pub fn fill_hidden(tile: &RasterMap, known: &RasterMap, fill: &RasterMap) -> Result<RasterMap> {
    let (w, h) = (tile.width(), tile.height());
    let mut out = tile.clone();
    let idx: Vec<usize> = (0..w * h).filter(|&i| fill.data()[i] >= 0.5).collect();
    if idx.is_empty() {
        return Ok(out);
    }
    let global =
        mean_color(tile, |i| known.data()[i] >= 0.5 && fill.data()[i] < 0.5).unwrap_or([0.5; 3]);
    let mut unknown = vec![usize::MAX; w * h];
    for (k, &i) in idx.iter().enumerate() {
        unknown[i] = k;
    }
    let mut trip = Vec::new();
    let mut rhs = vec![[0.0f64; 3]; idx.len()];
    for (k, &i) in idx.iter().enumerate() {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        let mut deg = 0.0;
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x + dx, y + dy);
            if !known.is_set_i(nx, ny) && !fill.is_set_i(nx, ny) {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            deg += 1.0;
            if unknown[j] != usize::MAX {
                trip.push((k, unknown[j], -1.0));
            } else {
                for c in 0..3 {
                    rhs[k][c] += tile.data()[j * 3 + c] as f64;
                }
            }
        }
        // weak anchor keeps components without known neighbors well posed
        let anchor = 1e-6;
        trip.push((k, k, deg + anchor));
        for c in 0..3 {
            rhs[k][c] += anchor * global[c] as f64;
        }
    }
    let a = CsrMatrix::from_triplets(idx.len(), trip);
    for c in 0..3 {
        let b: Vec<f64> = rhs.iter().map(|r| r[c]).collect();
        let x0 = vec![global[c] as f64; idx.len()];
        let (x, _) = pcg(&a, &b, Some(&x0), 1e-10, 20_000)?;
        for (k, &i) in idx.iter().enumerate() {
            out.data_mut()[i * 3 + c] = x[k] as f32;
        }
    }
    Ok(out)
}

/// 4-connected distance (in steps) from the mask's boundary pixels.
fn boundary_steps(s: &RasterMap) -> Vec<usize> {
    let (w, h) = (s.width(), s.height());
    let b = morph::boundary_pixels(s);
    let mut d = vec![usize::MAX; w * h];
    let mut q = VecDeque::new();
    for i in 0..w * h {
        if b.data()[i] >= 0.5 {
            d[i] = 0;
            q.push_back(i);
        }
    }
    while let Some(i) = q.pop_front() {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x + dx, y + dy);
            if s.is_set_i(nx, ny) {
                let j = ny as usize * w + nx as usize;
                if d[j] == usize::MAX {
                    d[j] = d[i] + 1;
                    q.push_back(j);
                }
            }
        }
    }
    d
}

/// Poisson blend across the silhouette seam. Front and back pixels less
/// than `band` steps from the boundary are unknowns; a boundary pixel and
/// its mirrored back pixel are one node. Gradients come from each tile,
/// pixels at exactly `band` steps are fixed. Pixels outside the band are
/// unchanged.
pub fn blend_seam(
    front: &RasterMap,
    back: &RasterMap,
    s: &RasterMap,
    band: usize,
) -> Result<(RasterMap, RasterMap)> {
    if band == 0 {
        return Err(Error::InvalidInput("seam band must be at least 1".into()));
    }
    let (w, h) = (s.width(), s.height());
    if !front.same_shape(back) || front.width() != w || front.height() != h || front.channels() != 3
    {
        return Err(Error::InvalidInput(
            "tiles must be RGB and match the silhouette".into(),
        ));
    }
    let df = boundary_steps(s);
    let sb = s.mirrored();
    let db = boundary_steps(&sb);
    // node ids: front pixels by index, back pixels map to their own node
    // except on the boundary where they share the front node
    let mut fnode = vec![usize::MAX; w * h];
    let mut bnode = vec![usize::MAX; w * h];
    let mut n = 0;
    for i in 0..w * h {
        if df[i] < band {
            fnode[i] = n;
            n += 1;
        }
    }
    for i in 0..w * h {
        if db[i] < band {
            let (x, y) = (i % w, i / w);
            let fi = y * w + (w - 1 - x);
            if db[i] == 0 && df[fi] == 0 {
                bnode[i] = fnode[fi];
            } else {
                bnode[i] = n;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Ok((front.clone(), back.clone()));
    }
    let mut trip = Vec::new();
    let mut rhs = vec![[0.0f64; 3]; n];
    let mut guess = vec![[0.0f64; 3]; n];
    let mut cnt = vec![0.0; n];
    for (tile, dist, nodes, mask) in [(front, &df, &fnode, s), (back, &db, &bnode, &sb)] {
        for i in 0..w * h {
            let k = nodes[i];
            if k == usize::MAX {
                continue;
            }
            for c in 0..3 {
                guess[k][c] += tile.data()[i * 3 + c] as f64;
            }
            cnt[k] += 1.0;
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let (nx, ny) = (x + dx, y + dy);
                if !mask.is_set_i(nx, ny) {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if dist[j] > band {
                    continue;
                }
                trip.push((k, k, 1.0));
                for c in 0..3 {
                    rhs[k][c] += (tile.data()[i * 3 + c] - tile.data()[j * 3 + c]) as f64;
                }
                if nodes[j] != usize::MAX {
                    trip.push((k, nodes[j], -1.0));
                } else {
                    for c in 0..3 {
                        rhs[k][c] += tile.data()[j * 3 + c] as f64;
                    }
                }
            }
        }
    }
    let a = CsrMatrix::from_triplets(n, trip);
    if a.diagonal().iter().any(|&d| d <= 0.0) {
        return Err(Error::Degenerate("seam band has an isolated pixel".into()));
    }
    let mut f = front.clone();
    let mut b = back.clone();
    for c in 0..3 {
        let rc: Vec<f64> = rhs.iter().map(|r| r[c]).collect();
        let x0: Vec<f64> = guess.iter().zip(&cnt).map(|(g, &k)| g[c] / k).collect();
        let (x, _) = pcg(&a, &rc, Some(&x0), 1e-10, 50_000)?;
        for i in 0..w * h {
            if fnode[i] != usize::MAX {
                f.data_mut()[i * 3 + c] = x[fnode[i]] as f32;
            }
            if bnode[i] != usize::MAX {
                b.data_mut()[i * 3 + c] = x[bnode[i]] as f32;
            }
        }
    }
    Ok((f, b))
}

/// Places tiles side by side: front, back, hidden.
pub fn assemble_atlas(tiles: &[&RasterMap]) -> Result<RasterMap> {
    let (w, h) = (tiles[0].width(), tiles[0].height());
    let mut atlas = RasterMap::new(w * tiles.len(), h, 3, Semantic::Color)?;
    for (t, tile) in tiles.iter().enumerate() {
        if tile.width() != w || tile.height() != h || tile.channels() != 3 {
            return Err(Error::InvalidInput("atlas tiles differ in size".into()));
        }
        for y in 0..h {
            for x in 0..w {
                atlas
                    .pixel_mut(t * w + x, y)
                    .copy_from_slice(tile.pixel(x, y));
            }
        }
    }
    Ok(atlas)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(w: usize, h: usize) -> RasterMap {
        RasterMap::mask_from_fn(w, h, |x, y| {
            (4..w - 4).contains(&x) && (3..h - 3).contains(&y)
        })
    }

    fn constant(w: usize, h: usize, v: f32) -> RasterMap {
        let mut m = RasterMap::new(w, h, 3, Semantic::Color).unwrap();
        m.fill(&[v, v, v]);
        m
    }

    #[test]
    fn uniform_front_and_mirror() {
        let s = rect(40, 30);
        let img = constant(40, 30, 0.4);
        let ft = project_front(&img, &s, None).unwrap();
        assert_eq!(ft.flagged.count_set(), 0);
        for y in 0..30 {
            for x in 0..40 {
                let want = if s.is_set(x, y) { 0.4 } else { 0.0 };
                assert_eq!(ft.tile.get(x, y, 1), want);
            }
        }
        let mut grad = RasterMap::new(40, 30, 3, Semantic::Color).unwrap();
        for y in 0..30 {
            for x in 0..40 {
                grad.pixel_mut(x, y)
                    .copy_from_slice(&[x as f32 / 40.0, y as f32 / 30.0, 0.5]);
            }
        }
        let back = synthesize_back(&grad, &s, BackMode::Mirror, None, None).unwrap();
        for y in 0..30 {
            for x in 0..40 {
                assert_eq!(back.tile.pixel(x, y), grad.pixel(39 - x, y));
            }
        }
        assert_eq!(back.tile.mirrored(), grad);
    }

    #[test]
    fn inpaint_uses_only_donor_labels() {
        let (w, h) = (40, 30);
        let s = rect(w, h);
        let mut labels = RasterMap::new(w, h, 1, Semantic::Label).unwrap();
        let mut img = RasterMap::new(w, h, 3, Semantic::Color).unwrap();
        for y in 0..h {
            for x in 0..w {
                let l = if y < 12 { 0 } else { 1 };
                labels.set(x, y, 0, l as f32);
                let c = if l == 0 {
                    [0.9, 0.7, 0.6]
                } else {
                    [0.1, 0.2, 0.3 + 0.01 * x as f32]
                };
                img.pixel_mut(x, y).copy_from_slice(&c);
            }
        }
        let front = project_front(&img, &s, None).unwrap().tile;
        // the back of the head (label 0 region) is relabeled to draw from label 1
        let mut back_labels = labels.mirrored();
        for y in 0..12 {
            for x in 0..w {
                back_labels.set(x, y, 0, 1.0);
            }
        }
        let bt = synthesize_back(
            &front,
            &s,
            BackMode::Inpaint,
            Some(&labels),
            Some(&back_labels),
        )
        .unwrap();
        assert!(!bt.provenance[&1].contains_key(&0));
        assert!(bt.provenance[&1][&1] > 0);
        let sb = s.mirrored();
        for y in 0..12 {
            for x in 0..w {
                if sb.is_set(x, y) {
                    assert!(bt.tile.get(x, y, 0) < 0.2);
                }
            }
        }
        let uni = constant(w, h, 0.3);
        let bt = synthesize_back(&uni, &s, BackMode::Inpaint, Some(&labels), None).unwrap();
        for i in 0..w * h {
            if sb.data()[i] >= 0.5 {
                assert!((bt.tile.data()[i * 3] - 0.3).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn blend_identical_tiles_is_noop() {
        let s = rect(40, 30);
        let mut img = RasterMap::new(40, 30, 3, Semantic::Color).unwrap();
        for y in 0..30 {
            for x in 0..40 {
                img.pixel_mut(x, y).copy_from_slice(&[0.5, 0.5, 0.5]);
            }
        }
        let (f, b) = blend_seam(&img, &img, &s, 8).unwrap();
        for (a, o) in f
            .data()
            .iter()
            .chain(b.data())
            .zip(img.data().iter().chain(img.data()))
        {
            assert!((a - o).abs() < 1e-6);
        }
    }

    #[test]
    fn blend_constant_tiles_ramp_and_single_row_average() {
        let (w, h) = (60, 60);
        let s = rect(w, h);
        let (f0, b0) = (constant(w, h, 0.2), constant(w, h, 0.8));
        let (f, b) = blend_seam(&f0, &b0, &s, 8).unwrap();
        // along the middle row: front interior -> seam -> back interior
        let y = 30;
        let mut seq: Vec<f32> = (4..20).map(|x| f.get(x, y, 0)).collect::<Vec<_>>();
        seq.reverse();
        let back_row: Vec<f32> = (4..20).rev().map(|x| b.get(w - 1 - x, y, 0)).collect();
        seq.extend(back_row.into_iter().rev());
        for pair in seq.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-6, "{seq:?}");
        }
        assert!((f.get(30, 30, 0) - 0.2).abs() < 1e-6);
        assert!((b.get(30, 30, 0) - 0.8).abs() < 1e-6);
        let d = f.get(4, y, 0);
        assert!((d - b.get(w - 1 - 4, y, 0)).abs() < 1e-6);
        assert!((d - 0.5).abs() < 0.02, "{d}");
        let (f1, b1) = blend_seam(&f0, &b0, &s, 1).unwrap();
        assert!((f1.get(4, y, 0) - 0.5).abs() < 1e-6);
        assert!((b1.get(w - 5, y, 0) - 0.5).abs() < 1e-6);
        assert_eq!(f1.get(5, y, 0), 0.2);
        // nothing outside the band moves
        for yy in 0..h {
            for x in 0..w {
                if !s.is_set(x, yy) {
                    assert_eq!(f.get(x, yy, 0), 0.2);
                }
            }
        }
    }

    #[test]
    fn hidden_fill_is_harmonic() {
        let (w, h) = (30, 20);
        let known = RasterMap::mask_from_fn(w, h, |_, _| true);
        let fill =
            RasterMap::mask_from_fn(w, h, |x, y| (5..25).contains(&x) && (5..15).contains(&y));
        let mut tile = RasterMap::new(w, h, 3, Semantic::Color).unwrap();
        for y in 0..h {
            for x in 0..w {
                let v = x as f32 / 30.0;
                tile.pixel_mut(x, y).copy_from_slice(&[v, v, v]);
            }
        }
        let mut holed = tile.clone();
        for i in 0..w * h {
            if fill.data()[i] >= 0.5 {
                holed.data_mut()[i * 3..i * 3 + 3].copy_from_slice(&[0.0; 3]);
            }
        }
        let out = fill_hidden(&holed, &known, &fill).unwrap();
        for (a, b) in out.data().iter().zip(tile.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
