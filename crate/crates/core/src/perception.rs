//! Post-processing of blob-shaped detector heatmaps and pinhole camera
//! extrinsic calibration.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
#[allow(unused_imports)]
use num_traits::Float;

use crate::numopt::{nelder_mead_from, SimplexConfig};
use crate::{Error, Result};

/// Row-major intensity image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("heatmap dimensions must be positive"));
        }
        if values.len() != width * height {
            return Err(Error::invalid(alloc::format!("expected {} values, got {}", width * height, values.len())));
        }
        if values.iter().any(|v| !(v.is_finite() && (0.0..=1.0).contains(v))) {
            return Err(Error::invalid("heatmap values must lie in [0, 1]"));
        }
        Ok(Heatmap { width, height, values })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Heatmap::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Binary image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(Error::invalid("mask dimensions do not match its data"));
        }
        Ok(Mask { width, height, bits })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Pixelwise `self ⊆ other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.width == other.width && self.height == other.height && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    /// Value at signed coordinates; outside the image is background.
    fn at(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height && self.get(x as usize, y as usize)
    }
}

/// `value >= t` becomes foreground.
pub fn threshold(h: &Heatmap, t: f64) -> Result<Mask> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid("threshold must lie in [0, 1]"));
    }
    Ok(Mask {
        width: h.width,
        height: h.height,
        bits: h.values.iter().map(|v| *v >= t).collect(),
    })
}

fn morph(b: &Mask, keep: impl Fn(&Mask, isize, isize) -> bool) -> Mask {
    let mut bits = Vec::with_capacity(b.bits.len());
    for y in 0..b.height as isize {
        for x in 0..b.width as isize {
            bits.push(keep(b, x, y));
        }
    }
    Mask {
        width: b.width,
        height: b.height,
        bits,
    }
}

const NEIGHBORHOOD: [(isize, isize); 9] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (0, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// 3×3 erosion; pixels outside the image count as background.
pub fn erode(b: &Mask) -> Mask {
    morph(b, |m, x, y| NEIGHBORHOOD.iter().all(|(dx, dy)| m.at(x + dx, y + dy)))
}

/// 3×3 dilation.
pub fn dilate(b: &Mask) -> Mask {
    morph(b, |m, x, y| NEIGHBORHOOD.iter().any(|(dx, dy)| m.at(x + dx, y + dy)))
}

/// Foreground pixels of one 8-connected component in raster order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub pixels: Vec<(usize, usize)>,
}

impl Component {
    /// `(min_x, min_y, max_x, max_y)`.
    pub fn bounding_box(&self) -> (usize, usize, usize, usize) {
        self.pixels.iter().fold((usize::MAX, usize::MAX, 0, 0), |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)))
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Two-pass union-find labeling with 8-connectivity. Components are ordered
/// by their first pixel in raster order.
pub fn connected_components(b: &Mask) -> Vec<Component> {
    let (w, h) = (b.width, b.height);
    let mut labels = vec![usize::MAX; w * h];
    let mut parent: Vec<usize> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !b.get(x, y) {
                continue;
            }
            let mut label = usize::MAX;
            for (dx, dy) in [(-1isize, -1isize), (0, -1), (1, -1), (-1, 0)] {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if !b.at(nx, ny) {
                    continue;
                }
                let other = labels[ny as usize * w + nx as usize];
                if label == usize::MAX {
                    label = other;
                } else {
                    let (ra, rb) = (find(&mut parent, label), find(&mut parent, other));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
            }
            if label == usize::MAX {
                label = parent.len();
                parent.push(label);
            }
            labels[y * w + x] = label;
        }
    }

    let mut slot = vec![usize::MAX; parent.len()];
    let mut out: Vec<Component> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l == usize::MAX {
                continue;
            }
            let root = find(&mut parent, l);
            if slot[root] == usize::MAX {
                slot[root] = out.len();
                out.push(Component { pixels: Vec::new() });
            }
            out[slot[root]].pixels.push((x, y));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub cx: f64,
    pub cy: f64,
    /// Summed intensity over the component.
    pub mass: f64,
    pub pixel_count: usize,
}

/// Intensity-weighted mean pixel position using the heatmap values.
pub fn subpixel_centroid(h: &Heatmap, component: &Component) -> Result<Detection> {
    if component.pixels.is_empty() {
        return Err(Error::DegenerateComponent);
    }
    let (mut mass, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for &(x, y) in &component.pixels {
        if x >= h.width || y >= h.height {
            return Err(Error::invalid("component pixel lies outside the heatmap"));
        }
        let v = h.get(x, y);
        mass += v;
        sx += v * x as f64;
        sy += v * y as f64;
    }
    if !(mass > 0.0) {
        return Err(Error::DegenerateComponent);
    }
    Ok(Detection {
        cx: sx / mass,
        cy: sy / mass,
        mass,
        pixel_count: component.pixels.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobConfig {
    pub threshold: f64,
    /// Applies one erosion followed by one dilation before labeling.
    pub opening: bool,
    /// Components with fewer pixels are dropped.
    pub min_pixels: usize,
}

impl Default for BlobConfig {
    fn default() -> Self {
        BlobConfig {
            threshold: 0.1,
            opening: true,
            min_pixels: 1,
        }
    }
}

/// Threshold, optional opening, labeling and centroids of one channel.
pub fn detect_blobs(h: &Heatmap, cfg: &BlobConfig) -> Result<Vec<Detection>> {
    let mut mask = threshold(h, cfg.threshold)?;
    if cfg.opening {
        mask = dilate(&erode(&mask));
    }
    let mut out = Vec::new();
    for c in connected_components(&mask) {
        if c.pixels.len() < cfg.min_pixels {
            continue;
        }
        match subpixel_centroid(h, &c) {
            Ok(d) => out.push(d),
            Err(Error::DegenerateComponent) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    /// px
    pub focal: f64,
    /// Principal point, px.
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal.is_finite() && self.focal > 0.0 && self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::invalid("focal length must be positive"));
        }
        Ok(())
    }
}

/// Camera frame: x right, y down, z along the optical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    /// Camera origin in world coordinates, m.
    pub position: Vector3<f64>,
    /// Rotation taking camera-frame vectors into the world frame.
    pub orientation: UnitQuaternion<f64>,
    pub intrinsics: Intrinsics,
}

/// Pixel coordinates of a world point.
pub fn project(point: &Vector3<f64>, pose: &CameraPose) -> Result<Vector2<f64>> {
    pose.intrinsics.validate()?;
    let c = pose.orientation.inverse_transform_vector(&(point - pose.position));
    if !(c.z > 0.0) {
        return Err(Error::BehindCamera(c.z));
    }
    let k = &pose.intrinsics;
    Ok(Vector2::new(k.focal * c.x / c.z + k.cx, k.focal * c.y / c.z + k.cy))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub world: Vector3<f64>,
    pub pixel: Vector2<f64>,
}

/// Mean squared reprojection error, px². Points behind the camera make it
/// infinite.
pub fn reprojection_error(observations: &[Observation], pose: &CameraPose) -> f64 {
    let mut total = 0.0;
    for o in observations {
        match project(&o.world, pose) {
            Ok(p) => total += (p - o.pixel).norm_squared(),
            Err(_) => return f64::INFINITY,
        }
    }
    total / observations.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub pose: CameraPose,
    /// Root-mean-square reprojection error, px.
    pub rms_error: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConfig {
    pub simplex: SimplexConfig,
    /// Initial simplex edge for position, m.
    pub position_step: f64,
    /// Initial simplex edge for the rotation increment, rad.
    pub rotation_step: f64,
    pub restarts: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            simplex: SimplexConfig {
                max_iter: 4000,
                ..SimplexConfig::default()
            },
            position_step: 0.05,
            rotation_step: 0.05,
            restarts: 6,
        }
    }
}

fn pose_from_params(guess: &CameraPose, p: &[f64]) -> CameraPose {
    CameraPose {
        position: Vector3::new(p[0], p[1], p[2]),
        orientation: guess.orientation * UnitQuaternion::from_scaled_axis(Vector3::new(p[3], p[4], p[5])),
        intrinsics: guess.intrinsics,
    }
}

/// Fits position and orientation to pixel observations of known world
/// points by minimizing the mean squared reprojection error. The
/// orientation is searched as a rotation vector applied to the guess.
pub fn calibrate_extrinsics(observations: &[Observation], intrinsics: Intrinsics, guess: &CameraPose, cfg: &CalibrationConfig) -> Result<Calibration> {
    intrinsics.validate()?;
    if observations.len() < 4 {
        return Err(Error::invalid("need at least four observations"));
    }
    if observations.iter().any(|o| !(o.world.iter().chain(o.pixel.iter()).all(|v| v.is_finite()))) {
        return Err(Error::invalid("observations must be finite"));
    }
    let mut anchor = CameraPose { intrinsics, ..*guess };
    if !reprojection_error(observations, &anchor).is_finite() {
        return Err(Error::invalid("observed points lie behind the initial camera guess"));
    }

    let mut iterations = 0;
    let mut converged = false;
    let mut best = reprojection_error(observations, &anchor);
    for _ in 0..=cfg.restarts {
        let p0 = [anchor.position.x, anchor.position.y, anchor.position.z, 0.0, 0.0, 0.0];
        let mut simplex = vec![p0.to_vec()];
        for i in 0..6 {
            let mut v = p0.to_vec();
            v[i] += if i < 3 { cfg.position_step } else { cfg.rotation_step };
            simplex.push(v);
        }
        let base = anchor;
        let res = nelder_mead_from(|p: &[f64]| reprojection_error(observations, &pose_from_params(&base, p)), simplex, &cfg.simplex)?;
        iterations += res.iterations;
        let improved = res.f < best;
        if improved {
            anchor = pose_from_params(&base, &res.x);
        }
        let gain = best - res.f;
        best = best.min(res.f);
        converged = res.converged;
        if converged && (!improved || gain <= 1e-12 * (1.0 + best) || best < 1e-20) {
            break;
        }
    }
    Ok(Calibration {
        pose: anchor,
        rms_error: best.sqrt(),
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{Matrix3x4, Vector4};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::collections::VecDeque;

    fn mask_from(rows: &[&str]) -> Mask {
        let w = rows[0].len();
        let bits = rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect();
        Mask::new(w, rows.len(), bits).unwrap()
    }

    fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> Mask {
        Mask::new(w, h, (0..w * h).map(|_| rng.random_bool(density)).collect()).unwrap()
    }

    fn flood_fill(b: &Mask) -> Vec<Component> {
        let mut seen = vec![false; b.width * b.height];
        let mut out = Vec::new();
        for y in 0..b.height {
            for x in 0..b.width {
                if !b.get(x, y) || seen[y * b.width + x] {
                    continue;
                }
                let mut pixels = Vec::new();
                let mut queue = VecDeque::from([(x, y)]);
                seen[y * b.width + x] = true;
                while let Some((px, py)) = queue.pop_front() {
                    pixels.push((px, py));
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            let (nx, ny) = (px as isize + dx, py as isize + dy);
                            if b.at(nx, ny) && !seen[ny as usize * b.width + nx as usize] {
                                seen[ny as usize * b.width + nx as usize] = true;
                                queue.push_back((nx as usize, ny as usize));
                            }
                        }
                    }
                }
                pixels.sort_by_key(|&(x, y)| (y, x));
                out.push(Component { pixels });
            }
        }
        out
    }

    #[test]
    fn heatmap_validation() {
        assert!(Heatmap::new(0, 3, vec![]).is_err());
        assert!(Heatmap::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Heatmap::new(1, 1, vec![1.5]).is_err());
        assert!(Heatmap::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn threshold_examples() {
        let uniform = Heatmap::new(4, 3, vec![0.4; 12]).unwrap();
        assert_eq!(threshold(&uniform, 0.5).unwrap().count(), 0);
        assert_eq!(threshold(&uniform, 0.0).unwrap().count(), 12);
        assert!(threshold(&uniform, 1.1).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = Heatmap::from_fn(7, 5, |_, _| rng.random::<f64>()).unwrap();
        let m = threshold(&h, 0.37).unwrap();
        for y in 0..5 {
            for x in 0..7 {
                assert_eq!(m.get(x, y), h.get(x, y) >= 0.37);
            }
        }
    }

    #[test]
    fn morphology_examples() {
        let single = mask_from(&["...", ".#.", "..."]);
        assert_eq!(erode(&single).count(), 0);
        let block = mask_from(&[".....", ".###.", ".###.", ".###.", "....."]);
        assert_eq!(erode(&block), mask_from(&[".....", ".....", "..#..", ".....", "....."]));
        assert_eq!(dilate(&single), mask_from(&["###", "###", "###"]));
        // The border is background, so a full image erodes to its interior.
        let full = mask_from(&["###", "###", "###"]);
        assert_eq!(erode(&full), single);
    }

    #[test]
    fn opening_is_anti_extensive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let m = random_mask(&mut rng, 12, 9, 0.6);
            assert!(dilate(&erode(&m)).is_subset_of(&m));
        }
    }

    #[test]
    fn connectivity_convention() {
        assert_eq!(connected_components(&mask_from(&["#.", ".#"])).len(), 1);
        assert_eq!(connected_components(&mask_from(&["#", ".", "#"])).len(), 2);
        assert!(connected_components(&mask_from(&["..", ".."])).is_empty());
        // A U shape joins only in the last row.
        let u = connected_components(&mask_from(&["#.#", "#.#", "###"]));
        assert_eq!(u.len(), 1);
        assert_eq!(u[0].pixels.len(), 7);
    }

    #[test]
    fn labeling_matches_flood_fill() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..1000 {
            let (w, h) = (rng.random_range(1..24), rng.random_range(1..24));
            let m = random_mask(&mut rng, w, h, 0.2 + 0.6 * (i % 7) as f64 / 7.0);
            let got = connected_components(&m);
            assert_eq!(got, flood_fill(&m));
            assert_eq!(got.iter().map(|c| c.pixels.len()).sum::<usize>(), m.count());
        }
    }

    #[test]
    fn centroid_examples() {
        let mut values = vec![0.0; 30 * 30];
        values[20 * 30 + 10] = 0.8;
        let h = Heatmap::new(30, 30, values).unwrap();
        let c = Component { pixels: vec![(10, 20)] };
        let d = subpixel_centroid(&h, &c).unwrap();
        assert_eq!((d.cx, d.cy, d.pixel_count), (10.0, 20.0, 1));

        let plateau = Heatmap::from_fn(11, 11, |x, y| if (4..=6).contains(&x) && (4..=6).contains(&y) { 0.7 } else { 0.0 }).unwrap();
        let comps = connected_components(&threshold(&plateau, 0.5).unwrap());
        let d = subpixel_centroid(&plateau, &comps[0]).unwrap();
        assert_abs_diff_eq!(d.cx, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.cy, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.mass, 6.3, epsilon = 1e-12);

        let zero = Heatmap::new(3, 3, vec![0.0; 9]).unwrap();
        assert_eq!(subpixel_centroid(&zero, &Component { pixels: vec![(1, 1)] }), Err(Error::DegenerateComponent));
        assert_eq!(subpixel_centroid(&zero, &Component { pixels: vec![] }), Err(Error::DegenerateComponent));
    }

    fn gaussian(w: usize, h: usize, cx: f64, cy: f64, sigma: f64) -> Heatmap {
        Heatmap::from_fn(w, h, |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        })
        .unwrap()
    }

    #[test]
    fn gaussian_blob_centroid() {
        let h = gaussian(32, 24, 14.3, 9.7, 2.0);
        let d = detect_blobs(&h, &BlobConfig::default()).unwrap();
        assert_eq!(d.len(), 1);
        assert!((d[0].cx - 14.3).hypot(d[0].cy - 9.7) <= 0.25);
    }

    #[test]
    fn centroid_lies_in_bounding_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let h = Heatmap::from_fn(16, 16, |_, _| rng.random::<f64>()).unwrap();
            for c in connected_components(&threshold(&h, 0.6).unwrap()) {
                let d = subpixel_centroid(&h, &c).unwrap();
                let (x0, y0, x1, y1) = c.bounding_box();
                let eps = 1e-9;
                assert!(d.cx >= x0 as f64 - eps && d.cx <= x1 as f64 + eps && d.cy >= y0 as f64 - eps && d.cy <= y1 as f64 + eps);
            }
        }
    }

    proptest! {
        #[test]
        fn pipeline_is_translation_equivariant(seed in 0u64..500, sx in 0usize..6, sy in 0usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base: Vec<f64> = (0..12 * 12).map(|_| rng.random::<f64>()).collect();
            let a = Heatmap::from_fn(20, 20, |x, y| if x < 12 && y < 12 { base[y * 12 + x] } else { 0.0 }).unwrap();
            let b = Heatmap::from_fn(20, 20, |x, y| {
                if x >= sx && y >= sy && x - sx < 12 && y - sy < 12 { base[(y - sy) * 12 + x - sx] } else { 0.0 }
            }).unwrap();
            let cfg = BlobConfig { threshold: 0.4, opening: false, min_pixels: 1 };
            let da = detect_blobs(&a, &cfg).unwrap();
            let db = detect_blobs(&b, &cfg).unwrap();
            prop_assert_eq!(da.len(), db.len());
            for (p, q) in da.iter().zip(&db) {
                prop_assert!((p.cx + sx as f64 - q.cx).abs() < 1e-9);
                prop_assert!((p.cy + sy as f64 - q.cy).abs() < 1e-9);
                prop_assert_eq!(p.pixel_count, q.pixel_count);
            }
        }
    }

    fn intrinsics() -> Intrinsics {
        Intrinsics {
            focal: 500.0,
            cx: 320.0,
            cy: 240.0,
        }
    }

    #[test]
    fn projection_examples() {
        let pose = CameraPose {
            position: Vector3::new(1.0, 2.0, 0.5),
            orientation: UnitQuaternion::identity(),
            intrinsics: intrinsics(),
        };
        let p = project(&Vector3::new(1.0, 2.0, 3.5), &pose).unwrap();
        assert_abs_diff_eq!(p, Vector2::new(320.0, 240.0), epsilon = 1e-12);
        let p = project(&Vector3::new(2.0, 2.0, 1.5), &pose).unwrap();
        assert_abs_diff_eq!(p, Vector2::new(820.0, 240.0), epsilon = 1e-9);
        assert!(matches!(project(&Vector3::new(1.0, 2.0, 0.5), &pose), Err(Error::BehindCamera(_))));
        assert!(matches!(project(&Vector3::new(1.0, 2.0, -1.0), &pose), Err(Error::BehindCamera(_))));
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> CameraPose {
        CameraPose {
            position: Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            orientation: UnitQuaternion::from_euler_angles(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-3.0..3.0)),
            intrinsics: intrinsics(),
        }
    }

    fn point_in_view(pose: &CameraPose, rng: &mut ChaCha8Rng) -> Vector3<f64> {
        let c = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.8..0.8), rng.random_range(1.0..5.0));
        pose.position + pose.orientation * c
    }

    #[test]
    fn projection_matches_matrix_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let pose = random_pose(&mut rng);
            let k = intrinsics();
            let kmat = nalgebra::Matrix3::new(k.focal, 0.0, k.cx, 0.0, k.focal, k.cy, 0.0, 0.0, 1.0);
            let r = pose.orientation.to_rotation_matrix().matrix().transpose();
            let t = -r * pose.position;
            let mut rt = Matrix3x4::zeros();
            rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
            rt.set_column(3, &t);
            let pmat = kmat * rt;
            for _ in 0..10 {
                let w = point_in_view(&pose, &mut rng);
                let hpix = pmat * Vector4::new(w.x, w.y, w.z, 1.0);
                let expected = Vector2::new(hpix.x / hpix.z, hpix.y / hpix.z);
                assert_abs_diff_eq!(project(&w, &pose).unwrap(), expected, epsilon = 1e-8);
            }
        }
    }

    fn synthetic(pose: &CameraPose, n: usize, noise: f64, rng: &mut ChaCha8Rng) -> Vec<Observation> {
        let normal = Normal::new(0.0, noise.max(1e-300)).unwrap();
        (0..n)
            .map(|_| {
                let world = point_in_view(pose, rng);
                let mut pixel = project(&world, pose).unwrap();
                if noise > 0.0 {
                    pixel += Vector2::new(normal.sample(rng), normal.sample(rng));
                }
                Observation { world, pixel }
            })
            .collect()
    }

    fn perturbed(pose: &CameraPose, rng: &mut ChaCha8Rng) -> CameraPose {
        let sign = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { 0.05 } else { -0.05 };
        CameraPose {
            position: pose.position + Vector3::new(sign(rng), sign(rng), sign(rng)),
            orientation: pose.orientation * UnitQuaternion::from_scaled_axis(Vector3::new(sign(rng), sign(rng), sign(rng))),
            intrinsics: pose.intrinsics,
        }
    }

    #[test]
    fn calibration_recovers_the_generating_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let truth = random_pose(&mut rng);
            let obs = synthetic(&truth, 20, 0.0, &mut rng);
            let guess = perturbed(&truth, &mut rng);
            let cal = calibrate_extrinsics(&obs, intrinsics(), &guess, &CalibrationConfig::default()).unwrap();
            assert!((cal.pose.position - truth.position).norm() < 1e-3);
            assert!(cal.pose.orientation.angle_to(&truth.orientation) < 1e-3);
        }
    }

    #[test]
    fn calibration_at_the_truth_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = random_pose(&mut rng);
        let obs = synthetic(&truth, 12, 0.0, &mut rng);
        assert!(reprojection_error(&obs, &truth) < 1e-20);
        let cal = calibrate_extrinsics(&obs, intrinsics(), &truth, &CalibrationConfig::default()).unwrap();
        assert!(cal.rms_error < 1e-9);
        assert!((cal.pose.position - truth.position).norm() < 1e-9);
    }

    #[test]
    fn noisy_residual_is_at_the_noise_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = random_pose(&mut rng);
        let obs = synthetic(&truth, 40, 0.5, &mut rng);
        let guess = perturbed(&truth, &mut rng);
        let cal = calibrate_extrinsics(&obs, intrinsics(), &guess, &CalibrationConfig::default()).unwrap();
        // Per-axis noise of 0.5 px gives about 0.7 px per point.
        assert!(cal.rms_error > 0.3 && cal.rms_error < 1.5, "rms {}", cal.rms_error);
    }

    #[test]
    fn calibration_input_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = random_pose(&mut rng);
        let obs = synthetic(&truth, 3, 0.0, &mut rng);
        assert!(calibrate_extrinsics(&obs, intrinsics(), &truth, &CalibrationConfig::default()).is_err());
        let bad = Intrinsics { focal: 0.0, ..intrinsics() };
        let obs = synthetic(&truth, 5, 0.0, &mut rng);
        assert!(calibrate_extrinsics(&obs, bad, &truth, &CalibrationConfig::default()).is_err());
    }
}
