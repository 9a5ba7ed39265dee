use std::fs;
use std::path::Path;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::davis::{write_jpeg, write_mask_png};
use super::{write_flo, DataError, Domain, FrameSample, Split};
use crate::nn::{InitRng, Map};

/// Object silhouette, rendered from a signed-distance function so edges are
/// anti-aliased and rotation is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Square,
    Circle,
    Triangle,
}

/// Palette and texture statistics defining how a domain *looks*. Two styles
/// with the same motion statistics produce an appearance-only domain shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppearanceStyle {
    /// Mean background color (RGB in [0,1]).
    pub background_base: [f32; 3],
    /// Amplitude of the smooth background value-noise.
    pub background_contrast: f32,
    /// Object fill colors; moving objects and static distractors draw from
    /// the same palette so appearance alone cannot separate them.
    pub palette: Vec<[f32; 3]>,
    /// Per-pixel noise amplitude.
    pub noise: f32,
    /// Value-noise cell size in pixels.
    pub cell: usize,
}

impl Default for AppearanceStyle {
    fn default() -> Self {
        AppearanceStyle::source()
    }
}

impl AppearanceStyle {
    /// Warm palette on a greenish background; the labeled domain look.
    pub fn source() -> Self {
        AppearanceStyle {
            background_base: [0.36, 0.44, 0.34],
            background_contrast: 0.12,
            palette: vec![
                [0.85, 0.25, 0.20],
                [0.90, 0.65, 0.15],
                [0.80, 0.30, 0.60],
                [0.75, 0.20, 0.10],
            ],
            noise: 0.02,
            cell: 16,
        }
    }

    /// Cool palette on a bluish background; the unlabeled domain look.
    pub fn target() -> Self {
        AppearanceStyle {
            background_base: [0.24, 0.30, 0.50],
            background_contrast: 0.18,
            palette: vec![
                [0.20, 0.80, 0.80],
                [0.30, 0.40, 0.90],
                [0.15, 0.70, 0.40],
                [0.90, 0.85, 0.30],
            ],
            noise: 0.03,
            cell: 10,
        }
    }
}

/// Full description of one synthetic sequence; generation is a pure function
/// of this value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    /// Objects following the motion model; the ground-truth mask covers
    /// exactly the ones whose motion is nonzero.
    pub n_moving_objects: usize,
    /// Static objects drawn from the same appearance style, with zero flow
    /// and no mask coverage.
    pub n_static_distractors: usize,
    /// Per-object speed magnitude range in pixels/frame.
    pub speed_range: (f32, f32),
    /// Draw a per-object angular velocity as well.
    pub rotate: bool,
    /// Per-object size (half-extent) range in pixels.
    pub size_range: (f32, f32),
    /// Sequence length including frame 0 (the flow anchor); must be ≥ 2.
    pub frames: usize,
    /// Standard deviation of Gaussian speckle added to every flow value,
    /// mimicking estimation error. Zero keeps the analytic flow exact.
    pub flow_noise: f32,
    pub style: AppearanceStyle,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            height: 64,
            width: 64,
            n_moving_objects: 1,
            n_static_distractors: 0,
            speed_range: (1.0, 2.5),
            rotate: false,
            size_range: (7.0, 11.0),
            frames: 12,
            flow_noise: 0.0,
            style: AppearanceStyle::source(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.height < 16 || self.width < 16 {
            return Err(DataError::SpecInvalid(format!(
                "canvas {}x{} too small (minimum 16)",
                self.height, self.width
            )));
        }
        if self.n_moving_objects < 1 {
            return Err(DataError::SpecInvalid("need at least one moving object".into()));
        }
        if self.frames < 2 {
            return Err(DataError::SpecInvalid("sequence needs at least 2 frames".into()));
        }
        let (lo, hi) = self.size_range;
        if !(3.0..=hi).contains(&lo) {
            return Err(DataError::SpecInvalid(format!("bad size range ({lo}, {hi})")));
        }
        let (slo, shi) = self.speed_range;
        if slo < 0.0 || shi < slo {
            return Err(DataError::SpecInvalid(format!("bad speed range ({slo}, {shi})")));
        }
        if !self.flow_noise.is_finite() || self.flow_noise < 0.0 {
            return Err(DataError::SpecInvalid(format!("bad flow noise {}", self.flow_noise)));
        }
        let span = self.height.min(self.width) as f32;
        if 2.0 * (hi + 2.0) >= span {
            return Err(DataError::SpecInvalid(format!(
                "objects of size {hi} cannot fit a {span}-pixel canvas"
            )));
        }
        if self.style.palette.is_empty() {
            return Err(DataError::SpecInvalid("empty palette".into()));
        }
        Ok(())
    }
}

struct ObjectDef {
    shape: ShapeKind,
    color: [f32; 3],
    size: f32,
    center0: (f32, f32), // (x, y)
    velocity: (f32, f32),
    theta0: f32,
    omega: f32,
}

impl ObjectDef {
    fn is_moving(&self) -> bool {
        self.velocity.0 != 0.0 || self.velocity.1 != 0.0 || self.omega != 0.0
    }
}

#[derive(Clone, Copy)]
struct Pose {
    center: (f32, f32),
    theta: f32,
}

/// A rendered sequence: every frame and mask (including the anchor frame 0)
/// plus the derived samples for frames 1..n.
pub struct SyntheticSequence {
    pub images: Vec<Map<f32>>,
    /// Ground-truth masks for all frames, index-aligned with `images`.
    pub masks: Vec<Map<f32>>,
    /// Pixels covered by zero-motion objects, index-aligned with `images`;
    /// disjoint from `masks`. Lets evaluations measure false positives on
    /// distractor regions specifically.
    pub distractor_masks: Vec<Map<f32>>,
    pub samples: Vec<FrameSample>,
    pub sequence_id: String,
}

/// Renders the full sequence. Exposed (rather than just the samples) so
/// tests can warp frame pairs against the generated flow.
pub fn render_sequence(spec: &SyntheticSpec) -> Result<SyntheticSequence, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let background = render_background(spec, &mut rng);

    let n_total = spec.n_moving_objects + spec.n_static_distractors;
    let mut objects: Vec<ObjectDef> = Vec::with_capacity(n_total);
    for i in 0..n_total {
        let moving = i < spec.n_moving_objects;
        let obj = place_object(spec, &objects, moving, &mut rng)?;
        objects.push(obj);
    }

    // Per-object pose track with wall bounces, so any speed stays in-canvas.
    let tracks: Vec<Vec<Pose>> = objects.iter().map(|o| simulate(spec, o)).collect();

    let sequence_id = format!("seq-{:06}", spec.seed);
    let mut images = Vec::with_capacity(spec.frames);
    let mut masks = Vec::with_capacity(spec.frames);
    let mut distractor_masks = Vec::with_capacity(spec.frames);
    let mut owners: Vec<Vec<Option<usize>>> = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let (img, owner) = render_frame(spec, &background, &objects, &tracks, t);
        masks.push(owned_pixels(spec, &objects, &owner, true));
        distractor_masks.push(owned_pixels(spec, &objects, &owner, false));
        images.push(img);
        owners.push(owner);
    }

    let mut samples = Vec::with_capacity(spec.frames - 1);
    let mut speckle = (spec.flow_noise > 0.0).then(|| InitRng::new(rng.random::<u64>()));
    for t in 1..spec.frames {
        let mut flow = flow_of(spec, &objects, &tracks, &owners[t], t);
        if let Some(nrng) = speckle.as_mut() {
            for v in flow.iter_mut() {
                *v += spec.flow_noise * nrng.normal() as f32;
            }
        }
        samples.push(FrameSample {
            image: images[t].clone(),
            flow,
            mask: Some(masks[t].clone()),
            sequence_id: sequence_id.clone(),
            frame_index: t,
            domain: Domain::Source,
        });
    }
    Ok(SyntheticSequence { images, masks, distractor_masks, samples, sequence_id })
}

/// The samples of [`render_sequence`]; deterministic in the spec.
pub fn generate_synthetic_sequence(spec: &SyntheticSpec) -> Result<Vec<FrameSample>, DataError> {
    Ok(render_sequence(spec)?.samples)
}

fn render_background(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Map<f32> {
    let (h, w) = (spec.height, spec.width);
    let style = &spec.style;
    let cell = style.cell.max(2);
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let mut grid = vec![[0.0f32; 3]; gh * gw];
    for node in grid.iter_mut() {
        for (ch, g) in node.iter_mut().enumerate() {
            let jitter = (rng.random::<f32>() - 0.5) * 2.0 * style.background_contrast;
            *g = style.background_base[ch] + jitter;
        }
    }
    let mut img = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let fy = y as f32 / cell as f32;
            let fx = x as f32 / cell as f32;
            let (gy, gx) = (fy as usize, fx as usize);
            let (ty, tx) = (fy - gy as f32, fx - gx as f32);
            for ch in 0..3 {
                let g00 = grid[gy * gw + gx][ch];
                let g01 = grid[gy * gw + gx + 1][ch];
                let g10 = grid[(gy + 1) * gw + gx][ch];
                let g11 = grid[(gy + 1) * gw + gx + 1][ch];
                let v = g00 * (1.0 - ty) * (1.0 - tx)
                    + g01 * (1.0 - ty) * tx
                    + g10 * ty * (1.0 - tx)
                    + g11 * ty * tx;
                let n = (rng.random::<f32>() - 0.5) * 2.0 * style.noise;
                img[(y, x, ch)] = (v + n).clamp(0.02, 0.98);
            }
        }
    }
    img
}

fn place_object(
    spec: &SyntheticSpec,
    placed: &[ObjectDef],
    moving: bool,
    rng: &mut ChaCha8Rng,
) -> Result<ObjectDef, DataError> {
    let style = &spec.style;
    let shape = match rng.random_range(0..3) {
        0 => ShapeKind::Square,
        1 => ShapeKind::Circle,
        _ => ShapeKind::Triangle,
    };
    let mut color = style.palette[rng.random_range(0..style.palette.len())];
    let gain: f32 = rng.random_range(0.85..1.15);
    for c in color.iter_mut() {
        *c = (*c * gain).clamp(0.02, 0.98);
    }
    let size = rng.random_range(spec.size_range.0..=spec.size_range.1);
    let margin = size + 2.0;

    let mut center0 = None;
    for _ in 0..200 {
        let cx = rng.random_range(margin..spec.width as f32 - margin);
        let cy = rng.random_range(margin..spec.height as f32 - margin);
        let clear = placed.iter().all(|o| {
            let dx = o.center0.0 - cx;
            let dy = o.center0.1 - cy;
            (dx * dx + dy * dy).sqrt() > o.size + size + 2.0
        });
        if clear {
            center0 = Some((cx, cy));
            break;
        }
    }
    let center0 = center0.ok_or_else(|| {
        DataError::SpecInvalid(format!(
            "could not place {} objects on a {}x{} canvas",
            placed.len() + 1,
            spec.height,
            spec.width
        ))
    })?;

    let theta0 = rng.random_range(0.0..std::f32::consts::TAU);
    let (velocity, omega) = if moving {
        let speed = if spec.speed_range.1 > spec.speed_range.0 {
            rng.random_range(spec.speed_range.0..=spec.speed_range.1)
        } else {
            spec.speed_range.0
        };
        let dir = rng.random_range(0.0..std::f32::consts::TAU);
        let omega = if spec.rotate { rng.random_range(-0.12f32..0.12) } else { 0.0 };
        ((speed * dir.cos(), speed * dir.sin()), omega)
    } else {
        ((0.0, 0.0), 0.0)
    };
    Ok(ObjectDef { shape, color, size, center0, velocity, theta0, omega })
}

/// Advances an object frame by frame, reflecting the velocity at the canvas
/// walls so trajectories of any speed stay inside.
fn simulate(spec: &SyntheticSpec, obj: &ObjectDef) -> Vec<Pose> {
    let (lo_x, hi_x) = (obj.size + 1.0, spec.width as f32 - obj.size - 1.0);
    let (lo_y, hi_y) = (obj.size + 1.0, spec.height as f32 - obj.size - 1.0);
    let (mut x, mut y) = obj.center0;
    let (mut vx, mut vy) = obj.velocity;
    let mut theta = obj.theta0;
    let mut out = Vec::with_capacity(spec.frames);
    out.push(Pose { center: (x, y), theta });
    for _ in 1..spec.frames {
        x += vx;
        y += vy;
        if x < lo_x {
            x = 2.0 * lo_x - x;
            vx = -vx;
        } else if x > hi_x {
            x = 2.0 * hi_x - x;
            vx = -vx;
        }
        if y < lo_y {
            y = 2.0 * lo_y - y;
            vy = -vy;
        } else if y > hi_y {
            y = 2.0 * hi_y - y;
            vy = -vy;
        }
        theta += obj.omega;
        out.push(Pose { center: (x, y), theta });
    }
    out
}

/// Signed distance from a point in object-local coordinates to the shape
/// boundary; negative inside.
fn shape_sdf(shape: ShapeKind, size: f32, rx: f32, ry: f32) -> f32 {
    match shape {
        ShapeKind::Circle => (rx * rx + ry * ry).sqrt() - size,
        ShapeKind::Square => rx.abs().max(ry.abs()) - 0.82 * size,
        ShapeKind::Triangle => {
            // Equilateral triangle of circumradius `size`. Each edge's
            // outward normal is the negated direction of the opposite
            // vertex, at inradius distance from the center.
            let inradius = 0.5 * size;
            let mut sd = f32::NEG_INFINITY;
            for k in 0..3 {
                let ang = -std::f32::consts::FRAC_PI_2 + k as f32 * std::f32::consts::TAU / 3.0;
                let (vx, vy) = (ang.cos(), ang.sin());
                sd = sd.max(-(rx * vx + ry * vy) - inradius);
            }
            sd
        }
    }
}

fn coverage(obj: &ObjectDef, pose: &Pose, px: f32, py: f32) -> f32 {
    let dx = px - pose.center.0;
    let dy = py - pose.center.1;
    let (s, c) = (-pose.theta).sin_cos();
    let rx = c * dx - s * dy;
    let ry = s * dx + c * dy;
    (0.5 - shape_sdf(obj.shape, obj.size, rx, ry)).clamp(0.0, 1.0)
}

/// Renders one frame over the shared background. Distractors first, movers
/// on top. Returns the image and, per pixel, which object owns it (coverage
/// above one half; later-drawn objects override).
fn render_frame(
    spec: &SyntheticSpec,
    background: &Map<f32>,
    objects: &[ObjectDef],
    tracks: &[Vec<Pose>],
    t: usize,
) -> (Map<f32>, Vec<Option<usize>>) {
    let (h, w) = (spec.height, spec.width);
    let mut img = background.clone();
    let mut owner: Vec<Option<usize>> = vec![None; h * w];
    // Static distractors sit below the movers.
    let order = (spec.n_moving_objects..objects.len()).chain(0..spec.n_moving_objects);
    for i in order {
        let obj = &objects[i];
        let pose = &tracks[i][t];
        let reach = obj.size * 1.6 + 2.0;
        let x0 = (pose.center.0 - reach).floor().max(0.0) as usize;
        let x1 = ((pose.center.0 + reach).ceil() as usize).min(w - 1);
        let y0 = (pose.center.1 - reach).floor().max(0.0) as usize;
        let y1 = ((pose.center.1 + reach).ceil() as usize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let a = coverage(obj, pose, x as f32, y as f32);
                if a <= 0.0 {
                    continue;
                }
                for ch in 0..3 {
                    let under = img[(y, x, ch)];
                    img[(y, x, ch)] = a * obj.color[ch] + (1.0 - a) * under;
                }
                if a > 0.5 {
                    owner[y * w + x] = Some(i);
                }
            }
        }
    }
    (img, owner)
}

/// Analytic displacement of object `i` at pixel `p` between frames t-1 and
/// t: translation of the center plus the rigid rotation term.
fn displacement(tracks: &[Vec<Pose>], i: usize, t: usize, px: f32, py: f32) -> (f32, f32) {
    let cur = &tracks[i][t];
    let prev = &tracks[i][t - 1];
    let dx = px - cur.center.0;
    let dy = py - cur.center.1;
    let dtheta = cur.theta - prev.theta;
    let (s, c) = (-dtheta).sin_cos();
    let bx = c * dx - s * dy;
    let by = s * dx + c * dy;
    (px - (prev.center.0 + bx), py - (prev.center.1 + by))
}

fn flow_of(
    spec: &SyntheticSpec,
    objects: &[ObjectDef],
    tracks: &[Vec<Pose>],
    owner: &[Option<usize>],
    t: usize,
) -> Map<f32> {
    let (h, w) = (spec.height, spec.width);
    let mut flow = Array3::zeros((h, w, 2));
    for y in 0..h {
        for x in 0..w {
            if let Some(i) = owner[y * w + x] {
                if objects[i].is_moving() {
                    let (u, v) = displacement(tracks, i, t, x as f32, y as f32);
                    flow[(y, x, 0)] = u;
                    flow[(y, x, 1)] = v;
                }
            }
        }
    }
    flow
}

/// Binary map of pixels owned by moving objects (`moving = true`, the
/// ground-truth mask) or by zero-motion ones (`moving = false`, the
/// distractor regions). The two are disjoint by construction.
fn owned_pixels(
    spec: &SyntheticSpec,
    objects: &[ObjectDef],
    owner: &[Option<usize>],
    moving: bool,
) -> Map<f32> {
    let (h, w) = (spec.height, spec.width);
    let mut mask = Array3::zeros((h, w, 1));
    for y in 0..h {
        for x in 0..w {
            if let Some(i) = owner[y * w + x] {
                if objects[i].is_moving() == moving {
                    mask[(y, x, 0)] = 1.0;
                }
            }
        }
    }
    mask
}

/// Writes sequences to a DAVIS-style directory tree:
/// `JPEGImages/<id>/%05d.jpg`, `Annotations/<id>/%05d.png`,
/// `Flow/<id>/%05d.flo` (from frame 1), plus `ImageSets/{train,test}.txt`
/// and a `manifest.json` recording every spec. Output is byte-deterministic.
pub fn materialize_sequences(
    root: &Path,
    entries: &[(Split, SyntheticSpec)],
) -> Result<(), DataError> {
    #[derive(Serialize)]
    struct ManifestEntry<'a> {
        id: String,
        split: Split,
        spec: &'a SyntheticSpec,
    }

    let mut manifest = Vec::new();
    let mut splits: std::collections::BTreeMap<Split, Vec<String>> =
        std::collections::BTreeMap::new();
    splits.insert(Split::Train, Vec::new());
    splits.insert(Split::Test, Vec::new());

    for (split, spec) in entries {
        let seq = render_sequence(spec)?;
        let id = &seq.sequence_id;
        let img_dir = root.join("JPEGImages").join(id);
        let ann_dir = root.join("Annotations").join(id);
        let flow_dir = root.join("Flow").join(id);
        for dir in [&img_dir, &ann_dir, &flow_dir] {
            fs::create_dir_all(dir).map_err(|e| DataError::io(dir.clone(), e))?;
        }
        for (t, image) in seq.images.iter().enumerate() {
            write_jpeg(image, &img_dir.join(format!("{t:05}.jpg")))?;
        }
        // Frame 0 gets an annotation too but no flow: it is only the anchor.
        for (t, mask) in seq.masks.iter().enumerate() {
            write_mask_png(mask, &ann_dir.join(format!("{t:05}.png")))?;
        }
        for sample in &seq.samples {
            write_flo(&sample.flow, &flow_dir.join(format!("{:05}.flo", sample.frame_index)))?;
        }
        splits.get_mut(split).expect("both splits present").push(id.clone());
        manifest.push(ManifestEntry { id: id.clone(), split: *split, spec });
    }

    let sets = root.join("ImageSets");
    fs::create_dir_all(&sets).map_err(|e| DataError::io(sets.clone(), e))?;
    for (split, mut ids) in splits {
        ids.sort();
        let body = ids.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("\n");
        let path = sets.join(format!("{}.txt", split.file_stem()));
        fs::write(&path, body + "\n").map_err(|e| DataError::io(path.clone(), e))?;
    }
    let manifest_path = root.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, body).map_err(|e| DataError::io(manifest_path.clone(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checksum(samples: &[FrameSample]) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for s in samples {
            for v in s.image.iter().chain(s.flow.iter()) {
                v.to_bits().hash(&mut h);
            }
            for v in s.mask.as_ref().unwrap().iter() {
                v.to_bits().hash(&mut h);
            }
            s.frame_index.hash(&mut h);
        }
        h.finish()
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec { n_static_distractors: 2, seed: 5, ..SyntheticSpec::default() };
        let a = generate_synthetic_sequence(&spec).unwrap();
        let b = generate_synthetic_sequence(&spec).unwrap();
        assert_eq!(a.len(), b.len());
        assert_eq!(checksum(&a), checksum(&b));
        let c = generate_synthetic_sequence(&SyntheticSpec { seed: 6, ..spec }).unwrap();
        assert_ne!(checksum(&a), checksum(&c));
    }

    #[test]
    fn samples_validate_and_skip_frame_zero() {
        let spec = SyntheticSpec { frames: 6, n_static_distractors: 1, ..Default::default() };
        let samples = generate_synthetic_sequence(&spec).unwrap();
        assert_eq!(samples.len(), 5);
        for (i, s) in samples.iter().enumerate() {
            s.validate().unwrap();
            assert_eq!(s.frame_index, i + 1);
        }
    }

    #[test]
    fn zero_velocity_means_no_flow_and_empty_masks() {
        let spec = SyntheticSpec {
            speed_range: (0.0, 0.0),
            n_moving_objects: 2,
            seed: 3,
            ..Default::default()
        };
        for s in generate_synthetic_sequence(&spec).unwrap() {
            assert!(s.flow.iter().all(|&v| v == 0.0));
            assert!(s.mask.unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn moving_masks_are_nonempty_and_flow_lives_on_the_mask() {
        let spec = SyntheticSpec { n_static_distractors: 2, seed: 11, ..Default::default() };
        for s in generate_synthetic_sequence(&spec).unwrap() {
            let mask = s.mask.as_ref().unwrap();
            let moving_px: f32 = mask.iter().sum();
            assert!(moving_px > 20.0, "mask nearly empty: {moving_px}");
            for y in 0..spec.height {
                for x in 0..spec.width {
                    let has_flow = s.flow[(y, x, 0)] != 0.0 || s.flow[(y, x, 1)] != 0.0;
                    if has_flow {
                        assert_eq!(mask[(y, x, 0)], 1.0, "flow off-mask at ({y},{x})");
                    }
                }
            }
        }
    }

    #[test]
    fn flow_speckle_perturbs_flow_but_not_masks_or_images() {
        let clean = SyntheticSpec { seed: 4, ..Default::default() };
        let noisy = SyntheticSpec { flow_noise: 0.3, ..clean.clone() };
        let a = render_sequence(&clean).unwrap();
        let b = render_sequence(&noisy).unwrap();
        assert_eq!(a.images[1], b.images[1], "speckle must not touch images");
        assert_eq!(a.masks[1], b.masks[1], "speckle must not touch masks");
        let d0 = &b.samples[0].flow - &a.samples[0].flow;
        let n = d0.len() as f32;
        let mean = d0.sum() / n;
        let var = d0.mapv(|v| (v - mean) * (v - mean)).sum() / n;
        assert!(mean.abs() < 0.02, "speckle mean {mean}");
        assert!((var.sqrt() - 0.3).abs() < 0.02, "speckle sd {}", var.sqrt());
        assert!(matches!(
            generate_synthetic_sequence(&SyntheticSpec {
                flow_noise: -0.1,
                ..Default::default()
            }),
            Err(DataError::SpecInvalid(_))
        ));
    }

    #[test]
    fn distractor_masks_are_disjoint_from_ground_truth() {
        let spec = SyntheticSpec {
            n_static_distractors: 3,
            size_range: (5.0, 8.0),
            seed: 9,
            ..Default::default()
        };
        let seq = render_sequence(&spec).unwrap();
        assert_eq!(seq.distractor_masks.len(), seq.images.len());
        for (mask, dist) in seq.masks.iter().zip(&seq.distractor_masks) {
            let overlap: f32 = (mask * dist).sum();
            assert_eq!(overlap, 0.0, "a pixel is both moving and distractor");
            let dist_px: f32 = dist.sum();
            assert!(dist_px > 20.0, "distractors nearly invisible: {dist_px}");
        }
    }

    #[test]
    fn overcrowded_canvas_is_rejected() {
        let spec = SyntheticSpec {
            height: 24,
            width: 24,
            n_moving_objects: 6,
            size_range: (8.0, 9.0),
            ..Default::default()
        };
        match generate_synthetic_sequence(&spec) {
            Err(DataError::SpecInvalid(_)) => {}
            other => panic!("expected SpecInvalid, got {:?}", other.map(|v| v.len())),
        }
    }

    #[test]
    fn zero_movers_is_rejected() {
        let spec = SyntheticSpec { n_moving_objects: 0, ..Default::default() };
        assert!(matches!(
            generate_synthetic_sequence(&spec),
            Err(DataError::SpecInvalid(_))
        ));
    }

    #[test]
    fn rotation_produces_nonuniform_flow() {
        let spec = SyntheticSpec {
            rotate: true,
            speed_range: (0.5, 1.0),
            size_range: (9.0, 11.0),
            seed: 21,
            ..Default::default()
        };
        let samples = generate_synthetic_sequence(&spec).unwrap();
        let s = &samples[1];
        let mut values = std::collections::BTreeSet::new();
        for y in 0..spec.height {
            for x in 0..spec.width {
                if s.mask.as_ref().unwrap()[(y, x, 0)] == 1.0 {
                    values.insert((s.flow[(y, x, 0)].to_bits(), s.flow[(y, x, 1)].to_bits()));
                }
            }
        }
        assert!(values.len() > 4, "rigid rotation varies flow across the object");
    }
}
