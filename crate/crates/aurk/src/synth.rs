//! Synthetic face dataset generation.
//!
//! Frames are parametric frontal faces: a canonical 68-point landmark
//! template, scaled and jittered per frame, plus images in which each active
//! AU paints a distinctive texture inside that AU's group region. Labels
//! follow planted run-length segments so duration statistics can be
//! recovered exactly. Everything is a pure function of the seed.

use crate::au_table::AUPartitionTable;
use crate::error::Result;
use crate::labels::ImageLabel;
use crate::landmarks::Landmarks68;
use crate::layout::{derive_points, partition_basic_rois, OwnerMap, BASIC_ROI_COUNT};
use crate::rng::Rng;

/// Canonical 68-point frontal face, iBUG numbering, in face-box coordinates
/// ([0,1] square, y down).
#[rustfmt::skip]
const TEMPLATE: [(f64, f64); 68] = [
    // jaw 1..17
    (0.030, 0.280), (0.048, 0.410), (0.075, 0.535), (0.110, 0.655), (0.165, 0.763),
    (0.240, 0.855), (0.330, 0.927), (0.413, 0.975), (0.500, 0.990), (0.587, 0.975),
    (0.670, 0.927), (0.760, 0.855), (0.835, 0.763), (0.890, 0.655), (0.925, 0.535),
    (0.952, 0.410), (0.970, 0.280),
    // left brow 18..22
    (0.115, 0.190), (0.185, 0.155), (0.265, 0.145), (0.345, 0.160), (0.410, 0.190),
    // right brow 23..27
    (0.590, 0.190), (0.655, 0.160), (0.735, 0.145), (0.815, 0.155), (0.885, 0.190),
    // nose bridge 28..31, base 32..36
    (0.500, 0.245), (0.500, 0.320), (0.500, 0.395), (0.500, 0.470),
    (0.410, 0.540), (0.455, 0.555), (0.500, 0.565), (0.545, 0.555), (0.590, 0.540),
    // left eye 37..42
    (0.170, 0.265), (0.225, 0.240), (0.290, 0.240), (0.345, 0.265), (0.290, 0.290),
    (0.225, 0.290),
    // right eye 43..48
    (0.655, 0.265), (0.710, 0.240), (0.775, 0.240), (0.830, 0.265), (0.775, 0.290),
    (0.710, 0.290),
    // mouth outer 49..60
    (0.335, 0.725), (0.395, 0.695), (0.455, 0.678), (0.500, 0.685), (0.545, 0.678),
    (0.605, 0.695), (0.665, 0.725), (0.605, 0.775), (0.545, 0.805), (0.500, 0.812),
    (0.455, 0.805), (0.395, 0.775),
    // mouth inner 61..68
    (0.365, 0.725), (0.455, 0.712), (0.500, 0.717), (0.545, 0.712), (0.635, 0.725),
    (0.545, 0.758), (0.500, 0.763), (0.455, 0.758),
];

/// Place the canonical face into an image. `scale` is the face-box size as
/// a fraction of the smaller image side; the face box is centered at
/// (cx_frac * width, cy_frac * height).
pub fn template_landmarks(
    width: u32,
    height: u32,
    scale: f64,
    cx_frac: f64,
    cy_frac: f64,
) -> Landmarks68 {
    let size = scale * width.min(height) as f64;
    let ox = cx_frac * width as f64 - size / 2.0;
    let oy = cy_frac * height as f64 - size / 2.0;
    let pts = TEMPLATE
        .iter()
        .map(|&(x, y)| (ox + x * size, oy + y * size))
        .collect();
    Landmarks68::new(pts, width, height).expect("template landmarks are valid")
}

/// Fixed per-subject face geometry.
#[derive(Debug, Clone, Copy)]
pub struct FaceParams {
    pub scale: f64,
    pub cx_frac: f64,
    pub cy_frac: f64,
    pub aspect: f64,
    pub point_noise: f64,
}

impl FaceParams {
    pub fn sample(rng: &mut Rng) -> FaceParams {
        FaceParams {
            scale: rng.uniform(0.56, 0.68),
            cx_frac: rng.uniform(0.46, 0.54),
            cy_frac: rng.uniform(0.48, 0.56),
            aspect: rng.uniform(0.95, 1.05),
            point_noise: 0.004,
        }
    }
}

/// A valid random frontal-face landmark set: subject geometry plus
/// small per-point jitter.
pub fn jittered_landmarks(rng: &mut Rng, width: u32, height: u32, fp: &FaceParams) -> Landmarks68 {
    let size = fp.scale * width.min(height) as f64;
    let w_size = size * fp.aspect;
    let ox = fp.cx_frac * width as f64 - w_size / 2.0;
    let oy = fp.cy_frac * height as f64 - size / 2.0;
    let noise = fp.point_noise * size;
    let pts = TEMPLATE
        .iter()
        .map(|&(x, y)| {
            (
                ox + x * w_size + rng.normal() * noise,
                oy + y * size + rng.normal() * noise,
            )
        })
        .collect();
    Landmarks68::new(pts, width, height).expect("jittered landmarks stay in bounds")
}

/// A random valid landmark set with its own random subject geometry.
pub fn random_landmarks(rng: &mut Rng, width: u32, height: u32) -> Landmarks68 {
    let fp = FaceParams::sample(rng);
    jittered_landmarks(rng, width, height, &fp)
}

/// Generation parameters for one dataset split.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub frames: usize,
    pub video_len: usize,
    pub resolution: u32,
    pub channels: usize,
    /// Per-AU fraction of active frames the gap sampling aims for.
    pub base_rate: f64,
    /// Optional per-AU-column overrides of `base_rate` (0 disables an AU).
    pub base_rates: Vec<f64>,
    /// Planted activity segments are exactly this many frames long, so
    /// duration statistics recover the parameter exactly.
    pub segment_len: usize,
    /// Spread of segment lengths across AU columns (0 = uniform).
    pub duration_spread: f64,
    /// Relative jitter on the gaps between segments.
    pub gap_jitter: f64,
    pub texture_amp: f64,
    pub noise: f64,
    pub seed: u64,
}

/// A generated split held in memory.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub frame_ids: Vec<String>,
    pub landmarks: Vec<Landmarks68>,
    pub labels: Vec<ImageLabel>,
    /// u8 planar frames, `frames * channels * res * res`.
    pub images: Vec<u8>,
    pub resolution: u32,
    pub channels: usize,
}

/// Plant activity segments for one AU over one video: segments of exactly
/// `segment_len` frames separated by jittered gaps sized to approach
/// `base_rate`.
fn plant_segments(timeline: &mut [u8], seg: usize, rate: f64, spec: &SynthSpec, rng: &mut Rng) {
    if rate <= 0.0 || seg == 0 {
        return;
    }
    let gap_mean = (seg as f64 * (1.0 - rate) / rate).max(1.0);
    let mut pos = (gap_mean * rng.next_f64()) as usize;
    while pos + seg <= timeline.len() {
        for slot in &mut timeline[pos..pos + seg] {
            *slot = 1;
        }
        pos += seg;
        let jitter = rng.uniform(1.0 - spec.gap_jitter, 1.0 + spec.gap_jitter);
        pos += (gap_mean * jitter).round().max(1.0) as usize;
    }
}

/// Segment length for one AU column under the configured spread.
fn segment_len_for(spec: &SynthSpec, col: usize, label_count: usize) -> usize {
    if spec.duration_spread == 0.0 || label_count < 2 {
        return spec.segment_len;
    }
    let t = 2.0 * col as f64 / (label_count - 1) as f64 - 1.0;
    ((spec.segment_len as f64) * (1.0 + spec.duration_spread * t))
        .round()
        .max(1.0) as usize
}

/// Deterministic per-pixel noise in [-1, 1].
fn pixel_noise(seed: u64, x: u32, y: u32, c: usize) -> f64 {
    let mut h = seed ^ (x as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    h ^= (y as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    h ^= (c as u64).wrapping_mul(0x1656_67b1_9e37_79f9);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    ((h >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
}

/// The texture signature of AU column `col`: channel, orientation and
/// frequency of a sinusoidal stripe pattern. The phase varies per frame so
/// the classifier must detect the pattern rather than memorize a fixed
/// pixel layout.
fn au_texture(col: usize, channels: usize, frame_seed: u64) -> (usize, f64, f64, f64) {
    let channel = col % channels;
    let theta = 0.35 + col as f64 * 0.7;
    let freq = 0.7 + 0.25 * (col % 4) as f64;
    let mut h = frame_seed ^ (col as u64).wrapping_mul(0xa076_1d64_78bd_642f);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    let phase = (h >> 11) as f64 / (1u64 << 53) as f64 * std::f64::consts::TAU;
    (channel, theta, freq, phase)
}

/// Render one frame: noisy background plus, per active AU, its stripe
/// pattern painted inside that AU's own group mask.
pub fn render_frame(
    lm: &Landmarks68,
    label: &ImageLabel,
    table: &AUPartitionTable,
    spec: &SynthSpec,
    frame_seed: u64,
) -> Result<Vec<u8>> {
    let res = spec.resolution;
    let dp = derive_points(lm);
    let rois = partition_basic_rois(lm, &dp)?;
    let owner = OwnerMap::build(&rois, res, res);
    // roi -> active AU columns painting it (via the AU's own group)
    let mut roi_patterns: Vec<Vec<usize>> = vec![Vec::new(); BASIC_ROI_COUNT + 1];
    for (col, &au) in table.aus.iter().enumerate() {
        if label.get(col) == 0 {
            continue;
        }
        for g in &table.groups {
            if g.au_list.contains(&au) {
                for &r in &g.roi_list {
                    roi_patterns[r as usize].push(col);
                }
            }
        }
    }
    let mut out = vec![0u8; spec.channels * (res as usize) * (res as usize)];
    let plane = (res as usize) * (res as usize);
    for py in 0..res {
        for px in 0..res {
            let pidx = py as usize * res as usize + px as usize;
            let roi = owner.owner_of(px, py) as usize;
            for c in 0..spec.channels {
                let mut v = 0.45
                    + spec.noise * pixel_noise(frame_seed, px, py, c)
                    + 0.03 * ((px as f64) * 0.05).sin() * ((py as f64) * 0.04).cos();
                for &col in &roi_patterns[roi] {
                    let (ch, theta, freq, phase) = au_texture(col, spec.channels, frame_seed);
                    if ch == c {
                        let u = px as f64 * theta.cos() + py as f64 * theta.sin();
                        v += spec.texture_amp * (freq * u + phase).sin();
                    }
                }
                out[c * plane + pidx] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    Ok(out)
}

/// Generate a full split. Same spec and seed give bit-identical output.
pub fn generate(spec: &SynthSpec, table: &AUPartitionTable) -> Result<SynthDataset> {
    let root = Rng::new(spec.seed);
    let l = table.label_count();
    let mut frame_ids = Vec::with_capacity(spec.frames);
    let mut landmarks = Vec::with_capacity(spec.frames);
    let mut labels = Vec::with_capacity(spec.frames);
    let mut images =
        Vec::with_capacity(spec.frames * spec.channels * (spec.resolution as usize).pow(2));
    let video_len = spec.video_len.max(1);
    let videos = spec.frames.div_ceil(video_len);
    let mut frame_no = 0usize;
    for v in 0..videos {
        let len = video_len.min(spec.frames - v * video_len);
        let mut vrng = root.fork(1000 + v as u64);
        let fp = FaceParams::sample(&mut vrng);
        // per-AU timelines for this video
        let mut timelines = vec![vec![0u8; len]; l];
        for (col, line) in timelines.iter_mut().enumerate() {
            let mut srng = vrng.fork(31 + col as u64);
            plant_segments(
                line,
                segment_len_for(spec, col, l),
                spec.base_rates.get(col).copied().unwrap_or(spec.base_rate),
                spec,
                &mut srng,
            );
        }
        let mut jrng = vrng.fork(77);
        for f in 0..len {
            let lm = jittered_landmarks(&mut jrng, spec.resolution, spec.resolution, &fp);
            let label = ImageLabel::new((0..l).map(|col| timelines[col][f]).collect());
            let img = render_frame(
                &lm,
                &label,
                table,
                spec,
                spec.seed ^ (frame_no as u64) << 17,
            )?;
            frame_ids.push(format!("v{v:03}_f{f:05}"));
            landmarks.push(lm);
            labels.push(label);
            images.extend(img);
            frame_no += 1;
        }
    }
    Ok(SynthDataset {
        frame_ids,
        landmarks,
        labels,
        images,
        resolution: spec.resolution,
        channels: spec.channels,
    })
}

impl SynthDataset {
    pub fn frames(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn image_bytes(&self, i: usize) -> &[u8] {
        let plane = self.channels * (self.resolution as usize).pow(2);
        &self.images[i * plane..(i + 1) * plane]
    }
}
