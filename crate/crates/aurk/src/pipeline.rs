//! Pipeline orchestration: dataset files, training loops for the static and
//! dynamic models, inference, and report emission.
//!
//! Dataset directory layout:
//!
//! ```text
//! <dir>/manifest.v1     key = value: resolution, channels, frames, dataset
//! <dir>/landmarks.csv   frame_id,x0,y0,...,x67,y67,width,height
//! <dir>/labels.csv      frame_id,au_<n>,...
//! <dir>/images.bin      u8 planar frames, frames * channels * res * res
//! <dir>/flow/<frame_id>.flo2   per-frame 2-channel flow (written by synth)
//! <dir>/cache/boxes.v1.csv     per-frame AU boxes (written by partition)
//! ```

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::au_table::{
    scale_box_to_feature, AUPartitionTable, AreaAccumulator, AuBox, MeanBoxAccumulator,
    MeanBoxTable, Space,
};
use crate::cache::{self, BoxCache, CacheOutcome};
use crate::config::{DynamicMode, RunConfig};
use crate::dynamic::{window_frames, window_span, window_starts};
use crate::error::{Error, Result};
use crate::eval::{correlation_report, DurationStats, EvalReport, F1Accumulator};
use crate::labels::{
    assign_roi_labels, binarize_logits, merge_roi_predictions, read_label_file, write_label_file,
    ImageLabel,
};
use crate::landmarks::{read_landmark_file, write_landmark_file, Landmarks68};
use crate::model::{
    Backbone, BackboneGrads, Checkpoint, CheckpointMeta, ConvLstmGrads, ConvLstmHead, StaticModel,
    TwoStreamModel,
};
use crate::nn::{
    lr_schedule, preprocess, roi_pool_backward, roi_pool_forward, sigmoid_ce_loss, RoiSpec,
    SgdMomentum,
};
use crate::rng::Rng;
use crate::synth::{generate, SynthDataset, SynthSpec};
use crate::tensor::Tensor4;

// --- dataset files -----------------------------------------------------------

pub const FLOW_MAGIC: &[u8; 4] = b"AUFL";

/// Write one per-frame flow file: magic, dims, dtype (1 = f32), scale, then
/// 2 x h x w little-endian f32 planes (x then y).
pub fn write_flow_file(
    path: &Path,
    width: u32,
    height: u32,
    scale: f64,
    data: &[f32],
) -> Result<()> {
    if data.len() != 2 * (width as usize) * (height as usize) {
        return Err(Error::Shape("flow data must be 2 x h x w".into()));
    }
    let mut buf = Vec::with_capacity(21 + data.len() * 4);
    buf.extend(FLOW_MAGIC);
    buf.extend(width.to_le_bytes());
    buf.extend(height.to_le_bytes());
    buf.push(1u8);
    buf.extend(scale.to_le_bytes());
    for v in data {
        buf.extend(v.to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_flow_file(path: &Path) -> Result<(u32, u32, f64, Vec<f32>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 21 || &bytes[0..4] != FLOW_MAGIC {
        return Err(Error::Format(format!(
            "not a flow file: {}",
            path.display()
        )));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if bytes[12] != 1 {
        return Err(Error::Format("unsupported flow dtype".into()));
    }
    let scale = f64::from_le_bytes(bytes[13..21].try_into().unwrap());
    let expected = 2 * width as usize * height as usize;
    let raw = &bytes[21..];
    if raw.len() != expected * 4 {
        return Err(Error::Format("flow file size mismatch".into()));
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((width, height, scale, data))
}

/// A dataset split loaded into memory.
pub struct Dataset {
    pub dir: PathBuf,
    pub frame_ids: Vec<String>,
    pub landmarks: Vec<Landmarks68>,
    pub landmark_text: String,
    pub labels: Vec<ImageLabel>,
    pub resolution: u32,
    pub channels: usize,
    images: Vec<u8>,
    flows: Option<Vec<Vec<f32>>>,
}

impl Dataset {
    pub fn load(dir: &Path, table: &AUPartitionTable, need_flow: bool) -> Result<Dataset> {
        let manifest = std::fs::read_to_string(dir.join("manifest.v1"))
            .map_err(|_| Error::Format(format!("no dataset manifest in {}", dir.display())))?;
        let mut resolution = 0u32;
        let mut channels = 0usize;
        let mut frames = 0usize;
        for line in manifest.lines().skip(1) {
            if let Some((k, v)) = line.split_once('=') {
                match k.trim() {
                    "resolution" => resolution = v.trim().parse().unwrap_or(0),
                    "channels" => channels = v.trim().parse().unwrap_or(0),
                    "frames" => frames = v.trim().parse().unwrap_or(0),
                    _ => {}
                }
            }
        }
        if resolution == 0 || channels == 0 {
            return Err(Error::Format("manifest missing resolution/channels".into()));
        }
        let landmark_text = std::fs::read_to_string(dir.join("landmarks.csv"))?;
        let records = read_landmark_file(&landmark_text)?;
        let label_text = std::fs::read_to_string(dir.join("labels.csv"))?;
        let (aus, label_rows) = read_label_file(&label_text)?;
        if aus != table.aus {
            return Err(Error::Shape(format!(
                "label file AUs {aus:?} do not match the {} table",
                table.dataset
            )));
        }
        if records.len() != label_rows.len() {
            return Err(Error::Shape(format!(
                "{} landmark records vs {} label rows",
                records.len(),
                label_rows.len()
            )));
        }
        let mut frame_ids = Vec::with_capacity(records.len());
        let mut landmarks = Vec::with_capacity(records.len());
        let mut labels = Vec::with_capacity(records.len());
        for ((lid, lm), (bid, label)) in records.into_iter().zip(label_rows) {
            if lid != bid {
                return Err(Error::Shape(format!(
                    "frame order mismatch: landmarks {lid} vs labels {bid}"
                )));
            }
            frame_ids.push(lid);
            landmarks.push(lm);
            labels.push(label);
        }
        if frames != 0 && frames != frame_ids.len() {
            return Err(Error::Format("manifest frame count mismatch".into()));
        }
        let mut images = Vec::new();
        std::fs::File::open(dir.join("images.bin"))?.read_to_end(&mut images)?;
        let plane = channels * (resolution as usize) * (resolution as usize);
        if images.len() != plane * frame_ids.len() {
            return Err(Error::Format(format!(
                "images.bin holds {} bytes, expected {}",
                images.len(),
                plane * frame_ids.len()
            )));
        }
        let flows = if need_flow {
            let mut all = Vec::with_capacity(frame_ids.len());
            for id in &frame_ids {
                let (w, h, _, data) = read_flow_file(&dir.join("flow").join(format!("{id}.flo2")))?;
                if w != resolution || h != resolution {
                    return Err(Error::Shape("flow resolution mismatch".into()));
                }
                all.push(data);
            }
            Some(all)
        } else {
            None
        };
        Ok(Dataset {
            dir: dir.to_path_buf(),
            frame_ids,
            landmarks,
            landmark_text,
            labels,
            resolution,
            channels,
            images,
            flows,
        })
    }

    pub fn frames(&self) -> usize {
        self.frame_ids.len()
    }

    /// Frame as (1, C, H, W) f64 in [0, 1].
    pub fn image_tensor(&self, i: usize) -> Tensor4 {
        let res = self.resolution as usize;
        let plane = self.channels * res * res;
        let raw = &self.images[i * plane..(i + 1) * plane];
        let data = raw.iter().map(|&b| b as f64 / 255.0).collect();
        Tensor4::from_vec(1, self.channels, res, res, data).expect("image size checked at load")
    }

    /// Channel-wise mean over all frames, in [0, 1] units.
    pub fn mean_pixel(&self) -> Vec<f64> {
        let res = self.resolution as usize;
        let plane = res * res;
        let mut sums = vec![0.0f64; self.channels];
        for i in 0..self.frames() {
            let raw = &self.images[i * self.channels * plane..(i + 1) * self.channels * plane];
            for (c, sum) in sums.iter_mut().enumerate() {
                let mut acc = 0.0;
                for &b in &raw[c * plane..(c + 1) * plane] {
                    acc += b as f64;
                }
                *sum += acc / 255.0;
            }
        }
        let n = (self.frames() * plane) as f64;
        sums.iter().map(|s| s / n).collect()
    }

    /// Contiguous (start, len) runs of frames belonging to one video,
    /// grouped by the frame-id prefix before '_'.
    pub fn videos(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0usize;
        for i in 1..=self.frames() {
            let boundary = i == self.frames()
                || self.frame_ids[i].split('_').next() != self.frame_ids[start].split('_').next();
            if boundary {
                out.push((start, i - start));
                start = i;
            }
        }
        out
    }

    /// 10-frame flow stack centered on frame `i` (bounded by the video),
    /// as a (1, 20, H, W) tensor.
    pub fn flow_stack(&self, i: usize, video: (usize, usize)) -> Result<Tensor4> {
        let flows = self
            .flows
            .as_ref()
            .ok_or_else(|| Error::Format("dataset loaded without flow".into()))?;
        let res = self.resolution as usize;
        let plane = 2 * res * res;
        let (vstart, vlen) = video;
        let mut data = Vec::with_capacity(10 * plane);
        for off in -4i64..=5 {
            let j = (i as i64 + off).clamp(vstart as i64, (vstart + vlen - 1) as i64) as usize;
            data.extend(flows[j].iter().map(|&v| v as f64));
        }
        Tensor4::from_vec(1, 20, res, res, data)
    }
}

/// Persist a generated split in the documented layout, including toy flow
/// files (frame-difference proxy for precomputed optical flow).
pub fn write_dataset(dir: &Path, ds: &SynthDataset, table: &AUPartitionTable) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = format!(
        "aurk-dataset v1\ndataset = {}\nresolution = {}\nchannels = {}\nframes = {}\n",
        table.dataset,
        ds.resolution,
        ds.channels,
        ds.frames()
    );
    std::fs::write(dir.join("manifest.v1"), manifest)?;
    let records: Vec<(String, Landmarks68)> = ds
        .frame_ids
        .iter()
        .cloned()
        .zip(ds.landmarks.iter().cloned())
        .collect();
    std::fs::write(dir.join("landmarks.csv"), write_landmark_file(&records))?;
    let label_rows: Vec<(String, ImageLabel)> = ds
        .frame_ids
        .iter()
        .cloned()
        .zip(ds.labels.iter().cloned())
        .collect();
    std::fs::write(dir.join("labels.csv"), write_label_file(table, &label_rows))?;
    let mut f = std::fs::File::create(dir.join("images.bin"))?;
    f.write_all(&ds.images)?;
    // toy flow: luminance difference to the previous frame of the video
    let flow_dir = dir.join("flow");
    std::fs::create_dir_all(&flow_dir)?;
    let res = ds.resolution as usize;
    let plane = res * res;
    let gray = |i: usize| -> Vec<f32> {
        let raw = ds.image_bytes(i);
        (0..plane)
            .map(|p| {
                let mut acc = 0.0f32;
                for c in 0..ds.channels {
                    acc += raw[c * plane + p] as f32;
                }
                acc / (255.0 * ds.channels as f32)
            })
            .collect()
    };
    let mut prev_video = String::new();
    let mut prev_gray: Vec<f32> = Vec::new();
    for i in 0..ds.frames() {
        let video = ds.frame_ids[i].split('_').next().unwrap_or("").to_string();
        let cur = gray(i);
        let mut flow = vec![0.0f32; 2 * plane];
        if video == prev_video {
            for p in 0..plane {
                let d = cur[p] - prev_gray[p];
                flow[p] = d;
                flow[plane + p] = -d;
            }
        }
        write_flow_file(
            &flow_dir.join(format!("{}.flo2", ds.frame_ids[i])),
            ds.resolution,
            ds.resolution,
            1.0,
            &flow,
        )?;
        prev_video = video;
        prev_gray = cur;
    }
    Ok(())
}

// --- commands ----------------------------------------------------------------

/// Generate train/ and test/ splits under `out_dir`.
pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let table = cfg.table()?;
    let base = SynthSpec {
        frames: cfg.synth_frames,
        video_len: cfg.synth_video_len,
        resolution: cfg.resolution,
        channels: cfg.channels,
        base_rate: cfg.synth_base_rate,
        base_rates: cfg.synth_base_rates.clone(),
        segment_len: cfg.synth_segment_len,
        duration_spread: cfg.synth_duration_spread,
        gap_jitter: cfg.synth_gap_jitter,
        texture_amp: cfg.synth_texture_amp,
        noise: cfg.synth_noise,
        seed: cfg.seed,
    };
    let train = generate(&base, table)?;
    write_dataset(&out_dir.join("train"), &train, table)?;
    let test_spec = SynthSpec {
        frames: cfg.synth_test_frames,
        // held-out subjects: a disjoint seed stream drives face geometry
        seed: cfg.seed ^ 0x5eed_7e57_0000_0001,
        ..base
    };
    let test = generate(&test_spec, table)?;
    write_dataset(&out_dir.join("test"), &test, table)?;
    Ok(())
}

/// Small palette for overlays, one color per AU group id.
const GROUP_COLORS: [(u8, u8, u8); 9] = [
    (120, 120, 120),
    (214, 69, 65),
    (68, 108, 179),
    (38, 166, 91),
    (244, 179, 80),
    (155, 89, 182),
    (54, 215, 183),
    (242, 121, 53),
    (190, 144, 212),
];

/// Run the partition step: compute (or reuse) the per-frame box cache and
/// write the box table; optionally render group-mask overlays for audit.
pub fn cmd_partition(cfg: &RunConfig, data_dir: &Path, overlays: bool) -> Result<CacheOutcome> {
    let table = cfg.table()?;
    let table_text = crate::au_table::builtin_table_text(&cfg.dataset)?;
    let landmark_text = std::fs::read_to_string(data_dir.join("landmarks.csv"))?;
    let records = read_landmark_file(&landmark_text)?;
    let (cache, outcome) =
        cache::load_or_compute(data_dir, &landmark_text, &records, table, table_text)?;
    if overlays {
        let overlay_dir = data_dir.join("overlays");
        std::fs::create_dir_all(&overlay_dir)?;
        for (frame_id, lm) in records.iter().take(8) {
            let dp = crate::layout::derive_points(lm);
            let rois = crate::layout::partition_basic_rois(lm, &dp)
                .map_err(|e| Error::Format(format!("frame {frame_id}: {e}")))?;
            let owner = crate::layout::OwnerMap::build(&rois, lm.image_width(), lm.image_height());
            let roi_groups = table.roi_to_groups();
            let (w, h) = (lm.image_width(), lm.image_height());
            let mut ppm = format!("P6\n{w} {h}\n255\n").into_bytes();
            for py in 0..h {
                for px in 0..w {
                    let roi = owner.owner_of(px, py) as usize;
                    let color = roi_groups[roi]
                        .first()
                        .map(|&g| GROUP_COLORS[g as usize % GROUP_COLORS.len()])
                        .unwrap_or((40, 40, 40));
                    ppm.extend([color.0, color.1, color.2]);
                }
            }
            std::fs::write(overlay_dir.join(format!("{frame_id}.ppm")), ppm)?;
        }
    }
    let _ = cache;
    Ok(outcome)
}

fn load_box_cache(data_dir: &Path, ds: &Dataset) -> Result<Vec<Vec<AuBox>>> {
    let cache = BoxCache::load(data_dir)?.ok_or_else(|| {
        Error::Format(format!(
            "no box cache under {}; run `aurk partition` on this dataset first",
            data_dir.display()
        ))
    })?;
    if cache.frames.len() != ds.frames() {
        return Err(Error::Shape(format!(
            "box cache has {} frames, dataset has {}; rerun `aurk partition`",
            cache.frames.len(),
            ds.frames()
        )));
    }
    let mut out = Vec::with_capacity(ds.frames());
    for ((cid, boxes), did) in cache.frames.into_iter().zip(&ds.frame_ids) {
        if &cid != did {
            return Err(Error::Shape(format!(
                "box cache frame {cid} does not match dataset frame {did}"
            )));
        }
        out.push(boxes);
    }
    Ok(out)
}

fn mean_boxes_from(table: &AUPartitionTable, per_frame: &[Vec<AuBox>]) -> Result<MeanBoxTable> {
    let mut acc = MeanBoxAccumulator::new(table);
    for boxes in per_frame {
        acc.add_frame(boxes)?;
    }
    acc.finish()
}

fn mean_box_vec(table: &AUPartitionTable, mb: &MeanBoxTable) -> Vec<f64> {
    let mut out = Vec::with_capacity(table.row_count() * 4);
    for b in &mb.boxes {
        let (a, c, d, e) = b.coords();
        out.extend([a, c, d, e]);
    }
    out
}

fn mean_boxes_from_meta(table: &AUPartitionTable, meta: &CheckpointMeta) -> Result<Vec<AuBox>> {
    let slots = table.rows();
    if meta.mean_boxes.len() != slots.len() * 4 {
        return Err(Error::Version(
            "checkpoint carries no mean boxes for this table".into(),
        ));
    }
    slots
        .iter()
        .enumerate()
        .map(|(i, &(gid, side))| {
            let c = &meta.mean_boxes[i * 4..(i + 1) * 4];
            AuBox::new(gid, side, (c[0], c[1], c[2], c[3]), Space::Image)
        })
        .collect()
}

/// Per-iteration loss log row.
#[derive(Debug, Clone, Copy)]
pub struct LossPoint {
    pub epoch: u32,
    pub iter: usize,
    pub loss: f64,
}

#[derive(Debug)]
pub struct TrainArtifacts {
    pub checkpoint_path: PathBuf,
    pub losses: Vec<LossPoint>,
}

fn write_loss_log(path: &Path, losses: &[LossPoint]) -> Result<()> {
    let mut s = String::from("epoch,iter,loss\n");
    for p in losses {
        s.push_str(&format!("{},{},{}\n", p.epoch, p.iter, p.loss));
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Scale gradient slices so their global L2 norm stays within `clip`.
fn clip_global_norm(slices: &[&[f64]], clip: f64) -> f64 {
    if clip <= 0.0 {
        return 1.0;
    }
    let norm_sq: f64 = slices
        .iter()
        .flat_map(|s| s.iter())
        .map(|v| v * v)
        .sum();
    let norm = norm_sq.sqrt();
    if norm > clip {
        clip / norm
    } else {
        1.0
    }
}

/// Step schedule: the published recipe (x0.1 every 10 epochs) goes through
/// `lr_schedule`; other decay settings use the same shape generalized.
fn effective_lr(cfg: &RunConfig, epoch: u32) -> f64 {
    if cfg.lr_decay_every == 10 && (cfg.lr_decay_factor - 0.1).abs() < 1e-12 {
        lr_schedule(cfg.lr, epoch)
    } else {
        cfg.lr
            * cfg
                .lr_decay_factor
                .powi((epoch / cfg.lr_decay_every.max(1)) as i32)
    }
}

/// One image's contribution: loss and gradients.
struct StaticItemResult {
    loss: f64,
    grads: crate::model::StaticGrads,
}

fn static_item(
    model: &StaticModel,
    ds: &Dataset,
    boxes: &[AuBox],
    targets: &[f64],
    idx: usize,
    mirror: bool,
    mean_pixel: &[f64],
    stride: u32,
) -> Result<StaticItemResult> {
    let img = ds.image_tensor(idx);
    let (img, boxes) = preprocess(&img, boxes, mirror, mean_pixel)?;
    let feat_boxes: Vec<AuBox> = boxes
        .iter()
        .map(|b| scale_box_to_feature(b, stride))
        .collect();
    let (logits, cache) = model.forward(&img, &feat_boxes)?;
    let rows = feat_boxes.len();
    let cols = model.l_out;
    let (loss, d_logits) = sigmoid_ce_loss(&logits, targets, rows, cols)?;
    let grads = model.backward(&cache, &d_logits)?;
    Ok(StaticItemResult { loss, grads })
}

/// Train the static model. Returns the model, final mean pixel and losses.
fn train_static(
    cfg: &RunConfig,
    ds: &Dataset,
    boxes_per_frame: &[Vec<AuBox>],
    init: Option<&Checkpoint>,
) -> Result<(StaticModel, Vec<f64>, Vec<LossPoint>)> {
    let table = cfg.table()?;
    let profile = cfg.profile()?;
    let stride = profile.stride();
    let mut rng = Rng::new(cfg.seed);
    let mut model = StaticModel::init(&profile, cfg.channels, table.label_count(), &mut rng);
    if let Some(ckpt) = init {
        let (names, _, _) = model.named_tensors();
        let mut targets: Vec<(String, &mut [f64])> =
            names.into_iter().zip(model.param_slices_mut()).collect();
        warm_start(ckpt, &mut targets);
    }
    let mean_pixel = ds.mean_pixel();
    let targets: Vec<Vec<f64>> = ds
        .labels
        .iter()
        .map(|label| Ok(assign_roi_labels(label, table)?.to_f64()))
        .collect::<Result<_>>()?;
    let mut opt = SgdMomentum::new(cfg.momentum, cfg.weight_decay, &model.param_sizes());
    let mut losses = Vec::new();
    let mut order: Vec<usize> = (0..ds.frames()).collect();
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(4);
    for epoch in 0..cfg.epochs {
        let lr = effective_lr(cfg, epoch);
        let mut erng = rng.fork(10_000 + epoch as u64);
        erng.shuffle(&mut order);
        for (iter, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<(usize, bool)> = chunk
                .iter()
                .map(|&i| (i, cfg.mirror_augment && erng.chance(0.5)))
                .collect();
            let results: Vec<Result<StaticItemResult>> = if workers > 1 && items.len() > 1 {
                let chunk_size = items.len().div_ceil(workers);
                let model_ref = &model;
                let mp = &mean_pixel;
                let tgt = &targets;
                std::thread::scope(|scope| {
                    let handles: Vec<_> = items
                        .chunks(chunk_size)
                        .map(|part| {
                            scope.spawn(move || {
                                part.iter()
                                    .map(|&(i, mirror)| {
                                        static_item(
                                            model_ref,
                                            ds,
                                            &boxes_per_frame[i],
                                            &tgt[i],
                                            i,
                                            mirror,
                                            mp,
                                            stride,
                                        )
                                    })
                                    .collect::<Vec<_>>()
                            })
                        })
                        .collect();
                    handles
                        .into_iter()
                        .flat_map(|h| h.join().expect("training worker panicked"))
                        .collect()
                })
            } else {
                items
                    .iter()
                    .map(|&(i, mirror)| {
                        static_item(
                            &model,
                            ds,
                            &boxes_per_frame[i],
                            &targets[i],
                            i,
                            mirror,
                            &mean_pixel,
                            stride,
                        )
                    })
                    .collect()
            };
            let mut grads = model.zero_grads();
            let mut loss_sum = 0.0;
            for r in results {
                let r = r?;
                loss_sum += r.loss;
                grads.add(&r.grads);
            }
            let scale = 1.0 / chunk.len() as f64;
            grads.scale(scale);
            let loss = loss_sum * scale;
            opt.step(&mut model.param_slices_mut(), &grads.slices(), lr)?;
            losses.push(LossPoint { epoch, iter, loss });
        }
    }
    Ok((model, mean_pixel, losses))
}

fn static_checkpoint(
    cfg: &RunConfig,
    model: &StaticModel,
    mean_pixel: Vec<f64>,
    mean_boxes: Vec<f64>,
    velocities: Option<Vec<Vec<f64>>>,
) -> Checkpoint {
    let (names, shapes, values) = model.named_tensors();
    Checkpoint {
        meta: CheckpointMeta {
            profile: model.profile.name.clone(),
            dataset: cfg.dataset.clone(),
            dynamic: cfg.dynamic.tag().into(),
            resolution: cfg.resolution,
            channels: cfg.channels as u32,
            epoch: cfg.epochs,
            mean_pixel,
            mean_boxes,
        },
        names,
        shapes,
        values,
        velocities,
    }
}

/// Copy values of identically named tensors from a checkpoint into a
/// model's (name, slice) parameter listing. Unmatched names on either side
/// are left alone, so a static checkpoint can warm-start the backbone of a
/// dynamic model.
fn warm_start(ckpt: &Checkpoint, targets: &mut [(String, &mut [f64])]) -> usize {
    let mut applied = 0;
    for (name, dst) in targets.iter_mut() {
        if let Some(i) = ckpt.names.iter().position(|n| n == name) {
            if ckpt.values[i].len() == dst.len() {
                dst.copy_from_slice(&ckpt.values[i]);
                applied += 1;
            }
        }
    }
    applied
}

/// Train per the active config; writes the checkpoint and the loss log.
/// `init` warm-starts from an earlier checkpoint (matching tensor names;
/// a static checkpoint seeds the backbone of a dynamic model).
pub fn cmd_train(
    cfg: &RunConfig,
    data_dir: &Path,
    ckpt_path: &Path,
    init: Option<&Path>,
) -> Result<TrainArtifacts> {
    cfg.validate()?;
    let table = cfg.table()?;
    let ds = Dataset::load(data_dir, table, cfg.dynamic == DynamicMode::TwoStream)?;
    if ds.resolution != cfg.resolution {
        return Err(Error::Config(format!(
            "dataset resolution {} does not match config {}",
            ds.resolution, cfg.resolution
        )));
    }
    let per_frame = load_box_cache(data_dir, &ds)?;
    let (boxes_per_frame, mean_boxes_flat) = if cfg.mean_box {
        let mb = mean_boxes_from(table, &per_frame)?;
        let flat = mean_box_vec(table, &mb);
        (vec![mb.boxes.clone(); ds.frames()], flat)
    } else {
        (per_frame, Vec::new())
    };
    if let Some(parent) = ckpt_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let init_ckpt = match init {
        Some(path) => Some(Checkpoint::load(path)?),
        None => None,
    };
    let losses;
    let ckpt = match cfg.dynamic {
        DynamicMode::None => {
            let (model, mean_pixel, ls) =
                train_static(cfg, &ds, &boxes_per_frame, init_ckpt.as_ref())?;
            losses = ls;
            static_checkpoint(cfg, &model, mean_pixel, mean_boxes_flat, None)
        }
        DynamicMode::ConvLstm => {
            let (model, mean_pixel, ls) =
                train_convlstm(cfg, &ds, &boxes_per_frame, init_ckpt.as_ref())?;
            losses = ls;
            convlstm_checkpoint(cfg, &model, mean_pixel, mean_boxes_flat)
        }
        DynamicMode::TwoStream => {
            let (model, mean_pixel, ls) =
                train_two_stream(cfg, &ds, &boxes_per_frame, init_ckpt.as_ref())?;
            losses = ls;
            two_stream_checkpoint(cfg, &model, mean_pixel, mean_boxes_flat)
        }
    };
    ckpt.save(ckpt_path)?;
    let log_path = ckpt_path.with_extension("loss.csv");
    write_loss_log(&log_path, &losses)?;
    Ok(TrainArtifacts {
        checkpoint_path: ckpt_path.to_path_buf(),
        losses,
    })
}

fn check_meta(cfg: &RunConfig, meta: &CheckpointMeta) -> Result<()> {
    let profile = cfg.profile()?;
    if meta.profile != profile.name
        || meta.dataset != cfg.dataset
        || meta.dynamic != cfg.dynamic.tag()
        || meta.resolution != cfg.resolution
        || meta.channels != cfg.channels as u32
    {
        return Err(Error::Version(format!(
            "checkpoint ({}/{}/{} {}px c{}) does not match config ({}/{}/{} {}px c{})",
            meta.profile,
            meta.dataset,
            meta.dynamic,
            meta.resolution,
            meta.channels,
            profile.name,
            cfg.dataset,
            cfg.dynamic.tag(),
            cfg.resolution,
            cfg.channels
        )));
    }
    Ok(())
}

/// Rebuild the static model from a checkpoint.
pub fn static_from_checkpoint(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<StaticModel> {
    let table = cfg.table()?;
    let profile = cfg.profile()?;
    let mut rng = Rng::new(0);
    let mut model = StaticModel::init(&profile, cfg.channels, table.label_count(), &mut rng);
    model.load_values(&ckpt.values)?;
    Ok(model)
}

/// Run inference and write a predictions CSV in the label-file schema.
pub fn cmd_infer(
    cfg: &RunConfig,
    ckpt_path: &Path,
    data_dir: &Path,
    out_path: &Path,
) -> Result<PathBuf> {
    let table = cfg.table()?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    check_meta(cfg, &ckpt.meta)?;
    let ds = Dataset::load(data_dir, table, cfg.dynamic == DynamicMode::TwoStream)?;
    let boxes_per_frame: Vec<Vec<AuBox>> = if cfg.mean_box {
        let mb = mean_boxes_from_meta(table, &ckpt.meta)?;
        vec![mb; ds.frames()]
    } else {
        load_box_cache(data_dir, &ds)?
    };
    let stride = cfg.profile()?.stride();
    let mean_pixel = ckpt.meta.mean_pixel.clone();
    let mut rows: Vec<(String, ImageLabel)> = Vec::new();
    match cfg.dynamic {
        DynamicMode::None => {
            let model = static_from_checkpoint(cfg, &ckpt)?;
            for i in 0..ds.frames() {
                let img = ds.image_tensor(i);
                let (img, boxes) = preprocess(&img, &boxes_per_frame[i], false, &mean_pixel)?;
                let feat: Vec<AuBox> = boxes
                    .iter()
                    .map(|b| scale_box_to_feature(b, stride))
                    .collect();
                let (logits, _) = model.forward(&img, &feat)?;
                let m = binarize_logits(&logits, table)?;
                rows.push((ds.frame_ids[i].clone(), merge_roi_predictions(&m)));
            }
        }
        DynamicMode::ConvLstm => {
            let model = convlstm_from_checkpoint(cfg, &ckpt)?;
            rows = infer_convlstm(cfg, &model, &ds, &boxes_per_frame, &mean_pixel)?;
        }
        DynamicMode::TwoStream => {
            let model = two_stream_from_checkpoint(cfg, &ckpt)?;
            for i in 0..ds.frames() {
                let video = ds
                    .videos()
                    .into_iter()
                    .find(|&(s, l)| i >= s && i < s + l)
                    .unwrap_or((0, ds.frames()));
                let img = ds.image_tensor(i);
                let (img, boxes) = preprocess(&img, &boxes_per_frame[i], false, &mean_pixel)?;
                let flow = ds.flow_stack(i, video)?;
                let feat: Vec<AuBox> = boxes
                    .iter()
                    .map(|b| scale_box_to_feature(b, stride))
                    .collect();
                let (logits, _) = model.forward(&img, &flow, &feat)?;
                let m = binarize_logits(&logits, table)?;
                rows.push((ds.frame_ids[i].clone(), merge_roi_predictions(&m)));
            }
        }
    }
    std::fs::write(out_path, write_label_file(table, &rows))?;
    Ok(out_path.to_path_buf())
}

/// True when a frame id belongs to one of the requested subjects (its
/// prefix before '_'); an empty filter keeps everything.
pub fn subject_match(frame_id: &str, subjects: &[String]) -> bool {
    if subjects.is_empty() {
        return true;
    }
    let prefix = frame_id.split('_').next().unwrap_or(frame_id);
    subjects.iter().any(|s| s == prefix)
}

/// Frame-based F1 of predictions against ground truth. Prediction frames
/// must all exist in the ground-truth file. `subjects` restricts the
/// evaluation to those subject ids (subject-exclusive split protocols).
pub fn cmd_eval(
    table: &AUPartitionTable,
    pred_path: &Path,
    gt_path: &Path,
    out_prefix: &Path,
    method: &str,
    subjects: &[String],
) -> Result<EvalReport> {
    let (pred_aus, preds) = read_label_file(&std::fs::read_to_string(pred_path)?)?;
    let (gt_aus, gts) = read_label_file(&std::fs::read_to_string(gt_path)?)?;
    if pred_aus != table.aus || gt_aus != table.aus {
        return Err(Error::Shape(
            "AU columns do not match the active table".into(),
        ));
    }
    let gt_map: std::collections::BTreeMap<&str, &ImageLabel> =
        gts.iter().map(|(id, l)| (id.as_str(), l)).collect();
    let mut acc = F1Accumulator::new(table);
    for (frame_id, pred) in &preds {
        if !subject_match(frame_id, subjects) {
            continue;
        }
        let gt = gt_map.get(frame_id.as_str()).ok_or_else(|| {
            Error::Shape(format!(
                "prediction frame {frame_id} missing from ground truth"
            ))
        })?;
        acc.add(pred, gt)?;
    }
    let report = acc.finish();
    std::fs::write(out_prefix.with_extension("csv"), report.to_csv(method))?;
    std::fs::write(out_prefix.with_extension("json"), report.to_json())?;
    Ok(report)
}

fn parse_eval_csv(text: &str) -> Result<Vec<(u16, f64)>> {
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let (au, f1) = line
            .split_once(',')
            .ok_or_else(|| Error::Format("bad eval row".into()))?;
        if au == "Avg" {
            continue;
        }
        out.push((
            au.parse()
                .map_err(|_| Error::Format(format!("bad AU {au:?}")))?,
            f1.parse()
                .map_err(|_| Error::Format(format!("bad F1 {f1:?}")))?,
        ));
    }
    Ok(out)
}

/// Dataset statistics: per-AU durations, box areas, mean boxes; optionally
/// the duration/F1-improvement correlation between two eval reports.
pub fn cmd_stats(
    cfg: &RunConfig,
    data_dir: &Path,
    out_dir: &Path,
    correlate: Option<(&Path, &Path)>,
) -> Result<()> {
    let table = cfg.table()?;
    let ds = Dataset::load(data_dir, table, false)?;
    std::fs::create_dir_all(out_dir)?;
    let durations = DurationStats::compute(&ds.labels, table)?;
    std::fs::write(out_dir.join("durations.csv"), durations.to_csv())?;
    let per_frame = load_box_cache(data_dir, &ds)?;
    let mut areas = AreaAccumulator::new(ds.resolution, ds.resolution);
    for boxes in &per_frame {
        areas.add_boxes(boxes);
    }
    std::fs::write(out_dir.join("areas.csv"), areas.finish().to_csv(table))?;
    let mb = mean_boxes_from(table, &per_frame)?;
    std::fs::write(out_dir.join("mean_boxes.csv"), mb.to_csv(table))?;
    if let Some((eval_a, eval_b)) = correlate {
        let a = parse_eval_csv(&std::fs::read_to_string(eval_a)?)?;
        let b = parse_eval_csv(&std::fs::read_to_string(eval_b)?)?;
        if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.0 != y.0) {
            return Err(Error::Shape("eval reports list different AUs".into()));
        }
        let aus: Vec<u16> = a.iter().map(|&(au, _)| au).collect();
        let improvement: Vec<f64> = a.iter().zip(&b).map(|(x, y)| y.1 - x.1).collect();
        let dur: Vec<f64> = aus
            .iter()
            .map(|au| {
                durations
                    .rows
                    .iter()
                    .find(|r| r.0 == *au)
                    .map(|r| r.1)
                    .unwrap_or(0.0)
            })
            .collect();
        let report = correlation_report(&aus, &improvement, &dur, 1.0 / 60.0)?;
        std::fs::write(out_dir.join("correlation.csv"), report.to_csv())?;
        std::fs::write(out_dir.join("correlation.svg"), report.to_svg())?;
    }
    Ok(())
}

/// Emit the mean-box table of a dataset (requires the partition cache).
pub fn cmd_mean_box(cfg: &RunConfig, data_dir: &Path, out_path: &Path) -> Result<PathBuf> {
    let table = cfg.table()?;
    let ds = Dataset::load(data_dir, table, false)?;
    let per_frame = load_box_cache(data_dir, &ds)?;
    let mb = mean_boxes_from(table, &per_frame)?;
    std::fs::write(out_path, mb.to_csv(table))?;
    Ok(out_path.to_path_buf())
}

// --- convlstm training -------------------------------------------------------

/// Backbone plus ConvLSTM timeline head, trained end to end.
pub struct ConvLstmModel {
    pub backbone: Backbone,
    pub head: ConvLstmHead,
    pub profile: crate::model::BackboneProfile,
}

impl ConvLstmModel {
    fn param_sizes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (k, b) in self.backbone.kernels.iter().zip(&self.backbone.biases) {
            out.push(k.numel());
            out.push(b.len());
        }
        out.extend(self.head.param_sizes());
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for (k, b) in self
            .backbone
            .kernels
            .iter_mut()
            .zip(self.backbone.biases.iter_mut())
        {
            out.push(k.data_mut());
            out.push(b.as_mut_slice());
        }
        out.extend(self.head.param_slices_mut());
        out
    }
}

struct ConvLstmModelGrads {
    backbone: BackboneGrads,
    head: ConvLstmGrads,
}

impl ConvLstmModelGrads {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for (k, b) in self.backbone.kernels.iter().zip(&self.backbone.biases) {
            out.push(k.data());
            out.push(b.as_slice());
        }
        out.extend(self.head.slices());
        out
    }
}

fn convlstm_checkpoint(
    cfg: &RunConfig,
    model: &ConvLstmModel,
    mean_pixel: Vec<f64>,
    mean_boxes: Vec<f64>,
) -> Checkpoint {
    let mut names = Vec::new();
    let mut shapes = Vec::new();
    let mut values = Vec::new();
    for (i, (k, b)) in model
        .backbone
        .kernels
        .iter()
        .zip(&model.backbone.biases)
        .enumerate()
    {
        let (a, c, h, w) = k.shape();
        names.push(format!("conv{i}.w"));
        shapes.push([a as u64, c as u64, h as u64, w as u64]);
        values.push(k.data().to_vec());
        names.push(format!("conv{i}.b"));
        shapes.push([b.len() as u64, 1, 1, 1]);
        values.push(b.clone());
    }
    for (r, cell) in model.head.cells.iter().enumerate() {
        let (a, c, h, w) = cell.w_x.shape();
        names.push(format!("lstm{r}.wx"));
        shapes.push([a as u64, c as u64, h as u64, w as u64]);
        values.push(cell.w_x.data().to_vec());
        let (a, c, h, w) = cell.w_h.shape();
        names.push(format!("lstm{r}.wh"));
        shapes.push([a as u64, c as u64, h as u64, w as u64]);
        values.push(cell.w_h.data().to_vec());
        names.push(format!("lstm{r}.b"));
        shapes.push([cell.bias.len() as u64, 1, 1, 1]);
        values.push(cell.bias.clone());
    }
    for (name, vals) in [
        ("fc1.w", &model.head.head.w1),
        ("fc1.b", &model.head.head.b1),
        ("fc2.w", &model.head.head.w2),
        ("fc2.b", &model.head.head.b2),
    ] {
        names.push(name.to_string());
        shapes.push([vals.len() as u64, 1, 1, 1]);
        values.push(vals.clone());
    }
    Checkpoint {
        meta: CheckpointMeta {
            profile: model.profile.name.clone(),
            dataset: cfg.dataset.clone(),
            dynamic: cfg.dynamic.tag().into(),
            resolution: cfg.resolution,
            channels: cfg.channels as u32,
            epoch: cfg.epochs,
            mean_pixel,
            mean_boxes,
        },
        names,
        shapes,
        values,
        velocities: None,
    }
}

fn init_convlstm_model(cfg: &RunConfig, lines: usize, l_out: usize) -> Result<ConvLstmModel> {
    let profile = cfg.profile()?;
    let mut rng = Rng::new(cfg.seed);
    let backbone = Backbone::init(cfg.channels, &profile.convs, &mut rng);
    let head = ConvLstmHead::init(
        lines,
        profile.out_channels(),
        cfg.lstm_channels,
        cfg.lstm_kernel,
        profile.roi_size,
        profile.fc_hidden,
        l_out,
        &mut rng,
    );
    Ok(ConvLstmModel {
        backbone,
        head,
        profile,
    })
}

fn convlstm_from_checkpoint(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<ConvLstmModel> {
    let table = cfg.table()?;
    let mut model = init_convlstm_model(cfg, table.row_count(), table.label_count())?;
    let mut slices = model.param_slices_mut();
    if ckpt.values.len() != slices.len() {
        return Err(Error::Version(format!(
            "checkpoint has {} tensors, model expects {}",
            ckpt.values.len(),
            slices.len()
        )));
    }
    for (dst, src) in slices.iter_mut().zip(&ckpt.values) {
        if dst.len() != src.len() {
            return Err(Error::Version("checkpoint tensor size mismatch".into()));
        }
        dst.copy_from_slice(src);
    }
    Ok(model)
}

/// All windows of the dataset as (video, window start) pairs.
fn dataset_windows(cfg: &RunConfig, ds: &Dataset) -> Result<Vec<((usize, usize), usize)>> {
    let stride = if cfg.window_stride == 0 {
        None
    } else {
        Some(cfg.window_stride)
    };
    let mut windows = Vec::new();
    for video in ds.videos() {
        let starts = window_starts(video.1, cfg.frame_skip, cfg.time_steps, stride)?;
        for s in starts {
            windows.push((video, video.0 + s));
        }
    }
    Ok(windows)
}

/// Forward the backbone over one window batch and pool per-line features.
/// Returns xs[line][t]: (N, C, S, S) tensors, and when training also the
/// per-frame caches needed for backward.
struct WindowBatch {
    xs: Vec<Vec<Tensor4>>,
    targets: Vec<Vec<f64>>,               // per line: (N*T) x L
    caches: Option<Vec<Vec<FrameCache>>>, // [n][t]
}

struct FrameCache {
    backbone: crate::model::BackboneCache,
    feature_shape: (usize, usize, usize, usize),
    pooled: crate::nn::RoiPoolOutput,
}

#[allow(clippy::too_many_arguments)]
fn forward_window_batch(
    model: &ConvLstmModel,
    cfg: &RunConfig,
    ds: &Dataset,
    boxes_per_frame: &[Vec<AuBox>],
    targets: &[Vec<f64>],
    windows: &[(usize, bool)],
    mean_pixel: &[f64],
    keep_caches: bool,
) -> Result<WindowBatch> {
    let table = cfg.table()?;
    let lines = table.row_count();
    let l = table.label_count();
    let steps = cfg.time_steps;
    let n = windows.len();
    let stride = model.profile.stride();
    let spec = RoiSpec::square(model.profile.roi_size);
    let c_feat = model.profile.out_channels();
    let s = model.profile.roi_size;
    let mut xs: Vec<Vec<Tensor4>> = vec![Vec::with_capacity(steps); lines];
    for line_xs in &mut xs {
        for _ in 0..steps {
            line_xs.push(Tensor4::zeros(n, c_feat, s, s));
        }
    }
    let mut line_targets = vec![vec![0.0f64; n * steps * l]; lines];
    let mut caches: Vec<Vec<FrameCache>> = Vec::new();
    for (wi, &(start, mirror)) in windows.iter().enumerate() {
        let mut window_caches = Vec::new();
        for (t, frame) in window_frames(start, cfg.frame_skip, steps)
            .into_iter()
            .enumerate()
        {
            let img = ds.image_tensor(frame);
            let (img, boxes) = preprocess(&img, &boxes_per_frame[frame], mirror, mean_pixel)?;
            let feat_boxes: Vec<AuBox> = boxes
                .iter()
                .map(|b| scale_box_to_feature(b, stride))
                .collect();
            let (feature, bb_cache) = model.backbone.forward(&img)?;
            let pooled = roi_pool_forward(&feature, &feat_boxes, spec)?;
            let per = c_feat * s * s;
            for line in 0..lines {
                let src = &pooled.output.data()[line * per..(line + 1) * per];
                let dst_t = &mut xs[line][t];
                dst_t.data_mut()[wi * per..(wi + 1) * per].copy_from_slice(src);
                let row = wi * steps + t;
                for col in 0..l {
                    line_targets[line][row * l + col] = targets[frame][line * l + col];
                }
            }
            if keep_caches {
                window_caches.push(FrameCache {
                    backbone: bb_cache,
                    feature_shape: feature.shape(),
                    pooled,
                });
            }
        }
        if keep_caches {
            caches.push(window_caches);
        }
    }
    Ok(WindowBatch {
        xs,
        targets: line_targets,
        caches: keep_caches.then_some(caches),
    })
}

fn convlstm_param_names(model: &ConvLstmModel) -> Vec<String> {
    let mut names = Vec::new();
    for i in 0..model.backbone.kernels.len() {
        names.push(format!("conv{i}.w"));
        names.push(format!("conv{i}.b"));
    }
    for r in 0..model.head.cells.len() {
        names.push(format!("lstm{r}.wx"));
        names.push(format!("lstm{r}.wh"));
        names.push(format!("lstm{r}.b"));
    }
    names.extend(["fc1.w".into(), "fc1.b".into(), "fc2.w".into(), "fc2.b".into()]);
    names
}

/// Build a window batch from precomputed per-frame pooled features.
fn assemble_window_batch(
    cfg: &RunConfig,
    feats: &[Tensor4],
    targets: &[Vec<f64>],
    windows: &[(usize, bool)],
    lines: usize,
    l: usize,
) -> Result<WindowBatch> {
    let steps = cfg.time_steps;
    let n = windows.len();
    let (r, c, s, _) = feats[0].shape();
    debug_assert_eq!(r, lines);
    let per = c * s * s;
    let mut xs: Vec<Vec<Tensor4>> = vec![Vec::with_capacity(steps); lines];
    for line_xs in &mut xs {
        for _ in 0..steps {
            line_xs.push(Tensor4::zeros(n, c, s, s));
        }
    }
    let mut line_targets = vec![vec![0.0f64; n * steps * l]; lines];
    for (wi, &(start, _)) in windows.iter().enumerate() {
        for (t, frame) in window_frames(start, cfg.frame_skip, steps)
            .into_iter()
            .enumerate()
        {
            for line in 0..lines {
                let src = &feats[frame].data()[line * per..(line + 1) * per];
                xs[line][t].data_mut()[wi * per..(wi + 1) * per].copy_from_slice(src);
                let row = wi * steps + t;
                for col in 0..l {
                    line_targets[line][row * l + col] = targets[frame][line * l + col];
                }
            }
        }
    }
    Ok(WindowBatch {
        xs,
        targets: line_targets,
        caches: None,
    })
}

fn train_convlstm(
    cfg: &RunConfig,
    ds: &Dataset,
    boxes_per_frame: &[Vec<AuBox>],
    init: Option<&Checkpoint>,
) -> Result<(ConvLstmModel, Vec<f64>, Vec<LossPoint>)> {
    let table = cfg.table()?;
    let lines = table.row_count();
    let l = table.label_count();
    let steps = cfg.time_steps;
    let mut model = init_convlstm_model(cfg, lines, l)?;
    if let Some(ckpt) = init {
        let names = convlstm_param_names(&model);
        let mut targets: Vec<(String, &mut [f64])> =
            names.into_iter().zip(model.param_slices_mut()).collect();
        warm_start(ckpt, &mut targets);
    }
    let mean_pixel = ds.mean_pixel();
    let targets: Vec<Vec<f64>> = ds
        .labels
        .iter()
        .map(|label| Ok(assign_roi_labels(label, table)?.to_f64()))
        .collect::<Result<_>>()?;
    let windows = dataset_windows(cfg, ds)?;
    if windows.is_empty() {
        return Err(Error::InsufficientFrames {
            needed: window_span(cfg.frame_skip, steps),
            got: ds.frames(),
        });
    }
    // frozen backbone: pooled RoI features are constant, so compute each
    // frame's once up front and train the head alone (mirroring is skipped;
    // it would change the features)
    let frozen_feats: Option<Vec<Tensor4>> = if cfg.freeze_backbone {
        let stride = model.profile.stride();
        let spec = RoiSpec::square(model.profile.roi_size);
        let mut feats = Vec::with_capacity(ds.frames());
        for i in 0..ds.frames() {
            let img = ds.image_tensor(i);
            let (img, boxes) = preprocess(&img, &boxes_per_frame[i], false, &mean_pixel)?;
            let feat_boxes: Vec<AuBox> =
                boxes.iter().map(|b| scale_box_to_feature(b, stride)).collect();
            let (feature, _) = model.backbone.forward(&img)?;
            feats.push(roi_pool_forward(&feature, &feat_boxes, spec)?.output);
        }
        Some(feats)
    } else {
        None
    };
    let mut opt = SgdMomentum::new(cfg.momentum, cfg.weight_decay, &model.param_sizes());
    let rng = Rng::new(cfg.seed ^ 0xd15a);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut losses = Vec::new();
    for epoch in 0..cfg.epochs {
        let lr = effective_lr(cfg, epoch);
        let mut erng = rng.fork(40_000 + epoch as u64);
        erng.shuffle(&mut order);
        for (iter, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(usize, bool)> = chunk
                .iter()
                .map(|&w| {
                    (
                        windows[w].1,
                        !cfg.freeze_backbone && cfg.mirror_augment && erng.chance(0.5),
                    )
                })
                .collect();
            let n = batch.len();
            let wb = match &frozen_feats {
                Some(feats) => assemble_window_batch(cfg, feats, &targets, &batch, lines, l)?,
                None => forward_window_batch(
                    &model,
                    cfg,
                    ds,
                    boxes_per_frame,
                    &targets,
                    &batch,
                    &mean_pixel,
                    true,
                )?,
            };
            let mut head_grads = model.head.zero_grads();
            let mut bb_grads = model.backbone.zero_grads();
            // gradient on each frame's pooled tensor, accumulated per line
            let per = model.profile.out_channels() * model.profile.roi_size.pow(2);
            let mut d_pooled: Vec<Vec<Tensor4>> = (0..n)
                .map(|_| {
                    (0..steps)
                        .map(|_| {
                            Tensor4::zeros(
                                lines,
                                model.profile.out_channels(),
                                model.profile.roi_size,
                                model.profile.roi_size,
                            )
                        })
                        .collect()
                })
                .collect();
            let mut loss_sum = 0.0;
            let frame_count = (n * steps) as f64;
            for line in 0..lines {
                let (logits, line_cache) = model.head.forward_line(line, &wb.xs[line])?;
                let (loss, mut d_logits) =
                    sigmoid_ce_loss(&logits, &wb.targets[line], n * steps, l)?;
                // per-frame Eq-1 normalization sums lines and divides by R
                loss_sum += loss / lines as f64;
                for v in &mut d_logits {
                    *v /= lines as f64;
                }
                let (d_xs, grads) = model.head.backward_line(line, &line_cache, &d_logits)?;
                head_grads.add(&grads);
                for (t, d_x) in d_xs.iter().enumerate() {
                    for wi in 0..n {
                        let dst = &mut d_pooled[wi][t].data_mut()[line * per..(line + 1) * per];
                        for (a, b) in dst.iter_mut().zip(&d_x.data()[wi * per..(wi + 1) * per]) {
                            *a += *b;
                        }
                    }
                }
            }
            if !cfg.freeze_backbone {
                let caches = wb.caches.as_ref().unwrap();
                for wi in 0..n {
                    for t in 0..steps {
                        let fc = &caches[wi][t];
                        let d_feature =
                            roi_pool_backward(&fc.pooled, &d_pooled[wi][t], fc.feature_shape)?;
                        let g = model.backbone.backward(&fc.backbone, &d_feature)?;
                        bb_grads.add(&g);
                    }
                }
            }
            // average over the N*T frames that contributed
            let scale = 1.0 / frame_count;
            bb_grads.scale(if cfg.freeze_backbone { 0.0 } else { scale });
            head_grads.scale(1.0 / n as f64);
            let mut grads = ConvLstmModelGrads {
                backbone: bb_grads,
                head: head_grads,
            };
            let clip_scale = clip_global_norm(&grads.slices(), cfg.grad_clip);
            if clip_scale < 1.0 {
                grads.backbone.scale(clip_scale);
                grads.head.scale(clip_scale);
            }
            opt.step(&mut model.param_slices_mut(), &grads.slices(), lr)?;
            losses.push(LossPoint {
                epoch,
                iter,
                loss: loss_sum / n as f64,
            });
        }
    }
    Ok((model, mean_pixel, losses))
}

/// ConvLSTM inference: non-overlapping windows, keep the last frame's
/// prediction of each window.
fn infer_convlstm(
    cfg: &RunConfig,
    model: &ConvLstmModel,
    ds: &Dataset,
    boxes_per_frame: &[Vec<AuBox>],
    mean_pixel: &[f64],
) -> Result<Vec<(String, ImageLabel)>> {
    let table = cfg.table()?;
    let lines = table.row_count();
    let l = table.label_count();
    let steps = cfg.time_steps;
    let windows = dataset_windows(cfg, ds)?;
    let dummy_targets: Vec<Vec<f64>> = ds.labels.iter().map(|_| vec![0.0; lines * l]).collect();
    let mut rows = Vec::new();
    for &(_, start) in &windows {
        let wb = forward_window_batch(
            model,
            cfg,
            ds,
            boxes_per_frame,
            &dummy_targets,
            &[(start, false)],
            mean_pixel,
            false,
        )?;
        // assemble the last step's R x L logit matrix
        let mut logits = vec![0.0f64; lines * l];
        for line in 0..lines {
            let (line_logits, _) = model.head.forward_line(line, &wb.xs[line])?;
            let row = steps - 1; // N = 1
            logits[line * l..(line + 1) * l].copy_from_slice(&line_logits[row * l..(row + 1) * l]);
        }
        let m = binarize_logits(&logits, table)?;
        let last_frame = start + (steps - 1) * (cfg.frame_skip + 1);
        rows.push((ds.frame_ids[last_frame].clone(), merge_roi_predictions(&m)));
    }
    Ok(rows)
}

// --- two-stream training -----------------------------------------------------

fn two_stream_checkpoint(
    cfg: &RunConfig,
    model: &TwoStreamModel,
    mean_pixel: Vec<f64>,
    mean_boxes: Vec<f64>,
) -> Checkpoint {
    let mut names = Vec::new();
    let mut shapes = Vec::new();
    let mut values = Vec::new();
    let mut push_backbone = |prefix: &str, bb: &Backbone| {
        for (i, (k, b)) in bb.kernels.iter().zip(&bb.biases).enumerate() {
            let (a, c, h, w) = k.shape();
            names.push(format!("{prefix}{i}.w"));
            shapes.push([a as u64, c as u64, h as u64, w as u64]);
            values.push(k.data().to_vec());
            names.push(format!("{prefix}{i}.b"));
            shapes.push([b.len() as u64, 1, 1, 1]);
            values.push(b.clone());
        }
    };
    push_backbone("conv", &model.rgb);
    push_backbone("flow_conv", &model.flow);
    let (a, c, h, w) = model.fuse_w.shape();
    names.push("fuse.w".into());
    shapes.push([a as u64, c as u64, h as u64, w as u64]);
    values.push(model.fuse_w.data().to_vec());
    names.push("fuse.b".into());
    shapes.push([model.fuse_b.len() as u64, 1, 1, 1]);
    values.push(model.fuse_b.clone());
    for (name, vals) in [
        ("fc1.w", &model.head.w1),
        ("fc1.b", &model.head.b1),
        ("fc2.w", &model.head.w2),
        ("fc2.b", &model.head.b2),
    ] {
        names.push(name.to_string());
        shapes.push([vals.len() as u64, 1, 1, 1]);
        values.push(vals.clone());
    }
    Checkpoint {
        meta: CheckpointMeta {
            profile: model.profile.name.clone(),
            dataset: cfg.dataset.clone(),
            dynamic: cfg.dynamic.tag().into(),
            resolution: cfg.resolution,
            channels: cfg.channels as u32,
            epoch: cfg.epochs,
            mean_pixel,
            mean_boxes,
        },
        names,
        shapes,
        values,
        velocities: None,
    }
}

fn two_stream_from_checkpoint(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<TwoStreamModel> {
    let table = cfg.table()?;
    let profile = cfg.profile()?;
    let mut rng = Rng::new(0);
    let base = StaticModel::init(&profile, cfg.channels, table.label_count(), &mut rng);
    let mut model = TwoStreamModel::from_static(&base, 20, &mut rng);
    let mut slices = model.param_slices_mut();
    if ckpt.values.len() != slices.len() {
        return Err(Error::Version(format!(
            "checkpoint has {} tensors, model expects {}",
            ckpt.values.len(),
            slices.len()
        )));
    }
    for (dst, src) in slices.iter_mut().zip(&ckpt.values) {
        if dst.len() != src.len() {
            return Err(Error::Version("checkpoint tensor size mismatch".into()));
        }
        dst.copy_from_slice(src);
    }
    Ok(model)
}

fn mirror_flow(flow: &Tensor4) -> Tensor4 {
    let mut out = crate::nn::mirror_image(flow);
    // x components (even channels of the stack) change sign under mirror
    let (n, c, h, w) = out.shape();
    for ni in 0..n {
        for ci in (0..c).step_by(2) {
            for y in 0..h {
                for x in 0..w {
                    let v = out.get(ni, ci, y, x);
                    out.set(ni, ci, y, x, -v);
                }
            }
        }
    }
    out
}

fn two_stream_param_names(model: &TwoStreamModel) -> Vec<String> {
    let mut names = Vec::new();
    for i in 0..model.rgb.kernels.len() {
        names.push(format!("conv{i}.w"));
        names.push(format!("conv{i}.b"));
    }
    for i in 0..model.flow.kernels.len() {
        names.push(format!("flow_conv{i}.w"));
        names.push(format!("flow_conv{i}.b"));
    }
    names.extend([
        "fuse.w".into(),
        "fuse.b".into(),
        "fc1.w".into(),
        "fc1.b".into(),
        "fc2.w".into(),
        "fc2.b".into(),
    ]);
    names
}

fn train_two_stream(
    cfg: &RunConfig,
    ds: &Dataset,
    boxes_per_frame: &[Vec<AuBox>],
    init: Option<&Checkpoint>,
) -> Result<(TwoStreamModel, Vec<f64>, Vec<LossPoint>)> {
    let table = cfg.table()?;
    let profile = cfg.profile()?;
    let stride = profile.stride();
    let mut rng = Rng::new(cfg.seed);
    let base = StaticModel::init(&profile, cfg.channels, table.label_count(), &mut rng);
    let mut model = TwoStreamModel::from_static(&base, 20, &mut rng);
    if let Some(ckpt) = init {
        let names = two_stream_param_names(&model);
        let mut targets: Vec<(String, &mut [f64])> =
            names.into_iter().zip(model.param_slices_mut()).collect();
        warm_start(ckpt, &mut targets);
    }
    let mean_pixel = ds.mean_pixel();
    let targets: Vec<Vec<f64>> = ds
        .labels
        .iter()
        .map(|label| Ok(assign_roi_labels(label, table)?.to_f64()))
        .collect::<Result<_>>()?;
    let videos = ds.videos();
    let video_of = |i: usize| {
        videos
            .iter()
            .copied()
            .find(|&(s, len)| i >= s && i < s + len)
            .unwrap_or((0, ds.frames()))
    };
    let mut opt = SgdMomentum::new(cfg.momentum, cfg.weight_decay, &model.param_sizes());
    let mut order: Vec<usize> = (0..ds.frames()).collect();
    let mut losses = Vec::new();
    for epoch in 0..cfg.epochs {
        let lr = effective_lr(cfg, epoch);
        let mut erng = rng.fork(20_000 + epoch as u64);
        erng.shuffle(&mut order);
        for (iter, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = model.zero_grads();
            let mut loss_sum = 0.0;
            for &i in chunk {
                let mirror = cfg.mirror_augment && erng.chance(0.5);
                let img = ds.image_tensor(i);
                let (img, boxes) = preprocess(&img, &boxes_per_frame[i], mirror, &mean_pixel)?;
                let mut flow = ds.flow_stack(i, video_of(i))?;
                if mirror {
                    flow = mirror_flow(&flow);
                }
                let feat: Vec<AuBox> = boxes
                    .iter()
                    .map(|b| scale_box_to_feature(b, stride))
                    .collect();
                let (logits, cache) = model.forward(&img, &flow, &feat)?;
                let (loss, d_logits) =
                    sigmoid_ce_loss(&logits, &targets[i], feat.len(), model.l_out)?;
                loss_sum += loss;
                let g = model.backward(&cache, &d_logits)?;
                grads.add(&g);
            }
            let scale = 1.0 / chunk.len() as f64;
            grads.scale(scale);
            opt.step(&mut model.param_slices_mut(), &grads.slices(), lr)?;
            losses.push(LossPoint {
                epoch,
                iter,
                loss: loss_sum * scale,
            });
        }
    }
    Ok((model, mean_pixel, losses))
}
