//! File-backed cache of per-frame AU bounding boxes.
//!
//! Entries are keyed by a content hash over the landmark file, the
//! partition table, the layout table and the image resolution: touch any
//! of those and the whole cache recomputes.

use std::path::{Path, PathBuf};

use crate::au_table::{boxes_for_frame, AUPartitionTable, AuBox, Side, Space};
use crate::error::{Error, Result};
use crate::landmarks::Landmarks68;
use crate::layout::{default_layout_text, derive_points, partition_basic_rois, OwnerMap};

/// FNV-1a 64-bit.
pub fn fnv64(chunks: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for chunk in chunks {
        for &b in *chunk {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        // chunk separator keeps concatenations distinct
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// The version hash a cache entry must match.
pub fn cache_key(landmark_text: &str, table_text: &str, resolution: u32) -> u64 {
    fnv64(&[
        landmark_text.as_bytes(),
        table_text.as_bytes(),
        default_layout_text().as_bytes(),
        &resolution.to_le_bytes(),
    ])
}

#[derive(Debug, Clone)]
pub struct BoxCache {
    pub version_hash: u64,
    /// (frame_id, boxes in canonical row order)
    pub frames: Vec<(String, Vec<AuBox>)>,
}

pub fn cache_file(data_dir: &Path) -> PathBuf {
    data_dir.join("cache").join("boxes.v1.csv")
}

impl BoxCache {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# aurk-box-cache v1\n# hash {:016x}\nframe_id,group,side,y_min,x_min,y_max,x_max\n",
            self.version_hash
        );
        for (frame_id, boxes) in &self.frames {
            for b in boxes {
                out.push_str(&format!(
                    "{frame_id},{},{},{},{},{},{}\n",
                    b.group_id,
                    b.side.tag(),
                    b.y_min,
                    b.x_min,
                    b.y_max,
                    b.x_max
                ));
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<BoxCache> {
        let mut version_hash = None;
        let mut frames: Vec<(String, Vec<AuBox>)> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("# hash ") {
                version_hash = u64::from_str_radix(rest.trim(), 16).ok();
                continue;
            }
            if line.is_empty() || line.starts_with('#') || line.starts_with("frame_id") {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::Format(format!("bad cache row {line:?}")));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::Format(format!("bad cache number {s:?}")))
            };
            let b = AuBox::new(
                f[1].parse()
                    .map_err(|_| Error::Format("bad group id in cache".into()))?,
                Side::from_tag(f[2])?,
                (num(f[3])?, num(f[4])?, num(f[5])?, num(f[6])?),
                Space::Image,
            )?;
            match frames.last_mut() {
                Some((id, boxes)) if id == f[0] => boxes.push(b),
                _ => frames.push((f[0].to_string(), vec![b])),
            }
        }
        Ok(BoxCache {
            version_hash: version_hash
                .ok_or_else(|| Error::Format("cache file missing hash line".into()))?,
            frames,
        })
    }

    pub fn save(&self, data_dir: &Path) -> Result<()> {
        let path = cache_file(data_dir);
        std::fs::create_dir_all(path.parent().unwrap())?;
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(data_dir: &Path) -> Result<Option<BoxCache>> {
        let path = cache_file(data_dir);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(path)?;
        Ok(Some(BoxCache::parse(&text)?))
    }
}

/// Compute the boxes of one frame from its landmarks.
pub fn frame_boxes(lm: &Landmarks68, table: &AUPartitionTable) -> Result<Vec<AuBox>> {
    let dp = derive_points(lm);
    let rois = partition_basic_rois(lm, &dp)?;
    let owner = OwnerMap::build(&rois, lm.image_width(), lm.image_height());
    let split = dp
        .get("mid_eyes")
        .ok_or_else(|| Error::Format("layout lacks the mid_eyes point".into()))?
        .x;
    boxes_for_frame(&owner, table, split)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheOutcome {
    pub frames: usize,
    pub hit: bool,
}

/// Return cached boxes when the version hash matches, else recompute from
/// the landmark records and rewrite the cache.
pub fn load_or_compute(
    data_dir: &Path,
    landmark_text: &str,
    records: &[(String, Landmarks68)],
    table: &AUPartitionTable,
    table_text: &str,
) -> Result<(BoxCache, CacheOutcome)> {
    let resolution = records.first().map(|(_, lm)| lm.image_width()).unwrap_or(0);
    let key = cache_key(landmark_text, table_text, resolution);
    if let Some(cache) = BoxCache::load(data_dir)? {
        if cache.version_hash == key && cache.frames.len() == records.len() {
            let frames = cache.frames.len();
            return Ok((cache, CacheOutcome { frames, hit: true }));
        }
    }
    let mut frames = Vec::with_capacity(records.len());
    for (frame_id, lm) in records {
        let boxes =
            frame_boxes(lm, table).map_err(|e| Error::Format(format!("frame {frame_id}: {e}")))?;
        frames.push((frame_id.clone(), boxes));
    }
    let cache = BoxCache {
        version_hash: key,
        frames,
    };
    cache.save(data_dir)?;
    let n = cache.frames.len();
    Ok((
        cache,
        CacheOutcome {
            frames: n,
            hit: false,
        },
    ))
}
