//! The AU partition rule: groups of action units tied to face regions.
//!
//! A partition table lists, per AU group, its member AUs, its member basic
//! regions, whether it splits into two symmetric boxes, and which other
//! groups it fetches labels from. Built-in tables: `bp4d` (8 groups, L=22,
//! R=9), `disfa` (6 groups, L=12, R=7) and `synth` (5 groups, L=6, R=6).

use std::collections::BTreeMap;
use std::sync::OnceLock;

use crate::csvutil;
use crate::error::{Error, Result};
use crate::geom::PixelMask;
use crate::layout::{OwnerMap, BASIC_ROI_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Side {
    Whole,
    Left,
    Right,
}

impl Side {
    pub fn tag(&self) -> &'static str {
        match self {
            Side::Whole => "whole",
            Side::Left => "left",
            Side::Right => "right",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Side> {
        match tag {
            "whole" => Ok(Side::Whole),
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            other => Err(Error::Format(format!("unknown box side {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Image,
    Feature,
}

/// One AU group row of the partition rule.
#[derive(Debug, Clone)]
pub struct AuGroup {
    pub group_id: u8,
    pub symmetric: bool,
    pub au_list: Vec<u16>,
    pub roi_list: Vec<u8>,
    /// Groups whose labels this group fetches (mask containment/overlap).
    pub fetch_from: Vec<u8>,
}

/// The static partition rule for one dataset profile.
#[derive(Debug, Clone)]
pub struct AUPartitionTable {
    pub dataset: String,
    /// AU universe, ascending; position = label column.
    pub aus: Vec<u16>,
    /// Groups, ascending by group_id.
    pub groups: Vec<AuGroup>,
}

/// One bounding-box (= label-matrix row) slot: (group, side).
pub type RowSlot = (u8, Side);

impl AUPartitionTable {
    pub fn parse(text: &str) -> Result<AUPartitionTable> {
        let mut dataset = String::new();
        let mut aus: Vec<u16> = Vec::new();
        let mut groups: Vec<AuGroup> = Vec::new();
        let mut version_seen = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Format(format!("partition line {}: {msg}", lineno + 1));
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks[0] {
                "partition" => {
                    if toks.get(1) != Some(&"v1") {
                        return Err(err("unsupported partition version".into()));
                    }
                    version_seen = true;
                }
                "dataset" => {
                    dataset = toks.get(1).unwrap_or(&"").to_string();
                }
                "aus" => {
                    aus = parse_num_list(toks.get(1).unwrap_or(&"")).map_err(err)?;
                }
                "group" => {
                    let group_id: u8 = toks
                        .get(1)
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err("bad group id".into()))?;
                    let mut symmetric = false;
                    let mut au_list = Vec::new();
                    let mut roi_list = Vec::new();
                    let mut fetch_from = Vec::new();
                    for &tok in &toks[2..] {
                        let (key, val) = tok
                            .split_once('=')
                            .ok_or_else(|| err(format!("expected key=value, got {tok:?}")))?;
                        match key {
                            "sym" => symmetric = val == "yes",
                            "aus" => au_list = parse_num_list(val).map_err(err)?,
                            "rois" => roi_list = parse_num_list(val).map_err(err)?,
                            "fetch" => fetch_from = parse_num_list(val).map_err(err)?,
                            other => return Err(err(format!("unknown key {other:?}"))),
                        }
                    }
                    groups.push(AuGroup {
                        group_id,
                        symmetric,
                        au_list,
                        roi_list,
                        fetch_from,
                    });
                }
                other => return Err(err(format!("unknown directive {other:?}"))),
            }
        }
        if !version_seen {
            return Err(Error::Format(
                "partition file missing `partition v1` header".into(),
            ));
        }
        groups.sort_by_key(|g| g.group_id);
        let table = AUPartitionTable {
            dataset,
            aus,
            groups,
        };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        if self.aus.is_empty() || self.groups.is_empty() {
            return Err(Error::Format("partition table needs aus and groups".into()));
        }
        if self.aus.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format(
                "au universe must be strictly ascending".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for g in &self.groups {
            if !seen.insert(g.group_id) {
                return Err(Error::Format(format!("group {} defined twice", g.group_id)));
            }
            if g.roi_list.is_empty() {
                return Err(Error::Format(format!(
                    "group {} has no regions",
                    g.group_id
                )));
            }
            for &r in &g.roi_list {
                if r == 0 || r as usize > BASIC_ROI_COUNT {
                    return Err(Error::Format(format!(
                        "group {}: roi {r} out of 1..=43",
                        g.group_id
                    )));
                }
            }
            for &au in &g.au_list {
                if !self.aus.contains(&au) {
                    return Err(Error::Format(format!(
                        "group {}: AU {au} not in the table's AU universe",
                        g.group_id
                    )));
                }
            }
        }
        for g in &self.groups {
            for &f in &g.fetch_from {
                if !seen.contains(&f) {
                    return Err(Error::Format(format!(
                        "group {}: fetch target {f} does not exist",
                        g.group_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of AU categories (columns of the label matrix).
    pub fn label_count(&self) -> usize {
        self.aus.len()
    }

    /// Column index of an AU number.
    pub fn au_col(&self, au: u16) -> Option<usize> {
        self.aus.binary_search(&au).ok()
    }

    pub fn group(&self, group_id: u8) -> Option<&AuGroup> {
        self.groups.iter().find(|g| g.group_id == group_id)
    }

    /// Bounding-box slots in canonical row order: groups ascending,
    /// symmetric groups contributing a left then a right box.
    pub fn rows(&self) -> Vec<RowSlot> {
        let mut rows = Vec::new();
        for g in &self.groups {
            if g.symmetric {
                rows.push((g.group_id, Side::Left));
                rows.push((g.group_id, Side::Right));
            } else {
                rows.push((g.group_id, Side::Whole));
            }
        }
        rows
    }

    /// Number of bounding boxes per frame (rows of the label matrix).
    pub fn row_count(&self) -> usize {
        self.rows().len()
    }

    /// The AUs a group's boxes carry: its own AUs plus the AUs of every
    /// group it fetches from. Fetch edges are applied as listed, without a
    /// transitive closure; chained memberships are already written out
    /// flat in the tables (group 8 lists both 5 and 6 as its containers).
    pub fn effective_aus(&self, group_id: u8) -> Vec<u16> {
        let mut set = std::collections::BTreeSet::new();
        if let Some(g) = self.group(group_id) {
            set.extend(g.au_list.iter().copied());
            for &f in &g.fetch_from {
                if let Some(src) = self.group(f) {
                    set.extend(src.au_list.iter().copied());
                }
            }
        }
        set.into_iter().collect()
    }

    /// roi_no -> groups that contain it.
    pub fn roi_to_groups(&self) -> Vec<Vec<u8>> {
        let mut map = vec![Vec::new(); BASIC_ROI_COUNT + 1];
        for g in &self.groups {
            for &r in &g.roi_list {
                map[r as usize].push(g.group_id);
            }
        }
        map
    }
}

fn parse_num_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<T>()
                .map_err(|_| format!("bad number {t:?}"))
        })
        .collect()
}

pub fn builtin_table(name: &str) -> Result<&'static AUPartitionTable> {
    static BP4D: OnceLock<AUPartitionTable> = OnceLock::new();
    static DISFA: OnceLock<AUPartitionTable> = OnceLock::new();
    static SYNTH: OnceLock<AUPartitionTable> = OnceLock::new();
    match name {
        "bp4d" => Ok(BP4D.get_or_init(|| {
            AUPartitionTable::parse(include_str!("../data/partition.bp4d.v1")).unwrap()
        })),
        "disfa" => Ok(DISFA.get_or_init(|| {
            AUPartitionTable::parse(include_str!("../data/partition.disfa.v1")).unwrap()
        })),
        "synth" | "synthetic" => Ok(SYNTH.get_or_init(|| {
            AUPartitionTable::parse(include_str!("../data/partition.synth.v1")).unwrap()
        })),
        other => Err(Error::Config(format!("unknown dataset profile {other:?}"))),
    }
}

pub fn builtin_table_text(name: &str) -> Result<&'static str> {
    match name {
        "bp4d" => Ok(include_str!("../data/partition.bp4d.v1")),
        "disfa" => Ok(include_str!("../data/partition.disfa.v1")),
        "synth" | "synthetic" => Ok(include_str!("../data/partition.synth.v1")),
        other => Err(Error::Config(format!("unknown dataset profile {other:?}"))),
    }
}

/// Pixel union of one AU group's basic regions.
#[derive(Debug, Clone)]
pub struct AUMask {
    pub group_id: u8,
    pub mask: PixelMask,
}

/// Compose an AU mask as the exact set-union of the group's basic-RoI
/// masks. No morphology is applied.
pub fn compose_au_mask(
    group_id: u8,
    basic_rois: &BTreeMap<u8, PixelMask>,
    table: &AUPartitionTable,
) -> Result<AUMask> {
    let group = table
        .group(group_id)
        .ok_or_else(|| Error::Format(format!("group {group_id} not in table")))?;
    let mut iter = group.roi_list.iter();
    let first = *iter.next().expect("groups have at least one roi");
    let mut mask = basic_rois
        .get(&first)
        .ok_or(Error::MissingRegion { roi_no: first })?
        .clone();
    for &roi_no in iter {
        let m = basic_rois
            .get(&roi_no)
            .ok_or(Error::MissingRegion { roi_no })?;
        mask.union_in_place(m);
    }
    Ok(AUMask { group_id, mask })
}

/// Same union, read straight off the pixel owner map.
pub fn compose_au_mask_from_owner(
    group_id: u8,
    owner: &OwnerMap,
    table: &AUPartitionTable,
) -> Result<AUMask> {
    let group = table
        .group(group_id)
        .ok_or_else(|| Error::Format(format!("group {group_id} not in table")))?;
    let mut member = [false; BASIC_ROI_COUNT + 1];
    for &r in &group.roi_list {
        member[r as usize] = true;
    }
    let mut mask = PixelMask::new(owner.width(), owner.height());
    for py in 0..owner.height() {
        for px in 0..owner.width() {
            if member[owner.owner_of(px, py) as usize] {
                mask.set(px, py, true);
            }
        }
    }
    Ok(AUMask { group_id, mask })
}

/// Minimum bounding box around an AU mask (or one side of it).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuBox {
    pub group_id: u8,
    pub side: Side,
    pub y_min: f64,
    pub x_min: f64,
    pub y_max: f64,
    pub x_max: f64,
    pub space: Space,
}

impl AuBox {
    pub fn new(
        group_id: u8,
        side: Side,
        coords: (f64, f64, f64, f64),
        space: Space,
    ) -> Result<AuBox> {
        let (y_min, x_min, y_max, x_max) = coords;
        if !(y_min < y_max && x_min < x_max) {
            return Err(Error::Shape(format!(
                "box for group {group_id} is not positive: ({y_min}, {x_min}, {y_max}, {x_max})"
            )));
        }
        Ok(AuBox {
            group_id,
            side,
            y_min,
            x_min,
            y_max,
            x_max,
            space,
        })
    }

    pub fn coords(&self) -> (f64, f64, f64, f64) {
        (self.y_min, self.x_min, self.y_max, self.x_max)
    }

    pub fn area(&self) -> f64 {
        (self.y_max - self.y_min) * (self.x_max - self.x_min)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

/// Serialize box coordinates in the published `(y_min, x_min, y_max, x_max)`
/// style. f64 display is shortest-round-trip, so parsing and re-serializing
/// a published row reproduces it character for character.
pub fn box_str(coords: (f64, f64, f64, f64)) -> String {
    format!("({}, {}, {}, {})", coords.0, coords.1, coords.2, coords.3)
}

/// Parse a `(y_min, x_min, y_max, x_max)` tuple.
pub fn parse_box_str(s: &str) -> Result<(f64, f64, f64, f64)> {
    let inner = s
        .trim()
        .strip_prefix('(')
        .and_then(|t| t.strip_suffix(')'))
        .ok_or_else(|| Error::Format(format!("expected parenthesized box, got {s:?}")))?;
    let vals: Vec<f64> = inner
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("bad box coordinate {t:?}")))
        })
        .collect::<Result<_>>()?;
    if vals.len() != 4 {
        return Err(Error::Format(format!(
            "box needs 4 coordinates, got {}",
            vals.len()
        )));
    }
    Ok((vals[0], vals[1], vals[2], vals[3]))
}

/// Convert one AU mask into its minimum bounding box(es).
///
/// Non-symmetric groups give one tight box. A symmetric group is split at
/// the vertical line `split_x` (the landmark-derived face midline) and each
/// side's tight hull becomes one box, left first.
pub fn mask_to_boxes(
    au_mask: &AUMask,
    table: &AUPartitionTable,
    split_x: f64,
) -> Result<Vec<AuBox>> {
    let group = table
        .group(au_mask.group_id)
        .ok_or_else(|| Error::Format(format!("group {} not in table", au_mask.group_id)))?;
    let mask = &au_mask.mask;
    if mask.is_empty() {
        return Err(Error::EmptyMask {
            group_id: au_mask.group_id,
        });
    }
    if !group.symmetric {
        let bb = mask.tight_bbox().expect("non-empty mask");
        return Ok(vec![AuBox::new(
            group.group_id,
            Side::Whole,
            bb,
            Space::Image,
        )?]);
    }
    let mut left = PixelMask::new(mask.width(), mask.height());
    let mut right = PixelMask::new(mask.width(), mask.height());
    for py in 0..mask.height() {
        for px in 0..mask.width() {
            if mask.get(px, py) {
                if (px as f64 + 0.5) < split_x {
                    left.set(px, py, true);
                } else {
                    right.set(px, py, true);
                }
            }
        }
    }
    let lb = left.tight_bbox().ok_or(Error::EmptyMask {
        group_id: au_mask.group_id,
    })?;
    let rb = right.tight_bbox().ok_or(Error::EmptyMask {
        group_id: au_mask.group_id,
    })?;
    Ok(vec![
        AuBox::new(group.group_id, Side::Left, lb, Space::Image)?,
        AuBox::new(group.group_id, Side::Right, rb, Space::Image)?,
    ])
}

/// All AU bounding boxes of one frame in canonical row order.
pub fn boxes_for_frame(
    owner: &OwnerMap,
    table: &AUPartitionTable,
    split_x: f64,
) -> Result<Vec<AuBox>> {
    let mut out = Vec::with_capacity(table.row_count());
    for g in &table.groups {
        let mask = compose_au_mask_from_owner(g.group_id, owner, table)?;
        out.extend(mask_to_boxes(&mask, table, split_x)?);
    }
    Ok(out)
}

/// Divide image-space coordinates by the backbone stride. No rounding here;
/// quantization happens inside RoI pooling.
pub fn scale_box_to_feature(b: &AuBox, stride: u32) -> AuBox {
    let s = stride as f64;
    AuBox {
        group_id: b.group_id,
        side: b.side,
        y_min: b.y_min / s,
        x_min: b.x_min / s,
        y_max: b.y_max / s,
        x_max: b.x_max / s,
        space: Space::Feature,
    }
}

/// Dataset-average box coordinates per (group, side) slot.
#[derive(Debug, Clone)]
pub struct MeanBoxTable {
    pub slots: Vec<RowSlot>,
    pub boxes: Vec<AuBox>,
}

impl MeanBoxTable {
    pub fn for_slot(&self, group_id: u8, side: Side) -> Option<&AuBox> {
        self.slots
            .iter()
            .position(|&(g, s)| g == group_id && s == side)
            .map(|i| &self.boxes[i])
    }

    /// CSV in the published table shape: one row per group, the group's AU
    /// list, then its mean box(es).
    pub fn to_csv(&self, table: &AUPartitionTable) -> String {
        let mut out = String::from("group,au_index,mean_boxes\n");
        for g in &table.groups {
            let boxes: Vec<String> = self
                .slots
                .iter()
                .zip(&self.boxes)
                .filter(|((gid, _), _)| *gid == g.group_id)
                .map(|(_, b)| box_str(b.coords()))
                .collect();
            let aus = g
                .au_list
                .iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(";");
            out.push_str(&format!(
                "{},{},{}\n",
                g.group_id,
                aus,
                csvutil::quote_field(&boxes.join(", "))
            ));
        }
        out
    }
}

/// Parse a mean-box CSV back into (group, au list, box tuples) rows.
pub fn parse_mean_box_csv(text: &str) -> Result<Vec<(u8, Vec<u16>, Vec<(f64, f64, f64, f64)>)>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (lineno == 0 && line.starts_with("group")) {
            continue;
        }
        let fields = csvutil::split_line(line);
        if fields.len() != 3 {
            return Err(Error::Format(format!(
                "mean-box line {}: expected 3 fields",
                lineno + 1
            )));
        }
        let group_id: u8 = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("mean-box line {}: bad group", lineno + 1)))?;
        let aus: Vec<u16> = if fields[1].trim().is_empty() {
            Vec::new()
        } else {
            fields[1]
                .split(';')
                .map(|t| {
                    t.trim()
                        .parse::<u16>()
                        .map_err(|_| Error::Format(format!("bad AU number {t:?}")))
                })
                .collect::<Result<_>>()?
        };
        // every parenthesized tuple in the cell, whatever the separator
        let mut boxes = Vec::new();
        let cell = &fields[2];
        let mut rest = cell.as_str();
        while let Some(start) = rest.find('(') {
            let end = rest[start..]
                .find(')')
                .map(|e| start + e + 1)
                .ok_or_else(|| Error::Format(format!("unbalanced box tuple in {cell:?}")))?;
            boxes.push(parse_box_str(&rest[start..end])?);
            rest = &rest[end..];
        }
        if boxes.is_empty() {
            return Err(Error::Format(format!(
                "mean-box line {}: no box tuples",
                lineno + 1
            )));
        }
        rows.push((group_id, aus, boxes));
    }
    Ok(rows)
}

/// Streaming mean of per-frame box sets. Every frame must supply one box
/// per slot of the table's row layout.
#[derive(Debug, Clone)]
pub struct MeanBoxAccumulator {
    slots: Vec<RowSlot>,
    sums: Vec<[f64; 4]>,
    frames: usize,
}

impl MeanBoxAccumulator {
    pub fn new(table: &AUPartitionTable) -> Self {
        let slots = table.rows();
        let sums = vec![[0.0; 4]; slots.len()];
        MeanBoxAccumulator {
            slots,
            sums,
            frames: 0,
        }
    }

    pub fn add_frame(&mut self, boxes: &[AuBox]) -> Result<()> {
        if boxes.len() != self.slots.len() {
            return Err(Error::Shape(format!(
                "frame has {} boxes, table expects {}",
                boxes.len(),
                self.slots.len()
            )));
        }
        for (i, &(gid, side)) in self.slots.iter().enumerate() {
            let b = boxes
                .iter()
                .find(|b| b.group_id == gid && b.side == side)
                .ok_or_else(|| {
                    Error::Shape(format!("frame missing box for group {gid} {}", side.tag()))
                })?;
            let c = b.coords();
            self.sums[i][0] += c.0;
            self.sums[i][1] += c.1;
            self.sums[i][2] += c.2;
            self.sums[i][3] += c.3;
        }
        self.frames += 1;
        Ok(())
    }

    /// Merge a partial accumulation (associative, for parallel folds).
    pub fn merge(&mut self, other: &MeanBoxAccumulator) {
        assert_eq!(self.slots, other.slots);
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            for k in 0..4 {
                a[k] += b[k];
            }
        }
        self.frames += other.frames;
    }

    pub fn finish(&self) -> Result<MeanBoxTable> {
        if self.frames == 0 {
            return Err(Error::EmptyDataset);
        }
        let n = self.frames as f64;
        let boxes = self
            .slots
            .iter()
            .zip(&self.sums)
            .map(|(&(gid, side), s)| {
                AuBox::new(
                    gid,
                    side,
                    (s[0] / n, s[1] / n, s[2] / n, s[3] / n),
                    Space::Image,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MeanBoxTable {
            slots: self.slots.clone(),
            boxes,
        })
    }
}

/// Per-group average box area and proportion of the image area.
#[derive(Debug, Clone)]
pub struct AreaStats {
    /// (group_id, average box area in pixels, proportion of image area)
    pub rows: Vec<(u8, f64, f64)>,
}

impl AreaStats {
    /// Percent with one decimal, as printed in reports. Internal values
    /// keep full precision.
    pub fn proportion_percent(p: f64) -> String {
        format!("{:.1}", p * 100.0)
    }

    pub fn to_csv(&self, table: &AUPartitionTable) -> String {
        let mut out = String::from("group,au_index,avg_box_area_px,area_proportion_pct\n");
        for &(gid, area, prop) in &self.rows {
            let aus = table
                .group(gid)
                .map(|g| {
                    g.au_list
                        .iter()
                        .map(|a| a.to_string())
                        .collect::<Vec<_>>()
                        .join(";")
                })
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{}\n",
                gid,
                aus,
                area,
                Self::proportion_percent(prop)
            ));
        }
        out
    }
}

/// Streaming per-group box-area average over frames.
#[derive(Debug, Clone)]
pub struct AreaAccumulator {
    image_area: f64,
    sums: BTreeMap<u8, (f64, usize)>,
}

impl AreaAccumulator {
    pub fn new(width: u32, height: u32) -> Self {
        AreaAccumulator {
            image_area: width as f64 * height as f64,
            sums: BTreeMap::new(),
        }
    }

    pub fn add_boxes(&mut self, boxes: &[AuBox]) {
        for b in boxes {
            let e = self.sums.entry(b.group_id).or_insert((0.0, 0));
            e.0 += b.area();
            e.1 += 1;
        }
    }

    pub fn finish(&self) -> AreaStats {
        AreaStats {
            rows: self
                .sums
                .iter()
                .map(|(&gid, &(sum, n))| {
                    let avg = if n == 0 { 0.0 } else { sum / n as f64 };
                    (gid, avg, avg / self.image_area)
                })
                .collect(),
        }
    }
}
