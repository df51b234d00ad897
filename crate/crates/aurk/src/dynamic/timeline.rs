//! RoI timeline construction for the dynamic heads.
//!
//! A window selects T frames spaced `skip + 1` apart (skip frames are
//! dropped between consecutive time-steps to thin out near-identical
//! frames). Each AU bounding box forms its own timeline: a box only
//! connects to the same box slot in neighbouring selected frames.

use crate::error::{Error, Result};

/// Frame indices of one window starting at `start`: an arithmetic
/// progression with stride skip + 1.
pub fn window_frames(start: usize, skip: usize, steps: usize) -> Vec<usize> {
    (0..steps).map(|t| start + t * (skip + 1)).collect()
}

/// Number of source frames one window consumes.
pub fn window_span(skip: usize, steps: usize) -> usize {
    debug_assert!(steps >= 1);
    (steps - 1) * (skip + 1) + 1
}

/// Starting frames of all windows over a video of `video_len` frames,
/// advancing by `stride` (default: one window span, non-overlapping).
pub fn window_starts(
    video_len: usize,
    skip: usize,
    steps: usize,
    stride: Option<usize>,
) -> Result<Vec<usize>> {
    let span = window_span(skip, steps);
    if video_len < span {
        return Err(Error::InsufficientFrames {
            needed: span,
            got: video_len,
        });
    }
    let stride = stride.unwrap_or(span).max(1);
    Ok((0..=video_len - span).step_by(stride).collect())
}

/// Feature timelines of one window: per box slot, T per-frame features.
///
/// `frame_features[f][r]` is the feature of box slot `r` at source frame
/// `f`; the output regroups them per slot over the selected frames.
pub fn build_timelines<T: Clone>(
    frame_features: &[Vec<T>],
    start: usize,
    skip: usize,
    steps: usize,
) -> Result<Vec<Vec<T>>> {
    let span = window_span(skip, steps);
    if frame_features.len() < start + span {
        return Err(Error::InsufficientFrames {
            needed: start + span,
            got: frame_features.len(),
        });
    }
    let slots = frame_features[start].len();
    let mut lines: Vec<Vec<T>> = vec![Vec::with_capacity(steps); slots];
    for &f in &window_frames(start, skip, steps) {
        let feats = &frame_features[f];
        if feats.len() != slots {
            return Err(Error::Shape(format!(
                "frame {f} has {} box features, expected {slots}",
                feats.len()
            )));
        }
        for (r, feat) in feats.iter().enumerate() {
            lines[r].push(feat.clone());
        }
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skip_4_over_10_steps_selects_every_fifth_frame() {
        assert_eq!(window_span(4, 10), 46);
        let frames = window_frames(0, 4, 10);
        assert_eq!(frames, vec![0, 5, 10, 15, 20, 25, 30, 35, 40, 45]);
    }

    #[test]
    fn no_skipping_takes_consecutive_frames() {
        assert_eq!(window_frames(0, 0, 3), vec![0, 1, 2]);
    }

    #[test]
    fn short_video_is_rejected() {
        let err = window_starts(40, 4, 10, None).unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientFrames {
                needed: 46,
                got: 40
            }
        ));
        assert_eq!(window_starts(46, 4, 10, None).unwrap(), vec![0]);
    }

    #[test]
    fn default_stride_is_non_overlapping() {
        assert_eq!(window_starts(95, 4, 10, None).unwrap(), vec![0, 46]);
        assert_eq!(
            window_starts(95, 4, 10, Some(10)).unwrap(),
            vec![0, 10, 20, 30, 40]
        );
    }

    #[test]
    fn timelines_group_one_slot_across_frames() {
        // 3 slots, 11 frames; feature = (frame, slot)
        let frames: Vec<Vec<(usize, usize)>> =
            (0..11).map(|f| (0..3).map(|r| (f, r)).collect()).collect();
        let lines = build_timelines(&frames, 0, 4, 3).unwrap();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], vec![(0, 1), (5, 1), (10, 1)]);
    }
}
