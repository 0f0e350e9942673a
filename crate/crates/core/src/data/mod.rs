//! Dataset container, normalization, augmentation, and the synthetic DPC
//! generator with its analytic performance ceiling.

pub mod container;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::rng::Rng;

pub const IMG_CHANNELS: usize = 4;
pub const IMG_HW: usize = 28;
pub const IMG_LEN: usize = IMG_CHANNELS * IMG_HW * IMG_HW;
pub const N_MARKERS: usize = 4;
pub const N_CLASSES: usize = 3;

/// Channel order of a DPC image: the four illumination directions.
pub const CHANNEL_NAMES: [&str; IMG_CHANNELS] = ["left", "right", "top", "bottom"];

/// Generic marker slots; display names live in the container manifest
/// because the panel naming differs between data sources.
pub const MARKER_NAMES: [&str; N_MARKERS] = ["m1", "m2", "m3", "m4"];
pub const MARKER_DISPLAY_NAMES: [&str; N_MARKERS] =
    ["CD45", "CD16", "CD3/CD19/CD56", "CD123/HLA-DR/CD14"];

pub const CLASS_NAMES: [&str; N_CLASSES] = ["Lymphocyte", "Granulocyte", "Monocyte"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One cell: a 4x28x28 image (channel-major), class label, four marker
/// targets.
#[derive(Clone, Debug, PartialEq)]
pub struct CellRecord {
    pub id: String,
    pub image: Vec<f32>,
    pub cls: usize,
    pub markers: [f32; N_MARKERS],
}

impl CellRecord {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.image.len() != IMG_LEN {
            return Err(DataError::Record(format!(
                "record {}: image has {} values, expected {IMG_LEN}",
                self.id,
                self.image.len()
            )));
        }
        if self.cls >= N_CLASSES {
            return Err(DataError::Record(format!("record {}: class {} out of range", self.id, self.cls)));
        }
        if !self.image.iter().all(|v| v.is_finite()) || !self.markers.iter().all(|v| v.is_finite()) {
            return Err(DataError::Record(format!("record {}: non-finite values", self.id)));
        }
        Ok(())
    }
}

/// Records plus their split assignment.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub records: Vec<CellRecord>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (s == split).then_some(i))
            .collect()
    }

    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &CellRecord> {
        self.records.iter().zip(self.splits.iter()).filter_map(move |(r, &s)| (s == split).then_some(r))
    }

    pub fn class_counts(&self, split: Split) -> [usize; N_CLASSES] {
        let mut counts = [0; N_CLASSES];
        for r in self.split_records(split) {
            counts[r.cls] += 1;
        }
        counts
    }
}

const STD_FLOOR: f64 = 1e-6;

/// Per-marker and per-channel moments of the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZScoreStats {
    pub marker_mean: [f64; N_MARKERS],
    pub marker_std: [f64; N_MARKERS],
    pub channel_mean: [f64; IMG_CHANNELS],
    pub channel_std: [f64; IMG_CHANNELS],
}

/// Population moments over the training split, stds floored at 1e-6.
pub fn zscore_fit<'a>(train: impl Iterator<Item = &'a CellRecord> + Clone) -> Result<ZScoreStats, DataError> {
    let n = train.clone().count();
    if n == 0 {
        return Err(DataError::Record("zscore_fit: empty training split".into()));
    }
    let mut marker_mean = [0.0f64; N_MARKERS];
    let mut channel_mean = [0.0f64; IMG_CHANNELS];
    let hw = IMG_HW * IMG_HW;
    for r in train.clone() {
        for (m, acc) in r.markers.iter().zip(marker_mean.iter_mut()) {
            *acc += *m as f64;
        }
        for c in 0..IMG_CHANNELS {
            let mut s = 0.0f64;
            for &v in &r.image[c * hw..(c + 1) * hw] {
                s += v as f64;
            }
            channel_mean[c] += s / hw as f64;
        }
    }
    for m in &mut marker_mean {
        *m /= n as f64;
    }
    for c in &mut channel_mean {
        *c /= n as f64;
    }
    let mut marker_var = [0.0f64; N_MARKERS];
    let mut channel_var = [0.0f64; IMG_CHANNELS];
    for r in train {
        for k in 0..N_MARKERS {
            let d = r.markers[k] as f64 - marker_mean[k];
            marker_var[k] += d * d;
        }
        for c in 0..IMG_CHANNELS {
            let mut s = 0.0f64;
            for &v in &r.image[c * hw..(c + 1) * hw] {
                let d = v as f64 - channel_mean[c];
                s += d * d;
            }
            channel_var[c] += s / hw as f64;
        }
    }
    let std_of = |var: f64, what: &str, idx: usize| -> f64 {
        let std = (var / n as f64).sqrt();
        if std < STD_FLOOR {
            eprintln!("warning: {what} {idx} is (near-)constant; std floored to {STD_FLOOR}");
            STD_FLOOR
        } else {
            std
        }
    };
    let mut stats = ZScoreStats {
        marker_mean,
        marker_std: [0.0; N_MARKERS],
        channel_mean,
        channel_std: [0.0; IMG_CHANNELS],
    };
    for k in 0..N_MARKERS {
        stats.marker_std[k] = std_of(marker_var[k], "marker", k);
    }
    for c in 0..IMG_CHANNELS {
        stats.channel_std[c] = std_of(channel_var[c], "channel", c);
    }
    Ok(stats)
}

/// Standardize markers and image channels in place with the given (training)
/// statistics.
pub fn zscore_apply(records: &mut [CellRecord], stats: &ZScoreStats) {
    let hw = IMG_HW * IMG_HW;
    for r in records {
        for k in 0..N_MARKERS {
            r.markers[k] = ((r.markers[k] as f64 - stats.marker_mean[k]) / stats.marker_std[k]) as f32;
        }
        for c in 0..IMG_CHANNELS {
            let mean = stats.channel_mean[c];
            let inv = 1.0 / stats.channel_std[c];
            for v in &mut r.image[c * hw..(c + 1) * hw] {
                *v = ((*v as f64 - mean) * inv) as f32;
            }
        }
    }
}

// ── augmentation ────────────────────────────────────────────────────────

/// Mirror the x axis and swap the left/right illumination channels. DPC
/// channels are direction-tagged, so a mirror also reverses the horizontal
/// illumination asymmetry.
pub fn flip_image(image: &[f32]) -> Vec<f32> {
    let hw = IMG_HW * IMG_HW;
    let mut out = vec![0.0f32; image.len()];
    // channel order: left, right, top, bottom -> right, left flip in x
    let channel_map = [1usize, 0, 2, 3];
    for (c_dst, &c_src) in channel_map.iter().enumerate() {
        for y in 0..IMG_HW {
            for x in 0..IMG_HW {
                out[c_dst * hw + y * IMG_HW + x] = image[c_src * hw + y * IMG_HW + (IMG_HW - 1 - x)];
            }
        }
    }
    out
}

/// Rotate by `theta` (radians) about the image center and translate by
/// `(tx, ty)` pixels, bilinear resampling with edge replication.
pub fn affine_image(image: &[f32], theta: f64, tx: f64, ty: f64) -> Vec<f32> {
    let hw = IMG_HW * IMG_HW;
    let c0 = (IMG_HW as f64 - 1.0) / 2.0;
    let (sin, cos) = theta.sin_cos();
    let mut out = vec![0.0f32; image.len()];
    for c in 0..IMG_CHANNELS {
        let plane = &image[c * hw..(c + 1) * hw];
        for y in 0..IMG_HW {
            for x in 0..IMG_HW {
                // inverse map: destination -> source
                let dx = x as f64 - c0 - tx;
                let dy = y as f64 - c0 - ty;
                let sx = cos * dx + sin * dy + c0;
                let sy = -sin * dx + cos * dy + c0;
                let x0 = sx.floor();
                let y0 = sy.floor();
                let fx = sx - x0;
                let fy = sy - y0;
                let clamp = |v: f64| (v.max(0.0).min(IMG_HW as f64 - 1.0)) as usize;
                let (x0c, x1c) = (clamp(x0), clamp(x0 + 1.0));
                let (y0c, y1c) = (clamp(y0), clamp(y0 + 1.0));
                let v00 = plane[y0c * IMG_HW + x0c] as f64;
                let v01 = plane[y0c * IMG_HW + x1c] as f64;
                let v10 = plane[y1c * IMG_HW + x0c] as f64;
                let v11 = plane[y1c * IMG_HW + x1c] as f64;
                let v = v00 * (1.0 - fx) * (1.0 - fy)
                    + v01 * fx * (1.0 - fy)
                    + v10 * (1.0 - fx) * fy
                    + v11 * fx * fy;
                out[c * hw + y * IMG_HW + x] = v as f32;
            }
        }
    }
    out
}

pub const AUG_MAX_ROT_DEG: f64 = 10.0;
pub const AUG_MAX_SHIFT_PX: f64 = 2.0;

/// Training-time augmentation: probability-half horizontal flip (with the
/// left/right channel swap) plus a mild random rotation and translation.
/// Labels and markers are untouched.
pub fn augment(record: &CellRecord, rng: &mut Rng) -> CellRecord {
    let mut image = if rng.bernoulli(0.5) { flip_image(&record.image) } else { record.image.clone() };
    let theta = rng.uniform_in(-AUG_MAX_ROT_DEG.to_radians(), AUG_MAX_ROT_DEG.to_radians());
    let tx = rng.uniform_in(-AUG_MAX_SHIFT_PX, AUG_MAX_SHIFT_PX);
    let ty = rng.uniform_in(-AUG_MAX_SHIFT_PX, AUG_MAX_SHIFT_PX);
    image = affine_image(&image, theta, tx, ty);
    CellRecord { id: record.id.clone(), image, cls: record.cls, markers: record.markers }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy_record(seed: u64) -> CellRecord {
        let mut rng = Rng::seeded(seed);
        CellRecord {
            id: format!("cell-{seed}"),
            image: (0..IMG_LEN).map(|_| rng.normal() as f32).collect(),
            cls: (seed % 3) as usize,
            markers: [rng.normal() as f32, rng.normal() as f32, rng.normal() as f32, rng.normal() as f32],
        }
    }

    #[test]
    fn zscore_closed_form() {
        // markers [1,2,3] -> z = [-1.2247, 0, 1.2247] with population std.
        let mut records: Vec<CellRecord> = (0..3)
            .map(|i| {
                let mut r = dummy_record(i);
                r.markers = [(i + 1) as f32; 4];
                r
            })
            .collect();
        let stats = zscore_fit(records.iter()).unwrap();
        zscore_apply(&mut records, &stats);
        let expect = [-1.224_744_9_f64, 0.0, 1.224_744_9];
        for (r, e) in records.iter().zip(expect.iter()) {
            assert!((r.markers[0] as f64 - e).abs() < 1e-6, "{} vs {e}", r.markers[0]);
        }
    }

    #[test]
    fn zscore_is_idempotent_on_standard_data() {
        let mut records: Vec<CellRecord> = (0..50).map(dummy_record).collect();
        let stats = zscore_fit(records.iter()).unwrap();
        zscore_apply(&mut records, &stats);
        // Now standard: a second fit+apply moves nothing beyond tolerance.
        let stats2 = zscore_fit(records.iter()).unwrap();
        for k in 0..N_MARKERS {
            assert!(stats2.marker_mean[k].abs() < 1e-6);
            assert!((stats2.marker_std[k] - 1.0).abs() < 1e-5);
        }
        let before = records.clone();
        zscore_apply(&mut records, &stats2);
        for (a, b) in before.iter().zip(records.iter()) {
            for (x, y) in a.markers.iter().zip(b.markers.iter()) {
                assert!((x - y).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn train_stats_do_not_recenter_test_split() {
        let train: Vec<CellRecord> = (0..40).map(dummy_record).collect();
        let mut test: Vec<CellRecord> = (100..140)
            .map(|i| {
                let mut r = dummy_record(i);
                for m in &mut r.markers {
                    *m += 5.0;
                }
                r
            })
            .collect();
        let stats = zscore_fit(train.iter()).unwrap();
        zscore_apply(&mut test, &stats);
        let mean: f64 = test.iter().map(|r| r.markers[0] as f64).sum::<f64>() / test.len() as f64;
        assert!(mean > 2.0, "test mean should stay shifted, got {mean}");
    }

    #[test]
    fn constant_marker_floors_std() {
        let mut records: Vec<CellRecord> = (0..5).map(dummy_record).collect();
        for r in &mut records {
            r.markers[2] = 7.0;
        }
        let stats = zscore_fit(records.iter()).unwrap();
        assert_eq!(stats.marker_std[2], STD_FLOOR);
    }

    #[test]
    fn identity_affine_is_bitwise_identity() {
        let r = dummy_record(9);
        let out = affine_image(&r.image, 0.0, 0.0, 0.0);
        assert_eq!(out, r.image);
    }

    #[test]
    fn double_flip_is_identity() {
        let r = dummy_record(11);
        assert_eq!(flip_image(&flip_image(&r.image)), r.image);
    }

    #[test]
    fn flip_preserves_mean_exactly_rotation_approximately() {
        let r = dummy_record(13);
        let mean = |img: &[f32]| img.iter().map(|&v| v as f64).sum::<f64>() / img.len() as f64;
        let m0 = mean(&r.image);
        assert_eq!(mean(&flip_image(&r.image)), m0);
        let rotated = affine_image(&r.image, 8.0f64.to_radians(), 0.0, 0.0);
        let m1 = mean(&rotated);
        // Edge replication perturbs the mean slightly. The tolerance is
        // absolute because these are standardized (near-zero-mean) images.
        assert!((m1 - m0).abs() < 0.02 * m0.abs().max(1.0), "{m0} vs {m1}");
    }

    #[test]
    fn augment_keeps_labels_and_markers() {
        let r = dummy_record(17);
        let mut rng = Rng::seeded(3);
        for _ in 0..10 {
            let a = augment(&r, &mut rng);
            assert_eq!(a.cls, r.cls);
            assert_eq!(a.markers, r.markers);
            assert_eq!(a.id, r.id);
        }
    }

    #[test]
    fn augment_is_deterministic_given_stream() {
        let r = dummy_record(21);
        let a = augment(&r, &mut Rng::seeded(5));
        let b = augment(&r, &mut Rng::seeded(5));
        assert_eq!(a.image, b.image);
    }
}
