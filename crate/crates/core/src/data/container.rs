//! On-disk dataset container: `manifest.json` + `images.bin` (raw f32le)
//! + `labels.csv`. Round-trips are bit-exact; the blob is checksummed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    CellRecord, Dataset, Split, CHANNEL_NAMES, IMG_CHANNELS, IMG_HW, IMG_LEN, MARKER_DISPLAY_NAMES,
    MARKER_NAMES, N_MARKERS,
};
use crate::error::DataError;

pub const CONTAINER_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContainerManifest {
    pub version: u32,
    pub dtype: String,
    pub image_shape: Vec<usize>,
    pub record_count: usize,
    pub marker_names: Vec<String>,
    pub marker_display_names: Vec<String>,
    pub channel_names: Vec<String>,
    /// Per-record split assignment, index-aligned with the blob and csv.
    pub splits: Vec<Split>,
    pub blob_sha256: String,
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), source }
}

/// Write a dataset as a container directory (created if absent).
pub fn write_container(dataset: &Dataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut blob: Vec<u8> = Vec::with_capacity(dataset.len() * IMG_LEN * 4);
    let mut csv = String::from("id,cls,m1,m2,m3,m4\n");
    for r in &dataset.records {
        r.validate()?;
        for v in &r.image {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        // Shortest round-trip float formatting keeps the csv bit-exact.
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.id, r.cls, r.markers[0], r.markers[1], r.markers[2], r.markers[3]
        ));
    }
    let manifest = ContainerManifest {
        version: CONTAINER_VERSION,
        dtype: "f32le".into(),
        image_shape: vec![IMG_CHANNELS, IMG_HW, IMG_HW],
        record_count: dataset.len(),
        marker_names: MARKER_NAMES.iter().map(|s| s.to_string()).collect(),
        marker_display_names: MARKER_DISPLAY_NAMES.iter().map(|s| s.to_string()).collect(),
        channel_names: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
        splits: dataset.splits.clone(),
        blob_sha256: hex_digest(&blob),
    };
    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
        .map_err(|e| io_err(&manifest_path, e))?;
    let blob_path = dir.join("images.bin");
    fs::write(&blob_path, &blob).map_err(|e| io_err(&blob_path, e))?;
    let csv_path = dir.join("labels.csv");
    fs::write(&csv_path, csv).map_err(|e| io_err(&csv_path, e))?;
    Ok(())
}

/// Load a container from its directory or its `manifest.json` path.
/// Non-native image shapes are adapted (see [`adapt_image`]); currently the
/// 3x128x128 brightfield layout is accepted and reduced to the native
/// 4x28x28 DPC layout as a documented approximation.
pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let (dir, manifest_path): (PathBuf, PathBuf) = if path.is_dir() {
        (path.to_path_buf(), path.join("manifest.json"))
    } else {
        (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
    };
    let raw = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: ContainerManifest = serde_json::from_str(&raw).map_err(|e| DataError::MalformedManifest {
        path: manifest_path.display().to_string(),
        detail: e.to_string(),
    })?;
    if manifest.version != CONTAINER_VERSION {
        return Err(DataError::MalformedManifest {
            path: manifest_path.display().to_string(),
            detail: format!("unsupported version {}", manifest.version),
        });
    }
    if manifest.dtype != "f32le" {
        return Err(DataError::MalformedManifest {
            path: manifest_path.display().to_string(),
            detail: format!("unsupported dtype {}", manifest.dtype),
        });
    }
    if manifest.splits.len() != manifest.record_count {
        return Err(DataError::MalformedManifest {
            path: manifest_path.display().to_string(),
            detail: format!(
                "{} split assignments for {} records",
                manifest.splits.len(),
                manifest.record_count
            ),
        });
    }
    let image_len: usize = manifest.image_shape.iter().product();
    let native = manifest.image_shape == [IMG_CHANNELS, IMG_HW, IMG_HW];
    if !native && manifest.image_shape != [3, 128, 128] {
        return Err(DataError::MalformedManifest {
            path: manifest_path.display().to_string(),
            detail: format!("unsupported image shape {:?}", manifest.image_shape),
        });
    }

    let blob_path = dir.join("images.bin");
    let blob = fs::read(&blob_path).map_err(|e| io_err(&blob_path, e))?;
    let expected_bytes = manifest.record_count * image_len * 4;
    if blob.len() != expected_bytes {
        return Err(DataError::BlobLength {
            path: blob_path.display().to_string(),
            expected: expected_bytes,
            actual: blob.len(),
        });
    }
    let digest = hex_digest(&blob);
    if digest != manifest.blob_sha256 {
        return Err(DataError::ChecksumMismatch {
            path: blob_path.display().to_string(),
            expected: manifest.blob_sha256.clone(),
            actual: digest,
        });
    }

    let csv_path = dir.join("labels.csv");
    let csv = fs::read_to_string(&csv_path).map_err(|e| io_err(&csv_path, e))?;
    let mut lines = csv.lines();
    match lines.next() {
        Some(header) if header == "id,cls,m1,m2,m3,m4" => {}
        other => {
            return Err(DataError::Record(format!("labels.csv: bad header {other:?}")));
        }
    }
    let mut records = Vec::with_capacity(manifest.record_count);
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + N_MARKERS {
            return Err(DataError::Record(format!("labels.csv line {}: {} fields", i + 2, fields.len())));
        }
        let cls: usize = fields[1]
            .parse()
            .map_err(|e| DataError::Record(format!("labels.csv line {}: class: {e}", i + 2)))?;
        let mut markers = [0.0f32; N_MARKERS];
        for (k, m) in markers.iter_mut().enumerate() {
            *m = fields[2 + k]
                .parse()
                .map_err(|e| DataError::Record(format!("labels.csv line {}: marker {k}: {e}", i + 2)))?;
        }
        let start = i * image_len * 4;
        let end = start + image_len * 4;
        if end > blob.len() {
            return Err(DataError::Record(format!("labels.csv has more rows than blob records (row {})", i + 2)));
        }
        let raw_image: Vec<f32> = blob[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let image = if native { raw_image } else { adapt_image(&raw_image, &manifest.image_shape) };
        let record = CellRecord { id: fields[0].to_string(), image, cls, markers };
        record.validate()?;
        records.push(record);
    }
    if records.len() != manifest.record_count {
        return Err(DataError::Record(format!(
            "labels.csv has {} rows, manifest declares {}",
            records.len(),
            manifest.record_count
        )));
    }
    if !native {
        eprintln!(
            "note: adapted {} records from {:?} to native {}x{}x{} (grayscale center-resize, channels replicated); this pathway is an approximation",
            records.len(),
            manifest.image_shape,
            IMG_CHANNELS,
            IMG_HW,
            IMG_HW
        );
    }
    Ok(Dataset { records, splits: manifest.splits })
}

/// Reduce a 3x128x128 brightfield image to the native layout: grayscale
/// average, bilinear center-resize to 28x28, replicated onto all four
/// channels.
pub fn adapt_image(raw: &[f32], shape: &[usize]) -> Vec<f32> {
    let (c_in, h_in, w_in) = (shape[0], shape[1], shape[2]);
    let hw_in = h_in * w_in;
    // grayscale
    let mut gray = vec![0.0f32; hw_in];
    for c in 0..c_in {
        for (g, &v) in gray.iter_mut().zip(raw[c * hw_in..(c + 1) * hw_in].iter()) {
            *g += v / c_in as f32;
        }
    }
    let scale_y = h_in as f64 / IMG_HW as f64;
    let scale_x = w_in as f64 / IMG_HW as f64;
    let mut small = vec![0.0f32; IMG_HW * IMG_HW];
    for y in 0..IMG_HW {
        for x in 0..IMG_HW {
            let sy = (y as f64 + 0.5) * scale_y - 0.5;
            let sx = (x as f64 + 0.5) * scale_x - 0.5;
            let y0 = sy.floor().max(0.0).min(h_in as f64 - 1.0);
            let x0 = sx.floor().max(0.0).min(w_in as f64 - 1.0);
            let y1 = (y0 + 1.0).min(h_in as f64 - 1.0);
            let x1 = (x0 + 1.0).min(w_in as f64 - 1.0);
            let fy = (sy - y0).clamp(0.0, 1.0);
            let fx = (sx - x0).clamp(0.0, 1.0);
            let at = |yy: f64, xx: f64| gray[yy as usize * w_in + xx as usize] as f64;
            let v = at(y0, x0) * (1.0 - fx) * (1.0 - fy)
                + at(y0, x1) * fx * (1.0 - fy)
                + at(y1, x0) * (1.0 - fx) * fy
                + at(y1, x1) * fx * fy;
            small[y * IMG_HW + x] = v as f32;
        }
    }
    let mut out = Vec::with_capacity(IMG_LEN);
    for _ in 0..IMG_CHANNELS {
        out.extend_from_slice(&small);
    }
    out
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn sample_dataset(n: usize) -> Dataset {
        let mut rng = Rng::seeded(77);
        let mut records = Vec::new();
        let mut splits = Vec::new();
        for i in 0..n {
            records.push(CellRecord {
                id: format!("cell-{i:04}"),
                image: (0..IMG_LEN).map(|_| rng.normal() as f32).collect(),
                cls: i % 3,
                markers: [
                    rng.normal() as f32,
                    rng.normal() as f32,
                    rng.normal() as f32,
                    rng.normal() as f32,
                ],
            });
            splits.push(if i % 5 == 4 { Split::Test } else { Split::Train });
        }
        Dataset { records, splits }
    }

    fn tmp_dir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("cytophen-container-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tmp_dir("roundtrip");
        let ds = sample_dataset(12);
        write_container(&ds, &dir).unwrap();
        let loaded = load_dataset(&dir).unwrap();
        assert_eq!(loaded.len(), ds.len());
        assert_eq!(loaded.splits, ds.splits);
        for (a, b) in ds.records.iter().zip(loaded.records.iter()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.cls, b.cls);
            assert!(a.image.iter().zip(b.image.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            assert!(a.markers.iter().zip(b.markers.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn empty_container_loads_empty() {
        let dir = tmp_dir("empty");
        write_container(&Dataset::default(), &dir).unwrap();
        let loaded = load_dataset(&dir).unwrap();
        assert!(loaded.is_empty());
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn wrong_blob_length_is_reported_with_both_sizes() {
        let dir = tmp_dir("len");
        let ds = sample_dataset(3);
        write_container(&ds, &dir).unwrap();
        let blob_path = dir.join("images.bin");
        let mut blob = fs::read(&blob_path).unwrap();
        blob.truncate(blob.len() - 8);
        fs::write(&blob_path, &blob).unwrap();
        let err = load_dataset(&dir).unwrap_err();
        match err {
            DataError::BlobLength { expected, actual, .. } => {
                assert_eq!(expected, 3 * IMG_LEN * 4);
                assert_eq!(actual, 3 * IMG_LEN * 4 - 8);
            }
            other => panic!("expected BlobLength, got {other}"),
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn corrupted_blob_fails_checksum() {
        let dir = tmp_dir("sum");
        let ds = sample_dataset(3);
        write_container(&ds, &dir).unwrap();
        let blob_path = dir.join("images.bin");
        let mut blob = fs::read(&blob_path).unwrap();
        blob[10] ^= 0xff;
        fs::write(&blob_path, &blob).unwrap();
        assert!(matches!(load_dataset(&dir).unwrap_err(), DataError::ChecksumMismatch { .. }));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn malformed_manifest_is_a_distinct_error() {
        let dir = tmp_dir("manifest");
        let ds = sample_dataset(2);
        write_container(&ds, &dir).unwrap();
        fs::write(dir.join("manifest.json"), "{not json").unwrap();
        assert!(matches!(load_dataset(&dir).unwrap_err(), DataError::MalformedManifest { .. }));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_blob_is_io_error() {
        let dir = tmp_dir("missing");
        let ds = sample_dataset(2);
        write_container(&ds, &dir).unwrap();
        fs::remove_file(dir.join("images.bin")).unwrap();
        assert!(matches!(load_dataset(&dir).unwrap_err(), DataError::Io { .. }));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn brightfield_layout_is_adapted() {
        let dir = tmp_dir("bccd");
        // Hand-build a container with the 3x128x128 layout.
        let n = 2;
        let image_len = 3 * 128 * 128;
        let mut rng = Rng::seeded(5);
        let mut blob = Vec::new();
        let mut csv = String::from("id,cls,m1,m2,m3,m4\n");
        for i in 0..n {
            for _ in 0..image_len {
                blob.extend_from_slice(&(rng.uniform() as f32).to_le_bytes());
            }
            csv.push_str(&format!("bf-{i},0,0,0,0,0\n"));
        }
        let manifest = ContainerManifest {
            version: CONTAINER_VERSION,
            dtype: "f32le".into(),
            image_shape: vec![3, 128, 128],
            record_count: n,
            marker_names: MARKER_NAMES.iter().map(|s| s.to_string()).collect(),
            marker_display_names: MARKER_DISPLAY_NAMES.iter().map(|s| s.to_string()).collect(),
            channel_names: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
            splits: vec![Split::Test; n],
            blob_sha256: hex_digest(&blob),
        };
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("manifest.json"), serde_json::to_string(&manifest).unwrap()).unwrap();
        fs::write(dir.join("images.bin"), &blob).unwrap();
        fs::write(dir.join("labels.csv"), csv).unwrap();
        let loaded = load_dataset(&dir).unwrap();
        assert_eq!(loaded.len(), n);
        for r in &loaded.records {
            assert_eq!(r.image.len(), IMG_LEN);
            // grayscale replicated across channels
            let hw = IMG_HW * IMG_HW;
            assert_eq!(r.image[..hw], r.image[hw..2 * hw]);
        }
        fs::remove_dir_all(&dir).unwrap();
    }
}
