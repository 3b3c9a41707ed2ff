//! Dataset file IO.
//!
//! Binary layout: a 16-byte header of four little-endian u32 values
//! `(n, channels, height, width)`, followed by `n*channels*height*width`
//! little-endian f32 pixels in NCHW order, followed by `n` little-endian
//! i32 labels. Pixels must lie in [0, 1].
//!
//! `convert_idx` ingests the idx-ubyte format used by common public image
//! datasets (images magic 0x00000803, labels magic 0x00000801) into this
//! layout, scaling pixels to [0, 1].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, SimError};
use crate::image::{ImageBatch, LabeledDataset};

pub fn write_dataset(path: &Path, dataset: &LabeledDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let img = &dataset.images;
    for v in [img.n, img.channels, img.height, img.width] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for &px in &img.data {
        w.write_all(&(px as f32).to_le_bytes())?;
    }
    for &label in &dataset.labels {
        w.write_all(&(label as i32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; 16];
    r.read_exact(&mut head)
        .map_err(|_| SimError::MalformedData("file shorter than 16-byte header".into()))?;
    let dims: Vec<usize> = head
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let (n, channels, height, width) = (dims[0], dims[1], dims[2], dims[3]);
    let pixel_count = n
        .checked_mul(channels)
        .and_then(|v| v.checked_mul(height))
        .and_then(|v| v.checked_mul(width))
        .ok_or_else(|| SimError::MalformedData("header dimensions overflow".into()))?;

    let mut data = Vec::with_capacity(pixel_count);
    let mut buf = [0u8; 4];
    for i in 0..pixel_count {
        r.read_exact(&mut buf)
            .map_err(|_| SimError::MalformedData(format!("truncated pixel data at {i}")))?;
        let px = f32::from_le_bytes(buf) as f64;
        if !(0.0..=1.0).contains(&px) {
            return Err(SimError::MalformedData(format!(
                "pixel {i} = {px} outside [0, 1]"
            )));
        }
        data.push(px);
    }
    let mut labels = Vec::with_capacity(n);
    let mut max_label = 0i32;
    for i in 0..n {
        r.read_exact(&mut buf)
            .map_err(|_| SimError::MalformedData(format!("truncated labels at {i}")))?;
        let l = i32::from_le_bytes(buf);
        if l < 0 {
            return Err(SimError::MalformedData(format!("negative label at {i}")));
        }
        max_label = max_label.max(l);
        labels.push(l as usize);
    }
    let images = ImageBatch::from_data(data, n, channels, height, width)?;
    LabeledDataset::new(images, labels, max_label as usize + 1)
}

fn read_be_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| SimError::MalformedData("truncated idx header".into()))?;
    Ok(u32::from_be_bytes(buf))
}

/// Converts a pair of idx-ubyte files (uncompressed) into the binary layout
/// above, written to `out`.
pub fn convert_idx(images_path: &Path, labels_path: &Path, out: &Path) -> Result<()> {
    let mut ir = BufReader::new(File::open(images_path)?);
    if read_be_u32(&mut ir)? != 0x0000_0803 {
        return Err(SimError::MalformedData(
            "bad idx image magic (expected 0x00000803; is the file gunzipped?)".into(),
        ));
    }
    let n = read_be_u32(&mut ir)? as usize;
    let height = read_be_u32(&mut ir)? as usize;
    let width = read_be_u32(&mut ir)? as usize;
    let mut raw = vec![0u8; n * height * width];
    ir.read_exact(&mut raw)
        .map_err(|_| SimError::MalformedData("truncated idx image data".into()))?;

    let mut lr = BufReader::new(File::open(labels_path)?);
    if read_be_u32(&mut lr)? != 0x0000_0801 {
        return Err(SimError::MalformedData("bad idx label magic".into()));
    }
    let ln = read_be_u32(&mut lr)? as usize;
    if ln != n {
        return Err(SimError::MalformedData(format!(
            "idx files disagree: {n} images vs {ln} labels"
        )));
    }
    let mut raw_labels = vec![0u8; n];
    lr.read_exact(&mut raw_labels)
        .map_err(|_| SimError::MalformedData("truncated idx label data".into()))?;

    let data: Vec<f64> = raw.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&b| b as usize).collect();
    let max_label = labels.iter().copied().max().unwrap_or(0);
    let images = ImageBatch::from_data(data, n, 1, height, width)?;
    let dataset = LabeledDataset::new(images, labels, max_label + 1)?;
    write_dataset(out, &dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synthetic_dataset, SyntheticSpec};

    #[test]
    fn roundtrip_preserves_dataset_to_f32_precision() {
        let spec = SyntheticSpec {
            n_samples: 12,
            num_classes: 4,
            noise: 0.1,
        };
        let d = synthetic_dataset(&spec, 3).unwrap();
        let dir = std::env::temp_dir().join("fedsim-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.bin");
        write_dataset(&path, &d).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.len(), d.len());
        assert_eq!(back.labels, d.labels);
        for (a, b) in back.images.data.iter().zip(&d.images.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn idx_conversion_roundtrip() {
        let dir = std::env::temp_dir().join("fedsim-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let img_path = dir.join("probe-images.idx");
        let lab_path = dir.join("probe-labels.idx");
        let out_path = dir.join("probe.bin");

        let n = 3usize;
        let (h, w) = (2usize, 2usize);
        let mut img_bytes = Vec::new();
        img_bytes.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img_bytes.extend_from_slice(&(n as u32).to_be_bytes());
        img_bytes.extend_from_slice(&(h as u32).to_be_bytes());
        img_bytes.extend_from_slice(&(w as u32).to_be_bytes());
        img_bytes.extend_from_slice(&[0, 51, 102, 153, 204, 255, 0, 255, 10, 20, 30, 40]);
        std::fs::write(&img_path, &img_bytes).unwrap();

        let mut lab_bytes = Vec::new();
        lab_bytes.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lab_bytes.extend_from_slice(&(n as u32).to_be_bytes());
        lab_bytes.extend_from_slice(&[1, 0, 2]);
        std::fs::write(&lab_path, &lab_bytes).unwrap();

        convert_idx(&img_path, &lab_path, &out_path).unwrap();
        let d = read_dataset(&out_path).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.labels, vec![1, 0, 2]);
        assert_eq!(d.num_classes, 3);
        assert!((d.images.image(0)[1] - 51.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn malformed_files_rejected() {
        let dir = std::env::temp_dir().join("fedsim-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("short.bin");
        std::fs::write(&path, [1, 2, 3]).unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(SimError::MalformedData(_))
        ));
    }
}
