use std::path::Path;

use super::{Dataset, Example, Image};
use crate::decoders::LabelVector;
use crate::error::{Error, Result};

/// The fourteen findings, in the order the public release lists them.
pub const CHEST_XRAY_LABELS: [&str; 14] = [
    "Atelectasis",
    "Cardiomegaly",
    "Effusion",
    "Infiltration",
    "Mass",
    "Nodule",
    "Pneumonia",
    "Pneumothorax",
    "Consolidation",
    "Edema",
    "Emphysema",
    "Fibrosis",
    "Pleural_Thickening",
    "Hernia",
];

/// Finding string of an image with no abnormality; maps to all-zero labels.
pub const NO_FINDING: &str = "No Finding";

const IMAGE_COLUMN: &str = "Image Index";
const LABEL_COLUMN: &str = "Finding Labels";

/// Box-filter resampling of a `width x height` grid to `side x side`: every
/// output pixel is the area-weighted mean of the source pixels it covers.
pub fn area_resample(width: usize, height: usize, pixels: &[f32], side: usize) -> Vec<f32> {
    let wx = area_weights(width, side);
    let wy = area_weights(height, side);
    // horizontal pass: height x side
    let mut tmp = vec![0.0f64; height * side];
    for y in 0..height {
        for (ox, taps) in wx.iter().enumerate() {
            tmp[y * side + ox] = taps.iter().map(|&(x, w)| w * f64::from(pixels[y * width + x])).sum();
        }
    }
    let mut out = vec![0.0f32; side * side];
    for (oy, taps) in wy.iter().enumerate() {
        for ox in 0..side {
            out[oy * side + ox] = taps.iter().map(|&(y, w)| w * tmp[y * side + ox]).sum::<f64>() as f32;
        }
    }
    out
}

/// For each output cell, the source cells it overlaps and their normalized weights.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .map(|i| {
                    let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                    (i, overlap / scale)
                })
                .filter(|&(_, w)| w > 0.0)
                .collect()
        })
        .collect()
}

/// Decode any supported image file to grayscale in `[0,1]` at `side x side`.
pub fn load_image(path: &Path, side: usize) -> Result<Image> {
    let img = image::open(path)?.to_luma32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let pixels = if w == side && h == side {
        raw
    } else {
        area_resample(w, h, &raw, side)
    };
    Image::new(side, pixels.into_iter().map(|p| p.clamp(0.0, 1.0)).collect())
}

/// Save as 8-bit grayscale PNG.
pub fn write_png(image: &Image, path: &Path) -> Result<()> {
    let bytes = image.pixels().iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let side = image.side() as u32;
    let buf = image::GrayImage::from_raw(side, side, bytes).expect("buffer matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Read the label CSV and its images. Labels come out in the order of
/// `label_names`; apply an ordering afterwards with [`Dataset::reorder`].
pub fn load_dataset(image_dir: &Path, labels_csv: &Path, resolution: usize, label_names: &[String]) -> Result<Dataset> {
    let csv_name = labels_csv.display().to_string();
    let ingest = |location: String, message: String| Error::Ingest { location, message };
    let mut reader = csv::Reader::from_path(labels_csv).map_err(|e| ingest(csv_name.clone(), e.to_string()))?;
    let mut dataset = Dataset::new(label_names.to_vec(), super::OrderingMode::Schema.id(), resolution);
    let headers = match reader.headers() {
        Ok(h) if h.is_empty() => return Ok(dataset),
        Ok(h) => h.clone(),
        Err(e) => return Err(ingest(csv_name, e.to_string())),
    };
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| ingest(csv_name.clone(), format!("missing column `{name}`")))
    };
    let (image_col, label_col) = (column(IMAGE_COLUMN)?, column(LABEL_COLUMN)?);
    for (row, record) in reader.records().enumerate() {
        // header is line 1
        let location = format!("{csv_name} line {}", row + 2);
        let record = record.map_err(|e| ingest(location.clone(), e.to_string()))?;
        let (file, findings) = match (record.get(image_col), record.get(label_col)) {
            (Some(f), Some(l)) if !f.trim().is_empty() => (f.trim(), l),
            _ => return Err(ingest(location, "missing image name or finding labels".into())),
        };
        let mut labels = LabelVector::zeros(label_names.len());
        for finding in findings.split('|').map(str::trim).filter(|s| !s.is_empty()) {
            if finding == NO_FINDING {
                continue;
            }
            let t = label_names
                .iter()
                .position(|n| n == finding)
                .ok_or_else(|| ingest(location.clone(), format!("unknown label `{finding}`")))?;
            labels.set(t, true);
        }
        let path = image_dir.join(file);
        if !path.is_file() {
            return Err(ingest(location, format!("image {} not found", path.display())));
        }
        let image = load_image(&path, resolution).map_err(|e| ingest(location.clone(), e.to_string()))?;
        dataset.push(Example {
            id: file.to_string(),
            image,
            labels,
        })?;
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Vec<String> {
        CHEST_XRAY_LABELS.iter().map(|s| s.to_string()).collect()
    }

    fn fixture(rows: &[(&str, &str)]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let mut csv = String::from("Image Index,Finding Labels,Patient ID\n");
        for (i, (file, labels)) in rows.iter().enumerate() {
            csv.push_str(&format!("{file},{labels},{i}\n"));
            let pixels = (0..64).map(|p| (p % 8) as f32 / 8.0 * (i + 1) as f32 / 4.0).collect();
            write_png(&Image::new(8, pixels).unwrap(), &dir.path().join(file)).unwrap();
        }
        std::fs::write(dir.path().join("labels.csv"), csv).unwrap();
        dir
    }

    #[test]
    fn empty_csv_gives_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        for content in ["", "Image Index,Finding Labels\n"] {
            std::fs::write(dir.path().join("l.csv"), content).unwrap();
            let d = load_dataset(dir.path(), &dir.path().join("l.csv"), 4, &schema()).unwrap();
            assert!(d.is_empty());
        }
    }

    #[test]
    fn finding_strings_set_bits() {
        let dir = fixture(&[("a.png", "Cardiomegaly|Edema"), ("b.png", "No Finding"), ("c.png", "Hernia")]);
        let d = load_dataset(dir.path(), &dir.path().join("labels.csv"), 4, &schema()).unwrap();
        assert_eq!(d.len(), 3);
        let ones = |i: usize| -> Vec<usize> { (0..14).filter(|&t| d.examples[i].labels.get(t)).collect() };
        assert_eq!(ones(0), [1, 9]);
        assert!(ones(1).is_empty());
        assert_eq!(ones(2), [13]);
        assert_eq!(d.examples[0].image.side(), 4);
        let again = load_dataset(dir.path(), &dir.path().join("labels.csv"), 4, &schema()).unwrap();
        assert_eq!(d, again);
    }

    #[test]
    fn bad_rows_name_the_line() {
        let dir = fixture(&[("a.png", "Edema"), ("b.png", "Edema|Bogus")]);
        match load_dataset(dir.path(), &dir.path().join("labels.csv"), 4, &schema()) {
            Err(Error::Ingest { location, message }) => {
                assert!(location.ends_with("line 3"), "{location}");
                assert!(message.contains("Bogus"));
            }
            other => panic!("{other:?}"),
        }
        let csv = dir.path().join("missing.csv");
        std::fs::write(&csv, "Image Index,Finding Labels\nnope.png,Edema\n").unwrap();
        assert!(matches!(load_dataset(dir.path(), &csv, 4, &schema()), Err(Error::Ingest { .. })));
    }

    #[test]
    fn area_resample_averages_blocks() {
        let src: Vec<f32> = (0..16).map(|v| v as f32).collect();
        assert_eq!(area_resample(4, 4, &src, 2), [2.5, 4.5, 10.5, 12.5]);
        assert!(area_resample(5, 3, &[0.25; 15], 4).iter().all(|v| (v - 0.25).abs() < 1e-7));
        // 3 -> 2: output 0 covers source 0 fully and half of source 1
        let out = area_resample(3, 1, &[0.0, 3.0, 6.0], 2);
        assert!((out[0] - 1.0).abs() < 1e-6 && (out[1] - 5.0).abs() < 1e-6, "{out:?}");
    }
}
