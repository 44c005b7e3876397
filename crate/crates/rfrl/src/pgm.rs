//! Binary graymap (P5) images and directory-per-class datasets.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};
use rfrl_core::data::{Dataset, Sample};
use rfrl_core::image::resize;
use rfrl_core::{Error as CoreError, Tensor};

use crate::error::{Error, Result};

/// Reads an 8-bit PGM as a `[1, h, w]` tensor with values in `[0, 1]`.
pub fn load_pgm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let unreadable = |e: std::io::Error| Error::format(path, e.to_string());
    let img = ImageReader::open(path).and_then(|r| r.with_guessed_format()).map_err(unreadable)?;
    if img.format() != Some(ImageFormat::Pnm) {
        return Err(Error::format(path, "not a PGM file"));
    }
    let decoded = img.decode().map_err(|e| Error::format(path, e.to_string()))?;
    let gray = match decoded {
        image::DynamicImage::ImageLuma8(g) => g,
        other => return Err(Error::format(path, format!("expected 8-bit grayscale, got {:?}", other.color()))),
    };
    let (w, h) = gray.dimensions();
    let values = gray.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Ok(Tensor::new(&[1, h as usize, w as usize], values)?)
}

/// Writes a `[h, w]` or `[1, h, w]` tensor as a binary PGM, mapping `[0, 1]`
/// to `0..=255` with rounding and clamping.
pub fn save_pgm(path: impl AsRef<Path>, img: &Tensor<f64>) -> Result<()> {
    let path = path.as_ref();
    let s = img.shape();
    let (h, w) = match *s {
        [h, w] | [1, h, w] => (h, w),
        _ => return Err(CoreError::Shape(format!("cannot write shape {:?} as a graymap", s)).into()),
    };
    let bytes: Vec<u8> = img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let encoder = PnmEncoder::new(BufWriter::new(file)).with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
    encoder
        .write_image(&bytes, w as u32, h as u32, ExtendedColorType::L8)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Fits a `[1, h, w]` image to `[channels, size_h, size_w]`: bilinear resize
/// when needed, then channel replication.
pub fn conform(img: &Tensor<f32>, channels: usize, h: usize, w: usize) -> Result<Tensor<f32>> {
    let img = if img.shape()[1..] == [h, w] { img.clone() } else { resize(img, h, w)? };
    let plane = img.data();
    let data = (0..channels).flat_map(|_| plane.iter().copied()).collect();
    Ok(Tensor::new(&[channels, h, w], data)?)
}

/// Sorted subdirectories of `root`, one per class.
fn class_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
            dirs.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Loads `root/<class>/*.pgm`, classes in name order, files in name order.
/// Returns the dataset and class names.
pub fn load_dataset(root: impl AsRef<Path>, channels: usize, h: usize, w: usize) -> Result<(Dataset, Vec<String>)> {
    let root = root.as_ref();
    let dirs = class_dirs(root)?;
    if dirs.is_empty() {
        return Err(CoreError::Dataset(format!("{} has no class subdirectories", root.display())).into());
    }
    let mut samples = Vec::new();
    for (label, (name, dir)) in dirs.iter().enumerate() {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(CoreError::Dataset(format!("class directory {} has no PGM images", dir.display())).into());
        }
        for f in files {
            let image = conform(&load_pgm(&f)?, channels, h, w)?;
            samples.push(Sample { image, label });
        }
        log::debug!("class {} '{}' loaded", label, name);
    }
    let names = dirs.into_iter().map(|(n, _)| n).collect::<Vec<_>>();
    Ok((Dataset::new(samples, names.len())?, names))
}

/// Writes `out/<class>/<index>.pgm` using the first channel of each image.
pub fn export_dataset(data: &Dataset, class_names: &[&str], out: impl AsRef<Path>) -> Result<()> {
    let out = out.as_ref();
    for (i, s) in data.samples().iter().enumerate() {
        let dir = out.join(class_names.get(s.label).copied().unwrap_or("unknown"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let sh = s.image.shape();
        let first = Tensor::new(&[sh[1], sh[2]], s.image.data()[..sh[1] * sh[2]].iter().map(|&v| v as f64).collect())?;
        save_pgm(dir.join(format!("{:05}.pgm", i)), &first)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_binary_graymaps_that_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let t = Tensor::<f64>::from_f64(&[2, 3], &[0.0, 1.0, 0.5, 2.0, -1.0, 0.2]).unwrap();
        save_pgm(&p, &t).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 255, 128, 255, 0, 51]);
        let back = load_pgm(&p).unwrap();
        assert_eq!(back.shape(), &[1, 2, 3]);
        assert_eq!(back.data()[2], 128.0 / 255.0);
    }

    #[test]
    fn conform_resizes_and_replicates() {
        let t = Tensor::<f32>::full(&[1, 4, 4], 0.25);
        let c = conform(&t, 3, 2, 2).unwrap();
        assert_eq!(c.shape(), &[3, 2, 2]);
        assert!(c.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }
}
