//! Image folder IO.
//!
//! A dataset folder holds one file per sample named
//! `<identity>_<camera>_<index>.<ext>` with `ext` one of `ppm`, `pgm` or
//! `png`. Files are read in lexicographic order. Generated datasets are
//! written as binary PPM (8 bits per channel) next to a JSON manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, Image, Sample, Split};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub identity: usize,
    pub camera: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_identities: usize,
    /// Split name to the samples it holds, paths relative to the manifest.
    pub splits: BTreeMap<String, Vec<ManifestEntry>>,
}

/// Parses `<identity>_<camera>_<index>.<ext>` into `(identity, camera, index)`.
pub fn parse_file_name(path: &Path) -> Result<(usize, usize, usize)> {
    let bad = |reason: &str| Error::BadFileName { path: path.to_path_buf(), reason: reason.into() };
    let stem = path.file_stem().and_then(|s| s.to_str()).ok_or_else(|| bad("not valid UTF-8"))?;
    let fields: Vec<&str> = stem.split('_').collect();
    if fields.len() != 3 {
        return Err(bad("expected <identity>_<camera>_<index>"));
    }
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| bad(&format!("{what} {s:?} is not a number")));
    Ok((num(fields[0], "identity")?, num(fields[1], "camera")?, num(fields[2], "index")?))
}

fn decode_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Decode { path: path.to_path_buf(), reason: reason.into() }
}

fn read_pnm(path: &Path, bytes: &[u8]) -> Result<Image> {
    // header: magic, width, height, maxval separated by whitespace with optional comments
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(decode_err(path, "truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| decode_err(path, "bad header"))?);
    }
    let channels = match fields[0] {
        "P5" => 1,
        "P6" => 3,
        m => return Err(decode_err(path, format!("unsupported magic {m}"))),
    };
    let parse = |s: &str| s.parse::<usize>().map_err(|_| decode_err(path, format!("bad header field {s:?}")));
    let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(decode_err(path, format!("unsupported maxval {maxval}")));
    }
    pos += 1; // single whitespace byte before the raster
    let n = width * height * channels;
    let raster = bytes.get(pos..pos + n).ok_or_else(|| decode_err(path, "truncated raster"))?;
    let px = raster.iter().map(|&b| f64::from(b) / maxval as f64).collect();
    Image::new(height, width, channels, px)
}

fn read_png(path: &Path, bytes: &[u8]) -> Result<Image> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| decode_err(path, e.to_string()))?;
    let (px, channels, w, h) = if img.color().channel_count() == 1 {
        let g = img.to_luma8();
        (g.as_raw().clone(), 1, g.width(), g.height())
    } else {
        let rgb = img.to_rgb8();
        (rgb.as_raw().clone(), 3, rgb.width(), rgb.height())
    };
    let px = px.iter().map(|&b| f64::from(b) / 255.0).collect();
    Image::new(h as usize, w as usize, channels, px)
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path)?;
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("ppm" | "pgm") => read_pnm(path, &bytes),
        Some("png") => read_png(path, &bytes),
        _ => Err(decode_err(path, "unsupported extension")),
    }
}

/// Writes an image as binary PPM (3 channels) or PGM (1 channel).
pub fn write_ppm(img: &Image, path: &Path) -> Result<()> {
    let magic = match img.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::InvalidInput(format!("cannot write {c}-channel image as PNM"))),
    };
    let mut out = Vec::with_capacity(img.len() + 32);
    write!(out, "{magic}\n{} {}\n255\n", img.width(), img.height())?;
    out.extend(img.pixels().iter().map(|p| (p * 255.0).round() as u8));
    fs::write(path, out)?;
    Ok(())
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("ppm" | "pgm" | "png")
    )
}

/// Loads every image file in `dir`. The split is taken from the directory
/// name (`train`, `query`, `gallery`), defaulting to train.
pub fn load_folder(dir: &Path) -> Result<Dataset> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.is_file() && is_image(p));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!("no image files in {}", dir.display())));
    }
    let split = match dir.file_name().and_then(|n| n.to_str()) {
        Some("query") => Split::Query,
        Some("gallery") => Split::Gallery,
        _ => Split::Train,
    };
    let samples = paths
        .iter()
        .map(|p| {
            let (identity, camera, _) = parse_file_name(p)?;
            Ok(Sample { image: read_image(p)?, identity, camera })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(split, samples)
}

/// Writes `ds` into `dir` (created if needed) and returns its manifest entries,
/// with file names relative to `dir`'s parent.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(dir)?;
    let sub = dir.file_name().and_then(|n| n.to_str()).unwrap_or(ds.split.name()).to_string();
    let ext = if ds.image_shape().2 == 1 { "pgm" } else { "ppm" };
    ds.samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let name = format!("{:05}_{}_{:06}.{ext}", s.identity, s.camera, i);
            write_ppm(&s.image, &dir.join(&name))?;
            Ok(ManifestEntry { file: format!("{sub}/{name}"), identity: s.identity, camera: s.camera })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;

    #[test]
    fn parses_names() {
        assert_eq!(parse_file_name(Path::new("a/00012_3_000007.ppm")).unwrap(), (12, 3, 7));
        for bad in ["1_2.ppm", "x_1_2.ppm", "1_2_3_4.png", "1__2.ppm"] {
            let err = parse_file_name(Path::new(bad)).unwrap_err();
            assert!(err.to_string().contains(bad), "{err}");
        }
    }

    #[test]
    fn folder_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let d = gen_synthetic(3, 3, 16, 16, 5).unwrap();
        let dir = tmp.path().join("train");
        let entries = write_dataset(&d.train, &dir).unwrap();
        assert_eq!(entries.len(), 9);
        let back = load_folder(&dir).unwrap();
        assert_eq!(back.split, Split::Train);
        assert_eq!(back.len(), 9);
        assert_eq!(back.num_identities(), 3);
        // file names sort by identity, then camera, then original index
        let mut order: Vec<usize> = (0..9).collect();
        order.sort_by_key(|&i| (d.train.samples[i].identity, d.train.samples[i].camera, i));
        for (b, &i) in back.samples.iter().zip(&order) {
            let o = &d.train.samples[i];
            assert_eq!((b.identity, b.camera), (o.identity, o.camera));
            for (x, y) in b.image.pixels().iter().zip(o.image.pixels()) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn three_files_two_ids() {
        let tmp = tempfile::tempdir().unwrap();
        let img = Image::filled(8, 8, 3, 0.25).unwrap();
        for name in ["0_0_0.ppm", "0_1_1.ppm", "1_0_2.ppm"] {
            write_ppm(&img, &tmp.path().join(name)).unwrap();
        }
        let ds = load_folder(tmp.path()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.num_identities(), 2);
    }

    #[test]
    fn malformed_name_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        let img = Image::filled(8, 8, 1, 0.5).unwrap();
        write_ppm(&img, &tmp.path().join("0_0_0.pgm")).unwrap();
        write_ppm(&img, &tmp.path().join("car_0.pgm")).unwrap();
        let err = load_folder(tmp.path()).unwrap_err();
        assert!(err.to_string().contains("car_0.pgm"), "{err}");
    }

    #[test]
    fn empty_and_truncated() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(load_folder(tmp.path()).is_err());
        fs::write(tmp.path().join("0_0_0.ppm"), b"P6\n8 8\n255\n\x01\x02").unwrap();
        assert!(matches!(load_folder(tmp.path()), Err(Error::Decode { .. })));
    }

    #[test]
    fn reads_png() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("4_1_0.png");
        let buf = image::RgbImage::from_fn(8, 9, |x, y| image::Rgb([x as u8 * 10, y as u8 * 20, 255]));
        buf.save(&path).unwrap();
        let img = read_image(&path).unwrap();
        assert_eq!(img.shape(), (9, 8, 3));
        assert_eq!(img.get(2, 3, 0), 30.0 / 255.0);
        assert_eq!(img.get(2, 3, 2), 1.0);
    }
}
