use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::{Dataset, DatasetError, PairedSample, Split};
use crate::autograd::{init, Scalar, Tensor};

pub const MANIFEST_HEADER: [&str; 4] = ["image_path", "spectrogram_path", "class", "split"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub image_path: PathBuf,
    pub spectrogram_path: PathBuf,
    pub class: String,
    pub split: Split,
}

/// Class table plus rows. Class indices follow table order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub rows: Vec<ManifestRow>,
}

/// Classes dropped while pairing because one modality had nothing.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairingReport {
    pub missing_audio: Vec<String>,
    pub missing_images: Vec<String>,
}

impl PairingReport {
    pub fn dropped(&self) -> impl Iterator<Item = &str> {
        self.missing_audio.iter().chain(&self.missing_images).map(String::as_str)
    }
}

/// A class with a single sample: kept, placed in the training half.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitWarning {
    pub class: String,
}

impl DatasetManifest {
    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    /// Reads the CSV form. The class table is the sorted set of class names.
    pub fn read_csv(reader: impl Read) -> Result<Self, DatasetError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
            return Err(DatasetError::Manifest {
                line: 1,
                reason: format!("header must be `{}`", MANIFEST_HEADER.join(",")),
            });
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let split = rec[3]
                .parse::<Split>()
                .map_err(|reason| DatasetError::Manifest { line, reason })?;
            if rec[2].is_empty() {
                return Err(DatasetError::Manifest {
                    line,
                    reason: "empty class name".into(),
                });
            }
            rows.push(ManifestRow {
                image_path: PathBuf::from(&rec[0]),
                spectrogram_path: PathBuf::from(&rec[1]),
                class: rec[2].to_string(),
                split,
            });
        }
        let classes: BTreeSet<String> = rows.iter().map(|r| r.class.clone()).collect();
        Ok(Self {
            classes: classes.into_iter().collect(),
            rows,
        })
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(MANIFEST_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.image_path.to_string_lossy().as_ref(),
                r.spectrogram_path.to_string_lossy().as_ref(),
                r.class.as_str(),
                r.split.as_str(),
            ])?;
        }
        w.flush().map_err(|source| DatasetError::Io {
            path: PathBuf::from("<manifest>"),
            source,
        })?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_csv(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path.as_ref(), buf).map_err(|source| DatasetError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        })
    }
}

/// Pairs every image with a same-class spectrogram.
///
/// Within a class the spectrogram list is shuffled by the seed and image
/// `i` (in index order) takes entry `i mod len`, so equal counts give a
/// one-to-one assignment. Classes lacking either modality are dropped and
/// reported. All rows are tagged `train` until [`split_halves`] runs.
pub fn pair_modalities(
    images: &BTreeMap<String, Vec<PathBuf>>,
    audio: &BTreeMap<String, Vec<PathBuf>>,
    seed: u64,
) -> Result<(DatasetManifest, PairingReport), DatasetError> {
    let mut rng = init::rng(seed);
    let mut report = PairingReport::default();
    let mut manifest = DatasetManifest::default();
    let names: BTreeSet<&String> = images.keys().chain(audio.keys()).collect();
    for class in names {
        let imgs = images.get(class).map(Vec::as_slice).unwrap_or_default();
        let auds = audio.get(class).map(Vec::as_slice).unwrap_or_default();
        if imgs.is_empty() {
            report.missing_images.push(class.clone());
            continue;
        }
        if auds.is_empty() {
            report.missing_audio.push(class.clone());
            continue;
        }
        let mut order: Vec<&PathBuf> = auds.iter().collect();
        order.shuffle(&mut rng);
        manifest.classes.push(class.clone());
        for (i, img) in imgs.iter().enumerate() {
            manifest.rows.push(ManifestRow {
                image_path: img.clone(),
                spectrogram_path: order[i % order.len()].clone(),
                class: class.clone(),
                split: Split::Train,
            });
        }
    }
    if manifest.classes.is_empty() {
        return Err(DatasetError::NoOverlap);
    }
    Ok((manifest, report))
}

/// Per-class seeded 50/50 split; odd counts give the extra sample to train.
/// Row order is preserved, only tags change.
pub fn split_halves(manifest: &DatasetManifest, seed: u64) -> (DatasetManifest, Vec<SplitWarning>) {
    let mut rng = init::rng(seed);
    let mut out = manifest.clone();
    let mut warnings = Vec::new();
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.rows.iter().enumerate() {
        by_class.entry(r.class.as_str()).or_default().push(i);
    }
    for (class, mut rows) in by_class {
        if rows.len() == 1 {
            warnings.push(SplitWarning { class: class.to_string() });
        }
        rows.shuffle(&mut rng);
        let n_train = rows.len().div_ceil(2);
        for (k, &i) in rows.iter().enumerate() {
            out.rows[i].split = if k < n_train { Split::Train } else { Split::Test };
        }
    }
    (out, warnings)
}

/// Reads a PNG or PPM into a `[3, hw, hw]` tensor in `[0, 1]`, resizing
/// with a triangle filter when the image is not already `hw x hw`.
pub fn read_image_tensor<T: Scalar>(path: &Path, hw: usize) -> Result<Tensor<T>, DatasetError> {
    let img = image::open(path).map_err(|e| DatasetError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut rgb = img.to_rgb8();
    if rgb.width() as usize != hw || rgb.height() as usize != hw {
        rgb = image::imageops::resize(&rgb, hw as u32, hw as u32, image::imageops::FilterType::Triangle);
    }
    let mut data = vec![T::zero(); 3 * hw * hw];
    for (x, y, p) in rgb.enumerate_pixels() {
        for ch in 0..3 {
            data[(ch * hw + y as usize) * hw + x as usize] = T::from_f64(p[ch] as f64 / 255.0);
        }
    }
    Ok(Tensor::new(&[3, hw, hw], data).expect("sized above"))
}

/// Loads every manifest row, resolving relative paths against `base`.
pub fn load_manifest_samples<T: Scalar>(
    manifest: &DatasetManifest,
    base: &Path,
    hw: usize,
) -> Result<Dataset<T>, DatasetError> {
    let mut ds = Dataset::new(manifest.classes.clone());
    for (i, r) in manifest.rows.iter().enumerate() {
        let label = manifest.class_index(&r.class).ok_or_else(|| DatasetError::Manifest {
            line: i + 2,
            reason: format!("class `{}` not in class table", r.class),
        })?;
        ds.samples.push(PairedSample {
            image: read_image_tensor(&base.join(&r.image_path), hw)?,
            spectrogram: read_image_tensor(&base.join(&r.spectrogram_path), hw)?,
            label,
            image_id: r.image_path.to_string_lossy().into_owned(),
            audio_id: r.spectrogram_path.to_string_lossy().into_owned(),
            split: r.split,
        });
    }
    Ok(ds)
}
