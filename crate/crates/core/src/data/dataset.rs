use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_image, read_mask};
use crate::tensor::Tensor;

/// Environment variable naming the directory that holds the datasets.
pub const DATA_ROOT_ENV: &str = "M2U_DATA_ROOT";

/// A fundus image with its vessel mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `(1, 3, h, w)` in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `(1, 1, h, w)`, exactly 0 or 1.
    pub mask: Tensor<f32>,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, mask: Tensor<f32>) -> Result<Self> {
        let id = id.into();
        let [n, _, h, w] = image.shape();
        if n != 1 || mask.shape() != [1, 1, h, w] {
            return Err(Error::invalid(format!(
                "{id}: image {:?} and mask {:?} do not pair up",
                image.shape(),
                mask.shape()
            )));
        }
        if mask.data().iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::invalid(format!("{id}: mask is not binary")));
        }
        Ok(Self { id, image, mask })
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.image.height(), self.image.width())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetKind {
    #[serde(rename = "DRIVE")]
    Drive,
    #[serde(rename = "CHASE_DB1")]
    Chase,
    #[serde(rename = "HRF")]
    Hrf,
    /// Any directory with explicit `train.txt` / `test.txt` manifests and
    /// images whose sides are already multiples of 16.
    #[serde(rename = "custom")]
    Custom,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Drive => "DRIVE",
            Self::Chase => "CHASE_DB1",
            Self::Hrf => "HRF",
            Self::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DRIVE" => Ok(Self::Drive),
            "CHASE_DB1" | "CHASEDB1" | "CHASE" => Ok(Self::Chase),
            "HRF" => Ok(Self::Hrf),
            "CUSTOM" => Ok(Self::Custom),
            _ => Err(Error::usage(format!(
                "unknown dataset {s:?} (expected DRIVE, CHASE_DB1, HRF or custom)"
            ))),
        }
    }
}

/// Resolution, crop rule, split and batch size of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Native `(h, w)`; `None` for custom data.
    pub native_hw: Option<(usize, usize)>,
    pub cropped_hw: Option<(usize, usize)>,
    /// Top-left corner of the crop window in native coordinates.
    pub crop_origin: (usize, usize),
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub batch_size: usize,
}

fn numbered(range: std::ops::RangeInclusive<usize>, suffix: &str) -> Vec<String> {
    range.map(|i| format!("{i:02}{suffix}")).collect()
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind) -> Self {
        match kind {
            // 544×544 centre window; the odd width margin of 21 leaves 10
            // columns on the left and 11 on the right.
            DatasetKind::Drive => Self {
                kind,
                native_hw: Some((584, 565)),
                cropped_hw: Some((544, 544)),
                crop_origin: (20, 10),
                train_ids: numbered(21..=40, ""),
                test_ids: numbered(1..=20, ""),
                batch_size: 4,
            },
            DatasetKind::Chase => {
                let ids: Vec<String> = (1..=14)
                    .flat_map(|i| [format!("Image_{i:02}L"), format!("Image_{i:02}R")])
                    .collect();
                Self {
                    kind,
                    native_hw: Some((960, 999)),
                    cropped_hw: Some((960, 960)),
                    crop_origin: (0, 18),
                    train_ids: ids[..8].to_vec(),
                    test_ids: ids[8..].to_vec(),
                    batch_size: 2,
                }
            }
            DatasetKind::Hrf => {
                let cats = ["_h", "_dr", "_g"];
                Self {
                    kind,
                    native_hw: Some((2336, 3504)),
                    cropped_hw: Some((2336, 3504)),
                    crop_origin: (0, 0),
                    train_ids: cats.iter().flat_map(|c| numbered(1..=5, c)).collect(),
                    test_ids: cats.iter().flat_map(|c| numbered(6..=15, c)).collect(),
                    batch_size: 1,
                }
            }
            DatasetKind::Custom => Self {
                kind,
                native_hw: None,
                cropped_hw: None,
                crop_origin: (0, 0),
                train_ids: Vec::new(),
                test_ids: Vec::new(),
                batch_size: 1,
            },
        }
    }

    /// Pixels removed by the crop, counted as true negatives in evaluation.
    pub fn n_cropped(&self) -> u64 {
        match (self.native_hw, self.cropped_hw) {
            (Some((h, w)), Some((ch, cw))) => (h * w - ch * cw) as u64,
            _ => 0,
        }
    }

    pub fn split(&self) -> (&[String], &[String]) {
        (&self.train_ids, &self.test_ids)
    }
}

/// Applies the dataset's crop. Input already at the cropped resolution is
/// returned unchanged, so cropping is idempotent.
pub fn crop(sample: &Sample, spec: &DatasetSpec) -> Result<Sample> {
    let (h, w) = sample.hw();
    let (Some(native), Some((ch, cw))) = (spec.native_hw, spec.cropped_hw) else {
        if h % 16 != 0 || w % 16 != 0 {
            return Err(Error::invalid(format!(
                "{}: {h}x{w} is not a multiple of 16",
                sample.id
            )));
        }
        return Ok(sample.clone());
    };
    if (h, w) == (ch, cw) {
        return Ok(sample.clone());
    }
    if (h, w) != native {
        return Err(Error::invalid(format!(
            "{}: {h}x{w} is not the {} resolution {}x{}",
            sample.id,
            spec.kind.name(),
            native.0,
            native.1
        )));
    }
    let (y0, x0) = spec.crop_origin;
    Ok(Sample {
        id: sample.id.clone(),
        image: sample.image.window(y0, x0, ch, cw)?,
        mask: sample.mask.window(y0, x0, ch, cw)?,
    })
}

/// Holds out `k` training ids for validation, chosen by a seeded shuffle.
/// Both lists keep the original order.
pub fn make_validation(
    train: &[String],
    k: usize,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>)> {
    if k > 0 && k >= train.len() {
        return Err(Error::usage(format!(
            "cannot hold out {k} of {} training images",
            train.len()
        )));
    }
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held: std::collections::HashSet<usize> = idx[..k].iter().copied().collect();
    let (mut tr, mut val) = (Vec::new(), Vec::new());
    for (i, id) in train.iter().enumerate() {
        if held.contains(&i) {
            val.push(id.clone())
        } else {
            tr.push(id.clone())
        }
    }
    Ok((tr, val))
}

/// A dataset on disk: `<dir>/images/<id>*.{png,ppm,pgm}` and
/// `<dir>/labels/<id>*.{png,pgm,ppm}`. Optional `train.txt` / `test.txt`
/// (one id per line) replace the built-in split.
#[derive(Clone, Debug)]
pub struct DatasetDir {
    pub dir: PathBuf,
    pub spec: DatasetSpec,
}

fn read_manifest(path: &Path) -> Result<Option<Vec<String>>> {
    match std::fs::read_to_string(path) {
        Ok(text) => Ok(Some(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect(),
        )),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::load(path, e.to_string())),
    }
}

impl DatasetDir {
    /// Opens `dir`. The dataset kind is taken from `kind`, or else from the
    /// directory name.
    pub fn open(dir: impl Into<PathBuf>, kind: Option<DatasetKind>) -> Result<Self> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(Error::load(&dir, "dataset directory not found"));
        }
        let kind = match kind {
            Some(k) => k,
            None => dir
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| DatasetKind::parse(n).ok())
                .unwrap_or(DatasetKind::Custom),
        };
        let mut spec = DatasetSpec::new(kind);
        if let Some(ids) = read_manifest(&dir.join("train.txt"))? {
            spec.train_ids = ids;
        }
        if let Some(ids) = read_manifest(&dir.join("test.txt"))? {
            spec.test_ids = ids;
        }
        Ok(Self { dir, spec })
    }

    /// Resolves a dataset name or path against `root`, or the
    /// `M2U_DATA_ROOT` directory when `root` is `None`.
    pub fn resolve(name_or_path: &str, root: Option<&Path>) -> Result<Self> {
        let direct = PathBuf::from(name_or_path);
        if direct.is_dir() {
            return Self::open(direct, None);
        }
        let root = match root {
            Some(r) => r.to_path_buf(),
            None => std::env::var_os(DATA_ROOT_ENV)
                .map(PathBuf::from)
                .ok_or_else(|| {
                    Error::load(
                        &direct,
                        format!("not a directory and {DATA_ROOT_ENV} is unset"),
                    )
                })?,
        };
        let kind = DatasetKind::parse(name_or_path).ok();
        Self::open(root.join(name_or_path), kind)
    }

    fn find(&self, sub: &str, id: &str) -> Option<PathBuf> {
        let entries = std::fs::read_dir(self.dir.join(sub)).ok()?;
        let mut hits: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let ext_ok = p.extension().and_then(|e| e.to_str()).is_some_and(|e| {
                    matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm" | "pgm")
                });
                let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("");
                ext_ok && (stem == id || stem.starts_with(&format!("{id}_")))
            })
            .collect();
        hits.sort();
        hits.into_iter().next()
    }

    pub fn image_path(&self, id: &str) -> Result<PathBuf> {
        self.find("images", id)
            .ok_or_else(|| Error::load(self.dir.join("images"), format!("no image for id {id}")))
    }

    pub fn label_path(&self, id: &str) -> Result<PathBuf> {
        self.find("labels", id).ok_or_else(|| {
            Error::load(
                self.dir.join("labels"),
                format!("no ground truth for id {id}"),
            )
        })
    }

    /// Reads the image only, as an RGB `(1, 3, h, w)` tensor (gray images
    /// are replicated), cropped like a sample.
    pub fn load_image(&self, id: &str) -> Result<Tensor<f32>> {
        let image = to_rgb(read_image(self.image_path(id)?)?);
        let (h, w) = (image.height(), image.width());
        let mask = Tensor::zeros([1, 1, h, w]);
        Ok(crop(&Sample::new(id, image, mask)?, &self.spec)?.image)
    }

    /// Reads the ground-truth mask only, cropped like a sample.
    pub fn load_mask(&self, id: &str) -> Result<Tensor<f32>> {
        let mask = read_mask(self.label_path(id)?)?;
        let (h, w) = (mask.height(), mask.width());
        Ok(crop(
            &Sample::new(id, Tensor::zeros([1, 3, h, w]), mask)?,
            &self.spec,
        )?
        .mask)
    }

    /// Reads and crops one image with its mask.
    pub fn load(&self, id: &str) -> Result<Sample> {
        let image = to_rgb(read_image(self.image_path(id)?)?);
        let mask = read_mask(self.label_path(id)?)?;
        crop(&Sample::new(id, image, mask)?, &self.spec)
    }

    pub fn load_all(&self, ids: &[String]) -> Result<Vec<Sample>> {
        ids.iter().map(|id| self.load(id)).collect()
    }
}

fn to_rgb(t: Tensor<f32>) -> Tensor<f32> {
    if t.channels() == 3 {
        return t;
    }
    let [n, _, h, w] = t.shape();
    Tensor::from_fn([n, 3, h, w], |i, _, y, x| t.at(i, 0, y, x))
}
