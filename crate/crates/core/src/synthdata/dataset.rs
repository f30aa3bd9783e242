use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::perturb::to_u8;
use super::scene::{gen_scene, GridPhase, Scene};
use super::tamper::{gen_copy_move, gen_inpaint, gen_splice, TamperSample, TamperType};
use crate::seed::derive_seed;
use crate::{Error, Grid, Image, Mask, Result};

pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    Calibration,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::Calibration];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Calibration => "calibration",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
    }
}

const SAMPLE_ATTEMPTS: usize = 10;

/// The authentic scene of sample `seed`, on the aligned grid.
pub fn sample_host(seed: u64, height: usize, width: usize) -> Result<Scene> {
    gen_scene(derive_seed(seed, "host"), height, width, GridPhase::ALIGNED)
}

/// One tampered sample: aligned host scene plus a donor with a shifted grid
/// for splices. A failed manipulation is retried with a fresh operation seed.
pub fn generate_sample(seed: u64, height: usize, width: usize) -> Result<TamperSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = TamperType::ALL[rng.random_range(0..3)];
    let host = sample_host(seed, height, width)?;
    let host_phase = GridPhase::ALIGNED;
    let others: Vec<GridPhase> = GridPhase::ALL.into_iter().filter(|&p| p != host_phase).collect();
    let phase = others[rng.random_range(0..others.len())];
    let mut last = None;
    for attempt in 0..SAMPLE_ATTEMPTS {
        let op_seed = derive_seed(seed, &format!("tamper/{attempt}"));
        let r = match kind {
            TamperType::Splice => {
                let donor = gen_scene(derive_seed(seed, &format!("donor/{attempt}")), height, width, phase)?;
                gen_splice(op_seed, &donor, &host.image)
            }
            TamperType::CopyMove => gen_copy_move(op_seed, &host),
            TamperType::Inpaint => gen_inpaint(op_seed, &host),
        };
        match r {
            Ok(mut s) => {
                s.seed = seed;
                return Ok(s);
            }
            Err(e @ Error::Generation(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Fractions of the sample count assigned to train/val/test/calibration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions(pub [f64; 4]);

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions([0.7, 0.1, 0.1, 0.1])
    }
}

impl SplitFractions {
    /// Per-split counts; rounding residue goes to the training split.
    pub fn counts(&self, total: usize) -> Result<[usize; 4]> {
        let f = self.0;
        if f.iter().any(|v| !v.is_finite() || *v < 0.0) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("split fractions {f:?} must be nonnegative and sum to 1")));
        }
        let mut c = [0; 4];
        for i in 1..4 {
            c[i] = (total as f64 * f[i]).round() as usize;
        }
        let rest: usize = c[1..].iter().sum();
        if rest > total {
            return Err(Error::Config("split fractions over-allocate the sample count".into()));
        }
        c[0] = total - rest;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub image: String,
    pub mask: String,
    pub tamper_type: TamperType,
    pub seed: u64,
    pub object_aligned: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub splits: BTreeMap<Split, Vec<SampleRecord>>,
}

impl DatasetManifest {
    pub fn records(&self, split: Split) -> &[SampleRecord] {
        self.splits.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.splits.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Generate `counts[i]` samples for each split; seeds derive from `(seed, split, index)`.
pub fn generate_splits(seed: u64, height: usize, width: usize, counts: [usize; 4]) -> Result<Vec<(Split, TamperSample)>> {
    let mut out = Vec::new();
    for (split, &n) in Split::ALL.iter().zip(&counts) {
        for i in 0..n {
            let s = derive_seed(seed, &format!("{split}/{i}"));
            out.push((*split, generate_sample(s, height, width)?));
        }
    }
    Ok(out)
}

fn codec(path: &Path, e: impl fmt::Display) -> Error {
    Error::Codec {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn save_image_png(path: &Path, img: &Image) -> Result<()> {
    let bytes: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes).expect("buffer size");
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| codec(path, e))
}

pub fn save_gray_png(path: &Path, height: usize, width: usize, bytes: Vec<u8>) -> Result<()> {
    let buf = image::GrayImage::from_raw(width as u32, height as u32, bytes).expect("buffer size");
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| codec(path, e))
}

pub fn save_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let bytes = mask.data().iter().map(|&v| if v { 255 } else { 0 }).collect();
    save_gray_png(path, mask.height(), mask.width(), bytes)
}

pub fn load_image_png(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| codec(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(h as usize, w as usize, data)
}

pub fn load_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(|e| codec(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    Mask::new(h as usize, w as usize, img.as_raw().iter().map(|&b| b >= 128).collect())
}

/// 8-bit grayscale of a probability map, `round(255 p)`.
pub fn save_probability_png(path: &Path, prob: &Grid) -> Result<()> {
    let bytes = prob.data().iter().map(|&v| to_u8(v)).collect();
    save_gray_png(path, prob.height(), prob.width(), bytes)
}

pub fn load_probability_png(path: &Path) -> Result<Grid> {
    let img = image::open(path).map_err(|e| codec(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    Grid::new(h as usize, w as usize, img.as_raw().iter().map(|&b| b as f64 / 255.0).collect())
}

/// Write images, masks and `manifest.json` under `root`.
pub fn write_dataset(root: &Path, seed: u64, samples: &[(Split, TamperSample)]) -> Result<DatasetManifest> {
    let (height, width) = samples
        .first()
        .map(|(_, s)| (s.image.height(), s.image.width()))
        .ok_or_else(|| Error::InvalidInput("no samples to write".into()))?;
    let mut splits: BTreeMap<Split, Vec<SampleRecord>> = BTreeMap::new();
    for split in Split::ALL {
        for sub in ["images", "masks"] {
            let d = root.join(split.name()).join(sub);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
    }
    for (split, s) in samples {
        let recs = splits.entry(*split).or_default();
        let id = format!("{:05}", recs.len());
        let image = format!("{split}/images/{id}.png");
        let mask = format!("{split}/masks/{id}.png");
        save_image_png(&root.join(&image), &s.image)?;
        save_mask_png(&root.join(&mask), &s.mask)?;
        recs.push(SampleRecord {
            id,
            image,
            mask,
            tamper_type: s.tamper_type,
            seed: s.seed,
            object_aligned: s.object_aligned,
        });
    }
    let manifest = DatasetManifest {
        version: DATASET_VERSION,
        seed,
        height,
        width,
        splits,
    };
    crate::io::write_json(&root.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[derive(Clone, Debug)]
pub struct LoadedSample {
    pub record: SampleRecord,
    pub image: Image,
    pub mask: Mask,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn iter_split(&self, split: Split) -> impl Iterator<Item = Result<LoadedSample>> + '_ {
        self.manifest.records(split).iter().map(move |r| {
            let image = load_image_png(&self.root.join(&r.image))?;
            let mask = load_mask_png(&self.root.join(&r.mask))?;
            Ok(LoadedSample {
                record: r.clone(),
                image,
                mask,
            })
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<LoadedSample>> {
        self.iter_split(split).collect()
    }
}

pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = crate::io::read_json(&root.join("manifest.json"))?;
    if manifest.version != DATASET_VERSION {
        return Err(Error::Version(format!(
            "dataset manifest version {} (expected {DATASET_VERSION})",
            manifest.version
        )));
    }
    for recs in manifest.splits.values() {
        for r in recs {
            for f in [&r.image, &r.mask] {
                let p = root.join(f);
                if !p.is_file() {
                    return Err(Error::io(
                        &p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "listed in manifest but missing"),
                    ));
                }
            }
        }
    }
    Ok(Dataset {
        root: root.to_path_buf(),
        manifest,
    })
}
