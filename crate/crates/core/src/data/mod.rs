//! Datasets of labelled point clouds and their train/test subsetting.

pub mod off;
pub mod synthetic;

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use off::{load_xyz, parse_xyz, Mesh};
pub use synthetic::{
    generate_shape, make_caption, render_depth, Augment, ShapeKind, View, CAPTION_TEMPLATES,
    ZERO_SHOT_TEMPLATE,
};

use crate::encoders::PointCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// How a sample's cloud was produced; enough to rebuild it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: ShapeKind,
    pub points: usize,
    pub noise: f64,
    pub seed: u64,
    pub augment: Augment,
}

impl GeneratorSpec {
    pub fn build(&self) -> Result<PointCloud> {
        self.augment.apply(&generate_shape(self.kind, self.points, self.noise, self.seed)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub cloud: PointCloud,
    pub label: usize,
    pub split: Split,
    pub path: Option<PathBuf>,
    pub generator: Option<GeneratorSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
    pub class: String,
    pub split: Split,
}

impl Dataset {
    pub fn new(class_names: Vec<String>, samples: Vec<Sample>) -> Result<Self> {
        let ds = Self { class_names, samples };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::Data("dataset has no classes".into()));
        }
        let unique: BTreeSet<_> = self.class_names.iter().collect();
        if unique.len() != self.class_names.len() {
            return Err(Error::Data("class names must be unique".into()));
        }
        let mut ids = BTreeSet::new();
        for s in &self.samples {
            if s.label >= self.class_names.len() {
                return Err(Error::Data(format!(
                    "sample `{}` has label {} but only {} classes",
                    s.id,
                    s.label,
                    self.class_names.len()
                )));
            }
            if !ids.insert(&s.id) {
                return Err(Error::Data(format!("duplicate sample id `{}`", s.id)));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.split(split).map(|s| s.id.as_str()).collect()
    }

    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        self.split(split).for_each(|s| counts[s.label] += 1);
        counts
    }

    /// Keeps the first `take(class_size)` entries of a seeded per-class
    /// permutation of the train split. Prefixes of one permutation nest.
    fn subset_train(&self, seed: u64, take: impl Fn(usize, &str) -> Result<usize>) -> Result<Dataset> {
        let mut keep = vec![false; self.samples.len()];
        for class in 0..self.num_classes() {
            let mut members: Vec<usize> = (0..self.samples.len())
                .filter(|&i| self.samples[i].split == Split::Train && self.samples[i].label == class)
                .collect();
            let n = take(members.len(), &self.class_names[class])?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(class as u64);
            members.shuffle(&mut rng);
            members[..n].iter().for_each(|&i| keep[i] = true);
        }
        let samples = self
            .samples
            .iter()
            .zip(&keep)
            .filter(|(s, k)| s.split == Split::Test || **k)
            .map(|(s, _)| s.clone())
            .collect();
        Ok(Dataset {
            class_names: self.class_names.clone(),
            samples,
        })
    }

    /// Exactly `shots` train samples per class; the test split is untouched.
    pub fn few_shot(&self, shots: usize, seed: u64) -> Result<Dataset> {
        if shots == 0 {
            return Err(Error::Argument("shots must be at least 1".into()));
        }
        self.subset_train(seed, |n, name| {
            if n < shots {
                Err(Error::Data(format!("class `{name}` has {n} train samples, fewer than {shots} shots")))
            } else {
                Ok(shots)
            }
        })
    }

    /// `ceil(fraction · n)` train samples per class.
    pub fn fraction(&self, fraction: f64, seed: u64) -> Result<Dataset> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Argument(format!("fraction must be in (0, 1], got {fraction}")));
        }
        self.subset_train(seed, |n, name| {
            let k = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
            if k == 0 {
                Err(Error::Data(format!("class `{name}` is empty at fraction {fraction}")))
            } else {
                Ok(k.min(n))
            }
        })
    }

    pub fn manifest(&self) -> Vec<ManifestRecord> {
        self.samples
            .iter()
            .map(|s| ManifestRecord {
                id: s.id.clone(),
                path: s.path.clone(),
                generator: s.generator.clone(),
                class: self.class_names[s.label].clone(),
                split: s.split,
            })
            .collect()
    }

    pub fn write_manifest(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for rec in self.manifest() {
            serde_json::to_writer(&mut out, &rec).map_err(|e| Error::Data(e.to_string()))?;
            out.push(b'\n');
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|e| Error::io(path, e))
    }

    /// Rebuilds a dataset from manifest lines. Relative paths resolve
    /// against `base`. `points`/`seed` control OFF surface sampling.
    pub fn from_manifest(text: &str, base: &Path, points: usize, seed: u64) -> Result<Dataset> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        let mut class_names: Vec<String> = Vec::new();
        for r in &records {
            if !class_names.contains(&r.class) {
                class_names.push(r.class.clone());
            }
        }
        let mut samples = Vec::with_capacity(records.len());
        for (i, r) in records.into_iter().enumerate() {
            let label = class_names.iter().position(|c| *c == r.class).expect("collected above");
            let cloud = match (&r.generator, &r.path) {
                (Some(g), _) => g.build()?,
                (None, Some(p)) => {
                    let full = if p.is_absolute() { p.clone() } else { base.join(p) };
                    load_cloud(&full, points, seed.wrapping_add(i as u64))?
                }
                (None, None) => {
                    return Err(Error::Data(format!("manifest record `{}` has neither path nor generator", r.id)))
                }
            };
            samples.push(Sample {
                id: r.id,
                cloud: cloud.with_label(label),
                label,
                split: r.split,
                path: r.path,
                generator: r.generator,
            });
        }
        Dataset::new(class_names, samples)
    }

    pub fn load_manifest(path: impl AsRef<Path>, points: usize, seed: u64) -> Result<Dataset> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Dataset::from_manifest(&text, path.parent().unwrap_or(Path::new(".")), points, seed)
    }

    /// `<root>/<class>/<train|test>/*.off`; classes sorted by name.
    pub fn load_off_dir(root: impl AsRef<Path>, points: usize, seed: u64) -> Result<Dataset> {
        let root = root.as_ref();
        let read = |p: &Path| -> Result<Vec<PathBuf>> {
            let mut v: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .collect();
            v.sort();
            Ok(v)
        };
        let classes: Vec<PathBuf> = read(root)?.into_iter().filter(|p| p.is_dir()).collect();
        let mut class_names = Vec::new();
        let mut samples = Vec::new();
        for (label, dir) in classes.iter().enumerate() {
            let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            class_names.push(name.clone());
            for split in [Split::Train, Split::Test] {
                let sub = dir.join(split.as_str());
                if !sub.is_dir() {
                    continue;
                }
                for file in read(&sub)? {
                    if file.extension().and_then(|e| e.to_str()) != Some("off") {
                        continue;
                    }
                    let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                    let cloud = load_cloud(&file, points, seed.wrapping_add(samples.len() as u64))?;
                    samples.push(Sample {
                        id: format!("{name}/{}/{stem}", split.as_str()),
                        cloud: cloud.with_label(label),
                        label,
                        split,
                        path: file.strip_prefix(root).ok().map(Path::to_path_buf),
                        generator: None,
                    });
                }
            }
        }
        Dataset::new(class_names, samples)
    }
}

/// `.off` meshes are surface-sampled; anything else is read as XYZ.
pub fn load_cloud(path: &Path, points: usize, seed: u64) -> Result<PointCloud> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("off") => Mesh::load_off(path)?.sample_surface(points, seed),
        _ => load_xyz(path),
    }
}

/// Knobs of the procedural dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub points: usize,
    pub noise: f64,
    /// Half-width of the per-axis scale range around 1; 0 with `yaw: false`
    /// gives canonical shapes.
    pub scale_jitter: f64,
    pub random_yaw: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            train_per_class: 64,
            test_per_class: 32,
            points: 256,
            noise: 0.01,
            scale_jitter: 0.3,
            random_yaw: true,
            seed: 0,
        }
    }
}

/// The eight-shape suite. Sample seeds derive from the dataset seed, the
/// class and the index, so one sample never depends on the split sizes.
pub fn synthetic_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    let class_names = ShapeKind::ALL.iter().map(|k| k.name().to_string()).collect();
    let mut samples = Vec::new();
    for (label, kind) in ShapeKind::ALL.into_iter().enumerate() {
        for (split, count) in [(Split::Train, cfg.train_per_class), (Split::Test, cfg.test_per_class)] {
            for i in 0..count {
                let split_tag = if split == Split::Train { 0 } else { 1u64 << 40 };
                let seed = cfg
                    .seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add(((label as u64) << 48) | split_tag | i as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(7);
                let mut augment = Augment::random(&mut rng, cfg.scale_jitter);
                if !cfg.random_yaw {
                    augment.yaw = 0.0;
                }
                let generator = GeneratorSpec {
                    kind,
                    points: cfg.points,
                    noise: cfg.noise,
                    seed,
                    augment,
                };
                samples.push(Sample {
                    id: format!("{}/{}/{i:04}", kind.name(), split.as_str()),
                    cloud: generator.build()?.with_label(label),
                    label,
                    split,
                    path: None,
                    generator: Some(generator),
                });
            }
        }
    }
    Dataset::new(class_names, samples)
}
