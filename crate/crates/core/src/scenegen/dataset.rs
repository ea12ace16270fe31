//! Dataset directory format.
//!
//! ```text
//! <dir>/manifest.json          generation parameters + content digest
//! <dir>/annotations.jsonl      one record per image, in image order
//! <dir>/images/000042.ppm      binary P6, 64×64, maxval 255
//! <dir>/masks/000042_01.pgm    binary P5, 0/255 (full label mode only)
//! ```
//!
//! Annotation records carry `image`, `boxes` (`[x_min, y_min, x_max, y_max]`
//! in pixels), `classes`, and in full mode additionally `angles` (radians,
//! canonical range), `depths` and `masks` (relative mask paths, one per
//! object). The digest is SHA-256 over every non-manifest file in sorted
//! path order, each framed as `path \0 len_le64 bytes`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::annotation::{derive_annotation, Annotation, Attributes, BinaryMask, Pose, WeakLabels};
use super::render::{render_scene, RgbImage};
use super::sample::sample_scene;
use super::{DomainConfig, DomainTag, LabelMode, SceneSpec};
use crate::geometry::BBox;
use crate::{rng, Error, Result, IMAGE_SIZE, NUM_CLASSES};

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const ANNOTATIONS: &str = "annotations.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub n_images: usize,
    pub domain_tag: DomainTag,
    pub label_mode: LabelMode,
    pub generator_seed: u64,
    pub split: Split,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub domain_config: DomainConfig,
    /// Filled in by [`write_dataset`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
}

impl DatasetManifest {
    pub fn new(
        n_images: usize,
        domain_tag: DomainTag,
        label_mode: LabelMode,
        generator_seed: u64,
        split: Split,
        domain_config: DomainConfig,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            n_images,
            domain_tag,
            label_mode,
            generator_seed,
            split,
            height: IMAGE_SIZE,
            width: IMAGE_SIZE,
            num_classes: NUM_CLASSES,
            domain_config,
            digest: None,
        }
    }

    fn stream_name(&self, what: &str) -> String {
        format!("{}/{}/{what}", self.domain_tag.name(), self.split.name())
    }

    /// Samples, renders and annotates image `index`. Label mode does not
    /// influence the random streams, so weak output is a projection of full.
    pub fn generate(&self, index: usize) -> Result<(SceneSpec, RgbImage, Annotation)> {
        let mut scene_rng = rng::stream(&self.stream_name("scene"), self.generator_seed, index as u64);
        let scene = sample_scene(&mut scene_rng, &self.domain_config, self.domain_tag)?;
        let mut render_rng = rng::stream(&self.stream_name("render"), self.generator_seed, index as u64);
        let rendered = render_scene(&scene, &self.domain_config, &mut render_rng);
        let ann = derive_annotation(&scene, &rendered.masks, self.height, self.width, self.label_mode);
        Ok((scene, rendered.image, ann))
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    image: usize,
    boxes: Vec<BBox>,
    classes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    angles: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    depths: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    masks: Option<Vec<String>>,
}

/// Box/class view of a record; attribute fields are never deserialized.
#[derive(Deserialize)]
struct LabelRecord {
    image: usize,
    boxes: Vec<BBox>,
    classes: Vec<usize>,
}

fn image_path(i: usize) -> String {
    format!("images/{i:06}.ppm")
}

fn mask_path(i: usize, j: usize) -> String {
    format!("masks/{i:06}_{j:02}.pgm")
}

pub(crate) fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

fn encode_pgm(mask: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.data.iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

/// Parses a binary netpbm header; returns `(width, height, payload)`.
fn decode_netpbm<'a>(bytes: &'a [u8], magic: &str, path: &Path) -> Result<(usize, usize, &'a [u8])> {
    let bad = |m: &str| Error::Parse {
        path: path.to_path_buf(),
        message: m.to_string(),
    };
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header not ascii"))?);
    }
    if fields[0] != magic {
        return Err(bad(&format!("expected {magic}, found {}", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let payload = &bytes[(pos + 1).min(bytes.len())..];
    Ok((w, h, payload))
}

fn file_digest(files: &BTreeMap<String, Vec<u8>>) -> String {
    let mut hasher = Sha256::new();
    for (path, bytes) in files {
        hasher.update(path.as_bytes());
        hasher.update([0u8]);
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    }
    hex::encode(hasher.finalize())
}

/// Every non-manifest file of the dataset, keyed by relative path.
fn render_files(manifest: &DatasetManifest) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut files = BTreeMap::new();
    if manifest.n_images == 0 {
        return Ok(files);
    }
    let mut jsonl = Vec::new();
    for i in 0..manifest.n_images {
        let (_, image, ann) = manifest.generate(i)?;
        files.insert(image_path(i), encode_ppm(&image));
        let mut record = Record {
            image: i,
            boxes: ann.labels.boxes.clone(),
            classes: ann.labels.classes.clone(),
            angles: None,
            depths: None,
            masks: None,
        };
        if let Some(attrs) = &ann.attributes {
            record.angles = Some(attrs.poses.iter().map(|p| p.angle).collect());
            record.depths = Some(attrs.poses.iter().map(|p| p.depth).collect());
            let mut names = Vec::new();
            for (j, mask) in attrs.masks.iter().enumerate() {
                files.insert(mask_path(i, j), encode_pgm(mask));
                names.push(mask_path(i, j));
            }
            record.masks = Some(names);
        }
        serde_json::to_writer(&mut jsonl, &record).expect("record serializes");
        jsonl.push(b'\n');
    }
    files.insert(ANNOTATIONS.to_string(), jsonl);
    Ok(files)
}

fn read_disk_files(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut files = BTreeMap::new();
    let mut pending = vec![dir.to_path_buf()];
    while let Some(d) = pending.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let entry = entry.map_err(|e| Error::io(&d, e))?;
            let path = entry.path();
            if path.is_dir() {
                pending.push(path);
                continue;
            }
            let rel = path
                .strip_prefix(dir)
                .expect("walk stays below root")
                .to_string_lossy()
                .replace('\\', "/");
            if rel == MANIFEST {
                continue;
            }
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            files.insert(rel, bytes);
        }
    }
    Ok(files)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path,
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteOutcome {
    pub digest: String,
    /// `false` when an identical dataset was already present.
    pub written: bool,
}

/// Generates and writes the dataset described by `manifest` into `dir`.
///
/// The domain config carried by `manifest` drives rendering; its label
/// mode is overridden by `manifest.label_mode`. An existing directory is
/// left untouched when it already holds exactly this dataset, and rejected
/// when its files disagree with its own manifest or with the request.
pub fn write_dataset(dir: &Path, manifest: &DatasetManifest) -> Result<WriteOutcome> {
    manifest.domain_config.validate()?;
    let mut manifest = manifest.clone();
    manifest.domain_config.label_mode = manifest.label_mode;
    manifest.digest = None;
    let files = render_files(&manifest)?;
    let digest = file_digest(&files);
    manifest.digest = Some(digest.clone());

    if dir.join(MANIFEST).exists() {
        let existing = read_manifest(dir)?;
        let on_disk = file_digest(&read_disk_files(dir)?);
        if existing.digest.as_deref() != Some(on_disk.as_str()) {
            return Err(Error::DatasetCorrupt {
                path: dir.to_path_buf(),
                reason: "file contents do not match the stored digest".into(),
            });
        }
        if existing != manifest {
            return Err(Error::DatasetCorrupt {
                path: dir.to_path_buf(),
                reason: "directory holds a different dataset".into(),
            });
        }
        return Ok(WriteOutcome { digest, written: false });
    }
    if dir.exists() && fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some() {
        return Err(Error::DatasetCorrupt {
            path: dir.to_path_buf(),
            reason: "non-empty directory without a manifest".into(),
        });
    }

    for sub in ["images", "masks"] {
        if files.keys().any(|k| k.starts_with(sub)) {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (rel, bytes) in &files {
        let p = dir.join(rel);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
    }
    let p = dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::File::create(&p)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::io(&p, e))?;
    Ok(WriteOutcome { digest, written: true })
}

/// Counters of what has been read from a [`Dataset`].
#[derive(Debug, Default)]
pub struct AccessLog {
    image_reads: AtomicUsize,
    label_reads: AtomicUsize,
    attribute_reads: AtomicUsize,
    annotation_file_opens: AtomicUsize,
    mask_file_opens: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AccessSnapshot {
    pub image_reads: usize,
    pub label_reads: usize,
    pub attribute_reads: usize,
    pub annotation_file_opens: usize,
    pub mask_file_opens: usize,
}

impl AccessSnapshot {
    pub fn touched_annotations(&self) -> bool {
        self.label_reads > 0 || self.attribute_reads > 0 || self.annotation_file_opens > 0
    }

    pub fn touched_attributes(&self) -> bool {
        self.attribute_reads > 0 || self.mask_file_opens > 0
    }
}

/// Read-only dataset view. Images, labels and attributes are loaded lazily
/// and separately, and every access is counted in an [`AccessLog`].
#[derive(Debug)]
pub struct Dataset {
    dir: PathBuf,
    manifest: DatasetManifest,
    limit: usize,
    images: OnceLock<Vec<RgbImage>>,
    labels: OnceLock<Vec<WeakLabels>>,
    attributes: OnceLock<Vec<Attributes>>,
    log: AccessLog,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Parse {
                path: dir.join(MANIFEST),
                message: format!("unsupported format version {}", manifest.format_version),
            });
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            limit: manifest.n_images,
            manifest,
            images: OnceLock::new(),
            labels: OnceLock::new(),
            attributes: OnceLock::new(),
            log: AccessLog::default(),
        })
    }

    /// Restricts the view to the first `n` images.
    pub fn with_limit(mut self, n: usize) -> Self {
        self.limit = n.min(self.manifest.n_images);
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.limit
    }

    pub fn is_empty(&self) -> bool {
        self.limit == 0
    }

    pub fn label_mode(&self) -> LabelMode {
        self.manifest.label_mode
    }

    pub fn access(&self) -> AccessSnapshot {
        AccessSnapshot {
            image_reads: self.log.image_reads.load(Ordering::Relaxed),
            label_reads: self.log.label_reads.load(Ordering::Relaxed),
            attribute_reads: self.log.attribute_reads.load(Ordering::Relaxed),
            annotation_file_opens: self.log.annotation_file_opens.load(Ordering::Relaxed),
            mask_file_opens: self.log.mask_file_opens.load(Ordering::Relaxed),
        }
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.limit {
            return Err(Error::InvalidInput(format!(
                "image index {i} out of range for {} images",
                self.limit
            )));
        }
        Ok(())
    }

    fn load_images(&self) -> Result<Vec<RgbImage>> {
        (0..self.manifest.n_images)
            .map(|i| {
                let path = self.dir.join(image_path(i));
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let (w, h, payload) = decode_netpbm(&bytes, "P6", &path)?;
                if w != self.manifest.width || h != self.manifest.height || payload.len() != 3 * w * h {
                    return Err(Error::Parse {
                        path,
                        message: "image size disagrees with manifest".into(),
                    });
                }
                Ok(RgbImage {
                    height: h,
                    width: w,
                    data: payload.to_vec(),
                })
            })
            .collect()
    }

    fn annotation_lines(&self) -> Result<Vec<String>> {
        self.log.annotation_file_opens.fetch_add(1, Ordering::Relaxed);
        let path = self.dir.join(ANNOTATIONS);
        if self.manifest.n_images == 0 {
            return Ok(Vec::new());
        }
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let lines = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(&path, e))?;
        if lines.len() != self.manifest.n_images {
            return Err(Error::Parse {
                path,
                message: format!("{} records for {} images", lines.len(), self.manifest.n_images),
            });
        }
        Ok(lines)
    }

    fn load_labels(&self) -> Result<Vec<WeakLabels>> {
        let path = self.dir.join(ANNOTATIONS);
        self.annotation_lines()?
            .iter()
            .enumerate()
            .map(|(i, line)| {
                let r: LabelRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                    path: path.clone(),
                    message: format!("line {}: {e}", i + 1),
                })?;
                if r.image != i || r.boxes.len() != r.classes.len() {
                    return Err(Error::Parse {
                        path: path.clone(),
                        message: format!("line {}: inconsistent record", i + 1),
                    });
                }
                Ok(WeakLabels {
                    boxes: r.boxes,
                    classes: r.classes,
                })
            })
            .collect()
    }

    fn load_attributes(&self) -> Result<Vec<Attributes>> {
        if self.manifest.label_mode != LabelMode::Full {
            return Err(Error::Supervision(format!(
                "{} holds weak labels only",
                self.dir.display()
            )));
        }
        let path = self.dir.join(ANNOTATIONS);
        let bad = |i: usize, m: &str| Error::Parse {
            path: path.clone(),
            message: format!("line {}: {m}", i + 1),
        };
        self.annotation_lines()?
            .iter()
            .enumerate()
            .map(|(i, line)| {
                let r: Record = serde_json::from_str(line).map_err(|e| bad(i, &e.to_string()))?;
                let (Some(angles), Some(depths), Some(mask_names)) = (r.angles, r.depths, r.masks) else {
                    return Err(bad(i, "missing attribute fields"));
                };
                if angles.len() != r.boxes.len() || depths.len() != r.boxes.len() || mask_names.len() != r.boxes.len() {
                    return Err(bad(i, "attribute count mismatch"));
                }
                let masks = mask_names
                    .iter()
                    .map(|name| {
                        self.log.mask_file_opens.fetch_add(1, Ordering::Relaxed);
                        let p = self.dir.join(name);
                        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
                        let (w, h, payload) = decode_netpbm(&bytes, "P5", &p)?;
                        if payload.len() != w * h {
                            return Err(Error::Parse {
                                path: p,
                                message: "truncated mask".into(),
                            });
                        }
                        Ok(BinaryMask::new(h, w, payload.iter().map(|&v| v > 127).collect()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let poses = angles
                    .into_iter()
                    .zip(depths)
                    .map(|(angle, depth)| Pose { angle, depth })
                    .collect();
                Ok(Attributes { masks, poses })
            })
            .collect()
    }

    pub fn image(&self, i: usize) -> Result<&RgbImage> {
        self.check_index(i)?;
        self.log.image_reads.fetch_add(1, Ordering::Relaxed);
        if self.images.get().is_none() {
            let loaded = self.load_images()?;
            let _ = self.images.set(loaded);
        }
        Ok(&self.images.get().expect("initialized")[i])
    }

    pub fn labels(&self, i: usize) -> Result<&WeakLabels> {
        self.check_index(i)?;
        self.log.label_reads.fetch_add(1, Ordering::Relaxed);
        if self.labels.get().is_none() {
            let loaded = self.load_labels()?;
            let _ = self.labels.set(loaded);
        }
        Ok(&self.labels.get().expect("initialized")[i])
    }

    /// Masks and poses of image `i`; fails on weak-mode datasets.
    pub fn attributes(&self, i: usize) -> Result<&Attributes> {
        self.check_index(i)?;
        self.log.attribute_reads.fetch_add(1, Ordering::Relaxed);
        if self.attributes.get().is_none() {
            let loaded = self.load_attributes()?;
            let _ = self.attributes.set(loaded);
        }
        Ok(&self.attributes.get().expect("initialized")[i])
    }

    /// Full annotation of image `i` (attributes only in full mode).
    pub fn annotation(&self, i: usize) -> Result<Annotation> {
        let labels = self.labels(i)?.clone();
        let attributes = match self.manifest.label_mode {
            LabelMode::Full => Some(self.attributes(i)?.clone()),
            LabelMode::Weak => None,
        };
        Ok(Annotation { labels, attributes })
    }

    /// Recomputes the content digest and compares it with the manifest.
    pub fn verify(&self) -> Result<()> {
        let on_disk = file_digest(&read_disk_files(&self.dir)?);
        if self.manifest.digest.as_deref() != Some(on_disk.as_str()) {
            return Err(Error::DatasetCorrupt {
                path: self.dir.clone(),
                reason: "file contents do not match the stored digest".into(),
            });
        }
        Ok(())
    }
}
