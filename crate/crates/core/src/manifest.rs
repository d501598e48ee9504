//! Dataset manifests and the split protocols built on them.
//!
//! A manifest is a comma-separated table with the header
//! `left,right,mask_left,mask_right,class,subject,brand,sensor,pattern`.
//! Relative paths resolve against the directory holding the manifest. A `-`
//! in a mask column asks for a generated geometric mask; a `-` in the brand,
//! sensor or pattern column means "not given".

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{Mask, NirImage};
use crate::segmentation;
use crate::types::{CapturePair, Class, Label, LightingGeometry, Pattern};

pub const MANIFEST_HEADER: [&str; 9] = [
    "left",
    "right",
    "mask_left",
    "mask_right",
    "class",
    "subject",
    "brand",
    "sensor",
    "pattern",
];

const NONE_MARKER: &str = "-";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ManifestEntry {
    pub left: PathBuf,
    pub right: PathBuf,
    /// `None` requests a generated mask.
    pub mask_left: Option<PathBuf>,
    pub mask_right: Option<PathBuf>,
    pub label: Label,
}

impl ManifestEntry {
    /// Stable per-sample identifier: the left image's file stem.
    pub fn sample_id(&self) -> String {
        self.left
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.left.to_string_lossy().into_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    base_dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Builds a manifest in memory. Paths are resolved against `base_dir`.
    pub fn new(base_dir: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if !seen.insert((e.label.subject_id.as_str(), e.left.as_path())) {
                return Err(Error::InvalidInput(format!(
                    "entry {} duplicates subject `{}` with left image {}",
                    i + 1,
                    e.label.subject_id,
                    e.left.display()
                )));
            }
        }
        Ok(Self {
            base_dir: base_dir.into(),
            entries,
        })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn subjects(&self) -> BTreeSet<&str> {
        self.entries
            .iter()
            .map(|e| e.label.subject_id.as_str())
            .collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.entries.iter().map(|e| e.label.clone()).collect()
    }

    fn with_entries(&self, entries: Vec<ManifestEntry>) -> Self {
        Self {
            base_dir: self.base_dir.clone(),
            entries,
        }
    }

    /// Keeps only the entries matching `pred`, preserving order.
    pub fn filter(&self, pred: impl Fn(&ManifestEntry) -> bool) -> Self {
        self.with_entries(self.entries.iter().filter(|e| pred(e)).cloned().collect())
    }

    /// Reads the images and masks of one entry into a capture pair.
    pub fn load_pair(
        &self,
        entry: &ManifestEntry,
        lights: &LightingGeometry,
    ) -> Result<CapturePair> {
        let left = NirImage::load_pgm(self.resolve(&entry.left))?;
        let right = NirImage::load_pgm(self.resolve(&entry.right))?;
        let (w, h) = left.dims();
        let load_mask = |p: &Option<PathBuf>| match p {
            Some(p) => Mask::load_pgm(self.resolve(p)),
            None => segmentation::default_iris_mask(w, h),
        };
        let mask_left = load_mask(&entry.mask_left)?;
        let mask_right = load_mask(&entry.mask_right)?;
        CapturePair::new(left, right, mask_left, mask_right, lights.clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(MANIFEST_HEADER)
            .map_err(|e| csv_io(path, e))?;
        let text = |p: &Path| p.to_string_lossy().into_owned();
        let opt = |o: Option<String>| o.unwrap_or_else(|| NONE_MARKER.to_string());
        for e in &self.entries {
            let l = &e.label;
            w.write_record([
                text(&e.left),
                text(&e.right),
                opt(e.mask_left.as_deref().map(text)),
                opt(e.mask_right.as_deref().map(text)),
                l.class.as_str().to_string(),
                l.subject_id.clone(),
                opt(l.brand.clone()),
                opt(l.sensor.clone()),
                opt(l.pattern.map(|p| p.as_str().to_string())),
            ])
            .map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// Parses and validates a manifest file, checking every referenced file exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let header = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?;
    if header.iter().ne(MANIFEST_HEADER) {
        return Err(Error::parse(
            path,
            1,
            format!("header must be `{}`", MANIFEST_HEADER.join(",")),
        ));
    }

    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let bad = |msg: String| Error::parse(path, line, msg);

        let field = |i: usize| record.get(i).unwrap_or("");
        let optional = |i: usize| match field(i) {
            "" | NONE_MARKER => None,
            s => Some(s.to_string()),
        };

        let class: Class = field(4).parse().map_err(bad)?;
        let mut label = Label::new(class, field(5)).map_err(|e| bad(e.to_string()))?;
        label.brand = optional(6);
        label.sensor = optional(7);
        label.pattern = optional(8)
            .map(|p| p.parse::<Pattern>())
            .transpose()
            .map_err(bad)?;

        let entry = ManifestEntry {
            left: PathBuf::from(field(0)),
            right: PathBuf::from(field(1)),
            mask_left: optional(2).map(PathBuf::from),
            mask_right: optional(3).map(PathBuf::from),
            label,
        };
        let referenced = [
            ("left", Some(&entry.left)),
            ("right", Some(&entry.right)),
            ("mask_left", entry.mask_left.as_ref()),
            ("mask_right", entry.mask_right.as_ref()),
        ];
        for (column, p) in referenced {
            if let Some(p) = p {
                if p.as_os_str().is_empty() {
                    return Err(bad(format!("empty `{column}` path")));
                }
                if !base_dir.join(p).is_file() {
                    return Err(bad(format!(
                        "`{column}` image {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        entries.push(entry);
    }

    DatasetManifest::new(base_dir, entries)
}

/// Randomly assigns whole subjects to train or test.
///
/// `round(fraction * subjects)` subjects land in train; entry order within
/// each half follows the input.
pub fn split_subject_disjoint(
    manifest: &DatasetManifest,
    fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut subjects: Vec<&str> = manifest.subjects().into_iter().collect();
    if subjects.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "a subject-disjoint split needs at least 2 subjects, found {}",
            subjects.len()
        )));
    }
    let n_train = (fraction * subjects.len() as f64).round() as usize;
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train_subjects: HashSet<&str> = subjects[..n_train].iter().copied().collect();

    let (train, test) = manifest
        .entries
        .iter()
        .cloned()
        .partition(|e| train_subjects.contains(e.label.subject_id.as_str()));
    Ok((manifest.with_entries(train), manifest.with_entries(test)))
}

/// Splits attacks by print pattern, keeping the two halves subject-disjoint.
///
/// A bona fide entry follows its subject's attacks. Subjects with no attack
/// entries alternate regular, irregular, regular, ... in sorted subject order.
pub fn split_by_pattern(manifest: &DatasetManifest) -> Result<(DatasetManifest, DatasetManifest)> {
    let mut side: BTreeMap<&str, Pattern> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        if e.label.class != Class::Attack {
            continue;
        }
        let pattern = e.label.pattern.ok_or_else(|| {
            Error::InvalidInput(format!(
                "attack entry {} ({}) has no pattern tag",
                i + 1,
                e.left.display()
            ))
        })?;
        let subject = e.label.subject_id.as_str();
        match side.insert(subject, pattern) {
            Some(prev) if prev != pattern => {
                return Err(Error::InvalidInput(format!(
                    "subject `{subject}` has both regular and irregular attacks; \
                     the pattern split cannot keep it on one side"
                )))
            }
            _ => {}
        }
    }

    let mut next = Pattern::Regular;
    for subject in manifest.subjects() {
        side.entry(subject).or_insert_with(|| {
            let p = next;
            next = match p {
                Pattern::Regular => Pattern::Irregular,
                Pattern::Irregular => Pattern::Regular,
            };
            p
        });
    }

    let (regular, irregular) = manifest
        .entries
        .iter()
        .cloned()
        .partition(|e| side[e.label.subject_id.as_str()] == Pattern::Regular);
    Ok((
        manifest.with_entries(regular),
        manifest.with_entries(irregular),
    ))
}

/// Fails with the offending subject ids when the two manifests share subjects.
pub fn ensure_subject_disjoint(a: &DatasetManifest, b: &DatasetManifest) -> Result<()> {
    let sa = a.subjects();
    let overlap: Vec<String> = b
        .subjects()
        .into_iter()
        .filter(|s| sa.contains(s))
        .map(str::to_string)
        .collect();
    if overlap.is_empty() {
        Ok(())
    } else {
        Err(Error::SubjectOverlap(overlap))
    }
}
