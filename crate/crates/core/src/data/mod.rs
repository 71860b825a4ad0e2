//! Samples, dataset layout, augmentation and the synthetic generator.
//!
//! On disk a dataset is a directory with `Imgs/`, `Depths/` and `GT/`
//! subdirectories whose files share a basename.

mod augment;
pub mod io;
mod synth;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use augment::{augment, flip_horizontal, AugmentSpec};
pub use synth::{synth_generate, synth_sample, synth_samples, SynthStats, DEPTH_CONTRAST_MIN, FG_FRACTION, RGB_CONTRAST_MAX};

pub const RGB_DIR: &str = "Imgs";
pub const DEPTH_DIR: &str = "Depths";
pub const GT_DIR: &str = "GT";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// One RGB-D training or test example, each map `(1, C, H, W)` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub rgb: Tensor,
    pub depth: Tensor,
    pub gt: Tensor,
}

impl Sample {
    pub fn new(id: impl Into<String>, rgb: Tensor, depth: Tensor, gt: Tensor) -> Result<Self> {
        let id = id.into();
        let (r, d, g) = (rgb.shape(), depth.shape(), gt.shape());
        if r.c != 3 || d.c != 1 || g.c != 1 || (r.h, r.w) != (d.h, d.w) || (r.h, r.w) != (g.h, g.w) {
            return Err(Error::Dataset(format!("{id}: map sizes disagree (rgb {r}, depth {d}, gt {g})")));
        }
        if gt.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Dataset(format!("{id}: gt is not binary")));
        }
        Ok(Sample { id, rgb, depth, gt })
    }

    pub fn size(&self) -> (usize, usize) {
        let s = self.gt.shape();
        (s.h, s.w)
    }
}

/// Stack samples into `(rgb, depth, gt)` batch tensors.
pub fn collate(samples: &[&Sample]) -> Result<(Tensor, Tensor, Tensor)> {
    let pick = |f: fn(&Sample) -> &Tensor| -> Result<Tensor> {
        Tensor::stack(&samples.iter().map(|s| f(s).clone()).collect::<Vec<_>>())
    };
    Ok((pick(|s| &s.rgb)?, pick(|s| &s.depth)?, pick(|s| &s.gt)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Dataset(format!("unknown split `{s}`"))),
        }
    }
}

/// File paths of one sample, relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub gt: PathBuf,
}

impl Entry {
    pub fn id(&self) -> String {
        stem(&self.gt)
    }
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "pgm" | "ppm" | "pnm" | "jpg" | "jpeg" | "bmp")
    )
}

/// Image files of a directory keyed by basename, sorted.
pub fn images_by_stem(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::Dataset(format!("{}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for ent in rd {
        let p = ent?.path();
        if p.is_file() && is_image(&p) {
            out.push((stem(&p), p));
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: Split,
    pub entries: Vec<Entry>,
}

impl DatasetManifest {
    /// Match `Imgs/`, `Depths/` and `GT/` by basename. Every file needs both
    /// counterparts and must decode.
    pub fn scan(root: impl Into<PathBuf>, split: Split) -> Result<Self> {
        let root = root.into();
        let rgb = images_by_stem(&root.join(RGB_DIR))?;
        let depth = images_by_stem(&root.join(DEPTH_DIR))?;
        let gt = images_by_stem(&root.join(GT_DIR))?;
        let find = |list: &[(String, PathBuf)], id: &str| list.iter().find(|(s, _)| s == id).map(|(_, p)| p.clone());
        let mut entries = Vec::new();
        let mut missing = Vec::new();
        for (id, g) in &gt {
            match (find(&rgb, id), find(&depth, id)) {
                (Some(r), Some(d)) => entries.push(Entry {
                    rgb: r.strip_prefix(&root).unwrap_or(&r).to_path_buf(),
                    depth: d.strip_prefix(&root).unwrap_or(&d).to_path_buf(),
                    gt: g.strip_prefix(&root).unwrap_or(g).to_path_buf(),
                }),
                _ => missing.push(id.clone()),
            }
        }
        for (id, _) in rgb.iter().chain(&depth) {
            if find(&gt, id).is_none() && !missing.contains(id) {
                missing.push(id.clone());
            }
        }
        if !missing.is_empty() {
            missing.sort();
            return Err(Error::Dataset(format!(
                "{}: incomplete samples: {}",
                root.display(),
                missing.join(", ")
            )));
        }
        if entries.is_empty() {
            return Err(Error::Dataset(format!("{}: no samples found", root.display())));
        }
        Ok(DatasetManifest { root, split, entries })
    }

    /// Read `root/manifest.txt`: a `split` line, then one
    /// `rgb<TAB>depth<TAB>gt` line per entry.
    pub fn read(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let text = fs::read_to_string(root.join(MANIFEST_FILE))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let split = lines
            .next()
            .and_then(|l| l.strip_prefix("split\t"))
            .ok_or_else(|| Error::Dataset("manifest: missing split line".into()))?
            .parse()?;
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split('\t').collect();
            let [r, d, g] = parts[..] else {
                return Err(Error::Dataset(format!("manifest line {}: expected 3 fields", i + 2)));
            };
            entries.push(Entry {
                rgb: r.into(),
                depth: d.into(),
                gt: g.into(),
            });
        }
        Ok(DatasetManifest { root, split, entries })
    }

    pub fn write(&self) -> Result<()> {
        let mut text = format!("split\t{}\n", self.split);
        for e in &self.entries {
            text.push_str(&format!("{}\t{}\t{}\n", e.rgb.display(), e.depth.display(), e.gt.display()));
        }
        fs::write(self.root.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    /// Use the manifest file when present, otherwise scan the directories.
    pub fn open(root: impl Into<PathBuf>, split: Split) -> Result<Self> {
        let root = root.into();
        if root.join(MANIFEST_FILE).is_file() {
            DatasetManifest::read(root)
        } else {
            DatasetManifest::scan(root, split)
        }
    }

    pub fn load_all(&self, size: (usize, usize)) -> Result<Vec<Sample>> {
        self.entries.iter().map(|e| load_sample(&self.root, e, size)).collect()
    }
}

fn binarize(t: &Tensor) -> Tensor {
    t.map(|v| (v > 0.5) as u8 as Real)
}

/// Read one entry and bring it to `(h, w)`: bilinear for RGB and depth,
/// nearest for the mask, which is then re-thresholded at 0.5.
pub fn load_sample(root: &Path, entry: &Entry, (h, w): (usize, usize)) -> Result<Sample> {
    let rgb = io::read_rgb(root.join(&entry.rgb))?.resized(h, w);
    let depth = io::read_gray(root.join(&entry.depth))?.resized(h, w);
    let gt = binarize(&io::read_gray(root.join(&entry.gt))?.resized_nearest(h, w));
    Sample::new(entry.id(), rgb, depth, gt)
}

/// Write a sample under the dataset layout as PNG files named after its id.
pub fn save_sample(root: &Path, s: &Sample) -> Result<Entry> {
    let entry = Entry {
        rgb: Path::new(RGB_DIR).join(format!("{}.png", s.id)),
        depth: Path::new(DEPTH_DIR).join(format!("{}.png", s.id)),
        gt: Path::new(GT_DIR).join(format!("{}.png", s.id)),
    };
    for d in [RGB_DIR, DEPTH_DIR, GT_DIR] {
        fs::create_dir_all(root.join(d))?;
    }
    io::write_rgb(root.join(&entry.rgb), &s.rgb)?;
    io::write_gray(root.join(&entry.depth), &s.depth)?;
    io::write_gray(root.join(&entry.gt), &s.gt)?;
    Ok(entry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn write_pair(root: &Path, id: &str) {
        let s = synth_sample(64, 3, 0).unwrap();
        let s = Sample { id: id.into(), ..s };
        save_sample(root, &s).unwrap();
    }

    #[test]
    fn scan_finds_matching_triples() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), "b");
        write_pair(dir.path(), "a");
        let m = DatasetManifest::scan(dir.path(), Split::Test).unwrap();
        let ids: Vec<String> = m.entries.iter().map(Entry::id).collect();
        assert_eq!(ids, ["a", "b"]);
        m.write().unwrap();
        assert_eq!(DatasetManifest::read(dir.path()).unwrap(), m);
    }

    #[test]
    fn missing_counterpart_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), "a");
        write_pair(dir.path(), "b");
        fs::remove_file(dir.path().join(DEPTH_DIR).join("b.png")).unwrap();
        let err = DatasetManifest::scan(dir.path(), Split::Train).unwrap_err().to_string();
        assert!(err.contains("incomplete") && err.contains('b'), "{err}");
    }

    #[test]
    fn load_resizes_and_keeps_gt_binary() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), "a");
        let m = DatasetManifest::scan(dir.path(), Split::Test).unwrap();
        let s = load_sample(&m.root, &m.entries[0], (40, 52)).unwrap();
        assert_eq!(s.size(), (40, 52));
        assert!(s.gt.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(s.gt.data().iter().any(|&v| v == 1.0));
        let again = load_sample(&m.root, &m.entries[0], (40, 52)).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn save_load_is_exact_at_eight_bits() {
        let dir = tempfile::tempdir().unwrap();
        let s = synth_sample(64, 5, 2).unwrap();
        let e = save_sample(dir.path(), &s).unwrap();
        assert_eq!(load_sample(dir.path(), &e, (64, 64)).unwrap(), s);
    }

    #[test]
    fn sample_rejects_soft_gt() {
        let sh = Shape::new(1, 1, 2, 2);
        let err = Sample::new("x", Tensor::zeros(sh.with_c(3)), Tensor::zeros(sh), Tensor::full(sh, 0.5));
        assert!(err.is_err());
    }
}
