//! Discovery and train/validation/test splitting of paired low/normal-light
//! datasets (LOL and LOL-v2 Real layouts).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Lol,
    Lolv2,
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "lol" => Ok(DatasetKind::Lol),
            "lolv2" | "lol-v2" | "lol_v2" => Ok(DatasetKind::Lolv2),
            other => Err(format!("unknown dataset kind '{other}' (expected lol or lolv2)")),
        }
    }
}

/// Directory names and split sizes for one dataset distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetLayout {
    pub train_low: String,
    pub train_high: String,
    pub test_low: String,
    pub test_high: String,
    /// Filename prefixes stripped before pairing (LOL-v2 names its files
    /// `low00001.png` / `normal00001.png`).
    pub low_prefix: String,
    pub high_prefix: String,
    pub val_count: usize,
    /// Keep validation pairs in the training list as well.
    pub val_overlaps_train: bool,
}

impl Default for DatasetLayout {
    fn default() -> Self {
        Self::lol()
    }
}

impl DatasetLayout {
    pub fn lol() -> Self {
        Self {
            train_low: "our485/low".into(),
            train_high: "our485/high".into(),
            test_low: "eval15/low".into(),
            test_high: "eval15/high".into(),
            low_prefix: String::new(),
            high_prefix: String::new(),
            val_count: 85,
            val_overlaps_train: false,
        }
    }

    pub fn lol_v2() -> Self {
        Self {
            train_low: "Train/Low".into(),
            train_high: "Train/Normal".into(),
            test_low: "Test/Low".into(),
            test_high: "Test/Normal".into(),
            low_prefix: "low".into(),
            high_prefix: "normal".into(),
            val_count: 188,
            val_overlaps_train: false,
        }
    }

    pub fn for_kind(kind: DatasetKind) -> Self {
        match kind {
            DatasetKind::Lol => Self::lol(),
            DatasetKind::Lolv2 => Self::lol_v2(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePair {
    pub name: String,
    pub low: PathBuf,
    pub high: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub train: Vec<ImagePair>,
    pub val: Vec<ImagePair>,
    pub test: Vec<ImagePair>,
}

impl DatasetSplit {
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn write_manifest(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("split serializes");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// PNG files in `dir` keyed by their name with `prefix` removed.
fn list_images(dir: &Path, prefix: &str) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingDirectory(dir.to_path_buf()));
    }
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() || !is_png(&path) {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let key = name.strip_prefix(prefix).unwrap_or(&name).to_string();
        out.insert(key, path);
    }
    Ok(out)
}

fn pair_dir(root: &Path, low: &str, high: &str, layout: &DatasetLayout) -> Result<Vec<ImagePair>> {
    let lows = list_images(&root.join(low), &layout.low_prefix)?;
    let highs = list_images(&root.join(high), &layout.high_prefix)?;
    let unpaired: Vec<String> = lows
        .iter()
        .filter(|(k, _)| !highs.contains_key(*k))
        .map(|(_, p)| p.display().to_string())
        .collect();
    if !unpaired.is_empty() {
        return Err(Error::UnpairedImage(unpaired));
    }
    for (k, p) in &highs {
        if !lows.contains_key(k) {
            log::warn!("reference {} has no low-light counterpart, ignored", p.display());
        }
    }
    Ok(lows
        .into_iter()
        .map(|(name, low)| {
            let high = highs[&name].clone();
            ImagePair { name, low, high }
        })
        .collect())
}

/// Scans `root` with `layout` and draws the validation pairs from the
/// training pairs with a seeded shuffle.
pub fn scan(root: impl AsRef<Path>, layout: &DatasetLayout, seed: u64) -> Result<DatasetSplit> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::MissingDirectory(root.to_path_buf()));
    }
    let train_all = pair_dir(root, &layout.train_low, &layout.train_high, layout)?;
    let test = pair_dir(root, &layout.test_low, &layout.test_high, layout)?;
    // At least one pair must remain for gradient updates.
    let available = if layout.val_overlaps_train {
        train_all.len()
    } else {
        train_all.len().saturating_sub(1)
    };
    if layout.val_count > available {
        return Err(Error::Config(format!(
            "cannot draw {} validation pairs from {} training pairs",
            layout.val_count,
            train_all.len()
        )));
    }

    let mut order: Vec<usize> = (0..train_all.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; train_all.len()];
    for &i in &order[..layout.val_count] {
        is_val[i] = true;
    }
    let val: Vec<ImagePair> = train_all
        .iter()
        .zip(&is_val)
        .filter(|(_, v)| **v)
        .map(|(p, _)| p.clone())
        .collect();
    let train: Vec<ImagePair> = train_all
        .into_iter()
        .zip(&is_val)
        .filter(|(_, v)| layout.val_overlaps_train || !**v)
        .map(|(p, _)| p)
        .collect();
    Ok(DatasetSplit { seed, train, val, test })
}

pub fn scan_lol(root: impl AsRef<Path>, seed: u64) -> Result<DatasetSplit> {
    scan(root, &DatasetLayout::lol(), seed)
}

pub fn scan_lol_v2(root: impl AsRef<Path>, seed: u64) -> Result<DatasetSplit> {
    scan(root, &DatasetLayout::lol_v2(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn touch_tree(root: &Path, layout: &DatasetLayout, train: usize, test: usize) {
        let mk = |dir: &str, prefix: &str, n: usize| {
            let d = root.join(dir);
            std::fs::create_dir_all(&d).unwrap();
            for i in 0..n {
                std::fs::write(d.join(format!("{prefix}{:05}.png", i + 1)), b"").unwrap();
            }
        };
        mk(&layout.train_low, &layout.low_prefix, train);
        mk(&layout.train_high, &layout.high_prefix, train);
        mk(&layout.test_low, &layout.low_prefix, test);
        mk(&layout.test_high, &layout.high_prefix, test);
    }

    #[test]
    fn small_tree_split() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout { val_count: 3, ..DatasetLayout::lol() };
        touch_tree(dir.path(), &layout, 10, 2);
        let split = scan(dir.path(), &layout, 1).unwrap();
        assert_eq!(split.counts(), (7, 3, 2));
        let train: HashSet<_> = split.train.iter().map(|p| &p.name).collect();
        assert!(split.val.iter().all(|p| !train.contains(&p.name)));
        for p in split.train.iter().chain(&split.val).chain(&split.test) {
            assert_eq!(p.low.file_name(), p.high.file_name());
        }
        assert_eq!(split, scan(dir.path(), &layout, 1).unwrap());
        assert_ne!(split.val, scan(dir.path(), &layout, 2).unwrap().val);
    }

    #[test]
    fn overlap_keeps_validation_in_train() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout { val_count: 4, val_overlaps_train: true, ..DatasetLayout::lol() };
        touch_tree(dir.path(), &layout, 10, 2);
        assert_eq!(scan(dir.path(), &layout, 0).unwrap().counts(), (10, 4, 2));
    }

    #[test]
    fn prefixes_are_stripped_for_pairing() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout { val_count: 2, ..DatasetLayout::lol_v2() };
        touch_tree(dir.path(), &layout, 6, 3);
        let split = scan(dir.path(), &layout, 5).unwrap();
        assert_eq!(split.counts(), (4, 2, 3));
        let p = &split.test[0];
        assert_eq!(p.name, "00001.png");
        assert!(p.low.ends_with("Test/Low/low00001.png"));
        assert!(p.high.ends_with("Test/Normal/normal00001.png"));
    }

    #[test]
    fn unpaired_low_image_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout { val_count: 1, ..DatasetLayout::lol() };
        touch_tree(dir.path(), &layout, 5, 2);
        std::fs::remove_file(dir.path().join("our485/high/00003.png")).unwrap();
        match scan(dir.path(), &layout, 0) {
            Err(Error::UnpairedImage(names)) => {
                assert_eq!(names.len(), 1);
                assert!(names[0].ends_with("00003.png"));
            }
            other => panic!("expected UnpairedImage, got {other:?}"),
        }
    }

    #[test]
    fn missing_directories() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(scan_lol(dir.path(), 0), Err(Error::MissingDirectory(_))));
        assert!(matches!(scan_lol_v2(dir.path().join("nope"), 0), Err(Error::MissingDirectory(_))));
    }

    #[test]
    fn non_png_files_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout { val_count: 1, ..DatasetLayout::lol() };
        touch_tree(dir.path(), &layout, 3, 1);
        std::fs::write(dir.path().join("our485/low/notes.txt"), b"x").unwrap();
        assert_eq!(scan(dir.path(), &layout, 0).unwrap().counts(), (2, 1, 1));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout { val_count: 2, ..DatasetLayout::lol() };
        touch_tree(dir.path(), &layout, 5, 1);
        let split = scan(dir.path(), &layout, 9).unwrap();
        let m = dir.path().join("split.json");
        split.write_manifest(&m).unwrap();
        assert_eq!(DatasetSplit::read_manifest(&m).unwrap(), split);
    }
}
