//! Dataset manifests: a CSV index of patch files with per-file split.
//!
//! ```text
//! # clip_max=1
//! # patch_size=64
//! event_id,split,path,positive_pixels
//! syn000000,train,patches/syn000000.flg,412
//! ```
//!
//! Relative paths resolve against the manifest's own directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_patch_file, BitemporalSample, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub event_id: String,
    #[serde(with = "split_serde")]
    pub split: Split,
    pub path: String,
    pub positive_pixels: usize,
}

mod split_serde {
    use super::Split;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: &Split, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(s.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Split, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub clip_max: f32,
    pub patch_size: usize,
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
}

/// Event counts for a 60/20/20 train/val/test split: train and val are
/// rounded to nearest, test takes the remainder.
pub fn split_counts(events: usize) -> (usize, usize, usize) {
    let train = ((events as f64) * 0.6).round() as usize;
    let val = (((events as f64) * 0.2).round() as usize).min(events - train);
    (train, val, events - train - val)
}

impl DatasetManifest {
    pub fn new(clip_max: f32, patch_size: usize, root: impl Into<PathBuf>) -> Self {
        Self {
            entries: Vec::new(),
            clip_max,
            patch_size,
            root: root.into(),
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<BitemporalSample>> {
        self.split(split)
            .map(|e| {
                let mut s = read_patch_file(self.resolve(e))?;
                s.split = split;
                Ok(s)
            })
            .collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "# clip_max={}", self.clip_max)?;
        writeln!(out, "# patch_size={}", self.patch_size)?;
        {
            let mut w = csv::Writer::from_writer(&mut out);
            for e in &self.entries {
                w.serialize(e)?;
            }
            if self.entries.is_empty() {
                w.write_record(["event_id", "split", "path", "positive_pixels"])?;
            }
            w.flush()?;
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut clip_max = 1.0f32;
        let mut patch_size = 0usize;
        for line in text.lines().filter_map(|l| l.strip_prefix('#')) {
            let Some((k, v)) = line.split_once('=') else {
                continue;
            };
            let bad = || Error::Config(format!("manifest header `{}` is malformed", line.trim()));
            match k.trim() {
                "clip_max" => clip_max = v.trim().parse().map_err(|_| bad())?,
                "patch_size" => patch_size = v.trim().parse().map_err(|_| bad())?,
                _ => {}
            }
        }
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        let expected = ["event_id", "split", "path", "positive_pixels"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Config(format!(
                "manifest header must be `{}`, found `{}`",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let entries = reader.deserialize().collect::<std::result::Result<Vec<ManifestEntry>, _>>()?;
        Ok(Self {
            entries,
            clip_max,
            patch_size,
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }
}
