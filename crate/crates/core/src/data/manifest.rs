//! Line-oriented dataset manifest.
//!
//! ```text
//! version=1
//! fs=30
//! dims=60x64x64x3
//! train<TAB>train_0000_c00.marc
//! test<TAB>test_0001_c00.marc
//! ```
//!
//! Paths are resolved relative to the manifest's directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::chunk::{read_chunk, source_of_path, VideoChunk};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!("unknown split tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub split: Split,
    /// As written in the manifest.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    pub fs: f64,
    /// `[T, H, W, C]`.
    pub dims: [usize; 4],
    pub entries: Vec<ManifestEntry>,
    /// Directory that entry paths are relative to.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.root.join(&entry.path)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<VideoChunk>> {
        self.split(split).map(|e| read_chunk(&self.resolve(e))).collect()
    }

    /// Chunks of `split` grouped by source clip, each group ordered by chunk
    /// index, groups ordered by source id.
    pub fn load_clips(&self, split: Split) -> Result<Vec<(String, Vec<VideoChunk>)>> {
        let mut tagged: Vec<(String, usize, PathBuf)> = self
            .split(split)
            .map(|e| {
                let path = self.resolve(e);
                let (src, idx) = source_of_path(&path);
                (src, idx, path)
            })
            .collect();
        tagged.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
        let mut out: Vec<(String, Vec<VideoChunk>)> = Vec::new();
        for (src, _, path) in tagged {
            let chunk = read_chunk(&path)?;
            match out.last_mut() {
                Some((s, v)) if *s == src => v.push(chunk),
                _ => out.push((src, vec![chunk])),
            }
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let [t, h, w, c] = self.dims;
        let mut s = format!("version={}\nfs={}\ndims={t}x{h}x{w}x{c}\n", self.version, self.fs);
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\n", e.split, e.path.display()));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::file(path, e))
    }

    /// Parses manifest text without touching the listed files.
    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let mut version = None;
        let mut fs = None;
        let mut dims = None;
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = i + 1;
            if let Some((split, path)) = line.split_once('\t') {
                entries.push(ManifestEntry {
                    split: split.trim().parse()?,
                    path: PathBuf::from(path.trim()),
                });
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Manifest(format!("line {lineno}: expected key=value or split<TAB>path")))?;
            let bad = |what: &str| Error::Manifest(format!("line {lineno}: invalid {what} {value:?}"));
            match key.trim() {
                "version" => version = Some(value.trim().parse::<u32>().map_err(|_| bad("version"))?),
                "fs" => fs = Some(value.trim().parse::<f64>().map_err(|_| bad("fs"))?),
                "dims" => {
                    let parts: Vec<usize> = value
                        .trim()
                        .split('x')
                        .map(|p| p.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("dims"))?;
                    let arr: [usize; 4] = parts.try_into().map_err(|_| bad("dims"))?;
                    dims = Some(arr);
                }
                other => return Err(Error::Manifest(format!("line {lineno}: unknown key {other:?}"))),
            }
        }
        let version = version.ok_or_else(|| Error::Manifest("missing version".into()))?;
        if version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!("unsupported manifest version {version}")));
        }
        let fs = fs.ok_or_else(|| Error::Manifest("missing fs".into()))?;
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::Manifest(format!("invalid fs {fs}")));
        }
        Ok(DatasetManifest {
            version,
            fs,
            dims: dims.ok_or_else(|| Error::Manifest("missing dims".into()))?,
            entries,
            root: root.to_path_buf(),
        })
    }
}

/// Parses a manifest and checks that every listed chunk exists and agrees
/// with the declared sampling rate and dimensions.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = DatasetManifest::parse(&text, &root)?;

    let mut missing = Vec::new();
    let mut bad_dims = Vec::new();
    let mut bad_fs = Vec::new();
    for e in &manifest.entries {
        let p = manifest.resolve(e);
        if !p.is_file() {
            missing.push(p.display().to_string());
            continue;
        }
        let chunk = read_chunk(&p)?;
        if chunk.dims() != manifest.dims {
            bad_dims.push(format!("{} ({:?})", p.display(), chunk.dims()));
        }
        if (chunk.fs - manifest.fs).abs() > 1e-6 * manifest.fs {
            bad_fs.push(format!("{} ({} Hz)", p.display(), chunk.fs));
        }
    }
    if !missing.is_empty() {
        return Err(Error::Manifest(format!("missing chunk files: {}", missing.join(", "))));
    }
    if !bad_fs.is_empty() {
        return Err(Error::Manifest(format!(
            "inconsistent sampling rate (manifest {} Hz): {}",
            manifest.fs,
            bad_fs.join(", ")
        )));
    }
    if !bad_dims.is_empty() {
        return Err(Error::Manifest(format!(
            "inconsistent dims (manifest {:?}): {}",
            manifest.dims,
            bad_dims.join(", ")
        )));
    }
    Ok(manifest)
}
