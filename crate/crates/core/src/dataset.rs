//! On-disk sample layout shared by the synthetic generator and the
//! augmentation command:
//!
//! ```text
//! <root>/manifest.json
//! <root>/<id>/frame_1.png .. frame_7.png
//! <root>/<id>/dgt.png
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{io, split_roles, Frame, Mask, Sequence, SEPTUPLET_LEN};
use crate::model::TrainExample;

pub const MANIFEST: &str = "manifest.json";
pub const DGT_FILE: &str = "dgt.png";

pub fn frame_file(i: usize) -> String {
    format!("frame_{}.png", i + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Sample directory relative to the dataset root.
    pub dir: String,
    /// Fraction of target pixels covered by the ground-truth D-map.
    pub coverage: f64,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub seed: u64,
    pub params: serde_json::Value,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn write(&self, root: &Path) -> Result<()> {
        write_json(&root.join(MANIFEST), self)
    }

    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        let bytes = std::fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.clone()),
            _ => Error::Io(e),
        })?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    io::write_atomic(path, &bytes)
}

pub fn write_sample(dir: &Path, frames: &[Frame], dgt: &Mask) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Write {
        path: dir.to_owned(),
        source,
    })?;
    for (i, f) in frames.iter().enumerate() {
        io::write_frame(f, dir.join(frame_file(i)))?;
    }
    io::write_mask(dgt, dir.join(DGT_FILE))
}

/// Reads a septuplet directory. Accepts `frame_N.png` or `imN.png` names.
pub fn read_septuplet(dir: &Path) -> Result<Sequence> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_owned()));
    }
    let frames = (0..SEPTUPLET_LEN)
        .map(|i| {
            let primary = dir.join(frame_file(i));
            let alt = dir.join(format!("im{}.png", i + 1));
            io::read_frame(if primary.exists() || !alt.exists() {
                primary
            } else {
                alt
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Sequence::new(frames)
}

/// A sample with its four-input roles and ground-truth D-map.
pub fn read_sample(dir: &Path) -> Result<(Sequence, Mask)> {
    let seq = split_roles(&read_septuplet(dir)?, 4)?;
    let dgt = io::read_mask(dir.join(DGT_FILE))?;
    dgt.ensure_dims(seq.dims())?;
    Ok((seq, dgt))
}

/// Loads every sample listed in `<root>/manifest.json`, in manifest order.
pub fn load_examples(root: &Path) -> Result<Vec<(String, TrainExample)>> {
    let manifest = Manifest::read(root)?;
    manifest
        .samples
        .iter()
        .map(|e| {
            let (seq, dgt) = read_sample(&root.join(&e.dir))?;
            Ok((e.id.clone(), TrainExample::from_sequence(&seq, dgt)?))
        })
        .collect()
}

pub fn sample_dir(root: &Path, id: &str) -> PathBuf {
    root.join(id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_read_sample() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<Frame> = (0..7).map(|i| Frame::filled(5, 6, i as f64 / 255.0)).collect();
        let mut dgt = Mask::zeros(5, 6);
        dgt.set(1, 2, 1.0);
        let sd = dir.path().join("s0");
        write_sample(&sd, &frames, &dgt).unwrap();
        let (seq, back) = read_sample(&sd).unwrap();
        assert_eq!(seq.frames(), &frames[..]);
        assert_eq!(back, dgt);
        assert_eq!(seq.roles().unwrap().inputs, vec![0, 2, 4, 6]);

        std::fs::remove_file(sd.join("dgt.png")).unwrap();
        assert!(matches!(read_sample(&sd), Err(Error::MissingFile(_))));
    }

    #[test]
    fn vimeo_style_names() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..7 {
            io::write_frame(&Frame::filled(2, 2, 0.0), dir.path().join(format!("im{}.png", i + 1))).unwrap();
        }
        assert_eq!(read_septuplet(dir.path()).unwrap().len(), 7);
    }
}
