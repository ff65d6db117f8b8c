//! Dataset persistence.
//!
//! Layout under a dataset root:
//! - `manifest.jsonl` — line 1 is a header object (`{"split_tag": ...}`),
//!   each following line one entry object.
//! - `ep_NNNNN.frames` — packed little-endian frame tensor with an 8-byte
//!   header (T, H, W, C as u16 each).
//! - `ep_NNNNN.json` — sidecar metadata (states, actions, caption, dtype).
//!
//! Frames are stored losslessly. Rendered frames hold only multiples of
//! 1/255 and are packed as one byte per value; anything else falls back to
//! f32. The dtype is recorded per episode in the sidecar.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::taskworld::{EpisodeMeta, EpisodeRecord, Frame};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for SplitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitTag::Train => write!(f, "train"),
            SplitTag::Val => write!(f, "val"),
            SplitTag::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub episode_path: String,
    pub task_id: String,
    pub success: bool,
    pub caption: Option<String>,
    pub num_frames: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestHeader {
    split_tag: SplitTag,
    version: u32,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub split_tag: SplitTag,
}

const DTYPE_U8: &str = "u8x255";
const DTYPE_F32: &str = "f32le";

fn is_byte_exact(frames: &[Frame]) -> bool {
    frames.iter().all(|f| {
        f.iter().all(|&v| {
            let k = (v * 255.0).round();
            (0.0..=255.0).contains(&k) && k as u8 as f32 / 255.0 == v
        })
    })
}

fn write_frames(path: &Path, frames: &[Frame]) -> Result<String> {
    let (h, w, c) = frames[0].dim();
    let t = frames.len();
    let mut out = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for dim in [t, h, w, c] {
        out.write_all(&(dim as u16).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    let dtype = if is_byte_exact(frames) { DTYPE_U8 } else { DTYPE_F32 };
    for f in frames {
        debug_assert_eq!(f.dim(), (h, w, c));
        let flat = f.as_standard_layout();
        if dtype == DTYPE_U8 {
            let bytes: Vec<u8> = flat.iter().map(|&v| (v * 255.0).round() as u8).collect();
            out.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        } else {
            let mut bytes = Vec::with_capacity(flat.len() * 4);
            for &v in flat.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(dtype.to_string())
}

fn read_frames(path: &Path, dtype: &str) -> Result<Vec<Frame>> {
    let mut file = BufReader::new(fs::File::open(path).map_err(|e| Error::io(path, e))?);
    let mut header = [0u8; 8];
    file.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    let dims: Vec<usize> = header
        .chunks(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]) as usize)
        .collect();
    let (t, h, w, c) = (dims[0], dims[1], dims[2], dims[3]);
    let per_frame = h * w * c;
    let mut frames = Vec::with_capacity(t);
    for _ in 0..t {
        let values = match dtype {
            DTYPE_U8 => {
                let mut buf = vec![0u8; per_frame];
                file.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
                buf.into_iter().map(|b| b as f32 / 255.0).collect::<Vec<f32>>()
            }
            DTYPE_F32 => {
                let mut buf = vec![0u8; per_frame * 4];
                file.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
                buf.chunks(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect()
            }
            other => {
                return Err(Error::dataset(path, format!("unknown frame dtype {other:?}")))
            }
        };
        frames.push(
            Array3::from_shape_vec((h, w, c), values)
                .map_err(|e| Error::dataset(path, format!("bad frame tensor shape: {e}")))?,
        );
    }
    Ok(frames)
}

/// Streaming writer: episodes are persisted one at a time, the manifest is
/// written on [`DatasetWriter::finish`].
pub struct DatasetWriter {
    root: PathBuf,
    split_tag: SplitTag,
    entries: Vec<ManifestEntry>,
}

impl DatasetWriter {
    pub fn create(root: &Path, split_tag: SplitTag) -> Result<DatasetWriter> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(DatasetWriter {
            root: root.to_path_buf(),
            split_tag,
            entries: Vec::new(),
        })
    }

    pub fn append(&mut self, ep: &EpisodeRecord) -> Result<()> {
        if ep.caption.is_some() != ep.success {
            return Err(Error::dataset(
                &self.root,
                format!(
                    "episode {} violates the caption rule (success={}, caption={:?})",
                    self.entries.len(),
                    ep.success,
                    ep.caption
                ),
            ));
        }
        let stem = format!("ep_{:05}", self.entries.len());
        let frames_path = self.root.join(format!("{stem}.frames"));
        let dtype = write_frames(&frames_path, &ep.frames)?;
        let meta = EpisodeMeta {
            task_id: ep.task_id.clone(),
            seed: ep.seed,
            success: ep.success,
            caption: ep.caption.clone(),
            num_frames: ep.frames.len(),
            states: ep.states.clone(),
            actions: ep.actions.clone(),
            frame_dtype: dtype,
        };
        let meta_path = self.root.join(format!("{stem}.json"));
        fs::write(&meta_path, serde_json::to_vec(&meta)?).map_err(|e| Error::io(&meta_path, e))?;
        self.entries.push(ManifestEntry {
            episode_path: format!("{stem}.frames"),
            task_id: ep.task_id.clone(),
            success: ep.success,
            caption: ep.caption.clone(),
            num_frames: ep.frames.len(),
            seed: ep.seed,
        });
        Ok(())
    }

    pub fn finish(self) -> Result<DatasetManifest> {
        let manifest_path = self.root.join("manifest.jsonl");
        let mut out = BufWriter::new(
            fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?,
        );
        let header = ManifestHeader {
            split_tag: self.split_tag,
            version: 1,
        };
        writeln!(out, "{}", serde_json::to_string(&header)?)
            .map_err(|e| Error::io(&manifest_path, e))?;
        for e in &self.entries {
            writeln!(out, "{}", serde_json::to_string(e)?)
                .map_err(|er| Error::io(&manifest_path, er))?;
        }
        out.flush().map_err(|e| Error::io(&manifest_path, e))?;
        Ok(DatasetManifest {
            entries: self.entries,
            split_tag: self.split_tag,
        })
    }
}

/// Write episodes and a manifest under `root`. The directory is created if
/// missing.
pub fn write_dataset(
    episodes: &[EpisodeRecord],
    root: &Path,
    split_tag: SplitTag,
) -> Result<DatasetManifest> {
    let mut writer = DatasetWriter::create(root, split_tag)?;
    for ep in episodes {
        writer.append(ep)?;
    }
    writer.finish()
}

/// Random-access reader over a written dataset.
#[derive(Debug)]
pub struct DatasetReader {
    root: PathBuf,
    pub manifest: DatasetManifest,
}

impl DatasetReader {
    pub fn open(root: &Path) -> Result<DatasetReader> {
        let manifest_path = root.join("manifest.jsonl");
        if !manifest_path.exists() {
            return Err(Error::dataset(&manifest_path, "manifest not found"));
        }
        let file =
            BufReader::new(fs::File::open(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?);
        let mut lines = file.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::dataset(&manifest_path, "empty manifest"))?
            .map_err(|e| Error::io(&manifest_path, e))?;
        let header: ManifestHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::dataset(&manifest_path, format!("bad manifest header: {e}")))?;
        let mut entries = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::io(&manifest_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line)
                .map_err(|e| Error::dataset(&manifest_path, format!("bad manifest entry: {e}")))?;
            if entry.caption.is_some() != entry.success {
                return Err(Error::dataset(
                    &manifest_path,
                    format!("entry {:?} violates the caption rule", entry.episode_path),
                ));
            }
            entries.push(entry);
        }
        Ok(DatasetReader {
            root: root.to_path_buf(),
            manifest: DatasetManifest {
                entries,
                split_tag: header.split_tag,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.entries.is_empty()
    }

    /// Load episode `i` in full.
    pub fn load(&self, i: usize) -> Result<EpisodeRecord> {
        let entry = &self.manifest.entries[i];
        let frames_path = self.root.join(&entry.episode_path);
        let meta_path = frames_path.with_extension("json");
        let meta: EpisodeMeta = serde_json::from_slice(
            &fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?,
        )
        .map_err(|e| Error::dataset(&meta_path, format!("bad sidecar: {e}")))?;
        let frames = read_frames(&frames_path, &meta.frame_dtype)?;
        if frames.len() != meta.num_frames || frames.len() != entry.num_frames {
            return Err(Error::dataset(
                &frames_path,
                format!(
                    "frame count mismatch: tensor {} vs sidecar {} vs manifest {}",
                    frames.len(),
                    meta.num_frames,
                    entry.num_frames
                ),
            ));
        }
        Ok(EpisodeRecord {
            frames,
            states: meta.states,
            actions: meta.actions,
            caption: meta.caption,
            success: meta.success,
            task_id: meta.task_id,
            seed: meta.seed,
        })
    }

    /// Iterate episodes lazily in manifest order.
    pub fn iter(&self) -> impl Iterator<Item = Result<EpisodeRecord>> + '_ {
        (0..self.len()).map(move |i| self.load(i))
    }
}

/// Open a dataset: `(episode iterator handle, manifest)`.
pub fn read_dataset(root: &Path) -> Result<(DatasetReader, DatasetManifest)> {
    let reader = DatasetReader::open(root)?;
    let manifest = reader.manifest.clone();
    Ok((reader, manifest))
}

/// Content hash of a dataset: sha256 over its manifest bytes (episode content
/// is a pure function of the seeds recorded there).
pub fn dataset_hash(root: &Path) -> Result<String> {
    let manifest_path = root.join("manifest.jsonl");
    let bytes = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(hex_digest(&bytes))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskworld::{corrupt_policy, enumerate_tasks, generate_episode, ExpertPolicy};

    fn episodes(n: usize) -> Vec<EpisodeRecord> {
        let tasks = enumerate_tasks();
        (0..n)
            .map(|i| {
                let task = &tasks[i % tasks.len()];
                if i % 3 == 2 {
                    let mut pol = corrupt_policy(ExpertPolicy, 1.0, i as u64).unwrap();
                    let mut ep = generate_episode(task, &mut pol, i as u64).unwrap();
                    // ensure it's a failure for the caption-rule check
                    if ep.success {
                        ep = generate_episode(task, &mut corrupt_policy(ExpertPolicy, 1.0, i as u64 + 7777).unwrap(), i as u64 + 31).unwrap();
                    }
                    ep
                } else {
                    generate_episode(task, &mut ExpertPolicy, i as u64).unwrap()
                }
            })
            .filter(|ep| ep.caption.is_some() == ep.success)
            .collect()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let eps = episodes(12);
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(&eps, dir.path(), SplitTag::Train).unwrap();
        assert_eq!(manifest.entries.len(), eps.len());
        let (reader, manifest2) = read_dataset(dir.path()).unwrap();
        assert_eq!(manifest2.entries.len(), eps.len());
        assert_eq!(manifest2.split_tag, SplitTag::Train);
        for (i, ep) in eps.iter().enumerate() {
            let loaded = reader.load(i).unwrap();
            assert_eq!(&loaded, ep);
        }
    }

    #[test]
    fn missing_manifest_is_descriptive() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("manifest"), "{msg}");
    }

    #[test]
    fn f32_fallback_round_trips() {
        let mut eps = episodes(2);
        // poke a non-quantized value into one frame
        eps[0].frames[0][[0, 0, 0]] = 0.123_456_7;
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&eps, dir.path(), SplitTag::Val).unwrap();
        let (reader, _) = read_dataset(dir.path()).unwrap();
        assert_eq!(reader.load(0).unwrap(), eps[0]);
        assert_eq!(reader.load(1).unwrap(), eps[1]);
    }

    #[test]
    fn caption_rule_enforced_on_write() {
        let mut eps = episodes(1);
        eps[0].caption = None; // success without caption
        assert!(eps[0].success);
        let dir = tempfile::tempdir().unwrap();
        assert!(write_dataset(&eps, dir.path(), SplitTag::Train).is_err());
    }

    #[test]
    fn dataset_hash_is_stable() {
        let eps = episodes(3);
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&eps, dir.path(), SplitTag::Train).unwrap();
        assert_eq!(dataset_hash(dir.path()).unwrap(), dataset_hash(dir.path()).unwrap());
    }
}
