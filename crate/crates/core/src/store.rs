//! On-disk session storage with a replay index.
//!
//! ```text
//! root/<session_id>/manifest.json
//!                  /index.json                 {frame_count, first_ts, last_ts}
//!                  /events.jsonl               interactive-state changes
//!                  /frames/%06d.rgb.png
//!                  /frames/%06d.depth.raw16
//!                  /frames/%06d.meta.json      {index, timestamp_ns, pose}
//!                  /results/<model_id>/%06d.depth.raw16 (+ %06d.depth.json dims)
//!                  /results/<model_id>/%06d.env.pfm
//!                  /composites/<model_id>/<task>/%06d.png
//!                  /metrics/<model_id>.jsonl
//! ```
//!
//! Every file is written to a temporary name and renamed into place, so a
//! reader never observes a partial file. A frame counts as committed once its
//! `meta.json` exists; it is renamed last.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::imageio::{self, CodecError};
use crate::model::{is_valid_identifier, DepthMap, EnvironmentMap, Frame, FrameMeta, SessionManifest, TaskKind};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("session {0} already exists")]
    DuplicateSession(String),
    #[error("storage unavailable: {0}")]
    StorageUnavailable(#[from] io::Error),
    #[error("frame {got} appended out of order, expected {expected}")]
    OutOfOrderFrame { expected: u64, got: u64 },
    #[error("no such session {0}")]
    NoSuchSession(String),
    #[error("session {session_id} has no frame {index}")]
    NoSuchFrame { session_id: String, index: u64 },
    #[error("corrupt frame {index}: {reason}")]
    CorruptFrame { index: u64, reason: String },
    #[error("no {kind} result for model {model_id} at frame {index}")]
    NoSuchResult {
        model_id: String,
        index: u64,
        kind: &'static str,
    },
    #[error("invalid identifier {0:?}")]
    InvalidIdentifier(String),
    #[error("frame does not match session manifest: {0}")]
    InvalidFrame(String),
    #[error("malformed stored file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
}

type Result<T, E = StoreError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionIndex {
    pub frame_count: u64,
    pub first_ts: Option<u64>,
    pub last_ts: Option<u64>,
}

/// Writer-side view of one session. Only the holder appends frames.
#[derive(Debug, Clone)]
pub struct SessionHandle {
    pub session_id: String,
    pub dir: PathBuf,
    index: SessionIndex,
}

impl SessionHandle {
    pub fn frame_count(&self) -> u64 {
        self.index.frame_count
    }

    pub fn index(&self) -> SessionIndex {
        self.index
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResultKind {
    Depth,
    EnvMap,
}

impl ResultKind {
    fn name(self) -> &'static str {
        match self {
            ResultKind::Depth => "depth",
            ResultKind::EnvMap => "env_map",
        }
    }
}

/// A stored model output.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredResult {
    Depth(DepthMap),
    EnvMap(EnvironmentMap),
}

#[derive(Debug, Serialize, Deserialize)]
struct Dims {
    width: u32,
    height: u32,
}

#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
    manifests: Arc<Mutex<HashMap<String, Arc<SessionManifest>>>>,
}

fn frame_name(index: u64, suffix: &str) -> String {
    format!("{index:06}.{suffix}")
}

/// Writes `bytes` to `path` through a temporary sibling and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = tmp_path(path);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
    }
    fs::rename(&tmp, path)
}

fn tmp_path(path: &Path) -> PathBuf {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    path.with_file_name(format!(".{name}.tmp"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| StoreError::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

impl SessionStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(SessionStore {
            root,
            manifests: Arc::default(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, session_id: &str) -> PathBuf {
        self.root.join(session_id)
    }

    fn existing_dir(&self, session_id: &str) -> Result<PathBuf> {
        if !is_valid_identifier(session_id) {
            return Err(StoreError::NoSuchSession(session_id.to_string()));
        }
        let dir = self.session_dir(session_id);
        if !dir.join("manifest.json").is_file() {
            return Err(StoreError::NoSuchSession(session_id.to_string()));
        }
        Ok(dir)
    }

    pub fn exists(&self, session_id: &str) -> bool {
        self.existing_dir(session_id).is_ok()
    }

    pub fn begin_session(&self, m: &SessionManifest) -> Result<SessionHandle> {
        if !is_valid_identifier(&m.session_id) {
            return Err(StoreError::InvalidIdentifier(m.session_id.clone()));
        }
        let dir = self.session_dir(&m.session_id);
        if dir.exists() {
            return Err(StoreError::DuplicateSession(m.session_id.clone()));
        }
        fs::create_dir_all(&self.root)?;
        match fs::create_dir(&dir) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(StoreError::DuplicateSession(m.session_id.clone()))
            }
            Err(e) => return Err(e.into()),
        }
        for sub in ["frames", "results", "composites", "metrics"] {
            fs::create_dir(dir.join(sub))?;
        }
        let index = SessionIndex {
            frame_count: 0,
            first_ts: None,
            last_ts: None,
        };
        write_atomic(&dir.join("index.json"), &serde_json::to_vec(&index).expect("index serializes"))?;
        // manifest last: its presence marks the session as existing
        write_atomic(
            &dir.join("manifest.json"),
            &serde_json::to_vec_pretty(m).expect("manifest serializes"),
        )?;
        self.manifests
            .lock()
            .unwrap()
            .insert(m.session_id.clone(), Arc::new(m.clone()));
        Ok(SessionHandle {
            session_id: m.session_id.clone(),
            dir,
            index,
        })
    }

    /// Reopens an existing session for appending, discarding uncommitted
    /// temporary files and reconciling the index with the committed frames.
    pub fn open_session(&self, session_id: &str) -> Result<SessionHandle> {
        let dir = self.existing_dir(session_id)?;
        let frames = dir.join("frames");
        for entry in fs::read_dir(&frames)? {
            let entry = entry?;
            let name = entry.file_name();
            if name.to_string_lossy().ends_with(".tmp") {
                fs::remove_file(entry.path())?;
            }
        }
        let index = self.scan_index(&dir)?;
        let stored: Option<SessionIndex> = read_json(&dir.join("index.json")).ok();
        if stored != Some(index) {
            write_atomic(&dir.join("index.json"), &serde_json::to_vec(&index).expect("index serializes"))?;
        }
        Ok(SessionHandle {
            session_id: session_id.to_string(),
            dir,
            index,
        })
    }

    fn scan_index(&self, dir: &Path) -> Result<SessionIndex> {
        let frames = dir.join("frames");
        let mut index = SessionIndex {
            frame_count: 0,
            first_ts: None,
            last_ts: None,
        };
        loop {
            let i = index.frame_count;
            let meta_path = frames.join(frame_name(i, "meta.json"));
            if !meta_path.is_file()
                || !frames.join(frame_name(i, "rgb.png")).is_file()
                || !frames.join(frame_name(i, "depth.raw16")).is_file()
            {
                break;
            }
            let meta: FrameMeta = read_json(&meta_path)?;
            index.first_ts.get_or_insert(meta.timestamp_ns);
            index.last_ts = Some(meta.timestamp_ns);
            index.frame_count += 1;
        }
        Ok(index)
    }

    pub fn list_sessions(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            if let Some(name) = entry.file_name().to_str() {
                if self.exists(name) {
                    out.push(name.to_string());
                }
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn load_manifest(&self, session_id: &str) -> Result<Arc<SessionManifest>> {
        if let Some(m) = self.manifests.lock().unwrap().get(session_id) {
            return Ok(m.clone());
        }
        let dir = self.existing_dir(session_id)?;
        let m: Arc<SessionManifest> = Arc::new(read_json(&dir.join("manifest.json"))?);
        self.manifests
            .lock()
            .unwrap()
            .insert(session_id.to_string(), m.clone());
        Ok(m)
    }

    pub fn load_index(&self, session_id: &str) -> Result<SessionIndex> {
        let dir = self.existing_dir(session_id)?;
        read_json(&dir.join("index.json"))
    }

    pub fn frame_count(&self, session_id: &str) -> Result<u64> {
        Ok(self.load_index(session_id)?.frame_count)
    }

    pub fn append_frame(&self, h: &mut SessionHandle, f: &Frame) -> Result<()> {
        if f.index != h.index.frame_count {
            return Err(StoreError::OutOfOrderFrame {
                expected: h.index.frame_count,
                got: f.index,
            });
        }
        if let Some(last) = h.index.last_ts {
            if f.timestamp_ns <= last {
                return Err(StoreError::InvalidFrame(format!(
                    "timestamp {} does not increase past {last}",
                    f.timestamp_ns
                )));
            }
        }
        let m = self.load_manifest(&h.session_id)?;
        if (f.rgb.width(), f.rgb.height()) != m.target_resolution {
            return Err(StoreError::InvalidFrame(format!(
                "rgb is {}x{}, manifest target is {}x{}",
                f.rgb.width(),
                f.rgb.height(),
                m.target_resolution.0,
                m.target_resolution.1
            )));
        }
        if (f.depth.width(), f.depth.height()) != m.depth_resolution {
            return Err(StoreError::InvalidFrame(format!(
                "depth is {}x{}, manifest depth is {}x{}",
                f.depth.width(),
                f.depth.height(),
                m.depth_resolution.0,
                m.depth_resolution.1
            )));
        }
        let png = imageio::encode_png(&f.rgb).map_err(|e| StoreError::InvalidFrame(e.to_string()))?;
        self.append_encoded_frame(h, &f.meta(), &png, &f.depth.to_le_bytes())
    }

    /// Appends a frame whose payloads are already encoded, storing the PNG
    /// bytes exactly as received.
    pub fn append_encoded_frame(
        &self,
        h: &mut SessionHandle,
        meta: &FrameMeta,
        rgb_png: &[u8],
        depth_raw: &[u8],
    ) -> Result<()> {
        if meta.index != h.index.frame_count {
            return Err(StoreError::OutOfOrderFrame {
                expected: h.index.frame_count,
                got: meta.index,
            });
        }
        let frames = h.dir.join("frames");
        write_atomic(&frames.join(frame_name(meta.index, "rgb.png")), rgb_png)?;
        write_atomic(&frames.join(frame_name(meta.index, "depth.raw16")), depth_raw)?;
        write_atomic(
            &frames.join(frame_name(meta.index, "meta.json")),
            &serde_json::to_vec(meta).expect("meta serializes"),
        )?;
        let mut next = h.index;
        next.frame_count += 1;
        next.first_ts.get_or_insert(meta.timestamp_ns);
        next.last_ts = Some(meta.timestamp_ns);
        write_atomic(&h.dir.join("index.json"), &serde_json::to_vec(&next).expect("index serializes"))?;
        h.index = next;
        Ok(())
    }

    /// Paths of the three files backing a committed frame.
    pub fn frame_paths(&self, session_id: &str, index: u64) -> Result<[PathBuf; 3]> {
        let dir = self.existing_dir(session_id)?;
        let count = self.frame_count(session_id)?;
        if index >= count {
            return Err(StoreError::NoSuchFrame {
                session_id: session_id.to_string(),
                index,
            });
        }
        let frames = dir.join("frames");
        Ok([
            frames.join(frame_name(index, "rgb.png")),
            frames.join(frame_name(index, "depth.raw16")),
            frames.join(frame_name(index, "meta.json")),
        ])
    }

    pub fn load_frame(&self, session_id: &str, index: u64) -> Result<Frame> {
        let [rgb_path, depth_path, meta_path] = self.frame_paths(session_id, index)?;
        let m = self.load_manifest(session_id)?;
        let corrupt = |reason: String| StoreError::CorruptFrame { index, reason };
        let meta: FrameMeta = read_json(&meta_path).map_err(|e| corrupt(e.to_string()))?;
        if meta.index != index {
            return Err(corrupt(format!("meta records index {}", meta.index)));
        }
        let rgb = imageio::decode_png(&fs::read(&rgb_path)?).map_err(|e: CodecError| corrupt(e.to_string()))?;
        if (rgb.width(), rgb.height()) != m.target_resolution {
            return Err(corrupt("rgb dimensions differ from manifest".into()));
        }
        let raw = fs::read(&depth_path)?;
        let (dw, dh) = m.depth_resolution;
        let depth = DepthMap::from_le_bytes(dw, dh, &raw).map_err(|e| corrupt(format!("depth: {e}")))?;
        Ok(Frame {
            index,
            timestamp_ns: meta.timestamp_ns,
            rgb,
            depth,
            pose: meta.pose,
        })
    }

    fn result_dir(&self, session_id: &str, model_id: &str) -> Result<PathBuf> {
        let dir = self.existing_dir(session_id)?;
        if !is_valid_identifier(model_id) {
            return Err(StoreError::InvalidIdentifier(model_id.to_string()));
        }
        Ok(dir.join("results").join(model_id))
    }

    pub fn store_result(&self, session_id: &str, model_id: &str, index: u64, result: &StoredResult) -> Result<()> {
        let dir = self.result_dir(session_id, model_id)?;
        fs::create_dir_all(&dir)?;
        match result {
            StoredResult::Depth(d) => {
                let dims = Dims {
                    width: d.width(),
                    height: d.height(),
                };
                write_atomic(
                    &dir.join(frame_name(index, "depth.json")),
                    &serde_json::to_vec(&dims).expect("dims serialize"),
                )?;
                write_atomic(&dir.join(frame_name(index, "depth.raw16")), &d.to_le_bytes())?;
            }
            StoredResult::EnvMap(m) => {
                write_atomic(&dir.join(frame_name(index, "env.pfm")), &imageio::encode_env_pfm(m))?;
            }
        }
        Ok(())
    }

    pub fn load_result(&self, session_id: &str, model_id: &str, index: u64, kind: ResultKind) -> Result<StoredResult> {
        let dir = self.result_dir(session_id, model_id)?;
        let missing = || StoreError::NoSuchResult {
            model_id: model_id.to_string(),
            index,
            kind: kind.name(),
        };
        match kind {
            ResultKind::Depth => {
                let dims_path = dir.join(frame_name(index, "depth.json"));
                let raw_path = dir.join(frame_name(index, "depth.raw16"));
                if !raw_path.is_file() || !dims_path.is_file() {
                    return Err(missing());
                }
                let dims: Dims = read_json(&dims_path)?;
                let raw = fs::read(&raw_path)?;
                let d = DepthMap::from_le_bytes(dims.width, dims.height, &raw).map_err(|e| StoreError::Malformed {
                    path: raw_path,
                    reason: e.to_string(),
                })?;
                Ok(StoredResult::Depth(d))
            }
            ResultKind::EnvMap => {
                let path = dir.join(frame_name(index, "env.pfm"));
                if !path.is_file() {
                    return Err(missing());
                }
                let m = imageio::decode_env_pfm(&fs::read(&path)?).map_err(|e| StoreError::Malformed {
                    path,
                    reason: e.to_string(),
                })?;
                Ok(StoredResult::EnvMap(m))
            }
        }
    }

    pub fn composite_path(&self, session_id: &str, model_id: &str, task: TaskKind, index: u64) -> PathBuf {
        self.session_dir(session_id)
            .join("composites")
            .join(model_id)
            .join(task.as_str())
            .join(frame_name(index, "png"))
    }

    pub fn write_composite(&self, session_id: &str, model_id: &str, task: TaskKind, index: u64, png: &[u8]) -> Result<()> {
        self.result_dir(session_id, model_id)?;
        let path = self.composite_path(session_id, model_id, task, index);
        fs::create_dir_all(path.parent().expect("composite path has a parent"))?;
        write_atomic(&path, png)?;
        Ok(())
    }

    pub fn metrics_path(&self, session_id: &str, model_id: &str) -> PathBuf {
        self.session_dir(session_id)
            .join("metrics")
            .join(format!("{model_id}.jsonl"))
    }

    /// Appends one JSON object per line to `metrics/<model_id>.jsonl`.
    pub fn append_metrics<T: Serialize>(&self, session_id: &str, model_id: &str, rows: &[T]) -> Result<()> {
        self.result_dir(session_id, model_id)?;
        if rows.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for row in rows {
            serde_json::to_writer(&mut buf, row).expect("metric rows serialize");
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.metrics_path(session_id, model_id))?;
        f.write_all(&buf)?;
        Ok(())
    }

    /// Truncates a model's metrics log before a fresh evaluation run.
    pub fn reset_metrics(&self, session_id: &str, model_id: &str) -> Result<()> {
        self.result_dir(session_id, model_id)?;
        write_atomic(&self.metrics_path(session_id, model_id), b"")?;
        Ok(())
    }

    pub fn read_metrics(&self, session_id: &str, model_id: &str) -> Result<String> {
        self.result_dir(session_id, model_id)?;
        match fs::read_to_string(self.metrics_path(session_id, model_id)) {
            Ok(s) => Ok(s),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::NoSuchResult {
                model_id: model_id.to_string(),
                index: 0,
                kind: "metrics",
            }),
            Err(e) => Err(e.into()),
        }
    }

    pub fn append_event<T: Serialize>(&self, session_id: &str, event: &T) -> Result<()> {
        let dir = self.existing_dir(session_id)?;
        let mut line = serde_json::to_vec(event).expect("events serialize");
        line.push(b'\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("events.jsonl"))?;
        f.write_all(&line)?;
        Ok(())
    }

    pub fn read_events<T: for<'de> Deserialize<'de>>(&self, session_id: &str) -> Result<Vec<T>> {
        let dir = self.existing_dir(session_id)?;
        let path = dir.join("events.jsonl");
        let text = match fs::read_to_string(&path) {
            Ok(s) => s,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l).map_err(|e| StoreError::Malformed {
                    path: path.clone(),
                    reason: e.to_string(),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_manifest, Pose, RgbImage};

    fn manifest(id: &str) -> SessionManifest {
        let mut m = sample_manifest();
        m.session_id = id.into();
        m.intrinsics.width = 4;
        m.intrinsics.height = 3;
        m.intrinsics.cx = 2.0;
        m.intrinsics.cy = 1.0;
        m.target_resolution = (4, 3);
        m.depth_resolution = (2, 2);
        m
    }

    fn frame(i: u64) -> Frame {
        Frame {
            index: i,
            timestamp_ns: 1_000 + i * 33,
            rgb: RgbImage::new(4, 3, 3, (0..36).map(|v| (v as u64 * 7 + i) as u8).collect()).unwrap(),
            depth: DepthMap::new(2, 2, vec![500 + i as u16, 0, 1500, 65535]).unwrap(),
            pose: Pose::from_translation([i as f64, 0.0, 0.0]),
        }
    }

    #[test]
    fn begin_append_load() {
        let tmp = tempfile::tempdir().unwrap();
        let store = SessionStore::open(tmp.path()).unwrap();
        let mut h = store.begin_session(&manifest("a")).unwrap();
        assert!(tmp.path().join("a/manifest.json").is_file());
        for i in 0..3 {
            store.append_frame(&mut h, &frame(i)).unwrap();
        }
        assert_eq!(h.frame_count(), 3);
        assert_eq!(store.frame_count("a").unwrap(), 3);
        assert_eq!(store.load_frame("a", 1).unwrap(), frame(1));
        let idx = store.load_index("a").unwrap();
        assert_eq!(idx.first_ts, Some(1000));
        assert_eq!(idx.last_ts, Some(1066));
    }

    #[test]
    fn duplicate_session_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let store = SessionStore::open(tmp.path()).unwrap();
        store.begin_session(&manifest("a")).unwrap();
        assert!(matches!(store.begin_session(&manifest("a")), Err(StoreError::DuplicateSession(_))));
    }

    #[test]
    fn unwritable_root_is_storage_unavailable() {
        let tmp = tempfile::tempdir().unwrap();
        let file_root = tmp.path().join("not-a-dir");
        fs::write(&file_root, b"x").unwrap();
        let store = SessionStore {
            root: file_root,
            manifests: Arc::default(),
        };
        assert!(matches!(
            store.begin_session(&manifest("a")),
            Err(StoreError::StorageUnavailable(_))
        ));
        assert!(matches!(
            SessionStore::open(tmp.path().join("not-a-dir/sub")),
            Err(StoreError::StorageUnavailable(_))
        ));
    }

    #[test]
    fn out_of_order_append_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let store = SessionStore::open(tmp.path()).unwrap();
        let mut h = store.begin_session(&manifest("a")).unwrap();
        store.append_frame(&mut h, &frame(0)).unwrap();
        store.append_frame(&mut h, &frame(1)).unwrap();
        assert!(matches!(
            store.append_frame(&mut h, &frame(5)),
            Err(StoreError::OutOfOrderFrame { expected: 2, got: 5 })
        ));
    }

    #[test]
    fn crash_before_rename_leaves_count_unchanged() {
        let tmp = tempfile::tempdir().unwrap();
        let store = SessionStore::open(tmp.path()).unwrap();
        let mut h = store.begin_session(&manifest("a")).unwrap();
        for i in 0..3 {
            store.append_frame(&mut h, &frame(i)).unwrap();
        }
        // simulate a crash mid-append of frame 3: payloads renamed, meta only
        // written to its temporary name, index never updated
        let frames = tmp.path().join("a/frames");
        fs::write(frames.join("000003.rgb.png"), b"partial").unwrap();
        fs::write(frames.join(".000003.depth.raw16.tmp"), b"xx").unwrap();
        fs::write(frames.join(".000003.meta.json.tmp"), b"{").unwrap();

        let reopened = SessionStore::open(tmp.path()).unwrap();
        let mut h2 = reopened.open_session("a").unwrap();
        assert_eq!(h2.frame_count(), 3);
        assert!(!frames.join(".000003.meta.json.tmp").exists());
        reopened.append_frame(&mut h2, &frame(3)).unwrap();
        assert_eq!(reopened.load_frame("a", 3).unwrap(), frame(3));
    }

    #[test]
    fn load_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let store = SessionStore::open(tmp.path()).unwrap();
        let mut h = store.begin_session(&manifest("a")).unwrap();
        store.append_frame(&mut h, &frame(0)).unwrap();
        assert!(matches!(store.load_frame("zzz", 0), Err(StoreError::NoSuchSession(_))));
        assert!(matches!(store.load_frame("a", 1), Err(StoreError::NoSuchFrame { index: 1, .. })));
        let depth = tmp.path().join("a/frames/000000.depth.raw16");
        let raw = fs::read(&depth).unwrap();
        fs::write(&depth, &raw[..raw.len() - 1]).unwrap();
        assert!(matches!(store.load_frame("a", 0), Err(StoreError::CorruptFrame { index: 0, .. })));
    }

    #[test]
    fn results_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let store = SessionStore::open(tmp.path()).unwrap();
        store.begin_session(&manifest("a")).unwrap();
        let d = DepthMap::new(4, 4, (0..16).map(|v| v * 4000).collect()).unwrap();
        store.store_result("a", "m1", 0, &StoredResult::Depth(d.clone())).unwrap();
        assert_eq!(
            store.load_result("a", "m1", 0, ResultKind::Depth).unwrap(),
            StoredResult::Depth(d)
        );
        let env = EnvironmentMap::new(4, 2, (0..24).map(|v| v as f32 * 0.125 + 0.001).collect()).unwrap();
        store.store_result("a", "m2", 7, &StoredResult::EnvMap(env.clone())).unwrap();
        assert_eq!(
            store.load_result("a", "m2", 7, ResultKind::EnvMap).unwrap(),
            StoredResult::EnvMap(env)
        );
        assert!(matches!(
            store.load_result("a", "nope", 0, ResultKind::Depth),
            Err(StoreError::NoSuchResult { .. })
        ));
    }

    #[test]
    fn metrics_and_events_are_line_oriented() {
        let tmp = tempfile::tempdir().unwrap();
        let store = SessionStore::open(tmp.path()).unwrap();
        store.begin_session(&manifest("a")).unwrap();
        store
            .append_metrics("a", "m", &[serde_json::json!({"v": 1}), serde_json::json!({"v": 2})])
            .unwrap();
        assert_eq!(store.read_metrics("a", "m").unwrap(), "{\"v\":1}\n{\"v\":2}\n");
        store.reset_metrics("a", "m").unwrap();
        assert_eq!(store.read_metrics("a", "m").unwrap(), "");
        store.append_event("a", &serde_json::json!({"e": 1})).unwrap();
        let ev: Vec<serde_json::Value> = store.read_events("a").unwrap();
        assert_eq!(ev.len(), 1);
    }

    #[test]
    fn two_reads_are_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let store = SessionStore::open(tmp.path()).unwrap();
        let mut h = store.begin_session(&manifest("a")).unwrap();
        for i in 0..4 {
            store.append_frame(&mut h, &frame(i)).unwrap();
        }
        let read = || (0..4).map(|i| store.load_frame("a", i).unwrap()).collect::<Vec<_>>();
        assert_eq!(read(), read());
    }
}
