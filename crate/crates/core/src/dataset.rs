//! Episode storage: four sensory streams (arm joints and grippers, gimbal
//! angles, image streams, zoom parameters) laid out as
//!
//! ```text
//! <episode>/manifest.json
//! <episode>/streams.jsonl          one EpisodeRecord per line
//! <episode>/frames/{view}_{seq:06}.png
//! ```
//!
//! Sensor values are `f32` and serialized in shortest round-trip form, so a
//! write/read cycle is exact.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Affine2D, FrameSize};
use crate::image::{FormatSpec, ImageError, ImageFrame};

pub const SCHEMA_VERSION: &str = "avr-episode/1";
pub const INDEX_SCHEMA_VERSION: &str = "avr-index/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const STREAMS_FILE: &str = "streams.jsonl";
pub const INDEX_FILE: &str = "index.json";
pub const ZOOM_BIN_WIDTH: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("not found: {0}")]
    NotFound(PathBuf),
    #[error("record {index}: field {field}: {msg}")]
    Validation {
        index: usize,
        field: &'static str,
        msg: String,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("incompatible episodes {episodes:?}: {reason}")]
    Aggregate { episodes: Vec<PathBuf>, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ImageError,
    },
}

impl DatasetError {
    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn image(path: &Path) -> impl FnOnce(ImageError) -> Self + '_ {
        move |source| Self::Image {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraView {
    Top,
    Left,
    Front,
}

impl CameraView {
    pub const ALL: [CameraView; 3] = [CameraView::Top, CameraView::Left, CameraView::Front];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Top => "top",
            Self::Left => "left",
            Self::Front => "front",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

/// Zoom parameters applied to a frame by the image pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Processing {
    pub scale: f64,
    pub affine: Affine2D,
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub t_ms: u64,
    pub left_joints: [f32; 6],
    pub right_joints: [f32; 6],
    pub left_grip: f32,
    pub right_grip: f32,
    pub gimbal_pitch: f32,
    pub gimbal_yaw: f32,
    pub zoom: f32,
    pub focal_mm: f32,
    /// Frame file per view, relative to the episode directory.
    #[serde(default)]
    pub frames: BTreeMap<CameraView, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub processing: Option<Processing>,
}

impl EpisodeRecord {
    /// All-zero arm streams at the given gimbal state.
    pub fn at(t_ms: u64, pitch: f32, yaw: f32, zoom: f32, focal_mm: f32) -> Self {
        Self {
            t_ms,
            left_joints: [0.0; 6],
            right_joints: [0.0; 6],
            left_grip: 0.0,
            right_grip: 0.0,
            gimbal_pitch: pitch,
            gimbal_yaw: yaw,
            zoom,
            focal_mm,
            frames: BTreeMap::new(),
            depth: None,
            processing: None,
        }
    }

    /// Checks this record on its own; `prev_t` enforces ordering.
    pub fn validate(&self, index: usize, prev_t: Option<u64>) -> Result<(), DatasetError> {
        let fail = |field, msg: String| Err(DatasetError::Validation { index, field, msg });
        if let Some(p) = prev_t {
            if self.t_ms <= p {
                return fail("t_ms", format!("{} not after previous {}", self.t_ms, p));
            }
        }
        let ranged: [(&'static str, f32, f32, f32); 5] = [
            ("gimbal_pitch", self.gimbal_pitch, 0.0, 60.0),
            ("gimbal_yaw", self.gimbal_yaw, -90.0, 90.0),
            ("zoom", self.zoom, 1.0, 7.0),
            ("left_grip", self.left_grip, 0.0, 1.0),
            ("right_grip", self.right_grip, 0.0, 1.0),
        ];
        for (field, v, lo, hi) in ranged {
            if !(lo..=hi).contains(&v) {
                return fail(field, format!("{v} outside [{lo}, {hi}]"));
            }
        }
        if !self.focal_mm.is_finite() {
            return fail("focal_mm", "not finite".into());
        }
        for (field, js) in [("left_joints", &self.left_joints), ("right_joints", &self.right_joints)] {
            if js.iter().any(|v| !v.is_finite()) {
                return fail(field, "not finite".into());
            }
        }
        for name in self.frames.values().chain(self.depth.as_ref()) {
            if !is_safe_relative(name) {
                return fail("frames", format!("unsafe path {name:?}"));
            }
        }
        if let Some(p) = &self.processing {
            if !p.scale.is_finite() || p.scale < 1.0 {
                return fail("processing", format!("scale {}", p.scale));
            }
        }
        Ok(())
    }
}

fn is_safe_relative(name: &str) -> bool {
    let p = Path::new(name);
    !name.is_empty() && p.components().all(|c| matches!(c, Component::Normal(_)))
}

pub fn validate_records(records: &[EpisodeRecord]) -> Result<(), DatasetError> {
    let mut prev = None;
    for (i, r) in records.iter().enumerate() {
        r.validate(i, prev)?;
        prev = Some(r.t_ms);
    }
    Ok(())
}

pub fn frame_file_name(view: CameraView, seq: usize) -> String {
    format!("frames/{}_{:06}.png", view.as_str(), seq)
}

/// Everything in a manifest except the record count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub name: String,
    pub frame_rate_hz: f64,
    pub frame_size: FrameSize,
    pub layout: Vec<CameraView>,
    pub arms_present: bool,
    pub frame_format: FormatSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeManifest {
    pub schema: String,
    pub name: String,
    pub frame_rate_hz: f64,
    pub frame_size: FrameSize,
    pub layout: Vec<CameraView>,
    pub record_count: usize,
    pub arms_present: bool,
    pub frame_format: FormatSpec,
}

impl EpisodeManifest {
    pub fn new(meta: &EpisodeMeta, record_count: usize) -> Self {
        Self {
            schema: SCHEMA_VERSION.into(),
            name: meta.name.clone(),
            frame_rate_hz: meta.frame_rate_hz,
            frame_size: meta.frame_size,
            layout: meta.layout.clone(),
            record_count,
            arms_present: meta.arms_present,
            frame_format: meta.frame_format.clone(),
        }
    }

    pub fn meta(&self) -> EpisodeMeta {
        EpisodeMeta {
            name: self.name.clone(),
            frame_rate_hz: self.frame_rate_hz,
            frame_size: self.frame_size,
            layout: self.layout.clone(),
            arms_present: self.arms_present,
            frame_format: self.frame_format.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.schema != SCHEMA_VERSION {
            return Err(DatasetError::Manifest(format!("unsupported schema {:?}", self.schema)));
        }
        validate_meta(&self.meta())
    }
}

fn validate_meta(meta: &EpisodeMeta) -> Result<(), DatasetError> {
    let mut seen = Vec::new();
    for v in &meta.layout {
        if seen.contains(v) {
            return Err(DatasetError::Manifest(format!("view {} listed twice", v.as_str())));
        }
        seen.push(*v);
    }
    if !(meta.frame_rate_hz.is_finite() && meta.frame_rate_hz > 0.0) {
        return Err(DatasetError::Manifest(format!("frame rate {}", meta.frame_rate_hz)));
    }
    FrameSize::new(meta.frame_size.width, meta.frame_size.height)
        .map_err(|e| DatasetError::Manifest(e.to_string()))?;
    meta.frame_format
        .validate()
        .map_err(|e| DatasetError::Manifest(e.to_string()))
}

/// Streams records and frames into a new episode directory. The manifest
/// is only written by [`EpisodeWriter::finish`].
pub struct EpisodeWriter {
    dir: PathBuf,
    meta: EpisodeMeta,
    streams: BufWriter<File>,
    count: usize,
    last_t: Option<u64>,
}

impl EpisodeWriter {
    pub fn create(dir: impl AsRef<Path>, meta: EpisodeMeta) -> Result<Self, DatasetError> {
        validate_meta(&meta)?;
        let dir = dir.as_ref().to_path_buf();
        let frames = dir.join("frames");
        fs::create_dir_all(&frames).map_err(DatasetError::io(&frames))?;
        let path = dir.join(STREAMS_FILE);
        let file = File::create(&path).map_err(DatasetError::io(&path))?;
        Ok(Self {
            dir,
            meta,
            streams: BufWriter::new(file),
            count: 0,
            last_t: None,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Appends a record and writes `images`. A view without a file name in
    /// `record.frames` gets the default `frames/{view}_{seq:06}.png`.
    pub fn append(
        &mut self,
        mut record: EpisodeRecord,
        images: &[(CameraView, &ImageFrame)],
    ) -> Result<EpisodeRecord, DatasetError> {
        for (view, _) in images {
            record
                .frames
                .entry(*view)
                .or_insert_with(|| frame_file_name(*view, self.count));
        }
        self.check(&record)?;
        for (view, img) in images {
            let path = self.dir.join(&record.frames[view]);
            img.save_png(&path).map_err(DatasetError::image(&path))?;
        }
        self.push(record)
    }

    /// Like [`EpisodeWriter::append`] for a single view whose PNG bytes are
    /// already encoded.
    pub fn append_png(
        &mut self,
        mut record: EpisodeRecord,
        view: CameraView,
        png: &[u8],
    ) -> Result<EpisodeRecord, DatasetError> {
        let name = record
            .frames
            .entry(view)
            .or_insert_with(|| frame_file_name(view, self.count))
            .clone();
        self.check(&record)?;
        let path = self.dir.join(name);
        fs::write(&path, png).map_err(DatasetError::io(&path))?;
        self.push(record)
    }

    /// Appends a record whose frame files are copied byte-for-byte from
    /// `src_dir`, except for views listed in `replace`.
    pub fn append_copying(
        &mut self,
        record: EpisodeRecord,
        src_dir: &Path,
        replace: &[(CameraView, &ImageFrame)],
    ) -> Result<EpisodeRecord, DatasetError> {
        self.check(&record)?;
        for (view, name) in &record.frames {
            let dst = self.dir.join(name);
            if let Some(parent) = dst.parent() {
                fs::create_dir_all(parent).map_err(DatasetError::io(parent))?;
            }
            match replace.iter().find(|(v, _)| v == view) {
                Some((_, img)) => img.save_png(&dst).map_err(DatasetError::image(&dst))?,
                None => {
                    let src = src_dir.join(name);
                    fs::copy(&src, &dst).map_err(DatasetError::io(&src))?;
                }
            }
        }
        if let Some(name) = &record.depth {
            let (src, dst) = (src_dir.join(name), self.dir.join(name));
            if let Some(parent) = dst.parent() {
                fs::create_dir_all(parent).map_err(DatasetError::io(parent))?;
            }
            fs::copy(&src, &dst).map_err(DatasetError::io(&src))?;
        }
        self.push(record)
    }

    fn check(&self, record: &EpisodeRecord) -> Result<(), DatasetError> {
        record.validate(self.count, self.last_t)?;
        if let Some(v) = record.frames.keys().find(|v| !self.meta.layout.contains(v)) {
            return Err(DatasetError::Validation {
                index: self.count,
                field: "frames",
                msg: format!("view {} not in layout", v.as_str()),
            });
        }
        Ok(())
    }

    fn push(&mut self, record: EpisodeRecord) -> Result<EpisodeRecord, DatasetError> {
        let path = self.dir.join(STREAMS_FILE);
        let line = serde_json::to_string(&record).expect("record serializes");
        writeln!(self.streams, "{line}").map_err(DatasetError::io(&path))?;
        self.count += 1;
        self.last_t = Some(record.t_ms);
        Ok(record)
    }

    pub fn finish(mut self) -> Result<EpisodeManifest, DatasetError> {
        let streams = self.dir.join(STREAMS_FILE);
        self.streams.flush().map_err(DatasetError::io(&streams))?;
        let manifest = EpisodeManifest::new(&self.meta, self.count);
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(DatasetError::io(&path))?;
        Ok(manifest)
    }
}

/// Writes a complete episode. `frames` is either empty or holds one image
/// list per record. Records are validated before anything touches disk.
pub fn write_episode(
    dir: impl AsRef<Path>,
    meta: &EpisodeMeta,
    records: &[EpisodeRecord],
    frames: &[Vec<(CameraView, ImageFrame)>],
) -> Result<EpisodeManifest, DatasetError> {
    validate_meta(meta)?;
    validate_records(records)?;
    if !frames.is_empty() && frames.len() != records.len() {
        return Err(DatasetError::Manifest(format!(
            "{} frame sets for {} records",
            frames.len(),
            records.len()
        )));
    }
    let mut w = EpisodeWriter::create(dir, meta.clone())?;
    for (i, r) in records.iter().enumerate() {
        let imgs: Vec<(CameraView, &ImageFrame)> = frames
            .get(i)
            .map(|set| set.iter().map(|(v, f)| (*v, f)).collect())
            .unwrap_or_default();
        w.append(r.clone(), &imgs)?;
    }
    w.finish()
}

/// Lazy access to an episode's image files.
#[derive(Debug, Clone)]
pub struct FrameLoader {
    dir: PathBuf,
}

impl FrameLoader {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn load(&self, record: &EpisodeRecord, view: CameraView) -> Result<Option<ImageFrame>, DatasetError> {
        record.frames.get(&view).map(|name| self.load_file(name)).transpose()
    }

    pub fn load_file(&self, name: &str) -> Result<ImageFrame, DatasetError> {
        let path = self.dir.join(name);
        if !path.is_file() {
            return Err(DatasetError::NotFound(path));
        }
        ImageFrame::load_png(&path).map_err(DatasetError::image(&path))
    }
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub manifest: EpisodeManifest,
    pub records: Vec<EpisodeRecord>,
    pub frames: FrameLoader,
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<EpisodeManifest, DatasetError> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(DatasetError::NotFound(path));
    }
    let text = fs::read_to_string(&path).map_err(DatasetError::io(&path))?;
    let m: EpisodeManifest = serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        path: path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    m.validate()?;
    Ok(m)
}

pub fn read_episode(dir: impl AsRef<Path>) -> Result<Episode, DatasetError> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let path = dir.join(STREAMS_FILE);
    if !path.is_file() {
        return Err(DatasetError::NotFound(path));
    }
    let file = File::open(&path).map_err(DatasetError::io(&path))?;
    let mut records = Vec::with_capacity(manifest.record_count);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(DatasetError::io(&path))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: EpisodeRecord = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            path: path.clone(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        records.push(r);
    }
    validate_records(&records)?;
    for (i, r) in records.iter().enumerate() {
        if let Some(v) = r.frames.keys().find(|v| !manifest.layout.contains(v)) {
            return Err(DatasetError::Validation {
                index: i,
                field: "frames",
                msg: format!("view {} not in layout", v.as_str()),
            });
        }
    }
    if records.len() != manifest.record_count {
        return Err(DatasetError::Manifest(format!(
            "record_count {} but streams file has {}",
            manifest.record_count,
            records.len()
        )));
    }
    Ok(Episode {
        manifest,
        records,
        frames: FrameLoader { dir: dir.to_path_buf() },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GimbalCoverage {
    pub pitch_min: f32,
    pub pitch_max: f32,
    pub yaw_min: f32,
    pub yaw_max: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub path: PathBuf,
    pub manifest: EpisodeManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub schema: String,
    pub episodes: Vec<IndexEntry>,
    pub total_records: usize,
    /// Non-empty bins only, ascending.
    pub zoom_histogram: Vec<HistogramBin>,
    pub gimbal_coverage: Option<GimbalCoverage>,
}

pub fn zoom_histogram(zooms: impl IntoIterator<Item = f32>) -> Vec<HistogramBin> {
    let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
    for z in zooms {
        *bins.entry((f64::from(z) / ZOOM_BIN_WIDTH).floor() as i64).or_default() += 1;
    }
    bins.into_iter()
        .map(|(k, count)| HistogramBin {
            lo: k as f64 * ZOOM_BIN_WIDTH,
            hi: (k + 1) as f64 * ZOOM_BIN_WIDTH,
            count,
        })
        .collect()
}

/// Builds `out_dir/index.json` over validated episodes.
pub fn aggregate(dirs: &[PathBuf], out_dir: impl AsRef<Path>) -> Result<DatasetIndex, DatasetError> {
    let mut episodes = Vec::with_capacity(dirs.len());
    for d in dirs {
        episodes.push((d.clone(), read_episode(d)?));
    }
    if let Some((first_dir, first)) = episodes.first() {
        let first_size = first.manifest.frame_size;
        let offending: Vec<PathBuf> = episodes
            .iter()
            .filter(|(_, e)| e.manifest.frame_size != first_size)
            .map(|(d, _)| d.clone())
            .collect();
        if !offending.is_empty() {
            let mut named = vec![first_dir.clone()];
            named.extend(offending);
            return Err(DatasetError::Aggregate {
                episodes: named,
                reason: "frame sizes differ".into(),
            });
        }
    }
    let all = || episodes.iter().flat_map(|(_, e)| e.records.iter());
    let coverage = all().fold(None, |acc: Option<GimbalCoverage>, r| {
        let (p, y) = (r.gimbal_pitch, r.gimbal_yaw);
        Some(match acc {
            None => GimbalCoverage {
                pitch_min: p,
                pitch_max: p,
                yaw_min: y,
                yaw_max: y,
            },
            Some(c) => GimbalCoverage {
                pitch_min: c.pitch_min.min(p),
                pitch_max: c.pitch_max.max(p),
                yaw_min: c.yaw_min.min(y),
                yaw_max: c.yaw_max.max(y),
            },
        })
    });
    let index = DatasetIndex {
        schema: INDEX_SCHEMA_VERSION.into(),
        total_records: all().count(),
        zoom_histogram: zoom_histogram(all().map(|r| r.zoom)),
        gimbal_coverage: coverage,
        episodes: episodes
            .iter()
            .map(|(d, e)| IndexEntry {
                path: d.clone(),
                manifest: e.manifest.clone(),
            })
            .collect(),
    };
    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(DatasetError::io(out))?;
    let path = out.join(INDEX_FILE);
    let text = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(&path, text + "\n").map_err(DatasetError::io(&path))?;
    Ok(index)
}
