//! Bundle directory layout: `manifest.json` plus headerless little-endian
//! `f32` payloads whose shapes come from the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EpisodeBundle, VideoTrack};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    event_id: String,
    d_visual: usize,
    d_text: usize,
    videos: Vec<VideoEntry>,
    text_file: String,
    images_file: String,
    n_images: usize,
    query: Vec<f32>,
    ground_truth: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VideoEntry {
    video_id: String,
    n_frames: usize,
    frames_file: String,
}

fn write_f32(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let mut bytes = Vec::with_capacity(rows.iter().map(Vec::len).sum::<usize>() * 4);
    for r in rows {
        for &x in r {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_f32(path: &Path, field: &str, rows: usize, cols: usize) -> Result<Vec<Vec<f64>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = rows * cols * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            field,
            format!("expected {expected} bytes ({rows}x{cols} f32), found {}", bytes.len()),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(values.chunks(cols.max(1)).map(<[f64]>::to_vec).take(rows).collect())
}

/// Writes `b` into `dir` (created if needed). Values are stored as `f32`.
pub fn save_bundle(b: &EpisodeBundle, dir: &Path) -> Result<()> {
    b.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut videos = Vec::with_capacity(b.videos.len());
    for (i, v) in b.videos.iter().enumerate() {
        let frames_file = format!("frames_{i:04}.bin");
        write_f32(&dir.join(&frames_file), &v.frames)?;
        videos.push(VideoEntry {
            video_id: v.video_id.clone(),
            n_frames: v.frames.len(),
            frames_file,
        });
    }
    let text: Vec<Vec<f64>> = b.videos.iter().map(|v| v.text.clone()).collect();
    write_f32(&dir.join("text.bin"), &text)?;
    write_f32(&dir.join("images.bin"), &b.images)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        event_id: b.event_id.clone(),
        d_visual: b.d_visual,
        d_text: b.d_text,
        videos,
        text_file: "text.bin".into(),
        images_file: "images.bin".into(),
        n_images: b.images.len(),
        query: b.query.iter().map(|&x| x as f32).collect(),
        ground_truth: b
            .ground_truth
            .as_ref()
            .map(|gt| gt.iter().map(|&(v, f)| [v, f]).collect()),
    };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn load_bundle(dir: &Path) -> Result<EpisodeBundle> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(Error::format(&path, "manifest", "missing manifest.json"));
    }
    let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&raw).map_err(|e| Error::format(&path, "manifest", e.to_string()))?;
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::format(&path, "format_version", format!("unsupported version {v}")));
        }
        None => return Err(Error::format(&path, "format_version", "missing or not an integer")),
    }
    let m: Manifest =
        serde_json::from_value(value).map_err(|e| Error::format(&path, "manifest", e.to_string()))?;
    if m.query.len() != m.d_text {
        return Err(Error::format(&path, "query", format!("length {} != d_text {}", m.query.len(), m.d_text)));
    }

    let texts = read_f32(&dir.join(&m.text_file), "text_file", m.videos.len(), m.d_text)?;
    let mut videos = Vec::with_capacity(m.videos.len());
    for (entry, text) in m.videos.iter().zip(texts) {
        let frames = read_f32(&dir.join(&entry.frames_file), "frames_file", entry.n_frames, m.d_visual)?;
        videos.push(VideoTrack {
            video_id: entry.video_id.clone(),
            frames,
            text,
        });
    }
    let images = read_f32(&dir.join(&m.images_file), "images_file", m.n_images, m.d_visual)?;
    let bundle = EpisodeBundle {
        event_id: m.event_id,
        d_visual: m.d_visual,
        d_text: m.d_text,
        videos,
        images,
        query: m.query.iter().map(|&x| x as f64).collect(),
        ground_truth: m.ground_truth.map(|gt| gt.into_iter().map(|[v, f]| (v, f)).collect()),
    };
    bundle
        .validate()
        .map_err(|e| Error::format(&path, "manifest", e.to_string()))?;
    Ok(bundle)
}

/// Loads every bundle directory directly under `root`, sorted by directory name.
pub fn load_dataset(root: &Path) -> Result<Vec<EpisodeBundle>> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::format(root, "manifest", "no bundle directories found"));
    }
    dirs.iter().map(|d| load_bundle(d)).collect()
}
