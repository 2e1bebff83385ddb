//! On-disk corpus format: a directory holding `manifest.json` plus one
//! binary feature file per trailer per expert.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! magic "MMXE" | version u32 | name_len u16 | expert name UTF-8
//! | level u8 (0 = frame, 1 = clip) | clip_count u32 | native_dim u32
//! | per clip: frame_count u32, then frame_count * native_dim f32 values
//! ```
//!
//! Feature values round-trip bit-exactly; loading a written store yields
//! the identical in-memory corpus.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mmfuse_core::corpus::{Corpus, ExpertTrack, GenreVocabulary, TrackLevel, TrailerRecord};
use mmfuse_core::tensor::Tensor2;

use crate::error::{PipelineError, Result};

pub const STORE_MAGIC: &[u8; 4] = b"MMXE";
pub const STORE_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub genres: Vec<String>,
    pub trailers: Vec<ManifestTrailer>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestTrailer {
    pub id: String,
    pub title: String,
    pub year: i32,
    pub labels: Vec<u8>,
    pub genre_order: Vec<usize>,
    pub clip_count: usize,
    pub tracks: Vec<ManifestTrack>,
    /// Planted (genre, substyle) pairs; present for synthetic corpora.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub substyles: Vec<(usize, usize)>,
    /// Planted per-clip genres, when generated in per-clip mode.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clip_genres: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestTrack {
    pub expert: String,
    pub path: String,
}

/// Writes a corpus as a store directory. Existing feature files are
/// overwritten; the directory is created if needed.
pub fn write_store(corpus: &Corpus<f32>, dir: &Path) -> Result<()> {
    corpus
        .validate()
        .map_err(PipelineError::Core)?;
    fs::create_dir_all(dir)?;
    let mut trailers = Vec::with_capacity(corpus.trailers.len());
    for record in &corpus.trailers {
        let sub = dir.join(&record.id);
        fs::create_dir_all(&sub)?;
        let mut tracks = Vec::with_capacity(record.tracks.len());
        for (name, track) in &record.tracks {
            let rel = format!("{}/{}.mmxe", record.id, name);
            write_track(&dir.join(&rel), track)?;
            tracks.push(ManifestTrack {
                expert: name.clone(),
                path: rel,
            });
        }
        trailers.push(ManifestTrailer {
            id: record.id.clone(),
            title: record.title.clone(),
            year: record.year,
            labels: record.labels.clone(),
            genre_order: record.genre_order.clone(),
            clip_count: record.clip_count,
            tracks,
            substyles: record.substyles.clone(),
            clip_genres: record.clip_genres.clone(),
        });
    }
    let manifest = Manifest {
        format_version: STORE_VERSION,
        genres: corpus.genres.names().to_vec(),
        trailers,
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    fs::write(dir.join(MANIFEST_NAME), json)?;
    Ok(())
}

fn write_track(path: &Path, track: &ExpertTrack<f32>) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(STORE_MAGIC)?;
    w.write_all(&STORE_VERSION.to_le_bytes())?;
    let name = track.expert.as_bytes();
    w.write_all(&(name.len() as u16).to_le_bytes())?;
    w.write_all(name)?;
    let level: u8 = match track.level {
        TrackLevel::Frame => 0,
        TrackLevel::Clip => 1,
    };
    w.write_all(&[level])?;
    w.write_all(&(track.clips.len() as u32).to_le_bytes())?;
    w.write_all(&(track.native_dim as u32).to_le_bytes())?;
    for clip in &track.clips {
        w.write_all(&(clip.rows() as u32).to_le_bytes())?;
        for v in clip.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads a whole store directory back into memory.
pub fn load_store(dir: &Path) -> Result<Corpus<f32>> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let data = fs::read(&manifest_path).map_err(|e| {
        PipelineError::format(format!("cannot read {}: {e}", manifest_path.display()))
    })?;
    let manifest: Manifest = serde_json::from_slice(&data).map_err(|e| {
        PipelineError::format(format!("bad manifest {}: {e}", manifest_path.display()))
    })?;
    if manifest.format_version != STORE_VERSION {
        return Err(PipelineError::format(format!(
            "unsupported store version {} in {}",
            manifest.format_version,
            manifest_path.display()
        )));
    }
    let genres = GenreVocabulary::new(manifest.genres).map_err(PipelineError::Core)?;
    let mut trailers = Vec::with_capacity(manifest.trailers.len());
    for entry in &manifest.trailers {
        let mut tracks = BTreeMap::new();
        for t in &entry.tracks {
            let track = load_track(&dir.join(&t.path))?;
            if track.expert != t.expert {
                return Err(PipelineError::format(format!(
                    "track file {} holds expert {} but the manifest says {}",
                    t.path, track.expert, t.expert
                )));
            }
            if track.clips.len() != entry.clip_count {
                return Err(PipelineError::consistency(format!(
                    "trailer {}: expert {} has {} clips, manifest says {}",
                    entry.id,
                    t.expert,
                    track.clips.len(),
                    entry.clip_count
                )));
            }
            tracks.insert(t.expert.clone(), track);
        }
        trailers.push(TrailerRecord {
            id: entry.id.clone(),
            title: entry.title.clone(),
            year: entry.year,
            labels: entry.labels.clone(),
            genre_order: entry.genre_order.clone(),
            substyles: entry.substyles.clone(),
            clip_genres: entry.clip_genres.clone(),
            clip_count: entry.clip_count,
            tracks,
        });
    }
    let corpus = Corpus { genres, trailers };
    corpus.validate().map_err(PipelineError::Core)?;
    Ok(corpus)
}

struct TrackReader {
    inner: BufReader<fs::File>,
    offset: usize,
    path: PathBuf,
}

impl TrackReader {
    fn take(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|_| {
            PipelineError::format(format!(
                "{}: truncated at offset {}",
                self.path.display(),
                self.offset
            ))
        })?;
        self.offset += buf.len();
        Ok(())
    }

    fn u16(&mut self) -> Result<u16> {
        let mut b = [0u8; 2];
        self.take(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.take(&mut b)?;
        Ok(b[0])
    }
}

fn load_track(path: &Path) -> Result<ExpertTrack<f32>> {
    let file = fs::File::open(path)
        .map_err(|e| PipelineError::format(format!("cannot open {}: {e}", path.display())))?;
    let mut r = TrackReader {
        inner: BufReader::new(file),
        offset: 0,
        path: path.to_path_buf(),
    };
    let mut magic = [0u8; 4];
    r.take(&mut magic)?;
    if &magic != STORE_MAGIC {
        return Err(PipelineError::format(format!(
            "{}: bad magic at offset 0",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != STORE_VERSION {
        return Err(PipelineError::format(format!(
            "{}: unsupported version {version} at offset 4",
            path.display()
        )));
    }
    let name_len = r.u16()? as usize;
    let mut name = vec![0u8; name_len];
    r.take(&mut name)?;
    let expert = String::from_utf8(name)
        .map_err(|_| PipelineError::format(format!("{}: expert name is not UTF-8", path.display())))?;
    let level = match r.u8()? {
        0 => TrackLevel::Frame,
        1 => TrackLevel::Clip,
        other => {
            return Err(PipelineError::format(format!(
                "{}: unknown level flag {other}",
                path.display()
            )))
        }
    };
    let clip_count = r.u32()? as usize;
    let native_dim = r.u32()? as usize;
    let mut clips = Vec::with_capacity(clip_count);
    for _ in 0..clip_count {
        let frames = r.u32()? as usize;
        let mut data = vec![0f32; frames * native_dim];
        let mut bytes = vec![0u8; frames * native_dim * 4];
        r.take(&mut bytes)?;
        for (i, chunk) in bytes.chunks_exact(4).enumerate() {
            data[i] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        let clip = Tensor2::from_data(frames, native_dim, data).map_err(|e| {
            PipelineError::format(format!("{}: {e}", path.display()))
        })?;
        clips.push(clip);
    }
    // Reject trailing garbage.
    let mut extra = [0u8; 1];
    if r.inner.read(&mut extra)? != 0 {
        return Err(PipelineError::format(format!(
            "{}: trailing bytes after clip data at offset {}",
            path.display(),
            r.offset
        )));
    }
    Ok(ExpertTrack {
        expert,
        native_dim,
        level,
        clips,
    })
}
