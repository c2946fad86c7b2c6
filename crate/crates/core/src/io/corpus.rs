//! Line-delimited clip corpus with a sidecar manifest.
//!
//! Each line is one JSON clip record; the manifest (at
//! `<corpus-path>.manifest.json`) pins the format version, embedding
//! dimensions per modality, class count and embedding encoding.
//! Embeddings are stored either as JSON float arrays (`text`) or as
//! base64-packed little-endian f64 bytes (`base64`) for large dimensions.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::IoError;
use crate::model::{ClipRecord, Embedding, FrameObservation, Modality};

pub const CORPUS_FORMAT_VERSION: u32 = 1;

/// How embedding vectors are written inside records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingEncoding {
    /// JSON arrays of floats; readable, larger.
    Text,
    /// Base64 of packed little-endian f64 bytes; compact, exact.
    Base64,
}

/// Sidecar metadata describing one corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    /// Dimension of frame embeddings; absent when no clip has frames.
    pub frame_dim: Option<usize>,
    /// Dimension per clip-level modality embedding.
    pub clip_dims: BTreeMap<Modality, usize>,
    /// One more than the highest label, 0 for fully unlabeled corpora.
    pub n_classes: usize,
    pub encoding: EmbeddingEncoding,
    pub n_clips: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum EmbeddingRepr {
    Text(Vec<f64>),
    Packed(String),
}

impl EmbeddingRepr {
    fn encode(values: &[f64], encoding: EmbeddingEncoding) -> Self {
        match encoding {
            EmbeddingEncoding::Text => Self::Text(values.to_vec()),
            EmbeddingEncoding::Base64 => {
                let mut bytes = Vec::with_capacity(values.len() * 8);
                for v in values {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                Self::Packed(BASE64.encode(bytes))
            }
        }
    }

    fn decode(self, line: usize) -> Result<Vec<f64>, IoError> {
        let values = match self {
            Self::Text(values) => values,
            Self::Packed(encoded) => {
                let bytes = BASE64.decode(encoded.as_bytes()).map_err(|e| {
                    IoError::MalformedRecord {
                        line,
                        message: format!("bad base64 embedding: {e}"),
                    }
                })?;
                if bytes.len() % 8 != 0 {
                    return Err(IoError::MalformedRecord {
                        line,
                        message: format!("packed embedding has {} bytes, not 8-aligned", bytes.len()),
                    });
                }
                bytes
                    .chunks_exact(8)
                    .map(|c| {
                        f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]])
                    })
                    .collect()
            }
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IoError::MalformedRecord {
                line,
                message: "embedding contains a non-finite value".into(),
            });
        }
        Ok(values)
    }
}

#[derive(Serialize, Deserialize)]
struct FrameLine {
    embedding: EmbeddingRepr,
    quality: f64,
    detection: f64,
}

#[derive(Serialize, Deserialize)]
struct ClipLine {
    clip_id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    label: Option<u32>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    frames: Vec<FrameLine>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    clip_embeddings: BTreeMap<Modality, EmbeddingRepr>,
}

fn manifest_path(corpus_path: &Path) -> PathBuf {
    let mut name = corpus_path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    corpus_path.with_file_name(name)
}

/// Derives the manifest for `clips`, verifying internal dimension
/// consistency. `line` numbers in errors are 1-based clip positions.
fn derive_manifest(
    clips: &[ClipRecord],
    encoding: EmbeddingEncoding,
) -> Result<CorpusManifest, IoError> {
    let mut frame_dim: Option<usize> = None;
    let mut clip_dims: BTreeMap<Modality, usize> = BTreeMap::new();
    let mut n_classes = 0usize;
    for (idx, clip) in clips.iter().enumerate() {
        let line = idx + 1;
        for frame in &clip.frames {
            match frame_dim {
                None => frame_dim = Some(frame.embedding.dim()),
                Some(expected) if expected != frame.embedding.dim() => {
                    return Err(IoError::DimensionMismatch {
                        line,
                        expected,
                        actual: frame.embedding.dim(),
                    });
                }
                _ => {}
            }
        }
        for (modality, embedding) in &clip.clip_embeddings {
            match clip_dims.get(modality) {
                None => {
                    clip_dims.insert(*modality, embedding.dim());
                }
                Some(&expected) if expected != embedding.dim() => {
                    return Err(IoError::DimensionMismatch {
                        line,
                        expected,
                        actual: embedding.dim(),
                    });
                }
                _ => {}
            }
        }
        if let Some(label) = clip.label {
            n_classes = n_classes.max(label as usize + 1);
        }
    }
    Ok(CorpusManifest {
        format_version: CORPUS_FORMAT_VERSION,
        frame_dim,
        clip_dims,
        n_classes,
        encoding,
        n_clips: clips.len(),
    })
}

/// Writes the corpus and its sidecar manifest; returns the manifest.
pub fn write_corpus(
    clips: &[ClipRecord],
    path: &Path,
    encoding: EmbeddingEncoding,
) -> Result<CorpusManifest, IoError> {
    let manifest = derive_manifest(clips, encoding)?;

    let mut writer = BufWriter::new(fs::File::create(path)?);
    for clip in clips {
        let line = ClipLine {
            clip_id: clip.clip_id.clone(),
            label: clip.label,
            frames: clip
                .frames
                .iter()
                .map(|f| FrameLine {
                    embedding: EmbeddingRepr::encode(&f.embedding.values, encoding),
                    quality: f.quality_score,
                    detection: f.detection_score,
                })
                .collect(),
            clip_embeddings: clip
                .clip_embeddings
                .iter()
                .map(|(m, e)| (*m, EmbeddingRepr::encode(&e.values, encoding)))
                .collect(),
        };
        serde_json::to_writer(&mut writer, &line)
            .map_err(|e| IoError::MalformedRecord { line: 0, message: e.to_string() })?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;

    let manifest_json = serde_json::to_string_pretty(&manifest)
        .expect("manifest serialization cannot fail");
    fs::write(manifest_path(path), manifest_json + "\n")?;
    Ok(manifest)
}

/// Reads a corpus and its manifest, validating every record against the
/// manifest's dimensions and class count.
pub fn read_corpus(path: &Path) -> Result<(Vec<ClipRecord>, CorpusManifest), IoError> {
    let manifest_file = manifest_path(path);
    let manifest_text = fs::read_to_string(&manifest_file).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            IoError::MissingManifest {
                path: manifest_file.display().to_string(),
            }
        } else {
            IoError::Io(e)
        }
    })?;
    let manifest: CorpusManifest = serde_json::from_str(&manifest_text)
        .map_err(|e| IoError::MalformedManifest(e.to_string()))?;
    if manifest.format_version != CORPUS_FORMAT_VERSION {
        return Err(IoError::VersionMismatch {
            found: manifest.format_version,
            expected: CORPUS_FORMAT_VERSION,
        });
    }

    let reader = BufReader::new(fs::File::open(path)?);
    let mut clips = Vec::new();
    for (idx, line_result) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line_result?;
        if text.trim().is_empty() {
            continue;
        }
        let parsed: ClipLine =
            serde_json::from_str(&text).map_err(|e| IoError::MalformedRecord {
                line: line_no,
                message: e.to_string(),
            })?;

        let mut frames = Vec::with_capacity(parsed.frames.len());
        for frame in parsed.frames {
            let values = frame.embedding.decode(line_no)?;
            let expected = manifest.frame_dim.ok_or_else(|| IoError::MalformedRecord {
                line: line_no,
                message: "record has frames but the manifest declares none".into(),
            })?;
            if values.len() != expected {
                return Err(IoError::MalformedRecord {
                    line: line_no,
                    message: format!(
                        "frame embedding has {} values, manifest says {expected}",
                        values.len()
                    ),
                });
            }
            frames.push(FrameObservation {
                embedding: Embedding { values },
                quality_score: frame.quality,
                detection_score: frame.detection,
            });
        }

        let mut clip_embeddings = BTreeMap::new();
        for (modality, repr) in parsed.clip_embeddings {
            let values = repr.decode(line_no)?;
            let expected = manifest.clip_dims.get(&modality).copied().ok_or_else(|| {
                IoError::MalformedRecord {
                    line: line_no,
                    message: format!("modality {modality} not declared in the manifest"),
                }
            })?;
            if values.len() != expected {
                return Err(IoError::MalformedRecord {
                    line: line_no,
                    message: format!(
                        "{modality} embedding has {} values, manifest says {expected}",
                        values.len()
                    ),
                });
            }
            clip_embeddings.insert(modality, Embedding { values });
        }

        if let Some(label) = parsed.label {
            if label as usize >= manifest.n_classes {
                return Err(IoError::MalformedRecord {
                    line: line_no,
                    message: format!(
                        "label {label} outside the manifest's {} classes",
                        manifest.n_classes
                    ),
                });
            }
        }

        clips.push(ClipRecord {
            clip_id: parsed.clip_id,
            label: parsed.label,
            frames,
            clip_embeddings,
        });
    }
    Ok((clips, manifest))
}
