//! Embedding matrices, the VDEM interchange format, and embedding sources.
//!
//! VDEM layout (all integers little-endian):
//!
//! | bytes | field                       |
//! |-------|-----------------------------|
//! | 4     | magic `VDEM`                |
//! | 4     | u32 version = 1             |
//! | 4     | u32 rows                    |
//! | 4     | u32 dims                    |
//! | 1     | u8 normalized flag (0 or 1) |
//! | 4·r·d | f32 data, row-major         |

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::dataset::{Frame, FrameStore};
use crate::error::{Error, Result};
use crate::model::VideoClip;

pub const VDEM_MAGIC: &[u8; 4] = b"VDEM";
pub const VDEM_VERSION: u32 = 1;
const HEADER_LEN: usize = 17;

/// Allowed deviation of a row norm from 1 for a matrix flagged normalized.
pub const NORM_TOLERANCE: f32 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dims: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl EmbeddingMatrix {
    /// Build from row-major data. The `normalized` flag is set iff every row
    /// has unit L2 norm within [`NORM_TOLERANCE`].
    pub fn new(rows: usize, dims: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dims {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{dims} matrix",
                data.len()
            )));
        }
        let mut m = EmbeddingMatrix {
            rows,
            dims,
            data,
            normalized: false,
        };
        m.normalized = m.rows_are_unit();
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dims = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dims) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), dims, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn row_norm(&self, i: usize) -> f32 {
        self.row(i).iter().map(|x| x * x).sum::<f32>().sqrt()
    }

    fn rows_are_unit(&self) -> bool {
        (0..self.rows).all(|i| (self.row_norm(i) - 1.0).abs() <= NORM_TOLERANCE)
    }

    /// Copy with every row scaled to unit norm. All-zero rows stay zero.
    pub fn normalized(&self) -> EmbeddingMatrix {
        let mut data = self.data.clone();
        for chunk in data.chunks_mut(self.dims.max(1)) {
            let norm = chunk.iter().map(|x| x * x).sum::<f32>().sqrt();
            if norm > 0.0 {
                chunk.iter_mut().for_each(|x| *x /= norm);
            }
        }
        let mut m = EmbeddingMatrix {
            rows: self.rows,
            dims: self.dims,
            data,
            normalized: false,
        };
        m.normalized = m.rows_are_unit();
        m
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<EmbeddingMatrix> {
        let mut data = Vec::with_capacity(indices.len() * self.dims);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::InvalidArgument(format!("row {i} of {}", self.rows)));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(EmbeddingMatrix {
            rows: indices.len(),
            dims: self.dims,
            data,
            normalized: self.normalized,
        })
    }

    pub fn to_vdem_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(VDEM_MAGIC);
        out.extend_from_slice(&VDEM_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.dims as u32).to_le_bytes());
        out.push(u8::from(self.normalized));
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_vdem_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Vdem(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[0..4] != VDEM_MAGIC {
            return Err(Error::Vdem("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != VDEM_VERSION {
            return Err(Error::Vdem(format!("unsupported version {version}")));
        }
        let rows = u32_at(8) as usize;
        let dims = u32_at(12) as usize;
        let flag = bytes[16];
        if flag > 1 {
            return Err(Error::Vdem(format!("normalized flag must be 0 or 1, got {flag}")));
        }
        let expected = rows
            .checked_mul(dims)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::Vdem("size overflow".into()))?;
        if bytes.len() != expected {
            return Err(Error::Vdem(format!(
                "expected {expected} bytes for {rows}x{dims}, got {}",
                bytes.len()
            )));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let m = EmbeddingMatrix {
            rows,
            dims,
            data,
            normalized: flag == 1,
        };
        if m.normalized && !m.rows_are_unit() {
            return Err(Error::Vdem("flagged normalized but a row norm is off by more than 1e-4".into()));
        }
        Ok(m)
    }
}

pub fn read_vdem(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::from_vdem_bytes(&bytes).map_err(|e| match e {
        Error::Vdem(m) => Error::Vdem(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Write via a temp file and rename, so readers never see a partial file.
pub fn write_vdem(path: impl AsRef<Path>, m: &EmbeddingMatrix) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("vdem.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&m.to_vdem_bytes()).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// A source of image and text embeddings living in one shared space.
pub trait Embedder: Send + Sync {
    fn embed_images(&self, frames: &[Frame]) -> Result<EmbeddingMatrix>;

    fn embed_texts(&self, texts: &[String]) -> Result<EmbeddingMatrix>;

    /// One row per frame of `clip`, in order.
    fn embed_clip(&self, store: &FrameStore, clip: &VideoClip) -> Result<EmbeddingMatrix> {
        let indices: Vec<usize> = (0..clip.len()).collect();
        self.embed_images(&store.load_frames(clip, &indices)?)
    }
}

/// Deterministic offline embedder.
///
/// Texts containing `stage <k> marker` map to basis vector `e_k`; other
/// texts map to a hash-seeded unit vector. Images map to `e_k` plus a
/// content-hash perturbation, where `k` is read from the mean red channel
/// (`k = round(mean_red / 40)`), the marker painted by the synthetic fixture.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    pub dims: usize,
    pub image_noise: f32,
}

pub const MOCK_RED_STEP: f32 = 40.0;

impl Default for MockEmbedder {
    fn default() -> Self {
        MockEmbedder {
            dims: 16,
            image_noise: 0.35,
        }
    }
}

impl MockEmbedder {
    pub fn new(dims: usize) -> Self {
        MockEmbedder {
            dims,
            ..Self::default()
        }
    }

    fn hashed(&self, bytes: &[u8]) -> Vec<f32> {
        let seed: [u8; 32] = Sha256::digest(bytes).into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dims).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
    }

    fn basis(&self, k: usize) -> Vec<f32> {
        let mut v = vec![0.0; self.dims];
        v[k % self.dims] = 1.0;
        v
    }

    pub fn text_vector(&self, text: &str) -> Vec<f32> {
        match stage_marker(text) {
            Some(k) => self.basis(k),
            None => self.hashed(text.as_bytes()),
        }
    }

    pub fn image_vector(&self, frame: &Frame) -> Vec<f32> {
        let raw = frame.as_raw();
        let n = (raw.len() / 3).max(1);
        let mean_red = raw.iter().step_by(3).map(|&r| f32::from(r)).sum::<f32>() / n as f32;
        let k = (mean_red / MOCK_RED_STEP).round() as usize;
        let noise = self.hashed(raw);
        self.basis(k)
            .iter()
            .zip(noise)
            .map(|(b, n)| b + self.image_noise * n)
            .collect()
    }
}

fn stage_marker(text: &str) -> Option<usize> {
    let lower = text.to_lowercase();
    let mut rest = lower.as_str();
    while let Some(i) = rest.find("stage ") {
        let after = &rest[i + 6..];
        let digits: String = after.chars().take_while(char::is_ascii_digit).collect();
        if !digits.is_empty() && after[digits.len()..].starts_with(" marker") {
            return digits.parse().ok();
        }
        rest = after;
    }
    None
}

impl Embedder for MockEmbedder {
    fn embed_images(&self, frames: &[Frame]) -> Result<EmbeddingMatrix> {
        if frames.is_empty() {
            return Err(Error::Precondition("no frames to embed".into()));
        }
        let rows: Vec<Vec<f32>> = frames.iter().map(|f| self.image_vector(f)).collect();
        Ok(EmbeddingMatrix::from_rows(&rows)?.normalized())
    }

    fn embed_texts(&self, texts: &[String]) -> Result<EmbeddingMatrix> {
        if texts.is_empty() {
            return Err(Error::Precondition("no texts to embed".into()));
        }
        let rows: Vec<Vec<f32>> = texts.iter().map(|t| self.text_vector(t)).collect();
        Ok(EmbeddingMatrix::from_rows(&rows)?.normalized())
    }
}

/// Embeddings precomputed by the sidecar.
///
/// * frames: `<dir>/<action_key>/<clip_id>.vdem`, one row per `frame_*`
///   file of the clip directory in sorted order;
/// * texts: `<dir>/texts.txt` (one string per line) with row-aligned
///   `<dir>/texts.vdem`.
#[derive(Debug, Clone)]
pub struct PrecomputedEmbedder {
    dir: PathBuf,
    texts: HashMap<String, usize>,
    text_matrix: Option<EmbeddingMatrix>,
}

impl PrecomputedEmbedder {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let txt = dir.join("texts.txt");
        let (texts, text_matrix) = if txt.is_file() {
            let lines = fs::read_to_string(&txt).map_err(|e| Error::io(&txt, e))?;
            let m = read_vdem(dir.join("texts.vdem"))?;
            let texts: HashMap<String, usize> = lines
                .lines()
                .enumerate()
                .map(|(i, l)| (l.to_string(), i))
                .collect();
            if lines.lines().count() != m.rows() {
                return Err(Error::Vdem(format!(
                    "texts.txt has {} lines but texts.vdem has {} rows",
                    lines.lines().count(),
                    m.rows()
                )));
            }
            (texts, Some(m))
        } else {
            (HashMap::new(), None)
        };
        Ok(PrecomputedEmbedder { dir, texts, text_matrix })
    }
}

impl Embedder for PrecomputedEmbedder {
    fn embed_images(&self, _frames: &[Frame]) -> Result<EmbeddingMatrix> {
        Err(Error::Precondition(
            "precomputed embeddings are addressed by clip, not by pixels".into(),
        ))
    }

    fn embed_texts(&self, texts: &[String]) -> Result<EmbeddingMatrix> {
        let m = self
            .text_matrix
            .as_ref()
            .ok_or_else(|| Error::Precondition(format!("no texts.vdem in {}", self.dir.display())))?;
        let idx = texts
            .iter()
            .map(|t| {
                self.texts
                    .get(t)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("text not precomputed: {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        m.select_rows(&idx)
    }

    fn embed_clip(&self, store: &FrameStore, clip: &VideoClip) -> Result<EmbeddingMatrix> {
        let first = clip
            .frame_paths
            .first()
            .ok_or_else(|| Error::Precondition(format!("clip {} has no frames", clip.clip_id)))?;
        let rel_dir = first.parent().unwrap_or(Path::new(""));
        let m = read_vdem(self.dir.join(rel_dir).with_extension("vdem"))?;
        let abs_dir = store.root().join(rel_dir);
        let mut names: Vec<String> = fs::read_dir(&abs_dir)
            .map_err(|e| Error::io(&abs_dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.starts_with("frame_"))
            .collect();
        names.sort();
        let row_of: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let idx = clip
            .frame_paths
            .iter()
            .map(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                row_of
                    .get(name)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("no embedding row for {}", p.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        m.select_rows(&idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vdem_header_layout_is_exact() {
        let m = EmbeddingMatrix::new(1, 2, vec![1.0, 0.0]).unwrap();
        let bytes = m.to_vdem_bytes();
        assert_eq!(&bytes[..4], b"VDEM");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &[2, 0, 0, 0]);
        assert_eq!(bytes[16], 1);
        assert_eq!(&bytes[17..21], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 17 + 8);
    }

    #[test]
    fn vdem_rejects_corruption() {
        let m = EmbeddingMatrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let good = m.to_vdem_bytes();
        assert_eq!(EmbeddingMatrix::from_vdem_bytes(&good).unwrap(), m);
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(EmbeddingMatrix::from_vdem_bytes(&bad).is_err());
        assert!(EmbeddingMatrix::from_vdem_bytes(&good[..good.len() - 1]).is_err());
        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(EmbeddingMatrix::from_vdem_bytes(&v2).is_err());
        let mut lying = EmbeddingMatrix::new(1, 2, vec![3.0, 0.0]).unwrap().to_vdem_bytes();
        lying[16] = 1;
        assert!(EmbeddingMatrix::from_vdem_bytes(&lying).is_err());
    }

    #[test]
    fn scaled_rows_are_flagged_unnormalized() {
        let m = EmbeddingMatrix::from_rows(&[vec![3.0, 4.0], vec![0.0, 2.0]]).unwrap();
        assert!(!m.is_normalized());
        let n = m.normalized();
        assert!(n.is_normalized());
        assert!((n.row(0)[0] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn mock_text_marker_is_basis_row() {
        let e = MockEmbedder::new(8);
        let m = e
            .embed_texts(&["A photo of a person, stage 3 marker".into(), "stage 0 marker".into()])
            .unwrap();
        assert_eq!(m.row(0), &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.row(1)[0], 1.0);
        assert!(m.is_normalized());
    }

    #[test]
    fn mock_is_deterministic_on_identical_images() {
        let e = MockEmbedder::default();
        let img = image::RgbImage::from_fn(4, 4, |x, y| image::Rgb([80, (x * 10) as u8, (y * 7) as u8]));
        let m = e.embed_images(&[img.clone(), img]).unwrap();
        assert_eq!(m.row(0), m.row(1));
        assert!(m.is_normalized());
        assert!(e.embed_images(&[]).is_err());
        assert!(e.embed_texts(&[]).is_err());
    }

    #[test]
    fn precomputed_selects_rows_by_frame_name() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("data");
        let emb = dir.path().join("emb");
        let clip_dir = root.join("act").join("c0");
        fs::create_dir_all(&clip_dir).unwrap();
        for i in 0..4 {
            fs::write(clip_dir.join(format!("frame_{i:06}.png")), b"").unwrap();
        }
        let rows: Vec<Vec<f32>> = (0..4).map(|i| {
            let mut v = vec![0.0; 4];
            v[i] = 1.0;
            v
        }).collect();
        write_vdem(emb.join("act").join("c0.vdem"), &EmbeddingMatrix::from_rows(&rows).unwrap()).unwrap();
        fs::write(emb.join("texts.txt"), "hello\nworld\n").unwrap();
        write_vdem(emb.join("texts.vdem"), &EmbeddingMatrix::from_rows(&rows[..2]).unwrap()).unwrap();

        let clip = VideoClip {
            clip_id: "c0".into(),
            frame_paths: vec!["act/c0/frame_000001.png".into(), "act/c0/frame_000003.png".into()],
            native_fps: 4.0,
            sampled_fps: 2.0,
            duration_s: 1.0,
        };
        let p = PrecomputedEmbedder::open(&emb).unwrap();
        let m = p.embed_clip(&FrameStore::new(&root), &clip).unwrap();
        assert_eq!(m.row(0), rows[1].as_slice());
        assert_eq!(m.row(1), rows[3].as_slice());
        let t = p.embed_texts(&["world".into()]).unwrap();
        assert_eq!(t.row(0), rows[1].as_slice());
        assert!(p.embed_texts(&["missing".into()]).is_err());
    }
}
