//! The VDEM embedding interchange format and the precomputed-embedding layout
//! the Python sidecar writes.
//!
//! ```bash
//! cargo run --example vdem_roundtrip
//! ```

use viddiff::dataset::FrameStore;
use viddiff::providers::{read_vdem, write_vdem, Embedder, EmbeddingMatrix, MockEmbedder, PrecomputedEmbedder};
use viddiff::synthetic::{generate, SyntheticConfig};

fn main() -> viddiff::error::Result<()> {
    let m = EmbeddingMatrix::from_rows(&[vec![3.0, 4.0], vec![1.0, 0.0]])?.normalized();
    let bytes = m.to_vdem_bytes();
    println!("2x2 normalized matrix -> {} bytes, header {:02x?}", bytes.len(), &bytes[..17]);
    assert_eq!(EmbeddingMatrix::from_vdem_bytes(&bytes)?, m);

    // Lay out what the sidecar would write for one clip and a text list,
    // here filled from the mock embedder.
    let base = std::env::temp_dir().join("viddiff-vdem");
    let _ = std::fs::remove_dir_all(&base);
    let data = base.join("data");
    let manifest = generate(&data, &SyntheticConfig { n_actions: 1, pairs_per_action: 1, ..SyntheticConfig::default() })?;
    let store = FrameStore::new(&data);
    let mock = MockEmbedder::default();
    let emb = base.join("embeddings");
    let clip = &manifest.pairs[0].video_a;
    let clip_dir = clip.frame_paths[0].parent().expect("clip directory");
    write_vdem(emb.join(clip_dir).with_extension("vdem"), &mock.embed_clip(&store, clip)?)?;
    let texts = vec!["A photo of stage 0 marker, view 0".to_string(), "A photo of stage 1 marker, view 0".to_string()];
    let txt = emb.join("texts.txt");
    std::fs::write(&txt, texts.join("\n")).map_err(|e| viddiff::Error::io(&txt, e))?;
    write_vdem(emb.join("texts.vdem"), &mock.embed_texts(&texts)?)?;

    let pre = PrecomputedEmbedder::open(&emb)?;
    let frames = pre.embed_clip(&store, clip)?;
    println!("{}: {} rows x {} dims from {}", clip.clip_id, frames.rows(), frames.dims(), emb.display());
    println!("texts: {} rows, round trip equal: {}", pre.embed_texts(&texts)?.rows(), read_vdem(emb.join("texts.vdem"))? == mock.embed_texts(&texts)?);
    Ok(())
}
