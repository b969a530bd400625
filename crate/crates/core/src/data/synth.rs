//! Synthetic clustered image/caption datasets.
//!
//! Every image draws a latent code from its cluster. Its multiscale and
//! region features are noisy random projections of that code. Every image
//! owns a signature of three words from its cluster's word pool, and its
//! latent is the mean of the signature words' latents. Word vectors are
//! projections of word latents. So a caption's signature words carry the
//! image identity in the text modality. Filler words are shared by all
//! clusters and carry no signal.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::bank::FeatureBank;
use super::text::{captions_to_text, CaptionRecord, EmbeddingTable, Vocab, EMBED_DIM};
use super::{CAPTIONS_FILE, EMBEDDINGS_FILE, MANIFEST_FILE, MSV_FILE, ROI_FILE, VOCAB_FILE};
use crate::autograd::RngStream;
use crate::error::{Error, Result};

pub const CAPTIONS_PER_IMAGE: usize = 5;
const LATENT_DIM: usize = 16;
const SIGNATURE_WORDS: usize = 3;
const FILLER_WORDS: &[&str] = &["the", "a", "of", "many", "are", "near", "with", "some"];

#[derive(Clone, Debug, Serialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_images: usize,
    pub n_clusters: usize,
    pub n_m: usize,
    pub n_r: usize,
    pub d_in: usize,
    pub d_r: usize,
    pub vocab_size: usize,
    pub caption_len_min: usize,
    pub caption_len_max: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            n_images: 32,
            n_clusters: 4,
            n_m: 4,
            n_r: 36,
            d_in: 64,
            d_r: 32,
            vocab_size: 200,
            caption_len_min: 6,
            caption_len_max: 10,
        }
    }
}

impl SynthSpec {
    fn pool_size(&self) -> usize {
        (self.vocab_size.saturating_sub(1 + FILLER_WORDS.len())) / self.n_clusters.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.n_clusters < 2 {
            return bad(format!("need at least 2 clusters, got {}", self.n_clusters));
        }
        if self.n_images < self.n_clusters {
            return bad(format!("n_images = {} must be >= n_clusters = {}", self.n_images, self.n_clusters));
        }
        if self.n_m == 0 || self.n_r == 0 || self.d_in == 0 || self.d_r == 0 {
            return bad("feature extents must be positive".into());
        }
        if self.pool_size() < SIGNATURE_WORDS + 1 {
            return bad(format!(
                "vocab_size = {} too small: need at least {} words",
                self.vocab_size,
                1 + FILLER_WORDS.len() + self.n_clusters * (SIGNATURE_WORDS + 1)
            ));
        }
        let p = self.pool_size();
        let signatures = p * (p - 1) * (p - 2) / 6;
        if signatures < self.n_images.div_ceil(self.n_clusters) {
            return bad(format!("vocab_size = {} leaves too few distinct word signatures", self.vocab_size));
        }
        if self.caption_len_min < SIGNATURE_WORDS + 1 || self.caption_len_max < self.caption_len_min {
            return bad(format!(
                "caption length range {}..={} must start at >= {}",
                self.caption_len_min,
                self.caption_len_max,
                SIGNATURE_WORDS + 1
            ));
        }
        Ok(())
    }
}

/// In-memory result of [`generate`].
pub struct SynthData {
    pub msv: FeatureBank,
    pub roi: FeatureBank,
    pub captions: Vec<CaptionRecord>,
    pub vocab: Vocab,
    pub table: EmbeddingTable,
    /// Latent cluster of every image.
    pub clusters: Vec<usize>,
}

fn gaussian_matrix(rng: &mut RngStream, rows: usize, cols: usize, std: f64) -> Vec<f64> {
    (0..rows * cols).map(|_| std * rng.normal()).collect()
}

fn project(m: &[f64], rows: usize, x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    (0..rows).map(|r| m[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let k = LATENT_DIM;
    let mut rng = RngStream::labeled(spec.seed, "synth");

    let centers: Vec<Vec<f64>> = (0..spec.n_clusters).map(|_| gaussian_matrix(&mut rng, 1, k, 1.0)).collect();

    // Vocabulary: unknown, fillers, then cluster pools.
    let pool = spec.pool_size();
    let mut tokens = vec!["unk".to_string()];
    tokens.extend(FILLER_WORDS.iter().map(|s| s.to_string()));
    let first_pool_id = tokens.len();
    let mut word_latent: Vec<Option<Vec<f64>>> = vec![None; first_pool_id];
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); spec.n_clusters];
    for c in 0..spec.n_clusters {
        for w in 0..pool {
            pools[c].push(tokens.len());
            tokens.push(format!("c{c}w{w}"));
            let latent: Vec<f64> = centers[c].iter().map(|m| m + 0.6 * rng.normal()).collect();
            word_latent.push(Some(latent));
        }
    }
    // Leftover ids after even division become extra fillers.
    while tokens.len() < spec.vocab_size {
        tokens.push(format!("x{}", tokens.len()));
        word_latent.push(None);
    }
    let vocab = Vocab::from_tokens(tokens)?;

    let word_proj = gaussian_matrix(&mut rng, EMBED_DIM, k, (1.0 / k as f64).sqrt());
    let mut table = Vec::with_capacity(spec.vocab_size * EMBED_DIM);
    for latent in &word_latent {
        match latent {
            Some(l) => table.extend(project(&word_proj, EMBED_DIM, l).into_iter().map(|v| v + 0.05 * rng.normal())),
            None => table.extend((0..EMBED_DIM).map(|_| 0.5 * rng.normal())),
        }
    }
    let table = EmbeddingTable::new(spec.vocab_size, EMBED_DIM, table)?;

    let msv_proj: Vec<Vec<f64>> =
        (0..spec.n_m).map(|_| gaussian_matrix(&mut rng, spec.d_in, k, (1.0 / k as f64).sqrt())).collect();
    let roi_proj = gaussian_matrix(&mut rng, spec.d_r, k, (1.0 / k as f64).sqrt());

    let mut clusters = Vec::with_capacity(spec.n_images);
    let mut msv = Vec::with_capacity(spec.n_images * spec.n_m * spec.d_in);
    let mut roi = Vec::with_capacity(spec.n_images * spec.n_r * spec.d_r);
    let mut captions = Vec::with_capacity(spec.n_images * CAPTIONS_PER_IMAGE);
    let mut used: BTreeSet<Vec<usize>> = BTreeSet::new();

    for image in 0..spec.n_images {
        let c = image % spec.n_clusters;
        clusters.push(c);
        let signature = loop {
            let mut cand = pools[c].clone();
            rng.shuffle(&mut cand);
            cand.truncate(SIGNATURE_WORDS);
            cand.sort_unstable();
            if used.insert(cand.clone()) {
                break cand;
            }
        };
        let mut z = vec![0.0; k];
        for &w in &signature {
            for (zi, li) in z.iter_mut().zip(word_latent[w].as_ref().unwrap()) {
                *zi += li / SIGNATURE_WORDS as f64;
            }
        }
        for zi in &mut z {
            *zi += 0.1 * rng.normal();
        }

        for proj in &msv_proj {
            msv.extend(project(proj, spec.d_in, &z).into_iter().map(|v| v + 0.05 * rng.normal()));
        }
        for _ in 0..spec.n_r {
            let jitter: Vec<f64> = z.iter().map(|v| v + 0.3 * rng.normal()).collect();
            roi.extend(project(&roi_proj, spec.d_r, &jitter).into_iter().map(|v| v + 0.05 * rng.normal()));
        }

        for _ in 0..CAPTIONS_PER_IMAGE {
            let len = spec.caption_len_min + rng.below(spec.caption_len_max - spec.caption_len_min + 1);
            let mut words = signature.clone();
            words.push(pools[c][rng.below(pool)]);
            while words.len() < len {
                words.push(1 + rng.below(FILLER_WORDS.len()));
            }
            rng.shuffle(&mut words);
            captions.push(CaptionRecord { image_index: image, token_ids: words });
        }
    }

    Ok(SynthData {
        msv: FeatureBank::from_f64(spec.n_images, spec.n_m, spec.d_in, &msv)?,
        roi: FeatureBank::from_f64(spec.n_images, spec.n_r, spec.d_r, &roi)?,
        captions,
        vocab,
        table,
        clusters,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ManifestEntry {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub version: u32,
    pub generator: SynthSpec,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Generates a dataset and writes its five files plus `manifest.json` into `out`.
pub fn synth_dataset(spec: &SynthSpec, out: &Path) -> Result<Manifest> {
    let data = generate(spec)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let files: Vec<(&str, Vec<u8>)> = vec![
        (MSV_FILE, data.msv.to_bytes()),
        (ROI_FILE, data.roi.to_bytes()),
        (CAPTIONS_FILE, captions_to_text(&data.captions, &data.vocab).into_bytes()),
        (VOCAB_FILE, data.vocab.to_text().into_bytes()),
        (EMBEDDINGS_FILE, data.table.to_bank()?.to_bytes()),
    ];
    let mut entries = Vec::new();
    for (name, bytes) in &files {
        let path: PathBuf = out.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            file: name.to_string(),
            bytes: bytes.len(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
    }
    let manifest = Manifest { version: 1, generator: spec.clone(), files: entries };
    let mpath = out.join(MANIFEST_FILE);
    std::fs::write(&mpath, manifest.to_json()).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}
