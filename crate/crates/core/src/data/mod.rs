//! On-disk formats, dataset loading, synthetic data and batching.

pub mod bank;
pub mod synth;
pub mod text;

use std::path::Path;

pub use bank::{load_feature_bank, write_feature_bank, FeatureBank};
pub use synth::{generate, synth_dataset, Manifest, SynthData, SynthSpec, CAPTIONS_PER_IMAGE};
pub use text::{load_captions, tokenize, CaptionRecord, EmbeddingTable, Vocab, EMBED_DIM, UNKNOWN_ID};

use crate::autograd::{RngStream, Tensor};
use crate::error::{Error, Result};

pub const MSV_FILE: &str = "msv.bank";
pub const ROI_FILE: &str = "roi.bank";
pub const CAPTIONS_FILE: &str = "captions.txt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const EMBEDDINGS_FILE: &str = "embeddings.bank";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Feature banks, captions and word vectors for one dataset directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub msv: FeatureBank,
    pub roi: FeatureBank,
    pub captions: Vec<CaptionRecord>,
    pub vocab: Vocab,
    pub table: EmbeddingTable,
    /// Caption indices per image, in file order.
    pub by_image: Vec<Vec<usize>>,
    pub unknown_tokens: usize,
}

impl Dataset {
    pub fn new(
        msv: FeatureBank,
        roi: FeatureBank,
        captions: Vec<CaptionRecord>,
        vocab: Vocab,
        table: EmbeddingTable,
    ) -> Result<Self> {
        if msv.n_samples() != roi.n_samples() {
            return Err(Error::Invalid(format!(
                "multiscale bank has {} samples but region bank has {}",
                msv.n_samples(),
                roi.n_samples()
            )));
        }
        if table.vocab_size() < vocab.len() {
            return Err(Error::Invalid("embedding table is smaller than the vocabulary".into()));
        }
        let mut by_image = vec![Vec::new(); msv.n_samples()];
        for (i, c) in captions.iter().enumerate() {
            let slot = by_image
                .get_mut(c.image_index)
                .ok_or_else(|| Error::Invalid(format!("caption {i} refers to missing image {}", c.image_index)))?;
            slot.push(i);
        }
        if let Some(img) = by_image.iter().position(Vec::is_empty) {
            return Err(Error::Invalid(format!("image {img} has no caption")));
        }
        Ok(Self { msv, roi, captions, vocab, table, by_image, unknown_tokens: 0 })
    }

    pub fn from_synth(data: SynthData) -> Result<Self> {
        Self::new(data.msv, data.roi, data.captions, data.vocab, data.table)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let msv = load_feature_bank(&dir.join(MSV_FILE))?;
        let roi = load_feature_bank(&dir.join(ROI_FILE))?;
        let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
        let table = EmbeddingTable::load(&dir.join(EMBEDDINGS_FILE))?;
        let loaded = load_captions(&dir.join(CAPTIONS_FILE), &vocab, msv.n_samples())?;
        let mut ds = Self::new(msv, roi, loaded.records, vocab, table)?;
        ds.unknown_tokens = loaded.unknown_tokens;
        Ok(ds)
    }

    pub fn n_images(&self) -> usize {
        self.msv.n_samples()
    }

    pub fn all_images(&self) -> Vec<usize> {
        (0..self.n_images()).collect()
    }

    /// Multiscale and region tensors of one image.
    pub fn image(&self, i: usize) -> Result<(Tensor, Tensor)> {
        Ok((self.msv.sample(i)?, self.roi.sample(i)?))
    }

    /// Captions whose image lies in `images`, in caption-file order.
    pub fn captions_of(&self, images: &[usize]) -> Vec<usize> {
        let mut idx: Vec<usize> = images.iter().flat_map(|&i| self.by_image[i].iter().copied()).collect();
        idx.sort_unstable();
        idx
    }

    /// Assembles a batch over `images`, choosing one caption per image from
    /// a stream keyed by `(seed, epoch, image)`.
    pub fn batch(&self, images: &[usize], seed: u64, epoch: usize) -> Result<Batch> {
        let mut msv = Vec::with_capacity(images.len());
        let mut roi = Vec::with_capacity(images.len());
        let mut captions = Vec::with_capacity(images.len());
        for &i in images {
            let (m, r) = self.image(i)?;
            msv.push(m);
            roi.push(r);
            let choices = &self.by_image[i];
            let mut rng = RngStream::labeled(seed, &format!("caption-pick/{epoch}/{i}"));
            let pick = choices[rng.below(choices.len())];
            captions.push(self.captions[pick].token_ids.clone());
        }
        Ok(Batch { msv, roi, captions, image_ids: images.to_vec() })
    }
}

/// One mini-batch; all four fields are aligned by position.
#[derive(Clone, Debug)]
pub struct Batch {
    pub msv: Vec<Tensor>,
    pub roi: Vec<Tensor>,
    pub captions: Vec<Vec<usize>>,
    pub image_ids: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchMode {
    /// Shuffled by `(seed, epoch)`; a trailing partial batch is dropped.
    Train,
    /// Split order; the trailing partial batch is kept.
    Eval,
}

/// Splits `split` into ordered batches of sample indices.
pub fn make_batches(split: &[usize], batch_size: usize, seed: u64, epoch: usize, mode: BatchMode) -> Result<Vec<Vec<usize>>> {
    if split.is_empty() {
        return Err(Error::Invalid("cannot batch an empty split".into()));
    }
    if batch_size == 0 || (mode == BatchMode::Train && batch_size < 2) {
        return Err(Error::Invalid(format!("batch size {batch_size} too small")));
    }
    let mut order = split.to_vec();
    if mode == BatchMode::Train {
        RngStream::labeled(seed, &format!("shuffle/{epoch}")).shuffle(&mut order);
    }
    let batches = order
        .chunks(batch_size)
        .filter(|c| mode == BatchMode::Eval || c.len() == batch_size)
        .map(<[usize]>::to_vec)
        .collect();
    Ok(batches)
}

/// Reads a file holding one image index per line.
pub fn load_index_file(path: &Path, n_images: usize) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: n + 1, msg };
        let idx: usize = line.parse().map_err(|_| err(format!("bad image index `{line}`")))?;
        if idx >= n_images {
            return Err(err(format!("image index {idx} out of range (n_images = {n_images})")));
        }
        out.push(idx);
    }
    Ok(out)
}
