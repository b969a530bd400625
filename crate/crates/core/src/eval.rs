//! Similarity matrices, recall metrics, subset evaluation and embedding distances.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::Serialize;

use crate::autograd::{Tensor, PRNG_NAME};
use crate::config::TrainConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{image_vectors, pair_vector, text_vectors, ImageVectors, Net, TextVectors};
use crate::objective::{cosine, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

pub const REPORT_VERSION: u32 = 1;
pub const KS: [usize; 3] = [1, 5, 10];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimMode {
    /// `cos(V_MR_i, T_RG(i, j))`
    Final,
    /// `cos(V_M_i, T_G_j)`
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    ImageToText,
    TextToImage,
}

/// Scores of every image (row) against every text (column).
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    n_images: usize,
    n_texts: usize,
    scores: Vec<f64>,
    /// Row index of the image each text describes.
    text_image: Vec<usize>,
}

impl SimilarityMatrix {
    pub fn new(n_images: usize, n_texts: usize, scores: Vec<f64>, text_image: Vec<usize>) -> Result<Self> {
        if scores.len() != n_images * n_texts || text_image.len() != n_texts {
            return Err(Error::dim("similarity_matrix", format!("{n_images}x{n_texts} with {} scores", scores.len())));
        }
        let mut covered = vec![false; n_images];
        for (j, &i) in text_image.iter().enumerate() {
            *covered.get_mut(i).ok_or_else(|| Error::Invalid(format!("text {j} maps to missing image {i}")))? = true;
        }
        if let Some(i) = covered.iter().position(|c| !c) {
            return Err(Error::Invalid(format!("image {i} has no text")));
        }
        Ok(Self { n_images, n_texts, scores, text_image })
    }

    pub fn n_images(&self) -> usize {
        self.n_images
    }

    pub fn n_texts(&self) -> usize {
        self.n_texts
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.n_texts + j]
    }

    pub fn text_image(&self) -> &[usize] {
        &self.text_image
    }

    /// Keeps only the rows in `rows` and the texts describing them.
    pub fn restrict(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Invalid("empty subset".into()));
        }
        let mut new_row = vec![None; self.n_images];
        for (k, &r) in rows.iter().enumerate() {
            let slot = new_row.get_mut(r).ok_or_else(|| Error::Invalid(format!("subset row {r} out of range")))?;
            if slot.replace(k).is_some() {
                return Err(Error::Invalid(format!("subset repeats row {r}")));
            }
        }
        let cols: Vec<usize> = (0..self.n_texts).filter(|&j| new_row[self.text_image[j]].is_some()).collect();
        let scores = rows.iter().flat_map(|&r| cols.iter().map(move |&j| self.get(r, j))).collect();
        let text_image = cols.iter().map(|&j| new_row[self.text_image[j]].unwrap()).collect();
        Self::new(rows.len(), cols.len(), scores, text_image)
    }
}

/// Candidate indices by descending score; equal scores keep ascending index.
pub fn rank_candidates(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx
}

/// Whether query `q` finds a ground-truth match in its top `k` candidates.
pub fn query_hit(s: &SimilarityMatrix, q: usize, k: usize, dir: Direction) -> bool {
    match dir {
        Direction::ImageToText => {
            let row: Vec<f64> = (0..s.n_texts).map(|j| s.get(q, j)).collect();
            rank_candidates(&row).iter().take(k).any(|&j| s.text_image[j] == q)
        }
        Direction::TextToImage => {
            let col: Vec<f64> = (0..s.n_images).map(|i| s.get(i, q)).collect();
            rank_candidates(&col).iter().take(k).any(|&i| i == s.text_image[q])
        }
    }
}

/// Percentage of queries with a ground-truth match in the top `k` (clamped to the pool size).
pub fn recall_at_k(s: &SimilarityMatrix, k: usize, dir: Direction) -> f64 {
    let k = k.max(1);
    let queries = match dir {
        Direction::ImageToText => s.n_images,
        Direction::TextToImage => s.n_texts,
    };
    let hits = (0..queries).filter(|&q| query_hit(s, q, k, dir)).count();
    100.0 * hits as f64 / queries as f64
}

pub fn mean_recall(r: [f64; 6]) -> f64 {
    r.iter().sum::<f64>() / 6.0
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Recalls {
    pub r1_i2t: f64,
    pub r5_i2t: f64,
    pub r10_i2t: f64,
    pub r1_t2i: f64,
    pub r5_t2i: f64,
    pub r10_t2i: f64,
    pub mr: f64,
}

impl Recalls {
    pub fn of(s: &SimilarityMatrix) -> Self {
        let [a, b, c] = KS.map(|k| recall_at_k(s, k, Direction::ImageToText));
        let [d, e, f] = KS.map(|k| recall_at_k(s, k, Direction::TextToImage));
        Self { r1_i2t: a, r5_i2t: b, r10_i2t: c, r1_t2i: d, r5_t2i: e, r10_t2i: f, mr: mean_recall([a, b, c, d, e, f]) }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.r1_i2t, self.r5_i2t, self.r10_i2t, self.r1_t2i, self.r5_t2i, self.r10_t2i]
    }
}

/// Embeddings of an evaluation split: one entry per image and per caption.
#[derive(Clone, Debug)]
pub struct SplitEmbeddings {
    /// Dataset image index of each row.
    pub image_ids: Vec<usize>,
    pub images: Vec<ImageVectors>,
    pub texts: Vec<TextVectors>,
    /// Row index (into `images`) described by each text.
    pub text_image: Vec<usize>,
}

fn par_map<T: Send, F>(n: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if threads <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

pub fn embed_split(net: Net<'_>, ds: &Dataset, images: &[usize], threads: usize) -> Result<SplitEmbeddings> {
    if images.is_empty() {
        return Err(Error::Invalid("empty evaluation split".into()));
    }
    let mut row_of = vec![None; ds.n_images()];
    for (k, &i) in images.iter().enumerate() {
        let slot = row_of.get_mut(i).ok_or_else(|| Error::Invalid(format!("image {i} out of range")))?;
        if slot.replace(k).is_some() {
            return Err(Error::Invalid(format!("split repeats image {i}")));
        }
    }
    let captions = ds.captions_of(images);
    let image_vecs = par_map(images.len(), threads, |k| {
        let (m, r) = ds.image(images[k])?;
        image_vectors(net, &m, &r)
    })?;
    let text_vecs = par_map(captions.len(), threads, |k| {
        text_vectors(net, &ds.table.embed(&ds.captions[captions[k]].token_ids)?)
    })?;
    let text_image = captions.iter().map(|&c| row_of[ds.captions[c].image_index].unwrap()).collect();
    Ok(SplitEmbeddings { image_ids: images.to_vec(), images: image_vecs, texts: text_vecs, text_image })
}

pub fn similarity_matrix(net: Net<'_>, emb: &SplitEmbeddings, mode: SimMode, threads: usize) -> Result<SimilarityMatrix> {
    let n_t = emb.texts.len();
    let rows = par_map(emb.images.len(), threads, |i| {
        let img = &emb.images[i];
        (0..n_t)
            .map(|j| {
                let txt = &emb.texts[j];
                let s = match mode {
                    SimMode::Final => cosine(img.v_mr.values(), pair_vector(net, img, txt)?.values()),
                    SimMode::Global => cosine(img.v_m.values(), txt.t_g.values()),
                };
                s.map_err(|e| Error::Evaluation(format!("image {} / text {j}: {e}", emb.image_ids[i])))
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    SimilarityMatrix::new(emb.images.len(), n_t, rows.concat(), emb.text_image.clone())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistanceStats {
    pub mean: f64,
    pub median: f64,
    pub stddev: f64,
}

impl DistanceStats {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, median: 0.0, stddev: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 { sorted[mid] } else { 0.5 * (sorted[mid - 1] + sorted[mid]) };
        Self { mean, median, stddev: var.sqrt() }
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distances over all positive (image, caption) pairs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistanceReport {
    pub pairs: usize,
    pub v_m_t_g: DistanceStats,
    pub v_mr_t_rg: DistanceStats,
    pub v_r_v_m: DistanceStats,
    pub v_r_v_mr: DistanceStats,
    pub v_r_t_g: DistanceStats,
    pub v_r_t_rg: DistanceStats,
}

pub fn embedding_distances(net: Net<'_>, emb: &SplitEmbeddings) -> Result<DistanceReport> {
    let mut cols: [Vec<f64>; 6] = Default::default();
    for (j, txt) in emb.texts.iter().enumerate() {
        let img = &emb.images[emb.text_image[j]];
        let t_rg: Tensor = pair_vector(net, img, txt)?;
        let (vm, vr, vmr, tg, trg) = (img.v_m.values(), img.v_r.values(), img.v_mr.values(), txt.t_g.values(), t_rg.values());
        for (slot, d) in cols.iter_mut().zip([
            euclidean(vm, tg),
            euclidean(vmr, trg),
            euclidean(vr, vm),
            euclidean(vr, vmr),
            euclidean(vr, tg),
            euclidean(vr, trg),
        ]) {
            slot.push(d);
        }
    }
    let [a, b, c, d, e, f] = cols.map(|v| DistanceStats::of(&v));
    Ok(DistanceReport { pairs: emb.texts.len(), v_m_t_g: a, v_mr_t_rg: b, v_r_v_m: c, v_r_v_mr: d, v_r_t_g: e, v_r_t_rg: f })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubsetBlock {
    pub name: String,
    pub n_images: usize,
    pub n_texts: usize,
    #[serde(flatten)]
    pub recalls: Recalls,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdamConstants {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievalReport {
    pub version: u32,
    pub n_images: usize,
    pub n_texts: usize,
    #[serde(flatten)]
    pub recalls: Recalls,
    /// Same metrics on the pre-fusion `V_M` / `T_G` similarity.
    pub global: Recalls,
    pub config_hash: String,
    pub seed: u64,
    pub prng: String,
    pub adam: AdamConstants,
    pub subsets: Vec<SubsetBlock>,
    pub distances: Option<DistanceReport>,
}

impl RetrievalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Fixed-width table with recalls rounded to two decimals.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("config {}  seed {}\n", self.config_hash, self.seed));
        out.push_str(&format!(
            "{:<12} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
            "split", "R@1i2t", "R@5i2t", "R@10i2t", "R@1t2i", "R@5t2i", "R@10t2i", "mR"
        ));
        let line = |name: &str, r: &Recalls| {
            let [a, b, c, d, e, f] = r.as_array();
            format!("{name:<12} {a:>7.2} {b:>7.2} {c:>7.2} {d:>7.2} {e:>7.2} {f:>7.2} {:>7.2}\n", r.mr)
        };
        out.push_str(&line("all", &self.recalls));
        out.push_str(&line("global", &self.global));
        for s in &self.subsets {
            out.push_str(&line(&s.name, &s.recalls));
        }
        out
    }
}

/// A named list of dataset image indices evaluated on its own.
#[derive(Clone, Debug)]
pub struct Subset {
    pub name: String,
    pub images: Vec<usize>,
}

/// Restricts `s` (whose rows are the dataset images `image_ids`) to `subset`.
pub fn subset_eval(s: &SimilarityMatrix, image_ids: &[usize], subset: &[usize]) -> Result<(Recalls, SimilarityMatrix)> {
    let rows = subset
        .iter()
        .map(|img| {
            image_ids
                .iter()
                .position(|i| i == img)
                .ok_or_else(|| Error::Invalid(format!("subset image {img} is not in the evaluated split")))
        })
        .collect::<Result<Vec<_>>>()?;
    let sub = s.restrict(&rows)?;
    Ok((Recalls::of(&sub), sub))
}

pub struct EvalOptions<'a> {
    pub subsets: &'a [Subset],
    pub distances: bool,
    pub threads: usize,
}

pub fn evaluate(net: Net<'_>, config: &TrainConfig, ds: &Dataset, images: &[usize], opts: &EvalOptions<'_>) -> Result<RetrievalReport> {
    let emb = embed_split(net, ds, images, opts.threads)?;
    let s = similarity_matrix(net, &emb, SimMode::Final, opts.threads)?;
    let g = similarity_matrix(net, &emb, SimMode::Global, opts.threads)?;
    let subsets = opts
        .subsets
        .iter()
        .map(|sub| {
            let (recalls, m) = subset_eval(&s, &emb.image_ids, &sub.images)?;
            Ok(SubsetBlock { name: sub.name.clone(), n_images: m.n_images(), n_texts: m.n_texts(), recalls })
        })
        .collect::<Result<Vec<_>>>()?;
    let distances = if opts.distances { Some(embedding_distances(net, &emb)?) } else { None };
    Ok(RetrievalReport {
        version: REPORT_VERSION,
        n_images: s.n_images(),
        n_texts: s.n_texts(),
        recalls: Recalls::of(&s),
        global: Recalls::of(&g),
        config_hash: config.config_hash(),
        seed: config.seed,
        prng: PRNG_NAME.to_string(),
        adam: AdamConstants { beta1: ADAM_BETA1, beta2: ADAM_BETA2, eps: ADAM_EPS },
        subsets,
        distances,
    })
}
