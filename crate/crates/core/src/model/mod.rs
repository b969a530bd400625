//! The full image/text embedding network.

pub mod attention;
pub mod layers;
pub mod roam;
pub mod text_encoder;
pub mod visual;

use crate::autograd::{ParamStore, Tape, Tensor, Var};
use crate::config::{DtgaInputs, HeadKind, TrainConfig};
use crate::data::{Batch, EmbeddingTable};
use crate::error::{Error, Result};

pub use attention::{dtga, gated_self_attention, DtgaOutput, DtgaTrace};
pub use roam::{ifa_fuse, iga_guide, pool, IfaOutput, IgaOutput};
pub use text_encoder::{bigru, embed_tokens, HiddenStates};
pub use visual::{msv_project, roi_project};

/// Shape and variant choices that fix the parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d: usize,
    pub d_in: usize,
    pub d_r: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub dtga_inputs: DtgaInputs,
    pub no_dtga: bool,
    pub no_ifa: bool,
    pub no_iga: bool,
    pub ifa_head: HeadKind,
    pub iga_head: HeadKind,
}

impl ModelConfig {
    pub fn from_train(cfg: &TrainConfig, d_in: usize, d_r: usize, embed_dim: usize) -> Self {
        Self {
            d: cfg.d,
            d_in,
            d_r,
            embed_dim,
            heads: cfg.heads,
            dtga_inputs: cfg.dtga_inputs,
            no_dtga: cfg.no_dtga,
            no_ifa: cfg.no_ifa,
            no_iga: cfg.no_iga,
            ifa_head: cfg.ifa_head,
            iga_head: cfg.iga_head,
        }
    }

    /// Registers every parameter this configuration uses.
    pub fn register(&self, store: &mut ParamStore) -> Result<()> {
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::Invalid(format!("d = {} must be a positive multiple of heads = {}", self.d, self.heads)));
        }
        text_encoder::register_bigru(store, self.embed_dim, self.d)?;
        if !self.no_dtga {
            attention::register_dtga(store, self.d, self.heads)?;
        }
        visual::register_visual(store, self.d_in, self.d_r, self.d)?;
        if !self.no_ifa {
            roam::register_ifa(store, self.d, self.ifa_head)?;
        }
        if !self.no_iga {
            roam::register_iga(store, self.d, self.iga_head)?;
        }
        Ok(())
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut store = ParamStore::new(seed);
        self.register(&mut store)?;
        Ok(store)
    }
}

/// Read-only view of a configuration and its parameters.
#[derive(Clone, Copy)]
pub struct Net<'a> {
    pub cfg: &'a ModelConfig,
    pub params: &'a ParamStore,
}

/// Per-image nodes; `v_*` are pooled `1 x d` rows.
#[derive(Clone, Copy, Debug)]
pub struct ImageNodes {
    pub f_m: Var,
    pub f_r: Var,
    pub f_mr: Var,
    pub v_m: Var,
    pub v_r: Var,
    pub v_mr: Var,
    /// Region projection feeding the text gate; absent when IGA is ablated.
    pub guide: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct TextNodes {
    pub hidden: HiddenStates,
    pub f_g: Var,
    pub t_g: Var,
    pub guide: Option<Var>,
}

pub fn encode_image(tape: &mut Tape, net: Net<'_>, msv: &Tensor, roi: &Tensor) -> Result<ImageNodes> {
    let m = tape.constant(msv.clone());
    let r = tape.constant(roi.clone());
    let f_m = msv_project(tape, net.params, m)?;
    let f_r = roi_project(tape, net.params, r)?;
    let f_mr = if net.cfg.no_ifa {
        roam::concat_visual(tape, f_m, f_r)?
    } else {
        ifa_fuse(tape, net.params, f_m, f_r, net.cfg.ifa_head)?.f_mr
    };
    let v_m = pool(tape, f_m)?;
    let v_r = pool(tape, f_r)?;
    let v_mr = pool(tape, f_mr)?;
    let guide = if net.cfg.no_iga { None } else { Some(roam::iga_region(tape, net.params, v_r)?) };
    Ok(ImageNodes { f_m, f_r, f_mr, v_m, v_r, v_mr, guide })
}

/// Encodes an `N_c x embed_dim` word-vector matrix.
pub fn encode_text(tape: &mut Tape, net: Net<'_>, words: &Tensor) -> Result<TextNodes> {
    let e = tape.constant(words.clone());
    let hidden = bigru(tape, net.params, e)?;
    let f_g = if net.cfg.no_dtga {
        attention::average_states(tape, hidden)?
    } else {
        dtga(tape, net.params, hidden, net.cfg.dtga_inputs, net.cfg.heads)?.f_g
    };
    let t_g = pool(tape, f_g)?;
    let guide = if net.cfg.no_iga { None } else { Some(roam::iga_text(tape, net.params, t_g)?) };
    Ok(TextNodes { hidden, f_g, t_g, guide })
}

/// Region-guided text embedding `T_RG` for one image/text pair.
pub fn pair_embedding(tape: &mut Tape, net: Net<'_>, image: &ImageNodes, text: &TextNodes) -> Result<Var> {
    match (image.guide, text.guide) {
        (Some(r), Some(g)) => Ok(roam::iga_pair(tape, net.params, r, g, net.cfg.iga_head)?.t_rg),
        _ => Ok(text.t_g),
    }
}

#[derive(Clone, Debug)]
pub struct BatchLoss {
    pub total: Var,
    pub final_loss: Var,
    pub global_loss: Var,
    /// `B x B`; row `i` is image `i`, column `j` is text `j`.
    pub s_final: Var,
    pub s_global: Var,
}

fn square(tape: &mut Tape, cells: Vec<Vec<Var>>) -> Result<Var> {
    let rows = cells.iter().map(|row| tape.concat_cols(row)).collect::<Result<Vec<_>>>()?;
    tape.concat_rows(&rows)
}

/// Builds both similarity matrices over the batch and the weighted objective.
pub fn batch_loss(
    tape: &mut Tape,
    net: Net<'_>,
    table: &EmbeddingTable,
    batch: &Batch,
    alpha: f64,
    lambda_g: f64,
) -> Result<BatchLoss> {
    let b = batch.len();
    if b < 2 {
        return Err(Error::Invalid(format!("batch of {b} has no negatives")));
    }
    let images = (0..b)
        .map(|i| encode_image(tape, net, &batch.msv[i], &batch.roi[i]))
        .collect::<Result<Vec<_>>>()?;
    let texts = batch
        .captions
        .iter()
        .map(|ids| encode_text(tape, net, &embed_tokens(ids, table)?))
        .collect::<Result<Vec<_>>>()?;

    let mut fin = Vec::with_capacity(b);
    let mut glob = Vec::with_capacity(b);
    for img in &images {
        let mut frow = Vec::with_capacity(b);
        let mut grow = Vec::with_capacity(b);
        for txt in &texts {
            let t_rg = pair_embedding(tape, net, img, txt)?;
            frow.push(tape.cosine(img.v_mr, t_rg)?);
            grow.push(tape.cosine(img.v_m, txt.t_g)?);
        }
        fin.push(frow);
        glob.push(grow);
    }
    let s_final = square(tape, fin)?;
    let s_global = square(tape, glob)?;
    let final_loss = tape.triplet_loss(s_final, alpha)?;
    let global_loss = tape.triplet_loss(s_global, alpha)?;
    let weighted = tape.scale(global_loss, lambda_g);
    let total = tape.add(final_loss, weighted)?;
    Ok(BatchLoss { total, final_loss, global_loss, s_final, s_global })
}

/// Embeddings of one image as plain values, detached from any tape.
#[derive(Clone, Debug)]
pub struct ImageVectors {
    pub v_m: Tensor,
    pub v_r: Tensor,
    pub v_mr: Tensor,
    pub guide: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct TextVectors {
    pub t_g: Tensor,
    pub guide: Option<Tensor>,
}

pub fn image_vectors(net: Net<'_>, msv: &Tensor, roi: &Tensor) -> Result<ImageVectors> {
    let mut tape = Tape::new();
    let n = encode_image(&mut tape, net, msv, roi)?;
    Ok(ImageVectors {
        v_m: tape.value(n.v_m).clone(),
        v_r: tape.value(n.v_r).clone(),
        v_mr: tape.value(n.v_mr).clone(),
        guide: n.guide.map(|g| tape.value(g).clone()),
    })
}

pub fn text_vectors(net: Net<'_>, words: &Tensor) -> Result<TextVectors> {
    let mut tape = Tape::new();
    let n = encode_text(&mut tape, net, words)?;
    Ok(TextVectors { t_g: tape.value(n.t_g).clone(), guide: n.guide.map(|g| tape.value(g).clone()) })
}

/// `T_RG` from cached per-image and per-text projections.
pub fn pair_vector(net: Net<'_>, image: &ImageVectors, text: &TextVectors) -> Result<Tensor> {
    match (&image.guide, &text.guide) {
        (Some(r), Some(g)) => {
            let mut tape = Tape::new();
            let r = tape.constant(r.clone());
            let g = tape.constant(g.clone());
            let out = roam::iga_pair(&mut tape, net.params, r, g, net.cfg.iga_head)?;
            Ok(tape.value(out.t_rg).clone())
        }
        _ => Ok(text.t_g.clone()),
    }
}

/// Configuration plus parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = config.init_params(seed)?;
        Ok(Self { config, params })
    }

    pub fn net(&self) -> Net<'_> {
        Net { cfg: &self.config, params: &self.params }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, Dataset, SynthSpec};

    fn micro() -> (Dataset, ModelConfig) {
        let spec = SynthSpec { n_images: 4, n_clusters: 2, n_m: 2, n_r: 3, d_in: 6, d_r: 4, vocab_size: 40, ..Default::default() };
        let ds = Dataset::from_synth(generate(&spec).unwrap()).unwrap();
        let cfg = TrainConfig { d: 8, ..Default::default() };
        let mc = ModelConfig::from_train(&cfg, 6, 4, ds.table.dim());
        (ds, mc)
    }

    #[test]
    fn batch_loss_is_finite_and_nonnegative() {
        let (ds, mc) = micro();
        let model = Model::new(mc, 1).unwrap();
        let batch = ds.batch(&[0, 1, 2], 1, 0).unwrap();
        let mut tape = Tape::new();
        let l = batch_loss(&mut tape, model.net(), &ds.table, &batch, 0.2, 10.0).unwrap();
        let total = tape.value(l.total).item();
        assert!(total.is_finite() && total >= 0.0);
        assert_eq!(tape.value(l.s_final).shape(), &[3, 3]);
    }

    #[test]
    fn cached_pairs_match_tape() {
        let (ds, mc) = micro();
        let model = Model::new(mc, 1).unwrap();
        let net = model.net();
        let (m, r) = ds.image(1).unwrap();
        let words = ds.table.embed(&ds.captions[3].token_ids).unwrap();
        let mut tape = Tape::new();
        let img = encode_image(&mut tape, net, &m, &r).unwrap();
        let txt = encode_text(&mut tape, net, &words).unwrap();
        let t = pair_embedding(&mut tape, net, &img, &txt).unwrap();
        let iv = image_vectors(net, &m, &r).unwrap();
        let tv = text_vectors(net, &words).unwrap();
        assert_eq!(&pair_vector(net, &iv, &tv).unwrap(), tape.value(t));
    }

    #[test]
    fn ablations_drop_parameters() {
        let (_, mc) = micro();
        let full = mc.init_params(1).unwrap();
        for (flag, prefix) in [("no_dtga", "text.dtga"), ("no_ifa", "roam.ifa"), ("no_iga", "roam.iga")] {
            let mut c = mc.clone();
            match flag {
                "no_dtga" => c.no_dtga = true,
                "no_ifa" => c.no_ifa = true,
                _ => c.no_iga = true,
            }
            let p = c.init_params(1).unwrap();
            assert!(full.names().iter().any(|n| n.starts_with(prefix)));
            assert!(!p.names().iter().any(|n| n.starts_with(prefix)));
        }
    }
}
