//! Binary checkpoint container.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic        8 bytes  "DOVECKPT"
//! version      u32      1
//! config       u32 length, UTF-8 `key = value` text
//! d_in d_r e   3 x u32  input widths (multiscale, region, word vectors)
//! epoch        u64      epochs completed when saved
//! best_mr      f64      validation mR at that epoch
//! n_params     u32
//!   name       u32 length, UTF-8
//!   rank       u32, then rank x u32 dims
//!   values     f64 x prod(dims)
//! adam step    u64
//!   m, v       f64 x len, per parameter in the same (name) order
//! ```
//!
//! No timestamps are stored, so equal inputs give byte-identical files.

use std::path::Path;

use crate::autograd::{ParamStore, Tensor};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::objective::OptState;

pub const MAGIC: &[u8; 8] = b"DOVECKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub d_in: usize,
    pub d_r: usize,
    pub embed_dim: usize,
    pub epoch: usize,
    pub best_mr: f64,
    pub params: ParamStore,
    pub opt: OptState,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated { path: self.path.to_path_buf(), expected: self.pos + n, found: self.buf.len() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.bad("length overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.bad("string is not UTF-8"))
    }

    fn bad(&self, msg: &str) -> Error {
        Error::Parse { path: self.path.to_path_buf(), line: 0, msg: format!("{msg} at byte {}", self.pos) }
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::from_train(&self.config, self.d_in, self.d_r, self.embed_dim)
    }

    pub fn model(&self) -> Model {
        Model { config: self.model_config(), params: self.params.clone() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.config.to_config_text());
        for v in [self.d_in, self.d_r, self.embed_dim] {
            put_u32(&mut out, v);
        }
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out.extend_from_slice(&self.best_mr.to_le_bytes());
        put_u32(&mut out, self.params.len());
        for e in self.params.iter() {
            put_str(&mut out, &e.name);
            put_u32(&mut out, e.tensor.rank());
            for &d in e.tensor.shape() {
                put_u32(&mut out, d);
            }
            put_f64s(&mut out, e.tensor.values());
        }
        out.extend_from_slice(&self.opt.step.to_le_bytes());
        for e in self.params.iter() {
            let zeros = vec![0.0; e.tensor.len()];
            put_f64s(&mut out, self.opt.m.get(&e.name).unwrap_or(&zeros));
            put_f64s(&mut out, self.opt.v.get(&e.name).unwrap_or(&zeros));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0, path };
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic { path: path.to_path_buf(), expected: "DOVECKPT" });
        }
        r.take(MAGIC.len())?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version { path: path.to_path_buf(), found: version });
        }
        let config = TrainConfig::from_config_text(&r.string()?)?;
        let d_in = r.u32()? as usize;
        let d_r = r.u32()? as usize;
        let embed_dim = r.u32()? as usize;
        let epoch = r.u64()? as usize;
        let best_mr = f64::from_le_bytes(r.take(8)?.try_into().unwrap());

        let n_params = r.u32()? as usize;
        let mut params = ParamStore::new(config.seed);
        let mut order = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            if !(1..=3).contains(&rank) {
                return Err(r.bad(&format!("parameter `{name}` has rank {rank}")));
            }
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let values = r.f64s(shape.iter().product())?;
            let tensor = Tensor::new(&shape, values).map_err(|_| r.bad(&format!("parameter `{name}` is not finite")))?;
            params.insert_loaded(&name, tensor)?;
            order.push(name);
        }
        let mut opt = OptState { step: r.u64()?, ..Default::default() };
        for name in &order {
            let n = params.get(name)?.len();
            opt.m.insert(name.clone(), r.f64s(n)?);
            opt.v.insert(name.clone(), r.f64s(n)?);
        }
        if r.pos != bytes.len() {
            return Err(r.bad("trailing bytes"));
        }

        let ck = Self { config, d_in, d_r, embed_dim, epoch, best_mr, params, opt };
        ck.check_layout()?;
        Ok(ck)
    }

    /// Parameter names and shapes must be exactly those the stored config registers.
    fn check_layout(&self) -> Result<()> {
        let expected = self.model_config().init_params(self.config.seed)?;
        let want: Vec<(&str, &[usize])> = expected.iter().map(|e| (e.name.as_str(), e.tensor.shape())).collect();
        let have: Vec<(&str, &[usize])> = self.params.iter().map(|e| (e.name.as_str(), e.tensor.shape())).collect();
        if want != have {
            let missing = want.iter().find(|w| !have.contains(w)).or_else(|| have.iter().find(|h| !want.contains(h)));
            return Err(Error::Invalid(format!("checkpoint parameters do not match config (first difference: {missing:?})")));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let config = TrainConfig { d: 8, ..Default::default() };
        let mc = ModelConfig::from_train(&config, 6, 4, 10);
        let params = mc.init_params(config.seed).unwrap();
        let mut opt = OptState::new(&params);
        opt.step = 3;
        for v in opt.m.values_mut() {
            v.iter_mut().enumerate().for_each(|(i, x)| *x = i as f64 * 0.1);
        }
        Checkpoint { config, d_in: 6, d_r: 4, embed_dim: 10, epoch: 7, best_mr: 41.5, params, opt }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, Path::new("c")).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.config, ck.config);
        assert_eq!(back.opt, ck.opt);
        for (a, b) in ck.params.iter().zip(back.params.iter()) {
            assert_eq!(a.tensor, b.tensor);
        }
    }

    #[test]
    fn corrupt_files() {
        let bytes = sample().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], Path::new("c")), Err(Error::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad, Path::new("c")), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad, Path::new("c")), Err(Error::Version { found: 9, .. })));
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long, Path::new("c")).is_err());
    }
}
