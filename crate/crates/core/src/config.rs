//! Training configuration and the line-oriented `key = value` config file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Which hidden-state sequences feed the two text-mining branches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DtgaInputs {
    /// forward, forward
    Ff,
    /// backward, backward
    Bb,
    /// forward, backward
    Fb,
    /// both branches see (forward + backward) / 2
    Avg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Linear,
    Nonlinear,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, { $($variant:path => $kw:literal),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($kw => Ok($variant),)+
                    other => Err(Error::Invalid(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $kw,)+ })
            }
        }
    };
}

keyword_enum!(DtgaInputs, "dtga input mode", {
    DtgaInputs::Ff => "ff",
    DtgaInputs::Bb => "bb",
    DtgaInputs::Fb => "fb",
    DtgaInputs::Avg => "avg",
});

keyword_enum!(HeadKind, "head kind", {
    HeadKind::Linear => "linear",
    HeadKind::Nonlinear => "nonlinear",
});

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    NoDtga,
    NoIfa,
    NoIga,
}

keyword_enum!(Ablation, "ablation", {
    Ablation::NoDtga => "no_dtga",
    Ablation::NoIfa => "no_ifa",
    Ablation::NoIga => "no_iga",
});

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Embedding width; must be even and divisible by `heads`.
    pub d: usize,
    pub alpha: f64,
    pub lambda_g: f64,
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub heads: usize,
    pub seed: u64,
    pub dtga_inputs: DtgaInputs,
    pub no_dtga: bool,
    pub no_ifa: bool,
    pub no_iga: bool,
    pub ifa_head: HeadKind,
    pub iga_head: HeadKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d: 512,
            alpha: 0.2,
            lambda_g: 10.0,
            lr0: 0.0002,
            decay_factor: 0.7,
            decay_every: 20,
            epochs: 50,
            batch_size: 100,
            heads: 2,
            seed: 1,
            dtga_inputs: DtgaInputs::Fb,
            no_dtga: false,
            no_ifa: false,
            no_iga: false,
            ifa_head: HeadKind::Linear,
            iga_head: HeadKind::Nonlinear,
        }
    }
}

/// Keys accepted in a config file that belong to [`TrainConfig`].
pub const TRAIN_KEYS: &[&str] = &[
    "d",
    "alpha",
    "lambda_g",
    "lr0",
    "decay_factor",
    "decay_every",
    "epochs",
    "batch_size",
    "heads",
    "seed",
    "dtga_inputs",
    "no_dtga",
    "no_ifa",
    "no_iga",
    "ifa_head",
    "iga_head",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Invalid(format!("bad value `{value}` for `{key}`")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.d == 0 || !self.d.is_multiple_of(2) {
            return bad(format!("d = {} must be a positive even number", self.d));
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return bad(format!("d = {} is not divisible by heads = {}", self.d, self.heads));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} must lie in (0, 1)", self.alpha));
        }
        if !(self.lambda_g >= 0.0 && self.lambda_g.is_finite()) {
            return bad(format!("lambda_g = {} must be >= 0", self.lambda_g));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 = {} must be > 0", self.lr0));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!("decay_factor = {} must lie in (0, 1]", self.decay_factor));
        }
        if self.decay_every == 0 {
            return bad("decay_every must be >= 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size = {} must be >= 2", self.batch_size));
        }
        Ok(())
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d" => self.d = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "lambda_g" => self.lambda_g = parse_value(key, value)?,
            "lr0" => self.lr0 = parse_value(key, value)?,
            "decay_factor" => self.decay_factor = parse_value(key, value)?,
            "decay_every" => self.decay_every = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "heads" => self.heads = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "dtga_inputs" => self.dtga_inputs = value.parse()?,
            "no_dtga" => self.no_dtga = parse_value(key, value)?,
            "no_ifa" => self.no_ifa = parse_value(key, value)?,
            "no_iga" => self.no_iga = parse_value(key, value)?,
            "ifa_head" => self.ifa_head = value.parse()?,
            "iga_head" => self.iga_head = value.parse()?,
            _ => return Err(Error::Invalid(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn apply_ablation(&mut self, ablation: Ablation) {
        match ablation {
            Ablation::NoDtga => self.no_dtga = true,
            Ablation::NoIfa => self.no_ifa = true,
            Ablation::NoIga => self.no_iga = true,
        }
    }

    /// Canonical `key = value` rendering; floats use shortest round-trip form.
    pub fn to_config_text(&self) -> String {
        let pairs: [(&str, String); 16] = [
            ("d", self.d.to_string()),
            ("alpha", self.alpha.to_string()),
            ("lambda_g", self.lambda_g.to_string()),
            ("lr0", self.lr0.to_string()),
            ("decay_factor", self.decay_factor.to_string()),
            ("decay_every", self.decay_every.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("heads", self.heads.to_string()),
            ("seed", self.seed.to_string()),
            ("dtga_inputs", self.dtga_inputs.to_string()),
            ("no_dtga", self.no_dtga.to_string()),
            ("no_ifa", self.no_ifa.to_string()),
            ("no_iga", self.no_iga.to_string()),
            ("ifa_head", self.ifa_head.to_string()),
            ("iga_head", self.iga_head.to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn from_config_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in parse_pairs(text, Path::new("<config>"))? {
            cfg.set(&key, &value)?;
        }
        Ok(cfg)
    }

    /// First 16 hex digits of SHA-256 over the canonical rendering.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.to_config_text().as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}

fn parse_pairs(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse { path: path.to_path_buf(), line: i + 1, msg: "expected `key = value`".into() });
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Contents of a CLI config file: training keys plus data locations.
#[derive(Clone, Debug, Default)]
pub struct ConfigFile {
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub train_split: Option<PathBuf>,
    pub val_split: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

impl ConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = ConfigFile::default();
        for (i, (key, value)) in parse_pairs(text, path)?.into_iter().enumerate() {
            let p = Some(PathBuf::from(&value));
            match key.as_str() {
                "data" => cfg.data = p,
                "checkpoint" => cfg.checkpoint = p,
                "train_split" => cfg.train_split = p,
                "val_split" => cfg.val_split = p,
                "log" => cfg.log = p,
                k if TRAIN_KEYS.contains(&k) => cfg.train.set(k, &value)?,
                other => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        msg: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}
