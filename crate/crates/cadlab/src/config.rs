//! Flat `key = value` run configuration.
//!
//! Keys are the training config fields plus `schema` and `mnar_template`
//! paths. `#` starts a comment. `CADLAB_SEED` overrides `seed`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cadlab_core::cbdm::GateMode;
use cadlab_core::mdm::CorpusMode;
use cadlab_core::train::{DictionaryMode, TrainConfig};

use crate::Error;

pub const SEED_ENV: &str = "CADLAB_SEED";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub schema: Option<PathBuf>,
    pub mnar_template: Option<PathBuf>,
}

pub const KEYS: &[&str] = &[
    "schema",
    "hidden",
    "layers",
    "d_m",
    "d_n",
    "q",
    "alpha",
    "k",
    "dropout",
    "warmup",
    "epochs",
    "lr",
    "batch_size",
    "seed",
    "mdm",
    "cbdm",
    "masking_mode",
    "dictionary_mode",
    "mnar_alpha",
    "mnar_template",
    "backbone_epochs",
    "pca_dim",
    "gate_mode",
    "encoder_relu",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("cannot parse {key} = {value:?}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(format!("{key} must be true or false, got {value:?}")),
    }
}

pub fn corpus_mode_name(m: CorpusMode) -> &'static str {
    match m {
        CorpusMode::Single => "single",
        CorpusMode::Multi => "multi",
    }
}

pub fn dictionary_mode_name(m: DictionaryMode) -> &'static str {
    match m {
        DictionaryMode::Learned => "learned",
        DictionaryMode::Random => "random",
    }
}

pub fn gate_mode_name(m: GateMode) -> &'static str {
    match m {
        GateMode::Shared => "shared",
        GateMode::Separate => "separate",
    }
}

impl RunConfig {
    /// Applies one assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let t = &mut self.train;
        match key {
            "schema" => self.schema = Some(PathBuf::from(value)),
            "mnar_template" => self.mnar_template = Some(PathBuf::from(value)),
            "hidden" => t.hidden = parse(key, value)?,
            "layers" => t.layers = parse(key, value)?,
            "d_m" => t.d_m = parse(key, value)?,
            "d_n" => t.d_n = parse(key, value)?,
            "q" => t.q = parse(key, value)?,
            "alpha" => t.alpha = parse(key, value)?,
            "k" => t.k = parse(key, value)?,
            "dropout" => t.dropout = parse(key, value)?,
            "warmup" => t.warmup = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "mdm" => t.mdm = parse_bool(key, value)?,
            "cbdm" => t.cbdm = parse_bool(key, value)?,
            "masking_mode" => {
                t.masking_mode = match value {
                    "single" => CorpusMode::Single,
                    "multi" => CorpusMode::Multi,
                    _ => return Err(format!("masking_mode must be single or multi, got {value:?}")),
                }
            }
            "dictionary_mode" => {
                t.dictionary_mode = match value {
                    "learned" => DictionaryMode::Learned,
                    "random" => DictionaryMode::Random,
                    _ => return Err(format!("dictionary_mode must be learned or random, got {value:?}")),
                }
            }
            "gate_mode" => {
                t.gate_mode = match value {
                    "shared" => GateMode::Shared,
                    "separate" => GateMode::Separate,
                    _ => return Err(format!("gate_mode must be shared or separate, got {value:?}")),
                }
            }
            "mnar_alpha" => t.mnar_alpha = parse(key, value)?,
            "backbone_epochs" => t.backbone_epochs = parse(key, value)?,
            "pca_dim" => t.pca_dim = parse(key, value)?,
            "encoder_relu" => t.encoder_relu = parse_bool(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults. Relative paths stay as
    /// written; see [`RunConfig::load`] for file-relative resolution.
    pub fn parse(text: &str) -> Result<Self, Error> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Record { line: i + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            cfg.set(key.trim(), value.trim()).map_err(err)?;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, resolves relative paths against its directory
    /// and applies the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| e.in_file(path))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.schema, &mut cfg.mnar_template].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<(), Error> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.train.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    /// Renders every key, in a form `parse` reads back unchanged.
    pub fn render(&self) -> String {
        let t = &self.train;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        if let Some(p) = &self.schema {
            put("schema", p.display().to_string());
        }
        if let Some(p) = &self.mnar_template {
            put("mnar_template", p.display().to_string());
        }
        put("hidden", t.hidden.to_string());
        put("layers", t.layers.to_string());
        put("d_m", t.d_m.to_string());
        put("d_n", t.d_n.to_string());
        put("q", t.q.to_string());
        put("alpha", t.alpha.to_string());
        put("k", t.k.to_string());
        put("dropout", t.dropout.to_string());
        put("warmup", t.warmup.to_string());
        put("epochs", t.epochs.to_string());
        put("lr", t.lr.to_string());
        put("batch_size", t.batch_size.to_string());
        put("seed", t.seed.to_string());
        put("mdm", t.mdm.to_string());
        put("cbdm", t.cbdm.to_string());
        put("masking_mode", corpus_mode_name(t.masking_mode).into());
        put("dictionary_mode", dictionary_mode_name(t.dictionary_mode).into());
        put("mnar_alpha", t.mnar_alpha.to_string());
        put("backbone_epochs", t.backbone_epochs.to_string());
        put("pca_dim", t.pca_dim.to_string());
        put("gate_mode", gate_mode_name(t.gate_mode).into());
        put("encoder_relu", t.encoder_relu.to_string());
        out
    }
}
