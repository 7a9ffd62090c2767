//! Experiment configuration: every hyperparameter in one record, serialized
//! as flat `key = value` text. Parsing is strict — an unknown key is an
//! error, never a warning.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub sample_rate: u32,
    pub fbank_dims: usize,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub segment_s: f64,
    pub embed_dim: usize,
    pub margin: f64,
    pub scale: f64,
    /// count of real training classes; 0 means "infer from the manifest"
    pub lambda_speakers: usize,
    pub lambda_adv_base: f64,
    pub lambda_adv_min: f64,
    pub lambda_adv_max: f64,
    pub ema_beta: f64,
    pub lr_encoder: f64,
    pub lr_discriminator: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// 1-based hidden-layer indices tapped from the backbone
    pub backbone_layers: Vec<usize>,
    pub backbone_depth: usize,
    pub disc_hidden: usize,
    pub mhap_heads: usize,
    pub pseudo_seq_len: usize,
    pub dropout: f64,
    /// score synthetic embeddings against real + synthetic columns (true)
    /// or synthetic columns alone (ablation)
    pub syn_against_all: bool,
    /// keep the BCE(D(e), 0) term inside the generator loss
    pub gen_loss_real_term: bool,
    pub grad_clip: f64,
    pub mindcf_p_target: f64,
    pub mindcf_c_miss: f64,
    pub mindcf_c_fa: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sample_rate: 16000,
            fbank_dims: 80,
            window_ms: 25.0,
            hop_ms: 10.0,
            segment_s: 3.0,
            embed_dim: 192,
            margin: 0.2,
            scale: 30.0,
            lambda_speakers: 0,
            lambda_adv_base: 0.1,
            lambda_adv_min: 0.01,
            lambda_adv_max: 1.0,
            ema_beta: 0.9,
            lr_encoder: 1e-3,
            lr_discriminator: 2e-4,
            weight_decay: 1e-7,
            warmup_steps: 2000,
            batch_size: 50,
            epochs: 30,
            backbone_layers: vec![7, 9, 11, 12],
            backbone_depth: 12,
            disc_hidden: 64,
            mhap_heads: 4,
            pseudo_seq_len: 4,
            dropout: 0.1,
            syn_against_all: true,
            gen_loss_real_term: true,
            grad_clip: 5.0,
            mindcf_p_target: 0.01,
            mindcf_c_miss: 1.0,
            mindcf_c_fa: 1.0,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Small-scale profile: trains in minutes on one CPU core while keeping
    /// the full pipeline intact.
    pub fn desk() -> Self {
        ExperimentConfig {
            embed_dim: 32,
            batch_size: 16,
            epochs: 10,
            warmup_steps: 100,
            disc_hidden: 32,
            ..ExperimentConfig::default()
        }
    }

    pub fn window_samples(&self) -> usize {
        (self.sample_rate as f64 * self.window_ms / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.sample_rate as f64 * self.hop_ms / 1000.0).round() as usize
    }

    pub fn segment_samples(&self) -> usize {
        (self.sample_rate as f64 * self.segment_s).round() as usize
    }
}

pub fn validate_config(cfg: ExperimentConfig) -> Result<ExperimentConfig> {
    fn fail(field: &str) -> Error {
        Error::Validation(field.to_string())
    }
    if cfg.sample_rate == 0 {
        return Err(fail("sample_rate"));
    }
    if cfg.fbank_dims == 0 {
        return Err(fail("fbank_dims"));
    }
    if cfg.window_ms <= 0.0 {
        return Err(fail("window_ms"));
    }
    if cfg.hop_ms <= 0.0 {
        return Err(fail("hop_ms"));
    }
    if cfg.segment_s <= 0.0 {
        return Err(fail("segment_s"));
    }
    if cfg.embed_dim == 0 {
        return Err(fail("embed_dim"));
    }
    if cfg.margin < 0.0 {
        return Err(fail("margin"));
    }
    if cfg.scale <= 0.0 {
        return Err(fail("scale"));
    }
    if cfg.lambda_adv_min > cfg.lambda_adv_max {
        return Err(fail("lambda_adv_bounds"));
    }
    if cfg.lambda_adv_base < 0.0 {
        return Err(fail("lambda_adv_base"));
    }
    if !(cfg.ema_beta > 0.0 && cfg.ema_beta < 1.0) {
        return Err(fail("ema_beta"));
    }
    if cfg.lr_encoder <= 0.0 {
        return Err(fail("lr_encoder"));
    }
    if cfg.lr_discriminator <= 0.0 {
        return Err(fail("lr_discriminator"));
    }
    if cfg.weight_decay < 0.0 {
        return Err(fail("weight_decay"));
    }
    if cfg.batch_size < 2 {
        return Err(fail("batch_size"));
    }
    if cfg.epochs == 0 {
        return Err(fail("epochs"));
    }
    if cfg.backbone_layers.is_empty() {
        return Err(fail("backbone_layers"));
    }
    if cfg
        .backbone_layers
        .iter()
        .any(|&l| l == 0 || l > cfg.backbone_depth)
    {
        return Err(fail("backbone_layers"));
    }
    if cfg.backbone_depth == 0 {
        return Err(fail("backbone_depth"));
    }
    if cfg.disc_hidden == 0 {
        return Err(fail("disc_hidden"));
    }
    if cfg.mhap_heads == 0 {
        return Err(fail("mhap_heads"));
    }
    if cfg.pseudo_seq_len == 0 {
        return Err(fail("pseudo_seq_len"));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(fail("dropout"));
    }
    if cfg.grad_clip <= 0.0 {
        return Err(fail("grad_clip"));
    }
    if !(0.0..=1.0).contains(&cfg.mindcf_p_target) {
        return Err(fail("mindcf_p_target"));
    }
    if cfg.mindcf_c_miss <= 0.0 {
        return Err(fail("mindcf_c_miss"));
    }
    if cfg.mindcf_c_fa <= 0.0 {
        return Err(fail("mindcf_c_fa"));
    }
    Ok(cfg)
}

macro_rules! config_keys {
    ($($key:ident : $kind:ident),* $(,)?) => {
        fn serialize_config(cfg: &ExperimentConfig) -> String {
            let mut out = String::new();
            out.push_str("# caarma experiment configuration\n");
            $(
                let _ = writeln!(out, "{} = {}", stringify!($key), emit::$kind(&cfg.$key));
            )*
            out
        }

        fn apply_key(cfg: &mut ExperimentConfig, key: &str, value: &str, line: usize) -> Result<()> {
            match key {
                $(
                    stringify!($key) => {
                        cfg.$key = parse::$kind(value).ok_or_else(|| Error::Parse {
                            line,
                            msg: format!("bad value `{}` for key `{}`", value, key),
                        })?;
                        Ok(())
                    }
                )*
                _ => Err(Error::Parse {
                    line,
                    msg: format!("unknown key `{}`", key),
                }),
            }
        }
    };
}

mod emit {
    pub fn float(v: &f64) -> String {
        format!("{v}")
    }
    pub fn uint(v: &usize) -> String {
        format!("{v}")
    }
    pub fn uint32(v: &u32) -> String {
        format!("{v}")
    }
    pub fn uint64(v: &u64) -> String {
        format!("{v}")
    }
    pub fn boolean(v: &bool) -> String {
        format!("{v}")
    }
    pub fn uint_list(v: &[usize]) -> String {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

mod parse {
    pub fn float(s: &str) -> Option<f64> {
        s.parse().ok()
    }
    pub fn uint(s: &str) -> Option<usize> {
        s.parse().ok()
    }
    pub fn uint32(s: &str) -> Option<u32> {
        s.parse().ok()
    }
    pub fn uint64(s: &str) -> Option<u64> {
        s.parse().ok()
    }
    pub fn boolean(s: &str) -> Option<bool> {
        s.parse().ok()
    }
    pub fn uint_list(s: &str) -> Option<Vec<usize>> {
        s.split(',')
            .map(|p| p.trim().parse().ok())
            .collect::<Option<Vec<usize>>>()
    }
}

config_keys! {
    sample_rate: uint32,
    fbank_dims: uint,
    window_ms: float,
    hop_ms: float,
    segment_s: float,
    embed_dim: uint,
    margin: float,
    scale: float,
    lambda_speakers: uint,
    lambda_adv_base: float,
    lambda_adv_min: float,
    lambda_adv_max: float,
    ema_beta: float,
    lr_encoder: float,
    lr_discriminator: float,
    weight_decay: float,
    warmup_steps: uint,
    batch_size: uint,
    epochs: uint,
    backbone_layers: uint_list,
    backbone_depth: uint,
    disc_hidden: uint,
    mhap_heads: uint,
    pseudo_seq_len: uint,
    dropout: float,
    syn_against_all: boolean,
    gen_loss_real_term: boolean,
    grad_clip: float,
    mindcf_p_target: float,
    mindcf_c_miss: float,
    mindcf_c_fa: float,
    seed: uint64,
}

pub fn config_to_string(cfg: &ExperimentConfig) -> String {
    serialize_config(cfg)
}

pub fn config_from_string(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: line_no,
            msg: format!("expected `key = value`, got `{raw}`"),
        })?;
        apply_key(&mut cfg, key.trim(), value.trim(), line_no)?;
    }
    validate_config(cfg)
}

pub fn save_config(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    std::fs::write(path, config_to_string(cfg))?;
    Ok(())
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    config_from_string(&text)
}
