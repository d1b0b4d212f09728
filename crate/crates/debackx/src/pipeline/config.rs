//! Run configuration: a flat `key = value` text format with `#` comments.
//! CLI flags override file values; unknown keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::transformer::TransformerConfig;

/// Direction of translation relative to the corpus columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    // Paths.
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,

    // Data build.
    pub train_records: usize,
    pub valid_records: usize,
    pub test_records: usize,
    pub fonts: Vec<usize>,
    pub strip_h: usize,
    pub strip_w: usize,
    pub patch_size: usize,
    pub bpe_merges: usize,

    // Stage schedule (toy defaults scaled 12.5x down from the full-size
    // 25K/50K/100K/50K/15K schedule).
    pub steps_separation: u64,
    pub steps_vq: u64,
    pub steps_translate_pretrain: u64,
    pub steps_translate_finetune: u64,
    pub steps_fusion: u64,

    // Optimizer.
    pub warmup: u64,
    pub lr_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub log_interval: u64,

    // Shared image-model dims (separation, vq decoder/encoder, fusion).
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub lambda_p: f64,

    // VQ codec.
    pub vq_codebook_size: usize,
    pub vq_d_code: usize,
    pub vq_gamma: f64,
    pub vq_reseed_dead: bool,

    // Translator.
    pub trans_small_d_model: usize,
    pub trans_small_layers: usize,
    pub trans_small_heads: usize,
    pub trans_small_d_ff: usize,
    pub trans_large_d_model: usize,
    pub trans_large_layers: usize,
    pub trans_large_heads: usize,
    pub trans_large_d_ff: usize,
    pub max_text_tokens: usize,

    // Flags.
    pub use_pivot: bool,
    pub use_deback: bool,
    pub direction: Direction,
    pub fusion_noisy_teacher: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("data"),
            checkpoint_dir: PathBuf::from("checkpoints"),
            report_dir: PathBuf::from("reports"),
            train_records: 32,
            valid_records: 8,
            test_records: 8,
            fonts: vec![0],
            strip_h: 48,
            strip_w: 512,
            patch_size: 16,
            bpe_merges: 200,
            steps_separation: 2000,
            steps_vq: 4000,
            steps_translate_pretrain: 4000,
            steps_translate_finetune: 2000,
            steps_fusion: 1500,
            warmup: 400,
            lr_scale: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            batch_size: 16,
            log_interval: 100,
            d_model: 64,
            layers: 2,
            heads: 4,
            d_ff: 192,
            dropout: 0.0,
            lambda_p: 0.1,
            vq_codebook_size: 512,
            vq_d_code: 32,
            vq_gamma: 0.99,
            vq_reseed_dead: false,
            trans_small_d_model: 48,
            trans_small_layers: 2,
            trans_small_heads: 4,
            trans_small_d_ff: 144,
            trans_large_d_model: 64,
            trans_large_layers: 2,
            trans_large_heads: 4,
            trans_large_d_ff: 192,
            max_text_tokens: 64,
            use_pivot: true,
            use_deback: true,
            direction: Direction::Forward,
            fusion_noisy_teacher: false,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        for (lineno, raw) in body.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Input(format!(
                    "config line {}: expected key = value, got {raw:?}",
                    lineno + 1
                )));
            };
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Set one key from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Input(format!("config key {key}: bad value {value:?}")))
        }
        match key {
            "data_dir" => self.data_dir = PathBuf::from(value),
            "checkpoint_dir" => self.checkpoint_dir = PathBuf::from(value),
            "report_dir" => self.report_dir = PathBuf::from(value),
            "train_records" => self.train_records = parse(key, value)?,
            "valid_records" => self.valid_records = parse(key, value)?,
            "test_records" => self.test_records = parse(key, value)?,
            "fonts" => {
                let mut fonts = Vec::new();
                for part in value.split(',') {
                    fonts.push(parse(key, part.trim())?);
                }
                self.fonts = fonts;
            }
            "strip_h" => self.strip_h = parse(key, value)?,
            "strip_w" => self.strip_w = parse(key, value)?,
            "patch_size" => self.patch_size = parse(key, value)?,
            "bpe_merges" => self.bpe_merges = parse(key, value)?,
            "steps_separation" => self.steps_separation = parse(key, value)?,
            "steps_vq" => self.steps_vq = parse(key, value)?,
            "steps_translate_pretrain" => self.steps_translate_pretrain = parse(key, value)?,
            "steps_translate_finetune" => self.steps_translate_finetune = parse(key, value)?,
            "steps_fusion" => self.steps_fusion = parse(key, value)?,
            "warmup" => self.warmup = parse(key, value)?,
            "lr_scale" => self.lr_scale = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "log_interval" => self.log_interval = parse(key, value)?,
            "d_model" => self.d_model = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "d_ff" => self.d_ff = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "lambda_p" => self.lambda_p = parse(key, value)?,
            "vq_codebook_size" => self.vq_codebook_size = parse(key, value)?,
            "vq_d_code" => self.vq_d_code = parse(key, value)?,
            "vq_gamma" => self.vq_gamma = parse(key, value)?,
            "vq_reseed_dead" => self.vq_reseed_dead = parse(key, value)?,
            "trans_small_d_model" => self.trans_small_d_model = parse(key, value)?,
            "trans_small_layers" => self.trans_small_layers = parse(key, value)?,
            "trans_small_heads" => self.trans_small_heads = parse(key, value)?,
            "trans_small_d_ff" => self.trans_small_d_ff = parse(key, value)?,
            "trans_large_d_model" => self.trans_large_d_model = parse(key, value)?,
            "trans_large_layers" => self.trans_large_layers = parse(key, value)?,
            "trans_large_heads" => self.trans_large_heads = parse(key, value)?,
            "trans_large_d_ff" => self.trans_large_d_ff = parse(key, value)?,
            "max_text_tokens" => self.max_text_tokens = parse(key, value)?,
            "use_pivot" => self.use_pivot = parse(key, value)?,
            "use_deback" => self.use_deback = parse(key, value)?,
            "fusion_noisy_teacher" => self.fusion_noisy_teacher = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "direction" => {
                self.direction = match value {
                    "forward" => Direction::Forward,
                    "reverse" => Direction::Reverse,
                    other => {
                        return Err(Error::Input(format!(
                            "config key direction: expected forward|reverse, got {other:?}"
                        )))
                    }
                }
            }
            other => return Err(Error::Input(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, overrides: &[(String, String)]) -> Result<()> {
        for (k, v) in overrides {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.fonts.is_empty() {
            return Err(Error::Config("no fonts configured".into()));
        }
        for s in [
            self.steps_separation,
            self.steps_vq,
            self.steps_translate_pretrain,
            self.steps_translate_finetune,
            self.steps_fusion,
        ] {
            if s < 1 {
                return Err(Error::Config("stage steps must be >= 1".into()));
            }
        }
        self.image_transformer().validate()?;
        Ok(())
    }

    /// Transformer config shared by separation / vq / fusion.
    pub fn image_transformer(&self) -> TransformerConfig {
        let n = (self.strip_h / self.patch_size) * (self.strip_w / self.patch_size);
        TransformerConfig {
            d_model: self.d_model,
            layer_count: self.layers,
            head_count: self.heads,
            d_ff: self.d_ff,
            dropout_rate: self.dropout,
            max_positions: n,
        }
    }

    pub fn code_len(&self) -> usize {
        (self.strip_h / self.patch_size) * (self.strip_w / self.patch_size)
    }

    /// Stable hash of the full configuration (FNV-1a over the canonical
    /// JSON form), used to label evaluation reports.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.to_map()).unwrap_or_default();
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for b in json.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        format!("{h:016x}")
    }

    /// Canonical key -> value view (the file format, sorted).
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("data_dir", self.data_dir.display().to_string());
        put("checkpoint_dir", self.checkpoint_dir.display().to_string());
        put("report_dir", self.report_dir.display().to_string());
        put("train_records", self.train_records.to_string());
        put("valid_records", self.valid_records.to_string());
        put("test_records", self.test_records.to_string());
        put(
            "fonts",
            self.fonts.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(","),
        );
        put("strip_h", self.strip_h.to_string());
        put("strip_w", self.strip_w.to_string());
        put("patch_size", self.patch_size.to_string());
        put("bpe_merges", self.bpe_merges.to_string());
        put("steps_separation", self.steps_separation.to_string());
        put("steps_vq", self.steps_vq.to_string());
        put("steps_translate_pretrain", self.steps_translate_pretrain.to_string());
        put("steps_translate_finetune", self.steps_translate_finetune.to_string());
        put("steps_fusion", self.steps_fusion.to_string());
        put("warmup", self.warmup.to_string());
        put("lr_scale", self.lr_scale.to_string());
        put("beta1", self.beta1.to_string());
        put("beta2", self.beta2.to_string());
        put("weight_decay", self.weight_decay.to_string());
        put("batch_size", self.batch_size.to_string());
        put("log_interval", self.log_interval.to_string());
        put("d_model", self.d_model.to_string());
        put("layers", self.layers.to_string());
        put("heads", self.heads.to_string());
        put("d_ff", self.d_ff.to_string());
        put("dropout", self.dropout.to_string());
        put("lambda_p", self.lambda_p.to_string());
        put("vq_codebook_size", self.vq_codebook_size.to_string());
        put("vq_d_code", self.vq_d_code.to_string());
        put("vq_gamma", self.vq_gamma.to_string());
        put("vq_reseed_dead", self.vq_reseed_dead.to_string());
        put("trans_small_d_model", self.trans_small_d_model.to_string());
        put("trans_small_layers", self.trans_small_layers.to_string());
        put("trans_small_heads", self.trans_small_heads.to_string());
        put("trans_small_d_ff", self.trans_small_d_ff.to_string());
        put("trans_large_d_model", self.trans_large_d_model.to_string());
        put("trans_large_layers", self.trans_large_layers.to_string());
        put("trans_large_heads", self.trans_large_heads.to_string());
        put("trans_large_d_ff", self.trans_large_d_ff.to_string());
        put("max_text_tokens", self.max_text_tokens.to_string());
        put("use_pivot", self.use_pivot.to_string());
        put("use_deback", self.use_deback.to_string());
        put(
            "direction",
            match self.direction {
                Direction::Forward => "forward".to_string(),
                Direction::Reverse => "reverse".to_string(),
            },
        );
        put("fusion_noisy_teacher", self.fusion_noisy_teacher.to_string());
        put("seed", self.seed.to_string());
        m
    }
}
