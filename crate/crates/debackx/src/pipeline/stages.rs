//! Stage training loops: one optimizer step per mini-batch, inverse-sqrt
//! learning rate, periodic loss logging, atomic checkpoint at the end.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, FusionModel};
use crate::imagegen::{load_manifest, load_record, SampleRecord};
use crate::img::Image;
use crate::neural::frozen::FrozenFeatureNet;
use crate::neural::optim::{adamw_step, lr_at, AdamState, AdamWConfig};
use crate::neural::transformer::TransformerConfig;
use crate::pipeline::config::{Direction, RunConfig};
use crate::separation::{SeparationConfig, SeparationModel};
use crate::textcorpus::BpeModel;
use crate::translator::{TranslationBatch, Translator, TranslatorConfig};
use crate::vqcodec::{ema_update, VqCodec, VqConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Separation,
    Vq,
    TranslatePretrain,
    TranslateFinetune,
    Fusion,
}

impl Stage {
    pub fn parse(s: &str) -> Result<Stage> {
        Ok(match s {
            "separation" => Stage::Separation,
            "vq" => Stage::Vq,
            "translate-pretrain" => Stage::TranslatePretrain,
            "translate-finetune" => Stage::TranslateFinetune,
            "fusion" => Stage::Fusion,
            other => {
                return Err(Error::Input(format!(
                    "unknown stage {other:?}; expected separation|vq|translate-pretrain|translate-finetune|fusion"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Separation => "separation",
            Stage::Vq => "vq",
            Stage::TranslatePretrain => "translate-pretrain",
            Stage::TranslateFinetune => "translate-finetune",
            Stage::Fusion => "fusion",
        }
    }

    fn steps(self, cfg: &RunConfig) -> u64 {
        match self {
            Stage::Separation => cfg.steps_separation,
            Stage::Vq => cfg.steps_vq,
            Stage::TranslatePretrain => cfg.steps_translate_pretrain,
            Stage::TranslateFinetune => cfg.steps_translate_finetune,
            Stage::Fusion => cfg.steps_fusion,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub stage: &'static str,
    pub steps: u64,
    pub final_loss: f64,
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
}

/// Checkpoint subdirectory per component.
pub fn checkpoint_path(cfg: &RunConfig, component: &str) -> PathBuf {
    cfg.checkpoint_dir.join(component)
}

fn require_checkpoint(stage: Stage, dir: &Path) -> Result<()> {
    if !dir.join("meta.json").exists() {
        return Err(Error::Dependency(format!(
            "stage {} requires a checkpoint at {}",
            stage.name(),
            dir.display()
        )));
    }
    Ok(())
}

/// Swap source/target roles when the configured direction is reversed.
fn orient(mut rec: SampleRecord, dir: Direction) -> SampleRecord {
    if dir == Direction::Reverse {
        std::mem::swap(&mut rec.source_image, &mut rec.target_image);
        std::mem::swap(&mut rec.golden_src_textimage, &mut rec.golden_tgt_textimage);
        std::mem::swap(&mut rec.src_text, &mut rec.tgt_text);
    }
    rec
}

fn load_split(cfg: &RunConfig, split: &str) -> Result<Vec<SampleRecord>> {
    let manifest = load_manifest(&cfg.data_dir, split)?;
    manifest
        .records
        .iter()
        .map(|r| Ok(orient(load_record(&cfg.data_dir, r)?, cfg.direction)))
        .collect()
}

/// Deterministic epoch-shuffled example order.
struct Sampler {
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(n: usize) -> Sampler {
        Sampler {
            order: (0..n).collect(),
            pos: n, // force a shuffle on first draw
        }
    }

    fn next(&mut self, rng: &mut ChaCha20Rng) -> usize {
        if self.pos >= self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let i = self.order[self.pos];
        self.pos += 1;
        i
    }
}

/// Collects one loss line every `interval` steps (steps 1, 1+k, 1+2k, …),
/// printing as it goes and writing the stage log file at the end.
struct StageLog {
    stage: &'static str,
    interval: u64,
    lines: Vec<String>,
    path: PathBuf,
}

impl StageLog {
    fn new(cfg: &RunConfig, stage: &'static str) -> Result<StageLog> {
        let dir = cfg.report_dir.join("logs");
        std::fs::create_dir_all(&dir)?;
        Ok(StageLog {
            stage,
            interval: cfg.log_interval.max(1),
            lines: Vec::new(),
            path: dir.join(format!("{stage}.log")),
        })
    }

    fn record(&mut self, step: u64, total: u64, lr: f64, loss: f64) {
        if (step - 1) % self.interval == 0 {
            let line = format!(
                "stage={} step={step}/{total} lr={lr:.6e} loss={loss:.6}",
                self.stage
            );
            println!("{line}");
            self.lines.push(line);
        }
    }

    fn finish(self) -> Result<PathBuf> {
        let mut body = self.lines.join("\n");
        body.push('\n');
        std::fs::write(&self.path, body)?;
        Ok(self.path)
    }
}

fn accumulate(sum: &mut Option<Vec<Array2<f64>>>, grads: Vec<Array2<f64>>) {
    match sum {
        None => *sum = Some(grads),
        Some(s) => {
            for (a, b) in s.iter_mut().zip(grads.into_iter()) {
                *a += &b;
            }
        }
    }
}

fn mean_of(mut sum: Vec<Array2<f64>>, k: usize) -> Vec<Array2<f64>> {
    let inv = 1.0 / k as f64;
    for g in &mut sum {
        *g *= inv;
    }
    sum
}

fn opt_config(cfg: &RunConfig) -> AdamWConfig {
    AdamWConfig {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: 1e-8,
        weight_decay: cfg.weight_decay,
    }
}

/// Run one training stage to completion and write its checkpoint.
pub fn run_stage(stage: Stage, cfg: &RunConfig) -> Result<StageReport> {
    cfg.validate()?;
    if !cfg.use_deback && matches!(stage, Stage::Separation | Stage::Fusion) {
        return Err(Error::Config(format!(
            "stage {} is disabled when use_deback = false",
            stage.name()
        )));
    }
    std::fs::create_dir_all(&cfg.checkpoint_dir)?;
    match stage {
        Stage::Separation => run_separation(cfg),
        Stage::Vq => run_vq(cfg),
        Stage::TranslatePretrain => run_translate(cfg, stage),
        Stage::TranslateFinetune => run_translate(cfg, stage),
        Stage::Fusion => run_fusion(cfg),
    }
}

fn run_separation(cfg: &RunConfig) -> Result<StageReport> {
    let records = load_split(cfg, "train")?;
    let examples: Vec<(Image, Image, Image)> = records
        .into_iter()
        .map(|r| {
            let bg = r.golden_background.ok_or_else(|| {
                Error::Config("separation training needs composed records with backgrounds".into())
            })?;
            Ok((r.source_image, bg, r.golden_src_textimage))
        })
        .collect::<Result<_>>()?;

    let model_cfg = SeparationConfig {
        strip_h: cfg.strip_h,
        strip_w: cfg.strip_w,
        patch_size: cfg.patch_size,
        transformer: cfg.image_transformer(),
        lambda_p: cfg.lambda_p,
    };
    let mut model = SeparationModel::new(model_cfg, cfg.seed ^ 0x5345_5041)?;
    let net = FrozenFeatureNet::new();
    let mut opt = AdamState::new(&model.store);
    let opt_cfg = opt_config(cfg);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x0153_4550);
    let mut sampler = Sampler::new(examples.len());
    let mut log = StageLog::new(cfg, "separation")?;
    let steps = Stage::Separation.steps(cfg);
    let mut final_loss = f64::NAN;

    for step in 1..=steps {
        let lr = lr_at(step, cfg.warmup, cfg.d_model)? * cfg.lr_scale;
        let mut sum = None;
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size.max(1) {
            let (x, gt_b, gt_t) = &examples[sampler.next(&mut rng)];
            let (l, grads) = model.loss_grads(x, gt_b, gt_t, &net, Some(&mut rng))?;
            loss += l;
            accumulate(&mut sum, grads);
        }
        let b = cfg.batch_size.max(1);
        adamw_step(&mut model.store, &mean_of(sum.unwrap(), b), &mut opt, lr, &opt_cfg)?;
        final_loss = loss / b as f64;
        log.record(step, steps, lr, final_loss);
    }

    let ck = checkpoint_path(cfg, "separation");
    model.save(&ck, steps)?;
    Ok(StageReport {
        stage: "separation",
        steps,
        final_loss,
        checkpoint: ck,
        log_path: log.finish()?,
    })
}

fn run_vq(cfg: &RunConfig) -> Result<StageReport> {
    let records = load_split(cfg, "train")?;
    // With the background pipeline the codec models text-images; the
    // direct variant must tokenize full composed frames instead.
    let mut examples: Vec<Image> = Vec::new();
    for r in records {
        if cfg.use_deback {
            examples.push(r.golden_src_textimage);
            examples.push(r.golden_tgt_textimage);
        } else {
            examples.push(r.source_image);
            examples.push(r.target_image);
        }
    }
    if cfg.use_deback {
        if let Ok(pre) = load_manifest(&cfg.data_dir, "pretrain") {
            for rec in &pre.records {
                let r = load_record(&cfg.data_dir, rec)?;
                examples.push(r.golden_src_textimage);
                examples.push(r.golden_tgt_textimage);
            }
        }
    }

    let model_cfg = VqConfig {
        strip_h: cfg.strip_h,
        strip_w: cfg.strip_w,
        patch_size: cfg.patch_size,
        transformer: cfg.image_transformer(),
        codebook_size: cfg.vq_codebook_size,
        d_code: cfg.vq_d_code,
        gamma: cfg.vq_gamma,
        lambda_p: cfg.lambda_p,
        reseed_dead_codes: cfg.vq_reseed_dead,
    };
    let mut model = VqCodec::new(model_cfg, cfg.seed ^ 0x5651_4351)?;
    let net = FrozenFeatureNet::new();
    let mut opt = AdamState::new(&model.store);
    let opt_cfg = opt_config(cfg);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x0156_5143);
    let mut sampler = Sampler::new(examples.len());
    let mut log = StageLog::new(cfg, "vq")?;
    let steps = Stage::Vq.steps(cfg);
    let mut final_loss = f64::NAN;

    for step in 1..=steps {
        let lr = lr_at(step, cfg.warmup, cfg.d_model)? * cfg.lr_scale;
        let mut sum = None;
        let mut loss = 0.0;
        let mut feats: Option<Array2<f64>> = None;
        let mut codes: Vec<u32> = Vec::new();
        for _ in 0..cfg.batch_size.max(1) {
            let img = &examples[sampler.next(&mut rng)];
            let (rep, grads, f, c) = model.loss_grads(img, &net, Some(&mut rng))?;
            loss += rep.total;
            accumulate(&mut sum, grads);
            codes.extend(c);
            feats = Some(match feats {
                None => f,
                Some(prev) => ndarray::concatenate(
                    ndarray::Axis(0),
                    &[prev.view(), f.view()],
                )
                .expect("feature widths match"),
            });
        }
        let b = cfg.batch_size.max(1);
        adamw_step(&mut model.store, &mean_of(sum.unwrap(), b), &mut opt, lr, &opt_cfg)?;
        let feats = feats.unwrap();
        ema_update(&mut model.book, &feats, &codes);
        if cfg.vq_reseed_dead {
            model.reseed_dead(&feats, &mut rng);
        }
        final_loss = loss / b as f64;
        log.record(step, steps, lr, final_loss);
    }

    let ck = checkpoint_path(cfg, "vqcodec");
    model.save(&ck, steps)?;
    Ok(StageReport {
        stage: "vq",
        steps,
        final_loss,
        checkpoint: ck,
        log_path: log.finish()?,
    })
}

fn translator_config(cfg: &RunConfig, codebook_size: usize, text_vocab: usize) -> TranslatorConfig {
    let code_len = cfg.code_len();
    TranslatorConfig {
        codebook_size,
        code_len,
        text_vocab,
        max_text_len: cfg.max_text_tokens,
        small: TransformerConfig {
            d_model: cfg.trans_small_d_model,
            layer_count: cfg.trans_small_layers,
            head_count: cfg.trans_small_heads,
            d_ff: cfg.trans_small_d_ff,
            dropout_rate: cfg.dropout,
            max_positions: code_len.max(cfg.max_text_tokens + 1),
        },
        large: TransformerConfig {
            d_model: cfg.trans_large_d_model,
            layer_count: cfg.trans_large_layers,
            head_count: cfg.trans_large_heads,
            d_ff: cfg.trans_large_d_ff,
            dropout_rate: cfg.dropout,
            max_positions: code_len,
        },
        use_pivot: cfg.use_pivot,
    }
}

/// Tokenize a target caption into a BOS-prefixed decoder input.
fn text_tokens(bpe: &BpeModel, text: &str, max_text_len: usize) -> Result<Vec<u32>> {
    let mut toks = vec![bpe.bos_id()];
    toks.extend(bpe.encode(text)?);
    if toks.len() > max_text_len + 1 {
        return Err(Error::Input(format!(
            "caption tokenizes to {} tokens, over the limit {}",
            toks.len() - 1,
            max_text_len
        )));
    }
    Ok(toks)
}

fn run_translate(cfg: &RunConfig, stage: Stage) -> Result<StageReport> {
    let vq_dir = checkpoint_path(cfg, "vqcodec");
    require_checkpoint(stage, &vq_dir)?;
    let (codec, _) = VqCodec::load(&vq_dir)?;

    let bpe_path = cfg.data_dir.join("bpe.model");
    if !bpe_path.exists() {
        return Err(Error::Dependency(format!(
            "stage {} requires the tokenizer at {}",
            stage.name(),
            bpe_path.display()
        )));
    }
    let bpe = BpeModel::load(&bpe_path)?;

    // Pretraining reads the text-image-only split; finetuning reads the
    // composed training split.
    let records = match stage {
        Stage::TranslatePretrain => {
            let manifest = load_manifest(&cfg.data_dir, "pretrain").map_err(|_| {
                Error::Dependency(format!(
                    "stage {} requires a pretrain split in {}",
                    stage.name(),
                    cfg.data_dir.display()
                ))
            })?;
            manifest
                .records
                .iter()
                .map(|r| Ok(orient(load_record(&cfg.data_dir, r)?, cfg.direction)))
                .collect::<Result<Vec<_>>>()?
        }
        _ => load_split(cfg, "train")?,
    };

    let mut examples = Vec::with_capacity(records.len());
    for r in &records {
        let (src_img, tgt_img) = if cfg.use_deback {
            (&r.golden_src_textimage, &r.golden_tgt_textimage)
        } else {
            (&r.source_image, &r.target_image)
        };
        examples.push(TranslationBatch {
            src_codes: codec.encode_image_to_codes(src_img)?,
            tgt_codes: codec.encode_image_to_codes(tgt_img)?,
            tgt_text: text_tokens(&bpe, &r.tgt_text, cfg.max_text_tokens)?,
        });
    }

    let tr_dir = checkpoint_path(cfg, "translator");
    let (mut model, start_step) = match stage {
        Stage::TranslateFinetune => {
            require_checkpoint(stage, &tr_dir)?;
            Translator::load(&tr_dir)?
        }
        _ => (
            Translator::new(
                translator_config(cfg, codec.book.v(), bpe.vocab_size()),
                cfg.seed ^ 0x5452_414e,
            )?,
            0,
        ),
    };
    if model.config.codebook_size != codec.book.v() || model.config.code_len != codec.grid.n() {
        return Err(Error::Config(format!(
            "translator checkpoint (V={}, N={}) incompatible with codec (V={}, N={})",
            model.config.codebook_size,
            model.config.code_len,
            codec.book.v(),
            codec.grid.n()
        )));
    }

    // Fresh optimizer state at finetune start (schedule restarts too).
    let mut opt = AdamState::new(&model.store);
    let opt_cfg = opt_config(cfg);
    let seed_tag = match stage {
        Stage::TranslatePretrain => 0x0154_5250u64,
        _ => 0x0154_4654,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ seed_tag);
    let mut sampler = Sampler::new(examples.len());
    let mut log = StageLog::new(cfg, stage.name())?;
    let steps = stage.steps(cfg);
    let mut final_loss = f64::NAN;

    for step in 1..=steps {
        let lr = lr_at(step, cfg.warmup, cfg.trans_small_d_model)? * cfg.lr_scale;
        let mut sum = None;
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size.max(1) {
            let batch = &examples[sampler.next(&mut rng)];
            let (rep, grads) =
                model.loss_grads(batch, bpe.pad_id(), bpe.eos_id(), Some(&mut rng))?;
            loss += rep.total;
            accumulate(&mut sum, grads);
        }
        let b = cfg.batch_size.max(1);
        adamw_step(&mut model.store, &mean_of(sum.unwrap(), b), &mut opt, lr, &opt_cfg)?;
        final_loss = loss / b as f64;
        log.record(step, steps, lr, final_loss);
    }

    model.save(&tr_dir, start_step + steps)?;
    // Keep a tokenizer copy beside the checkpoints so a bundle directory
    // is self-contained.
    bpe.save(&cfg.checkpoint_dir.join("bpe.model"))?;
    Ok(StageReport {
        stage: stage.name(),
        steps,
        final_loss,
        checkpoint: tr_dir,
        log_path: log.finish()?,
    })
}

fn run_fusion(cfg: &RunConfig) -> Result<StageReport> {
    let records = load_split(cfg, "train")?;
    // Golden teacher by default; the noisy-teacher flag feeds the fusion
    // model backgrounds produced by the trained separation model instead.
    let separation = if cfg.fusion_noisy_teacher {
        let dir = checkpoint_path(cfg, "separation");
        require_checkpoint(Stage::Fusion, &dir)?;
        Some(SeparationModel::load(&dir)?.0)
    } else {
        None
    };
    let mut examples = Vec::with_capacity(records.len());
    for r in records {
        let bg = match &separation {
            Some(sep) => sep.separate(&r.source_image)?.0,
            None => r.golden_background.ok_or_else(|| {
                Error::Config("fusion training needs composed records with backgrounds".into())
            })?,
        };
        examples.push((bg, r.golden_tgt_textimage, r.target_image));
    }

    let model_cfg = FusionConfig {
        strip_h: cfg.strip_h,
        strip_w: cfg.strip_w,
        patch_size: cfg.patch_size,
        transformer: cfg.image_transformer(),
        lambda_p: cfg.lambda_p,
    };
    let mut model = FusionModel::new(model_cfg, cfg.seed ^ 0x4655_5345)?;
    let net = FrozenFeatureNet::new();
    let mut opt = AdamState::new(&model.store);
    let opt_cfg = opt_config(cfg);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x0146_5553);
    let mut sampler = Sampler::new(examples.len());
    let mut log = StageLog::new(cfg, "fusion")?;
    let steps = Stage::Fusion.steps(cfg);
    let mut final_loss = f64::NAN;

    for step in 1..=steps {
        let lr = lr_at(step, cfg.warmup, cfg.d_model)? * cfg.lr_scale;
        let mut sum = None;
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size.max(1) {
            let (bg, ti, target) = &examples[sampler.next(&mut rng)];
            let (l, grads) = model.loss_grads(bg, ti, target, &net, Some(&mut rng))?;
            loss += l;
            accumulate(&mut sum, grads);
        }
        let b = cfg.batch_size.max(1);
        adamw_step(&mut model.store, &mean_of(sum.unwrap(), b), &mut opt, lr, &opt_cfg)?;
        final_loss = loss / b as f64;
        log.record(step, steps, lr, final_loss);
    }

    let ck = checkpoint_path(cfg, "fusion");
    model.save(&ck, steps)?;
    Ok(StageReport {
        stage: "fusion",
        steps,
        final_loss,
        checkpoint: ck,
        log_path: log.finish()?,
    })
}
