//! Orchestration: run configuration, stage training loops, end-to-end
//! inference bundles, evaluation reports, and the ablation matrix.

pub mod config;
pub mod evaluate;
pub mod infer;
pub mod stages;

pub use config::{Direction, RunConfig};
pub use evaluate::{
    evaluate_run, predict_split, run_ablation_matrix, run_full_schedule, write_report, EvalReport,
    PredictionRecord,
};
pub use infer::{translate_end_to_end, PipelineBundle, TranslationOutcome};
pub use stages::{run_stage, Stage, StageReport};

use crate::error::Result;
use crate::imagegen::{build_dataset, build_pretrain_set, BuildReport, DatasetConfig, DatasetManifest, RenderSpec};
use crate::textcorpus::{embedded_corpus, train_bpe, GlyphAtlas};

fn render_spec(cfg: &RunConfig) -> RenderSpec {
    RenderSpec {
        strip_h: cfg.strip_h,
        strip_w: cfg.strip_w,
        font_id: cfg.fonts[0],
        ..RenderSpec::default()
    }
}

/// Build the composed train/valid/test splits plus the BPE tokenizer
/// (saved as `bpe.model` in the data directory).
pub fn build_data(cfg: &RunConfig) -> Result<BuildReport> {
    cfg.validate()?;
    let corpus = embedded_corpus();
    let atlas = GlyphAtlas::default_atlas();
    let ds = DatasetConfig {
        train: cfg.train_records,
        valid: cfg.valid_records,
        test: cfg.test_records,
        fonts: cfg.fonts.clone(),
        seed: cfg.seed,
        render: render_spec(cfg),
    };
    let report = build_dataset(&ds, &corpus, &atlas, &cfg.data_dir)?;
    let bpe = train_bpe(&corpus, cfg.bpe_merges)?;
    bpe.save(&cfg.data_dir.join("bpe.model"))?;
    Ok(report)
}

/// Build the text-image-only pretraining split in the data directory.
/// Pairs too long for the configured strip width are dropped up front.
pub fn build_pretrain(cfg: &RunConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let atlas = GlyphAtlas::default_atlas();
    let render = render_spec(cfg);
    let max_len = render.max_text_len(&atlas);
    let corpus: Vec<_> = embedded_corpus()
        .into_iter()
        .filter(|p| {
            p.src_text.chars().count() <= max_len && p.tgt_text.chars().count() <= max_len
        })
        .collect();
    build_pretrain_set(&corpus, &render, &atlas, cfg.seed, &cfg.data_dir)
}
