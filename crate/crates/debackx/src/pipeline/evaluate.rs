//! Batch prediction over a dataset split, evaluation against the golden
//! manifest, and the four-way ablation matrix.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{
    corpus_bleu, corpus_wer, embed_images, font_consistency, frechet_distance, median, ocr_oracle,
    psnr, MATCH_THRESHOLD,
};
use crate::imagegen::{load_manifest, load_record};
use crate::img::Image;
use crate::neural::frozen::FrozenFeatureNet;
use crate::pipeline::config::{Direction, RunConfig};
use crate::pipeline::infer::{translate_end_to_end, PipelineBundle};
use crate::pipeline::stages::{run_stage, Stage, StageReport};

/// One prediction index line; images sit next to it under `split/`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub pair_id: u64,
    pub output: String,
    pub pivot_text: String,
    pub truncated: bool,
}

/// The JSON evaluation report (spec'd schema plus a run label).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub bleu: f64,
    pub wer: f64,
    pub fd_surrogate: f64,
    pub mean_psnr: f64,
    pub median_psnr: f64,
    pub font_consistency: f64,
    pub n_samples: usize,
    pub config: String,
}

/// Run the bundle over every record of a split, writing output images in
/// a layout mirroring the manifest (`split/XXXXXX_output.png`) plus a
/// `predictions.jsonl` index. Returns the records written.
pub fn predict_split(
    bundle: &PipelineBundle,
    cfg: &RunConfig,
    split: &str,
    out_dir: &Path,
) -> Result<Vec<PredictionRecord>> {
    let manifest = load_manifest(&cfg.data_dir, split)?;
    let img_dir = out_dir.join(split);
    std::fs::create_dir_all(&img_dir)?;
    let mut records = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        let sample = load_record(&cfg.data_dir, rec)?;
        let src = match cfg.direction {
            Direction::Forward => &sample.source_image,
            Direction::Reverse => &sample.target_image,
        };
        let outcome = translate_end_to_end(src, bundle)?;
        let rel = format!("{split}/{:06}_output.png", rec.pair_id);
        outcome.output.save_png(&out_dir.join(&rel))?;
        records.push(PredictionRecord {
            pair_id: rec.pair_id,
            output: rel,
            pivot_text: outcome.pivot_text,
            truncated: outcome.truncated,
        });
    }
    let mut body = String::new();
    for r in &records {
        body.push_str(&serde_json::to_string(r)?);
        body.push('\n');
    }
    std::fs::write(out_dir.join("predictions.jsonl"), body)?;
    Ok(records)
}

fn load_predictions(pred_dir: &Path) -> Result<Vec<PredictionRecord>> {
    let index = pred_dir.join("predictions.jsonl");
    if !index.exists() {
        return Err(Error::Dependency(format!(
            "prediction index {} not found",
            index.display()
        )));
    }
    let body = std::fs::read_to_string(&index)?;
    let mut out = Vec::new();
    for line in body.lines() {
        if !line.is_empty() {
            out.push(serde_json::from_str(line)?);
        }
    }
    Ok(out)
}

/// Score a prediction directory against a dataset split: OCR-oracle BLEU
/// and WER vs the reference captions, FD-surrogate between output and
/// golden target image sets, PSNR, and font consistency.
pub fn evaluate_run(
    pred_dir: &Path,
    cfg: &RunConfig,
    split: &str,
    label: &str,
) -> Result<EvalReport> {
    let manifest = load_manifest(&cfg.data_dir, split)?;
    let preds = load_predictions(pred_dir)?;
    let by_id: BTreeMap<u64, &PredictionRecord> =
        preds.iter().map(|p| (p.pair_id, p)).collect();
    let missing: Vec<u64> = manifest
        .records
        .iter()
        .map(|r| r.pair_id)
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Input(format!(
            "predictions missing for pair_ids {missing:?}"
        )));
    }

    let atlas = crate::textcorpus::GlyphAtlas::default_atlas();
    let spec = manifest.config.render.clone();
    let net = FrozenFeatureNet::new();

    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    let mut psnrs = Vec::new();
    let mut fonts = Vec::new();
    let mut outputs: Vec<Image> = Vec::new();
    let mut targets: Vec<Image> = Vec::new();
    for rec in &manifest.records {
        let sample = load_record(&cfg.data_dir, rec)?;
        let (src_img, tgt_img, tgt_text) = match cfg.direction {
            Direction::Forward => (&sample.source_image, &sample.target_image, &sample.tgt_text),
            Direction::Reverse => (&sample.target_image, &sample.source_image, &sample.src_text),
        };
        let out = Image::load_png(&pred_dir.join(&by_id[&rec.pair_id].output))?;
        hyps.push(ocr_oracle(&out, &spec, &atlas, MATCH_THRESHOLD)?.text);
        refs.push(tgt_text.clone());
        psnrs.push(psnr(&out, tgt_img)?);
        fonts.push(font_consistency(src_img, &out, &spec, &atlas, MATCH_THRESHOLD)?);
        outputs.push(out);
        targets.push(tgt_img.clone());
    }

    let fd = if outputs.len() >= 2 {
        frechet_distance(&embed_images(&outputs, &net)?, &embed_images(&targets, &net)?)?
    } else {
        0.0
    };
    let n = manifest.records.len();
    Ok(EvalReport {
        label: label.to_string(),
        bleu: corpus_bleu(&hyps, &refs)?,
        wer: corpus_wer(&hyps, &refs)?,
        fd_surrogate: fd,
        mean_psnr: psnrs.iter().sum::<f64>() / n as f64,
        median_psnr: median(&psnrs),
        font_consistency: fonts.iter().sum::<f64>() / n as f64,
        n_samples: n,
        config: cfg.hash(),
    })
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(report)?)?;
    Ok(())
}

/// Stages required for a full pipeline under the given flags.
pub fn full_schedule(use_deback: bool) -> Vec<Stage> {
    let mut stages = Vec::new();
    if use_deback {
        stages.push(Stage::Separation);
    }
    stages.push(Stage::Vq);
    stages.push(Stage::TranslatePretrain);
    stages.push(Stage::TranslateFinetune);
    if use_deback {
        stages.push(Stage::Fusion);
    }
    stages
}

/// Train the full schedule for one configuration.
pub fn run_full_schedule(cfg: &RunConfig) -> Result<Vec<StageReport>> {
    full_schedule(cfg.use_deback)
        .into_iter()
        .map(|s| run_stage(s, cfg))
        .collect()
}

/// Train and evaluate all four {use_pivot, use_deback} combinations.
/// Each run gets its own checkpoint/report subdirectory and a labeled
/// JSON report; returns (label, report path, report) per combination.
pub fn run_ablation_matrix(
    base: &RunConfig,
    split: &str,
) -> Result<Vec<(String, PathBuf, EvalReport)>> {
    let mut results = Vec::new();
    for (use_pivot, use_deback) in [(true, true), (true, false), (false, true), (false, false)] {
        let label = format!(
            "pivot-{}_deback-{}",
            if use_pivot { "on" } else { "off" },
            if use_deback { "on" } else { "off" }
        );
        let mut cfg = base.clone();
        cfg.use_pivot = use_pivot;
        cfg.use_deback = use_deback;
        cfg.checkpoint_dir = base.checkpoint_dir.join(&label);
        cfg.report_dir = base.report_dir.join(&label);
        run_full_schedule(&cfg)?;
        let bundle = PipelineBundle::load(&cfg.checkpoint_dir, cfg.use_deback)?;
        let pred_dir = cfg.report_dir.join("predictions");
        predict_split(&bundle, &cfg, split, &pred_dir)?;
        let report = evaluate_run(&pred_dir, &cfg, split, &label)?;
        let path = base.report_dir.join(format!("{label}.json"));
        write_report(&report, &path)?;
        results.push((label, path, report));
    }
    Ok(results)
}
