//! Building and persisting datasets of subtitle strips.
//!
//! Every record stores the composed source/target strips plus the golden
//! decomposition (background and both text-images) so downstream models
//! get exact supervision targets. A manifest line per record keeps the
//! dataset reproducible and inspectable.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagegen::{compose, make_background, render_text_image, RenderSpec};
use crate::img::Image;
use crate::textcorpus::{GlyphAtlas, ParallelPair};

/// Counts, fonts, and geometry for one dataset build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub fonts: Vec<usize>,
    pub seed: u64,
    pub render: RenderSpec,
}

/// One line of a manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub pair_id: u64,
    pub paths: BTreeMap<String, String>,
    pub src_text: String,
    pub tgt_text: String,
    pub font_id: usize,
    pub background_seed: u64,
    pub crop_offset: (usize, usize),
    pub kind: String,
}

/// A split's manifest: records in pair order plus the build snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: String,
    pub records: Vec<ManifestRecord>,
    pub config: DatasetConfig,
    pub seed: u64,
}

/// Result of a dataset build: the written manifests and a skip count.
#[derive(Debug)]
pub struct BuildReport {
    pub manifests: Vec<DatasetManifest>,
    pub skipped: usize,
}

/// One loaded dataset item.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub pair_id: u64,
    pub source_image: Image,
    pub target_image: Image,
    pub src_text: String,
    pub tgt_text: String,
    pub font_id: usize,
    pub background_seed: u64,
    pub crop_offset: (usize, usize),
    pub golden_background: Option<Image>,
    pub golden_src_textimage: Image,
    pub golden_tgt_textimage: Image,
}

fn background_seed_for(global_seed: u64, pair_id: u64) -> u64 {
    global_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(pair_id.wrapping_mul(0x2545_F491_4F6C_DD1D))
}

/// Build composed train/valid/test splits from a parallel corpus.
///
/// Overlong captions are skipped and counted; the requested split sizes
/// must still be satisfiable from the remaining pairs.
pub fn build_dataset(
    config: &DatasetConfig,
    corpus: &[ParallelPair],
    atlas: &GlyphAtlas,
    out_dir: &Path,
) -> Result<BuildReport> {
    build(config, corpus, atlas, out_dir, "composed", None)
}

/// Build a text-image-only pretraining set: black background, no
/// composition, every pair used.
pub fn build_pretrain_set(
    corpus: &[ParallelPair],
    render: &RenderSpec,
    atlas: &GlyphAtlas,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let config = DatasetConfig {
        train: corpus.len(),
        valid: 0,
        test: 0,
        fonts: vec![render.font_id],
        seed,
        render: render.clone(),
    };
    let mut report = build(&config, corpus, atlas, out_dir, "textimage", Some("pretrain"))?;
    Ok(report.manifests.remove(0))
}

fn build(
    config: &DatasetConfig,
    corpus: &[ParallelPair],
    atlas: &GlyphAtlas,
    out_dir: &Path,
    kind: &str,
    single_split: Option<&str>,
) -> Result<BuildReport> {
    if config.fonts.is_empty() {
        return Err(Error::Config("dataset config lists no fonts".into()));
    }
    let wanted = config.train + config.valid + config.test;
    if corpus.len() < wanted {
        return Err(Error::Config(format!(
            "corpus has {} pairs, config requests {wanted}",
            corpus.len()
        )));
    }
    let splits: Vec<(String, usize)> = match single_split {
        Some(name) => vec![(name.to_string(), config.train)],
        None => vec![
            ("train".to_string(), config.train),
            ("valid".to_string(), config.valid),
            ("test".to_string(), config.test),
        ],
    };
    std::fs::create_dir_all(out_dir)?;

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);

    let max_len = config.render.max_text_len(atlas);
    let mut skipped = 0usize;
    let mut accepted = 0usize;
    let mut cursor = 0usize;
    let mut manifests = Vec::new();

    for (split, count) in splits {
        let split_dir = out_dir.join(&split);
        std::fs::create_dir_all(&split_dir)?;
        let mut records = Vec::with_capacity(count);
        while records.len() < count {
            let Some(&idx) = order.get(cursor) else {
                return Err(Error::Config(format!(
                    "corpus exhausted while filling split {split:?} ({skipped} pairs skipped)"
                )));
            };
            cursor += 1;
            let pair = &corpus[idx];
            if pair.src_text.chars().count() > max_len || pair.tgt_text.chars().count() > max_len {
                skipped += 1;
                continue;
            }
            let font_id = config.fonts[accepted % config.fonts.len()];
            accepted += 1;
            let spec = RenderSpec {
                font_id,
                ..config.render.clone()
            };
            let background_seed = background_seed_for(config.seed, pair.pair_id);
            let crop_row = rng.gen_range(0..=config.render.base_h - config.render.strip_h);

            let src_ti = render_text_image(&pair.src_text, &spec, atlas)?;
            let tgt_ti = render_text_image(&pair.tgt_text, &spec, atlas)?;
            let mut paths = BTreeMap::new();
            let file = |role: &str| format!("{split}/{:06}_{role}.png", pair.pair_id);

            if kind == "composed" {
                let bg = make_background(background_seed, spec.strip_h, spec.strip_w);
                let source = compose(&bg, &src_ti)?;
                let target = compose(&bg, &tgt_ti)?;
                for (role, img) in [
                    ("source", &source),
                    ("target", &target),
                    ("background", &bg),
                    ("src_textimage", &src_ti),
                    ("tgt_textimage", &tgt_ti),
                ] {
                    let rel = file(role);
                    img.save_png(&out_dir.join(&rel))?;
                    paths.insert(role.to_string(), rel);
                }
            } else {
                for (role, img) in [("src_textimage", &src_ti), ("tgt_textimage", &tgt_ti)] {
                    let rel = file(role);
                    img.save_png(&out_dir.join(&rel))?;
                    paths.insert(role.to_string(), rel);
                }
            }

            records.push(ManifestRecord {
                pair_id: pair.pair_id,
                paths,
                src_text: pair.src_text.clone(),
                tgt_text: pair.tgt_text.clone(),
                font_id,
                background_seed,
                crop_offset: (crop_row, 0),
                kind: kind.to_string(),
            });
        }
        let manifest = DatasetManifest {
            split: split.clone(),
            records,
            config: config.clone(),
            seed: config.seed,
        };
        save_manifest(&manifest, out_dir)?;
        manifests.push(manifest);
    }

    std::fs::write(
        out_dir.join("skip_report.txt"),
        format!("skipped_overlong_pairs\t{skipped}\n"),
    )?;
    Ok(BuildReport { manifests, skipped })
}

fn save_manifest(manifest: &DatasetManifest, out_dir: &Path) -> Result<()> {
    let mut body = String::new();
    for rec in &manifest.records {
        body.push_str(&serde_json::to_string(rec)?);
        body.push('\n');
    }
    std::fs::write(out_dir.join(format!("{}.jsonl", manifest.split)), body)?;
    let meta = serde_json::json!({
        "split": manifest.split,
        "seed": manifest.seed,
        "count": manifest.records.len(),
        "config": manifest.config,
    });
    std::fs::write(
        out_dir.join(format!("{}.meta.json", manifest.split)),
        serde_json::to_string_pretty(&meta)?,
    )?;
    Ok(())
}

/// Load a split's manifest from a dataset directory.
pub fn load_manifest(dir: &Path, split: &str) -> Result<DatasetManifest> {
    let jsonl = dir.join(format!("{split}.jsonl"));
    if !jsonl.exists() {
        return Err(Error::Dependency(format!(
            "manifest {} not found",
            jsonl.display()
        )));
    }
    let body = std::fs::read_to_string(&jsonl)?;
    let mut records = Vec::new();
    for line in body.lines() {
        if !line.is_empty() {
            records.push(serde_json::from_str(line)?);
        }
    }
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{split}.meta.json")))?)?;
    let config: DatasetConfig = serde_json::from_value(meta["config"].clone())?;
    Ok(DatasetManifest {
        split: split.to_string(),
        records,
        seed: meta["seed"].as_u64().unwrap_or(config.seed),
        config,
    })
}

/// Load one record's images from disk.
pub fn load_record(dir: &Path, rec: &ManifestRecord) -> Result<SampleRecord> {
    let load = |role: &str| -> Result<Image> {
        let rel: &String = rec
            .paths
            .get(role)
            .ok_or_else(|| Error::Input(format!("record {} lacks a {role} image", rec.pair_id)))?;
        Image::load_png(&dir.join(rel))
    };
    let golden_src_textimage = load("src_textimage")?;
    let golden_tgt_textimage = load("tgt_textimage")?;
    let (source_image, target_image, golden_background) = if rec.kind == "composed" {
        (load("source")?, load("target")?, Some(load("background")?))
    } else {
        (
            golden_src_textimage.clone(),
            golden_tgt_textimage.clone(),
            None,
        )
    };
    Ok(SampleRecord {
        pair_id: rec.pair_id,
        source_image,
        target_image,
        src_text: rec.src_text.clone(),
        tgt_text: rec.tgt_text.clone(),
        font_id: rec.font_id,
        background_seed: rec.background_seed,
        crop_offset: rec.crop_offset,
        golden_background,
        golden_src_textimage,
        golden_tgt_textimage,
    })
}
