//! End-to-end inference: load a bundle of trained components and run
//! separate -> encode -> translate -> decode -> fuse on one image.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::separation::SeparationModel;
use crate::textcorpus::BpeModel;
use crate::translator::Translator;
use crate::vqcodec::VqCodec;

/// All trained components needed for inference. Separation and fusion are
/// absent in the direct (use_deback = false) variant.
pub struct PipelineBundle {
    pub separation: Option<SeparationModel>,
    pub codec: VqCodec,
    pub translator: Translator,
    pub fusion: Option<crate::fusion::FusionModel>,
    pub bpe: BpeModel,
    pub use_deback: bool,
}

/// Everything produced along the way, for inspection and evaluation.
pub struct TranslationOutcome {
    pub output: Image,
    pub background: Option<Image>,
    pub src_textimage: Option<Image>,
    pub tgt_textimage: Image,
    pub src_codes: Vec<u32>,
    pub tgt_codes: Vec<u32>,
    pub pivot_tokens: Vec<u32>,
    pub pivot_text: String,
    pub truncated: bool,
}

impl PipelineBundle {
    /// Load checkpoints from a bundle directory (the training run's
    /// checkpoint dir) and verify geometry/codebook compatibility.
    pub fn load(dir: &Path, use_deback: bool) -> Result<PipelineBundle> {
        let sub = |name: &str| -> PathBuf { dir.join(name) };
        let (codec, _) = VqCodec::load(&sub("vqcodec"))?;
        let (translator, _) = Translator::load(&sub("translator"))?;
        let bpe_path = dir.join("bpe.model");
        if !bpe_path.exists() {
            return Err(Error::Dependency(format!(
                "bundle is missing the tokenizer at {}",
                bpe_path.display()
            )));
        }
        let bpe = BpeModel::load(&bpe_path)?;

        if translator.config.code_len != codec.grid.n() {
            return Err(Error::Config(format!(
                "bundle mismatch: translator code_len {} vs codec grid N {}",
                translator.config.code_len,
                codec.grid.n()
            )));
        }
        if translator.config.codebook_size != codec.book.v() {
            return Err(Error::Config(format!(
                "bundle mismatch: translator codebook {} vs codec codebook {}",
                translator.config.codebook_size,
                codec.book.v()
            )));
        }
        if translator.config.text_vocab != bpe.vocab_size() {
            return Err(Error::Config(format!(
                "bundle mismatch: translator text vocab {} vs tokenizer vocab {}",
                translator.config.text_vocab,
                bpe.vocab_size()
            )));
        }

        let (separation, fusion) = if use_deback {
            let (sep, _) = SeparationModel::load(&sub("separation"))?;
            let (fus, _) = crate::fusion::FusionModel::load(&sub("fusion"))?;
            if sep.grid != codec.grid || fus.grid != codec.grid {
                return Err(Error::Config(
                    "bundle mismatch: separation/fusion grid differs from codec grid".into(),
                ));
            }
            (Some(sep), Some(fus))
        } else {
            (None, None)
        };

        Ok(PipelineBundle {
            separation,
            codec,
            translator,
            fusion,
            bpe,
            use_deback,
        })
    }
}

/// Render the pivot token sequence back to a string, dropping the
/// PAD/BOS/EOS specials.
fn pivot_string(bpe: &BpeModel, tokens: &[u32]) -> Result<String> {
    let body: Vec<u32> = tokens
        .iter()
        .copied()
        .filter(|&t| t != bpe.pad_id() && t != bpe.bos_id() && t != bpe.eos_id())
        .collect();
    bpe.decode(&body)
}

/// Full inference on one source image. With `use_deback` the image is
/// separated first and the translated text-image is fused back onto the
/// recovered background; the direct variant tokenizes the raw source and
/// the decoded image is the final output.
pub fn translate_end_to_end(src: &Image, bundle: &PipelineBundle) -> Result<TranslationOutcome> {
    let (background, src_textimage, encode_input) = if bundle.use_deback {
        let sep = bundle
            .separation
            .as_ref()
            .ok_or_else(|| Error::Config("bundle lacks a separation model".into()))?;
        let (bg, ti) = sep.separate(src)?;
        (Some(bg), Some(ti.clone()), ti)
    } else {
        (None, None, src.clone())
    };

    let src_codes = bundle.codec.encode_image_to_codes(&encode_input)?;
    let dec = bundle
        .translator
        .translate_codes(&src_codes, bundle.bpe.bos_id(), bundle.bpe.eos_id())?;
    let tgt_textimage = bundle.codec.decode_codes_to_image(&dec.tgt_codes)?;

    let output = if bundle.use_deback {
        let fusion = bundle
            .fusion
            .as_ref()
            .ok_or_else(|| Error::Config("bundle lacks a fusion model".into()))?;
        fusion.fuse(background.as_ref().unwrap(), &tgt_textimage)?
    } else {
        tgt_textimage.clone()
    };

    let pivot_text = pivot_string(&bundle.bpe, &dec.pivot_text)?;
    Ok(TranslationOutcome {
        output,
        background,
        src_textimage,
        tgt_textimage,
        src_codes,
        tgt_codes: dec.tgt_codes,
        pivot_tokens: dec.pivot_text,
        pivot_text,
        truncated: dec.truncated,
    })
}
