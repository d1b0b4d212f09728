use debackx::evalkit::{corpus_bleu, ocr_oracle, psnr, MATCH_THRESHOLD};
use debackx::imagegen::{load_manifest, load_record};
use debackx::pipeline::PipelineBundle;
use debackx::textcorpus::GlyphAtlas;
use std::path::PathBuf;

// BLEU ceiling with a perfect translator: OCR the codec round-trip of the
// golden target text-image, bare and fused onto the separated background.
fn main() {
    let root = PathBuf::from(std::env::var("ROOT").unwrap_or("target/overfit3".into()));
    let bundle = PipelineBundle::load(&root.join("ck"), true).unwrap();
    let codec = &bundle.codec;
    let sep = bundle.separation.as_ref().unwrap();
    let fus = bundle.fusion.as_ref().unwrap();
    let manifest = load_manifest(&root.join("data"), "train").unwrap();
    let atlas = GlyphAtlas::default_atlas();
    let spec = manifest.config.render.clone();

    let (mut bare, mut fused, mut refs) = (vec![], vec![], vec![]);
    let mut ps_bare = vec![];
    let mut ps_fused = vec![];
    for rec in &manifest.records {
        let s = load_record(&root.join("data"), rec).unwrap();
        let codes = codec.encode_image_to_codes(&s.golden_tgt_textimage).unwrap();
        let ti = codec.decode_codes_to_image(&codes).unwrap();
        let (bg, _) = sep.separate(&s.source_image).unwrap();
        let out = fus.fuse(&bg, &ti).unwrap();
        ps_bare.push(psnr(&ti, &s.golden_tgt_textimage).unwrap());
        ps_fused.push(psnr(&out, &s.target_image).unwrap());
        bare.push(ocr_oracle(&ti, &spec, &atlas, MATCH_THRESHOLD).unwrap().text);
        fused.push(ocr_oracle(&out, &spec, &atlas, MATCH_THRESHOLD).unwrap().text);
        refs.push(rec.tgt_text.clone());
    }
    ps_bare.sort_by(|a, b| a.total_cmp(b));
    ps_fused.sort_by(|a, b| a.total_cmp(b));
    println!(
        "bare : bleu {:.2}  median psnr {:.2}",
        corpus_bleu(&bare, &refs).unwrap(),
        ps_bare[ps_bare.len() / 2]
    );
    println!(
        "fused: bleu {:.2}  median psnr {:.2}",
        corpus_bleu(&fused, &refs).unwrap(),
        ps_fused[ps_fused.len() / 2]
    );
}
