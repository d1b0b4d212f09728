use debackx::evalkit::{ocr_oracle, psnr, MATCH_THRESHOLD};
use debackx::imagegen::{load_manifest, load_record};
use debackx::img::Image;
use debackx::textcorpus::GlyphAtlas;
use std::path::PathBuf;

fn main() {
    let root = PathBuf::from(std::env::var("ROOT").unwrap_or("target/overfit3".into()));
    let pred = PathBuf::from(std::env::var("PRED").unwrap_or("target/overfit3/pred2".into()));
    let manifest = load_manifest(&root.join("data"), "train").unwrap();
    let atlas = GlyphAtlas::default_atlas();
    let spec = manifest.config.render.clone();
    for rec in &manifest.records {
        let s = load_record(&root.join("data"), rec).unwrap();
        let out = Image::load_png(&pred.join(format!("train/{:06}_output.png", rec.pair_id))).unwrap();
        let hyp = ocr_oracle(&out, &spec, &atlas, MATCH_THRESHOLD).unwrap().text;
        let p = psnr(&out, &s.target_image).unwrap();
        let mark = if hyp == rec.tgt_text { "  " } else { "XX" };
        println!("{mark} psnr={p:5.2} ref={:?}\n            hyp={hyp:?}", rec.tgt_text);
    }
}
