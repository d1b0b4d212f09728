use debackx::evalkit::{median, psnr};
use debackx::imagegen::{load_manifest, load_record};
use debackx::pipeline::{PipelineBundle, RunConfig};
use std::path::PathBuf;

fn main() {
    let root = PathBuf::from(std::env::var("ROOT").unwrap_or("target/overfit".into()));
    let mut cfg = RunConfig::default();
    cfg.data_dir = root.join("data");
    let bundle = PipelineBundle::load(&root.join("ck"), true).unwrap();
    let manifest = load_manifest(&cfg.data_dir, "train").unwrap();

    let mut codec_ps = vec![];
    let mut tok_acc = vec![];
    let mut exact = 0usize;
    let mut pivot_ok = 0usize;
    let n = manifest.records.len();
    for rec in &manifest.records {
        let s = load_record(&cfg.data_dir, rec).unwrap();
        let tgt_ti = &s.golden_tgt_textimage;
        let src_ti = &s.golden_src_textimage;
        // codec round trip on the golden target text-image
        let codes = bundle.codec.encode_image_to_codes(tgt_ti).unwrap();
        let rec_img = bundle.codec.decode_codes_to_image(&codes).unwrap();
        codec_ps.push(psnr(&rec_img, tgt_ti).unwrap());
        // translator: golden src codes -> predicted tgt codes vs golden tgt codes
        let src_codes = bundle.codec.encode_image_to_codes(src_ti).unwrap();
        let out = bundle
            .translator
            .translate_codes(&src_codes, bundle.bpe.bos_id(), bundle.bpe.eos_id())
            .unwrap();
        let agree = out
            .tgt_codes
            .iter()
            .zip(codes.iter())
            .filter(|(a, b)| a == b)
            .count();
        tok_acc.push(agree as f64 / codes.len() as f64);
        if out.tgt_codes == codes {
            exact += 1;
        }
        let pivot: Vec<u32> = out
            .pivot_text
            .iter()
            .copied()
            .filter(|&t| t != bundle.bpe.pad_id() && t != bundle.bpe.bos_id() && t != bundle.bpe.eos_id())
            .collect();
        let pivot_text = bundle.bpe.decode(&pivot).unwrap_or_default();
        if pivot_text == rec.tgt_text {
            pivot_ok += 1;
        }
        if codec_ps.len() <= 3 {
            println!("pivot: {:?}  vs  {:?}", pivot_text, rec.tgt_text);
        }
    }
    let mut used = std::collections::BTreeMap::<u32, usize>::new();
    let mut distinct_seqs = std::collections::BTreeSet::new();
    for rec in &manifest.records {
        let s = load_record(&cfg.data_dir, rec).unwrap();
        let codes = bundle.codec.encode_image_to_codes(&s.golden_src_textimage).unwrap();
        for &c in &codes { *used.entry(c).or_default() += 1; }
        distinct_seqs.insert(codes);
    }
    println!("distinct src code sequences: {}/{n}", distinct_seqs.len());
    println!("codebook codes in use: {}", used.len());
    println!("codec median PSNR on golden tgt textimages: {:.2}", median(&codec_ps));
    println!("translator code token accuracy median: {:.3}", median(&tok_acc));
    println!("translator exact code-seq match: {exact}/{n}");
    println!("pivot exact text match: {pivot_ok}/{n}");
}
