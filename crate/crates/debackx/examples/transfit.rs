use debackx::imagegen::{load_manifest, load_record};
use debackx::neural::optim::{lr_at, AdamState, AdamWConfig};
use debackx::neural::TransformerConfig;
use debackx::textcorpus::BpeModel;
use debackx::translator::{TranslationBatch, Translator, TranslatorConfig};
use debackx::vqcodec::VqCodec;
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use std::path::PathBuf;

fn envf(k: &str, d: f64) -> f64 { std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d) }
fn envu(k: &str, d: u64) -> u64 { std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d) }

fn main() {
    // Reuses the dataset + codec checkpoint from a previous overfit run.
    let root = PathBuf::from(std::env::var("ROOT").unwrap_or("target/overfit2".into()));
    let (codec, _) = VqCodec::load(&root.join("ck/vqcodec")).unwrap();
    let bpe = BpeModel::load(&root.join("data/bpe.model")).unwrap();
    let manifest = load_manifest(&root.join("data"), "train").unwrap();

    let mut batches = vec![];
    for rec in &manifest.records {
        let s = load_record(&root.join("data"), rec).unwrap();
        let src_codes = codec.encode_image_to_codes(&s.golden_src_textimage).unwrap();
        let tgt_codes = codec.encode_image_to_codes(&s.golden_tgt_textimage).unwrap();
        let mut tgt_text = vec![bpe.bos_id()];
        tgt_text.extend(bpe.encode(&rec.tgt_text).unwrap());
        batches.push((rec.tgt_text.clone(), TranslationBatch { src_codes, tgt_codes, tgt_text }));
    }
    let n = batches.len();
    let code_len = batches[0].1.src_codes.len();
    let max_text = batches.iter().map(|(_, b)| b.tgt_text.len()).max().unwrap() + 4;

    let d_s = envu("D_S", 48) as usize;
    let d_l = envu("D_L", 64) as usize;
    let cfg = TranslatorConfig {
        codebook_size: codec.book.v(),
        code_len,
        text_vocab: bpe.vocab_size(),
        max_text_len: max_text,
        small: TransformerConfig {
            d_model: d_s, layer_count: envu("LAYERS", 2) as usize, head_count: 4,
            d_ff: 3 * d_s, dropout_rate: 0.0,
            max_positions: code_len.max(max_text + 1),
        },
        large: TransformerConfig {
            d_model: d_l, layer_count: envu("LAYERS", 2) as usize, head_count: 4,
            d_ff: 3 * d_l, dropout_rate: 0.0,
            max_positions: code_len,
        },
        use_pivot: true,
    };
    let mut model = Translator::new(cfg, 7).unwrap();
    let mut opt = AdamState::new(&model.store);
    let opt_cfg = AdamWConfig::default();
    let mut rng = ChaCha20Rng::seed_from_u64(9);

    let steps = envu("STEPS", 6000);
    let warmup = envu("WARMUP", 400);
    let lr_scale = envf("LR_SCALE", 0.5);
    let batch_size = envu("BATCH", 1) as usize;
    let t0 = std::time::Instant::now();
    for step in 1..=steps {
        let lr = lr_at(step, warmup, d_s).unwrap() * lr_scale;
        let mut acc: Option<Vec<Array2<f64>>> = None;
        let mut loss_sum = 0.0;
        for _ in 0..batch_size {
            let (_, b) = &batches[rng.gen_range(0..n)];
            let (rep, grads) = model.loss_grads(b, bpe.pad_id(), bpe.eos_id(), None).unwrap();
            loss_sum += rep.total;
            acc = Some(match acc {
                None => grads,
                Some(mut a) => {
                    for (x, gr) in a.iter_mut().zip(grads) { *x += &gr; }
                    a
                }
            });
        }
        let mut grads = acc.unwrap();
        for gr in grads.iter_mut() { *gr /= batch_size as f64; }
        debackx::neural::optim::adamw_step(&mut model.store, &grads, &mut opt, lr, &opt_cfg).unwrap();
        if step % envu("LOG", 500) == 0 || step == 1 {
            println!("step {step:5} lr {lr:.2e} loss {:.4}", loss_sum / batch_size as f64);
        }
    }
    println!("trained in {:?}", t0.elapsed());

    let mut exact = 0;
    let mut pivot_ok = 0;
    let mut tok_hits = 0usize;
    let mut tok_total = 0usize;
    for (tgt_text, b) in &batches {
        let out = model.translate_codes(&b.src_codes, bpe.bos_id(), bpe.eos_id()).unwrap();
        if out.tgt_codes == b.tgt_codes { exact += 1; }
        tok_hits += out.tgt_codes.iter().zip(&b.tgt_codes).filter(|(a, c)| a == c).count();
        tok_total += b.tgt_codes.len();
        let toks: Vec<u32> = out.pivot_text.iter().copied()
            .filter(|&t| t != bpe.pad_id() && t != bpe.bos_id() && t != bpe.eos_id()).collect();
        if &bpe.decode(&toks).unwrap_or_default() == tgt_text { pivot_ok += 1; }
    }
    println!(
        "exact code seq {exact}/{n}  code token acc {:.3}  pivot exact {pivot_ok}/{n}",
        tok_hits as f64 / tok_total as f64
    );
}
