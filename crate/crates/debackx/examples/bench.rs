use std::time::Instant;
use debackx::imagegen::{make_background, compose, render_text_image, RenderSpec};
use debackx::neural::frozen::FrozenFeatureNet;
use debackx::neural::transformer::TransformerConfig;
use debackx::separation::{SeparationConfig, SeparationModel};
use debackx::textcorpus::GlyphAtlas;
use debackx::translator::{TranslationBatch, Translator, TranslatorConfig};
use debackx::vqcodec::{VqCodec, VqConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() {
    let (h, w, p) = (32usize, 384usize, 16usize);
    let n = (h / p) * (w / p);
    let atlas = GlyphAtlas::default_atlas();
    let spec = RenderSpec { strip_h: h, strip_w: w, ..RenderSpec::default() };
    let bg = make_background(1, h, w);
    let ti = render_text_image("THE QUICK BROWN FOX JUMPS OVER DOGS", &spec, &atlas).unwrap();
    let x = compose(&bg, &ti).unwrap();
    let net = FrozenFeatureNet::new();
    let mut rng = ChaCha20Rng::seed_from_u64(0);

    let tcfg = |d: usize, l: usize, hd: usize, ff: usize| TransformerConfig {
        d_model: d, layer_count: l, head_count: hd, d_ff: ff, dropout_rate: 0.0, max_positions: n.max(80),
    };

    let sep = SeparationModel::new(SeparationConfig { strip_h: h, strip_w: w, patch_size: p, transformer: tcfg(48, 2, 4, 144), lambda_p: 0.1 }, 1).unwrap();
    let t0 = Instant::now();
    for _ in 0..5 { sep.loss_grads(&x, &bg, &ti, &net, Some(&mut rng)).unwrap(); }
    println!("separation loss_grads (d48 L2): {:?}/step", t0.elapsed() / 5);

    let vq = VqCodec::new(VqConfig { strip_h: h, strip_w: w, patch_size: p, transformer: tcfg(48, 2, 4, 144), codebook_size: 192, d_code: 16, gamma: 0.99, lambda_p: 0.1, reseed_dead_codes: false }, 2).unwrap();
    let t0 = Instant::now();
    for _ in 0..5 { vq.loss_grads(&ti, &net, Some(&mut rng)).unwrap(); }
    println!("vq loss_grads (d48 L2 V192): {:?}/step", t0.elapsed() / 5);

    let tr = Translator::new(TranslatorConfig {
        codebook_size: 192, code_len: n, text_vocab: 80, max_text_len: 64,
        small: tcfg(48, 2, 4, 144), large: tcfg(64, 2, 4, 192), use_pivot: true,
    }, 3).unwrap();
    let batch = TranslationBatch {
        src_codes: (0..n as u32).map(|i| i % 192).collect(),
        tgt_codes: (0..n as u32).map(|i| (i * 7) % 192).collect(),
        tgt_text: vec![1, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23],
    };
    let t0 = Instant::now();
    for _ in 0..5 { tr.loss_grads(&batch, 0, 2, Some(&mut rng)).unwrap(); }
    println!("translator loss_grads: {:?}/step", t0.elapsed() / 5);

    let t0 = Instant::now();
    let out = tr.translate_codes(&batch.src_codes, 1, 2).unwrap();
    println!("translate_codes (untrained, pivot len {}, trunc {}): {:?}", out.pivot_text.len(), out.truncated, t0.elapsed());
}
