use debackx::evalkit::{median, psnr};
use debackx::imagegen::{load_manifest, load_record};
use debackx::neural::frozen::FrozenFeatureNet;
use debackx::neural::optim::{lr_at, AdamState, AdamWConfig};
use debackx::pipeline::{build_data, RunConfig};
use debackx::vqcodec::{VqCodec, VqConfig};
use debackx::neural::TransformerConfig;
use debackx::img::Image;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use std::path::PathBuf;

fn envf(k: &str, d: f64) -> f64 { std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d) }
fn envu(k: &str, d: u64) -> u64 { std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d) }

fn main() {
    let root = PathBuf::from(std::env::var("ROOT").unwrap_or("target/vqdiag".into()));
    let _ = std::fs::remove_dir_all(&root);
    let mut cfg = RunConfig::default();
    cfg.data_dir = root.join("data");
    cfg.strip_h = envu("STRIP_H", 16) as usize;
    cfg.strip_w = envu("STRIP_W", 384) as usize;
    cfg.patch_size = envu("PATCH", 8) as usize;
    cfg.train_records = envu("N_REC", 32) as usize; cfg.valid_records = 2; cfg.test_records = 4;
    cfg.fonts = vec![0];
    cfg.seed = envu("SEED", 42);
    build_data(&cfg).unwrap();

    let d_model = envu("D_MODEL", 48) as usize;
    let vq_cfg = VqConfig {
        strip_h: cfg.strip_h, strip_w: cfg.strip_w, patch_size: cfg.patch_size,
        transformer: TransformerConfig {
            d_model, layer_count: 2, head_count: 4, d_ff: 3 * d_model,
            dropout_rate: 0.0,
            max_positions: (cfg.strip_h / cfg.patch_size) * (cfg.strip_w / cfg.patch_size),
        },
        codebook_size: envu("V", 512) as usize,
        d_code: envu("D_CODE", 32) as usize,
        gamma: envf("GAMMA", 0.99),
        lambda_p: 0.1,
        reseed_dead_codes: envu("RESEED", 1) == 1,
    };
    let mut model = VqCodec::new(vq_cfg, cfg.seed ^ 1).unwrap();
    let net = FrozenFeatureNet::new();
    let mut opt = AdamState::new(&model.store);
    let opt_cfg = AdamWConfig::default();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 2);

    let manifest = load_manifest(&cfg.data_dir, "train").unwrap();
    let mut imgs: Vec<Image> = vec![];
    for rec in &manifest.records {
        let s = load_record(&cfg.data_dir, rec).unwrap();
        imgs.push(s.golden_src_textimage.clone());
        imgs.push(s.golden_tgt_textimage.clone());
    }

    let steps = envu("STEPS", 4000);
    let warmup = envu("WARMUP", 400);
    let lr_scale = envf("LR_SCALE", 0.5);
    let t0 = std::time::Instant::now();
    for step in 1..=steps {
        let img = &imgs[rng.gen_range(0..imgs.len())];
        let lr = lr_at(step, warmup, d_model).unwrap() * lr_scale;
        let report = model.train_step(img, &net, &mut opt, &opt_cfg, lr, &mut rng).unwrap();
        if step == 1 || step % envu("LOG", 500) == 0 || step == steps {
            // live PSNR on 8 fixed images
            let mut ps = vec![];
            let mut used = std::collections::BTreeSet::new();
            for im in imgs.iter().take(8) {
                let codes = model.encode_image_to_codes(im).unwrap();
                used.extend(codes.iter().copied());
                ps.push(psnr(&model.decode_codes_to_image(&codes).unwrap(), im).unwrap());
            }
            println!(
                "step {step:5} lr {lr:.2e} recon {:.5} percep {:.5} commit {:.5} | live psnr {:.2} codes(8img) {}",
                report.recon, report.perceptual, report.commitment, median(&ps), used.len()
            );
        }
    }
    println!("trained in {:?}", t0.elapsed());
    let mut ps = vec![];
    for im in &imgs {
        let codes = model.encode_image_to_codes(im).unwrap();
        ps.push(psnr(&model.decode_codes_to_image(&codes).unwrap(), im).unwrap());
    }
    println!("final median PSNR over {} images: {:.2}", imgs.len(), median(&ps));
}
