use debackx::evalkit::{median, psnr};
use debackx::imagegen::{load_manifest, load_record};
use debackx::pipeline::{build_data, build_pretrain, run_stage, RunConfig, Stage};
use debackx::vqcodec::VqCodec;
use std::path::PathBuf;

fn envf(k: &str, d: f64) -> f64 { std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d) }
fn envu(k: &str, d: u64) -> u64 { std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d) }

fn main() {
    let root = PathBuf::from(std::env::var("ROOT").unwrap_or("target/vqfit".into()));
    let _ = std::fs::remove_dir_all(&root);
    let mut cfg = RunConfig::default();
    cfg.data_dir = root.join("data");
    cfg.checkpoint_dir = root.join("ck");
    cfg.report_dir = root.join("reports");
    cfg.strip_h = envu("STRIP_H", 32) as usize; cfg.strip_w = envu("STRIP_W", 384) as usize; cfg.patch_size = envu("PATCH", 16) as usize;
    cfg.train_records = 32; cfg.valid_records = 2; cfg.test_records = 4;
    cfg.fonts = vec![0];
    cfg.d_model = envu("D_MODEL", 48) as usize; cfg.layers = 2; cfg.heads = 4; cfg.d_ff = 3 * cfg.d_model;
    cfg.dropout = 0.0;
    cfg.vq_codebook_size = envu("V", 192) as usize;
    cfg.vq_d_code = envu("D_CODE", 16) as usize;
    cfg.vq_reseed_dead = envu("RESEED", 1) == 1;
    cfg.vq_gamma = envf("GAMMA", 0.99);
    cfg.steps_vq = envu("VQ", 4000);
    cfg.warmup = envu("WARMUP", 400);
    cfg.lr_scale = envf("LR_SCALE", 0.5);
    cfg.batch_size = envu("BATCH", 1) as usize;
    cfg.log_interval = envu("LOG", 1000);
    cfg.seed = envu("SEED", 42);

    build_data(&cfg).unwrap();
    build_pretrain(&cfg).unwrap();
    let t = std::time::Instant::now();
    let rep = run_stage(Stage::Vq, &cfg).unwrap();
    println!("vq done in {:?}, final loss {:.5}", t.elapsed(), rep.final_loss);

    let (codec, _) = VqCodec::load(&cfg.checkpoint_dir.join("vqcodec")).unwrap();
    let manifest = load_manifest(&cfg.data_dir, "train").unwrap();
    let mut ps = vec![];
    let mut used = std::collections::BTreeSet::new();
    for rec in &manifest.records {
        let s = load_record(&cfg.data_dir, rec).unwrap();
        for ti in [&s.golden_src_textimage, &s.golden_tgt_textimage] {
            let codes = codec.encode_image_to_codes(ti).unwrap();
            used.extend(codes.iter().copied());
            ps.push(psnr(&codec.decode_codes_to_image(&codes).unwrap(), ti).unwrap());
        }
    }
    println!("codec median PSNR: {:.2}  codes in use: {}/{}", median(&ps), used.len(), cfg.vq_codebook_size);
}
