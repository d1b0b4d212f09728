use debackx::evalkit::{median, psnr};
use debackx::imagegen::{load_manifest, load_record};
use debackx::pipeline::{
    build_data, build_pretrain, evaluate_run, predict_split, run_stage, PipelineBundle, RunConfig,
    Stage,
};
use std::path::PathBuf;

fn envf(k: &str, d: f64) -> f64 { std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d) }
fn envu(k: &str, d: u64) -> u64 { std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d) }

fn main() {
    let root = PathBuf::from(std::env::var("ROOT").unwrap_or("target/overfit".into()));
    let _ = std::fs::remove_dir_all(&root);
    let mut cfg = RunConfig::default();
    cfg.data_dir = root.join("data");
    cfg.checkpoint_dir = root.join("ck");
    cfg.report_dir = root.join("reports");
    cfg.strip_h = envu("STRIP_H", 32) as usize; cfg.strip_w = envu("STRIP_W", 384) as usize; cfg.patch_size = envu("PATCH", 16) as usize;
    cfg.train_records = 32; cfg.valid_records = 2; cfg.test_records = 4;
    cfg.fonts = std::env::var("FONTS").unwrap_or("0".into()).split(',').map(|f| f.parse().unwrap()).collect();
    cfg.d_model = envu("D_MODEL", 48) as usize; cfg.layers = 2; cfg.heads = 4; cfg.d_ff = 3 * cfg.d_model;
    cfg.dropout = 0.0; cfg.vq_codebook_size = envu("V", 192) as usize; cfg.vq_d_code = envu("D_CODE", 16) as usize;
    cfg.vq_reseed_dead = envu("RESEED", 0) == 1;
    cfg.vq_gamma = envf("GAMMA", 0.99);
    cfg.trans_small_d_model = 48; cfg.trans_small_d_ff = 144;
    cfg.trans_large_d_model = 64; cfg.trans_large_d_ff = 192;
    cfg.steps_separation = envu("SEP", 2000);
    cfg.steps_vq = envu("VQ", 4000);
    cfg.steps_translate_pretrain = envu("TP", 4000);
    cfg.steps_translate_finetune = envu("TF", 2000);
    cfg.steps_fusion = envu("FUS", 1500);
    cfg.warmup = envu("WARMUP", 400);
    cfg.lr_scale = envf("LR_SCALE", 0.5);
    cfg.batch_size = envu("BATCH", 1) as usize;
    cfg.log_interval = envu("LOG", 500);
    cfg.seed = envu("SEED", 42);

    let t0 = std::time::Instant::now();
    build_data(&cfg).unwrap();
    build_pretrain(&cfg).unwrap();
    println!("data built in {:?}", t0.elapsed());
    for stage in [Stage::Separation, Stage::Vq, Stage::TranslatePretrain, Stage::TranslateFinetune, Stage::Fusion] {
        let t = std::time::Instant::now();
        let rep = run_stage(stage, &cfg).unwrap();
        println!("== {} done in {:?}, final loss {:.5}", rep.stage, t.elapsed(), rep.final_loss);
    }

    let bundle = PipelineBundle::load(&cfg.checkpoint_dir, true).unwrap();
    let t = std::time::Instant::now();
    let pred_dir = root.join("pred_train");
    predict_split(&bundle, &cfg, "train", &pred_dir).unwrap();
    println!("inference on train split in {:?}", t.elapsed());
    let report = evaluate_run(&pred_dir, &cfg, "train", "overfit").unwrap();
    println!("criterion8: bleu={:.2} wer={:.3} median_psnr={:.2} mean_psnr={:.2} fd={:.3} fonts={:.3}",
        report.bleu, report.wer, report.median_psnr, report.mean_psnr, report.fd_surrogate, report.font_consistency);

    // criterion 9: fuse(separate(x)) vs x and background PSNR
    let manifest = load_manifest(&cfg.data_dir, "train").unwrap();
    let sep = bundle.separation.as_ref().unwrap();
    let fus = bundle.fusion.as_ref().unwrap();
    let mut id_ps = vec![]; let mut bg_ps = vec![];
    for rec in &manifest.records {
        let s = load_record(&cfg.data_dir, rec).unwrap();
        let (bg, ti) = sep.separate(&s.source_image).unwrap();
        id_ps.push(psnr(&fus.fuse(&bg, &ti).unwrap(), &s.source_image).unwrap());
        bg_ps.push(psnr(&bg, s.golden_background.as_ref().unwrap()).unwrap());
    }
    println!("criterion9: identity median {:.2} dB, background median {:.2} dB", median(&id_ps), median(&bg_ps));
    println!("total {:?}", t0.elapsed());
}
