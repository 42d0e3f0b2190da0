//! Trains a small full-completion denoiser for a short while and samples
//! several completions of held-out instances.
//!
//! cargo run --release --example toy_diffusion -- [steps]

use amodal_kit::diffusion::{train_toy, BlockCodec, DdimConfig, Mode, TrainConfig, TrainExample};
use amodal_kit::engine::{full_example, infer_full, ToyDiffusionBackend};
use amodal_kit::eval::{EvalRecord, EvalReport};
use amodal_kit::mask::iou;
use amodal_kit::scene::{occluded_pairs, SceneConfig};

fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let codec = BlockCodec::default();
    let train = occluded_pairs(&SceneConfig::toy(), 1, 400).unwrap();
    let test = occluded_pairs(&SceneConfig::toy(), 2, 40).unwrap();
    let examples: Vec<TrainExample> = train.iter().map(|p| full_example(&codec, &p.image, &p.modal, &p.category, &p.amodal).unwrap()).collect();

    let cfg = TrainConfig { steps, batch_size: 8, ..Default::default() };
    let tm = train_toy(&examples, Mode::Full, &codec, &cfg).unwrap();
    println!("loss {:.4} -> {:.4} in {:.1} s", tm.curve.first().unwrap(), tm.curve.tail_mean(20).unwrap(), tm.curve.seconds);

    let backend = ToyDiffusionBackend::new(32, DdimConfig { steps: 10, clip: Some(1.0), ..Default::default() }).with_full(tm.denoiser, tm.schedule);
    let mut records = Vec::new();
    let mut modal_only = 0.0;
    for (j, p) in test.iter().enumerate() {
        let vs = infer_full(&p.image, &p.modal, Some(&p.category), &backend, 4, j as u64).unwrap();
        let masks = vs.into_iter().map(|v| v.unwrap().mask).collect();
        records.push(EvalRecord::new(p.id.clone(), masks, p.amodal.alpha_mask(), p.occlusion_pct).unwrap());
        modal_only += iou(&p.modal, &p.amodal.alpha_mask()).unwrap() / test.len() as f64;
    }
    let report = EvalReport::build(&records, &[1, 2, 4], None).unwrap();
    println!("visible mask alone: mIoU {modal_only:.4}");
    for (k, v) in &report.best_of_k {
        println!("best of {k}: {v:.4}");
    }
}
