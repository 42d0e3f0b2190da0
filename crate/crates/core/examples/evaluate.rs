//! Scores heuristic completions: best-of-k, occlusion bins and the
//! Fréchet-distance proxy between completions and truths.

use amodal_kit::engine::{infer_full, HeuristicBackend};
use amodal_kit::eval::{fid_proxy, EvalRecord, EvalReport, HandcraftedFeatures};
use amodal_kit::scene::{occluded_pairs, SceneConfig};

fn main() {
    let pairs = occluded_pairs(&SceneConfig::default(), 3, 150).unwrap();
    let b = HeuristicBackend::default();
    let mut records = Vec::new();
    let (mut preds, mut truths) = (Vec::new(), Vec::new());
    for (j, p) in pairs.iter().enumerate() {
        let vs: Vec<_> = infer_full(&p.image, &p.modal, None, &b, 2, j as u64).unwrap().into_iter().map(|v| v.unwrap()).collect();
        preds.push(vs[0].rgba.clone());
        truths.push(p.amodal.clone());
        records.push(EvalRecord::new(p.id.clone(), vs.into_iter().map(|c| c.mask).collect(), p.amodal.alpha_mask(), p.occlusion_pct).unwrap());
    }
    let fid = fid_proxy(&HandcraftedFeatures, &preds, &truths).ok();
    let report = EvalReport::build(&records, &[1, 2], fid).unwrap();
    print!("{}", report.to_csv());
}
