//! Drives the review queue in memory: initial completion, a variant grid,
//! a human selection and an annotation, then exports the result.

use amodal_kit::cosynth::{Actor, CosynthService, Decision, IdentityRefiner, ServiceConfig, StubAnnotator};
use amodal_kit::engine::OracleBackend;
use amodal_kit::scene::{emit_dataset, sample_corpus, SceneConfig};

fn main() {
    let dir = std::env::temp_dir().join("amodal-review-example");
    let _ = std::fs::remove_dir_all(&dir);
    let m = emit_dataset(&sample_corpus(&SceneConfig { min_layers: 3, ..SceneConfig::toy() }, 2, 4).unwrap(), &dir.join("dataset")).unwrap();
    let truths = m.occluded().map(|r| m.load_amodal(r).unwrap()).collect();
    let oracle = OracleBackend::new(truths);

    let svc = CosynthService::open(&dir.join("service"), ServiceConfig::default()).unwrap();
    println!("enqueued {}", svc.enqueue(&m).unwrap());
    let reviewer = Actor::Human("reviewer".into());
    for rec in m.occluded() {
        svc.run_initial(&rec.id, &oracle, &Actor::System).unwrap();
        let it = svc.refine(&rec.id, &IdentityRefiner, 1, &Actor::System).unwrap();
        let pick = it.variants.last().unwrap().id.clone();
        svc.decide(&rec.id, Decision::Select { variant: pick }, &reviewer, Some(it.version)).unwrap();
        let it = svc.annotate(&rec.id, &StubAnnotator, &reviewer).unwrap();
        println!("{} -> {} ({})", it.id, it.state, it.annotation.as_ref().unwrap().caption);
    }
    for h in &svc.item(&m.occluded().next().unwrap().id).unwrap().history {
        println!("  #{} {:?}: {}", h.seq, h.actor, h.what);
    }
    println!("replay matches live state: {}", svc.replay_matches().unwrap());
    let sum = svc.export(&dir.join("export")).unwrap();
    println!("exported {} pairs to {}", sum.pairs, sum.dir.display());
}
