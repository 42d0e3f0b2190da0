//! Removes occluders one at a time with the oracle and the heuristic
//! backends and prints each step.

use amodal_kit::engine::{infer_stepwise, CompletionBackend, HeuristicBackend, OracleBackend};
use amodal_kit::mask::iou;
use amodal_kit::scene::{derive_graph, sample_scene, SceneConfig};

fn main() {
    let cfg = SceneConfig { min_layers: 4, max_layers: 4, ..SceneConfig::toy() };
    let scene = (0..).map(|s| sample_scene(&cfg, s).unwrap()).find(|s| {
        let g = derive_graph(s);
        (0..s.layers.len()).any(|i| g.occluders_of(&s.instance_id(i)).unwrap().len() >= 2 && !s.modal_masks()[i].is_empty())
    });
    let scene = scene.unwrap();
    let graph = derive_graph(&scene);
    let x = scene.composite();
    let modals = scene.modal_masks();
    let i = (0..scene.layers.len()).find(|&i| graph.occluders_of(&scene.instance_id(i)).unwrap().len() >= 2 && !modals[i].is_empty()).unwrap();
    let id = scene.instance_id(i);
    let occluders = graph.occluder_masks(&id).unwrap();
    println!("{id}: {} occluders in removal order {:?}", occluders.len(), graph.occluders_of(&id).unwrap());

    let oracle = OracleBackend::new(vec![scene.layers[i].rgba.clone()]);
    let heuristic = HeuristicBackend::default();
    for b in [&oracle as &dyn CompletionBackend, &heuristic] {
        let r = infer_stepwise(&x, &modals[i], &occluders, b).unwrap();
        println!("{}:", b.identity());
        for s in &r.trace {
            println!("  step {}: occluder {} px, instance {} -> {} px", s.step, s.occluder_area, s.instance_area_before, s.instance_area_after);
        }
        println!("  IoU with the truth {:.4}", iou(&r.mask, &scene.layers[i].amodal).unwrap());
    }
}
