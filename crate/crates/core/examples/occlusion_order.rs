//! Builds an occlusion graph by hand, asks for removal order and checks it.

use amodal_kit::graph::{InstanceRecord, OcclusionGraph};
use amodal_kit::mask::BinaryMask;
use amodal_kit::scene::{derive_graph, sample_scene, SceneConfig};

fn main() {
    // a table partly hidden by a cup, which a hand covers in turn
    let (w, h) = (40, 30);
    let mut g = OcclusionGraph::new();
    g.insert(InstanceRecord { depth: Some(2), ..InstanceRecord::new("table", BinaryMask::rect(w, h, 0, 15, 40, 30)) });
    g.insert(InstanceRecord { depth: Some(1), ..InstanceRecord::new("cup", BinaryMask::rect(w, h, 10, 8, 18, 20)) });
    g.insert(InstanceRecord { depth: Some(0), ..InstanceRecord::new("hand", BinaryMask::rect(w, h, 14, 5, 30, 25)) });
    g.add_edge("cup", "table");
    g.add_edge("hand", "table");
    g.add_edge("hand", "cup");
    println!("remove from the table, nearest first: {:?}", g.occluders_of("table").unwrap());
    println!("findings: {:?}", g.validate());

    // a contradictory annotation is reported, not fixed
    g.add_edge("table", "hand");
    println!("after adding table -> hand: {:?}", g.validate());

    // the first synthetic scene with any occlusion in it
    let cfg = SceneConfig { min_layers: 3, ..SceneConfig::toy() };
    let derived = (0..)
        .map(|seed| derive_graph(&sample_scene(&cfg, seed).unwrap()))
        .find(|g| g.instances().any(|i| !g.occluders_of(&i.id).unwrap().is_empty()))
        .unwrap();
    for inst in derived.instances() {
        println!("{} is occluded by {:?}", inst.id, derived.occluders_of(&inst.id).unwrap());
    }
}
