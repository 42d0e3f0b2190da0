//! Samples layered scenes, writes them as a dataset and prints its statistics.
//!
//! cargo run --example synth_scenes -- [out_dir] [scenes]

use amodal_kit::scene::{emit_dataset, sample_corpus, statistics, SceneConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| std::env::temp_dir().join("amodal-synth").display().to_string());
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(50);

    let scenes = sample_corpus(&SceneConfig::toy(), 0, n).expect("toy config is feasible");
    let first = &scenes[0];
    println!("{}: {} layers back to front", first.name, first.layers.len());
    for (i, (layer, modal)) in first.layers.iter().zip(first.modal_masks()).enumerate() {
        println!("  {} {:?}: amodal {} px, visible {} px", first.instance_id(i), layer.kind, layer.amodal.area(), modal.area());
    }

    let manifest = emit_dataset(&scenes, std::path::Path::new(&out)).expect("writable output directory");
    println!("{}", serde_json::to_string_pretty(&statistics(&manifest)).unwrap());
    println!("dataset written to {out}");
}
