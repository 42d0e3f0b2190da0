//! Serves a backend over the completion protocol and runs stepwise
//! inference through the HTTP client.

use std::sync::Arc;
use std::time::Duration;

use amodal_kit::engine::remote::{completion_router, RemoteBackend};
use amodal_kit::engine::{infer_stepwise, CompletionBackend, HeuristicBackend};
use amodal_kit::scene::{derive_graph, sample_scene, SceneConfig};

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let served: Arc<dyn CompletionBackend> = Arc::new(HeuristicBackend::default());
    std::thread::spawn(move || rt.block_on(async move { axum::serve(listener, completion_router(served)).await.unwrap() }));

    let remote = RemoteBackend::probe(url.clone(), Duration::from_secs(10)).unwrap();
    println!("{} offers {:?}", remote.identity(), remote.capabilities());

    let scene = sample_scene(&SceneConfig { min_layers: 3, ..SceneConfig::toy() }, 5).unwrap();
    let graph = derive_graph(&scene);
    let x = scene.composite();
    for (i, modal) in scene.modal_masks().iter().enumerate() {
        let occ = graph.occluder_masks(&scene.instance_id(i)).unwrap();
        if modal.is_empty() || occ.is_empty() {
            continue;
        }
        let r = infer_stepwise(&x, modal, &occ, &remote).unwrap();
        println!("{}: {} steps over HTTP, {} -> {} px", scene.instance_id(i), r.trace.len(), modal.area(), r.mask.area());
    }
}
