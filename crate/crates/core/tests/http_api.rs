use std::sync::Arc;

use amodal_kit::cosynth::{router, ApiContext, CosynthService, IdentityRefiner, ServiceConfig, StubAnnotator};
use amodal_kit::engine::OracleBackend;
use amodal_kit::mask::decode_mask_png;
use amodal_kit::scene::{emit_dataset, sample_corpus, Manifest, SceneConfig};
use serde_json::{json, Value};

struct Server {
    base: String,
    _data: tempfile::TempDir,
    manifest: Manifest,
}

fn serve() -> Server {
    let data = tempfile::tempdir().unwrap();
    let cfg = SceneConfig { min_layers: 3, ..SceneConfig::toy() };
    let manifest = emit_dataset(&sample_corpus(&cfg, 2, 3).unwrap(), &data.path().join("ds")).unwrap();
    let service = Arc::new(CosynthService::open(&data.path().join("svc"), ServiceConfig::default()).unwrap());
    service.enqueue(&manifest).unwrap();
    let truths = manifest.occluded().map(|r| manifest.load_amodal(r).unwrap()).collect();
    let ctx = ApiContext {
        service,
        backend: Arc::new(OracleBackend::new(truths)),
        refiner: Arc::new(IdentityRefiner),
        annotator: Arc::new(StubAnnotator),
        export_dir: data.path().join("export"),
    };
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || rt.block_on(async move { axum::serve(listener, router(ctx)).await.unwrap() }));
    Server { base: format!("http://{addr}"), _data: data, manifest }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

fn get(s: &Server, path: &str) -> (u16, Value) {
    let mut r = agent().get(format!("{}{path}", s.base)).call().unwrap();
    (r.status().as_u16(), r.body_mut().read_json().unwrap())
}

fn post(s: &Server, path: &str, body: Value) -> (u16, Value) {
    let mut r = agent().post(format!("{}{path}", s.base)).header("x-actor", "alice").send_json(body).unwrap();
    (r.status().as_u16(), r.body_mut().read_json().unwrap())
}

#[test]
fn review_round_trip_over_http() {
    let s = serve();
    let (st, queue) = get(&s, "/queue?state=pending");
    assert_eq!(st, 200);
    let n = s.manifest.occluded().count();
    assert_eq!(queue.as_array().unwrap().len(), n);
    let id = queue[0]["id"].as_str().unwrap().to_string();

    // selecting before anything ran is illegal
    let (st, err) = post(&s, &format!("/items/{id}/decision"), json!({"kind": "select", "variant": "s0-50"}));
    assert_eq!(st, 422);
    assert_eq!(err["kind"], "illegal_transition");
    assert_eq!(err["state"], "pending");

    let (st, it) = post(&s, &format!("/items/{id}/run"), json!({}));
    assert_eq!(st, 200, "{it}");
    assert_eq!(it["state"], "initial");
    let (st, it) = post(&s, &format!("/items/{id}/refine"), json!({"seeds": 1}));
    assert_eq!(st, 200);
    assert_eq!(it["variants"].as_array().unwrap().len(), 3);
    let version = it["version"].as_u64().unwrap();

    // stale version
    let (st, err) = post(&s, &format!("/items/{id}/decision"), json!({"kind": "select", "variant": "s0-75", "version": version - 1}));
    assert_eq!(st, 409);
    assert_eq!(err["current_version"], version);
    let (st, it) = post(&s, &format!("/items/{id}/decision"), json!({"kind": "select", "variant": "s0-75", "version": version}));
    assert_eq!(st, 200);
    assert_eq!(it["selection"], "s0-75");

    // the selected mask is served as a strict PNG and matches the truth
    let hash = it["variants"][1]["mask"].as_str().unwrap();
    let mut r = agent().get(format!("{}/blobs/{hash}", s.base)).call().unwrap();
    assert_eq!(r.headers().get("content-type").unwrap(), "image/png");
    let mask = decode_mask_png(&r.body_mut().read_to_vec().unwrap()).unwrap();
    let rec = s.manifest.record(&id).unwrap();
    assert_eq!(mask, s.manifest.load_amodal(rec).unwrap().alpha_mask());

    let (st, it) = post(&s, &format!("/items/{id}/annotate"), json!({}));
    assert_eq!(st, 200);
    assert_eq!(it["state"], "annotated");
    assert_eq!(it["history"].as_array().unwrap().iter().filter(|h| h["actor"] == json!({"human": "alice"})).count(), 4);

    let (st, sum) = get(&s, "/export");
    assert_eq!(st, 200);
    assert_eq!(sum["pairs"], 1);
    let (_, stats) = get(&s, "/stats");
    assert_eq!(stats["items"], n);
    assert_eq!(stats["by_state"]["annotated"], 1);
}

#[test]
fn order_correction_resets_and_errors_are_typed() {
    let s = serve();
    let (_, queue) = get(&s, "/queue");
    let id = queue[0]["id"].as_str().unwrap().to_string();
    post(&s, &format!("/items/{id}/run"), json!({}));
    let (_, item) = get(&s, &format!("/items/{id}"));
    let occ = item["occluders"][0]["id"].as_str().unwrap().to_string();

    // self edges and foreign ids are rejected and change nothing
    for edges in [json!([[id, id]]), json!([["elsewhere", id]])] {
        let (st, err) = post(&s, &format!("/items/{id}/order"), json!({ "edges": edges }));
        assert_eq!(st, 422, "{err}");
        assert_eq!(err["kind"], "invalid_request");
    }
    let (_, same) = get(&s, &format!("/items/{id}"));
    assert_eq!(same["version"], item["version"]);

    // mutual occlusion is physically possible and accepted
    let (st, it) = post(&s, &format!("/items/{id}/order"), json!({"edges": [[occ, id], [id, occ]]}));
    assert_eq!(st, 200, "{it}");
    assert_eq!(it["occluders"][0]["id"], occ.as_str());
    let item = it;

    // removing every occluder of the item sends it back to pending with no stale result
    let (st, it) = post(&s, &format!("/items/{id}/order"), json!({"edges": [], "version": item["version"]}));
    assert_eq!(st, 200, "{it}");
    assert_eq!(it["state"], "pending");
    assert!(it["initial"].is_null());
    assert_eq!(it["occluders"].as_array().unwrap().len(), 0);

    assert_eq!(get(&s, "/items/nope").0, 404);
    assert_eq!(get(&s, "/queue?state=limbo").0, 400);
    assert_eq!(agent().get(format!("{}/blobs/{}", s.base, "0".repeat(64))).call().unwrap().status().as_u16(), 404);
    // nothing annotated yet
    assert_eq!(get(&s, "/export").0, 422);
}
