use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Cli, CliError, Command, InferMode, RunConfig, TrainMode};
use crate::cosynth::{self, ApiContext, CosynthService, IdentityRefiner, StubAnnotator};
use crate::diffusion::{train_toy, BlockCodec, Checkpoint, DdimConfig, Mode, TrainExample};
use crate::engine::remote::RemoteBackend;
use crate::engine::{
    candidate_regions, construct_sample_multi, construct_sample_naive, contaminated_pixels, full_example, infer_full, infer_global_to_local, infer_stepwise_seeded,
    partial_example, sample_generated, CompletionBackend, HeuristicBackend, OracleBackend, ToyDiffusionBackend, TrainingSample, TwoPassConfig,
};
use crate::eval::{fid_proxy, EvalRecord, EvalReport, HandcraftedFeatures};
use crate::mask::{iou, read_mask_png, read_rgba_png, write_mask_png, write_rgba_png, BinaryMask, RgbaImage};
use crate::scene::{emit_dataset, read_manifest, sample_corpus, statistics, statistics_from_files, Manifest, ManifestRecord};
use crate::seed;

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn mkdir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| input(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| input(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    write_file(path, serde_json::to_vec_pretty(v).map_err(internal)?)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut s = String::new();
    for r in rows {
        s += &serde_json::to_string(r).map_err(internal)?;
        s.push('\n');
    }
    write_file(path, s)
}

fn load_manifest(dir: &Path) -> Result<Manifest, CliError> {
    read_manifest(dir).map_err(|e| input(format!("dataset {}: {e}", dir.display())))
}

/// Prints the resolved config and, when given, stores it next to the outputs.
fn echo_config(cfg: &RunConfig, dir: Option<&Path>) -> Result<(), CliError> {
    let text = cfg.to_toml();
    eprintln!("# resolved config\n{text}");
    if let Some(d) = dir {
        write_file(&d.join("run_config.toml"), &text)?;
    }
    Ok(())
}

pub(super) fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p).map_err(input)?,
        None => RunConfig::default(),
    };
    cfg.apply_env();
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.global.jobs {
        // an already-initialized pool (tests, embedding) is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global();
    }
    let check = cli.global.check;
    match cli.command {
        Command::Synth { scenes, out } => synth(&cfg, scenes, &out),
        Command::Construct { dataset, out, per_instance, occluders, naive } => construct(&cfg, &dataset, &out, per_instance, occluders, naive, check),
        Command::Infer { dataset, backend, mode, out, variations, min_iou } => infer(&cfg, &dataset, &backend, mode, &out, variations, min_iou, check),
        Command::Train { dataset, mode, out, steps, lr, batch_size, hidden, time_budget_secs } => {
            let t = &mut cfg.train;
            t.steps = steps.unwrap_or(t.steps);
            t.lr = lr.unwrap_or(t.lr);
            t.batch_size = batch_size.unwrap_or(t.batch_size);
            t.hidden = hidden.unwrap_or(t.hidden);
            t.time_budget_secs = time_budget_secs.or(t.time_budget_secs);
            train(&cfg, &dataset, mode, &out)
        }
        Command::Eval { predictions, k, out } => {
            if let Some(k) = k {
                cfg.eval.ks = k;
            }
            eval(&cfg, &predictions, &out, check)
        }
        Command::Stats { dataset, out } => stats(&cfg, &dataset, out.as_deref(), check),
        Command::Serve { data_dir, dataset, port, backend, refiner } => {
            if let Some(d) = data_dir {
                cfg.service.data_dir = d;
            }
            if let Some(p) = port {
                cfg.service.port = p;
            }
            serve(&cfg, dataset.as_deref(), &backend, &refiner)
        }
        Command::Export { data_dir, out } => {
            if let Some(d) = data_dir {
                cfg.service.data_dir = d;
            }
            export(&cfg, &out)
        }
    }
}

fn synth(cfg: &RunConfig, scenes: usize, out: &Path) -> Result<(), CliError> {
    cfg.scene.validate().map_err(input)?;
    mkdir(out)?;
    echo_config(cfg, Some(out))?;
    let corpus = sample_corpus(&cfg.scene, cfg.seed, scenes).map_err(input)?;
    let m = emit_dataset(&corpus, out).map_err(input)?;
    println!("{} scenes, {} instances, {} occluded -> {}", scenes, m.records.len(), m.occluded().count(), out.display());
    Ok(())
}

/// Loads the dataset's occluded truths, or none for backends that do not need them.
fn truths(m: &Manifest, records: &[&ManifestRecord]) -> Result<Vec<RgbaImage>, CliError> {
    records.iter().map(|r| m.load_amodal(r).map_err(input)).collect()
}

/// Builds a backend from its spec. `oracle_truths` is called only for
/// the oracle.
fn make_backend(spec: &str, cfg: &RunConfig, oracle_truths: impl FnOnce() -> Result<Vec<RgbaImage>, CliError>) -> Result<Arc<dyn CompletionBackend>, CliError> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    Ok(match kind {
        "oracle" => Arc::new(OracleBackend::new(oracle_truths()?)),
        "heuristic" => Arc::new(HeuristicBackend::default()),
        "identity" => Arc::new(IdentityRefiner),
        "toy" => {
            let i = &cfg.infer;
            let ddim = DdimConfig { steps: i.ddim_steps, eta: i.eta, clip: (i.clip > 0.0).then_some(i.clip), ..Default::default() };
            let mut b = ToyDiffusionBackend::new(i.model_side, ddim);
            if arg.is_empty() {
                return Err(input("toy backend needs checkpoint paths: toy:<full.ckpt>[,<partial.ckpt>]"));
            }
            for path in arg.split(',') {
                b = b.with_checkpoint(Checkpoint::load(Path::new(path)).map_err(input)?);
            }
            Arc::new(b)
        }
        "remote" => Arc::new(RemoteBackend::probe(arg, Duration::from_secs(cfg.infer.remote_timeout_secs)).map_err(|e| CliError::Backend(e.to_string()))?),
        _ => return Err(input(format!("unknown backend {spec:?}; expected oracle, heuristic, identity, toy:<ckpt>, remote:<url>"))),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    id: String,
    k: usize,
    files: [String; 6],
    violations: Vec<String>,
    contaminated: Option<usize>,
    fully_occluded: bool,
}

fn samples_for(m: &Manifest, rec: &ManifestRecord, pool: &[BinaryMask], root: u64, per_instance: usize, occluders: usize, naive: bool) -> Result<Vec<(TrainingSample, Vec<BinaryMask>, Option<usize>)>, CliError> {
    let x = match &rec.image {
        Some(_) => m.load_image(rec).map_err(input)?,
        None => return Ok(vec![]),
    };
    let modal = m.load_modal(rec).map_err(input)?;
    let existing: Vec<BinaryMask> = m.load_occluders(rec).map_err(input)?.into_iter().map(|(_, mk)| mk).collect();
    let others: Vec<BinaryMask> = m.records.iter().filter(|o| o.scene == rec.scene && o.id != rec.id).map(|o| m.load_modal(o).map_err(input)).collect::<Result<_, _>>()?;
    let candidates = candidate_regions(&others, &modal).map_err(internal)?;
    let truth = m.load_amodal(rec).ok().map(|a| a.alpha_mask());
    let mut out = Vec::with_capacity(per_instance);
    for k in 0..per_instance {
        let mut rng = seed::rng_indexed(seed::substream(root, &rec.id), "construct", k as u64);
        let gen: Vec<BinaryMask> = (0..occluders.max(1)).map(|_| sample_generated(pool, x.width(), x.height(), &mut rng)).collect::<Result<_, _>>().map_err(internal)?;
        let s = if naive {
            let u = BinaryMask::union_all(&gen, x.width(), x.height()).map_err(internal)?;
            construct_sample_naive(&x, &modal, &existing, &u, &candidates, &mut rng)
        } else {
            construct_sample_multi(&x, &modal, &existing, &gen, &candidates, occluders.max(1), &mut rng)
        }
        .map_err(internal)?;
        let c = truth.as_ref().map(|t| contaminated_pixels(&s, &existing, t)).transpose().map_err(internal)?;
        out.push((s, existing.clone(), c));
    }
    Ok(out)
}

fn construct(cfg: &RunConfig, dataset: &Path, out: &Path, per_instance: usize, occluders: usize, naive: bool, check: bool) -> Result<(), CliError> {
    let m = load_manifest(dataset)?;
    mkdir(out)?;
    echo_config(cfg, Some(out))?;
    // generated occluders are drawn from the shapes of every visible instance
    let pool: Vec<BinaryMask> = m.records.iter().map(|r| m.load_modal(r).map_err(input)).collect::<Result<_, _>>()?;
    let root = seed::substream(cfg.seed, "construct");
    let built: Vec<Vec<(TrainingSample, Vec<BinaryMask>, Option<usize>)>> = m.occluded().collect::<Vec<_>>().par_iter().map(|r| samples_for(&m, r, &pool, root, per_instance, occluders, naive)).collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for (rec, samples) in m.occluded().zip(built) {
        for (k, (s, existing, contaminated)) in samples.into_iter().enumerate() {
            let stem = format!("{}.s{k}", rec.id);
            let files = ["input", "target", "background", "occluder", "deoccluded", "instance"].map(|n| format!("{stem}.{n}.png"));
            write_rgba_png(&out.join(&files[0]), &s.input).map_err(input)?;
            write_rgba_png(&out.join(&files[1]), &s.target).map_err(input)?;
            write_rgba_png(&out.join(&files[2]), &s.background).map_err(input)?;
            write_mask_png(&out.join(&files[3]), &s.occluder).map_err(input)?;
            write_mask_png(&out.join(&files[4]), &s.deoccluded).map_err(input)?;
            write_mask_png(&out.join(&files[5]), &s.instance).map_err(input)?;
            rows.push(SampleRow { id: rec.id.clone(), k, files, violations: s.violations(&existing), contaminated, fully_occluded: s.fully_occluded });
        }
    }
    write_jsonl(&out.join("samples.jsonl"), &rows)?;
    let bad = rows.iter().filter(|r| !r.violations.is_empty()).count();
    let dirty = rows.iter().filter(|r| r.contaminated.unwrap_or(0) > 0).count();
    println!("{} samples, {bad} with invariant violations, {dirty} with contaminated labels -> {}", rows.len(), out.display());
    if check && (bad > 0 || dirty > 0) {
        return Err(CliError::Check(format!("{bad} samples violate invariants, {dirty} have contaminated labels")));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictionRow {
    id: String,
    occlusion_pct: f64,
    /// (rgba file, mask file) per variation.
    variations: Vec<(String, String)>,
    ious: Vec<f64>,
    error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictionRun {
    dataset: PathBuf,
    backend: String,
    mode: String,
    records: usize,
    failed: usize,
    mean_best_iou: f64,
    min_best_iou: f64,
}

type Completed = Result<Vec<(RgbaImage, BinaryMask)>, String>;

fn complete_one(cfg: &RunConfig, m: &Manifest, rec: &ManifestRecord, backend: &dyn CompletionBackend, mode: InferMode, variations: usize) -> Result<Completed, CliError> {
    let x = m.load_image(rec).map_err(input)?;
    let modal = m.load_modal(rec).map_err(input)?;
    let s = seed::substream(seed::substream(cfg.seed, "infer"), &rec.id);
    Ok(match mode {
        InferMode::Stepwise => {
            let occ: Vec<BinaryMask> = m.load_occluders(rec).map_err(input)?.into_iter().map(|(_, mk)| mk).collect();
            infer_stepwise_seeded(&x, &modal, &occ, backend, s).map(|r| vec![(r.rgba, r.mask)]).map_err(|e| e.to_string())
        }
        InferMode::Full => match infer_full(&x, &modal, rec.category.as_deref(), backend, variations, s) {
            Ok(vs) => vs.into_iter().map(|v| v.map(|c| (c.rgba, c.mask))).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string()),
            Err(e) => Err(e.to_string()),
        },
        InferMode::TwoPass => {
            let tp = TwoPassConfig { model_side: cfg.infer.model_side, strength: cfg.infer.two_pass_strength, context: cfg.infer.two_pass_context, seed: s, text: rec.category.clone() };
            infer_global_to_local(&x, &modal, backend, &tp).map(|r| vec![(r.rgba, r.mask)]).map_err(|e| e.to_string())
        }
    })
}

#[allow(clippy::too_many_arguments)]
fn infer(cfg: &RunConfig, dataset: &Path, spec: &str, mode: InferMode, out: &Path, variations: Option<usize>, min_iou: f64, check: bool) -> Result<(), CliError> {
    let m = load_manifest(dataset)?;
    mkdir(out)?;
    echo_config(cfg, Some(out))?;
    let records: Vec<&ManifestRecord> = m.occluded().collect();
    let variations = variations.unwrap_or(cfg.infer.variations).max(1);
    // the oracle answers from one instance's truth at a time
    let shared = if spec == "oracle" { None } else { Some(make_backend(spec, cfg, || Ok(vec![]))?) };
    let done: Vec<Completed> = records
        .par_iter()
        .map(|rec| {
            let b = match &shared {
                Some(b) => b.clone(),
                None => make_backend(spec, cfg, || truths(&m, &[rec]))?,
            };
            complete_one(cfg, &m, rec, b.as_ref(), mode, variations)
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(records.len());
    for (rec, res) in records.iter().zip(done) {
        let gt = m.load_amodal(rec).map_err(input)?.alpha_mask();
        let mut row = PredictionRow { id: rec.id.clone(), occlusion_pct: rec.occlusion_pct, variations: vec![], ious: vec![], error: None };
        match res {
            Ok(vs) => {
                for (j, (rgba, mask)) in vs.iter().enumerate() {
                    let (rf, mf) = (format!("{}.v{j}.rgba.png", rec.id), format!("{}.v{j}.mask.png", rec.id));
                    write_rgba_png(&out.join(&rf), rgba).map_err(input)?;
                    write_mask_png(&out.join(&mf), mask).map_err(input)?;
                    row.ious.push(iou(mask, &gt).map_err(internal)?);
                    row.variations.push((rf, mf));
                }
            }
            Err(e) => row.error = Some(e),
        }
        rows.push(row);
    }
    write_jsonl(&out.join("predictions.jsonl"), &rows)?;
    let best: Vec<f64> = rows.iter().filter(|r| r.error.is_none()).map(|r| r.ious.iter().cloned().fold(0.0, f64::max)).collect();
    let failed = rows.len() - best.len();
    let run = PredictionRun {
        dataset: std::fs::canonicalize(dataset).unwrap_or_else(|_| dataset.to_path_buf()),
        backend: spec.to_string(),
        mode: format!("{mode:?}").to_lowercase(),
        records: rows.len(),
        failed,
        mean_best_iou: if best.is_empty() { 0.0 } else { best.iter().sum::<f64>() / best.len() as f64 },
        min_best_iou: best.iter().cloned().fold(1.0, f64::min),
    };
    write_json(&out.join("run.json"), &run)?;
    println!("{} instances, {} failed, mean best IoU {:.4}, min {:.4} -> {}", run.records, failed, run.mean_best_iou, run.min_best_iou, out.display());
    if let Some(e) = rows.iter().find_map(|r| r.error.as_ref()).filter(|_| failed == rows.len() && !rows.is_empty()) {
        return Err(CliError::Backend(format!("every instance failed; first error: {e}")));
    }
    if check && (failed > 0 || run.min_best_iou < min_iou) {
        return Err(CliError::Check(format!("{failed} failures, min best IoU {} below {min_iou}", run.min_best_iou)));
    }
    Ok(())
}

fn train(cfg: &RunConfig, dataset: &Path, mode: TrainMode, out: &Path) -> Result<(), CliError> {
    let m = load_manifest(dataset)?;
    if let Some(d) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        mkdir(d)?;
    }
    let mut tc = cfg.train.clone();
    tc.seed = seed::substream(cfg.seed, "train");
    let resolved = RunConfig { train: tc.clone(), ..cfg.clone() };
    echo_config(&resolved, None)?;
    let codec = BlockCodec::default();
    let examples: Vec<TrainExample> = match mode {
        TrainMode::Full => {
            let pairs = m.load_pairs().map_err(input)?;
            pairs.par_iter().map(|p| full_example(&codec, &p.image, &p.modal, &p.category, &p.amodal)).collect::<Result<_, _>>().map_err(input)?
        }
        TrainMode::Partial => {
            let pool: Vec<BinaryMask> = m.records.iter().map(|r| m.load_modal(r).map_err(input)).collect::<Result<_, _>>()?;
            let root = seed::substream(cfg.seed, "construct");
            let recs: Vec<&ManifestRecord> = m.occluded().collect();
            let samples: Vec<Vec<(TrainingSample, Vec<BinaryMask>, Option<usize>)>> = recs.par_iter().map(|r| samples_for(&m, r, &pool, root, 1, 1, false)).collect::<Result<_, _>>()?;
            samples.into_iter().flatten().map(|(s, _, _)| partial_example(&codec, &s)).collect::<Result<_, _>>().map_err(input)?
        }
    };
    if examples.is_empty() {
        return Err(input(format!("dataset {} has no occluded instances to train on", dataset.display())));
    }
    let dmode = match mode {
        TrainMode::Full => Mode::Full,
        TrainMode::Partial => Mode::Partial,
    };
    let tm = train_toy(&examples, dmode, &codec, &tc).map_err(input)?;
    Checkpoint { denoiser: tm.denoiser, schedule: tm.schedule, codec_block: codec.block }.save(out).map_err(input)?;
    let curve = out.with_extension("curve.csv");
    tm.curve.write_csv(&curve).map_err(input)?;
    println!(
        "{} examples, {} steps{}, loss {:.4} -> {:.4}; checkpoint {}",
        examples.len(),
        tm.curve.points.len(),
        if tm.curve.stopped_early { " (stopped at the time budget)" } else { "" },
        tm.curve.first().unwrap_or(f64::NAN),
        tm.curve.tail_mean(50).unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(|e| input(format!("{}: {e}", path.display())))).collect()
}

fn eval(cfg: &RunConfig, predictions: &Path, out: &Path, check: bool) -> Result<(), CliError> {
    let run: PredictionRun = serde_json::from_slice(&std::fs::read(predictions.join("run.json")).map_err(|e| input(format!("{}: {e}", predictions.join("run.json").display())))?).map_err(input)?;
    let rows: Vec<PredictionRow> = read_jsonl(&predictions.join("predictions.jsonl"))?;
    let m = load_manifest(&run.dataset)?;
    mkdir(out)?;
    echo_config(cfg, Some(out))?;
    let kmax = cfg.eval.ks.iter().copied().max().ok_or_else(|| input("empty k list"))?;
    let scored: Vec<(EvalRecord, Option<RgbaImage>, RgbaImage)> = rows
        .par_iter()
        .map(|r| {
            if let Some(e) = &r.error {
                return Err(input(format!("prediction for {} failed: {e}", r.id)));
            }
            let rec = m.record(&r.id).ok_or_else(|| input(format!("{} not in dataset {}", r.id, run.dataset.display())))?;
            let gt = m.load_amodal(rec).map_err(input)?;
            let masks: Vec<BinaryMask> = r.variations.iter().map(|(_, mf)| read_mask_png(&predictions.join(mf)).map_err(input)).collect::<Result<_, _>>()?;
            let first = r.variations.first().map(|(rf, _)| read_rgba_png(&predictions.join(rf)).map_err(input)).transpose()?;
            Ok((EvalRecord::new(r.id.clone(), masks, gt.alpha_mask(), r.occlusion_pct).map_err(input)?, first, gt))
        })
        .collect::<Result<_, CliError>>()?;
    if let Some((r, _, _)) = scored.iter().find(|(r, _, _)| r.per_variation_iou.len() < kmax) {
        return Err(input(format!("{} has {} variations; best-of-{kmax} needs {kmax} (run infer --mode full --variations {kmax})", r.id, r.per_variation_iou.len())));
    }
    let preds: Vec<RgbaImage> = scored.iter().filter_map(|(_, p, _)| p.clone()).collect();
    let gts: Vec<RgbaImage> = scored.iter().map(|(_, _, g)| g.clone()).collect();
    let fid = fid_proxy(&HandcraftedFeatures, &preds, &gts).ok();
    let records: Vec<EvalRecord> = scored.into_iter().map(|(r, _, _)| r).collect();
    let report = EvalReport::build(&records, &cfg.eval.ks, fid).map_err(input)?;
    report.write(out).map_err(input)?;
    let curve: Vec<String> = report.best_of_k.iter().map(|(k, v)| format!("k={k}: {v:.4}")).collect();
    println!("mIoU {:.4} over {} records; best-of-k {}; fid_proxy {}", report.miou, report.records, curve.join(", "), fid.map_or("n/a".into(), |f| format!("{f:.4}")));
    if check && !report.curve_non_decreasing() {
        return Err(CliError::Check("best-of-k curve decreases".into()));
    }
    Ok(())
}

fn stats(cfg: &RunConfig, dataset: &Path, out: Option<&Path>, check: bool) -> Result<(), CliError> {
    let m = load_manifest(dataset)?;
    echo_config(cfg, None)?;
    let s = statistics(&m);
    let text = serde_json::to_string_pretty(&s).map_err(internal)?;
    println!("{text}");
    if let Some(o) = out {
        write_file(o, &text)?;
    }
    if check {
        let f = statistics_from_files(&m).map_err(input)?;
        if f != s {
            return Err(CliError::Check("manifest statistics differ from statistics recomputed from the files".into()));
        }
    }
    Ok(())
}

fn serve(cfg: &RunConfig, dataset: Option<&Path>, backend: &str, refiner: &str) -> Result<(), CliError> {
    echo_config(cfg, None)?;
    let service = Arc::new(CosynthService::open(&cfg.service.data_dir, cfg.service.workflow.clone()).map_err(input)?);
    let manifest = dataset.map(load_manifest).transpose()?;
    if let Some(m) = &manifest {
        let n = service.enqueue(m).map_err(input)?;
        eprintln!("enqueued {n} items from {}", m.dir.display());
    }
    let oracle_truths = || match &manifest {
        Some(m) => truths(m, &m.occluded().collect::<Vec<_>>()),
        None => Err(input("the oracle backend needs --dataset")),
    };
    let b = make_backend(backend, cfg, oracle_truths)?;
    let r = make_backend(refiner, cfg, || Err(input("the oracle cannot refine")))?;
    let ctx = ApiContext { service, backend: b, refiner: r, annotator: Arc::new(StubAnnotator), export_dir: cfg.service.data_dir.join("export") };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(internal)?;
    rt.block_on(async move {
        let addr = format!("127.0.0.1:{}", cfg.service.port);
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| input(format!("cannot listen on {addr}: {e}")))?;
        println!("listening on http://{}", listener.local_addr().map_err(internal)?);
        axum::serve(listener, cosynth::router(ctx)).await.map_err(internal)
    })
}

fn export(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    echo_config(cfg, None)?;
    if !cfg.service.data_dir.join("events.jsonl").exists() {
        return Err(input(format!("no review queue in {}", cfg.service.data_dir.display())));
    }
    let service = CosynthService::open(&cfg.service.data_dir, cfg.service.workflow.clone()).map_err(input)?;
    let sum = service.export(out).map_err(input)?;
    println!("{} pairs -> {}", sum.pairs, out.display());
    Ok(())
}
