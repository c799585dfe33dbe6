//! The subcommands.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::info;
use pointseg::cloud::{LabelMap, PointCloud};
use pointseg::config::PipelineConfig;
use pointseg::error::Error;
use pointseg::gnn::save_checkpoint;
use pointseg::io::{make_synthetic, read_cloud_auto, write_labeled_ply, LabeledCloud, SynthParams};
use pointseg::kmeans::{kmeans_segment, FeatureMode};
use pointseg::metrics::{time_segmentation, EvalReport};
use pointseg::refine::{self_train, write_training_log, TrainOutcome};
use pointseg::srg::{srg_regions, srg_segment};

use crate::args::{BaselineArgs, BatchArgs, EvalArgs, Features, Method, PipelineArgs, SegmentArgs, SweepArgs, SweepParam, SynthArgs};
use crate::manifest::{absolute, RunManifest, SweepSpec, SynthSpec, MANIFEST_FILE};
use crate::CliError;

const DEFAULT_OUT: &str = "out";

/// Defaults, then the replayed manifest's configuration, then the config
/// file; the caller applies flags last.
fn base_config(manifest: Option<&RunManifest>, file: Option<&Path>) -> Result<PipelineConfig, CliError> {
    let mut config = manifest.and_then(|m| m.config.clone()).unwrap_or_default();
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        config = config
            .merge_json(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    }
    Ok(config)
}

fn apply_common(config: &mut PipelineConfig, args: &PipelineArgs) {
    if let Some(q) = args.parts {
        config.target_parts = q;
    }
    if let Some(s) = args.seed {
        config.rng_seed = s;
    }
}

fn validated(config: PipelineConfig) -> Result<PipelineConfig, CliError> {
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

/// Errors while loading inputs are I/O failures; everything else the
/// pipeline raises is a pipeline failure, except file system errors.
fn read_error(e: Error) -> CliError {
    CliError::Io(e.to_string())
}

fn pipeline_error(e: Error) -> CliError {
    match e {
        Error::Io { .. } => CliError::Io(e.to_string()),
        e => CliError::Pipeline(e.to_string()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

struct BatchPlan {
    method: Method,
    config: PipelineConfig,
    inputs: Vec<PathBuf>,
    out: PathBuf,
    jobs: usize,
}

fn plan(
    command: &str,
    batch: &BatchArgs,
    pipeline: &PipelineArgs,
    method: Option<Method>,
    flags: impl FnOnce(&mut PipelineConfig),
) -> Result<BatchPlan, CliError> {
    let manifest = batch.manifest.as_deref().map(RunManifest::load).transpose()?;
    let mut config = base_config(manifest.as_ref(), pipeline.config.as_deref())?;
    apply_common(&mut config, pipeline);
    flags(&mut config);
    let config = validated(config)?;

    let method = method
        .or_else(|| manifest.as_ref().and_then(|m| m.method))
        .unwrap_or(Method::Srgnet);
    let inputs = if batch.inputs.is_empty() {
        manifest.as_ref().map(|m| m.inputs.clone()).unwrap_or_default()
    } else {
        batch.inputs.clone()
    };
    if inputs.is_empty() {
        return Err(CliError::Usage(format!("{command}: no input files")));
    }
    let mut stems: Vec<String> = inputs.iter().map(|p| stem(p)).collect();
    stems.sort();
    if let Some(w) = stems.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::Usage(format!("two inputs share the name {:?}; their outputs would collide", w[0])));
    }
    if batch.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let out = pipeline
        .out
        .clone()
        .or_else(|| manifest.as_ref().map(|m| m.out_dir.clone()))
        .unwrap_or_else(|| DEFAULT_OUT.into());
    Ok(BatchPlan {
        method,
        config,
        inputs,
        out,
        jobs: batch.jobs,
    })
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("cloud").to_string()
}

pub fn segment(args: &SegmentArgs) -> Result<(), CliError> {
    let plan = plan("segment", &args.batch, &args.pipeline, args.method, |c| {
        if let Some(t) = args.iters {
            c.train.iterations = t;
        }
        if let Some(lr) = args.lr {
            c.train.lr = lr;
        }
        if let Some(d) = args.normal_deg {
            c.srg.normal_threshold_deg = d;
        }
        if let Some(k) = args.knn {
            c.srg.knn_k = k;
        }
    })?;
    run_batch("segment", plan)
}

pub fn baseline(args: &BaselineArgs) -> Result<(), CliError> {
    let plan = plan("baseline", &args.batch, &args.pipeline, Some(Method::Kmeans), |c| {
        if let Some(f) = args.features {
            c.kmeans_features = match f {
                Features::Xyz => FeatureMode::Xyz,
                Features::XyzNormal => FeatureMode::XyzNormal,
            };
        }
        if let Some(w) = args.normal_weight {
            c.kmeans_normal_weight = w;
        }
    })?;
    run_batch("baseline", plan)
}

fn run_batch(command: &str, plan: BatchPlan) -> Result<(), CliError> {
    create_dir(&plan.out)?;
    let inputs = plan.inputs.iter().map(|p| absolute(p)).collect::<Result<Vec<_>, _>>()?;
    let mut manifest = RunManifest::new(command, inputs.clone(), absolute(&plan.out)?, plan.config.rng_seed);
    manifest.method = Some(plan.method);
    manifest.config = Some(plan.config.clone());
    manifest.write(&plan.out.join(MANIFEST_FILE))?;

    let results: Vec<Mutex<Option<Result<String, CliError>>>> = inputs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = plan.jobs.min(inputs.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= inputs.len() {
                    break;
                }
                let r = process(&inputs[i], plan.method, &plan.config, &plan.out);
                *results[i].lock().unwrap() = Some(r);
            });
        }
    });

    let mut errors = Vec::new();
    for (path, r) in inputs.iter().zip(results) {
        match r.into_inner().unwrap().expect("every input is processed") {
            Ok(line) => println!("{line}"),
            Err(e) => errors.push((path, e)),
        }
    }
    // A single input's error is reported by the caller; with several, each
    // is listed and the first decides the exit code.
    if inputs.len() == 1 {
        return errors.pop().map_or(Ok(()), |(_, e)| Err(e));
    }
    for (path, e) in &errors {
        eprintln!("error: {}: {e}", stem(path));
    }
    let failed = errors.len();
    match errors.into_iter().next() {
        None => Ok(()),
        Some((_, first)) => Err(first.with_message(format!("{failed} of {} inputs failed", inputs.len()))),
    }
}

/// One cloud end to end; returns its summary line.
fn process(path: &Path, method: Method, config: &PipelineConfig, out: &Path) -> Result<String, CliError> {
    let input = read_cloud_auto(path).map_err(read_error)?;
    let name = stem(path);
    config.validate_for(input.cloud.len()).map_err(pipeline_error)?;
    info!("{name}: {} points, method {method:?}", input.cloud.len());

    let mut outcome: Option<TrainOutcome> = None;
    let (labels, latency_ms) = time_segmentation(|cloud| segment_cloud(cloud, method, config, &mut outcome), &input.cloud)
        .map_err(pipeline_error)?;

    write_labeled_ply(&out.join(format!("{name}.ply")), &input.cloud, &labels).map_err(pipeline_error)?;
    if let Some(o) = &outcome {
        let mut csv = Vec::new();
        write_training_log(&mut csv, &o.log).expect("writing to memory");
        write_file(&out.join(format!("{name}.train.csv")), &csv)?;
        save_checkpoint(&out.join(format!("{name}.ckpt")), &o.model).map_err(pipeline_error)?;
    }
    let mut line = format!("{name}: {} points, {} parts, {latency_ms:.1} ms", labels.len(), labels.num_clusters());
    if let Some(report) = report_for(&input, &labels, latency_ms)? {
        write_file(&out.join(format!("{name}.report.txt")), report.to_string().as_bytes())?;
        write_file(&out.join(format!("{name}.report.json")), (report.to_json() + "\n").as_bytes())?;
        line += &format!(", miou {:.4}, oa {:.4}", report.miou, report.oa);
    }
    Ok(line)
}

fn segment_cloud(
    cloud: &PointCloud,
    method: Method,
    config: &PipelineConfig,
    outcome: &mut Option<TrainOutcome>,
) -> pointseg::error::Result<LabelMap> {
    match method {
        Method::Srg => srg_segment(cloud, &config.srg, config.target_parts, config.rng_seed),
        Method::Kmeans => Ok(kmeans_segment(cloud, &config.kmeans_config())?.relabel_canonical()),
        Method::Srgnet => {
            let o = self_train(cloud, config)?;
            let labels = o.labels.clone();
            *outcome = Some(o);
            Ok(labels)
        }
    }
}

fn report_for(input: &LabeledCloud, labels: &LabelMap, latency_ms: f64) -> Result<Option<EvalReport>, CliError> {
    input
        .truth
        .as_ref()
        .map(|truth| EvalReport::compute(labels, truth, latency_ms).map_err(pipeline_error))
        .transpose()
}

fn labels_of(path: &Path) -> Result<LabelMap, CliError> {
    read_cloud_auto(path)
        .map_err(read_error)?
        .truth
        .ok_or_else(|| CliError::Usage(format!("{}: the file carries no labels", path.display())))
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let pred = labels_of(&args.pred)?;
    let truth = labels_of(&args.truth)?;
    if pred.len() != truth.len() {
        return Err(CliError::Usage(format!(
            "prediction has {} points but ground truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    let report = EvalReport::compute(&pred, &truth, 0.0).map_err(pipeline_error)?;
    if args.json {
        println!("{}", report.to_json());
    } else {
        print!("{report}");
    }
    Ok(())
}

pub fn sweep(args: &SweepArgs) -> Result<(), CliError> {
    let mut config = base_config(None, args.pipeline.config.as_deref())?;
    apply_common(&mut config, &args.pipeline);
    let config = validated(config)?;
    if args.values.is_empty() {
        return Err(CliError::Usage("--values is empty".into()));
    }
    let configs = args
        .values
        .iter()
        .map(|&v| {
            let mut c = config.clone();
            match args.param {
                SweepParam::NormalDeg => c.srg.normal_threshold_deg = v,
                SweepParam::EuclidFactor => c.srg.euclid_threshold_factor = v,
                SweepParam::Knn => {
                    if !(v >= 1.0 && v.fract() == 0.0) {
                        return Err(CliError::Usage(format!("knn values must be positive integers, got {v}")));
                    }
                    c.srg.knn_k = v as usize;
                }
            }
            validated(c)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let input = read_cloud_auto(&args.input).map_err(read_error)?;
    let truth = input
        .truth
        .clone()
        .ok_or_else(|| CliError::Usage(format!("{}: sweep needs ground-truth labels", args.input.display())))?;
    let out = args.pipeline.out.clone().unwrap_or_else(|| DEFAULT_OUT.into());
    create_dir(&out)?;
    let mut manifest = RunManifest::new("sweep", vec![absolute(&args.input)?], absolute(&out)?, config.rng_seed);
    manifest.method = Some(Method::Srg);
    manifest.config = Some(config.clone());
    manifest.sweep = Some(SweepSpec {
        param: args.param,
        values: args.values.clone(),
    });
    manifest.write(&out.join(MANIFEST_FILE))?;

    let mut csv = String::from("value,miou,oa,latency_ms,num_regions\n");
    for (v, c) in args.values.iter().zip(&configs) {
        c.validate_for(input.cloud.len()).map_err(pipeline_error)?;
        let regions = srg_regions(&input.cloud, &c.srg, c.rng_seed).map_err(pipeline_error)?;
        let (labels, ms) = time_segmentation(|cloud| srg_segment(cloud, &c.srg, c.target_parts, c.rng_seed), &input.cloud)
            .map_err(pipeline_error)?;
        let r = EvalReport::compute(&labels, &truth, ms).map_err(pipeline_error)?;
        csv += &format!("{v},{:.6},{:.6},{ms:.3},{}\n", r.miou, r.oa, regions.num_clusters());
    }
    write_file(&out.join("sweep.csv"), csv.as_bytes())?;
    std::io::stdout()
        .write_all(csv.as_bytes())
        .map_err(|e| CliError::Io(format!("stdout: {e}")))
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let params = SynthParams {
        n: args.n,
        noise: args.noise,
        normals: args.normals,
        separation: args.separation,
    };
    let lc = make_synthetic(args.kind, &params, args.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let truth = lc.truth.as_ref().expect("synthetic clouds carry truth");
    write_labeled_ply(&args.out, &lc.cloud, truth).map_err(pipeline_error)?;

    let dir = args.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut manifest = RunManifest::new("synth", Vec::new(), absolute(dir)?, args.seed);
    manifest.synth = Some(SynthSpec { kind: args.kind, params });
    manifest.write(&args.out.with_extension("manifest.json"))?;
    println!("{}: {} points, {} parts", args.out.display(), lc.cloud.len(), truth.num_clusters());
    Ok(())
}
