//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs as a plain binary (`harness = false`).

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use pointseg::cloud::{LabelMap, PointCloud};
use pointseg::geom::{self, Vec3};
use pointseg::gnn::gradcheck::{check_gradients, Tolerance};
use pointseg::gnn::{cross_entropy_loss, ModelConfig, NetInput, SegModel, Tensor};
use pointseg::io::{make_synthetic, read_ply, write_labeled_ply, SynthKind, SynthParams};
use pointseg::metrics::{hungarian_max, matched_miou, overall_accuracy};
use pointseg::normals::with_estimated_normals;
use pointseg::refine::{refine_assignment, refine_labels, Superpoints};
use pointseg::spatial::{knn_brute_force, SpatialIndex};
use pointseg::srg::{grow_regions, srg_segment, SrgConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("KNN equals brute force", knn_exact),
        ("gradients match finite differences", gradients),
        ("permutation equivariance", equivariance),
        ("seed region growing", srg),
        ("superpoint refinement", refinement),
        ("humanoid SRG-Net quality", humanoid_quality),
        ("k-means baseline gap", kmeans_gap),
        ("Hungarian equals brute force", hungarian),
        ("manifest replay", replay),
        ("PLY round trip", ply_round_trip),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name} ({detail}; {secs:.1} s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name} ({detail}; {secs:.1} s)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let t = start.elapsed();
    ensure!(t < limit, "{what} took {:.1} s, limit {} s", t.as_secs_f64(), limit.as_secs());
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn random_positions(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect()
}

// 1

fn knn_exact() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut queries = 0;
    for trial in 0..200 {
        let n = rng.random_range(3..=500);
        let mut pts = random_positions(&mut rng, n);
        if trial % 4 == 0 {
            // Lattice coordinates produce many exactly tied distances.
            for p in &mut pts {
                *p = p.map(|c| (c * 3.0).round());
            }
        }
        let cloud = PointCloud::new(pts.clone()).map_err(|e| e.to_string())?;
        let index = SpatialIndex::build(&cloud).map_err(|e| e.to_string())?;
        let k = rng.random_range(1..=(n - 1).min(30));
        for q in 0..n {
            let got = index.knn(q, k).map_err(|e| e.to_string())?;
            let want = knn_brute_force(&cloud, q, k).map_err(|e| e.to_string())?;
            ensure!(got.len() == want.len(), "trial {trial} query {q}: {} vs {} neighbours", got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                ensure!(g.index == w.index, "trial {trial} query {q}: index {} vs {}", g.index, w.index);
                let rel = (g.distance - w.distance).abs() / w.distance.max(f64::MIN_POSITIVE);
                ensure!(rel <= 1e-12 || g.distance == w.distance, "trial {trial} query {q}: distance {rel:e} off");
            }
            queries += 1;
        }
    }
    within(start, Duration::from_secs(30), "200 clouds")?;
    Ok(format!("200 clouds, {queries} queries"))
}

// 2

fn gnn_instance(seed: u64) -> (PointCloud, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(8..=16);
    let pts = random_positions(&mut rng, n);
    let normals = (0..n)
        .map(|_| geom::normalize([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.1..1.0)]).unwrap())
        .collect();
    let targets = (0..n).map(|_| rng.random_range(0..3)).collect();
    (PointCloud::with_normals(pts, normals).unwrap(), targets)
}

fn gradients() -> Outcome {
    const GROUPS: [&str; 6] = ["stn.", "edge", "extract.mlp", "extract.graph", "extract.head", "seg."];
    let start = Instant::now();
    let (mut checked, mut kinks) = (0, 0);
    let mut per_group = [0usize; GROUPS.len()];
    for seed in 0..20u64 {
        let (cloud, targets) = gnn_instance(seed);
        let mut config = ModelConfig::tiny(3, 4);
        config.use_normals = seed % 2 == 0;
        let mut model = SegModel::<f64>::new(config, seed).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        for p in model.params_mut() {
            for v in p.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let input = NetInput::<f64>::from_cloud(&cloud, 4).map_err(|e| e.to_string())?;
        let (_, grads) = model.loss_and_grads(&input, &targets).map_err(|e| e.to_string())?;
        // Each operator's parameters separately, then the whole forward pass.
        for (g, prefix) in GROUPS.iter().enumerate() {
            let report = check_gradients(
                &model,
                &grads,
                |n| n.starts_with(prefix),
                |m| Ok(cross_entropy_loss(&m.forward(&input)?.logits, &targets)?.0),
                Tolerance::default(),
            )
            .map_err(|e| e.to_string())?;
            ensure!(report.passed(), "seed {seed}, {prefix}: {:?}", report.failures.first());
            per_group[g] += report.checked;
        }
        let report = check_gradients(
            &model,
            &grads,
            |_| true,
            |m| Ok(cross_entropy_loss(&m.forward(&input)?.logits, &targets)?.0),
            Tolerance::default(),
        )
        .map_err(|e| e.to_string())?;
        ensure!(report.passed(), "seed {seed}, full model: {:?}", report.failures.first());
        checked += report.checked;
        kinks += report.kinks;

        // The loss with respect to its logits.
        let n = targets.len();
        let logits = Tensor::<f64>::matrix(n, 3, (0..n * 3).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let (_, grad) = cross_entropy_loss(&logits, &targets).map_err(|e| e.to_string())?;
        let h = 1e-6;
        for e in 0..logits.len() {
            let mut p = logits.clone();
            p.data_mut()[e] += h;
            let mut m = logits.clone();
            m.data_mut()[e] -= h;
            let fd = (cross_entropy_loss(&p, &targets).unwrap().0 - cross_entropy_loss(&m, &targets).unwrap().0) / (2.0 * h);
            ensure!((fd - grad.data()[e]).abs() < 1e-7, "seed {seed}: loss gradient entry {e}");
        }
    }
    ensure!(per_group.iter().all(|&c| c > 0), "an operator group had no parameters: {per_group:?}");
    ensure!(kinks * 50 < checked, "{kinks} of {checked} entries hit activation kinks");
    within(start, Duration::from_secs(120), "gradient suite")?;
    Ok(format!("20 instances, {checked} entries, {kinks} kinks skipped"))
}

// 3

fn equivariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (pts, normals): (Vec<Vec3>, Vec<Vec3>) = (0..64)
        .map(|_| {
            let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            (p, geom::normalize(p).unwrap())
        })
        .unzip();
    let cloud = PointCloud::with_normals(pts, normals).unwrap();
    let model = SegModel::<f32>::new(ModelConfig::default(), 3).map_err(|e| e.to_string())?;
    let input = NetInput::<f32>::from_cloud(&cloud, 20).map_err(|e| e.to_string())?;
    let base = model.forward(&input).map_err(|e| e.to_string())?.logits;
    let bottleneck = model.graph_extract_bottleneck(&input).map_err(|e| e.to_string())?;
    for trial in 0..50 {
        let mut perm: Vec<usize> = (0..64).collect();
        perm.shuffle(&mut rng);
        let input = NetInput::<f32>::from_cloud(&cloud.select(&perm), 20).map_err(|e| e.to_string())?;
        let logits = model.forward(&input).map_err(|e| e.to_string())?.logits;
        for (r, &p) in perm.iter().enumerate() {
            ensure!(logits.row(r) == base.row(p), "permutation {trial}: row {r} differs");
        }
        ensure!(model.graph_extract_bottleneck(&input).map_err(|e| e.to_string())? == bottleneck, "permutation {trial}: bottleneck differs");
    }
    Ok("50 permutations, bit-exact".into())
}

// 4

/// Two jittered unit-spacing grids meeting at 90° along the y axis.
fn dihedral(side: usize, seed: u64) -> (PointCloud, LabelMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pts, mut normals) = (Vec::new(), Vec::new());
    for wall in [false, true] {
        for i in 0..side * side {
            let u = (i % side) as f64 + 0.5 + rng.random_range(-0.3..0.3);
            let v = (i / side) as f64 + rng.random_range(-0.3..0.3);
            pts.push(if wall { [0.0, v, u] } else { [u, v, 0.0] });
            normals.push(if wall { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] });
        }
    }
    let truth = LabelMap::new((0..2 * side * side).map(|i| usize::from(i >= side * side)).collect()).unwrap();
    (PointCloud::with_normals(pts, normals).unwrap(), truth)
}

fn patch(side: usize, z: f64, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    (0..side * side)
        .map(|i| [(i % side) as f64 + rng.random_range(-0.3..0.3), (i / side) as f64 + rng.random_range(-0.3..0.3), z])
        .collect()
}

fn srg() -> Outcome {
    let config = SrgConfig::default();
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let (cloud, truth) = dihedral(30, seed);
        let labels = srg_segment(&cloud, &config, 2, seed).map_err(|e| e.to_string())?;
        worst = worst.max(1.0 - overall_accuracy(&labels, &truth).unwrap());

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = patch(20, 0.0, &mut rng);
        pts.extend(patch(20, 10.0, &mut rng));
        let two = PointCloud::with_normals(pts, vec![[0.0, 0.0, 1.0]; 800]).unwrap();
        let truth = LabelMap::new((0..800).map(|i| usize::from(i >= 400)).collect()).unwrap();
        let labels = srg_segment(&two, &config, 2, seed).map_err(|e| e.to_string())?;
        worst = worst.max(1.0 - overall_accuracy(&labels, &truth).unwrap());

        let plane = PointCloud::with_normals(patch(25, 0.0, &mut rng), vec![[0.0, 0.0, 1.0]; 625]).unwrap();
        let index = SpatialIndex::build(&plane).unwrap();
        let regions = grow_regions(&plane, &index, &config, seed).map_err(|e| e.to_string())?.num_clusters();
        ensure!(regions == 1, "seed {seed}: plane grew {regions} regions");
    }
    ensure!(worst <= 0.02, "misassignment {worst:.4} > 0.02");

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..50u64 {
        let noise = rng.random_range(0.0..0.02);
        let lc = make_synthetic(SynthKind::Sphere, &SynthParams { n: 600, noise, ..Default::default() }, trial).unwrap();
        let cloud = with_estimated_normals(&lc.cloud, 25).map_err(|e| e.to_string())?.0;
        let index = SpatialIndex::build(&cloud).unwrap();
        let mut last = usize::MAX;
        for deg in [5.0, 10.0, 15.0, 30.0, 60.0, 90.0] {
            let c = SrgConfig { normal_threshold_deg: deg, ..Default::default() };
            let count = grow_regions(&cloud, &index, &c, trial).map_err(|e| e.to_string())?.num_clusters();
            ensure!(count <= last, "trial {trial}: {deg}° gave {count} regions, more than {last}");
            last = count;
        }

        let kind = [SynthKind::Dihedral, SynthKind::Sphere, SynthKind::Humanoid6][trial as usize % 3];
        let params = SynthParams { n: 800, normals: true, ..Default::default() };
        let cloud = make_synthetic(kind, &params, trial).unwrap().cloud;
        let axis = geom::normalize([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .unwrap_or([0.0, 0.0, 1.0]);
        let rot = geom::rotation(axis, rng.random_range(0.0..std::f64::consts::TAU));
        let shift = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        let moved = cloud.rigid_transform(&rot, shift);
        let a = srg_segment(&cloud, &config, 2, 7).map_err(|e| e.to_string())?;
        let b = srg_segment(&moved, &config, 2, 7).map_err(|e| e.to_string())?;
        ensure!(a.same_partition(&b), "trial {trial}: rigid motion changed the partition ({kind:?})");
    }
    Ok(format!("worst misassignment {:.2}%, monotone and invariant on 50 trials", worst * 100.0))
}

// 5

fn refinement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..100 {
        let n = rng.random_range(1..200);
        let pred: Vec<i64> = (0..n).map(|_| rng.random_range(0..6)).collect();
        let groups: Vec<i64> = (0..n).map(|_| rng.random_range(0..12)).collect();
        let sp = Superpoints::from_labels(&LabelMap::from_raw(&groups));
        let pred = LabelMap::from_raw(&pred);
        let once = refine_labels(&pred, &sp).map_err(|e| e.to_string())?;
        for group in sp.groups() {
            ensure!(group.iter().all(|&i| once.get(i) == once.get(group[0])), "trial {trial}: superpoint not constant");
        }
        let twice = refine_labels(&once, &sp).map_err(|e| e.to_string())?;
        ensure!(twice == once, "trial {trial}: not idempotent");
    }
    let sp = Superpoints::from_groups(vec![vec![0, 1, 2]]).unwrap();
    let out = refine_assignment(&[2, 2, 1], &sp).map_err(|e| e.to_string())?;
    ensure!(out == [2, 2, 2], "[2,2,1] refined to {out:?}");
    Ok("100 random pairs; [2,2,1] -> [2,2,2]".into())
}

// 6, 7, 9: through the command-line binary.

fn pointseg(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pointseg"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim());
    Ok(())
}

fn report_miou(path: &Path) -> Result<f64, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    v["miou"].as_f64().ok_or_else(|| "report without miou".into())
}

struct HumanoidScores {
    srgnet: Vec<f64>,
    srg: Vec<f64>,
    kmeans: Vec<f64>,
    slowest: Duration,
}

fn humanoid_scores() -> Result<&'static HumanoidScores, String> {
    static SCORES: std::sync::OnceLock<Result<HumanoidScores, String>> = std::sync::OnceLock::new();
    SCORES
        .get_or_init(|| {
            let dir = tempdir().map_err(|e| e.to_string())?;
            let d = dir.path();
            let mut s = HumanoidScores { srgnet: vec![], srg: vec![], kmeans: vec![], slowest: Duration::ZERO };
            for seed in 0..5 {
                let seed = seed.to_string();
                let input = format!("h{seed}.ply");
                pointseg(d, &["synth", "humanoid6", "--n", "6000", "--noise", "0.01", "--seed", &seed, "--out", &input])?;
                let start = Instant::now();
                let net = format!("net{seed}");
                pointseg(d, &["segment", &input, "--method", "srgnet", "--parts", "6", "--iters", "300", "--seed", &seed, "--out", &net])?;
                s.slowest = s.slowest.max(start.elapsed());
                let stem = format!("h{seed}.report.json");
                s.srgnet.push(report_miou(&d.join(&net).join(&stem))?);
                let srg = format!("srg{seed}");
                pointseg(d, &["segment", &input, "--method", "srg", "--parts", "6", "--seed", &seed, "--out", &srg])?;
                s.srg.push(report_miou(&d.join(&srg).join(&stem))?);
                let km = format!("km{seed}");
                pointseg(d, &["baseline", &input, "--parts", "6", "--seed", &seed, "--out", &km])?;
                s.kmeans.push(report_miou(&d.join(&km).join(&stem))?);
            }
            Ok(s)
        })
        .as_ref()
        .map_err(Clone::clone)
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

fn humanoid_quality() -> Outcome {
    let s = humanoid_scores()?;
    let (net, srg) = (median(s.srgnet.clone()), median(s.srg.clone()));
    let detail = format!("SRG-Net median {net:.3} [{}], SRG-only median {srg:.3} [{}]", fmt(&s.srgnet), fmt(&s.srg));
    ensure!(s.slowest < Duration::from_secs(600), "{detail}; slowest run {:.0} s", s.slowest.as_secs_f64());
    ensure!(net >= 0.80, "{detail}; below 0.80");
    ensure!(net >= srg - 0.02, "{detail}; more than 0.02 below SRG-only");
    Ok(detail)
}

fn kmeans_gap() -> Outcome {
    let s = humanoid_scores()?;
    let (net, km) = (median(s.srgnet.clone()), median(s.kmeans.clone()));
    let detail = format!("k-means median {km:.3} [{}], SRG-Net median {net:.3}", fmt(&s.kmeans));
    ensure!(km <= net - 0.10, "{detail}; gap below 0.10");
    Ok(detail)
}

fn replay() -> Outcome {
    let dir = tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    pointseg(d, &["synth", "humanoid6", "--n", "2000", "--noise", "0.01", "--seed", "11", "--out", "h.ply"])?;
    pointseg(d, &["segment", "h.ply", "--method", "srgnet", "--parts", "6", "--iters", "100", "--seed", "11", "--out", "a"])?;
    pointseg(d, &["segment", "--manifest", "a/manifest.json", "--out", "b"])?;
    let a = fs::read(d.join("a/h.ply")).map_err(|e| e.to_string())?;
    let b = fs::read(d.join("b/h.ply")).map_err(|e| e.to_string())?;
    ensure!(a == b, "replayed labels differ");
    Ok(format!("{} bytes identical", a.len()))
}

// 8

fn brute_force_best(w: &[Vec<f64>]) -> f64 {
    fn go(w: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == w.len() {
            return 0.0;
        }
        // A row may also stay unmatched when there are more rows than columns.
        let mut best = if w.len() > w[0].len() { go(w, row + 1, used) } else { f64::NEG_INFINITY };
        for c in 0..w[0].len() {
            if !used[c] {
                used[c] = true;
                best = best.max(w[row][c] + go(w, row + 1, used));
                used[c] = false;
            }
        }
        best
    }
    go(w, 0, &mut vec![false; w[0].len()])
}

fn hungarian() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..500 {
        let rows = rng.random_range(1..=6);
        let cols = rng.random_range(1..=6);
        let w: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.random_range(0..20) as f64).collect()).collect();
        let assignment = hungarian_max(&w);
        let mut seen = vec![false; cols];
        let mut total = 0.0;
        for (r, c) in assignment.iter().enumerate() {
            if let Some(c) = *c {
                ensure!(!seen[c], "trial {trial}: column {c} used twice");
                seen[c] = true;
                total += w[r][c];
            }
        }
        ensure!(assignment.iter().flatten().count() == rows.min(cols), "trial {trial}: not a full matching");
        let best = brute_force_best(&w);
        ensure!(total == best, "trial {trial}: {total} vs brute force {best}");
    }
    let truth = LabelMap::new(vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]).unwrap();
    let m = matched_miou(&LabelMap::constant(10), &truth).map_err(|e| e.to_string())?;
    ensure!(m.miou == 0.25, "constant prediction scored {}", m.miou);
    Ok("500 matrices; constant prediction scores 0.25".into())
}

// 10

fn ply_round_trip() -> Outcome {
    let dir = tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for trial in 0..50 {
        let n = rng.random_range(1..400);
        let scale = 10f64.powi(rng.random_range(-3..4));
        let pts: Vec<Vec3> = random_positions(&mut rng, n).into_iter().map(|p| p.map(|c| c * scale)).collect();
        let labels = LabelMap::from_raw(&(0..n).map(|_| rng.random_range(0..15)).collect::<Vec<i64>>());
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let path = dir.path().join(format!("c{trial}.ply"));
        write_labeled_ply(&path, &cloud, &labels).map_err(|e| e.to_string())?;
        let back = read_ply(&path).map_err(|e| e.to_string())?;
        ensure!(back.truth.as_ref() == Some(&labels), "trial {trial}: labels changed");
        for (a, b) in pts.iter().zip(back.cloud.positions()) {
            for k in 0..3 {
                let tol = 1e-7 * a[k].abs().max(1.0);
                ensure!((a[k] - b[k]).abs() <= tol, "trial {trial}: {} read back as {}", a[k], b[k]);
            }
        }
    }
    Ok("50 clouds".into())
}
