//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use forensic_lineup::calibrate::build_table;
use forensic_lineup::degrade::{
    apply_spec, crop_resize, DegradationGrid, DegradationSpec, Family, RasterImage,
};
use forensic_lineup::embed::{
    self, cosine_similarity, BackendDescriptor, Embedding, EmbeddingArchive,
};
use forensic_lineup::fixture::gen_fixture;
use forensic_lineup::lineup::{
    build_lineup, evaluate_lineup, sweep_degradation, sweep_rank_offset, AccuracyCurve, CurvePoint,
    Lineup, LineupPolicy,
};
use forensic_lineup::manifest::{self, parse_records, DatasetManifest, Role, Strictness};
use forensic_lineup::rng::{Gaussian, SplitMix64};
use forensic_lineup::stats::{binomial_sigma, spearman, CHANCE};

type Check = Result<String, String>;
type Criterion = (&'static str, u64, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(name: &str, limit: Duration, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f))
        .unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
    let elapsed = start.elapsed();
    let (pass, detail) = match outcome {
        Ok(d) if elapsed <= limit => (true, d),
        Ok(d) => (false, format!("{d}; took {elapsed:.1?}, limit {limit:?}")),
        Err(d) => (false, d),
    };
    println!(
        "{} {name}: {detail} [{:.1}s]",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    pass
}

// ---------------------------------------------------------------- oracle

/// Exhaustive lineup oracle: every probe against every mugshot, straight
/// from the records and raw vectors.
fn oracle_lineup(m: &DatasetManifest, archive: &EmbeddingArchive, probe_id: &str, n: usize) -> (String, Vec<String>, Vec<f64>) {
    let mut mugshot_of: BTreeMap<&str, &str> = BTreeMap::new();
    for r in &m.records {
        if r.role == Role::Mugshot {
            let e = mugshot_of.entry(&r.identity_id).or_insert(&r.image_id);
            if r.image_id.as_str() < *e {
                *e = &r.image_id;
            }
        }
    }
    let probe = m.records.iter().find(|r| r.image_id == probe_id).unwrap();
    let pv = archive.get(probe_id).unwrap().values();
    let sim = |a: &[f64], b: &[f64]| {
        let mut d = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for i in 0..a.len() {
            d += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        (d / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
    };
    let mut ranked: Vec<(f64, &str, &str)> = mugshot_of
        .iter()
        .filter(|(id, _)| **id != probe.identity_id)
        .map(|(id, img)| (sim(pv, archive.get(img).unwrap().values()), *id, *img))
        .collect();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
    let picked = &ranked[n - 5..n];
    (
        mugshot_of[probe.identity_id.as_str()].to_string(),
        picked.iter().map(|p| p.2.to_string()).collect(),
        picked.iter().map(|p| p.0).collect(),
    )
}

fn check_against_oracle(m: &DatasetManifest, archive: &EmbeddingArchive) -> Result<usize, String> {
    let mugshots = manifest::select_mugshots(m);
    let n_ids = mugshots.len();
    let mut checked = 0;
    for probe in m.records.iter().filter(|r| r.role == Role::Unconstrained) {
        for n in 5..n_ids {
            let policy = LineupPolicy::with_offset(n).unwrap();
            let l = build_lineup(probe, archive, &mugshots, &policy).map_err(|e| e.to_string())?;
            let (target, ids, sims) = oracle_lineup(m, archive, &probe.image_id, n);
            ensure(l.target_id == target && l.decoy_ids == ids, || {
                format!("{} n={n}: got {:?}, oracle {:?}", probe.image_id, l.decoy_ids, ids)
            })?;
            for (a, b) in l.decoy_similarities.iter().zip(&sims) {
                ensure((a - b).abs() < 1e-12, || format!("{} n={n}: similarity {a} vs {b}", probe.image_id))?;
            }
            checked += 1;
        }
        // Offset equal to the identity count exceeds the other identities available.
        let too_far = LineupPolicy::with_offset(n_ids).unwrap();
        ensure(build_lineup(probe, archive, &mugshots, &too_far).is_err(), || {
            format!("n={n_ids} accepted with {} other identities", n_ids - 1)
        })?;
    }
    Ok(checked)
}

fn lineup_oracle() -> Check {
    let mut total = 0;
    let mut worlds = 0;
    for n_ids in 6..=12 {
        for seed in 0..4u64 {
            let coarse = seed % 2 == 1;
            let (m, archive) = common::random_world(n_ids, 2, 16, seed * 100 + n_ids as u64, coarse);
            total += check_against_oracle(&m, &archive)?;
            worlds += 1;
        }
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m = gen_fixture(12, 2, 5, dir.path()).map_err(|e| e.to_string())?;
    let archive = embed::batch_embed(&m, &BackendDescriptor::Baseline { seed: 1 }, None).map_err(|e| e.to_string())?;
    total += check_against_oracle(&m, &archive)?;
    Ok(format!(
        "{total} lineups over {} worlds (6-12 identities, with and without ties) and a 12-identity baseline fixture match the exhaustive oracle",
        worlds
    ))
}

// ---------------------------------------------------------------- chance

fn chance_level() -> Check {
    let trials = 10_000;
    let mut g = Gaussian::new(2024);
    let mut correct = 0;
    for t in 0..trials {
        let probe = common::random_unit(&mut g, 128);
        let target = common::random_unit(&mut g, 128);
        let decoys: Vec<Embedding> = (0..5).map(|_| common::random_unit(&mut g, 128)).collect();
        let l = Lineup {
            probe_id: format!("q{t}"),
            probe_identity: "probe".into(),
            target_id: "t".into(),
            target_similarity: cosine_similarity(&probe, &target).unwrap(),
            decoy_ids: (0..5).map(|i| format!("d{i}")).collect(),
            decoy_identities: (0..5).map(|i| format!("decoy{i}")).collect(),
            decoy_similarities: decoys.iter().map(|d| cosine_similarity(&probe, d).unwrap()).collect(),
        };
        correct += usize::from(evaluate_lineup(l).correct);
    }
    let acc = correct as f64 / trials as f64;
    let sigma = binomial_sigma(CHANCE, trials);
    let z = (acc - CHANCE) / sigma;
    ensure(z.abs() <= 3.0, || format!("accuracy {acc:.4}, z = {z:.2}"))?;
    Ok(format!("accuracy {acc:.4} over {trials} lineups, z = {z:.2} (|z| <= 3)"))
}

// ---------------------------------------------------------------- ties

fn strict_ties() -> Check {
    let mut rng = SplitMix64::new(99);
    let mut cases = 0;
    for _ in 0..2000 {
        let mut decoys: Vec<f64> = (0..5).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        let max = decoys.iter().cloned().fold(f64::MIN, f64::max);
        let mk = |target: f64, decoys: Vec<f64>| Lineup {
            probe_id: "p".into(),
            probe_identity: "x".into(),
            target_id: "t".into(),
            target_similarity: target,
            decoy_ids: (0..5).map(|i| format!("d{i}")).collect(),
            decoy_identities: (0..5).map(|i| format!("y{i}")).collect(),
            decoy_similarities: decoys,
        };
        ensure(!evaluate_lineup(mk(max, decoys.clone())).correct, || format!("tie at {max} counted correct"))?;
        ensure(evaluate_lineup(mk(max.next_up(), decoys.clone())).correct, || {
            format!("target just above {max} counted incorrect")
        })?;
        decoys[rng.below(5) as usize] = 1.0;
        ensure(!evaluate_lineup(mk(1.0, decoys)).correct, || "tie at 1.0 counted correct".into())?;
        cases += 3;
    }

    // Through the gallery: target and one decoy mugshot both carry the probe's embedding.
    let (m, mut archive) = common::random_world(8, 1, 16, 3, false);
    let mugshots = manifest::select_mugshots(&m);
    let probe = m.records.iter().find(|r| r.image_id == "p00_0").unwrap();
    let twin = archive.get("p00_0").unwrap().clone();
    let mut rebuilt = EmbeddingArchive::new("random", 16);
    for (id, e) in archive.iter() {
        rebuilt.insert(id, if id == "p05_m" || id == "p00_m" { &twin } else { e }).unwrap();
    }
    archive = rebuilt;
    let l = build_lineup(probe, &archive, &mugshots, &LineupPolicy::default()).map_err(|e| e.to_string())?;
    ensure(l.decoy_ids[0] == "p05_m", || format!("twin not ranked first: {:?}", l.decoy_ids))?;
    ensure(!evaluate_lineup(l).correct, || "gallery tie counted correct".into())?;
    Ok(format!("{cases} constructed lineups plus a gallery twin: ties always incorrect, dominant targets always correct"))
}

// ---------------------------------------------------------------- degradation identities

fn random_image(seed: u64, w: u32, h: u32, channels: u8) -> RasterImage {
    let mut rng = SplitMix64::new(seed);
    RasterImage::from_fn(w, h, channels, |_, _, _| rng.below(256) as u8).unwrap()
}

fn degradation_identities() -> Check {
    let mut checked = 0;
    for (seed, (w, h, c)) in [(160, 160, 3), (37, 23, 1), (1, 1, 3), (64, 9, 3)].into_iter().enumerate() {
        let img = random_image(seed as u64, w, h, c);
        for (family, level) in [(Family::Blur, 1.0), (Family::Scale, 1.0), (Family::Gamma, 1.0)] {
            let out = apply_spec(&img, &DegradationSpec::new(family, level)).map_err(|e| e.to_string())?;
            ensure(out == img, || format!("({family}, {level}) changed a {w}x{h}x{c} image"))?;
            checked += 1;
        }
    }
    for v in [0u8, 1, 77, 128, 254, 255] {
        for c in [1u8, 3] {
            let img = RasterImage::filled(48, 40, c, v).unwrap();
            for snr in [-16.0, 0.0, 16.0] {
                let spec = DegradationSpec::new(Family::Noise, snr).with_seed(v as u64 + 7);
                ensure(apply_spec(&img, &spec).map_err(|e| e.to_string())? == img, || {
                    format!("noise {snr} dB changed constant {v}")
                })?;
                checked += 1;
            }
        }
    }

    let base = crop_resize(&random_image(11, 200, 180, 3), None).map_err(|e| e.to_string())?;
    let mut specs = 0;
    for family in Family::ALL {
        for level in family.default_levels() {
            let spec = DegradationSpec::new(family, level).with_seed(5);
            let a = apply_spec(&base, &spec).map_err(|e| e.to_string())?;
            let b = apply_spec(&base, &spec).map_err(|e| e.to_string())?;
            ensure(a.data() == b.data(), || format!("({family}, {level}) differs across runs"))?;
            ensure(a.encode_png().unwrap() == b.encode_png().unwrap(), || format!("({family}, {level}) PNG differs"))?;
            specs += 1;
        }
    }
    Ok(format!(
        "{checked} identity cases exact; {specs} operator settings byte-identical across two runs"
    ))
}

// ---------------------------------------------------------------- trends

fn blur_trend() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m = gen_fixture(40, 5, 7, dir.path()).map_err(|e| e.to_string())?;
    let grid = DegradationGrid::new(Family::Blur, vec![1.0, 5.0, 9.0, 13.0, 17.0]).unwrap();
    let curve = sweep_degradation(&m, &BackendDescriptor::Baseline { seed: 0 }, &grid, &LineupPolicy::default(), 0)
        .map_err(|e| e.to_string())?;
    let rho = spearman(&curve.levels(), &curve.accuracies());
    let accs: Vec<String> = curve.accuracies().iter().map(|a| format!("{a:.3}")).collect();
    ensure(rho <= -0.8, || format!("Spearman {rho:.3} > -0.8; accuracies {accs:?}"))?;
    Ok(format!("accuracies {accs:?} over {} probes, Spearman {rho:.3}", curve.points[0].n_probes))
}

fn rank_offset_monotone() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m = gen_fixture(60, 3, 11, dir.path()).map_err(|e| e.to_string())?;
    let pts = sweep_rank_offset(&m, &BackendDescriptor::Baseline { seed: 0 }, &LineupPolicy::default(), &[5, 15, 30])
        .map_err(|e| e.to_string())?;
    let desc: Vec<String> = pts
        .iter()
        .map(|p| format!("n={}: acc {:.3}, decoy sim {:.4}", p.rank_offset, p.accuracy, p.mean_decoy_similarity))
        .collect();
    for w in pts.windows(2) {
        ensure(w[1].accuracy >= w[0].accuracy, || format!("accuracy decreased: {desc:?}"))?;
        ensure(w[1].mean_decoy_similarity < w[0].mean_decoy_similarity, || {
            format!("decoy similarity not strictly decreasing: {desc:?}")
        })?;
    }
    Ok(desc.join("; "))
}

// ---------------------------------------------------------------- calibration

fn curve(family: Family, pts: &[(f64, f64)], n: usize) -> AccuracyCurve {
    AccuracyCurve {
        family,
        dataset_id: "constructed".into(),
        points: pts
            .iter()
            .map(|&(level, accuracy)| CurvePoint { level, accuracy, n_probes: n })
            .collect(),
    }
}

fn calibration() -> Check {
    let backend = BackendDescriptor::Baseline { seed: 0 };
    let policy = LineupPolicy::default();
    let real_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let synth_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let real_m = gen_fixture(40, 5, 7, real_dir.path()).map_err(|e| e.to_string())?;
    let synth_m = gen_fixture(40, 5, 8, synth_dir.path()).map_err(|e| e.to_string())?;

    let real_grid = DegradationGrid::new(Family::Noise, Family::Noise.default_levels()).unwrap();
    let synth_levels: Vec<f64> = (0..=8).map(|i| 16.0 - 4.0 * i as f64).collect();
    let synth_grid = DegradationGrid::new(Family::Noise, synth_levels).unwrap();
    let real = sweep_degradation(&real_m, &backend, &real_grid, &policy, 1).map_err(|e| e.to_string())?;
    let synth = sweep_degradation(&synth_m, &backend, &synth_grid, &policy, 1).map_err(|e| e.to_string())?;

    // Self-calibration on measured and constructed curves.
    let mut selfs = vec![real.clone(), synth.clone()];
    let mut rng = SplitMix64::new(4);
    for k in 0..20 {
        let mut acc = 1.0;
        let pts: Vec<(f64, f64)> = (0..6)
            .map(|i| {
                acc -= 0.01 + 0.1 * rng.next_f64();
                (1.0 + 4.0 * i as f64 + k as f64, acc)
            })
            .collect();
        selfs.push(curve(Family::Blur, &pts, 100));
    }
    for c in &selfs {
        let t = build_table(c, c).map_err(|e| e.to_string())?;
        for r in &t.rows {
            ensure(r.calibrated_level == r.real_level && r.achieved_accuracy == r.target_accuracy, || {
                format!("self-calibration moved {} to {} ({:?})", r.real_level, r.calibrated_level, c.accuracies())
            })?;
        }
    }

    // Doubled-parameter synthetic curves: same accuracies at twice the level.
    let mut doubled_rows = 0;
    for base in [&real, &synth] {
        let doubled = AccuracyCurve {
            points: base.points.iter().map(|p| CurvePoint { level: 2.0 * p.level, ..*p }).collect(),
            ..base.clone()
        };
        let t = build_table(base, &doubled).map_err(|e| e.to_string())?;
        for r in &t.rows {
            ensure((r.calibrated_level / 2.0 - r.real_level).abs() <= 1e-9, || {
                format!("doubled: {} -> {}", r.real_level, r.calibrated_level)
            })?;
            doubled_rows += 1;
        }
    }
    // Twice-as-effective parameter on a grid that does not contain the answers.
    let lin_real: Vec<(f64, f64)> = [1.0, 5.0, 9.0, 13.0, 17.0].iter().map(|&l| (l, 0.9 - 0.04 * l)).collect();
    let lin_synth: Vec<(f64, f64)> = [0.25, 1.75, 3.1, 4.4, 6.0, 7.3, 9.0].iter().map(|&l| (l, 0.9 - 0.08 * l)).collect();
    let t = build_table(&curve(Family::Blur, &lin_real, 100), &curve(Family::Blur, &lin_synth, 100)).map_err(|e| e.to_string())?;
    for r in &t.rows {
        ensure((r.calibrated_level - r.real_level / 2.0).abs() <= 1e-9, || {
            format!("twice-as-effective: {} -> {}", r.real_level, r.calibrated_level)
        })?;
        doubled_rows += 1;
    }

    // Re-measure the synthetic set at the calibrated levels with fresh noise.
    let table = build_table(&real, &synth).map_err(|e| e.to_string())?;
    let rows: Vec<_> = table.rows.iter().filter(|r| !r.clamped).collect();
    let mut levels: Vec<f64> = rows.iter().map(|r| r.calibrated_level).collect();
    levels.dedup();
    ensure(levels.len() >= 2, || format!("only {} unclamped calibrated levels", levels.len()))?;
    let fresh = DegradationGrid::new(Family::Noise, levels).map_err(|e| e.to_string())?;
    let remeasured = sweep_degradation(&synth_m, &backend, &fresh, &policy, 1001).map_err(|e| e.to_string())?;
    let mut report = Vec::new();
    for r in rows {
        let p = remeasured.points.iter().find(|p| p.level == r.calibrated_level).unwrap();
        let sigma = binomial_sigma(r.target_accuracy, p.n_probes);
        let dev = (p.accuracy - r.target_accuracy).abs();
        report.push(format!(
            "{}dB->{:.2}dB target {:.3} got {:.3} (z={:.1})",
            r.real_level,
            r.calibrated_level,
            r.target_accuracy,
            p.accuracy,
            dev / sigma
        ));
        ensure(dev <= 2.0 * sigma, || format!("re-measurement outside 2 sigma: {}", report.join("; ")))?;
    }
    Ok(format!(
        "{} self-calibrations exact; {doubled_rows} doubled/halved rows within 1e-9; re-measured noise rows {}",
        selfs.len(),
        report.join("; ")
    ))
}

// ---------------------------------------------------------------- formats and CLI

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_forensic-lineup"))
}

fn run_stage(stage: &str, config: &Path) -> Result<(), String> {
    let out = bin()
        .args([stage, "--config"])
        .arg(config)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{stage} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr))
    })
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_file() {
            files.insert(p.clone(), fs::read(&p).unwrap());
        }
    }
    files
}

fn formats_and_pipeline() -> Check {
    // EMB1: random archives of several dimensions survive bytes and files unchanged.
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut g = Gaussian::new(8);
    for (dim, count) in [(1usize, 1usize), (128, 50), (512, 7), (3, 0)] {
        let mut a = EmbeddingArchive::new(format!("backend-{dim}"), dim);
        for i in 0..count {
            a.insert(format!("img-{i}-é"), &common::random_unit(&mut g, dim)).unwrap();
        }
        let bytes = a.to_bytes().unwrap();
        let b = EmbeddingArchive::from_bytes(&bytes).map_err(|e| e.to_string())?;
        ensure(b == a && b.to_bytes().unwrap() == bytes, || format!("EMB1 dim {dim} round trip differs"))?;
        let path = tmp.path().join(format!("a{dim}.emb"));
        embed::save_archive(&a, &path).map_err(|e| e.to_string())?;
        ensure(embed::load_archive(&path).map_err(|e| e.to_string())? == a, || "EMB1 file round trip differs".into())?;
    }

    // Full pipeline on two generated datasets.
    let root = tmp.path();
    let write_cfg = |name: &str, doc: serde_json::Value| {
        let p = root.join(name);
        fs::write(&p, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
        p
    };
    let grids = serde_json::json!([
        {"family": "blur", "levels": [1, 9, 17]},
        {"family": "jpeg", "levels": [0.9, 0.5, 0.1]}
    ]);
    let real_cfg = write_cfg("real.json", serde_json::json!({
        "manifest": "real/manifest.jsonl",
        "backend": {"kind": "baseline", "seed": 0},
        "output_dir": "out-real",
        "grids": grids,
        "rank_offsets": [5, 8],
        "fixture": {"n_identities": 12, "images_per_identity": 3, "seed": 7}
    }));
    let synth_cfg = write_cfg("synth.json", serde_json::json!({
        "manifest": "synth/manifest.jsonl",
        "backend": {"kind": "baseline", "seed": 0},
        "output_dir": "out-synth",
        "grids": grids,
        "fixture": {"n_identities": 12, "images_per_identity": 3, "seed": 8}
    }));
    let main_cfg = write_cfg("main.json", serde_json::json!({
        "manifest": "real/manifest.jsonl",
        "backend": {"kind": "baseline", "seed": 0},
        "output_dir": "out",
        "grids": grids,
        "rank_offsets": [5, 8],
        "calibrate": [
            {"real": "out-real/curve_blur.json", "synthetic": "out-synth/curve_blur.json"},
            {"real": "out-real/curve_jpeg.json", "synthetic": "out-synth/curve_jpeg.json"}
        ]
    }));
    run_stage("gen-fixture", &real_cfg)?;
    run_stage("gen-fixture", &synth_cfg)?;
    let m = manifest::load_manifest(&root.join("real/manifest.jsonl")).map_err(|e| e.to_string())?;
    let text = fs::read_to_string(root.join("real/manifest.jsonl")).unwrap();
    ensure(parse_records(&text, Strictness::Strict).unwrap() == m.records && m.to_jsonl() == text, || {
        "manifest round trip differs".into()
    })?;
    run_stage("sweep", &real_cfg)?;
    run_stage("sweep", &synth_cfg)?;

    let stages = ["embed", "eval", "sweep", "rank-sweep", "calibrate", "report"];
    for s in stages {
        run_stage(s, &main_cfg)?;
    }
    let out = root.join("out");
    let declared = [
        "embeddings.emb", "lineups.csv", "eval.json", "curve_blur.json", "curve_jpeg.json",
        "rank_offsets.csv", "calibration.csv", "calibration.json", "results.csv", "subgroups.csv",
        "scene.csv", "curve_blur.svg", "curve_jpeg.svg", "summary.json",
    ];
    for f in declared {
        ensure(out.join(f).is_file(), || format!("missing artifact {f}"))?;
    }
    let first = snapshot(&out);
    ensure(first.len() == declared.len(), || format!("unexpected files: {:?}", first.keys().collect::<Vec<_>>()))?;
    for s in stages {
        run_stage(s, &main_cfg)?;
    }
    let second = snapshot(&out);
    for (p, bytes) in &first {
        ensure(second.get(p) == Some(bytes), || format!("{} changed on rerun", p.display()))?;
    }
    Ok(format!(
        "EMB1 and manifest round trips lossless; {} stages produced {} artifacts, byte-identical on rerun",
        stages.len() + 2,
        declared.len()
    ))
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("lineup oracle equivalence", 10, lineup_oracle),
        ("chance level", 60, chance_level),
        ("strict-tie rule", 60, strict_ties),
        ("degradation identities", 60, degradation_identities),
        ("degradation trend (blur)", 120, blur_trend),
        ("rank-offset monotonicity", 120, rank_offset_monotone),
        ("calibration", 180, calibration),
        ("formats and CLI pipeline", 180, formats_and_pipeline),
    ];
    let mut failed = 0;
    for (name, secs, f) in criteria {
        if !run(name, Duration::from_secs(secs), f) {
            failed += 1;
        }
    }
    println!("acceptance: {failed} failing criteria");
    if failed > 0 {
        std::process::exit(1);
    }
}
