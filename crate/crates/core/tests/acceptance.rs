//! Acceptance criteria, one PASS/FAIL line each. Run with `--nocapture` to see them.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::{finite_difference_error, iou_oracle, mcc_oracle, pixel_rows, random_logits};
use mccseg::augment::{rotation_limit, AugmentPolicy};
use mccseg::eval::{confusion_counts, image_mean_iou, iou_per_class};
use mccseg::losses::{mcc_loss, regime_objective, MccConfig, Regime};
use mccseg::orchestrate::toy::{toy_run_config, write_toy_corpus, ToyConfig, TOY_RUN_SEED};
use mccseg::orchestrate::{train_run, MetricsRecord};
use mccseg::pipeline::{grid_tiles, sliding_windows, stitch_predictions, RasterPair, Split, TileGrid, WindowPrediction};
use mccseg::sampler::{compose_batch, Domain, MixedBatch, Sample, SampleStream};
use ndarray::{s, Array2, Array3, Array4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mcc(logits: &Array4<f64>, t: f64) -> f64 {
    mcc_loss(logits.view(), &MccConfig::exact(t), &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap()
        .value
}

fn gradient_check() -> Check {
    let start = Instant::now();
    let logits = random_logits((2, 4, 3, 3), 2.0, 11);
    let analytic = mcc_loss(logits.view(), &MccConfig::exact(2.5), &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap()
        .grad;
    let err = finite_difference_error(&logits, &analytic, 1e-5, |l| mcc(l, 2.5));
    let secs = start.elapsed().as_secs_f64();
    ensure(err < 1e-4, || format!("max relative error {err:.2e}"))?;
    ensure(secs < 10.0, || format!("took {secs:.1} s"))?;
    Ok(format!("max relative error {err:.2e} in {secs:.2} s"))
}

fn analytic_values() -> Check {
    for c in [2usize, 3, 5] {
        let loss = mcc(&Array4::zeros((1, c, 4, 4)), 2.5);
        let expected = (c as f64 - 1.0) / c as f64;
        ensure((loss - expected).abs() < 1e-9, || format!("C={c}: uniform loss {loss}, expected {expected}"))?;
    }
    // Every class owns some pixels and wins each of them by a margin of 100.
    let c = 4;
    let confident = Array4::from_shape_fn((1, c, 4, 4), |(_, k, y, x)| if (y * 4 + x) % c == k { 100.0 } else { 0.0 });
    let loss = mcc(&confident, 2.5);
    ensure(loss < 1e-3, || format!("margin-100 loss {loss:.2e}"))?;
    Ok(format!("uniform (C-1)/C for C in 2,3,5; margin-100 loss {loss:.1e}"))
}

fn invariances() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let (b, c, h, w) = (2, 3 + trial % 3, 3, 4);
        let logits = random_logits((b, c, h, w), 3.0, 1000 + trial as u64);
        let base = mcc(&logits, 2.5);
        let mut perm: Vec<usize> = (0..c).collect();
        perm.shuffle(&mut rng);
        let permuted = Array4::from_shape_fn((b, c, h, w), |(i, k, y, x)| logits[[i, perm[k], y, x]]);
        worst = worst.max((mcc(&permuted, 2.5) - base).abs());
        let mut pixels: Vec<(usize, usize, usize)> = (0..b).flat_map(|i| (0..h).flat_map(move |y| (0..w).map(move |x| (i, y, x)))).collect();
        let original = pixels.clone();
        pixels.shuffle(&mut rng);
        let mut shuffled = logits.clone();
        for (&(i, y, x), &(si, sy, sx)) in original.iter().zip(&pixels) {
            for k in 0..c {
                shuffled[[i, k, y, x]] = logits[[si, k, sy, sx]];
            }
        }
        worst = worst.max((mcc(&shuffled, 2.5) - base).abs());
    }
    ensure(worst < 1e-12, || format!("permutation deviation {worst:.2e}"))?;
    for trial in 0..20 {
        let logits = random_logits((1, 4, 4, 4), 1.0, 77 + trial);
        let losses: Vec<f64> = [1.0, 10.0, 100.0].iter().map(|a| mcc(&(&logits * *a), 2.5)).collect();
        ensure(losses[0] > losses[1] && losses[1] > losses[2], || format!("scaling not monotone: {losses:?}"))?;
    }
    Ok(format!("permutation deviation {worst:.1e}; scaling strictly decreasing"))
}

fn mixed_batch(b: usize, h: usize, seed: u64) -> MixedBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..b)
        .map(|i| {
            let domain = if i < b / 2 { Domain::Target } else { Domain::Source };
            let labels = Array2::from_shape_fn((h, h), |_| rng.gen_range(0..5));
            (domain, Sample::new(i.to_string(), Array3::zeros((3, h, h)), labels))
        })
        .collect();
    MixedBatch::from_samples(samples).unwrap()
}

fn objective_algebra() -> Check {
    let cfg = MccConfig::exact(2.5);
    let mut worst = 0.0f64;
    for trial in 0..50u64 {
        let b = 2 * (1 + trial as usize % 4);
        let batch = mixed_batch(b, 4, trial);
        let logits = random_logits((b, 5, 4, 4), 3.0, 500 + trial);
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let transfer = regime_objective(Regime::MccTransfer, &batch, logits.view(), &cfg, 0, &mut rng).unwrap().total;
        let combined = regime_objective(Regime::Combined, &batch, logits.view(), &cfg, 0, &mut rng).unwrap().total;
        // The unknown channel (index 0) takes no part in MCC.
        let source = logits.slice(s![b / 2.., 1.., .., ..]).to_owned();
        let direct = mcc_oracle(&pixel_rows(&source), 2.5);
        worst = worst.max((transfer - combined - direct).abs());
    }
    ensure(worst < 1e-9, || format!("deviation {worst:.2e}"))?;
    Ok(format!("transfer - combined = MCC(source half), deviation {worst:.1e}"))
}

fn iou_oracle_check() -> Check {
    let start = Instant::now();
    let mask = |bits: u32| -> Vec<u8> { (0..9).map(|i| ((bits >> i) & 1) as u8).collect() };
    let ours = |pred: &[u8], gt: &[u8], shape, c, unknown| {
        let p = Array2::from_shape_vec(shape, pred.to_vec()).unwrap();
        let g = Array2::from_shape_vec(shape, gt.to_vec()).unwrap();
        let per_class = iou_per_class(&confusion_counts(p.view(), g.view(), c, unknown).unwrap());
        let mean = image_mean_iou(&per_class, unknown);
        (per_class, mean)
    };
    for pb in 0..512 {
        let pred = mask(pb);
        for gb in 0..512 {
            let gt = mask(gb);
            ensure(ours(&pred, &gt, (3, 3), 2, u8::MAX) == iou_oracle(&pred, &gt, 2, None), || {
                format!("binary mismatch pred {pb:09b} gt {gb:09b}")
            })?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..1000 {
        let pred: Vec<u8> = (0..64).map(|_| rng.gen_range(0..5)).collect();
        let gt: Vec<u8> = (0..64).map(|_| rng.gen_range(0..5)).collect();
        ensure(ours(&pred, &gt, (8, 8), 5, 0) == iou_oracle(&pred, &gt, 5, Some(0)), || format!("multi-class trial {trial}"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("262144 binary patterns and 1000 random 8x8 maps exact in {secs:.1} s"))
}

fn pipeline_round_trips() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (h, w) = (1000, 1200);
    let image = Array3::from_shape_fn((h, w, 3), |_| rng.gen::<u8>());
    let labels = Array2::from_shape_fn((h, w), |(y, x)| ((y / 37 + x / 53) % 5) as u8);
    let scene = RasterPair::new("scene", image, labels.clone(), Split::Test).unwrap();

    let mut tile_counts = Vec::new();
    for tile in [100, 512] {
        let tiles = grid_tiles(&scene, tile).unwrap();
        let grid = TileGrid::new(h, w, tile).unwrap();
        // Partial tiles are dropped, so the grid covers the top-left tile-multiple rectangle.
        let (ch, cw) = (grid.rows * tile, grid.cols * tile);
        let mut image_back = Array3::<u8>::zeros((ch, cw, 3));
        let mut labels_back = Array2::<u8>::zeros((ch, cw));
        for (t, (r, c)) in tiles.iter().zip(grid.origins()) {
            image_back.slice_mut(s![r..r + tile, c..c + tile, ..]).assign(&t.image);
            labels_back.slice_mut(s![r..r + tile, c..c + tile]).assign(&t.labels);
        }
        ensure(
            image_back == scene.image.slice(s![..ch, ..cw, ..]) && labels_back == labels.slice(s![..ch, ..cw]),
            || format!("tile {tile} reassembly differs"),
        )?;
        tile_counts.push(tiles.len());
    }

    for stride in [256, 512] {
        let windows = sliding_windows(scene.image.view(), 512, stride).unwrap();
        let preds: Vec<WindowPrediction> = windows
            .iter()
            .map(|win| {
                let (r, c) = win.origin;
                let probs = Array3::from_shape_fn((5, 512, 512), |(k, y, x)| f32::from(labels[[r + y, c + x]] as usize == k));
                WindowPrediction { origin: win.origin, probs }
            })
            .collect();
        let stitched = stitch_predictions(&preds, (h, w)).unwrap();
        ensure(stitched == labels, || format!("identity stitch differs at stride {stride}"))?;
    }
    Ok(format!("{} and {} tiles reassembled; identity stitch exact for strides 256 and 512", tile_counts[0], tile_counts[1]))
}

fn sampler_composition() -> Check {
    let mut target = SampleStream::new("target", 13, 1).unwrap();
    let mut source = SampleStream::new("source", 29, 2).unwrap();
    let load = |_: Domain, i: usize| {
        Ok(Sample::new(i.to_string(), Array3::zeros((3, 2, 2)), Array2::zeros((2, 2))))
    };
    for n in 0..1000 {
        let batch = compose_batch(&mut target, &mut source, 8, load).map_err(|e| e.to_string())?;
        let t = batch.domains.iter().filter(|d| **d == Domain::Target).count();
        let s = batch.domains.iter().filter(|d| **d == Domain::Source).count();
        ensure((t, s) == (4, 4), || format!("batch {n} has {t} target and {s} source samples"))?;
    }
    Ok("1000 batches of 4 target + 4 source".into())
}

fn rotation_schedule() -> Check {
    let policy = AugmentPolicy::default();
    let mut seen = BTreeSet::new();
    let mut last = f64::NEG_INFINITY;
    for i in 0..=10_000 {
        let v = rotation_limit(i as f64 / 10_000.0, &policy).map_err(|e| e.to_string())?;
        ensure(v >= last, || format!("limit decreased at progress {}", i as f64 / 10_000.0))?;
        last = v;
        seen.insert(v.to_bits());
    }
    let values: Vec<f64> = seen.into_iter().map(f64::from_bits).collect();
    let expected: Vec<f64> = (1..=10).map(|k| 15.0 * k as f64).collect();
    ensure(values == expected, || format!("levels {values:?}"))?;
    Ok("ten levels 15..150, non-decreasing".into())
}

struct ToyOutcome {
    miou: Vec<(Regime, f64)>,
    supervised_log: Vec<MetricsRecord>,
}

fn toy_experiment(root: &std::path::Path) -> Result<ToyOutcome, String> {
    let corpus = write_toy_corpus(&root.join("data"), &ToyConfig::default()).map_err(|e| e.to_string())?;
    let mut miou = Vec::new();
    let mut supervised_log = Vec::new();
    for regime in Regime::ALL {
        let cfg = toy_run_config(regime, &corpus, TOY_RUN_SEED, root.join(regime.as_str()));
        let summary = train_run(&cfg).map_err(|e| e.to_string())?;
        let m = summary.final_val_miou.ok_or("no target-test mIoU")?;
        if regime == Regime::Supervised {
            supervised_log = summary.records;
        }
        miou.push((regime, m));
    }
    Ok(ToyOutcome { miou, supervised_log })
}

fn toy_check(outcome: &Result<ToyOutcome, String>, secs: f64) -> Check {
    let outcome = outcome.as_ref().map_err(Clone::clone)?;
    let get = |r: Regime| outcome.miou.iter().find(|(g, _)| *g == r).unwrap().1;
    let (sup, semi, transfer) = (get(Regime::Supervised), get(Regime::MccSemi), get(Regime::MccTransfer));
    let table = outcome
        .miou
        .iter()
        .map(|(r, m)| format!("{r} {m:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(secs < 900.0, || format!("took {secs:.0} s"))?;
    ensure(semi >= sup + 0.02, || format!("mcc_semi {semi:.4} < supervised {sup:.4} + 0.02 ({table})"))?;
    ensure(transfer >= sup, || format!("mcc_transfer {transfer:.4} < supervised {sup:.4} ({table})"))?;
    Ok(format!("{table} in {secs:.0} s"))
}

fn determinism(root: &std::path::Path, outcome: &Result<ToyOutcome, String>) -> Check {
    let first = &outcome.as_ref().map_err(Clone::clone)?.supervised_log;
    let corpus = write_toy_corpus(&root.join("data_again"), &ToyConfig::default()).map_err(|e| e.to_string())?;
    let cfg = toy_run_config(Regime::Supervised, &corpus, TOY_RUN_SEED, root.join("supervised_again"));
    let second = train_run(&cfg).map_err(|e| e.to_string())?.records;
    ensure(first.len() >= 50 && second.len() >= 50, || "fewer than 50 steps logged".into())?;
    let mismatch = (0..50).find(|&i| {
        let (a, b) = (&first[i], &second[i]);
        a.step != b.step || a.loss.to_bits() != b.loss.to_bits()
    });
    ensure(mismatch.is_none(), || format!("loss logs diverge at step {}", mismatch.unwrap() + 1))?;
    Ok("supervised loss logs identical through step 50".into())
}

fn report(id: usize, name: &str, check: impl FnOnce() -> Check) -> bool {
    let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    match &result {
        Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
        Err(detail) => println!("criterion {id:>2} FAIL  {name}: {detail}"),
    }
    result.is_ok()
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let mut passed = vec![
        report(1, "MCC gradient check", gradient_check),
        report(2, "MCC analytic values", analytic_values),
        report(3, "MCC invariances", invariances),
        report(4, "objective algebra", objective_algebra),
        report(5, "IoU oracle", iou_oracle_check),
        report(6, "pipeline round-trips", pipeline_round_trips),
        report(7, "sampler composition", sampler_composition),
        report(8, "rotation schedule", rotation_schedule),
    ];
    let start = Instant::now();
    let toy = toy_experiment(dir.path());
    let secs = start.elapsed().as_secs_f64();
    passed.push(report(9, "toy domain-shift experiment", || toy_check(&toy, secs)));
    passed.push(report(10, "determinism", || determinism(dir.path(), &toy)));
    let failed: Vec<usize> = passed.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i + 1).collect();
    println!("acceptance: {}/{} criteria pass", passed.len() - failed.len(), passed.len());
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
