//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use crackfpn::synth::{synthesize_one, SynthParams};
use crackfpn_core::augment::AugmentConfig;
use crackfpn_core::loss::{soft_dice_grad, soft_dice_loss, LossKind};
use crackfpn_core::metrics::{dice_loss_metric, iou, overlap};
use crackfpn_core::nn::optim::OptimizerKind;
use crackfpn_core::postprocess::{dilate_threshold_extend, PostprocessParams};
use crackfpn_core::preprocess::{pad_to_tile_multiple, padded_len, split_training_tiles, SplitParams};
use crackfpn_core::rng::{seeded, Rng};
use crackfpn_core::tiling::{plan_tiles, predict_tiled};
use crackfpn_core::train::{TrainConfig, Trainer};
use crackfpn_core::{BinaryMask, FpnNet, ModelConfig, ProbMask, RasterImage, Tensor};
use rand::Rng as _;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    check(took <= limit, || format!("took {took:.1?}, limit {limit:?}"))
}

fn random_mask(rng: &mut Rng, h: usize, w: usize, density: f64) -> BinaryMask {
    let data = (0..h * w).map(|_| rng.gen_bool(density) as u8).collect();
    BinaryMask::new(h, w, data).unwrap()
}

fn random_image(rng: &mut Rng, h: usize, w: usize) -> RasterImage {
    let data = (0..h * w * 3).map(|_| rng.gen()).collect();
    RasterImage::new(h, w, data).unwrap()
}

fn padding_fidelity() -> Outcome {
    let start = Instant::now();
    for ((h, w), (ph, pw)) in [((3264usize, 4928usize), (3360, 5120)), ((3864, 5152), (4320, 5760))] {
        let expected = (h.div_ceil(480) * 480, w.div_ceil(640) * 640);
        check(expected == (ph, pw), || format!("oracle disagrees with {ph}x{pw}"))?;
        let got = (padded_len(h, 480), padded_len(w, 640));
        check(got == (ph, pw), || format!("{h}x{w} padded to {got:?}, expected {ph}x{pw}"))?;
        let padded = pad_to_tile_multiple(
            &RasterImage::filled(h, w, [1, 2, 3]).unwrap(),
            &BinaryMask::zeros(h, w).unwrap(),
            480,
            640,
        )
        .map_err(|e| e.to_string())?;
        check((padded.height(), padded.width()) == (ph, pw), || "padded pair extent".into())?;
    }
    within(Duration::from_secs(1), start)?;
    Ok("3264x4928 -> 3360x5120, 3864x5152 -> 4320x5760".into())
}

/// Window origins enumerated directly: every stride step that fits, plus a
/// final window flush with the far edge when the steps miss it.
fn oracle_origins(len: usize, tile: usize, stride: usize) -> Vec<usize> {
    let mut v = Vec::new();
    let mut o = 0;
    while o + tile <= len {
        v.push(o);
        o += stride;
    }
    if v.last().is_none_or(|&l| l + tile < len) {
        v.push(len - tile);
    }
    v
}

fn tile_count_oracle() -> Outcome {
    let start = Instant::now();
    let params = SplitParams::default();
    let mut lines = Vec::new();
    for ((h, w), train, base, center) in [((3264, 4928), 150, 56, 42), ((3864, 5152), 221, 81, 64)] {
        let padded = pad_to_tile_multiple(
            &RasterImage::filled(h, w, [0, 0, 0]).unwrap(),
            &BinaryMask::zeros(h, w).unwrap(),
            480,
            640,
        )
        .map_err(|e| e.to_string())?;
        let (ph, pw) = (padded.height(), padded.width());
        let rows = oracle_origins(ph, 480, 320);
        let cols = oracle_origins(pw, 640, 320);
        check(rows.len() * cols.len() == train, || format!("oracle gives {} windows", rows.len() * cols.len()))?;
        let tiles = split_training_tiles(&padded, &params, "img").map_err(|e| e.to_string())?;
        check(tiles.len() == train, || format!("{h}x{w}: {} training tiles, expected {train}", tiles.len()))?;
        let mut got: Vec<(usize, usize)> = tiles.iter().map(|t| (t.row_off, t.col_off)).collect();
        got.sort_unstable();
        let want: Vec<(usize, usize)> = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
        check(got == want, || "training windows differ from the oracle".into())?;

        let plan = plan_tiles(h, w, 480, 640).map_err(|e| e.to_string())?;
        let (gr, gc) = (ph / 480, pw / 640);
        let (ob, oc) = (gr * gc, (gr - 1) * (gc - 1));
        check((ob, oc) == (base, center), || format!("oracle gives {ob}+{oc}"))?;
        check(plan.base.len() == base && plan.center.len() == center, || {
            format!("plan has {}+{}, expected {base}+{center}", plan.base.len(), plan.center.len())
        })?;
        let mut centers: Vec<(usize, usize)> = plan.center.iter().map(|t| (t.row_off, t.col_off)).collect();
        centers.sort_unstable();
        let want: Vec<(usize, usize)> =
            (1..gr).flat_map(|i| (1..gc).map(move |j| (i * 480 - 240, j * 640 - 320))).collect();
        check(centers == want, || "center tiles are not on interior junctions".into())?;
        lines.push(format!("{train} train, {base}+{center}={}", base + center));
    }
    within(Duration::from_secs(1), start)?;
    Ok(lines.join("; "))
}

fn tiling_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(2024);
    for k in 0..20 {
        let (h, w) =
            if k < 2 { ([480, 960][k], [640, 1280][k]) } else { (rng.gen_range(1..1100), rng.gen_range(1..1400)) };
        let mask = random_mask(&mut rng, h, w, 0.3);
        let gray: Vec<u8> = mask.data().iter().flat_map(|&b| [b * 255; 3]).collect();
        let image = RasterImage::new(h, w, gray).unwrap();
        let plan = plan_tiles(h, w, 480, 640).map_err(|e| e.to_string())?;
        let mut identity = |t: &RasterImage| {
            let p = t.data().chunks(3).map(|px| px[0] as f32 / 255.0).collect();
            ProbMask::new(t.height(), t.width(), p)
        };
        let prob = predict_tiled(&mut identity, &image, &plan).map_err(|e| e.to_string())?;
        let back = prob.binarize(0.5).map_err(|e| e.to_string())?;
        check(back == mask, || format!("{h}x{w}: recombined mask differs"))?;
    }
    within(Duration::from_secs(30), start)?;
    Ok("20 sizes reproduced bit-exactly".into())
}

fn fpn_shape_contract() -> Outcome {
    let start = Instant::now();
    let mut net = FpnNet::new(ModelConfig::se_resnext50(), 0).map_err(|e| e.to_string())?;
    let mut rng = seeded(4);
    let x = Tensor::from_vec([2, 3, 480, 640], (0..2 * 3 * 480 * 640).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .map_err(|e| e.to_string())?;
    let f = net.forward_features(&x).map_err(|e| e.to_string())?;
    let c: Vec<[usize; 4]> = f.c.iter().map(Tensor::shape).collect();
    let want_c = [[2, 256, 120, 160], [2, 512, 60, 80], [2, 1024, 30, 40], [2, 2048, 15, 20]];
    check(c == want_c, || format!("encoder shapes {c:?}"))?;
    for (i, p) in f.p.iter().enumerate() {
        let want = [2, 256, want_c[i][2], want_c[i][3]];
        check(p.shape() == want, || format!("P{} is {:?}, expected {want:?}", i + 2, p.shape()))?;
    }
    for (i, h) in f.h.iter().enumerate() {
        check(h.shape() == [2, 256, 120, 160], || format!("H{} is {:?}", i + 2, h.shape()))?;
    }
    check(f.output.shape() == [2, 1, 480, 640], || format!("output {:?}", f.output.shape()))?;
    within(Duration::from_secs(60), start)?;
    Ok(format!("all shapes exact in {:.1?}", start.elapsed()))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(5);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let pred: Vec<f64> = (0..64).map(|_| rng.gen_range(0.01..0.99)).collect();
        let target: Vec<f64> = (0..64).map(|_| rng.gen_bool(0.3) as u8 as f64).collect();
        let grad = soft_dice_grad(&pred, &target, 1, 1.0).map_err(|e| e.to_string())?;
        for i in 0..64 {
            let mut up = pred.clone();
            let mut down = pred.clone();
            up[i] += h;
            down[i] -= h;
            let numeric = (soft_dice_loss(&up, &target, 1, 1.0).unwrap()
                - soft_dice_loss(&down, &target, 1, 1.0).unwrap())
                / (2.0 * h);
            let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-12);
            worst = worst.max(rel);
        }
    }
    check(worst <= 1e-3, || format!("worst relative error {worst:e}"))?;
    within(Duration::from_secs(30), start)?;
    Ok(format!("worst relative error {worst:.2e}"))
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(6);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let density = rng.gen_range(0.0..1.0);
        let a = random_mask(&mut rng, 16, 16, density);
        let density_b = rng.gen_range(0.0..1.0);
        let b = random_mask(&mut rng, 16, 16, density_b);
        let (mut inter, mut union, mut pa, mut pb) = (0u64, 0u64, 0u64, 0u64);
        for y in 0..16 {
            for x in 0..16 {
                let (p, l) = (a.get(y, x) == 1, b.get(y, x) == 1);
                inter += (p && l) as u64;
                union += (p || l) as u64;
                pa += p as u64;
                pb += l as u64;
            }
        }
        let o = overlap(&a, &b).map_err(|e| e.to_string())?;
        check((o.intersection, o.union, o.pred, o.label) == (inter, union, pa, pb), || "pixel counts differ".into())?;
        let want_iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        let want_dice = if pa + pb == 0 { 0.0 } else { 1.0 - 2.0 * inter as f64 / (pa + pb) as f64 };
        let (got_iou, got_dice) = (iou(&a, &b).unwrap(), dice_loss_metric(&a, &b).unwrap());
        check(got_iou == want_iou, || format!("iou {got_iou} vs {want_iou}"))?;
        check(got_dice == want_dice, || format!("dice loss {got_dice} vs {want_dice}"))?;
        worst = worst.max(((1.0 - got_dice) - 2.0 * got_iou / (1.0 + got_iou)).abs());
    }
    check(worst <= 1e-12, || format!("Dice-IoU identity off by {worst:e}"))?;
    within(Duration::from_secs(10), start)?;
    Ok(format!("1000 pairs exact, identity residual {worst:.1e}"))
}

fn threshold_semantics() -> Outcome {
    let start = Instant::now();
    let half = ProbMask::filled(4, 4, 0.5).unwrap().binarize(0.5).map_err(|e| e.to_string())?;
    check(half.count_ones() == 0, || "probability 0.5 became crack at threshold 0.5".into())?;
    let mut rng = seeded(7);
    for _ in 0..100 {
        let (h, w) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let prob = ProbMask::new(h, w, (0..h * w).map(|_| rng.gen_range(0.0..=1.0)).collect()).unwrap();
        let (t1, t2) = (rng.gen_range(0.0..=1.0f32), rng.gen_range(0.0..=1.0f32));
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let loose = prob.binarize(lo).unwrap();
        let strict = prob.binarize(hi).unwrap();
        let ok = strict.data().iter().zip(loose.data()).all(|(&s, &l)| s <= l);
        check(ok, || format!("mask at {hi} is not inside mask at {lo}"))?;
    }
    within(Duration::from_secs(5), start)?;
    Ok("0.5 -> background; 100 maps monotone".into())
}

/// Samples for the desk-scale run, generated at tile size.
fn synthetic_tiles(count: usize, seed: u64) -> Vec<(RasterImage, BinaryMask)> {
    let p = SynthParams { height: 160, width: 224, ..SynthParams::default() };
    (0..count).map(|i| synthesize_one(&p, seed, i)).collect()
}

fn desk_config(lr: f32, batch: usize, epochs: usize) -> TrainConfig {
    TrainConfig {
        model: ModelConfig::tiny(),
        epochs,
        batch_size: batch,
        learning_rate: lr,
        optimizer: OptimizerKind::AdaptiveMoments,
        loss: LossKind::Dice,
        augment: AugmentConfig::disabled(),
        seed: 11,
        ..TrainConfig::default()
    }
}

fn desk_scale_learning() -> Outcome {
    let start = Instant::now();
    let data = synthetic_tiles(200, 11);
    let cfg = desk_config(5e-4, 8, 40);
    let mut trainer = Trainer::new(cfg.clone()).map_err(|e| e.to_string())?;
    let mut reached = None;
    let mut last = 0.0;
    for epoch in 0..cfg.epochs as u64 {
        let stats = trainer.run_epoch(&data, epoch).map_err(|e| e.to_string())?;
        println!(
            "    epoch {epoch:2}: loss {:.4} train mIoU {:.4} ({:.0?})",
            stats.loss,
            stats.train_miou,
            start.elapsed()
        );
        last = stats.train_miou;
        if stats.train_miou >= 0.5 {
            reached = Some(epoch + 1);
            break;
        }
    }
    let took = start.elapsed();
    let epochs = reached.ok_or_else(|| format!("train mIoU {last:.4} after 40 epochs"))?;
    within(Duration::from_secs(600), start)?;

    let tile = synthetic_tiles(1, 12).remove(0);
    let mut single = Trainer::new(desk_config(5e-4, 1, 1)).map_err(|e| e.to_string())?;
    let mut loss = f32::INFINITY;
    for _ in 0..200 {
        loss = single.train_step(std::slice::from_ref(&tile)).map_err(|e| e.to_string())?.loss;
    }
    check(loss < 0.1, || format!("single-tile loss {loss:.4} after 200 steps"))?;
    Ok(format!("mIoU >= 0.5 after {epochs} epochs in {took:.0?}; single-tile loss {loss:.4}"))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_crackfpn"))
        .args(args)
        .env_remove("CRACKFPN_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || {
        format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr))
    })
}

fn pipeline(root: &Path, workers: &str) -> Result<Vec<u8>, String> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let w = ["--workers", workers];
    run_cli(
        &[&["synthesize", "--out", &p("data"), "--count", "4", "--size", "200x260", "--seed", "9"], &w[..]].concat(),
    )?;
    run_cli(
        &[
            &[
                "preprocess",
                "--images",
                &p("data/images"),
                "--labels",
                &p("data/labels"),
                "--out",
                &p("ds"),
                "--preset",
                "custom",
                "--tile",
                "96x128",
                "--stride",
                "64",
                "--background",
                "6",
                "--seed",
                "9",
            ],
            &w[..],
        ]
        .concat(),
    )?;
    run_cli(&[
        "train",
        "--manifest",
        &p("ds/manifest.jsonl"),
        "--out",
        &p("run"),
        "--encoder",
        "tiny",
        "--epochs",
        "2",
        "--batch-size",
        "4",
        "--lr",
        "5e-4",
        "--seed",
        "9",
    ])?;
    run_cli(
        &[
            &[
                "predict",
                "--checkpoint",
                &p("run/model.ckpt"),
                "--input",
                &p("data/images"),
                "--out",
                &p("pred"),
                "--tile",
                "96x128",
            ],
            &w[..],
        ]
        .concat(),
    )?;
    run_cli(
        &[&["evaluate", "--predictions", &p("pred"), "--labels", &p("data/labels"), "--out", &p("eval")], &w[..]]
            .concat(),
    )?;
    std::fs::read(root.join("eval/metrics.csv")).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = pipeline(a.path(), "1")?;
    let second = pipeline(b.path(), "3")?;
    check(!first.is_empty() && first == second, || "metrics.csv differs between runs".into())?;
    Ok(format!("metrics.csv identical ({} bytes), 1 vs 3 workers", first.len()))
}

fn postprocess_monotonicity() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(10);
    for _ in 0..100 {
        let (h, w) = (rng.gen_range(1..48), rng.gen_range(1..48));
        let density = rng.gen_range(0.0..0.3);
        let pred = random_mask(&mut rng, h, w, density);
        let photo = random_image(&mut rng, h, w);
        let params = PostprocessParams {
            kernel: [3, 5, 7][rng.gen_range(0..3)],
            iterations: rng.gen_range(1..4),
            intensity_threshold: rng.gen(),
            enabled: true,
        };
        let out = dilate_threshold_extend(&pred, &photo, &params).map_err(|e| e.to_string())?;
        let superset = pred.data().iter().zip(out.data()).all(|(&p, &o)| o >= p);
        check(superset, || "extension dropped a predicted pixel".into())?;
        let same = dilate_threshold_extend(&pred, &photo, &PostprocessParams { iterations: 0, ..params }).unwrap();
        check(same == pred, || "iterations=0 changed the mask".into())?;
    }
    within(Duration::from_secs(5), start)?;
    Ok("100 supersets, iterations=0 identity".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 padding fidelity", padding_fidelity),
        ("2 tile-count oracle", tile_count_oracle),
        ("3 tiling round trip", tiling_round_trip),
        ("4 FPN shape contract", fpn_shape_contract),
        ("5 gradient check", gradient_check),
        ("6 metric oracles", metric_oracles),
        ("7 threshold semantics", threshold_semantics),
        ("8 desk-scale learning", desk_scale_learning),
        ("9 determinism", determinism),
        ("10 post-process monotonicity", postprocess_monotonicity),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match result {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
