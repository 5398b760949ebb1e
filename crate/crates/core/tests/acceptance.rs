//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_CRITERIA=1,2,5` restricts the run to a subset;
//! `ACCEPTANCE_OUT=<dir>` keeps the training artifacts.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fusionseg::checks::{gradient_suite, GRAD_TOL};
use fusionseg::kan::{KanLinear, SplineGrid};
use fusionseg::model::{Model, ModelConfig, Variant};
use fusionseg::nn::{Activation, Builder, BOA_MEMBERS};
use fusionseg::objective::{bce_loss, dice_loss, Confusion};
use fusionseg::pipeline::{
    ablate, cosine_lr, synth_dataset, train_on, window_means, AblationRow, AugmentConfig, Sample, TrainConfig,
};
use fusionseg::ssm::{scan_core, BranchMask, ClassicalMamba, MambaKanBlock, MambaSettings};
use fusionseg::tensor::{Ctx, Mode, ParamStore};
use fusionseg::{Graph, Result, Tensor};

type Criterion = fn() -> Result<Verdict>;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_f64(shape, &(0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>()).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// 1

fn gradient_checks() -> Result<Verdict> {
    let t = Instant::now();
    let checks = gradient_suite(0)?;
    let secs = t.elapsed().as_secs_f64();
    let mut worst = ("", 0.0f64);
    let mut failed = Vec::new();
    for c in &checks {
        println!(
            "    {:<18} max rel err {:.2e} over {} coords ({} kinks skipped)",
            c.layer, c.report.max_rel_err, c.report.checked, c.report.kinks
        );
        if c.report.max_rel_err > worst.1 {
            worst = (c.layer, c.report.max_rel_err);
        }
        if !c.passed() {
            failed.push(c.layer);
        }
    }
    let pass = failed.is_empty() && checks.len() == 13 && secs < 300.0;
    Ok(verdict(
        pass,
        format!(
            "{} layers, worst {} at {:.2e} (tol {GRAD_TOL:.0e}), {secs:.1}s (limit 300s){}",
            checks.len(),
            worst.0,
            worst.1,
            if failed.is_empty() { String::new() } else { format!(", failed: {failed:?}") }
        ),
    ))
}

// 2

struct ScanCase {
    dims: (usize, usize, usize, usize),
    ops: [Tensor<f64>; 6],
}

fn scan_case(rng: &mut ChaCha8Rng) -> ScanCase {
    let (n, l, e, s) =
        (rng.random_range(1..=2), rng.random_range(1..=64), rng.random_range(1..=8), rng.random_range(1..=8));
    let ops = [
        uniform(rng, &[n, l, e], -1.0, 1.0),
        uniform(rng, &[n, l, e], 0.01, 1.0),
        uniform(rng, &[e, s], -2.0, -0.05),
        uniform(rng, &[n, l, s], -1.0, 1.0),
        uniform(rng, &[n, l, s], -1.0, 1.0),
        uniform(rng, &[e], -1.0, 1.0),
    ];
    ScanCase { dims: (n, l, e, s), ops }
}

fn run_scan(ops: &[Tensor<f64>; 6]) -> Vec<f64> {
    let g = Graph::<f64>::no_grad();
    let v: Vec<_> = ops.iter().map(|t| g.constant(t.clone())).collect();
    let y = scan_core(v[0], v[1], v[2], v[3], v[4], v[5]).unwrap();
    y.value().data().to_vec()
}

/// Step-by-step recurrence with an explicit state per channel.
fn naive_scan((n, l, e, s): (usize, usize, usize, usize), ops: &[Tensor<f64>; 6]) -> Vec<f64> {
    let [u, dt, a, b, c, d] = ops.each_ref().map(|t| t.data());
    let mut y = vec![0.0; n * l * e];
    for bi in 0..n {
        for ei in 0..e {
            let mut h = vec![0.0; s];
            for t in 0..l {
                let i = (bi * l + t) * e + ei;
                let mut out = d[ei] * u[i];
                for si in 0..s {
                    let j = (bi * l + t) * s + si;
                    h[si] = (dt[i] * a[ei * s + si]).exp() * h[si] + dt[i] * b[j] * u[i];
                    out += c[j] * h[si];
                }
                y[i] = out;
            }
        }
    }
    y
}

fn scan_oracle() -> Result<Verdict> {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut causal_bad, mut decay_bad) = (0.0f64, 0, 0);
    for _ in 0..50 {
        let case = scan_case(&mut rng);
        let (n, l, e, s) = case.dims;
        let y = run_scan(&case.ops);
        worst = worst.max(max_abs_diff(&y, &naive_scan(case.dims, &case.ops)));

        // causality: a change at t0 leaves every earlier output untouched
        let t0 = rng.random_range(0..l);
        let mut pert = case.ops.clone();
        for bi in 0..n {
            for ei in 0..e {
                pert[0].data_mut()[(bi * l + t0) * e + ei] += 0.5;
            }
        }
        let yp = run_scan(&pert);
        for bi in 0..n {
            for i in (bi * l) * e..(bi * l + t0) * e {
                causal_bad += usize::from(yp[i] != y[i]);
            }
        }

        // decay: with the input silenced from t0 on, each state component
        // (read out through a one-hot C, no skip term) never grows
        let mut quiet = case.ops.clone();
        quiet[5] = Tensor::zeros(&[e]);
        for bi in 0..n {
            for i in (bi * l + t0) * e..(bi * l + l) * e {
                quiet[0].data_mut()[i] = 0.0;
            }
        }
        for si in 0..s {
            let mut q = quiet.clone();
            q[4].data_mut().iter_mut().enumerate().for_each(|(j, v)| *v = if j % s == si { 1.0 } else { 0.0 });
            let yq = run_scan(&q);
            for bi in 0..n {
                for t in t0.max(1)..l {
                    for ei in 0..e {
                        let (prev, cur) = (yq[(bi * l + t - 1) * e + ei], yq[(bi * l + t) * e + ei]);
                        decay_bad += usize::from(cur.abs() > prev.abs());
                    }
                }
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst < 1e-10 && causal_bad == 0 && decay_bad == 0 && secs < 60.0;
    Ok(verdict(
        pass,
        format!(
            "50 instances: max |scan - oracle| {worst:.1e} (tol 1e-10), causality violations {causal_bad}, decay violations {decay_bad}, {secs:.2}s (limit 60s)"
        ),
    ))
}

// 3

fn spline_properties() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut pou, mut support_bad, mut negative) = (0.0f64, 0, 0);
    for degree in 0..=3 {
        let grid = SplineGrid { lo: -1.0, hi: 1.0, intervals: 5, degree };
        let knots = grid.knots();
        let mut out = vec![0.0f64; grid.num_basis()];
        for _ in 0..1000 {
            let x: f64 = rng.random_range(-1.0..=1.0);
            grid.eval(x, &mut out, None);
            pou = pou.max((out.iter().sum::<f64>() - 1.0).abs());
            for (i, &b) in out.iter().enumerate() {
                negative += usize::from(b < 0.0);
                let inside =
                    knots[i] <= x && (x < knots[i + degree + 1] || (x == grid.hi && knots[i + degree + 1] >= x));
                support_bad += usize::from(b != 0.0 && !inside);
            }
        }
    }

    // zero spline coefficients leave exactly the base matmul
    let mut store = ParamStore::<f64>::new();
    let layer = KanLinear::new(
        &mut Builder::new(&mut store, &mut ChaCha8Rng::seed_from_u64(3)),
        6,
        4,
        SplineGrid::default(),
        Activation::Identity,
    )?;
    let shape = store.value(layer.spline_coeffs).shape().to_vec();
    store.set(layer.spline_coeffs, Tensor::zeros(&shape))?;
    let x = uniform(&mut rng, &[10, 6], -1.5, 1.5);
    let g = Graph::no_grad();
    let w = store.value(layer.base_weight).clone();
    let mut cx = Ctx::new(&g, &mut store, Mode::Eval);
    let y = layer.forward(&mut cx, g.constant(x.clone()))?;
    let mm = g.constant(x.clone()).linear(g.constant(w.clone()), None)?;
    let exact = y.value().data() == mm.value().data();
    let mut naive = vec![0.0; 40];
    for r in 0..10 {
        for q in 0..4 {
            naive[r * 4 + q] = (0..6).map(|p| w.data()[q * 6 + p] * x.data()[r * 6 + p]).sum();
        }
    }
    let loop_err = max_abs_diff(y.value().data(), &naive);

    let pass = pou <= 1e-12 && support_bad == 0 && negative == 0 && exact && loop_err < 1e-12;
    Ok(verdict(
        pass,
        format!(
            "degrees 0-3 x 1000 points: max |sum B - 1| {pou:.1e} (tol 1e-12), support violations {support_bad}, negative values {negative}; zero-spline KANLinear == matmul: {exact} (naive loop diff {loop_err:.1e})"
        ),
    ))
}

// 4

fn loss_metric_identities() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mask = uniform(&mut rng, &[2, 1, 16, 16], 0.0, 1.0).map(|v| if v < 0.3 { 1.0 } else { 0.0 });
    let g = Graph::<f64>::no_grad();
    let dice = dice_loss(g.constant(mask.clone()), g.constant(mask.clone()), 1e-5)?.value().item();
    let bce = bce_loss(g.constant(Tensor::zeros(&[2, 1, 16, 16])), g.constant(mask), 1e-7)?.value().item();
    let bce_err = (bce - std::f64::consts::LN_2).abs();

    let mut f1_err = 0.0f64;
    let mut pairs = 0;
    while pairs < 100 {
        let n = rng.random_range(1..200);
        let p: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let t: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let c = Confusion::count(p, t);
        if c.tp + c.fp + c.fn_ == 0 {
            continue;
        }
        f1_err = f1_err.max((c.f1() - 2.0 * c.iou() / (1.0 + c.iou())).abs());
        pairs += 1;
    }
    let hand = Confusion::count([true, false], [true, true]);
    let (iou, f1) = (hand.iou(), hand.f1());

    let pass = dice == 0.0
        && bce_err <= 1e-9
        && f1_err <= 1e-12
        && (iou - 0.5).abs() <= 1e-4
        && (f1 - 2.0 / 3.0).abs() <= 1e-4;
    Ok(verdict(
        pass,
        format!(
            "dice(perfect) = {dice:e} (exact 0); |bce(0.5) - ln2| {bce_err:.1e} (tol 1e-9); max |F1 - 2IoU/(1+IoU)| {f1_err:.1e} over 100 pairs (tol 1e-12); hand case IoU {iou:.4} F1 {f1:.4}"
        ),
    ))
}

// 5

/// For each branch: `full - without_branch` against `only_branch`.
fn decomposition_error(mut run: impl FnMut(BranchMask) -> Result<Vec<f64>>) -> Result<f64> {
    let full = run(BranchMask::default())?;
    let mut worst = 0.0f64;
    let masks = [
        (BranchMask { main: false, ..Default::default() }, BranchMask { main: true, skip: false, gate: false }),
        (BranchMask { skip: false, ..Default::default() }, BranchMask { main: false, skip: true, gate: false }),
        (BranchMask { gate: false, ..Default::default() }, BranchMask { main: false, skip: false, gate: true }),
    ];
    for (without, only) in masks {
        let w = run(without)?;
        let o = run(only)?;
        let diff: Vec<f64> = full.iter().zip(&w).map(|(a, b)| a - b).collect();
        worst = worst.max(max_abs_diff(&diff, &o));
        // the branch actually contributes
        if o.iter().all(|&v| v == 0.0) {
            return Ok(f64::INFINITY);
        }
    }
    Ok(worst)
}

fn branch_decomposition() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let settings = MambaSettings { state: 4, ..MambaSettings::default() };
    let x = uniform(&mut rng, &[2, 6, 8, 8], -1.0, 1.0);

    let mut store = ParamStore::<f64>::new();
    let kan_block =
        MambaKanBlock::new(&mut Builder::new(&mut store, &mut ChaCha8Rng::seed_from_u64(50)), 6, 8, &settings)?;
    let kan_err = decomposition_error(|mask| {
        let g = Graph::no_grad();
        let mut cx = Ctx::new(&g, &mut store, Mode::Eval);
        let b = MambaKanBlock { mask, ..kan_block.clone() };
        Ok(b.forward(&mut cx, g.constant(x.clone()))?.value().data().to_vec())
    })?;

    let mut store = ParamStore::<f64>::new();
    let conv_block =
        ClassicalMamba::new(&mut Builder::new(&mut store, &mut ChaCha8Rng::seed_from_u64(51)), 6, 8, &settings)?;
    let conv_err = decomposition_error(|mask| {
        let g = Graph::no_grad();
        let mut cx = Ctx::new(&g, &mut store, Mode::Eval);
        let b = ClassicalMamba { mask, ..conv_block.clone() };
        Ok(b.forward(&mut cx, g.constant(x.clone()))?.value().data().to_vec())
    })?;

    Ok(verdict(
        kan_err <= 1e-10 && conv_err <= 1e-10,
        format!("max |(full - without branch) - branch alone|: Mamba-KAN block {kan_err:.1e}, convolutional Mamba block {conv_err:.1e} (tol 1e-10)"),
    ))
}

// 6

fn boa_degeneracy() -> Result<Verdict> {
    let cfg = ModelConfig::tiny();
    let relu_idx = BOA_MEMBERS.iter().position(|&a| a == Activation::Relu).expect("ReLU is a member");
    let one_hot: Vec<f64> = (0..BOA_MEMBERS.len()).map(|i| if i == relu_idx { 1.0 } else { 0.0 }).collect();
    let mut boa = Model::<f64>::build(&cfg)?;
    let mut relu = Model::<f64>::build(&ModelConfig { replace_boa: Some(Activation::Relu), ..cfg })?;
    let ids: Vec<_> = boa.store.param_ids().collect();
    let mut replaced = 0;
    for id in ids {
        if boa.store.name(id).ends_with(".alphas") {
            boa.store.set(id, Tensor::from_f64(&[one_hot.len()], &one_hot)?)?;
            replaced += 1;
        }
    }
    let x = uniform(&mut ChaCha8Rng::seed_from_u64(6), &[2, 3, 64, 64], 0.0, 1.0);
    let err = max_abs_diff(boa.predict(&x)?.data(), relu.predict(&x)?.data());
    Ok(verdict(
        err <= 1e-6 && replaced > 0,
        format!("{replaced} BoA layers set one-hot on ReLU; max |logit difference| {err:.1e} (tol 1e-6)"),
    ))
}

// 7, 8, 9

const OVERFIT_EPOCHS: usize = 300;
const LOSS_WINDOW: usize = 20;

fn overfit_config(out: Option<PathBuf>) -> TrainConfig {
    TrainConfig {
        epochs: OVERFIT_EPOCHS,
        base_lr: 1e-4,
        min_lr: 1e-5,
        batch_size: 4,
        split: "1:0".into(),
        augment: AugmentConfig::NONE,
        seed: 0,
        eval_train: true,
        out_dir: out,
        ..TrainConfig::default()
    }
}

fn overfit_data() -> Result<Vec<Sample>> {
    synth_dataset(32, 64, 0)
}

fn epoch_printer(tag: String) -> impl FnMut(&fusionseg::pipeline::EpochLog) {
    let start = Instant::now();
    move |log| {
        if log.epoch % 25 == 0 || log.epoch + 1 == OVERFIT_EPOCHS {
            let iou = log.train.map(|(r, _)| r.iou).unwrap_or(f64::NAN);
            println!(
                "    [{tag}] epoch {:3} loss {:.4} train iou {:.4} ({:.0}s)",
                log.epoch,
                log.train_loss,
                iou,
                start.elapsed().as_secs_f64()
            );
        }
    }
}

/// Non-overlapping window means of the epoch losses, each no higher than the
/// one before.
fn loss_windows_monotone(losses: &[f64]) -> (bool, Vec<f64>) {
    let w = window_means(losses, LOSS_WINDOW);
    (w.windows(2).all(|p| p[1] <= p[0]), w)
}

fn overfit_and_ablation(out: &Path, run7: bool, run8: bool) -> Result<Vec<(usize, Verdict)>> {
    let data = overfit_data()?;
    let cfg = overfit_config(Some(out.join("ablation")));
    let variants: Vec<Variant> = if run8 { Variant::ALL.to_vec() } else { vec![Variant::Full] };
    let t = Instant::now();
    let mut printers: Vec<_> = variants.iter().map(|v| epoch_printer(v.to_string())).collect();
    let rows = ablate::<f32>(&ModelConfig::tiny(), &cfg, &data, &variants, &mut |v, log| {
        let i = variants.iter().position(|&x| x == v).expect("known variant");
        printers[i](log)
    })?;
    let secs = t.elapsed().as_secs_f64();
    let mut verdicts = Vec::new();

    let full: &AblationRow = rows.iter().find(|r| r.variant == Variant::Full).expect("full variant trained");
    if run7 {
        // asserted on the full training split scored after each epoch; the
        // minibatch means carry batch-composition noise and are shown only
        let (mono, windows) = loss_windows_monotone(&full.train_eval_losses);
        let (mb_mono, mb_windows) = loss_windows_monotone(&full.train_losses);
        let fmt = |w: &[f64]| w.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ");
        let uptick = |w: &[f64]| w.windows(2).map(|p| p[1] - p[0]).fold(f64::NEG_INFINITY, f64::max);
        println!("    full: {LOSS_WINDOW}-epoch means of the training-split loss {}", fmt(&windows));
        println!(
            "    full: {LOSS_WINDOW}-epoch means of the minibatch loss      {} (non-increasing: {mb_mono}, largest step {:+.1e})",
            fmt(&mb_windows),
            uptick(&mb_windows)
        );
        verdicts.push((
            7,
            verdict(
                full.train.iou >= 0.90 && mono && full.train_eval_losses.len() == OVERFIT_EPOCHS,
                format!(
                    "tiny f32, 32 samples 64x64, {OVERFIT_EPOCHS} epochs: train IoU {:.4} (need >= 0.90), {LOSS_WINDOW}-epoch means of the training-split loss non-increasing: {mono} (largest step {:+.1e}), final minibatch loss {:.4}",
                    full.train.iou,
                    uptick(&windows),
                    full.final_train_loss
                ),
            ),
        ));
    }
    if run8 {
        let csv_path = out.join("ablation").join("ablation.csv");
        let csv = fs::read_to_string(&csv_path).unwrap_or_default();
        println!("    informational comparison ({}):", csv_path.display());
        for line in csv.lines() {
            println!("      {line}");
        }
        let complete = rows.len() == 4 && rows.iter().all(|r| r.train_losses.len() == OVERFIT_EPOCHS);
        let summary: Vec<String> = rows.iter().map(|r| format!("{} iou {:.3}", r.variant, r.train.iou)).collect();
        verdicts.push((
            8,
            verdict(
                complete && csv.lines().count() == 5,
                format!(
                    "{} variants x {OVERFIT_EPOCHS} epochs from seed 0 ({}), CSV written, {secs:.0}s total",
                    rows.len(),
                    summary.join(", ")
                ),
            ),
        ));
    }
    Ok(verdicts)
}

fn reproducibility(out: &Path) -> Result<Verdict> {
    let data = overfit_data()?;
    let mut files = Vec::new();
    let mut ious = Vec::new();
    for run in ["a", "b"] {
        let dir = out.join("repro").join(run);
        let mut model = Model::<f64>::build(&ModelConfig::tiny())?;
        let s = train_on(
            &mut model,
            &overfit_config(Some(dir.clone())),
            &data,
            &[],
            &mut epoch_printer(format!("f64 run {run}")),
        )?;
        ious.push(s.last().train.map(|(r, _)| r.iou).unwrap_or(f64::NAN));
        files.push((fs::read(dir.join("metrics.csv"))?, fs::read(dir.join("final.ckpt"))?));
    }
    let rows = String::from_utf8_lossy(&files[0].0).lines().count() - 1;
    let same_csv = files[0].0 == files[1].0;
    let same_ckpt = files[0].1 == files[1].1;
    Ok(verdict(
        same_csv && rows == OVERFIT_EPOCHS,
        format!(
            "two f64 runs of the overfit setup: metrics CSV identical: {same_csv} ({rows} rows), final checkpoints identical: {same_ckpt}, final train IoU {:.4}",
            ious[0]
        ),
    ))
}

// 10

fn scheduler_endpoints() -> Verdict {
    let mut ok = true;
    for t_max in [1, 2, 7, 299, 399, 1000] {
        ok &= cosine_lr(0, t_max, 1e-4, 1e-5) == 1e-4;
        ok &= cosine_lr(t_max, t_max, 1e-4, 1e-5) == 1e-5;
    }
    let cfg = overfit_config(None);
    let (first, last) = (cfg.lr_at(0), cfg.lr_at(cfg.epochs - 1));
    ok &= first == 1e-4 && last == 1e-5;
    let mid = cosine_lr(150, 300, 1e-4, 1e-5);
    verdict(ok, format!("cosine_lr(0) = {first:e}, cosine_lr(T) = {last:e} (exact); midpoint {mid:e}"))
}

fn selected() -> BTreeSet<usize> {
    match std::env::var("ACCEPTANCE_CRITERIA") {
        Ok(s) if !s.trim().is_empty() => s.split(',').filter_map(|p| p.trim().parse().ok()).collect(),
        _ => (1..=10).collect(),
    }
}

fn main() -> ExitCode {
    let want = selected();
    let tmp = tempfile::tempdir().expect("temp dir");
    let out = std::env::var_os("ACCEPTANCE_OUT").map(PathBuf::from).unwrap_or_else(|| tmp.path().to_path_buf());
    let names = [
        "",
        "gradient suite",
        "scan oracle",
        "spline properties",
        "loss and metric identities",
        "branch decomposition",
        "BoA degeneracy",
        "overfit",
        "ablation harness",
        "reproducibility",
        "scheduler endpoints",
    ];
    let mut failures = 0;
    let mut report = |id: usize, v: Result<Verdict>| {
        let v = v.unwrap_or_else(|e| verdict(false, format!("error: {e}")));
        failures += usize::from(!v.pass);
        println!("criterion {id:2} {} {}: {}", if v.pass { "PASS" } else { "FAIL" }, names[id], v.detail);
    };
    let simple: [(usize, Criterion); 6] = [
        (1, gradient_checks),
        (2, scan_oracle),
        (3, spline_properties),
        (4, loss_metric_identities),
        (5, branch_decomposition),
        (6, boa_degeneracy),
    ];
    for (id, f) in simple {
        if want.contains(&id) {
            report(id, f());
        }
    }
    let (run7, run8) = (want.contains(&7), want.contains(&8));
    if run7 || run8 {
        match overfit_and_ablation(&out, run7, run8) {
            Ok(vs) => vs.into_iter().for_each(|(id, v)| report(id, Ok(v))),
            Err(e) => [(7, run7), (8, run8)]
                .into_iter()
                .filter(|p| p.1)
                .for_each(|(id, _)| report(id, Err(fusionseg::Error::Config(format!("training failed: {e}"))))),
        }
    }
    if want.contains(&9) {
        report(9, reproducibility(&out));
    }
    if want.contains(&10) {
        report(10, Ok(scheduler_endpoints()));
    }
    println!("acceptance: {} of {} criteria passed", want.len() - failures, want.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
