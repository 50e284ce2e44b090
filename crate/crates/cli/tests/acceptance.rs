//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line is printed. Pass criterion
//! numbers as arguments to run a subset, e.g.
//! `cargo test -p ciatr-cli --test acceptance -- 1 2 3`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use ciatr_cli::commands;
use ciatr_cli::RunConfig;
use ciatr_core::model::{FeatureMap, ModelParams, TENSOR_NAMES};
use ciatr_core::training::{batch_gradient, build_augmented_set, loss_ce, loss_d};
use ciatr_core::*;
use num_complex::Complex64;
use rand::Rng;
use tempfile::TempDir;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    check(elapsed.as_secs_f64() < limit_s as f64, || {
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

fn random_grid(rng: &mut impl Rng, h: usize, w: usize) -> Grid2D {
    Grid2D::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0)).unwrap()
}

// 1. FFT against the direct DFT sum.

fn naive_dft(img: &Grid2D) -> Vec<Complex64> {
    let (h, w) = img.dims();
    let tau = std::f64::consts::TAU;
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for u in 0..h {
        for v in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..h {
                for c in 0..w {
                    let phase = -tau * ((u * r) as f64 / h as f64 + (v * c) as f64 / w as f64);
                    acc += img.get(r, c) * Complex64::from_polar(1.0, phase);
                }
            }
            out[u * w + v] = acc;
        }
    }
    out
}

fn criterion_fft() -> Outcome {
    let start = Instant::now();
    let mut rng = SeedStream::new(1, 1).rng();
    let (mut worst_dft, mut worst_round) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let img = random_grid(&mut rng, 64, 64);
        let spec = fft2(&img);
        for (a, b) in spec.as_slice().iter().zip(naive_dft(&img)) {
            worst_dft = worst_dft.max((a - b).norm());
        }
        let back = ifft2(&spec);
        for (a, b) in back.as_slice().iter().zip(img.as_slice()) {
            worst_round = worst_round.max((a - b).norm());
        }
    }
    check(worst_dft < 1e-8, || format!("DFT error {worst_dft:e}"))?;
    check(worst_round < 1e-9, || format!("round-trip error {worst_round:e}"))?;
    within(start.elapsed(), 5)?;
    Ok(format!("max DFT error {worst_dft:.1e}, round trip {worst_round:.1e}"))
}

// 2. RFM keeps the inverse real; an empty mask changes nothing.

fn criterion_rfm() -> Outcome {
    let start = Instant::now();
    let mut rng = SeedStream::new(2, 2).rng();
    let mut worst = 0.0f64;
    for i in 0..100 {
        let img = random_grid(&mut rng, 64, 64);
        let cfg = AugmentConfig {
            ra_max: 1.0,
            ..AugmentConfig::default()
        };
        let mask = sample_mask_spec(64, 64, SeedStream::new(i, 7), &cfg).map_err(|e| e.to_string())?;
        let spec = fft2(&img);
        let masked = rfm(&spec, &mask).map_err(|e| e.to_string())?;
        worst = worst.max(ifft2(&masked).max_abs_imag());

        let empty = MaskSpec::new(64, 64, mask.rm_re(), 0.0, vec![]).map_err(|e| e.to_string())?;
        let same = rfm(&spec, &empty).map_err(|e| e.to_string())?;
        check(
            same.as_slice().iter().zip(spec.as_slice()).all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits()),
            || "empty mask altered the spectrum".into(),
        )?;
    }
    check(worst < 1e-9, || format!("imaginary residue {worst:e}"))?;
    within(start.elapsed(), 5)?;
    Ok(format!("max imaginary residue {worst:.1e}"))
}

// 3. Similarity identities and a direct SSIM oracle.

fn random_map(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    FeatureMap::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(0.0..2.0)).collect()).unwrap()
}

/// SSIM from its textbook definition: two-pass window statistics, population
/// variances, constants from the larger dynamic range of the pair.
fn ssim_direct(a: &FeatureMap, b: &FeatureMap) -> f64 {
    let k = 8;
    let (c, h, w) = a.dims();
    let range = a.data.iter().chain(&b.data).fold(1e-6f64, |m, v| m.max(v.abs()));
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let n = (k * k) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let (pa, pb) = (a.channel(ch), b.channel(ch));
        for y in 0..=h - k {
            for x in 0..=w - k {
                let idx: Vec<usize> = (y..y + k).flat_map(|r| (x..x + k).map(move |q| r * w + q)).collect();
                let ma = idx.iter().map(|&i| pa[i]).sum::<f64>() / n;
                let mb = idx.iter().map(|&i| pb[i]).sum::<f64>() / n;
                let va = idx.iter().map(|&i| (pa[i] - ma).powi(2)).sum::<f64>() / n;
                let vb = idx.iter().map(|&i| (pb[i] - mb).powi(2)).sum::<f64>() / n;
                let cov = idx.iter().map(|&i| (pa[i] - ma) * (pb[i] - mb)).sum::<f64>() / n;
                total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

fn criterion_similarity() -> Outcome {
    let start = Instant::now();
    let mut rng = SeedStream::new(3, 3).rng();
    let mut worst_oracle = 0.0f64;
    for _ in 0..10 {
        let a = random_map(&mut rng, 4, 12, 10);
        let b = random_map(&mut rng, 4, 12, 10);
        let s_aa = stm(&a, &a).map_err(|e| e.to_string())?;
        check((s_aa - 1.0).abs() <= 1e-12, || format!("self-similarity {s_aa}"))?;
        let (ab, ba) = (stm(&a, &b).unwrap(), stm(&b, &a).unwrap());
        check((ab - ba).abs() <= 1e-12, || format!("asymmetry {}", (ab - ba).abs()))?;
        worst_oracle = worst_oracle.max((ab - ssim_direct(&a, &b)).abs());

        let fa = FeatureBundle {
            feature_vector: a.data.clone(),
            feature_map: a,
            logits: vec![],
        };
        let fb = FeatureBundle {
            feature_vector: b.data.clone(),
            feature_map: b,
            logits: vec![],
        };
        let h = hm(&fa, &fb).unwrap();
        check(h.hm == h.stm + h.vam, || "hm differs from stm + vam".into())?;
        check(h.stm == ab && h.vam == vam(&fa.feature_vector, &fb.feature_vector).unwrap(), || {
            "hm components differ from stm and vam".into()
        })?;
    }
    check(worst_oracle < 1e-10, || format!("SSIM oracle error {worst_oracle:e}"))?;
    let cases: [(&[f64], &[f64], f64); 4] = [
        (&[3.0, 4.0], &[3.0, 4.0], 1.0),
        (&[3.0, 4.0], &[-3.0, -4.0], -1.0),
        (&[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0], 0.0),
        (&[0.0, 0.0], &[1.0, 1.0], 0.0),
    ];
    for (u, v, want) in cases {
        let got = vam(u, v).unwrap();
        check(got == want, || format!("vam({u:?}, {v:?}) = {got}, want {want}"))?;
    }
    within(start.elapsed(), 5)?;
    Ok(format!("SSIM oracle error {worst_oracle:.1e}"))
}

// 4. Total-loss gradient against central differences.

const EPS: f64 = 1e-5;
const MARGIN: f64 = 0.5;
const LAMBDA: f64 = 1.0;

fn gradient_batch(seed: u64) -> Vec<LabeledImage> {
    let cfg = ConfoundConfig {
        height: 32,
        width: 32,
        n_per_class: 1,
        test_per_class: 1,
        ..ConfoundConfig::default()
    };
    let (train, _) = gen_dataset(&cfg, SeedStream::new(seed, 0)).unwrap();
    build_augmented_set(&train[..2], 0, SeedStream::new(seed, 1), &AugmentConfig::default()).unwrap()
}

/// Initial weights with small random biases, which keeps zero-padded
/// regions off the ReLU kink.
fn gradient_params(seed: u64) -> ModelParams {
    let mut params = init_params(SeedStream::new(seed, 2), ModelShape::new(32, 32, 3).unwrap());
    let mut rng = SeedStream::new(seed, 3).rng();
    for b in [&mut params.conv1_b, &mut params.conv2_b, &mut params.fc_b] {
        b.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
    }
    params
}

/// Total loss plus an identifier of the smooth piece it lies on: ReLU and
/// pooling winners, the SSIM range location of every pair, and the hinge
/// set.
fn loss_and_piece(params: &ModelParams, batch: &[LabeledImage]) -> (f64, Vec<u32>) {
    let mut piece = Vec::new();
    let mut bundles = Vec::new();
    for x in batch {
        let (b, trace) = forward_traced(params, &x.image).unwrap();
        piece.extend(trace.activation_pattern());
        bundles.push(b);
    }
    let labels: Vec<usize> = batch.iter().map(|x| x.label).collect();
    let n = batch.len();
    let mut sims = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            sims[i][j] = hm(&bundles[i], &bundles[j]).unwrap().hm;
            if i < j {
                let arg = bundles[i]
                    .feature_vector
                    .iter()
                    .chain(&bundles[j].feature_vector)
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |m, (k, v)| if v.abs() > m.1 { (k, v.abs()) } else { m })
                    .0;
                piece.push(arg as u32);
            }
        }
    }
    for a in 0..n {
        for p in 0..n {
            for q in 0..n {
                if p != a && labels[p] == labels[a] && labels[q] != labels[a] {
                    piece.push(u32::from(MARGIN - sims[a][p] + sims[a][q] > 0.0));
                }
            }
        }
    }
    let logits: Vec<Vec<f64>> = bundles.iter().map(|b| b.logits.clone()).collect();
    let total = loss_ce(&logits, &labels) + LAMBDA * loss_d(&bundles, &labels, MARGIN).unwrap().value;
    (total, piece)
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut shrunk = 0usize;
    let mut checked = 0usize;
    for seed in [11, 22, 33] {
        let batch = gradient_batch(seed);
        let refs: Vec<&LabeledImage> = batch.iter().collect();
        let params = gradient_params(seed);
        let (step, grads) = batch_gradient(&params, &refs, MARGIN, LAMBDA, None).map_err(|e| e.to_string())?;
        check(step.loss.l_ce > 0.0 && step.loss.num_active_triplets > 0, || {
            format!("seed {seed}: a loss path is inactive")
        })?;
        let (_, piece) = loss_and_piece(&params, &batch);
        let mut probe = params.clone();
        for t in 0..TENSOR_NAMES.len() {
            for i in 0..params.tensors()[t].len() {
                let orig = probe.tensors()[t][i];
                let mut eps = EPS;
                let numeric = loop {
                    probe.tensors_mut()[t][i] = orig + eps;
                    let (up, up_piece) = loss_and_piece(&probe, &batch);
                    probe.tensors_mut()[t][i] = orig - eps;
                    let (down, down_piece) = loss_and_piece(&probe, &batch);
                    probe.tensors_mut()[t][i] = orig;
                    if (up_piece == piece && down_piece == piece) || eps < 1e-8 {
                        break (up - down) / (2.0 * eps);
                    }
                    eps /= 4.0;
                };
                shrunk += usize::from(eps < EPS);
                checked += 1;
                let a = grads.tensors()[t][i];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                check(err < 1e-4, || {
                    format!("seed {seed}: {}[{i}] analytic {a:e} numeric {numeric:e}", TENSOR_NAMES[t])
                })?;
                worst = worst.max(err);
            }
        }
    }
    check(shrunk * 100 < checked, || format!("{shrunk} of {checked} steps crossed a kink"))?;
    within(start.elapsed(), 120)?;
    Ok(format!(
        "{checked} parameters, worst rel error {worst:.1e}, {shrunk} steps shrunk off a kink"
    ))
}

// 5. Batched triplet loss against direct enumeration.

fn criterion_triplets() -> Outcome {
    let start = Instant::now();
    let mut rng = SeedStream::new(5, 5).rng();
    let mut worst = 0.0f64;
    let mut total_active = 0usize;
    for _ in 0..20 {
        let bundles: Vec<FeatureBundle> = (0..12)
            .map(|_| {
                let map = random_map(&mut rng, 4, 8, 8);
                FeatureBundle {
                    feature_vector: map.data.clone(),
                    feature_map: map,
                    logits: vec![],
                }
            })
            .collect();
        let labels: Vec<usize> = (0..12).map(|_| rng.random_range(0..3)).collect();
        let got = loss_d(&bundles, &labels, MARGIN).map_err(|e| e.to_string())?;
        let (mut sum, mut active) = (0.0, 0usize);
        for a in 0..12 {
            for p in 0..12 {
                for q in 0..12 {
                    if a != p && labels[a] == labels[p] && labels[a] != labels[q] {
                        let hinge = MARGIN - hm(&bundles[a], &bundles[p]).unwrap().hm + hm(&bundles[a], &bundles[q]).unwrap().hm;
                        if hinge > 0.0 {
                            sum += hinge;
                            active += 1;
                        }
                    }
                }
            }
        }
        let want = if active > 0 { sum / active as f64 } else { 0.0 };
        check(got.active == active, || format!("active {} vs {active}", got.active))?;
        worst = worst.max((got.value - want).abs());
        total_active += active;
    }
    check(total_active > 0, || "no active triplets".into())?;
    check(worst < 1e-12, || format!("error {worst:e}"))?;
    within(start.elapsed(), 30)?;
    Ok(format!("20 batches, {total_active} active triplets, max error {worst:.1e}"))
}

// 6 and 7. The ablation grid.

fn run_grid(n_values: Vec<usize>, variants: Vec<Variant>) -> Result<Vec<(usize, Variant, f64, f64)>, String> {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let cfg = RunConfig {
        out_dir: dir.path().to_path_buf(),
        experiment_seeds: vec![0, 1, 2, 3, 4],
        experiment_n_values: n_values,
        experiment_variants: variants,
        ..RunConfig::default()
    };
    commands::experiment(&cfg).map_err(|e| e.to_string())?;
    commands::read_groups(dir.path()).map_err(|e| e.to_string())
}

fn criterion_deconfounding() -> Outcome {
    let start = Instant::now();
    let groups = run_grid(vec![20], Variant::ALL.to_vec())?;
    let mean = |v: Variant| groups.iter().find(|g| g.1 == v).map(|g| g.2).unwrap();
    let (ce, aug, full) = (mean(Variant::CeOnly), mean(Variant::Augment), mean(Variant::AugmentLd));
    let summary = format!(
        "ce-only {:.2}%, augment {:.2}%, augment+L_d {:.2}%",
        100.0 * ce,
        100.0 * aug,
        100.0 * full
    );
    check(full > aug && aug > ce, || format!("ordering violated: {summary}"))?;
    check(full - ce >= 0.05, || format!("gap below 5 points: {summary}"))?;
    within(start.elapsed(), 30 * 60)?;
    Ok(summary)
}

fn criterion_sample_trend() -> Outcome {
    let start = Instant::now();
    let groups = run_grid(vec![5, 10, 25], vec![Variant::AugmentLd])?;
    let means: Vec<f64> = groups.iter().map(|g| g.2).collect();
    let summary = groups
        .iter()
        .map(|g| format!("n={} {:.2}%", g.0, 100.0 * g.2))
        .collect::<Vec<_>>()
        .join(", ");
    check(means.windows(2).all(|w| w[1] >= w[0]), || format!("not non-decreasing: {summary}"))?;
    within(start.elapsed(), 45 * 60)?;
    Ok(summary)
}

// 8 and 9. The binary.

fn ciatr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ciatr"))
        .args(args)
        .env_remove("CIATR_THREADS")
        .output()
        .expect("binary runs")
}

fn config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn criterion_determinism() -> Outcome {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let p = dir.path();
    let a = config(p, "a.cfg", "epochs = 2\nout_dir = run_a\n");
    let b = config(p, "b.cfg", "epochs = 2\nout_dir = run_b\n");
    check(exit_code(&ciatr(&["gen-data", "--config", &a])) == 0, || "gen-data failed".into())?;
    for cfg in [&a, &b] {
        let start = Instant::now();
        let out = ciatr(&["train", "--config", cfg]);
        check(exit_code(&out) == 0, || String::from_utf8_lossy(&out.stderr).into_owned())?;
        within(start.elapsed(), 30)?;
    }
    for f in ["model.ckpt", "metrics.jsonl"] {
        let (x, y) = (std::fs::read(p.join("run_a").join(f)), std::fs::read(p.join("run_b").join(f)));
        check(x.is_ok() && x.as_ref().ok() == y.as_ref().ok(), || format!("{f} differs between runs"))?;
    }
    Ok("checkpoint and metrics bitwise identical".into())
}

fn criterion_cli_contract() -> Outcome {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let p = dir.path();
    let small = "height = 32\nwidth = 32\nn_per_class = 3\ntest_per_class = 3\nepochs = 1\nbatch_size = 8\n";
    let mut seen = Vec::new();
    let mut expect = |label: &str, out: Output, want: i32| -> Result<(), String> {
        let got = exit_code(&out);
        check(got == want, || {
            format!("{label}: exit {got}, want {want}: {}", String::from_utf8_lossy(&out.stderr))
        })?;
        seen.push(format!("{label}={got}"));
        Ok(())
    };

    let bad_rho = config(p, "rho.cfg", "rho = 1.5\n");
    let out = ciatr(&["gen-data", "--config", &bad_rho]);
    check(String::from_utf8_lossy(&out.stderr).contains("rho"), || "rho error does not name the field".into())?;
    expect("invalid rho", out, 2)?;
    let unknown = config(p, "unknown.cfg", "speed = 3\n");
    expect("unknown key", ciatr(&["train", "--config", &unknown]), 2)?;

    let missing = config(p, "missing.cfg", &format!("{small}data_dir = absent\nout_dir = missing_out\n"));
    expect("missing data_dir", ciatr(&["train", "--config", &missing]), 3)?;
    check(!p.join("missing_out").exists(), || "partial outputs after failed train".into())?;

    let good = config(p, "good.cfg", small);
    expect("gen-data", ciatr(&["gen-data", "--config", &good]), 0)?;
    let manifest = std::fs::read(p.join("data/manifest.jsonl")).map_err(|e| format!("manifest: {e}"))?;
    let again = config(p, "again.cfg", &format!("{small}data_dir = data_again\n"));
    expect("gen-data again", ciatr(&["gen-data", "--config", &again]), 0)?;
    check(std::fs::read(p.join("data_again/manifest.jsonl")).ok() == Some(manifest), || {
        "manifest differs across runs with the same seed".into()
    })?;

    let diverge = config(p, "diverge.cfg", &format!("{}lr = 1e308\nout_dir = div\n", small.replace("epochs = 1", "epochs = 20")));
    expect("non-finite loss", ciatr(&["train", "--config", &diverge]), 4)?;

    expect("train", ciatr(&["train", "--config", &good]), 0)?;
    let ckpt = p.join("out/model.ckpt");
    let mut bytes = std::fs::read(&ckpt).map_err(|e| format!("{}: {e}", ckpt.display()))?;
    bytes[3] ^= 0x55;
    let corrupt = p.join("corrupt.ckpt");
    std::fs::write(&corrupt, bytes).map_err(|e| e.to_string())?;
    let data = p.join("data");
    expect(
        "corrupt checkpoint",
        ciatr(&["eval", "--checkpoint", corrupt.to_str().unwrap(), "--data-dir", data.to_str().unwrap()]),
        3,
    )?;
    let big = config(p, "big.cfg", "n_per_class = 1\ntest_per_class = 1\ndata_dir = data64\n");
    expect("gen-data 64", ciatr(&["gen-data", "--config", &big]), 0)?;
    let big_train = config(p, "big_train.cfg", "n_per_class = 1\ntest_per_class = 1\ndata_dir = data64\nout_dir = out64\nepochs = 1\n");
    expect("train 64", ciatr(&["train", "--config", &big_train]), 0)?;
    expect(
        "64x64 checkpoint on 32x32 data",
        ciatr(&[
            "eval",
            "--checkpoint",
            p.join("out64/model.ckpt").to_str().unwrap(),
            "--data-dir",
            data.to_str().unwrap(),
        ]),
        5,
    )?;
    Ok(seen.join(", "))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "FFT matches the direct DFT and inverts", criterion_fft),
        (2, "frequency masking stays real, empty mask is identity", criterion_rfm),
        (3, "similarity identities and SSIM oracle", criterion_similarity),
        (4, "total-loss gradient matches finite differences", criterion_gradients),
        (5, "triplet loss matches brute-force enumeration", criterion_triplets),
        (6, "deconfounding ordering on the confounded dataset", criterion_deconfounding),
        (7, "full-method accuracy non-decreasing in n", criterion_sample_trend),
        (8, "sequential training is bitwise deterministic", criterion_determinism),
        (9, "CLI exit codes and stable manifest", criterion_cli_contract),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, title, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id} PASS  {title}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} FAIL  {title}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
