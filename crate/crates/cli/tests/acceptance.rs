//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use illumatte::attention::{
    adjust_opacity, aggregate, fuse_self_attention, AlphaMap, AttentionTrace, ForegroundCrossMap,
    GlobalMaps, SelfAttention,
};
use illumatte::dit::ToyModel;
use illumatte::eval::{
    batch_report, empty_border_flags, BorderFlags, DEFAULT_MARGIN, DEFAULT_THRESHOLD,
};
use illumatte::generate::{
    downsample_factor, generate, generate_observed, generate_single_branch, make_center_mask,
    GenerationRequest,
};
use illumatte::grabcut::maxflow::{max_flow, FlowGraph};
use illumatte::grabcut::{grabcut_refine_traced, GrabCutParams};
use illumatte::imaging::{RgbImage, ScalarMap};
use illumatte::prompt::{default_exclusions, extract_nouns};
use illumatte::sampler::{
    cfg_combine, default_schedule, euler_step, scale_model_input, GuidanceScale,
};
use illumatte::tensor::LatentTensor;
use illumatte::trace_io::{read_trace, write_trace};
use illumatte::trimap::{quantize_trimap, ThresholdMode, Trimap4, TrimapLabel, TrimapLevels};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn toy() -> ToyModel {
    ToyModel::new(Default::default()).expect("default toy config")
}

fn request(border_px: usize) -> GenerationRequest {
    let mut req = GenerationRequest::new("A green dragon");
    req.steps = 30;
    req.out_size = (64, 64);
    req.border_px = border_px;
    req.seed = 1;
    req
}

fn blending() -> Check {
    let start = Instant::now();
    let model = toy();
    let req = request(16);
    let (_, lh, lw) = model.latent_shape();
    let mask = make_center_mask(lh, lw, req.border_px, downsample_factor(lh, 64))
        .map_err(|e| e.to_string())?;
    ensure!(
        mask.count_ones() > 0 && mask.count_ones() < lh * lw,
        "band is empty or covers the latent"
    );
    let null = model.null_prompt();
    let e_bg = model
        .encode_prompt(&req.bg_prompt)
        .map_err(|e| e.to_string())?;
    let schedule = default_schedule(req.steps).map_err(|e| e.to_string())?;
    let mut failures = Vec::new();
    let mut steps = 0;
    generate_observed(&model, &req, |s| {
        steps += 1;
        // Background step recomputed from the shared latent alone.
        let x_in = scale_model_input(s.x_t, schedule.sigmas()[s.index]);
        let (u, _) = model
            .estimate_noise(&x_in, &null, s.timestep, false)
            .unwrap();
        let (c, _) = model
            .estimate_noise(&x_in, &e_bg, s.timestep, false)
            .unwrap();
        let eps = cfg_combine(&u, &c, req.guidance).unwrap();
        let x_bg = euler_step(s.x_t, &eps, s.sigma, s.sigma_next).unwrap();
        let (ch, h, w) = s.merged.shape();
        for k in 0..ch {
            for y in 0..h {
                for x in 0..w {
                    if mask.get(y, x) == 0
                        && s.merged.get(k, y, x).to_bits() != x_bg.get(k, y, x).to_bits()
                    {
                        failures.push((s.index, k, y, x));
                    }
                }
            }
        }
    })
    .map_err(|e| e.to_string())?;
    ensure!(steps == 30, "observed {steps} steps");
    ensure!(
        failures.is_empty(),
        "{} band values differ, first {:?}",
        failures.len(),
        failures[0]
    );
    ensure!(
        start.elapsed() < Duration::from_secs(30),
        "took {:?}",
        start.elapsed()
    );
    Ok(())
}

fn mask_collapse() -> Check {
    let model = toy();
    let req = request(0);
    let dual = generate(&model, &req).map_err(|e| e.to_string())?;
    let single = generate_single_branch(&model, &req).map_err(|e| e.to_string())?;
    ensure!(
        dual.final_latent.to_bits() == single.final_latent.to_bits(),
        "final latents differ"
    );
    ensure!(dual.rgb == single.rgb, "decoded images differ");
    Ok(())
}

fn cfg_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rand_tensor = |rng: &mut ChaCha8Rng| {
        LatentTensor::from_vec(
            4,
            4,
            4,
            (0..64).map(|_| rng.random_range(-3.0..3.0)).collect(),
        )
        .unwrap()
    };
    let g = |s: f64| GuidanceScale::new(s).unwrap();
    for _ in 0..1000 {
        let u = rand_tensor(&mut rng);
        let c = rand_tensor(&mut rng);
        ensure!(
            cfg_combine(&u, &c, g(0.0)).unwrap() == u,
            "s=0 is not the unconditional prediction"
        );
        ensure!(
            cfg_combine(&u, &c, g(1.0)).unwrap() == c,
            "s=1 is not the conditional prediction"
        );
        let (s1, s2) = (rng.random_range(0.0..8.0), rng.random_range(0.0..8.0));
        let a = cfg_combine(&u, &c, g(s1)).unwrap();
        let b = cfg_combine(&u, &c, g(s2)).unwrap();
        let ab = cfg_combine(&u, &c, g(s1 + s2)).unwrap();
        for i in 0..64 {
            let lhs = a.values()[i] + b.values()[i] - u.values()[i];
            ensure!(
                (lhs - ab.values()[i]).abs() < 1e-6,
                "linearity off by {}",
                (lhs - ab.values()[i]).abs()
            );
        }
    }
    Ok(())
}

fn scheduler() -> Check {
    // Scalar oracle: linear betas, running product, strided indices ending at T-1.
    let mut prod = 1.0f64;
    let cumprod: Vec<f64> = (0..1000)
        .map(|i| {
            prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0);
            prod
        })
        .collect();
    let mut oracle: Vec<f64> = [999, 799, 599, 399, 199]
        .iter()
        .map(|&t| ((1.0 - cumprod[t]) / cumprod[t]).sqrt())
        .collect();
    oracle.push(0.0);
    let s = default_schedule(5).map_err(|e| e.to_string())?;
    ensure!(s.sigmas().len() == 6, "expected 6 sigmas");
    for (a, b) in s.sigmas().iter().zip(&oracle) {
        ensure!((a - b).abs() < 1e-6, "sigma {a} vs oracle {b}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x0 = LatentTensor::from_vec(
        4,
        16,
        16,
        (0..1024).map(|_| rng.random_range(-4.0..4.0)).collect(),
    )
    .unwrap();
    let zero = LatentTensor::zeros(4, 16, 16);
    let mut x = x0.clone();
    for w in default_schedule(30).unwrap().sigmas().windows(2) {
        x = euler_step(&x, &zero, w[0], w[1]).unwrap();
    }
    ensure!(x == x0, "zero-derivative chain moved the latent");
    Ok(())
}

fn rows_sum_to_one(data: &[f32], row: usize, what: &str) -> Check {
    for (i, r) in data.chunks(row).enumerate() {
        let s: f64 = r.iter().map(|&v| v as f64).sum();
        ensure!((s - 1.0).abs() < 1e-4, "{what} row {i} sums to {s}");
    }
    Ok(())
}

fn attention_normalization() -> Check {
    let out = generate(&toy(), &request(16)).map_err(|e| e.to_string())?;
    let t = &out.trace;
    ensure!(
        t.num_records() == 160,
        "trace has {} records",
        t.num_records()
    );
    rows_sum_to_one(&t.cross, t.num_prompt_tokens(), "cross")?;
    let SelfAttention::PerRecord(self_) = &t.self_attn else {
        return Err("toy trace is preaveraged".into());
    };
    rows_sum_to_one(self_, t.num_tokens(), "self")
}

fn stochastic_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f32> {
    (0..rows)
        .flat_map(|_| {
            let raw: Vec<f64> = (0..cols).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(move |v| (v / s) as f32)
        })
        .collect()
}

fn aggregation_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (p, n, records) = (16, 3, 160);
    let trace = AttentionTrace {
        prompt: "a red fox".into(),
        bg_prompt: String::new(),
        token_strings: vec!["a".into(), "red".into(), "fox".into()],
        token_grid: (4, 4),
        sigma_schedule: vec![],
        steps_recorded: (0..10).collect(),
        layers: 4,
        heads: 4,
        cross: stochastic_rows(&mut rng, records * p, n),
        self_attn: SelfAttention::PerRecord(stochastic_rows(&mut rng, records * p, p)),
    };
    let g = aggregate(&trace).map_err(|e| e.to_string())?;
    let SelfAttention::PerRecord(self_) = &trace.self_attn else {
        unreachable!()
    };
    for i in 0..p * n {
        let sum: f64 = (0..records)
            .map(|r| trace.cross[r * p * n + i] as f64)
            .sum();
        ensure!(
            (g.cross[i] as f64 - sum / 160.0).abs() < 1e-6,
            "cross mean off at {i}"
        );
    }
    for i in 0..p * p {
        let sum: f64 = (0..records).map(|r| self_[r * p * p + i] as f64).sum();
        ensure!(
            (g.self_[i] as f64 - sum / 160.0).abs() < 1e-6,
            "self mean off at {i}"
        );
    }

    for trial in 0..20 {
        let p = 64;
        let self_ = stochastic_rows(&mut rng, p, p);
        let w: Vec<f32> = (0..p).map(|_| rng.random::<f32>()).collect();
        let fg = ForegroundCrossMap::from_map(ScalarMap::new(8, 8, w).unwrap());
        let maps = GlobalMaps {
            token_grid: (8, 8),
            token_strings: vec!["x".into()],
            cross: vec![0.0; p],
            self_: self_.clone(),
        };
        let ff = fuse_self_attention(&maps, &fg).map_err(|e| e.to_string())?;
        let wn = fg.as_map().data();
        let total: f64 = wn.iter().map(|&v| v as f64).sum();
        let acc: Vec<f64> = (0..p)
            .map(|q| {
                (0..p)
                    .map(|s| wn[s] as f64 * self_[s * p + q] as f64)
                    .sum::<f64>()
                    / total
            })
            .collect();
        let lo = acc.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for q in 0..p {
            let expected = (acc[q] - lo) / (hi - lo);
            let got = ff.as_map().data()[q] as f64;
            ensure!(
                (got - expected).abs() < 1e-6,
                "trial {trial}: fusion {got} vs {expected}"
            );
        }
    }
    Ok(())
}

fn opacity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let values: Vec<f32> = (0..100_000).map(|_| rng.random::<f32>()).collect();
    let a = AlphaMap::new(ScalarMap::new(1, values.len(), values.clone()).unwrap()).unwrap();
    ensure!(adjust_opacity(&a, 0.0).unwrap() == a, "k=0 changed alpha");
    let ks = [-1.0f32, -0.5, 0.0, 0.25, 0.5, 1.0, 3.0];
    let outs: Vec<AlphaMap> = ks.iter().map(|&k| adjust_opacity(&a, k).unwrap()).collect();
    for (k, out) in ks.iter().zip(&outs) {
        for (o, v) in out.as_map().data().iter().zip(&values) {
            ensure!(*o == ((1.0 + k) * v).min(1.0), "k={k}: {o} for {v}");
        }
    }
    for pair in outs.windows(2) {
        for (lo, hi) in pair[0].as_map().data().iter().zip(pair[1].as_map().data()) {
            ensure!(lo <= hi, "not monotone in k");
        }
    }
    Ok(())
}

fn trimap_ramp() -> Check {
    let ramp = ForegroundCrossMap::from_map(ScalarMap::from_fn(1, 1000, |_, x| x as f32 / 999.0));
    let t = quantize_trimap(&ramp, TrimapLevels::default(), ThresholdMode::Quantile)
        .map_err(|e| e.to_string())?;
    // Sort oracle: ranks below 100 are SURE_BG, below 300 PROB_BG, below 800 PROB_FG.
    let expected = [0.1, 0.2, 0.5, 0.2];
    let labels = [
        TrimapLabel::SureBg,
        TrimapLabel::ProbBg,
        TrimapLabel::ProbFg,
        TrimapLabel::SureFg,
    ];
    for (l, e) in labels.iter().zip(expected) {
        let f = t.count(*l) as f64 / 1000.0;
        ensure!((f - e).abs() <= 1e-3 + 1e-12, "{l:?} fraction {f}");
    }
    Ok(())
}

fn maxflow_bruteforce() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..200 {
        let n = rng.random_range(1..=8);
        let mut g = FlowGraph::new(n);
        for i in 0..n {
            g.add_tlinks(
                i,
                rng.random_range(0..=10) as f64,
                rng.random_range(0..=10) as f64,
            );
        }
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.5) {
                    g.add_pair(
                        i,
                        j,
                        rng.random_range(0..=10) as f64,
                        rng.random_range(0..=10) as f64,
                    );
                }
            }
        }
        let cut_value = |side: &[bool]| {
            let mut c = 0.0;
            for (i, &s) in side.iter().enumerate() {
                let (cs, ct) = g.tlinks(i);
                c += if s { ct } else { cs };
            }
            for &(i, j, ij, ji) in g.pairs() {
                if side[i] && !side[j] {
                    c += ij;
                } else if side[j] && !side[i] {
                    c += ji;
                }
            }
            c
        };
        let best = (0u32..1 << n)
            .map(|bits| cut_value(&(0..n).map(|i| bits >> i & 1 == 1).collect::<Vec<_>>()))
            .fold(f64::INFINITY, f64::min);
        let cut = max_flow(&g);
        ensure!(
            cut.flow == best,
            "trial {trial}: flow {} vs min cut {best}",
            cut.flow
        );
        ensure!(
            cut_value(&cut.source_side) == best,
            "trial {trial}: returned cut is not minimal"
        );
    }
    ensure!(
        start.elapsed() < Duration::from_secs(5),
        "took {:?}",
        start.elapsed()
    );
    Ok(())
}

fn grabcut_disk() -> Check {
    let (h, w, r) = (64usize, 64usize, 20.0f64);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dist = |y: usize, x: usize| ((y as f64 - 31.5).powi(2) + (x as f64 - 31.5).powi(2)).sqrt();
    let truth: Vec<u8> = (0..h * w)
        .map(|i| (dist(i / w, i % w) <= r) as u8)
        .collect();
    let noise: Vec<f32> = (0..h * w * 3)
        .map(|_| rng.random_range(-0.05..0.05))
        .collect();
    let img = RgbImage::from_fn(h, w, |y, x| {
        let base = if truth[y * w + x] == 1 {
            [0.9, -0.8, -0.8]
        } else {
            [-0.8, -0.7, 0.9]
        };
        let i = (y * w + x) * 3;
        [
            base[0] + noise[i],
            base[1] + noise[i + 1],
            base[2] + noise[i + 2],
        ]
    });
    let tri = Trimap4::from_fn(h, w, |y, x| match dist(y, x) {
        d if d <= r - 6.0 => TrimapLabel::SureFg,
        d if d <= r + 2.0 => TrimapLabel::ProbFg,
        d if d <= r + 6.0 => TrimapLabel::ProbBg,
        _ => TrimapLabel::SureBg,
    });
    let res =
        grabcut_refine_traced(&img, &tri, &GrabCutParams::default()).map_err(|e| e.to_string())?;
    let wrong = res
        .mask
        .values()
        .iter()
        .zip(&truth)
        .filter(|(a, b)| a != b)
        .count();
    ensure!(
        wrong * 100 <= truth.len(),
        "{wrong} of {} pixels disagree",
        truth.len()
    );
    ensure!(res.energies.len() <= 6, "ran more than 5 iterations");
    ensure!(
        res.energies.windows(2).all(|e| e[1] <= e[0]),
        "energy increased: {:?}",
        res.energies
    );
    for (i, l) in tri.labels().iter().enumerate() {
        let m = res.mask.values()[i];
        ensure!(
            !(*l == TrimapLabel::SureFg && m == 0 || *l == TrimapLabel::SureBg && m == 1),
            "sure label flipped at {i}"
        );
    }
    Ok(())
}

fn empty_border() -> Check {
    let flags =
        |img: &RgbImage| empty_border_flags(img, DEFAULT_MARGIN, DEFAULT_THRESHOLD).unwrap();
    let white = flags(&RgbImage::filled(64, 64, [1.0; 3]));
    ensure!(
        white
            == BorderFlags {
                left: true,
                right: true,
                top: true,
                bottom: true,
                all: true
            },
        "white image"
    );
    let black = flags(&RgbImage::filled(64, 64, [-1.0; 3]));
    ensure!(
        black
            == BorderFlags {
                left: false,
                right: false,
                top: false,
                bottom: false,
                all: false
            },
        "black image"
    );
    let dot = flags(&RgbImage::from_fn(64, 64, |y, x| {
        if (y, x) == (0, 32) {
            [0.0; 3]
        } else {
            [1.0; 3]
        }
    }));
    ensure!(
        dot == BorderFlags {
            left: true,
            right: true,
            top: false,
            bottom: true,
            all: false
        },
        "single pixel: {dot:?}"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut batch = Vec::new();
    for _ in 0..200 {
        let (h, w) = (rng.random_range(9..40), rng.random_range(9..40));
        let dark: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.002)).collect();
        let img = RgbImage::from_fn(
            h,
            w,
            |y, x| if dark[y * w + x] { [0.5; 3] } else { [0.95; 3] },
        );
        let f = flags(&img);
        ensure!(
            flags(&img.flip_horizontal()) == f.swap_left_right(),
            "horizontal flip"
        );
        ensure!(
            flags(&img.flip_vertical()) == f.swap_top_bottom(),
            "vertical flip"
        );
        batch.push(f);
    }
    let r = batch_report(&batch).unwrap();
    ensure!(
        r.empty_a <= r.empty_l.min(r.empty_r).min(r.empty_t).min(r.empty_b),
        "empty-a above a side: {r:?}"
    );
    ensure!(
        r.empty_a > 0.0 && r.empty_a < 100.0,
        "random batch is degenerate: {r:?}"
    );
    Ok(())
}

fn cli_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for name in ["a.png", "b.png"] {
        let path = dir.path().join(name);
        let start = Instant::now();
        let status = Command::new(env!("CARGO_BIN_EXE_illumatte"))
            .args([
                "generate",
                "--prompt",
                "A green dragon",
                "--seed",
                "1",
                "--backend",
                "toy",
            ])
            .args(["--size", "64", "--border-px", "16", "--out"])
            .arg(&path)
            .env_clear()
            .status()
            .map_err(|e| e.to_string())?;
        let elapsed = start.elapsed();
        ensure!(status.success(), "generate exited with {status}");
        ensure!(
            elapsed < Duration::from_secs(10),
            "generate took {elapsed:?}"
        );
        outputs.push(std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    ensure!(outputs[0] == outputs[1], "PNG bytes differ between runs");
    ensure!(outputs[0].starts_with(b"\x89PNG"), "output is not a PNG");
    Ok(())
}

fn trace_round_trip() -> Check {
    let out = generate(
        &toy(),
        &GenerationRequest {
            steps: 6,
            keep_last_maps: 3,
            ..request(16)
        },
    )
    .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_trace(&out.trace, &out.rgb, dir.path()).map_err(|e| e.to_string())?;
    let (trace, rgb) = read_trace(dir.path()).map_err(|e| e.to_string())?;
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    ensure!(
        bits(&trace.cross) == bits(&out.trace.cross),
        "cross differs"
    );
    ensure!(trace == out.trace, "trace differs");
    ensure!(bits(rgb.data()) == bits(out.rgb.data()), "rgb differs");

    let path = dir.path().join("self.f32");
    let mut bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    bytes.truncate(bytes.len() - 4);
    std::fs::write(&path, bytes).map_err(|e| e.to_string())?;
    ensure!(read_trace(dir.path()).is_err(), "truncated tensor accepted");
    Ok(())
}

fn noun_extraction() -> Check {
    let prompt = "A photo of a bullmastiff with a jacket";
    let spans = extract_nouns(prompt, &default_exclusions(), None).map_err(|e| e.to_string())?;
    ensure!(
        spans.surfaces() == ["bullmastiff", "jacket"],
        "got {:?}",
        spans.surfaces()
    );
    let forced = extract_nouns(prompt, &default_exclusions(), Some(&["jacket".to_string()]))
        .map_err(|e| e.to_string())?;
    ensure!(
        forced.surfaces() == ["jacket"],
        "override gave {:?}",
        forced.surfaces()
    );
    Ok(())
}

fn main() {
    let criteria: [(&str, fn() -> Check); 14] = [
        ("blending mechanism", blending),
        ("mask collapse", mask_collapse),
        ("cfg identities", cfg_identities),
        ("scheduler", scheduler),
        ("attention normalization", attention_normalization),
        ("aggregation oracle", aggregation_oracle),
        ("opacity", opacity),
        ("trimap", trimap_ramp),
        ("max-flow", maxflow_bruteforce),
        ("grabcut", grabcut_disk),
        ("empty-border metric", empty_border),
        ("end-to-end determinism", cli_determinism),
        ("trace round-trip", trace_round_trip),
        ("noun extraction", noun_extraction),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => println!("PASS {name} ({secs:.2}s)"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {name} ({secs:.2}s): {reason}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 14 criteria failed");
        std::process::exit(1);
    }
}
