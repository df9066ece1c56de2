//! End-to-end acceptance checks: nine independent criteria covering
//! losslessness, hierarchy algebra, probability factorization, gradients,
//! rate accounting, learning effectiveness, ablation trends, analysis
//! fixtures, and throughput. Each prints one PASS/FAIL line; failures are
//! collected so a single run reports the full picture.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gpcc::analysis::{density_histogram, fractal_profile, kl_divergence, neighbor_counts};
use gpcc::codec::{decode, encode, run_ablation};
use gpcc::geometry::{
    build_hierarchy, build_hierarchy_from_coords, expand, occupancy_codes, quantize,
    QuantizedCloud, Voxel,
};
use gpcc::io::{generate, SyntheticSpec};
use gpcc::model::{
    grad_check, prior_features, stage_forward, train_step, AdamState, Fop, FopModel, Grouping,
    Hyper, ModelConfig,
};

fn uniform_voxels(rng: &mut ChaCha8Rng, n: usize) -> Vec<Voxel> {
    let g = ((n as f64 * 20.0).cbrt().ceil() as i32).max(2);
    let mut v: Vec<Voxel> = (0..n)
        .map(|_| [rng.gen_range(0..g), rng.gen_range(0..g), rng.gen_range(0..g)])
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn clustered_voxels(rng: &mut ChaCha8Rng, n: usize) -> Vec<Voxel> {
    let clusters = (n / 400).max(1);
    let per = (n * 9 / 10 / clusters).max(1);
    let spec = SyntheticSpec {
        clusters,
        points_per_cluster: (per, per),
        sigma: 2.5,
        extent: (n as f64 * 30.0).cbrt().max(8.0),
        background_fraction: 0.1,
        seed: rng.gen(),
    };
    quantize(&generate(&spec).positions, 1.0).expect("non-empty").coords
}

fn line_voxels(rng: &mut ChaCha8Rng, n: usize) -> Vec<Voxel> {
    let dirs = [[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1], [1, 2, 0], [3, 1, 2]];
    let d = dirs[rng.gen_range(0..dirs.len())];
    let mut v: Vec<Voxel> = (0..n as i32).map(|i| [i * d[0], i * d[1], i * d[2]]).collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn plane_voxels(rng: &mut ChaCha8Rng, n: usize) -> Vec<Voxel> {
    let s = (n as f64).sqrt().ceil() as i32;
    let axis = rng.gen_range(0..3usize);
    let c = rng.gen_range(0..4);
    let mut v = Vec::with_capacity(n);
    'fill: for i in 0..s {
        for j in 0..s {
            if v.len() == n {
                break 'fill;
            }
            v.push(match axis {
                0 => [c, i, j],
                1 => [i, c, j],
                _ => [i, j, c],
            });
        }
    }
    v.sort_unstable();
    v
}

/// Up to `draws` random voxels from a `grid`^3 box, deduplicated.
fn random_voxels(rng: &mut ChaCha8Rng, grid: i32, draws: usize) -> Vec<Voxel> {
    let mut v: Vec<Voxel> = (0..draws)
        .map(|_| [rng.gen_range(0..grid), rng.gen_range(0..grid), rng.gen_range(0..grid)])
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// 200 random clouds (uniform, clustered, line, plane; sizes 1..50000,
/// log-uniform) round-trip bit-exactly in under 60 seconds, and every
/// payload stays within 64 bits of its quantized cross-entropy.
fn losslessness() -> Result<(), String> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let model: FopModel = Fop::seeded(ModelConfig::desk(), 1).map_err(|e| e.to_string())?;
    let steps = [1.0, 0.001, 0.37, 2.5];
    let mut total_voxels = 0usize;
    for i in 0..200usize {
        let n = match i {
            0 => 1,
            1 => 50_000,
            _ => (50_000f64.powf(rng.gen::<f64>())).round().max(1.0) as usize,
        };
        let coords = match i % 4 {
            0 => uniform_voxels(&mut rng, n),
            1 => clustered_voxels(&mut rng, n),
            2 => line_voxels(&mut rng, n),
            _ => plane_voxels(&mut rng, n),
        };
        total_voxels += coords.len();
        let cloud = QuantizedCloud {
            coords,
            step: steps[i % steps.len()],
            origin: [
                rng.gen_range(-1_000_000..=1_000_000),
                rng.gen_range(-1_000_000..=1_000_000),
                rng.gen_range(-1_000_000..=1_000_000),
            ],
        };
        let (stream, report) = encode(&cloud, &model).map_err(|e| format!("cloud {}: {}", i, e))?;
        let payload_bits = report.payload_bytes as f64 * 8.0;
        if payload_bits > report.quantized_bits + 64.0 {
            return Err(format!(
                "cloud {}: payload {:.0} bits exceeds quantized cost {:.2} + 64",
                i, payload_bits, report.quantized_bits
            ));
        }
        let back = decode(&stream, &model).map_err(|e| format!("cloud {}: {}", i, e))?;
        if back != cloud {
            return Err(format!("cloud {} ({} voxels): decode mismatch", i, cloud.coords.len()));
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("  200 clouds, {} voxels total, {:.1}s", total_voxels, dt);
    if dt >= 60.0 {
        return Err(format!("took {:.1}s, budget is 60s", dt));
    }
    Ok(())
}

/// 1000 random subsets of the 16^3 grid: expanding every level of the built
/// hierarchy reproduces the input exactly, and occupancy_codes inverts
/// expand on random parent/code sets.
fn hierarchy_oracle() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for trial in 0..1000usize {
        let draws = if trial == 0 { 16 * 16 * 16 } else { rng.gen_range(1..=4096) };
        let coords = if trial == 0 {
            let mut all = Vec::with_capacity(4096);
            for x in 0..16 {
                for y in 0..16 {
                    for z in 0..16 {
                        all.push([x, y, z]);
                    }
                }
            }
            all
        } else {
            random_voxels(&mut rng, 16, draws)
        };
        let h = build_hierarchy_from_coords(&coords).map_err(|e| e.to_string())?;
        let mut level = h.levels[0].clone();
        for s in 0..h.scale_count() {
            level = expand(&level, &h.codes[s]).map_err(|e| e.to_string())?;
            if level != h.levels[s + 1] {
                return Err(format!("trial {}: expand diverged at scale {}", trial, s));
            }
        }
        if level != coords {
            return Err(format!("trial {}: reconstruction differs from input", trial));
        }
        // Inverse direction on random codes over a random parent set.
        let parent_draws = rng.gen_range(1..=64);
        let parents = random_voxels(&mut rng, 8, parent_draws);
        let codes: Vec<u8> = (0..parents.len()).map(|_| rng.gen_range(1..=255)).collect();
        let children = expand(&parents, &codes).map_err(|e| e.to_string())?;
        let back = occupancy_codes(&parents, &children).map_err(|e| e.to_string())?;
        if back != codes {
            return Err(format!("trial {}: occupancy_codes did not invert expand", trial));
        }
    }
    Ok(())
}

/// For 1000 random model/voxel instances, the staged conditional
/// probabilities of one voxel's 256 candidate codes sum to 1 within 1e-6.
/// Other voxels keep their true prefixes, exactly as during coding.
fn factorization() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let groupings =
        [Grouping::TwoStage, Grouping::FourStageUniform, Grouping::FourStageNonUniform];
    let mut worst = 0.0f64;
    for trial in 0..1000usize {
        let cfg = ModelConfig {
            channels: 4,
            kernel_size: 3,
            grouping: groupings[trial % 3],
            neighbor_prior: trial % 2 == 0,
            conv_blocks_per_stage: 1,
            stage_refresh: (trial / 2) % 2 == 0,
        };
        let model: FopModel =
            Fop::seeded(cfg, 3000 + trial as u64).map_err(|e| e.to_string())?;
        let draws = rng.gen_range(1..=8);
        let coords = random_voxels(&mut rng, 6, draws);
        let n = coords.len();
        let true_codes: Vec<u8> = (0..n).map(|_| rng.gen_range(1..=255)).collect();
        let base = if trial % 4 == 0 {
            prior_features(&coords, None, &model)
        } else {
            let parent_codes: Vec<u8> = (0..n).map(|_| rng.gen_range(1..=255)).collect();
            let idx: Vec<u32> = (0..n as u32).collect();
            prior_features(&coords, Some((&parent_codes, &idx)), &model)
        }
        .map_err(|e| e.to_string())?;
        let v = rng.gen_range(0..n);
        let g = cfg.grouping;
        // Row-v distribution per (stage, candidate prefix for v).
        let mut table: HashMap<(usize, u16), Vec<f64>> = HashMap::new();
        for stage in 0..g.num_stages() {
            let s = 1usize << g.widths()[stage];
            let mut decoded: Vec<u16> =
                (0..n).map(|u| g.prefix(true_codes[u], stage)).collect();
            for pref in 0..(1u16 << g.prefix_bits(stage)) {
                decoded[v] = pref;
                let dist =
                    stage_forward(&base, &decoded, stage, &model).map_err(|e| e.to_string())?;
                let row: Vec<f64> = dist.row(v).iter().map(|&p| p as f64).collect();
                debug_assert_eq!(row.len(), s);
                table.insert((stage, pref), row);
            }
        }
        let mut total = 0.0f64;
        for code in 0..=255u16 {
            let code = code as u8;
            let mut p = 1.0f64;
            for stage in 0..g.num_stages() {
                let row = &table[&(stage, g.prefix(code, stage))];
                p *= row[g.segment(code, stage) as usize];
            }
            total += p;
        }
        worst = worst.max((total - 1.0).abs());
    }
    println!("  max |sum over 256 codes - 1| = {:.3e}", worst);
    if worst > 1e-6 {
        return Err(format!("max deviation {:.3e} exceeds 1e-6", worst));
    }
    Ok(())
}

/// Analytic gradients match central differences (f64) within 1e-4 max
/// relative error on 20 random 8-voxel batches across configurations.
fn gradient_check() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let groupings =
        [Grouping::TwoStage, Grouping::FourStageUniform, Grouping::FourStageNonUniform];
    let mut worst = 0.0f64;
    for trial in 0..20usize {
        let cfg = ModelConfig {
            channels: 4,
            kernel_size: 3,
            grouping: groupings[trial % 3],
            neighbor_prior: trial % 2 == 0,
            conv_blocks_per_stage: 1 + trial % 2,
            stage_refresh: (trial / 2) % 2 == 0,
        };
        let mut coords = random_voxels(&mut rng, 6, 32);
        coords.truncate(8);
        let batch = build_hierarchy_from_coords(&coords).map_err(|e| e.to_string())?;
        // Two-sided differences are only valid where no ReLU kink falls
        // inside the probe interval. Zero-initialized biases make exact
        // kinks reachable (a fully dead block feeds the next one exactly
        // its zero bias), and random jitter can still land within h of a
        // kink by chance. A genuine gradient bug shows up at every generic
        // point, so try a few jittered points and fail only if all do.
        let mut err = f64::INFINITY;
        for _attempt in 0..3 {
            let mut model =
                Fop::<f32>::seeded(cfg, 4000 + trial as u64).map_err(|e| e.to_string())?;
            for p in model.params.iter_mut() {
                *p += rng.gen_range(-0.01..0.01f32);
            }
            err = grad_check(&model, &batch).map_err(|e| e.to_string())?;
            if err < 1e-4 {
                break;
            }
        }
        worst = worst.max(err);
        if err >= 1e-4 {
            return Err(format!(
                "batch {}: max relative error {:.3e} at three generic points",
                trial, err
            ));
        }
    }
    println!("  max relative error over 20 batches = {:.3e}", worst);
    Ok(())
}

/// Payload never exceeds the quantized cross-entropy by more than 64 bits;
/// reported bpp matches payload*8/N to 0.1% for N >= 1000; a full 2^3 cube
/// under the zero (uniform) model costs exactly 8 quantized bits, 1 bpp.
fn rate_accounting() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let desk: FopModel = Fop::seeded(ModelConfig::desk(), 5).map_err(|e| e.to_string())?;
    let two: FopModel = Fop::seeded(
        ModelConfig { channels: 4, grouping: Grouping::TwoStage, ..ModelConfig::desk() },
        6,
    )
    .map_err(|e| e.to_string())?;
    let sizes = [1usize, 10, 100, 1000, 5000, 20000];
    for trial in 0..30usize {
        let n = sizes[trial % sizes.len()];
        let coords = match trial % 3 {
            0 => uniform_voxels(&mut rng, n),
            1 => clustered_voxels(&mut rng, n),
            _ => line_voxels(&mut rng, n),
        };
        let cloud = QuantizedCloud { coords, step: 1.0, origin: [0, 0, 0] };
        let model = if trial % 2 == 0 { &desk } else { &two };
        let (_, r) = encode(&cloud, model).map_err(|e| e.to_string())?;
        let payload_bits = r.payload_bytes as f64 * 8.0;
        if payload_bits > r.quantized_bits + 64.0 {
            return Err(format!(
                "trial {}: payload {:.0} bits > quantized {:.2} + 64",
                trial, payload_bits, r.quantized_bits
            ));
        }
        let per_scale: f64 = r.scale_stage_bits.iter().flatten().sum();
        if (per_scale - r.quantized_bits).abs() > 1e-6 {
            return Err(format!(
                "trial {}: scale/stage bits {:.6} do not sum to quantized bits {:.6}",
                trial, per_scale, r.quantized_bits
            ));
        }
        if r.point_count >= 1000 {
            let reference = payload_bits / r.point_count as f64;
            if (r.bpp - reference).abs() > 1e-3 * reference {
                return Err(format!(
                    "trial {}: bpp {:.6} deviates from payload*8/N {:.6}",
                    trial, r.bpp, reference
                ));
            }
        }
    }
    // Uniform-model anchor: the full 2-voxel cube.
    let mut cube: Vec<Voxel> = (0..8)
        .map(|b| [(b >> 2) & 1, (b >> 1) & 1, b & 1])
        .collect();
    cube.sort_unstable();
    let zero: FopModel = Fop::zeroed(ModelConfig::desk()).map_err(|e| e.to_string())?;
    let cloud = QuantizedCloud { coords: cube, step: 1.0, origin: [0, 0, 0] };
    let (stream, r) = encode(&cloud, &zero).map_err(|e| e.to_string())?;
    if r.quantized_bits != 8.0 {
        return Err(format!("cube quantized bits {} != 8 exactly", r.quantized_bits));
    }
    if (r.model_bpp - 1.0).abs() > 1e-6 {
        return Err(format!("cube model bpp {} not 1.0", r.model_bpp));
    }
    let back = decode(&stream, &zero).map_err(|e| e.to_string())?;
    if back != cloud {
        return Err("cube decode mismatch".into());
    }
    Ok(())
}

// Roughly a thousand points per cloud: small enough to keep training fast,
// large enough that 2000 steps over 20 clouds generalize instead of
// memorizing the corpus.
fn clustered_corpus_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        clusters: 6,
        points_per_cluster: (150, 250),
        sigma: 2.0,
        extent: 110.0,
        background_fraction: 0.1,
        seed,
    }
}

/// A desk model (C=8, k=3) trained 2000 steps on 20 synthetic clustered
/// clouds beats the uniform zero model by at least 15% mean bpp on 10
/// held-out clouds from the same generator.
fn learning_effectiveness() -> Result<(), String> {
    let t0 = Instant::now();
    let train: Vec<_> = (0..20)
        .map(|i| {
            build_hierarchy(
                &quantize(&generate(&clustered_corpus_spec(600 + i)).positions, 1.0).unwrap(),
            )
            .unwrap()
        })
        .collect();
    let held: Vec<QuantizedCloud> = (0..10)
        .map(|i| quantize(&generate(&clustered_corpus_spec(700 + i)).positions, 1.0).unwrap())
        .collect();
    let mut model = Fop::<f32>::seeded(ModelConfig::desk(), 6).map_err(|e| e.to_string())?;
    let mut state = AdamState::new(model.params.len());
    let hp = Hyper::default();
    for it in 0..2000 {
        train_step(&mut model, &train[it % train.len()], &mut state, &hp)
            .map_err(|e| e.to_string())?;
    }
    let zero: FopModel = Fop::zeroed(ModelConfig::desk()).map_err(|e| e.to_string())?;
    let mean_bpp = |m: &FopModel| -> Result<f64, String> {
        let mut sum = 0.0;
        for c in &held {
            let (_, r) = encode(c, m).map_err(|e| e.to_string())?;
            sum += r.bpp;
        }
        Ok(sum / held.len() as f64)
    };
    let trained = mean_bpp(&model)?;
    let baseline = mean_bpp(&zero)?;
    let reduction = 100.0 * (1.0 - trained / baseline);
    println!(
        "  held-out mean bpp {:.4} vs uniform baseline {:.4} ({:.1}% lower, {:.0}s train)",
        trained,
        baseline,
        reduction,
        t0.elapsed().as_secs_f64()
    );
    if trained > 0.85 * baseline {
        return Err(format!(
            "trained {:.4} bpp is only {:.1}% below baseline {:.4} (need 15%)",
            trained, reduction, baseline
        ));
    }
    Ok(())
}

/// With an equal 400-step budget per configuration across 3 seeds, the
/// neighbor prior does not hurt (within 2%) and four stages do not lose to
/// two (within 2%). The five-configuration CSVs are written regardless.
fn ablation_trend() -> Result<(), String> {
    let train: Vec<QuantizedCloud> = (0..12)
        .map(|i| quantize(&generate(&clustered_corpus_spec(800 + i)).positions, 1.0).unwrap())
        .collect();
    let eval: Vec<(String, QuantizedCloud)> = (0..5)
        .map(|i| {
            let c = quantize(&generate(&clustered_corpus_spec(900 + i)).positions, 1.0).unwrap();
            (format!("holdout{}", i), c)
        })
        .collect();
    let base = ModelConfig { channels: 4, ..ModelConfig::desk() };
    let out_dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR"));
    let mut means = [0.0f64; 5];
    let mut names: Vec<String> = Vec::new();
    for seed in [0u64, 1, 2] {
        let t = run_ablation(&train, &eval, base, 400, seed).map_err(|e| e.to_string())?;
        let path = out_dir.join(format!("ablation_seed{}.csv", seed));
        std::fs::write(&path, t.to_csv()).map_err(|e| e.to_string())?;
        println!("  seed {} CSV: {}", seed, path.display());
        for (i, b) in t.mean_bpp.iter().enumerate() {
            means[i] += b / 3.0;
        }
        names = t.config_names.clone();
    }
    let mut summary = String::from("config,mean_bpp_over_seeds\n");
    for (name, m) in names.iter().zip(&means) {
        summary.push_str(&format!("{},{:.6}\n", name, m));
    }
    let summary_path = out_dir.join("ablation_mean.csv");
    std::fs::write(&summary_path, &summary).map_err(|e| e.to_string())?;
    println!("  seed-mean CSV: {}", summary_path.display());
    println!(
        "  mean bpp: {}",
        names
            .iter()
            .zip(&means)
            .map(|(n, b)| format!("{} {:.4}", n, b))
            .collect::<Vec<_>>()
            .join(", ")
    );
    // Indices follow the presentation order: 0 two-stage, 1 two-stage+np,
    // 2 four-stage, 3 four-stage+np, 4 four-stage non-uniform + np.
    let check = |better: usize, worse: usize| -> Result<(), String> {
        if means[better] <= means[worse] * 1.02 {
            Ok(())
        } else {
            Err(format!(
                "{} mean bpp {:.4} exceeds 1.02 x {} ({:.4})",
                names[better], means[better], names[worse], means[worse]
            ))
        }
    };
    check(1, 0)?;
    check(3, 2)?;
    check(2, 0)?;
    check(3, 1)?;
    Ok(())
}

/// Fractal fixtures are exact, KL of a histogram against itself is zero,
/// neighbor counts match a brute-force scan, histograms integrate to 1.
fn analysis_fixtures() -> Result<(), String> {
    let mut cube = Vec::new();
    for x in 0..16 {
        for y in 0..16 {
            for z in 0..16 {
                cube.push([x, y, z]);
            }
        }
    }
    let mut plane = Vec::new();
    for x in 0..16 {
        for y in 0..16 {
            plane.push([x, y, 0]);
        }
    }
    let line: Vec<Voxel> = (0..16).map(|x| [x, 0, 0]).collect();
    for (name, coords, want) in
        [("cube", &cube, 3.0f64), ("plane", &plane, 2.0), ("line", &line, 1.0)]
    {
        let h = build_hierarchy_from_coords(coords).map_err(|e| e.to_string())?;
        let p = fractal_profile(&h);
        if !p.values.iter().all(|&v| v == want) {
            return Err(format!("{} fractal values {:?} != {}", name, p.values, want));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut clouds: Vec<Vec<Voxel>> = (0..50)
        .map(|_| {
            let draws = rng.gen_range(1..=500);
            random_voxels(&mut rng, 12, draws)
        })
        .collect();
    clouds.push(plane);
    clouds.push(line);
    for (ci, coords) in clouds.iter().enumerate() {
        if coords.len() > 500 {
            continue;
        }
        for k in [1usize, 3, 5] {
            let got = neighbor_counts(coords, k);
            let r = (k / 2) as i32;
            for (i, v) in coords.iter().enumerate() {
                let want = coords
                    .iter()
                    .filter(|u| (0..3).all(|a| (u[a] - v[a]).abs() <= r))
                    .count() as u32;
                if got[i] != want {
                    return Err(format!(
                        "cloud {} k={} voxel {:?}: count {} != brute force {}",
                        ci, k, v, got[i], want
                    ));
                }
            }
        }
        let counts = neighbor_counts(coords, 5);
        let h = density_histogram(&counts, 5, 50).map_err(|e| e.to_string())?;
        let integral: f64 = h.densities.iter().map(|d| d * h.bin_width()).sum();
        if (integral - 1.0).abs() > 1e-9 {
            return Err(format!("cloud {}: histogram integral {} != 1", ci, integral));
        }
        let kl = kl_divergence(&h, &h).map_err(|e| e.to_string())?;
        if kl != 0.0 {
            return Err(format!("cloud {}: KL against itself is {}", ci, kl));
        }
    }
    Ok(())
}

/// Encode plus decode of a 100000-point synthetic cloud stays under 10
/// seconds single-threaded with the desk model.
fn performance_smoke() -> Result<(), String> {
    let spec = SyntheticSpec {
        clusters: 30,
        points_per_cluster: (3000, 3000),
        sigma: 8.0,
        extent: 400.0,
        background_fraction: 0.1,
        seed: 99,
    };
    let raw = generate(&spec);
    if raw.positions.len() != 100_000 {
        return Err(format!("generator produced {} points, wanted 100000", raw.positions.len()));
    }
    let cloud = quantize(&raw.positions, 1.0).map_err(|e| e.to_string())?;
    let model: FopModel = Fop::seeded(ModelConfig::desk(), 9).map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let (stream, report) = encode(&cloud, &model).map_err(|e| e.to_string())?;
    let back = decode(&stream, &model).map_err(|e| e.to_string())?;
    let dt = t0.elapsed().as_secs_f64();
    if back != cloud {
        return Err("decode mismatch".into());
    }
    println!(
        "  {} voxels, bpp {:.3}, encode+decode {:.2}s",
        report.point_count, report.bpp, dt
    );
    if dt >= 10.0 {
        return Err(format!("took {:.2}s, budget is 10s", dt));
    }
    Ok(())
}

#[test]
fn acceptance() {
    let criteria: Vec<(&str, fn() -> Result<(), String>)> = vec![
        ("losslessness", losslessness),
        ("hierarchy oracle", hierarchy_oracle),
        ("factorization", factorization),
        ("gradient check", gradient_check),
        ("rate accounting", rate_accounting),
        ("learning effectiveness", learning_effectiveness),
        ("ablation trend", ablation_trend),
        ("analysis fixtures", analysis_fixtures),
        ("performance smoke", performance_smoke),
    ];
    let mut failures = Vec::new();
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let n = i + 1;
        let t0 = Instant::now();
        match catch_unwind(AssertUnwindSafe(run)) {
            Ok(Ok(())) => {
                println!("criterion {} ({}): PASS [{:.1}s]", n, name, t0.elapsed().as_secs_f64())
            }
            Ok(Err(msg)) => {
                println!("criterion {} ({}): FAIL - {}", n, name, msg);
                failures.push(format!("criterion {} ({}): {}", n, name, msg));
            }
            Err(_) => {
                println!("criterion {} ({}): FAIL - panicked", n, name);
                failures.push(format!("criterion {} ({}): panicked", n, name));
            }
        }
    }
    assert!(failures.is_empty(), "failed criteria:\n{}", failures.join("\n"));
}
