//! Calibration harness for the benchmark acceptance thresholds.
//!
//! Regenerates the measurements frozen into the acceptance suite:
//!   * standard-scenario GSR vs uniform comparison (SR, TTS ratio)
//!   * beta2 / alpha sweep shapes and weight-CDF contrast
//!
//! Run with: cargo run --release --example calibrate [out_dir]

use std::path::PathBuf;

use gsr_core::bench::demos::{DemoSpec, DemonstratorProfile, EmbedConfig, ProfileKind};
use gsr_core::bench::env::GridWorld;
use gsr_core::bench::sweep::{aggregate, run_sweep, write_sweep_csv, SweepGrid, SweepSettings};
use gsr_core::bench::{run_comparison, seeded_specs, BenchRunConfig, derive_seed};
use gsr_core::graph::GraphConfig;
use gsr_core::reweight::ReweightConfig;

fn spec(kind: ProfileKind, count: usize) -> DemoSpec {
    DemoSpec {
        profile: DemonstratorProfile::new(kind, 0),
        count,
    }
}

fn standard_specs() -> Vec<DemoSpec> {
    vec![
        spec(ProfileKind::Retry, 25),
        spec(ProfileKind::Detour, 10),
        spec(ProfileKind::Optimal, 15),
    ]
}

fn standard_run(seed: u64) -> BenchRunConfig {
    BenchRunConfig {
        env: GridWorld::grid10(),
        specs: seeded_specs(&standard_specs(), seed),
        embed: EmbedConfig {
            projection_dim: Some(16),
            noise_sigma: 0.005,
            seed: derive_seed(seed, 200),
        },
        graph: GraphConfig {
            stride_n: 1,
            ..GraphConfig::default()
        },
        reweight: ReweightConfig {
            beta1: 1.0,
            beta2: 1.0,
            ..ReweightConfig::default()
        },
        k_policy: 5,
        n_trials: 500,
        eval_seed: derive_seed(seed, 300),
    }
}

/// Sweep-shape exploration: how do SR / NP / contrast move with beta2 and
/// alpha under different horizons and demo mixes?
fn explore_sweep(seeds: &[u64]) {
    for (label, horizon, sigma, k_retrieve, retry_p) in [
        ("heavy-h60-p85", 60usize, 0.01, 10usize, 0.85),
        ("heavy-h60-p75", 60, 0.01, 10, 0.75),
    ] {
        let mut env = GridWorld::grid10();
        env.max_horizon = horizon;
        let mut specs = vec![spec(ProfileKind::Retry, 40), spec(ProfileKind::Detour, 10)];
        for s in &mut specs {
            if s.profile.kind == ProfileKind::Retry {
                s.profile.retry_p = retry_p;
            }
        }
        let settings = SweepSettings {
            env,
            specs,
            embed: EmbedConfig {
                projection_dim: Some(16),
                noise_sigma: sigma,
                seed: 0,
            },
            graph: GraphConfig {
                stride_n: 1,
                ..GraphConfig::default()
            },
            reweight: ReweightConfig {
                k_retrieve,
                ..ReweightConfig::default()
            },
            k_policy: 5,
            n_trials: 200,
            seeds: seeds.to_vec(),
        };
        let grid = SweepGrid {
            beta1: vec![1.0],
            beta2: vec![0.0, 1.0, 4.0, 64.0],
            alpha: vec![0.1, 1.0, 2.0, 16.0],
        };
        let rows = run_sweep(&settings, &grid).expect("sweep runs");
        let agg = aggregate(&rows, horizon as f64);
        println!("## {label}");
        println!("beta1,beta2,alpha,sr,np,tts,contrast");
        for r in &agg {
            println!(
                "{},{},{},{:.3},{:.3},{:.2},{:.4}",
                r.beta1,
                r.beta2,
                r.alpha,
                r.sr,
                r.np.unwrap_or(f64::NAN),
                r.tts_mean.unwrap_or(f64::NAN),
                r.frac_below_half + r.frac_above_threshold,
            );
        }
    }
}

/// Scenario-knob exploration for threshold calibration.
fn explore(seeds: &[u64]) {
    println!("retry_p,sigma,beta2,k_policy,mean_sr_gsr,mean_sr_uni,mean_tts_gsr,mean_tts_uni,ratio,min_seed_ratio,max_seed_ratio");
    for retry_p in [0.5, 0.7] {
        for sigma in [0.005, 0.02] {
            for beta2 in [1.0, 4.0] {
                for k_policy in [5usize, 9] {
                    let mut srs = (0.0, 0.0);
                    let mut tts = (0.0, 0.0);
                    let mut ratios: Vec<f64> = Vec::new();
                    for &seed in seeds {
                        let mut specs = standard_specs();
                        for s in &mut specs {
                            if s.profile.kind == ProfileKind::Retry {
                                s.profile.retry_p = retry_p;
                            }
                        }
                        let cfg = BenchRunConfig {
                            specs: seeded_specs(&specs, seed),
                            embed: EmbedConfig {
                                projection_dim: Some(16),
                                noise_sigma: sigma,
                                seed: derive_seed(seed, 200),
                            },
                            reweight: ReweightConfig {
                                beta1: 1.0,
                                beta2,
                                ..ReweightConfig::default()
                            },
                            k_policy,
                            n_trials: 300,
                            ..standard_run(seed)
                        };
                        let out = run_comparison(&cfg).expect("runs");
                        srs.0 += out.gsr.success_rate;
                        srs.1 += out.uniform.success_rate;
                        let tg = out.gsr.tts_mean.unwrap_or(f64::NAN);
                        let tu = out.uniform.tts_mean.unwrap_or(f64::NAN);
                        tts.0 += tg;
                        tts.1 += tu;
                        ratios.push(tg / tu);
                    }
                    let n = seeds.len() as f64;
                    let min_r = ratios.iter().copied().fold(f64::INFINITY, f64::min);
                    let max_r = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    println!(
                        "{retry_p},{sigma},{beta2},{k_policy},{:.3},{:.3},{:.2},{:.2},{:.3},{:.3},{:.3}",
                        srs.0 / n,
                        srs.1 / n,
                        tts.0 / n,
                        tts.1 / n,
                        (tts.0 / n) / (tts.1 / n),
                        min_r,
                        max_r
                    );
                }
            }
        }
    }
}

fn main() {
    let out: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "calibration".into())
        .into();
    std::fs::create_dir_all(&out).expect("create output dir");

    let seeds: Vec<u64> = vec![1, 2, 3, 4, 5];

    match std::env::args().nth(2).as_deref() {
        Some("explore") => {
            explore(&seeds);
            return;
        }
        Some("explore-sweep") => {
            explore_sweep(&seeds);
            return;
        }
        _ => {}
    }

    // --- Standard scenario: GSR vs uniform ---------------------------------
    println!("# standard scenario (10x10, 50 demos, 70% retry/detour)");
    println!("seed,sr_gsr,sr_uniform,tts_gsr,tts_uniform,np_gsr,np_uniform,ratio");
    let mut rows = Vec::new();
    for &seed in &seeds {
        let cfg = standard_run(seed);
        let out = run_comparison(&cfg).expect("comparison runs");
        let tts_g = out.gsr.tts_mean.unwrap_or(f64::NAN);
        let tts_u = out.uniform.tts_mean.unwrap_or(f64::NAN);
        println!(
            "{seed},{},{},{tts_g:.3},{tts_u:.3},{:.3},{:.3},{:.3}",
            out.gsr.success_rate,
            out.uniform.success_rate,
            out.gsr.np.unwrap_or(f64::NAN),
            out.uniform.np.unwrap_or(f64::NAN),
            tts_g / tts_u,
        );
        rows.push((
            seed,
            out.gsr.success_rate,
            out.uniform.success_rate,
            tts_g,
            tts_u,
        ));
    }
    let mean = |f: &dyn Fn(&(u64, f64, f64, f64, f64)) -> f64| {
        rows.iter().map(f).sum::<f64>() / rows.len() as f64
    };
    let sr_g = mean(&|r| r.1);
    let sr_u = mean(&|r| r.2);
    let tts_g = mean(&|r| r.3);
    let tts_u = mean(&|r| r.4);
    println!(
        "mean,{sr_g},{sr_u},{tts_g:.3},{tts_u:.3},,,{:.4}",
        tts_g / tts_u
    );
    let standard_csv = out.join("standard_scenario.csv");
    let mut body = String::from("seed,sr_gsr,sr_uniform,tts_gsr,tts_uniform,tts_ratio\n");
    for r in &rows {
        body.push_str(&format!("{},{},{},{},{},{}\n", r.0, r.1, r.2, r.3, r.4, r.3 / r.4));
    }
    body.push_str(&format!(
        "mean,{sr_g},{sr_u},{tts_g},{tts_u},{}\n",
        tts_g / tts_u
    ));
    std::fs::write(&standard_csv, body).expect("write standard csv");
    println!("wrote {}\n", standard_csv.display());

    // --- Sweep shapes on the noisy-projection variant -----------------------
    let settings = SweepSettings {
        env: GridWorld::grid10(),
        specs: standard_specs(),
        embed: EmbedConfig {
            projection_dim: Some(16),
            noise_sigma: 0.02,
            seed: 0,
        },
        graph: GraphConfig {
            stride_n: 1,
            ..GraphConfig::default()
        },
        reweight: ReweightConfig::default(),
        k_policy: 5,
        n_trials: 200,
        seeds: seeds.clone(),
    };
    let grid = SweepGrid {
        beta1: vec![0.25, 1.0, 4.0],
        beta2: vec![0.0, 0.25, 1.0, 4.0, 16.0],
        alpha: vec![0.25, 1.0, 2.0, 4.0],
    };
    println!("# sweep (projected 16-d embeddings, sigma 0.02)");
    let rows = run_sweep(&settings, &grid).expect("sweep runs");
    write_sweep_csv(&rows, &out.join("sweep_raw.csv")).expect("write sweep csv");
    let agg = aggregate(&rows, settings.env.max_horizon as f64);
    write_sweep_csv(&agg, &out.join("sweep_mean.csv")).expect("write sweep mean csv");
    println!("beta1,beta2,alpha,sr,np,tts,contrast");
    for r in &agg {
        println!(
            "{},{},{},{:.3},{:.3},{:.2},{:.4}",
            r.beta1,
            r.beta2,
            r.alpha,
            r.sr,
            r.np.unwrap_or(f64::NAN),
            r.tts_mean.unwrap_or(f64::NAN),
            r.frac_below_half + r.frac_above_threshold,
        );
    }
    println!("wrote {}", out.join("sweep_mean.csv").display());
}
