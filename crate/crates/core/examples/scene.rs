//! Separates one simulated three-source scene with every method and prints
//! the SDR improvement at the reference microphone.
//!
//! cargo run --release -p dfmnmf --example scene -- [seed] [iters] [seconds] [snr_db|-] [rt60_s] [drr_db]

use std::time::Instant;

use dfmnmf::eval::{sdr_improvement, FILTER_LEN};
use dfmnmf::fastmnmf::FitOptions;
use dfmnmf::hermlin::BlockLayout;
use dfmnmf::init::{InitOptions, Method};
use dfmnmf::mixsim::{simulate, Scenario};
use dfmnmf::pipeline::separate_waveforms;
use dfmnmf::stft::StftConfig;

fn main() -> dfmnmf::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let iters: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let secs: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(4.0);
    let snr: Option<f64> = args.get(4).and_then(|s| s.parse().ok());
    let rt60: Option<f64> = args.get(5).and_then(|s| s.parse().ok());
    let drr: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(3.0);
    let scenario = Scenario {
        sensor_snr_db: snr,
        diffuse_tail: rt60.map(|rt60_s| dfmnmf::mixsim::DiffuseTail { rt60_s, drr_db: drr }),
        ..Scenario::standard(3, 8000, secs)?
    };
    let truth = simulate(&scenario, seed)?;
    let cfg = StftConfig::from_ms(8000, 64.0, 16.0)?;
    let layout = BlockLayout::new(scenario.partition())?;
    let r = truth.reference_mic;
    for method in [Method::Single, Method::Distributed, Method::Full] {
        let start = Instant::now();
        let (run, waves) = separate_waveforms(
            &truth.mixture,
            &cfg,
            &layout,
            method,
            &InitOptions::new(3, 16, seed),
            &FitOptions::new(iters),
        )?;
        let est: Vec<Vec<f64>> = waves.iter().map(|w| w[r].clone()).collect();
        let rep = sdr_improvement(&truth.mixture[r], &truth.images_at(r), &est, FILTER_LEN)?;
        println!(
            "{:12} improvement {:6.2} dB  per source {:?}  fit {:.2}s total {:.2}s  stages {:?}",
            method.name(),
            rep.mean_improvement(),
            rep.improvement_db.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
            run.fit.report.total_seconds(),
            start.elapsed().as_secs_f64(),
            run.fit.report.stages
        );
    }
    Ok(())
}
