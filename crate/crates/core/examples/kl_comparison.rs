//! Score a base fit (L = 2, full weight-kernel covariance, no selection)
//! against a lag-selection fit (L = 5, diagonal) by Monte Carlo K-L divergence
//! from the simulator's true transition density.
//!
//! cargo run --release --example kl_comparison -- [normal|ln1|ln2] [fit values] [sweeps] [global|local]

use bnpwmar::evaluate::{kl_divergence_mc, stride_subset, ValidationSet};
use bnpwmar::lagselect::SelectionMode;
use bnpwmar::model::{ModelState, SeriesData};
use bnpwmar::priors::{pi_gamma_defaults, BaseMeasureState, PriorOptions};
use bnpwmar::sampler::{run_chain, GammaInit, SamplerConfig};
use bnpwmar::simulate::{simulate, split_for_validation, SimKind, SimSpec};

fn main() -> bnpwmar::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let kind = match args.get(1).map(String::as_str) {
        Some("ln1") => SimKind::RickerLogNormal1,
        Some("ln2") => SimKind::RickerLogNormal2,
        _ => SimKind::RickerNormal,
    };
    let n_fit: usize = args.get(2).and_then(|a| a.parse().ok()).unwrap_or(75);
    let sweeps: usize = args.get(3).and_then(|a| a.parse().ok()).unwrap_or(20_000);
    let mode = match args.get(4).map(String::as_str) {
        Some("local") => SelectionMode::Local,
        _ => SelectionMode::Global,
    };

    let spec = SimSpec::new(kind, 10_000, 2024);
    let generator = spec.generator();
    let values = simulate(&spec)?;
    let (_, pairs) = split_for_validation(&values, 1_000, 9_000, 500, 5, 99)?;
    let validation = ValidationSet::new(pairs, 1_000)?;

    // both fits condition on the same n_fit - 5 responses
    let fits: [(&str, usize, bool, SelectionMode, Vec<GammaInit>); 2] = [
        ("base (2)", 2, false, SelectionMode::None, vec![GammaInit::AllOn; 3]),
        (
            "selection (5)",
            5,
            true,
            mode,
            vec![GammaInit::AllOff, GammaInit::AllOff, GammaInit::AllOn, GammaInit::AllOn],
        ),
    ];
    for (label, lags, diagonal, mode, inits) in fits {
        let series = SeriesData::new(values[5 - lags..n_fit].to_vec(), lags)?;
        let opts = PriorOptions {
            diagonal_sigma_x: diagonal,
            ..PriorOptions::default()
        };
        let base = BaseMeasureState::from_series(&series, &opts)?;
        let mut kls = Vec::new();
        for (k, init) in inits.into_iter().enumerate() {
            let cfg = SamplerConfig {
                burnin: sweeps / 2,
                iters: sweeps / 2,
                thin: 10,
                seed: 100 + k as u64,
                selection_mode: mode,
                gamma_init: init,
                pi_gamma: (mode != SelectionMode::None).then(|| pi_gamma_defaults(lags)),
                ..SamplerConfig::default()
            };
            let chain = run_chain(&series, &base, &cfg)?;
            let states: Vec<ModelState> = chain.draws.iter().map(|d| d.state.clone()).collect();
            let kl = kl_divergence_mc(&validation, &generator, &stride_subset(&states, 50), 7)?;
            println!(
                "{label} chain {k}: K-L {:.3} (se {:.3}), {:.2} s per 1000 sweeps",
                kl.kl, kl.se, chain.timings.seconds_per_1000
            );
            kls.push(kl.kl);
        }
        let min = kls.iter().copied().fold(f64::INFINITY, f64::min);
        let max = kls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!("{label}: min {min:.3}, max {max:.3}");
    }
    Ok(())
}
