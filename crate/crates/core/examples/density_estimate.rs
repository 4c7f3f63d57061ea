//! Fit the lag-2 Ricker series with two lags and no selection, then print
//! the posterior transition density and quantiles at a few lag values.

use bnpwmar::model::SeriesData;
use bnpwmar::priors::{BaseMeasureState, PriorOptions};
use bnpwmar::sampler::{run_chain, SamplerConfig};
use bnpwmar::simulate::gen_ricker_normal;

fn main() -> bnpwmar::Result<()> {
    let series = SeriesData::new(gen_ricker_normal(152, 3)?, 2)?;
    let base = BaseMeasureState::from_series(&series, &PriorOptions::default())?;
    let cfg = SamplerConfig {
        components: 20,
        iters: 4_000,
        burnin: 2_000,
        thin: 20,
        ..SamplerConfig::default()
    };
    let chain = run_chain(&series, &base, &cfg)?;
    println!(
        "{} draws, {:.2} s per 1000 sweeps",
        chain.draws.len(),
        chain.timings.seconds_per_1000
    );

    // y_t = y_{t-2} exp(2.6 - y_{t-2}) + noise
    for lag2 in [0.5f64, 1.5, 2.5, 3.5] {
        let x = [2.0, lag2];
        let truth = lag2 * (2.6 - lag2).exp();
        let mut mean = 0.0;
        let mut q = [0.0; 3];
        for d in &chain.draws {
            let t = d.state.transition_at(&x)?;
            mean += t.mean();
            for (k, u) in [0.05, 0.5, 0.95].into_iter().enumerate() {
                q[k] += t.quantile(u)?;
            }
        }
        let n = chain.draws.len() as f64;
        println!(
            "y[t-2] = {lag2}: posterior mean {:.3} (true {truth:.3}), 5/50/95% {:.3} {:.3} {:.3}",
            mean / n,
            q[0] / n,
            q[1] / n,
            q[2] / n
        );
    }

    let x = [2.0, 1.5];
    let t = chain.draws.last().unwrap().state.transition_at(&x)?;
    println!("density of the last draw at x = {x:?}:");
    for k in 0..=8 {
        let y = 2.6 + 0.1 * k as f64;
        println!("  p({y:.1}) = {:.4}", t.density(y));
    }
    Ok(())
}
