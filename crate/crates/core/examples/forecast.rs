//! Multi-step forecasts of an AR(2) series from posterior draws, compared
//! with the exact Gaussian forecast means.

use bnpwmar::model::{ModelState, SeriesData};
use bnpwmar::priors::{BaseMeasureState, PriorOptions};
use bnpwmar::sampler::{run_chain, SamplerConfig};
use bnpwmar::simulate::{forecast_k_steps, gen_ar2, SimKind, SimSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> bnpwmar::Result<()> {
    let values = gen_ar2(200, 5)?;
    let series = SeriesData::new(values.clone(), 2)?;
    let base = BaseMeasureState::from_series(&series, &PriorOptions::default())?;
    let cfg = SamplerConfig {
        components: 15,
        iters: 3_000,
        burnin: 2_000,
        thin: 10,
        ..SamplerConfig::default()
    };
    let chain = run_chain(&series, &base, &cfg)?;
    let draws: Vec<ModelState> = chain.draws.into_iter().map(|d| d.state).collect();

    let steps = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let paths = forecast_k_steps(&draws, &values, steps, 4_000, &mut rng)?;

    let p = SimSpec::new(SimKind::Ar2, 0, 0).params;
    let (mut y1, mut y2) = (values[values.len() - 1] - p.mu, values[values.len() - 2] - p.mu);
    println!("step  mean    2.5%    97.5%   exact mean");
    for k in 0..steps {
        let mut col: Vec<f64> = paths.iter().map(|path| path[k]).collect();
        col.sort_by(f64::total_cmp);
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let q = |u: f64| col[((col.len() - 1) as f64 * u) as usize];
        let next = p.phi1 * y1 + p.phi2 * y2;
        (y2, y1) = (y1, next);
        println!(
            "{:>4}  {mean:6.3}  {:6.3}  {:6.3}  {:6.3}",
            k + 1,
            q(0.025),
            q(0.975),
            next + p.mu
        );
    }
    Ok(())
}
