//! Export the posterior transition mean as a function of lag 2, with the
//! other lags drawn uniformly over the data range, as a plotting table.

use bnpwmar::io::grid::{export_grid, linspace, FixedLagPolicy, Functional, GridSpec};
use bnpwmar::lagselect::SelectionMode;
use bnpwmar::model::{ModelState, SeriesData};
use bnpwmar::priors::{BaseMeasureState, PriorOptions};
use bnpwmar::sampler::{run_chain, SamplerConfig};
use bnpwmar::simulate::gen_ricker_normal;

fn main() -> bnpwmar::Result<()> {
    let out = std::env::args().nth(1);
    let series = SeriesData::new(gen_ricker_normal(103, 6)?, 3)?;
    let opts = PriorOptions {
        diagonal_sigma_x: true,
        ..PriorOptions::default()
    };
    let base = BaseMeasureState::from_series(&series, &opts)?;
    let cfg = SamplerConfig {
        components: 20,
        iters: 4_000,
        burnin: 3_000,
        thin: 20,
        selection_mode: SelectionMode::Global,
        ..SamplerConfig::default()
    };
    let chain = run_chain(&series, &base, &cfg)?;
    let draws: Vec<ModelState> = chain.draws.into_iter().map(|d| d.state).collect();
    let (lo, hi) = series.min_max();
    let grid = GridSpec {
        varied: vec![(1, linspace(lo, hi, 25))],
        fixed: FixedLagPolicy::UniformRandom { lo, hi, seed: 3 },
    };
    let table = export_grid(&draws, &Functional::Mean, &grid)?;
    match out {
        Some(path) => bnpwmar::io::atomic_write(std::path::Path::new(&path), table.to_text().as_bytes())?,
        None => print!("{}", table.to_text()),
    }
    Ok(())
}
