//! Generate each of the built-in test series and print a few summaries.

use bnpwmar::simulate::{ar2_root_moduli, simulate, SimKind, SimSpec};

fn main() -> bnpwmar::Result<()> {
    for kind in [
        SimKind::RickerNormal,
        SimKind::RickerLogNormal1,
        SimKind::RickerLogNormal2,
        SimKind::Ar2,
    ] {
        let spec = SimSpec::new(kind, 500, 1);
        let y = simulate(&spec)?;
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let (lo, hi) = y
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        println!("{kind:?}: mean {mean:.3}, sd {sd:.3}, range [{lo:.3}, {hi:.3}]");
        println!(
            "  first values {:?}",
            y[..5].iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>()
        );
    }
    let p = SimSpec::new(SimKind::Ar2, 0, 0).params;
    println!("AR(2) root moduli {:?}", ar2_root_moduli(p.phi1, p.phi2));
    Ok(())
}
