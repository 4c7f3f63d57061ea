//! Proposal tuning for the random-walk update of the lag-kernel parameters.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{sqrt_factor, std_normal};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum AdaptPhase {
    #[default]
    TuneDiag,
    ScaleGroups,
    EstimateCov,
    ScaleGlobal,
    Frozen,
}

/// Proposal standard deviations shrink by this factor when acceptance is too low.
pub const SHRINK: f64 = 0.6;
/// ... and grow by this factor when it is too high.
pub const GROW: f64 = 1.5;

#[derive(Debug, Clone)]
pub struct AdaptState {
    pub phase: AdaptPhase,
    pub proposal_cov: Vec<DMatrix<f64>>,
    roots: Vec<DMatrix<f64>>,
    pub accept: Vec<usize>,
    pub tries: Vec<usize>,
    groups: Vec<Range<usize>>,
    group: usize,
    pass_ok: bool,
    attempts: usize,
    samples: Vec<Vec<Vec<f64>>>,
    target: (f64, f64),
    max_attempts: usize,
    full: bool,
    pub warning: Option<String>,
}

impl AdaptState {
    /// `groups` partitions the coordinate vector (empty groups are skipped).
    pub fn new(
        initial: Vec<DMatrix<f64>>,
        groups: Vec<Range<usize>>,
        target: (f64, f64),
        max_attempts: usize,
        full: bool,
    ) -> Self {
        let h = initial.len();
        let roots = initial.iter().map(sqrt_factor).collect();
        Self {
            phase: AdaptPhase::TuneDiag,
            proposal_cov: initial,
            roots,
            accept: vec![0; h],
            tries: vec![0; h],
            groups: groups.into_iter().filter(|g| !g.is_empty()).collect(),
            group: 0,
            pass_ok: true,
            attempts: 0,
            samples: vec![Vec::new(); h],
            target,
            max_attempts: max_attempts.max(1),
            full,
            warning: None,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.phase == AdaptPhase::Frozen
    }

    /// Coordinates moved by the next proposal; `None` means all of them.
    pub fn active_block(&self) -> Option<Range<usize>> {
        match self.phase {
            AdaptPhase::ScaleGroups => Some(self.groups[self.group].clone()),
            _ => None,
        }
    }

    pub fn step<R: Rng + ?Sized>(&self, h: usize, rng: &mut R) -> DVector<f64> {
        let d = self.proposal_cov[h].nrows();
        match self.active_block() {
            Some(block) => {
                let sub = self.proposal_cov[h]
                    .view((block.start, block.start), (block.len(), block.len()))
                    .into_owned();
                let root = sqrt_factor(&sub);
                let z = DVector::from_fn(block.len(), |_, _| std_normal(rng));
                let inc = root * z;
                let mut out = DVector::zeros(d);
                for (i, k) in block.enumerate() {
                    out[k] = inc[i];
                }
                out
            }
            None => {
                let z = DVector::from_fn(d, |_, _| std_normal(rng));
                &self.roots[h] * z
            }
        }
    }

    pub fn record(&mut self, h: usize, accepted: bool) {
        self.tries[h] += 1;
        if accepted {
            self.accept[h] += 1;
        }
    }

    pub fn record_sample(&mut self, h: usize, theta: &[f64]) {
        if self.phase == AdaptPhase::EstimateCov {
            self.samples[h].push(theta.to_vec());
        }
    }

    pub fn rates(&self) -> Vec<f64> {
        self.accept
            .iter()
            .zip(&self.tries)
            .map(|(a, t)| if *t == 0 { 0.0 } else { *a as f64 / *t as f64 })
            .collect()
    }

    fn factor_for(&self, rate: f64) -> Option<f64> {
        if rate < self.target.0 {
            Some(SHRINK)
        } else if rate > self.target.1 {
            Some(GROW)
        } else {
            None
        }
    }

    fn refresh_root(&mut self, h: usize) {
        self.roots[h] = sqrt_factor(&self.proposal_cov[h]);
    }

    /// Apply the rule of the current phase to the batch just completed.
    pub fn end_batch(&mut self) {
        if self.is_frozen() {
            return;
        }
        let rates = self.rates();
        let h_count = rates.len();
        match self.phase {
            AdaptPhase::TuneDiag | AdaptPhase::ScaleGlobal => {
                let mut all_ok = true;
                for h in 0..h_count {
                    if let Some(c) = self.factor_for(rates[h]) {
                        all_ok = false;
                        self.proposal_cov[h] *= c * c;
                        self.refresh_root(h);
                    }
                }
                self.attempts += 1;
                if all_ok || self.attempts >= self.max_attempts {
                    if !all_ok {
                        self.warning = Some(format!(
                            "{:?} stopped after {} attempts with rates outside target",
                            self.phase, self.attempts
                        ));
                    }
                    self.attempts = 0;
                    self.phase = match (self.phase, self.full && !self.groups.is_empty()) {
                        (AdaptPhase::TuneDiag, true) => AdaptPhase::ScaleGroups,
                        _ => AdaptPhase::Frozen,
                    };
                }
            }
            AdaptPhase::ScaleGroups => {
                let block = self.groups[self.group].clone();
                for h in 0..h_count {
                    if let Some(c) = self.factor_for(rates[h]) {
                        self.pass_ok = false;
                        scale_block(&mut self.proposal_cov[h], &block, c);
                        self.refresh_root(h);
                    }
                }
                self.group += 1;
                if self.group == self.groups.len() {
                    self.group = 0;
                    self.attempts += 1;
                    if self.pass_ok || self.attempts >= self.max_attempts {
                        self.attempts = 0;
                        self.phase = AdaptPhase::EstimateCov;
                    }
                    self.pass_ok = true;
                }
            }
            AdaptPhase::EstimateCov => {
                for h in 0..h_count {
                    if let Some(cov) = empirical_proposal(&self.samples[h]) {
                        self.proposal_cov[h] = cov;
                        self.refresh_root(h);
                    }
                    self.samples[h].clear();
                }
                self.phase = AdaptPhase::ScaleGlobal;
            }
            AdaptPhase::Frozen => {}
        }
        self.accept.iter_mut().for_each(|a| *a = 0);
        self.tries.iter_mut().for_each(|t| *t = 0);
    }

    pub fn freeze(&mut self) {
        if !self.is_frozen() && self.warning.is_none() && self.full {
            self.warning = Some(format!("tuning budget ended during {:?}", self.phase));
        }
        self.phase = AdaptPhase::Frozen;
        self.accept.iter_mut().for_each(|a| *a = 0);
        self.tries.iter_mut().for_each(|t| *t = 0);
        self.samples.iter_mut().for_each(|s| s.clear());
    }
}

/// Scale rows and columns in `block` by `c`, which multiplies the block's
/// variances by `c²` and leaves correlations unchanged.
pub fn scale_block(cov: &mut DMatrix<f64>, block: &Range<usize>, c: f64) {
    let d = cov.nrows();
    for i in block.clone() {
        for j in 0..d {
            cov[(i, j)] *= c;
            cov[(j, i)] *= c;
        }
    }
}

/// `2.38² / d` times the sample covariance plus a small ridge; `None` when the
/// samples cannot support an estimate.
pub fn empirical_proposal(samples: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let n = samples.len();
    let d = samples.first()?.len();
    if n < d + 2 {
        return None;
    }
    let mut mean = vec![0.0; d];
    for s in samples {
        for k in 0..d {
            mean[k] += s[k] / n as f64;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        for i in 0..d {
            for j in 0..=i {
                cov[(i, j)] += (s[i] - mean[i]) * (s[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = cov[(i, j)] / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    if (0..d).any(|i| cov[(i, i)] <= 1e-20 * mean[i].powi(2).max(1.0)) {
        return None;
    }
    let scale = 2.38 * 2.38 / d as f64;
    let mut prop = cov * scale;
    let mean_diag = prop.diagonal().mean();
    if !(mean_diag > 0.0) || !mean_diag.is_finite() {
        return None;
    }
    for i in 0..d {
        prop[(i, i)] += 1e-6 * mean_diag + 1e-12;
    }
    prop.clone().cholesky().map(|_| prop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(adapt: bool) -> AdaptState {
        AdaptState::new(
            vec![DMatrix::identity(3, 3)],
            vec![0..1, 1..2, 2..3],
            (0.02, 0.2),
            5,
            adapt,
        )
    }

    #[test]
    fn high_acceptance_grows_proposal() {
        let mut a = state(true);
        for _ in 0..10 {
            a.record(0, true);
        }
        a.end_batch();
        assert!((a.proposal_cov[0][(0, 0)] - GROW * GROW).abs() < 1e-12);
        let mut b = state(true);
        b.record(0, false);
        b.end_batch();
        assert!((b.proposal_cov[0][(0, 0)] - SHRINK * SHRINK).abs() < 1e-12);
    }

    #[test]
    fn phases_advance_monotonically() {
        let mut a = state(true);
        let mut seen = vec![a.phase];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            for _ in 0..50 {
                let acc = rng.random::<f64>() < 0.1;
                a.record(0, acc);
                let theta: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
                a.record_sample(0, &theta);
            }
            a.end_batch();
            if *seen.last().unwrap() != a.phase {
                seen.push(a.phase);
            }
        }
        assert_eq!(
            seen,
            vec![
                AdaptPhase::TuneDiag,
                AdaptPhase::ScaleGroups,
                AdaptPhase::EstimateCov,
                AdaptPhase::ScaleGlobal,
                AdaptPhase::Frozen
            ]
        );
        let before = a.proposal_cov.clone();
        a.record(0, true);
        a.end_batch();
        assert_eq!(a.proposal_cov, before);
    }

    #[test]
    fn without_adaptation_only_diagonal_tuning() {
        let mut a = state(false);
        a.record(0, true);
        a.end_batch();
        for _ in 0..4 {
            a.record(0, true);
            a.end_batch();
        }
        assert!(a.is_frozen());
        let c = &a.proposal_cov[0];
        assert!(c[(0, 1)] == 0.0 && c[(1, 2)] == 0.0);
    }

    #[test]
    fn group_scaling_preserves_correlation() {
        let mut cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
        let corr = |c: &DMatrix<f64>| c[(0, 1)] / (c[(0, 0)] * c[(1, 1)]).sqrt();
        let before = corr(&cov);
        scale_block(&mut cov, &(0..1), 3.0);
        assert!((corr(&cov) - before).abs() < 1e-15);
        assert!((cov[(0, 0)] - 9.0).abs() < 1e-15);
    }

    #[test]
    fn empirical_covariance_recovers_correlation_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<Vec<f64>> = (0..5000)
            .map(|_| {
                let z1 = std_normal(&mut rng);
                let z2 = std_normal(&mut rng);
                vec![z1, -0.8 * z1 + 0.6 * z2]
            })
            .collect();
        let p = empirical_proposal(&samples).unwrap();
        assert!(p[(0, 1)] < 0.0);
        assert!((p[(0, 1)] / (p[(0, 0)] * p[(1, 1)]).sqrt() + 0.8).abs() < 0.05);
        assert!(empirical_proposal(&samples[..2]).is_none());
        assert!(empirical_proposal(&vec![vec![1.0, 2.0]; 100]).is_none());
    }
}
