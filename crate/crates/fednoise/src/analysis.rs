//! Closed-form variance calculators and the Monte Carlo harnesses that check
//! them, plus the collusion-scenario simulation.

use crate::error::{Error, Result};
use crate::numerics::{sample_gaussian_scalar, ModelVector, RngStream, StreamPurpose};
use crate::protocol::{
    run_exchange, share_count, ClientId, DistortionMode, ExchangeParticipant, ShareConfig,
};

/// A collusion scenario for one target client: `rho` of its neighbors leak
/// share information to the aggregator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollusionScenario {
    pub rho: f64,
    pub tau_sq: f64,
    pub client_sigma_sq: f64,
}

impl CollusionScenario {
    pub fn new(rho: f64, tau_sq: f64, client_sigma_sq: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) || !rho.is_finite() {
            return Err(Error::Parameter(format!(
                "collusion fraction must lie in [0, 1], got {rho}"
            )));
        }
        if !tau_sq.is_finite() || tau_sq < 0.0 {
            return Err(Error::Parameter(format!(
                "distortion variance must be nonnegative, got {tau_sq}"
            )));
        }
        if !client_sigma_sq.is_finite() || client_sigma_sq <= 0.0 {
            return Err(Error::Parameter(format!(
                "client noise variance must be positive, got {client_sigma_sq}"
            )));
        }
        Ok(CollusionScenario {
            rho,
            tau_sq,
            client_sigma_sq,
        })
    }
}

/// Aggregate-noise variance after offsetting: `sum_k sigma_k^2 * tau_k^2`.
pub fn theoretical_aggregate_variance(sigmas_sq: &[f64], taus_sq: &[f64]) -> Result<f64> {
    if sigmas_sq.len() != taus_sq.len() {
        return Err(Error::Shape {
            expected: sigmas_sq.len(),
            got: taus_sq.len(),
        });
    }
    Ok(sigmas_sq
        .iter()
        .zip(taus_sq)
        .map(|(s, t)| s * t)
        .sum())
}

/// Smallest distortion variance that keeps the client's residual noise at or
/// above its DP scale: `max(2 rho - 1, 0)`.
pub fn min_tau_sq(rho: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) || !rho.is_finite() {
        return Err(Error::Parameter(format!(
            "collusion fraction must lie in [0, 1], got {rho}"
        )));
    }
    Ok((2.0 * rho - 1.0).max(0.0))
}

/// The variance of a client's upload noise from the colluding aggregator's
/// viewpoint: `(1 - rho)(tau^2 + 2) sigma_k^2 + tau^2 rho sigma_k^2`.
pub fn attacker_effective_variance(sc: &CollusionScenario) -> f64 {
    (1.0 - sc.rho) * (sc.tau_sq + 2.0) * sc.client_sigma_sq
        + sc.tau_sq * sc.rho * sc.client_sigma_sq
}

/// A protocol population for the Monte Carlo harness: per-client share
/// configurations exchanging over `dim`-dimensional payloads.
#[derive(Debug, Clone)]
pub struct ExchangeSetup {
    pub configs: Vec<ShareConfig>,
    pub dim: usize,
    pub distortion: DistortionMode,
}

impl ExchangeSetup {
    pub fn new(configs: Vec<ShareConfig>, dim: usize, distortion: DistortionMode) -> Result<Self> {
        if configs.len() < 2 {
            return Err(Error::Parameter(
                "exchange setup needs at least two clients".into(),
            ));
        }
        if dim == 0 {
            return Err(Error::Parameter("dimension must be positive".into()));
        }
        Ok(ExchangeSetup {
            configs,
            dim,
            distortion,
        })
    }

    /// Closed-form aggregate variance using the effective per-client scales.
    pub fn theoretical_variance(&self) -> f64 {
        self.configs
            .iter()
            .map(|c| share_count(c) as f64 * c.unit_sigma_sq * c.tau_sq)
            .sum()
    }
}

/// Run `trials` independent no-training exchange rounds and return the pooled
/// per-dimension sample variance of the server-side summed perturbation.
pub fn empirical_aggregate_variance(
    setup: &ExchangeSetup,
    trials: usize,
    master_seed: u64,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Parameter("trials must be positive".into()));
    }
    let participants: Vec<ExchangeParticipant> = setup
        .configs
        .iter()
        .enumerate()
        .map(|(i, cfg)| ExchangeParticipant {
            id: ClientId(i as u64),
            cfg: *cfg,
        })
        .collect();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let count = (trials * setup.dim) as f64;
    for trial in 0..trials {
        let outcome = run_exchange(
            &participants,
            setup.dim,
            trial as u64,
            master_seed,
            setup.distortion,
        )?;
        let mut total = ModelVector::zeros(setup.dim);
        for p in &outcome.perturbations {
            total.add_in_place(p)?;
        }
        for x in total.as_slice() {
            sum += x;
            sum_sq += x * x;
        }
    }
    let mean = sum / count;
    Ok(sum_sq / count - mean * mean)
}

/// Empirical attacker-view variance for one target client.
///
/// A uniformly random `rho` fraction of the target's `v` neighbor slots are
/// colluders. Per trial the target's upload noise is formed and every
/// component the attacker knows is subtracted: for a colluding slot both the
/// target's own share sent there and the received pre-distortion payload are
/// revealed, so only the distortion scalar stays random. The pooled sample
/// variance of the residual is returned.
pub fn simulate_collusion(
    cfg: &ShareConfig,
    rho: f64,
    trials: usize,
    master_seed: u64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) || !rho.is_finite() {
        return Err(Error::Parameter(format!(
            "collusion fraction must lie in [0, 1], got {rho}"
        )));
    }
    if trials == 0 {
        return Err(Error::Parameter("trials must be positive".into()));
    }
    let v = share_count(cfg);
    let colluders = (rho * v as f64).round() as usize;
    let mut pick_rng = RngStream::derive(master_seed, StreamPurpose::Neighbors, 0, 0);
    let mut colluding = vec![false; v];
    for i in pick_rng.sample_indices(v, colluders) {
        colluding[i] = true;
    }
    let mut noise_rng = RngStream::derive(master_seed, StreamPurpose::NoiseShares, 0, 1);
    let mut distort_rng = RngStream::derive(master_seed, StreamPurpose::Distortion, 0, 1);

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..trials {
        let mut residual = 0.0;
        for &leaks in &colluding {
            let own = sample_gaussian_scalar(0.0, cfg.unit_sigma_sq, &mut noise_rng)?;
            let received = sample_gaussian_scalar(0.0, cfg.unit_sigma_sq, &mut noise_rng)?;
            let s = sample_gaussian_scalar(1.0, cfg.tau_sq, &mut distort_rng)?;
            if leaks {
                // Upload term (own + s * received) minus the revealed
                // constants own and E[s] * received.
                residual += (s - 1.0) * received;
            } else {
                residual += own + s * received;
            }
        }
        sum += residual;
        sum_sq += residual * residual;
    }
    let n = trials as f64;
    let mean = sum / n;
    Ok(sum_sq / n - mean * mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::local_perturbation_variance;

    fn cfg(unit: f64, tau: f64, client: f64) -> ShareConfig {
        ShareConfig::new(unit, tau, client).unwrap()
    }

    #[test]
    fn theoretical_variance_examples() {
        assert_eq!(
            theoretical_aggregate_variance(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap(),
            0.0
        );
        let v = theoretical_aggregate_variance(&[1.0, 2.0, 3.0], &[0.3, 0.3, 0.3]).unwrap();
        assert!((v - 1.8).abs() < 1e-12);
        let dp = theoretical_aggregate_variance(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!((dp - 6.0).abs() < 1e-12);
        assert!(theoretical_aggregate_variance(&[1.0], &[0.3, 0.3]).is_err());
    }

    #[test]
    fn min_tau_examples() {
        assert_eq!(min_tau_sq(0.0).unwrap(), 0.0);
        assert_eq!(min_tau_sq(0.5).unwrap(), 0.0);
        assert_eq!(min_tau_sq(1.0).unwrap(), 1.0);
        assert!(min_tau_sq(1.5).is_err());
        assert!(min_tau_sq(-0.1).is_err());
    }

    #[test]
    fn attacker_variance_examples() {
        let honest = CollusionScenario::new(0.0, 0.0, 1.5).unwrap();
        assert!((attacker_effective_variance(&honest) - 3.0).abs() < 1e-12);
        let full = CollusionScenario::new(1.0, 1.0, 1.5).unwrap();
        assert!((attacker_effective_variance(&full) - 1.5).abs() < 1e-12);
        let threshold = CollusionScenario::new(0.75, 0.5, 1.0).unwrap();
        assert!((attacker_effective_variance(&threshold) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_is_tight_and_monotone() {
        for i in 0..=10 {
            let rho = 0.5 + 0.05 * i as f64;
            let tau = min_tau_sq(rho).unwrap();
            let at = CollusionScenario::new(rho, tau, 2.0).unwrap();
            assert!(
                (attacker_effective_variance(&at) - 2.0).abs() < 1e-12,
                "rho {rho}"
            );
            let above = CollusionScenario::new(rho, tau + 0.2, 2.0).unwrap();
            assert!(attacker_effective_variance(&above) >= 2.0);
        }
    }

    #[test]
    fn rho_zero_matches_local_perturbation_variance() {
        for &tau in &[0.0, 0.3, 0.8] {
            let c = cfg(0.01, tau, 1.0);
            let sc = CollusionScenario::new(0.0, tau, 1.0).unwrap();
            assert!(
                (attacker_effective_variance(&sc) - local_perturbation_variance(&c)).abs() < 1e-12
            );
        }
    }

    #[test]
    fn zero_tau_exchange_variance_is_zero() {
        let setup = ExchangeSetup::new(
            vec![cfg(0.1, 0.0, 0.5); 4],
            8,
            DistortionMode::PerShare,
        )
        .unwrap();
        let var = empirical_aggregate_variance(&setup, 50, 3).unwrap();
        assert!(var < 1e-15, "var = {var}");
    }

    #[test]
    fn empirical_matches_theorem_closed_form() {
        // K = 5, heterogeneous scales, tau^2 = 0.3.
        let configs: Vec<ShareConfig> = (1..=5)
            .map(|i| cfg(0.01, 0.3, 0.01 * i as f64))
            .collect();
        let setup = ExchangeSetup::new(configs, 4, DistortionMode::PerShare).unwrap();
        let expect = setup.theoretical_variance();
        let var = empirical_aggregate_variance(&setup, 10_000, 17).unwrap();
        assert!(
            (var - expect).abs() / expect < 0.05,
            "var {var}, expect {expect}"
        );
    }

    #[test]
    fn collusion_simulation_matches_formula() {
        let unit = 0.01;
        for &(rho, tau) in &[(0.0, 0.0), (0.75, 0.5), (1.0, 1.0)] {
            let c = cfg(unit, tau, 1.0);
            let sc = CollusionScenario::new(rho, tau, 1.0).unwrap();
            let expect = attacker_effective_variance(&sc);
            let got = simulate_collusion(&c, rho, 10_000, 23).unwrap();
            if expect == 0.0 {
                assert!(got < 1e-15);
            } else {
                assert!(
                    (got - expect).abs() / expect < 0.10,
                    "rho {rho}, tau {tau}: got {got}, expect {expect}"
                );
            }
        }
    }

    #[test]
    fn residual_variance_at_threshold_is_at_least_sigma_sq() {
        for &rho in &[0.6, 0.75, 0.9, 1.0] {
            let tau = min_tau_sq(rho).unwrap();
            let c = cfg(0.01, tau, 1.0);
            let got = simulate_collusion(&c, rho, 20_000, 29).unwrap();
            // One-sided with a small statistical margin.
            assert!(got >= 1.0 * 0.95, "rho {rho}: residual variance {got}");
        }
    }
}
