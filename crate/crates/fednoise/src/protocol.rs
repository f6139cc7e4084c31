//! Noise-share exchange: split a client's DP noise into unit-variance shares,
//! hand negated shares to random peers through a tracker, distort what was
//! received, and assemble the upload perturbation.
//!
//! Each share is drawn from N(0, unit_sigma_sq) per dimension and the share
//! count is `v = ceil(client_sigma_sq / unit_sigma_sq)`, so a client's own
//! shares sum to per-dimension variance `v * unit_sigma_sq >= client_sigma_sq`.
//! The distortion scalar `s ~ N(1, tau_sq)` is by default one draw per received
//! share applied to the whole vector; this leaves per-dimension variances
//! intact but correlates dimensions within a share. Per-dimension draws are
//! available as a toggle.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::{
    sample_gaussian, sample_gaussian_scalar, ModelVector, RngStream, StreamPurpose,
};

/// Identity of a simulated client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClientId(pub u64);

impl std::fmt::Display for ClientId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Per-client share parameters: the common unit variance, the client's total
/// noise variance, and its distortion variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShareConfig {
    pub unit_sigma_sq: f64,
    pub tau_sq: f64,
    pub client_sigma_sq: f64,
}

impl ShareConfig {
    pub fn new(unit_sigma_sq: f64, tau_sq: f64, client_sigma_sq: f64) -> Result<Self> {
        if !unit_sigma_sq.is_finite() || unit_sigma_sq <= 0.0 {
            return Err(Error::Parameter(format!(
                "unit variance must be positive, got {unit_sigma_sq}"
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
        if unit_sigma_sq > client_sigma_sq {
            return Err(Error::Parameter(format!(
                "unit variance {unit_sigma_sq} exceeds client variance {client_sigma_sq}"
            )));
        }
        Ok(ShareConfig {
            unit_sigma_sq,
            tau_sq,
            client_sigma_sq,
        })
    }
}

/// Number of unit shares: `ceil(client_sigma_sq / unit_sigma_sq)`.
pub fn share_count(cfg: &ShareConfig) -> usize {
    (cfg.client_sigma_sq / cfg.unit_sigma_sq).ceil() as usize
}

/// Own-noise variance actually emitted after rounding the share count up.
pub fn effective_sigma_sq(cfg: &ShareConfig) -> f64 {
    share_count(cfg) as f64 * cfg.unit_sigma_sq
}

/// How the distortion scalar is applied to a received share.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistortionMode {
    /// One scalar per share, multiplied onto the whole vector (default).
    PerShare,
    /// An independent scalar per dimension.
    PerDimension,
}

/// One unit-variance noise vector in transit between clients.
#[derive(Debug, Clone)]
pub struct NoiseShare {
    pub sender: ClientId,
    pub receiver: ClientId,
    pub round: u64,
    pub payload: ModelVector,
    pub negated: bool,
}

/// Registry of clients live in the current round. Returns random neighbor
/// lists; never sees noise or parameters.
#[derive(Debug, Default)]
pub struct Tracker {
    live: Vec<ClientId>,
}

impl Tracker {
    pub fn new() -> Self {
        Tracker::default()
    }

    pub fn register(&mut self, id: ClientId) {
        if !self.live.contains(&id) {
            self.live.push(id);
        }
    }

    pub fn live_count(&self) -> usize {
        self.live.len()
    }

    /// `v` neighbor ids drawn uniformly from the live set minus the requester:
    /// without replacement while enough peers exist, with replacement otherwise.
    pub fn select_neighbors(
        &self,
        requester: ClientId,
        v: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<ClientId>> {
        let peers: Vec<ClientId> = self
            .live
            .iter()
            .copied()
            .filter(|id| *id != requester)
            .collect();
        if peers.is_empty() {
            return Err(Error::Protocol(format!(
                "client {requester} has no live peer to share with"
            )));
        }
        if v <= peers.len() {
            Ok(rng
                .sample_indices(peers.len(), v)
                .into_iter()
                .map(|i| peers[i])
                .collect())
        } else {
            Ok((0..v).map(|_| peers[rng.index(peers.len())]).collect())
        }
    }
}

/// Draw `v` independent unit shares, each i.i.d. N(0, unit_sigma_sq) per
/// dimension.
pub fn generate_shares(
    v: usize,
    cfg: &ShareConfig,
    dim: usize,
    rng: &mut RngStream,
) -> Result<Vec<ModelVector>> {
    (0..v)
        .map(|_| sample_gaussian(dim, 0.0, cfg.unit_sigma_sq, rng))
        .collect()
}

/// Multiply a received (negated) share by the distortion scalar(s) s ~ N(1, tau_sq).
pub fn distort_share(
    share: &NoiseShare,
    tau_sq: f64,
    mode: DistortionMode,
    rng: &mut RngStream,
) -> Result<ModelVector> {
    if !tau_sq.is_finite() || tau_sq < 0.0 {
        return Err(Error::Parameter(format!(
            "distortion variance must be nonnegative, got {tau_sq}"
        )));
    }
    match mode {
        DistortionMode::PerShare => {
            let s = sample_gaussian_scalar(1.0, tau_sq, rng)?;
            Ok(share.payload.scale(s))
        }
        DistortionMode::PerDimension => {
            let s = sample_gaussian(share.payload.len(), 1.0, tau_sq, rng)?;
            let mut out = share.payload.clone();
            for (x, si) in out.as_mut_slice().iter_mut().zip(s.as_slice()) {
                *x *= si;
            }
            Ok(out)
        }
    }
}

/// Element-wise sum of all own shares and all distorted received shares.
pub fn assemble_perturbation(
    own_shares: &[ModelVector],
    distorted_received: &[ModelVector],
) -> Result<ModelVector> {
    let first = own_shares
        .first()
        .ok_or_else(|| Error::Protocol("no own shares to assemble".into()))?;
    let mut sum = ModelVector::zeros(first.len());
    for share in own_shares.iter().chain(distorted_received) {
        sum.add_in_place(share)?;
    }
    Ok(sum)
}

/// Closed-form variance of a client's upload perturbation:
/// own shares contribute v * sigma^2, received distorted shares v * sigma^2 * (1 + tau^2).
pub fn local_perturbation_variance(cfg: &ShareConfig) -> f64 {
    effective_sigma_sq(cfg) * (2.0 + cfg.tau_sq)
}

/// One participant in a round's share exchange.
#[derive(Debug, Clone)]
pub struct ExchangeParticipant {
    pub id: ClientId,
    pub cfg: ShareConfig,
}

/// Result of a closed synchronous exchange: one assembled perturbation per
/// participant, in participant order.
#[derive(Debug)]
pub struct ExchangeOutcome {
    pub perturbations: Vec<ModelVector>,
    /// Shares generated but never handed to a receiver. Always zero in a
    /// closed exchange; kept for the conservation accounting.
    pub undelivered: usize,
}

/// Run one synchronous share-exchange round among `participants`.
///
/// All sends are deposited before any client assembles (the round barrier).
/// Every per-client draw comes from a labeled stream, so the outcome does not
/// depend on iteration order.
pub fn run_exchange(
    participants: &[ExchangeParticipant],
    dim: usize,
    round: u64,
    master_seed: u64,
    mode: DistortionMode,
) -> Result<ExchangeOutcome> {
    if participants.len() < 2 {
        return Err(Error::Protocol(
            "share exchange needs at least two participants".into(),
        ));
    }
    let mut tracker = Tracker::new();
    for p in participants {
        tracker.register(p.id);
    }

    let mut own: HashMap<ClientId, Vec<ModelVector>> = HashMap::new();
    let mut inbox: HashMap<ClientId, Vec<NoiseShare>> = HashMap::new();
    let mut generated = 0usize;
    let mut delivered = 0usize;

    // Send phase.
    for p in participants {
        let v = share_count(&p.cfg);
        let mut share_rng =
            RngStream::derive(master_seed, StreamPurpose::NoiseShares, p.id.0, round);
        let mut neighbor_rng =
            RngStream::derive(master_seed, StreamPurpose::Neighbors, p.id.0, round);
        let shares = generate_shares(v, &p.cfg, dim, &mut share_rng)?;
        let neighbors = tracker.select_neighbors(p.id, v, &mut neighbor_rng)?;
        generated += v;
        for (share, receiver) in shares.iter().zip(neighbors) {
            debug_assert_ne!(p.id, receiver);
            inbox.entry(receiver).or_default().push(NoiseShare {
                sender: p.id,
                receiver,
                round,
                payload: share.negate(),
                negated: true,
            });
            delivered += 1;
        }
        own.insert(p.id, shares);
    }

    // Barrier passed: every send is in an inbox. Assemble phase.
    let mut perturbations = Vec::with_capacity(participants.len());
    for p in participants {
        let mut distort_rng =
            RngStream::derive(master_seed, StreamPurpose::Distortion, p.id.0, round);
        let received = inbox.remove(&p.id).unwrap_or_default();
        let distorted: Vec<ModelVector> = received
            .iter()
            .map(|share| distort_share(share, p.cfg.tau_sq, mode, &mut distort_rng))
            .collect::<Result<_>>()?;
        perturbations.push(assemble_perturbation(&own[&p.id], &distorted)?);
    }

    Ok(ExchangeOutcome {
        perturbations,
        undelivered: generated - delivered,
    })
}
