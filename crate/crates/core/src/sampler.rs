//! View selection policies: single view, random pair, balanced near/far pair
//! and active loss-disparity pairing.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grouping::RegimePartition;
use crate::scene::CameraSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Single,
    RandomPair,
    Balanced,
    Active,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Single => "single",
            SamplerKind::RandomPair => "r2view",
            SamplerKind::Balanced => "balanced",
            SamplerKind::Active => "active",
        }
    }

    pub fn from_name(name: &str) -> Option<SamplerKind> {
        match name {
            "single" => Some(SamplerKind::Single),
            "r2view" => Some(SamplerKind::RandomPair),
            "balanced" => Some(SamplerKind::Balanced),
            "active" => Some(SamplerKind::Active),
            _ => None,
        }
    }

    pub fn needs_partition(self) -> bool {
        matches!(self, SamplerKind::Balanced | SamplerKind::Active)
    }

    pub fn is_paired(self) -> bool {
        self != SamplerKind::Single
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub ema_beta: f64,
    pub topk: usize,
    pub temperature: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            kind: SamplerKind::Balanced,
            ema_beta: 0.9,
            topk: 5,
            temperature: 1.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ema_beta > 0.0 && self.ema_beta < 1.0) {
            return Err(Error::config(format!(
                "ema_beta must be in (0, 1), got {}",
                self.ema_beta
            )));
        }
        if self.topk == 0 {
            return Err(Error::config("topk must be >= 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("temperature must be positive"));
        }
        Ok(())
    }
}

/// One draw: a single view, or an ordered pair.
///
/// Structured draws always put the near camera first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewDraw {
    pub first: u32,
    pub second: Option<u32>,
}

/// Seeded sampler state. The ChaCha stream makes every draw a function of
/// the seed and the call index.
#[derive(Debug, Clone)]
pub struct SamplerState {
    rng: ChaCha8Rng,
    pub loss_ema: BTreeMap<u32, f64>,
    pub ema_beta: f64,
    pub topk: usize,
    pub temperature: f64,
    anchor_near: bool,
}

impl SamplerState {
    pub fn new(seed: u64, cfg: &SamplerConfig) -> Self {
        SamplerState {
            rng: ChaCha8Rng::seed_from_u64(seed),
            loss_ema: BTreeMap::new(),
            ema_beta: cfg.ema_beta,
            topk: cfg.topk,
            temperature: cfg.temperature,
            anchor_near: true,
        }
    }

    pub fn draw_single(&mut self, cams: &[CameraSpec]) -> Result<ViewDraw> {
        let first = self.pick(cams.iter().map(|c| c.id).collect::<Vec<_>>().as_slice())?;
        Ok(ViewDraw { first, second: None })
    }

    /// Two iid uniform draws, with replacement.
    pub fn draw_random_pair(&mut self, cams: &[CameraSpec]) -> Result<ViewDraw> {
        let ids: Vec<u32> = cams.iter().map(|c| c.id).collect();
        let first = self.pick(&ids)?;
        let second = self.pick(&ids)?;
        Ok(ViewDraw {
            first,
            second: Some(second),
        })
    }

    pub fn draw_balanced_pair(&mut self, partition: &RegimePartition) -> Result<ViewDraw> {
        check_groups(partition)?;
        let near = self.pick(&partition.near_ids)?;
        let far = self.pick(&partition.far_ids)?;
        Ok(ViewDraw {
            first: near,
            second: Some(far),
        })
    }

    /// Exponential moving average of per-view loss; the first observation
    /// initializes it.
    pub fn update_loss_ema(&mut self, view_id: u32, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::invalid(format!("loss for view {view_id} is not finite")));
        }
        let beta = self.ema_beta;
        self.loss_ema
            .entry(view_id)
            .and_modify(|e| *e = beta * *e + (1.0 - beta) * loss)
            .or_insert(loss);
        Ok(())
    }

    /// Anchor drawn uniformly from one group (alternating per call); partner
    /// drawn from the other group by a softmax over the top-k loss-EMA
    /// disparities to the anchor.
    pub fn draw_active_pair(&mut self, partition: &RegimePartition) -> Result<ViewDraw> {
        check_groups(partition)?;
        let initialized = |ids: &[u32]| ids.iter().any(|id| self.loss_ema.contains_key(id));
        if !initialized(&partition.near_ids) || !initialized(&partition.far_ids) {
            return self.draw_balanced_pair(partition);
        }
        let anchor_near = self.anchor_near;
        self.anchor_near = !self.anchor_near;
        let (anchors, partners) = if anchor_near {
            (&partition.near_ids, &partition.far_ids)
        } else {
            (&partition.far_ids, &partition.near_ids)
        };
        let anchor = self.pick(anchors)?;
        let anchor_ema = self.loss_ema.get(&anchor).copied();

        let mut scored: Vec<(u32, f64)> = partners
            .iter()
            .map(|&id| {
                let d = match (anchor_ema, self.loss_ema.get(&id)) {
                    (Some(a), Some(b)) => (a - b).abs(),
                    _ => 0.0,
                };
                (id, d)
            })
            .collect();
        // Stable: equal disparities keep id order.
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored.truncate(self.topk.min(scored.len()));

        let max = scored[0].1 / self.temperature;
        let weights: Vec<f64> = scored.iter().map(|(_, d)| (d / self.temperature - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let u: f64 = self.rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut partner = scored[scored.len() - 1].0;
        for ((id, _), w) in scored.iter().zip(&weights) {
            acc += w;
            if u < acc {
                partner = *id;
                break;
            }
        }
        let (near, far) = if anchor_near {
            (anchor, partner)
        } else {
            (partner, anchor)
        };
        Ok(ViewDraw {
            first: near,
            second: Some(far),
        })
    }

    /// Dispatches on the configured kind.
    pub fn draw(
        &mut self,
        kind: SamplerKind,
        cams: &[CameraSpec],
        partition: Option<&RegimePartition>,
    ) -> Result<ViewDraw> {
        let need = || Error::config(format!("sampler '{}' needs a partition", kind.name()));
        match kind {
            SamplerKind::Single => self.draw_single(cams),
            SamplerKind::RandomPair => self.draw_random_pair(cams),
            SamplerKind::Balanced => self.draw_balanced_pair(partition.ok_or_else(need)?),
            SamplerKind::Active => self.draw_active_pair(partition.ok_or_else(need)?),
        }
    }

    fn pick(&mut self, ids: &[u32]) -> Result<u32> {
        if ids.is_empty() {
            return Err(Error::invalid("cannot draw from an empty camera list"));
        }
        Ok(ids[self.rng.random_range(0..ids.len())])
    }
}

fn check_groups(partition: &RegimePartition) -> Result<()> {
    if partition.near_ids.is_empty() || partition.far_ids.is_empty() {
        return Err(Error::degenerate("both near and far groups must be nonempty"));
    }
    Ok(())
}
