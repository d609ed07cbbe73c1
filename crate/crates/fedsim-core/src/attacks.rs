//! Model-poisoning attacks.
//!
//! Two threat models:
//!
//! * **Data poisoning** — [`label_flip_update`]: the attacker trains
//!   honestly (no client defense) on a shard whose labels were flipped to
//!   random wrong classes.
//! * **Update poisoning** — [`lie_update`], [`stat_opt_update`],
//!   [`dyn_opt_update`]: omniscient colluding attackers observe the
//!   round's benign updates and craft a malicious delta from their
//!   per-coordinate statistics. All colluders submit the identical vector.
//!
//! Statistics are computed over benign updates in ascending-client-id
//! order, so the crafted vector is independent of arrival order.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::ClientDataset;
use crate::defender::{local_train_epoch, DefenderConfig, TrainContext};
use crate::error::{Error, Result};
use crate::nn::{MlpParams, OptimizerState};
use crate::rng::Rng;

/// Which attack malicious clients mount.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    /// Malicious clients submit nothing abnormal beyond honest training on
    /// flipped labels.
    None,
    LabelFlip,
    /// "A little is enough": mean + z * std per coordinate.
    Lie,
    /// Static-bound directed deviation: mean - gamma * mean / ||mean||.
    StatOpt,
    /// Directed deviation with gamma tuned by bisection against a
    /// distance-feasibility check.
    DynOpt,
}

impl AttackKind {
    /// Attacks that need the round's benign updates before they can act.
    pub fn needs_benign_updates(&self) -> bool {
        matches!(self, AttackKind::Lie | AttackKind::StatOpt | AttackKind::DynOpt)
    }

    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::LabelFlip => "label_flip",
            AttackKind::Lie => "lie",
            AttackKind::StatOpt => "stat_opt",
            AttackKind::DynOpt => "dyn_opt",
        }
    }

    pub fn parse(name: &str) -> Option<AttackKind> {
        Some(match name {
            "none" => AttackKind::None,
            "label_flip" => AttackKind::LabelFlip,
            "lie" => AttackKind::Lie,
            "stat_opt" => AttackKind::StatOpt,
            "dyn_opt" => AttackKind::DynOpt,
            _ => return None,
        })
    }
}

/// Attack parameters; fields for kinds not selected are ignored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// z-score used by [`AttackKind::Lie`].
    pub lie_z: f64,
    /// Fixed deviation scale used by [`AttackKind::StatOpt`].
    pub stat_gamma: f64,
    /// Bisection start for [`AttackKind::DynOpt`].
    pub dyn_gamma_init: f64,
    /// Bisection resolution for [`AttackKind::DynOpt`].
    pub dyn_threshold: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: AttackKind::None,
            lie_z: 0.3,
            stat_gamma: 10.0,
            dyn_gamma_init: 10.0,
            dyn_threshold: 1e-5,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lie_z.is_finite()) {
            return Err(Error::config("lie_z must be finite"));
        }
        if !(self.stat_gamma > 0.0) {
            return Err(Error::config("stat_gamma must be positive"));
        }
        if !(self.dyn_gamma_init > 0.0) {
            return Err(Error::config("dyn_gamma_init must be positive"));
        }
        if !(self.dyn_threshold > 0.0) {
            return Err(Error::config("dyn_threshold must be positive"));
        }
        Ok(())
    }
}

/// One client's contribution for one round: a parameter delta against the
/// round's global model, weighted by shard size.
#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub client_id: u32,
    pub round: u32,
    pub weight: f64,
    pub delta: Vec<f64>,
}

/// Honest baseline training (defense off) on a label-flipped copy of the
/// shard. Flips are redrawn every round from `rng`.
pub fn label_flip_update(
    client: &ClientDataset,
    global: &MlpParams,
    ctx: &TrainContext,
    rng: &mut Rng,
) -> Result<Update> {
    let mut flipped = client.clone();
    flipped.data.labels =
        crate::data::flip_labels(&client.data.labels, client.data.num_classes, rng);
    let baseline = DefenderConfig {
        enabled: false,
        ..*ctx.defender
    };
    let ctx = TrainContext {
        defender: &baseline,
        ..*ctx
    };
    let mut opt = OptimizerState::zeros(global.shape);
    local_train_epoch(&flipped, global, &ctx, &mut opt, rng)
}

/// Validates a benign-update slice and returns references sorted by
/// client id (ties are impossible within a round; duplicates error).
fn sorted_benign(benign: &[Update]) -> Result<(usize, Vec<&Update>)> {
    if benign.is_empty() {
        return Err(Error::Empty("benign updates"));
    }
    let dim = benign[0].delta.len();
    let mut refs: Vec<&Update> = benign.iter().collect();
    for u in &refs {
        if u.delta.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "update delta",
                expected: dim,
                found: u.delta.len(),
            });
        }
    }
    refs.sort_by_key(|u| u.client_id);
    if refs.windows(2).any(|w| w[0].client_id == w[1].client_id) {
        return Err(Error::config("duplicate client id among benign updates"));
    }
    Ok((dim, refs))
}

/// Per-coordinate mean of the benign deltas (ascending client id order).
fn benign_mean(dim: usize, refs: &[&Update]) -> Vec<f64> {
    let n = refs.len() as f64;
    let mut mu = vec![0.0; dim];
    for u in refs {
        for (m, d) in mu.iter_mut().zip(&u.delta) {
            *m += d;
        }
    }
    for m in &mut mu {
        *m /= n;
    }
    mu
}

/// "A little is enough": per-coordinate `mean + z * std` over the benign
/// updates (population standard deviation). A single benign update has
/// zero spread, so the result degenerates to that update.
pub fn lie_update(benign: &[Update], z: f64) -> Result<Vec<f64>> {
    let (dim, refs) = sorted_benign(benign)?;
    let mu = benign_mean(dim, &refs);
    let n = refs.len() as f64;
    let mut out = mu.clone();
    for j in 0..dim {
        let var: f64 = refs.iter().map(|u| {
            let d = u.delta[j] - mu[j];
            d * d
        }).sum::<f64>() / n;
        out[j] += z * libm::sqrt(var);
    }
    Ok(out)
}

/// Static directed deviation: `mean - gamma * mean / ||mean||`, pushing the
/// aggregate opposite to the benign direction with a fixed budget. A
/// zero-norm mean has no direction to invert; the mean itself is returned.
pub fn stat_opt_update(benign: &[Update], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0) {
        return Err(Error::config("gamma must be positive"));
    }
    let (dim, refs) = sorted_benign(benign)?;
    let mu = benign_mean(dim, &refs);
    let norm = libm::sqrt(mu.iter().map(|v| v * v).sum());
    if norm == 0.0 {
        return Ok(mu);
    }
    Ok(mu.iter().map(|&m| m - gamma * m / norm).collect())
}

/// Distance feasibility for the dynamic attack: the crafted vector must
/// stay within the benign diameter (max pairwise distance) of every benign
/// update, so it cannot be singled out as an outlier.
fn dyn_feasible(refs: &[&Update], crafted: &[f64], diameter: f64) -> bool {
    refs.iter().all(|u| {
        let dist2: f64 = u
            .delta
            .iter()
            .zip(crafted)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        libm::sqrt(dist2) <= diameter
    })
}

/// Dynamic directed deviation: like [`stat_opt_update`] but `gamma` is the
/// largest feasible value found by bisection. Starting from `gamma_init`
/// with step `gamma_init / 2`, a feasible probe records itself and moves up
/// (capped at `gamma_init`), an infeasible probe moves down (floored at 0),
/// and the step halves each iteration until it falls below
/// `threshold / 4` — at which point the recorded value sits within
/// `threshold / 2` of the true boundary. Returns `(crafted, gamma)`;
/// `gamma = 0` (never feasible) returns the benign mean.
pub fn dyn_opt_update(
    benign: &[Update],
    gamma_init: f64,
    threshold: f64,
) -> Result<(Vec<f64>, f64)> {
    if !(gamma_init > 0.0) || !(threshold > 0.0) {
        return Err(Error::config("gamma_init and threshold must be positive"));
    }
    let (dim, refs) = sorted_benign(benign)?;
    let mu = benign_mean(dim, &refs);
    let norm = libm::sqrt(mu.iter().map(|v| v * v).sum());
    if norm == 0.0 {
        return Ok((mu, 0.0));
    }
    let dir: Vec<f64> = mu.iter().map(|&m| -m / norm).collect();

    let mut diameter: f64 = 0.0;
    for (i, a) in refs.iter().enumerate() {
        for b in &refs[i + 1..] {
            let d2: f64 = a
                .delta
                .iter()
                .zip(&b.delta)
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            diameter = diameter.max(libm::sqrt(d2));
        }
    }

    let craft = |gamma: f64| -> Vec<f64> {
        mu.iter().zip(&dir).map(|(m, d)| m + gamma * d).collect()
    };

    let mut gamma = gamma_init;
    let mut step = gamma_init / 2.0;
    let mut best = 0.0f64;
    while step >= threshold / 4.0 {
        if dyn_feasible(&refs, &craft(gamma), diameter) {
            best = best.max(gamma);
            gamma = (gamma + step).min(gamma_init);
        } else {
            gamma = (gamma - step).max(0.0);
        }
        step /= 2.0;
    }
    Ok((craft(best), best))
}

/// Crafts the vector all update-poisoning attackers submit this round, or
/// `None` for attacks that poison data rather than updates.
pub fn craft_poisoned_delta(cfg: &AttackConfig, benign: &[Update]) -> Result<Option<Vec<f64>>> {
    match cfg.kind {
        AttackKind::None | AttackKind::LabelFlip => Ok(None),
        AttackKind::Lie => lie_update(benign, cfg.lie_z).map(Some),
        AttackKind::StatOpt => stat_opt_update(benign, cfg.stat_gamma).map(Some),
        AttackKind::DynOpt => {
            dyn_opt_update(benign, cfg.dyn_gamma_init, cfg.dyn_threshold).map(|(d, _)| Some(d))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::nn::{ModelShape, SgdHyper};
    use std::vec::Vec;

    fn upd(id: u32, delta: &[f64]) -> Update {
        Update {
            client_id: id,
            round: 0,
            weight: 1.0,
            delta: delta.to_vec(),
        }
    }

    #[test]
    fn lie_matches_hand_value() {
        // {0, 2}: mean 1, population std 1, z = 0.3 -> exactly 1.3.
        let benign = vec![upd(0, &[0.0]), upd(1, &[2.0])];
        let out = lie_update(&benign, 0.3).unwrap();
        assert_eq!(out, vec![1.3]);
    }

    #[test]
    fn lie_single_update_is_the_mean() {
        let benign = vec![upd(4, &[5.0, -1.0])];
        assert_eq!(lie_update(&benign, 0.3).unwrap(), vec![5.0, -1.0]);
        assert!(lie_update(&[], 0.3).is_err());
    }

    #[test]
    fn lie_is_order_independent() {
        let a = vec![upd(0, &[0.1]), upd(1, &[0.7]), upd(2, &[0.4])];
        let b = vec![a[2].clone(), a[0].clone(), a[1].clone()];
        assert_eq!(lie_update(&a, 0.3).unwrap(), lie_update(&b, 0.3).unwrap());
    }

    #[test]
    fn stat_opt_matches_hand_value() {
        // mean [3, 4], norm 5, gamma 5 -> [3,4] - 5*[3,4]/5 = [0, 0].
        let benign = vec![upd(0, &[2.0, 3.0]), upd(1, &[4.0, 5.0])];
        let out = stat_opt_update(&benign, 5.0).unwrap();
        assert!(out[0].abs() < 1e-12 && out[1].abs() < 1e-12, "{out:?}");
    }

    #[test]
    fn stat_opt_zero_mean_returns_mean() {
        let benign = vec![upd(0, &[1.0]), upd(1, &[-1.0])];
        assert_eq!(stat_opt_update(&benign, 10.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn stat_opt_inverts_direction_for_large_gamma() {
        let benign = vec![upd(0, &[1.0, 0.0]), upd(1, &[3.0, 0.0])];
        let out = stat_opt_update(&benign, 10.0).unwrap();
        // mean [2,0], norm 2 -> [2,0] - 10*[1,0] = [-8, 0].
        assert!((out[0] + 8.0).abs() < 1e-12);
    }

    #[test]
    fn dyn_opt_finds_the_feasibility_boundary() {
        // Benign {0, 2}: mean 1, diameter 2, crafted = 1 - gamma.
        // Feasible iff |1 - gamma| <= 2 and |gamma + 1| <= 2, i.e.
        // gamma <= 1; the boundary sits exactly at 1.
        let benign = vec![upd(0, &[0.0]), upd(1, &[2.0])];
        let (crafted, gamma) = dyn_opt_update(&benign, 10.0, 1e-5).unwrap();
        assert!((gamma - 1.0).abs() < 1e-5, "gamma {gamma}");
        assert!((crafted[0] - (1.0 - gamma)).abs() < 1e-12);
        // Bracket: the found gamma is feasible, a little beyond is not.
        let refs: Vec<&Update> = benign.iter().collect();
        let at = |g: f64| vec![1.0 - g];
        assert!(dyn_feasible(&refs, &at(gamma), 2.0));
        assert!(!dyn_feasible(&refs, &at(gamma + 2e-5), 2.0));
    }

    #[test]
    fn dyn_opt_identical_benign_updates_give_zero_gamma() {
        // Diameter 0: any nonzero deviation is infeasible.
        let benign = vec![upd(0, &[1.0, 1.0]), upd(1, &[1.0, 1.0])];
        let (crafted, gamma) = dyn_opt_update(&benign, 10.0, 1e-5).unwrap();
        assert!(gamma >= 0.0 && gamma < 1e-5, "gamma {gamma}");
        assert!((crafted[0] - (1.0 - gamma / libm::sqrt(2.0))).abs() < 1e-9);
    }

    #[test]
    fn dyn_opt_caps_at_gamma_init() {
        // Huge diameter: everything up to gamma_init is feasible.
        let benign = vec![upd(0, &[0.0]), upd(1, &[100.0])];
        let (_, gamma) = dyn_opt_update(&benign, 2.0, 1e-5).unwrap();
        assert!((gamma - 2.0).abs() < 1e-5, "gamma {gamma}");
    }

    #[test]
    fn crafted_delta_dispatch() {
        let benign = vec![upd(0, &[0.0]), upd(1, &[2.0])];
        let mut cfg = AttackConfig::default();
        assert_eq!(craft_poisoned_delta(&cfg, &benign).unwrap(), None);
        cfg.kind = AttackKind::LabelFlip;
        assert_eq!(craft_poisoned_delta(&cfg, &benign).unwrap(), None);
        cfg.kind = AttackKind::Lie;
        assert_eq!(craft_poisoned_delta(&cfg, &benign).unwrap(), Some(vec![1.3]));
        cfg.kind = AttackKind::StatOpt;
        assert!(craft_poisoned_delta(&cfg, &benign).unwrap().is_some());
        cfg.kind = AttackKind::DynOpt;
        assert!(craft_poisoned_delta(&cfg, &benign).unwrap().is_some());
    }

    #[test]
    fn duplicate_client_ids_rejected() {
        let benign = vec![upd(3, &[0.0]), upd(3, &[2.0])];
        assert!(lie_update(&benign, 0.3).is_err());
    }

    #[test]
    fn label_flip_trains_deterministically_and_differs_from_honest() {
        let mut rng = Rng::from_seed(51);
        let shape = ModelShape {
            input_dim: 3,
            hidden1: 4,
            hidden2: 4,
            num_classes: 3,
        };
        let global = MlpParams::seeded_init(shape, &mut rng);
        let mut data = Dataset {
            num_classes: 3,
            input_dim: 3,
            inputs: Vec::new(),
            labels: Vec::new(),
        };
        for i in 0..12usize {
            let c = i % 3;
            for j in 0..3 {
                data.inputs.push(if j == c { 2.0 } else { 0.0 } + 0.05 * rng.normal());
            }
            data.labels.push(c);
        }
        let client = ClientDataset {
            client_id: 2,
            malicious: true,
            data,
        };
        let defender = DefenderConfig::default();
        let optim = SgdHyper::default();
        let ctx = TrainContext {
            defender: &defender,
            optim: &optim,
            batch_size: 12,
            local_epochs: 1,
            round: 5,
        };
        let a = label_flip_update(&client, &global, &ctx, &mut Rng::from_seed(60)).unwrap();
        let b = label_flip_update(&client, &global, &ctx, &mut Rng::from_seed(60)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.client_id, 2);
        assert_eq!(a.round, 5);
        assert_eq!(a.weight, 12.0);

        // Honest baseline training on the same shard with the same rng
        // stream position differs (the labels were flipped).
        let baseline = DefenderConfig {
            enabled: false,
            ..defender
        };
        let honest_ctx = TrainContext {
            defender: &baseline,
            ..ctx
        };
        let mut opt = OptimizerState::zeros(shape);
        // Consume the same flip draws so the shuffle stream aligns.
        let mut rng2 = Rng::from_seed(60);
        let _ = crate::data::flip_labels(&client.data.labels, 3, &mut rng2);
        let honest = local_train_epoch(&client, &global, &honest_ctx, &mut opt, &mut rng2).unwrap();
        assert_ne!(a.delta, honest.delta);
    }
}
