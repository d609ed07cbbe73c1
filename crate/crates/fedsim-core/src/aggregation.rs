//! Server-side aggregation rules.
//!
//! Every rule first canonicalizes its input — updates sorted by ascending
//! client id, ids distinct, all deltas the same length — so the result is
//! bit-identical under any permutation of the input slice. The robust
//! rules ignore the FedAvg sample weights by design: a weight is
//! attacker-controlled metadata.
//!
//! * [`fedavg`] — weighted mean (weights are shard sizes).
//! * [`fedavg_unweighted`] — plain mean; also the reference used for the
//!   clean-trajectory shadow model.
//! * [`coord_median`] — coordinate-wise median.
//! * [`trimmed_mean`] — coordinate-wise mean after dropping the `f`
//!   smallest and `f` largest values per coordinate.
//! * [`norm_bound`] — drop the `f` largest-norm updates, mean the rest.
//! * [`multi_krum`] — iteratively select `c` updates with the smallest
//!   sum of squared distances to their nearest neighbors, mean them.
//! * [`residual_base`] — per coordinate, fit a repeated-median line to the
//!   sorted values and downweight points by normalized residual; clients
//!   whose confidence collapses everywhere are excluded entirely.

use alloc::vec;
use alloc::vec::Vec;

use crate::attacks::Update;
use crate::error::{Error, Result};

/// Aggregation rule selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggKind {
    FedAvg,
    FedAvgUnweighted,
    CoordMedian,
    TrimmedMean,
    NormBound,
    MultiKrum,
    ResidualBase,
}

impl AggKind {
    pub fn name(&self) -> &'static str {
        match self {
            AggKind::FedAvg => "fedavg",
            AggKind::FedAvgUnweighted => "fedavg_unweighted",
            AggKind::CoordMedian => "coord_median",
            AggKind::TrimmedMean => "trimmed_mean",
            AggKind::NormBound => "norm_bound",
            AggKind::MultiKrum => "multi_krum",
            AggKind::ResidualBase => "residual_base",
        }
    }

    pub fn parse(name: &str) -> Option<AggKind> {
        Some(match name {
            "fedavg" => AggKind::FedAvg,
            "fedavg_unweighted" => AggKind::FedAvgUnweighted,
            "coord_median" => AggKind::CoordMedian,
            "trimmed_mean" => AggKind::TrimmedMean,
            "norm_bound" => AggKind::NormBound,
            "multi_krum" => AggKind::MultiKrum,
            "residual_base" => AggKind::ResidualBase,
            _ => return None,
        })
    }

    /// Whether the rule produces an explicit kept-client set (and hence a
    /// detection recall).
    pub fn selects_clients(&self) -> bool {
        matches!(
            self,
            AggKind::NormBound | AggKind::MultiKrum | AggKind::ResidualBase
        )
    }
}

/// Aggregation parameters; fields for rules not selected are ignored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggConfig {
    pub kind: AggKind,
    /// Assumed number of malicious updates per round (trim width, krum f,
    /// norm-bound drop count).
    pub f_expected: usize,
    /// Multi-krum selection size; `None` selects `n - f_expected`.
    pub multikrum_c: Option<usize>,
    /// Residual rule: confidence interval width in robust standard units.
    pub residual_ci: f64,
    /// Residual rule: confidences below this are zeroed.
    pub residual_clip: f64,
}

impl Default for AggConfig {
    fn default() -> Self {
        AggConfig {
            kind: AggKind::FedAvg,
            f_expected: 0,
            multikrum_c: None,
            residual_ci: 2.0,
            residual_clip: 0.05,
        }
    }
}

impl AggConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_ci > 0.0) {
            return Err(Error::config("residual_ci must be positive"));
        }
        if !(0.0..1.0).contains(&self.residual_clip) {
            return Err(Error::config("residual_clip must be in [0, 1)"));
        }
        if let Some(c) = self.multikrum_c {
            if c == 0 {
                return Err(Error::config("multikrum_c must be positive"));
            }
        }
        Ok(())
    }
}

/// Outcome of one aggregation call.
#[derive(Debug, Clone, PartialEq)]
pub struct AggResult {
    /// The aggregated delta to add to the global model.
    pub global_delta: Vec<f64>,
    /// Clients whose updates entered the aggregate (ascending id), or
    /// `None` for coordinate-wise rules that never exclude whole clients.
    pub kept_clients: Option<Vec<u32>>,
    /// Mean per-coordinate aggregation weight per client (ascending id);
    /// populated by the residual rule only.
    pub per_client_weight: Option<Vec<(u32, f64)>>,
}

/// Fraction of the sampled malicious clients the rule excluded, or `None`
/// when the rule has no kept set. No malicious client sampled counts as a
/// vacuous 1.0.
pub fn detection_recall(result: &AggResult, sampled_malicious: &[u32]) -> Option<f64> {
    let kept = result.kept_clients.as_ref()?;
    if sampled_malicious.is_empty() {
        return Some(1.0);
    }
    let excluded = sampled_malicious
        .iter()
        .filter(|id| !kept.contains(id))
        .count();
    Some(excluded as f64 / sampled_malicious.len() as f64)
}

/// Sorted, validated references: ascending client id, distinct ids,
/// uniform delta length.
fn canonical(updates: &[Update]) -> Result<(usize, Vec<&Update>)> {
    if updates.is_empty() {
        return Err(Error::Empty("updates"));
    }
    let dim = updates[0].delta.len();
    if dim == 0 {
        return Err(Error::Empty("update delta"));
    }
    let mut refs: Vec<&Update> = updates.iter().collect();
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
        return Err(Error::config("duplicate client id among updates"));
    }
    Ok((dim, refs))
}

/// Plain mean over the given refs, summed in the order given (callers pass
/// ascending client id order for a canonical result).
fn mean_of(dim: usize, refs: &[&Update]) -> Vec<f64> {
    let n = refs.len() as f64;
    let mut out = vec![0.0; dim];
    for u in refs {
        for (o, d) in out.iter_mut().zip(&u.delta) {
            *o += d;
        }
    }
    for o in &mut out {
        *o /= n;
    }
    out
}

fn ids_of(refs: &[&Update]) -> Vec<u32> {
    refs.iter().map(|u| u.client_id).collect()
}

/// Median of a scratch buffer (sorts it). Even counts average the middle
/// two values.
fn median_in_place(v: &mut [f64]) -> f64 {
    debug_assert!(!v.is_empty());
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Shard-size-weighted mean. Weights must be positive and finite.
pub fn fedavg(updates: &[Update]) -> Result<AggResult> {
    let (dim, refs) = canonical(updates)?;
    let mut total = 0.0;
    for u in &refs {
        if !(u.weight > 0.0) || !u.weight.is_finite() {
            return Err(Error::config("fedavg weights must be positive and finite"));
        }
        total += u.weight;
    }
    let mut out = vec![0.0; dim];
    for u in &refs {
        for (o, d) in out.iter_mut().zip(&u.delta) {
            *o += u.weight * d;
        }
    }
    for o in &mut out {
        *o /= total;
    }
    Ok(AggResult {
        global_delta: out,
        kept_clients: None,
        per_client_weight: None,
    })
}

/// Unweighted mean of all updates.
pub fn fedavg_unweighted(updates: &[Update]) -> Result<AggResult> {
    let (dim, refs) = canonical(updates)?;
    Ok(AggResult {
        global_delta: mean_of(dim, &refs),
        kept_clients: None,
        per_client_weight: None,
    })
}

/// Coordinate-wise median.
pub fn coord_median(updates: &[Update]) -> Result<AggResult> {
    let (dim, refs) = canonical(updates)?;
    let mut out = vec![0.0; dim];
    let mut scratch = vec![0.0; refs.len()];
    for j in 0..dim {
        for (s, u) in scratch.iter_mut().zip(&refs) {
            *s = u.delta[j];
        }
        out[j] = median_in_place(&mut scratch);
    }
    Ok(AggResult {
        global_delta: out,
        kept_clients: None,
        per_client_weight: None,
    })
}

/// Coordinate-wise trimmed mean: drop the `f` smallest and `f` largest
/// values per coordinate, mean the rest (summed in ascending value order).
pub fn trimmed_mean(updates: &[Update], f: usize) -> Result<AggResult> {
    let (dim, refs) = canonical(updates)?;
    let n = refs.len();
    if n <= 2 * f {
        return Err(Error::InsufficientUpdates {
            required: 2 * f + 1,
            available: n,
        });
    }
    let mut out = vec![0.0; dim];
    let mut scratch = vec![0.0; n];
    for j in 0..dim {
        for (s, u) in scratch.iter_mut().zip(&refs) {
            *s = u.delta[j];
        }
        scratch.sort_by(f64::total_cmp);
        let kept = &scratch[f..n - f];
        out[j] = kept.iter().sum::<f64>() / kept.len() as f64;
    }
    Ok(AggResult {
        global_delta: out,
        kept_clients: None,
        per_client_weight: None,
    })
}

/// Drop the `f` updates with the largest L2 norm (norm ties keep the lower
/// client id), mean the rest.
pub fn norm_bound(updates: &[Update], f: usize) -> Result<AggResult> {
    let (dim, refs) = canonical(updates)?;
    let n = refs.len();
    if n <= f {
        return Err(Error::InsufficientUpdates {
            required: f + 1,
            available: n,
        });
    }
    let mut ranked: Vec<(f64, usize)> = refs
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let norm2: f64 = u.delta.iter().map(|d| d * d).sum();
            (libm::sqrt(norm2), i)
        })
        .collect();
    // Ascending norm; refs are id-sorted so index order breaks norm ties
    // toward keeping the lower id.
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut kept_idx: Vec<usize> = ranked[..n - f].iter().map(|&(_, i)| i).collect();
    kept_idx.sort_unstable();
    let kept: Vec<&Update> = kept_idx.iter().map(|&i| refs[i]).collect();
    Ok(AggResult {
        global_delta: mean_of(dim, &kept),
        kept_clients: Some(ids_of(&kept)),
        per_client_weight: None,
    })
}

/// Multi-krum: `c` rounds of selecting the update with the smallest score
/// (sum of squared distances to its `m = pool - f - 2` nearest neighbors,
/// clamped to at least one; a singleton pool scores 0), removing it from
/// the pool and recomputing. Score ties select the lower client id. The
/// result is the mean of the selected updates.
pub fn multi_krum(updates: &[Update], f: usize, c: usize) -> Result<AggResult> {
    let (dim, refs) = canonical(updates)?;
    let n = refs.len();
    if c == 0 {
        return Err(Error::config("multi_krum selection size must be positive"));
    }
    if n < c {
        return Err(Error::InsufficientUpdates {
            required: c,
            available: n,
        });
    }
    let dist2 = |a: &Update, b: &Update| -> f64 {
        a.delta
            .iter()
            .zip(&b.delta)
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    };
    let mut pool = refs;
    let mut selected: Vec<&Update> = Vec::with_capacity(c);
    for _ in 0..c {
        let p = pool.len();
        let mut best_score = f64::INFINITY;
        let mut best_idx = 0;
        let mut dists = vec![0.0; p.saturating_sub(1)];
        for i in 0..p {
            let score = if p == 1 {
                0.0
            } else {
                let m = if p >= f + 3 { p - f - 2 } else { 1 };
                let mut w = 0;
                for (j, other) in pool.iter().enumerate() {
                    if j != i {
                        dists[w] = dist2(pool[i], other);
                        w += 1;
                    }
                }
                dists.sort_by(f64::total_cmp);
                dists[..m.min(dists.len())].iter().sum()
            };
            // Strict < keeps the first (lowest-id) scorer on exact ties.
            if score < best_score {
                best_score = score;
                best_idx = i;
            }
        }
        selected.push(pool.remove(best_idx));
    }
    selected.sort_by_key(|u| u.client_id);
    Ok(AggResult {
        global_delta: mean_of(dim, &selected),
        kept_clients: Some(ids_of(&selected)),
        per_client_weight: None,
    })
}

/// Residual-based reweighting. Per coordinate, the participant values are
/// sorted and assigned ranks `0/(n-1) .. 1`; a repeated-median line over
/// (rank, value) gives residuals, scaled by the normalized median absolute
/// residual (`1.4826 * median|r|`, floored at 1e-12). Each point gets
/// confidence `clamp(1 - |r| / (ci * s), 0, 1)`, zeroed below `clip`; the
/// coordinate is the confidence-weighted mean, falling back to the
/// coordinate median when every confidence is zero. A client's aggregation
/// weight is its mean confidence across coordinates; clients with weight 0
/// are reported as excluded. A single update is returned unchanged.
pub fn residual_base(updates: &[Update], ci: f64, clip: f64) -> Result<AggResult> {
    if !(ci > 0.0) {
        return Err(Error::config("residual_ci must be positive"));
    }
    if !(0.0..1.0).contains(&clip) {
        return Err(Error::config("residual_clip must be in [0, 1)"));
    }
    let (dim, refs) = canonical(updates)?;
    let n = refs.len();
    if n == 1 {
        return Ok(AggResult {
            global_delta: refs[0].delta.clone(),
            kept_clients: Some(ids_of(&refs)),
            per_client_weight: Some(vec![(refs[0].client_id, 1.0)]),
        });
    }

    let span = (n - 1) as f64;
    let mut conf_sum = vec![0.0; n]; // per client (ref index)
    let mut out = vec![0.0; dim];
    let mut pts: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut slopes_i: Vec<f64> = vec![0.0; n - 1];
    let mut slope_meds: Vec<f64> = vec![0.0; n];
    let mut scratch: Vec<f64> = vec![0.0; n];

    for j in 0..dim {
        pts.clear();
        for (i, u) in refs.iter().enumerate() {
            pts.push((u.delta[j], i));
        }
        // Value ties rank by client id (refs are id-sorted).
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        // Repeated-median line through (rank/(n-1), value).
        for (k, &(yk, _)) in pts.iter().enumerate() {
            let xk = k as f64 / span;
            let mut w = 0;
            for (l, &(yl, _)) in pts.iter().enumerate() {
                if l != k {
                    let xl = l as f64 / span;
                    slopes_i[w] = (yl - yk) / (xl - xk);
                    w += 1;
                }
            }
            slope_meds[k] = median_in_place(&mut slopes_i);
        }
        scratch.copy_from_slice(&slope_meds);
        let slope = median_in_place(&mut scratch);
        for (k, &(yk, _)) in pts.iter().enumerate() {
            scratch[k] = yk - slope * (k as f64 / span);
        }
        let intercept = median_in_place(&mut scratch);

        // Normalized residuals -> clipped confidences.
        let mut wsum = 0.0;
        let mut vsum = 0.0;
        for (k, &(yk, _)) in pts.iter().enumerate() {
            scratch[k] = libm::fabs(yk - (slope * (k as f64 / span) + intercept));
        }
        let resid: Vec<f64> = scratch.clone();
        let s = (1.4826 * median_in_place(&mut scratch)).max(1e-12);
        for (k, &(yk, i)) in pts.iter().enumerate() {
            let mut conf = (1.0 - resid[k] / (ci * s)).clamp(0.0, 1.0);
            if conf < clip {
                conf = 0.0;
            }
            conf_sum[i] += conf;
            wsum += conf;
            vsum += conf * yk;
        }
        out[j] = if wsum > 0.0 {
            vsum / wsum
        } else {
            for (k, &(yk, _)) in pts.iter().enumerate() {
                scratch[k] = yk;
            }
            median_in_place(&mut scratch)
        };
    }

    let weights: Vec<(u32, f64)> = refs
        .iter()
        .zip(&conf_sum)
        .map(|(u, &c)| (u.client_id, c / dim as f64))
        .collect();
    let kept: Vec<u32> = weights
        .iter()
        .filter(|&&(_, w)| w > 0.0)
        .map(|&(id, _)| id)
        .collect();
    Ok(AggResult {
        global_delta: out,
        kept_clients: Some(kept),
        per_client_weight: Some(weights),
    })
}

/// Dispatch on the configured rule. `multikrum_c = None` selects
/// `n - f_expected` updates.
pub fn aggregate(cfg: &AggConfig, updates: &[Update]) -> Result<AggResult> {
    cfg.validate()?;
    match cfg.kind {
        AggKind::FedAvg => fedavg(updates),
        AggKind::FedAvgUnweighted => fedavg_unweighted(updates),
        AggKind::CoordMedian => coord_median(updates),
        AggKind::TrimmedMean => trimmed_mean(updates, cfg.f_expected),
        AggKind::NormBound => norm_bound(updates, cfg.f_expected),
        AggKind::MultiKrum => {
            let n = updates.len();
            let c = match cfg.multikrum_c {
                Some(c) => c,
                None => n.checked_sub(cfg.f_expected).filter(|&c| c > 0).ok_or(
                    Error::InsufficientUpdates {
                        required: cfg.f_expected + 1,
                        available: n,
                    },
                )?,
            };
            multi_krum(updates, cfg.f_expected, c)
        }
        AggKind::ResidualBase => residual_base(updates, cfg.residual_ci, cfg.residual_clip),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn upd(id: u32, delta: &[f64]) -> Update {
        Update {
            client_id: id,
            round: 0,
            weight: 1.0,
            delta: delta.to_vec(),
        }
    }

    fn wupd(id: u32, weight: f64, delta: &[f64]) -> Update {
        Update {
            client_id: id,
            round: 0,
            weight,
            delta: delta.to_vec(),
        }
    }

    #[test]
    fn fedavg_weights_by_shard_size() {
        // weights {1, 3} on {[0], [4]} -> (1*0 + 3*4) / 4 = [3].
        let ups = vec![wupd(0, 1.0, &[0.0]), wupd(1, 3.0, &[4.0])];
        let r = fedavg(&ups).unwrap();
        assert_eq!(r.global_delta, vec![3.0]);
        assert!(r.kept_clients.is_none());
    }

    #[test]
    fn fedavg_rejects_bad_weights() {
        assert!(fedavg(&[wupd(0, 0.0, &[1.0])]).is_err());
        assert!(fedavg(&[wupd(0, -1.0, &[1.0])]).is_err());
        assert!(fedavg(&[wupd(0, f64::INFINITY, &[1.0])]).is_err());
    }

    #[test]
    fn fedavg_weight_scaling_invariance() {
        let a = vec![wupd(0, 1.0, &[0.5, -2.0]), wupd(1, 3.0, &[4.0, 1.0])];
        let b = vec![wupd(0, 2.0, &[0.5, -2.0]), wupd(1, 6.0, &[4.0, 1.0])];
        assert_eq!(fedavg(&a).unwrap(), fedavg(&b).unwrap());
    }

    #[test]
    fn median_odd_and_even() {
        let odd = vec![upd(0, &[1.0]), upd(1, &[100.0]), upd(2, &[5.0])];
        assert_eq!(coord_median(&odd).unwrap().global_delta, vec![5.0]);
        let even = vec![upd(0, &[1.0]), upd(1, &[5.0])];
        assert_eq!(coord_median(&even).unwrap().global_delta, vec![3.0]);
    }

    #[test]
    fn median_ignores_one_outlier_per_coordinate() {
        let ups = vec![
            upd(0, &[0.0, 9999.0]),
            upd(1, &[10.0, 1.0]),
            upd(2, &[1000.0, 2.0]),
        ];
        assert_eq!(coord_median(&ups).unwrap().global_delta, vec![10.0, 2.0]);
    }

    #[test]
    fn trimmed_mean_drops_extremes() {
        // {0, 10, 20, 1000} with f = 1 -> mean(10, 20) = 15.
        let ups = vec![
            upd(0, &[0.0]),
            upd(1, &[10.0]),
            upd(2, &[20.0]),
            upd(3, &[1000.0]),
        ];
        assert_eq!(trimmed_mean(&ups, 1).unwrap().global_delta, vec![15.0]);
        // f = 0 is the plain mean.
        assert_eq!(
            trimmed_mean(&ups, 0).unwrap().global_delta,
            fedavg_unweighted(&ups).unwrap().global_delta
        );
        // 2f >= n is rejected.
        assert!(matches!(
            trimmed_mean(&ups, 2),
            Err(Error::InsufficientUpdates { .. })
        ));
    }

    #[test]
    fn norm_bound_drops_largest_norms() {
        let ups = vec![upd(0, &[1.0]), upd(1, &[2.0]), upd(2, &[100.0])];
        let r = norm_bound(&ups, 1).unwrap();
        assert_eq!(r.global_delta, vec![1.5]);
        assert_eq!(r.kept_clients, Some(vec![0, 1]));
    }

    #[test]
    fn norm_bound_ties_keep_lower_id() {
        // Equal norms: dropping one drops the highest id.
        let ups = vec![upd(0, &[2.0]), upd(1, &[-2.0]), upd(2, &[2.0])];
        let r = norm_bound(&ups, 1).unwrap();
        assert_eq!(r.kept_clients, Some(vec![0, 1]));
    }

    #[test]
    fn multi_krum_excludes_far_outlier() {
        let ups = vec![
            upd(0, &[0.0]),
            upd(1, &[0.1]),
            upd(2, &[0.2]),
            upd(3, &[100.0]),
        ];
        // c = 3, f = 1: the three clustered updates are selected.
        let r = multi_krum(&ups, 1, 3).unwrap();
        assert_eq!(r.kept_clients, Some(vec![0, 1, 2]));
        let got = r.global_delta[0];
        assert!((got - 0.1).abs() < 1e-15, "{got}");
    }

    #[test]
    fn multi_krum_single_selection_breaks_score_ties_low() {
        // With f = 1 and n = 4 the score is each update's single nearest
        // squared distance; clients 0, 1, 2 all score exactly 0.1^2, so the
        // tie resolves to the lowest id.
        let ups = vec![
            upd(0, &[0.0]),
            upd(1, &[0.1]),
            upd(2, &[0.2]),
            upd(3, &[100.0]),
        ];
        let r = multi_krum(&ups, 1, 1).unwrap();
        assert_eq!(r.kept_clients, Some(vec![0]));
        assert_eq!(r.global_delta, vec![0.0]);
    }

    #[test]
    fn multi_krum_small_pools_degenerate_gracefully() {
        let one = vec![upd(5, &[7.0])];
        let r = multi_krum(&one, 0, 1).unwrap();
        assert_eq!(r.global_delta, vec![7.0]);
        assert_eq!(r.kept_clients, Some(vec![5]));
        assert!(matches!(
            multi_krum(&one, 0, 2),
            Err(Error::InsufficientUpdates { .. })
        ));
        assert!(multi_krum(&one, 0, 0).is_err());
    }

    #[test]
    fn residual_downweights_hand_picked_outlier() {
        // Values {1, 2, 3, 4, 1000}: the inliers sit exactly on a line, so
        // the outlier's confidence is zero and the aggregate is 2.5.
        let ups = vec![
            upd(0, &[1.0]),
            upd(1, &[2.0]),
            upd(2, &[3.0]),
            upd(3, &[4.0]),
            upd(4, &[1000.0]),
        ];
        let r = residual_base(&ups, 2.0, 0.05).unwrap();
        assert!((r.global_delta[0] - 2.5).abs() < 1e-12, "{:?}", r.global_delta);
        assert_eq!(r.kept_clients, Some(vec![0, 1, 2, 3]));
        let w = r.per_client_weight.unwrap();
        assert_eq!(w[4], (4, 0.0));
        for &(id, wi) in &w[..4] {
            assert!((wi - 1.0).abs() < 1e-12, "client {id} weight {wi}");
        }
    }

    #[test]
    fn residual_collinear_values_keep_everyone() {
        let ups = vec![upd(0, &[1.0]), upd(1, &[2.0]), upd(2, &[3.0])];
        let r = residual_base(&ups, 2.0, 0.05).unwrap();
        assert!((r.global_delta[0] - 2.0).abs() < 1e-12);
        assert_eq!(r.kept_clients, Some(vec![0, 1, 2]));
    }

    #[test]
    fn residual_identical_values_pass_through() {
        let ups = vec![upd(0, &[3.0, -1.0]), upd(1, &[3.0, -1.0]), upd(2, &[3.0, -1.0])];
        let r = residual_base(&ups, 2.0, 0.05).unwrap();
        assert_eq!(r.global_delta, vec![3.0, -1.0]);
    }

    #[test]
    fn single_update_passes_through_every_rule() {
        let one = vec![wupd(9, 4.0, &[1.5, -0.5])];
        let expect = vec![1.5, -0.5];
        assert_eq!(fedavg(&one).unwrap().global_delta, expect);
        assert_eq!(fedavg_unweighted(&one).unwrap().global_delta, expect);
        assert_eq!(coord_median(&one).unwrap().global_delta, expect);
        assert_eq!(trimmed_mean(&one, 0).unwrap().global_delta, expect);
        assert_eq!(norm_bound(&one, 0).unwrap().global_delta, expect);
        assert_eq!(multi_krum(&one, 0, 1).unwrap().global_delta, expect);
        assert_eq!(residual_base(&one, 2.0, 0.05).unwrap().global_delta, expect);
    }

    #[test]
    fn empty_updates_rejected_everywhere() {
        assert!(matches!(fedavg(&[]), Err(Error::Empty(_))));
        assert!(matches!(coord_median(&[]), Err(Error::Empty(_))));
        assert!(matches!(residual_base(&[], 2.0, 0.05), Err(Error::Empty(_))));
    }

    #[test]
    fn permutation_gives_bit_identical_results() {
        let a = vec![
            upd(0, &[0.1, -3.0]),
            upd(1, &[0.7, 2.0]),
            upd(2, &[-0.4, 0.3]),
            upd(3, &[5.0, -1.0]),
        ];
        let b = vec![a[2].clone(), a[3].clone(), a[0].clone(), a[1].clone()];
        for kind in [
            AggKind::FedAvg,
            AggKind::FedAvgUnweighted,
            AggKind::CoordMedian,
            AggKind::TrimmedMean,
            AggKind::NormBound,
            AggKind::MultiKrum,
            AggKind::ResidualBase,
        ] {
            let cfg = AggConfig {
                kind,
                f_expected: 1,
                ..AggConfig::default()
            };
            let ra = aggregate(&cfg, &a).unwrap();
            let rb = aggregate(&cfg, &b).unwrap();
            assert_eq!(ra, rb, "{kind:?} not permutation invariant");
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let ups = vec![upd(1, &[0.0]), upd(1, &[1.0])];
        assert!(fedavg_unweighted(&ups).is_err());
    }

    #[test]
    fn recall_accounts_for_exclusions() {
        let r = AggResult {
            global_delta: vec![0.0],
            kept_clients: Some(vec![0, 2, 5]),
            per_client_weight: None,
        };
        assert_eq!(detection_recall(&r, &[3, 5]), Some(0.5));
        assert_eq!(detection_recall(&r, &[]), Some(1.0));
        assert_eq!(detection_recall(&r, &[1, 3]), Some(1.0));
        let none = AggResult {
            global_delta: vec![0.0],
            kept_clients: None,
            per_client_weight: None,
        };
        assert_eq!(detection_recall(&none, &[3]), None);
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in [
            AggKind::FedAvg,
            AggKind::FedAvgUnweighted,
            AggKind::CoordMedian,
            AggKind::TrimmedMean,
            AggKind::NormBound,
            AggKind::MultiKrum,
            AggKind::ResidualBase,
        ] {
            assert_eq!(AggKind::parse(kind.name()), Some(kind));
        }
        assert_eq!(AggKind::parse("nope"), None);
    }
}
