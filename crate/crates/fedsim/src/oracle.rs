//! Oracle suites: the library's numerics checked against references that
//! are built differently on purpose — central differences instead of
//! backpropagation, repeated minimum extraction instead of sorting, and
//! hand-solved closed forms. Each property reports pass/fail.

use fedsim_core::aggregation::{coord_median, multi_krum, residual_base, trimmed_mean};
use fedsim_core::attacks::{dyn_opt_update, lie_update, stat_opt_update, Update};
use fedsim_core::nn::{backward, finite_diff_grad, CeTerm, LossSpec, MlpParams, ModelShape};
use fedsim_core::rng::Rng;

/// One checked property: its name and `Ok` or a failure description.
pub type Property = (String, Result<(), String>);

/// Runs a named suite; `None` means the suite does not exist.
pub fn run_suite(name: &str) -> Option<Vec<Property>> {
    match name {
        "gradcheck" => Some(gradcheck_suite()),
        "aggregators" => Some(aggregator_suite()),
        "attacks" => Some(attack_suite()),
        _ => None,
    }
}

pub const SUITES: &[&str] = &["gradcheck", "aggregators", "attacks"];

fn check(name: impl Into<String>, result: Result<(), String>) -> Property {
    (name.into(), result)
}

// ---------------------------------------------------------------- gradcheck

fn random_simplex_rows(batch: usize, classes: usize, rng: &mut Rng) -> Vec<f64> {
    let mut rows = vec![0.0; batch * classes];
    for row in rows.chunks_mut(classes) {
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = rng.uniform_in(0.05, 1.0);
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    rows
}

/// Analytic gradients vs central differences on 20 random instances
/// (all dims <= 8, every loss-term combination), relative error <= 1e-4
/// per coordinate; coordinates tiny on both sides are compared absolutely.
fn gradcheck_suite() -> Vec<Property> {
    let mut rng = Rng::from_seed(0xC0FFEE);
    let mut worst = 0.0f64;
    let mut worst_case = String::new();
    let mut coords = 0usize;
    for inst in 0..20 {
        let shape = ModelShape {
            input_dim: 2 + rng.below(7) as usize,
            hidden1: 2 + rng.below(7) as usize,
            hidden2: 2 + rng.below(7) as usize,
            num_classes: 2 + rng.below(7) as usize,
        };
        let batch = 1 + rng.below(4) as usize;
        let flat: Vec<f64> = (0..shape.param_count())
            .map(|_| rng.uniform_in(-1.0, 1.0))
            .collect();
        let params = MlpParams::from_flat(shape, &flat).expect("sized to shape");
        let inputs: Vec<f64> = (0..batch * shape.input_dim)
            .map(|_| rng.uniform_in(-1.0, 1.0))
            .collect();
        let main_t = random_simplex_rows(batch, shape.num_classes, &mut rng);
        let aux_t = random_simplex_rows(batch, shape.num_classes, &mut rng);
        let combo = inst % 4;
        let spec = LossSpec {
            main_ce: (combo != 1).then_some(CeTerm {
                targets: &main_t,
                weight: rng.uniform_in(0.25, 2.0),
            }),
            aux_ce: (combo == 1 || combo == 3).then_some(CeTerm {
                targets: &aux_t,
                weight: rng.uniform_in(0.25, 2.0),
            }),
            self_kl_weight: if combo >= 2 { rng.uniform_in(0.25, 2.0) } else { 0.0 },
            tau: [1.0, 2.0, 4.0][rng.below(3) as usize],
        };
        let analytic = match backward(&params, &inputs, &spec) {
            Ok(g) => g.flatten(),
            Err(e) => {
                return vec![check("gradcheck", Err(format!("backward failed: {e}")))];
            }
        };
        let numeric = match finite_diff_grad(&params, &inputs, &spec, 1e-5) {
            Ok(g) => g.flatten(),
            Err(e) => {
                return vec![check("gradcheck", Err(format!("oracle failed: {e}")))];
            }
        };
        for (k, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            coords += 1;
            let err = if a.abs() < 1e-8 && n.abs() < 1e-8 {
                (a - n).abs() // near-zero: absolute
            } else {
                (a - n).abs() / a.abs().max(n.abs())
            };
            if err > worst {
                worst = err;
                worst_case = format!("instance {inst} coordinate {k}: {a} vs {n}");
            }
        }
    }
    let verdict = if worst <= 1e-4 {
        Ok(())
    } else {
        Err(format!("worst relative error {worst:.3e} at {worst_case}"))
    };
    vec![check(
        format!("gradcheck: 20 instances, {coords} coordinates, worst error {worst:.2e}"),
        verdict,
    )]
}

// -------------------------------------------------------------- aggregators

fn upd(client_id: u32, delta: &[f64]) -> Update {
    Update {
        client_id,
        round: 0,
        weight: 1.0,
        delta: delta.to_vec(),
    }
}

/// k-th smallest by repeated minimum extraction — no sort call involved.
fn nth_smallest(values: &[f64], k: usize) -> f64 {
    let mut pool = values.to_vec();
    for _ in 0..k {
        let (mi, _) = pool
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| {
                if v < acc.1 {
                    (i, v)
                } else {
                    acc
                }
            });
        pool.swap_remove(mi);
    }
    pool.iter().copied().fold(f64::INFINITY, f64::min)
}

fn ref_coord_median(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let dim = rows[0].len();
    (0..dim)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            if n % 2 == 1 {
                nth_smallest(&col, n / 2)
            } else {
                (nth_smallest(&col, n / 2 - 1) + nth_smallest(&col, n / 2)) / 2.0
            }
        })
        .collect()
}

fn ref_trimmed_mean(rows: &[Vec<f64>], f: usize) -> Vec<f64> {
    let n = rows.len();
    let dim = rows[0].len();
    (0..dim)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let mut sum = 0.0;
            for k in f..n - f {
                sum += nth_smallest(&col, k);
            }
            sum / (n - 2 * f) as f64
        })
        .collect()
}

/// The selection contract restated from scratch: score = sum of the
/// `m = pool - f - 2` (clamped to >= 1) smallest squared distances to the
/// rest of the pool, singleton pools score 0, exact ties pick the lowest
/// client id, and the winner leaves the pool; after `c` picks the result
/// is the mean of the winners in ascending-id order.
fn ref_multi_krum(rows: &[(u32, Vec<f64>)], f: usize, c: usize) -> (Vec<f64>, Vec<u32>) {
    let mut pool: Vec<(u32, &Vec<f64>)> = rows.iter().map(|(id, d)| (*id, d)).collect();
    // Ascending client id, as the canonical order requires.
    pool.sort_by_key(|(id, _)| *id);
    let dim = rows[0].1.len();
    let mut selected: Vec<(u32, &Vec<f64>)> = Vec::new();
    for _ in 0..c {
        let p = pool.len();
        let mut best: Option<(f64, usize)> = None;
        for i in 0..p {
            let score = if p == 1 {
                0.0
            } else {
                let m = if p >= f + 3 { p - f - 2 } else { 1 };
                let mut d2: Vec<f64> = pool
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, (_, other))| {
                        pool[i]
                            .1
                            .iter()
                            .zip(other.iter())
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum()
                    })
                    .collect();
                // Ascending-order summation via minimum extraction.
                let mut score = 0.0;
                for _ in 0..m.min(d2.len()) {
                    let (mi, mv) =
                        d2.iter().enumerate().fold((0, f64::INFINITY), |acc, (k, &v)| {
                            if v < acc.1 {
                                (k, v)
                            } else {
                                acc
                            }
                        });
                    score += mv;
                    d2.swap_remove(mi);
                }
                score
            };
            if best.map_or(true, |(bs, _)| score < bs) {
                best = Some((score, i));
            }
        }
        let (_, idx) = best.expect("non-empty pool");
        selected.push(pool.remove(idx));
    }
    selected.sort_by_key(|(id, _)| *id);
    let mut mean = vec![0.0; dim];
    for (_, d) in &selected {
        for (o, v) in mean.iter_mut().zip(d.iter()) {
            *o += v;
        }
    }
    for o in &mut mean {
        *o /= c as f64;
    }
    (mean, selected.iter().map(|(id, _)| *id).collect())
}

fn aggregator_suite() -> Vec<Property> {
    let mut rng = Rng::from_seed(0xA66A);
    let mut props = Vec::new();
    let mut median_fail = None;
    let mut trimmed_fail = None;
    let mut krum_fail = None;
    for case in 0..100 {
        let n = 2 + rng.below(7) as usize; // 2..=8
        let dim = 1 + rng.below(5) as usize; // 1..=5
        let mut ids: Vec<u32> = (0..n as u32).collect();
        rng.shuffle(&mut ids);
        let rows: Vec<(u32, Vec<f64>)> = ids
            .iter()
            .map(|&id| {
                (
                    id,
                    (0..dim).map(|_| rng.uniform_in(-5.0, 5.0)).collect(),
                )
            })
            .collect();
        let updates: Vec<Update> = rows.iter().map(|(id, d)| upd(*id, d)).collect();
        // The references consume id-sorted rows (the canonical order).
        let mut sorted = rows.clone();
        sorted.sort_by_key(|(id, _)| *id);
        let cols: Vec<Vec<f64>> = sorted.iter().map(|(_, d)| d.clone()).collect();

        let got = coord_median(&updates).expect("valid instance").global_delta;
        let want = ref_coord_median(&cols);
        if got != want && median_fail.is_none() {
            median_fail = Some(format!("case {case}: {got:?} != {want:?}"));
        }

        let f_trim = rng.below(((n - 1) / 2 + 1) as u64) as usize;
        let got = trimmed_mean(&updates, f_trim)
            .expect("valid instance")
            .global_delta;
        let want = ref_trimmed_mean(&cols, f_trim);
        if got != want && trimmed_fail.is_none() {
            trimmed_fail = Some(format!("case {case} (f={f_trim}): {got:?} != {want:?}"));
        }

        let f_krum = rng.below(n as u64) as usize;
        let c = 1 + rng.below(n as u64) as usize;
        let got = multi_krum(&updates, f_krum, c).expect("valid instance");
        let (want_mean, want_ids) = ref_multi_krum(&rows, f_krum, c);
        if (got.global_delta != want_mean || got.kept_clients != Some(want_ids.clone()))
            && krum_fail.is_none()
        {
            krum_fail = Some(format!(
                "case {case} (f={f_krum}, c={c}): {:?}/{:?} != {want_mean:?}/{want_ids:?}",
                got.global_delta, got.kept_clients
            ));
        }
    }
    props.push(check(
        "coord_median == minimum-extraction reference on 100 random instances (exact)",
        median_fail.map_or(Ok(()), Err),
    ));
    props.push(check(
        "trimmed_mean == minimum-extraction reference on 100 random instances (exact)",
        trimmed_fail.map_or(Ok(()), Err),
    ));
    props.push(check(
        "multi_krum == from-scratch selection reference on 100 random instances (exact)",
        krum_fail.map_or(Ok(()), Err),
    ));

    // Hand-solved residual case: values {1,2,3,4,1000} sit on the line
    // value = 1 + 4*rank except the outlier, whose residual (995) kills
    // its confidence; the aggregate is the inlier mean 2.5 and the
    // outlier's weight is exactly 0.
    let ups: Vec<Update> = [1.0, 2.0, 3.0, 4.0, 1000.0]
        .iter()
        .enumerate()
        .map(|(i, &v)| upd(i as u32, &[v]))
        .collect();
    let result = residual_base(&ups, 2.0, 0.05).expect("valid instance");
    let mut residual_ok = Ok(());
    if (result.global_delta[0] - 2.5).abs() > 1e-12 {
        residual_ok = Err(format!("aggregate {:?} != [2.5]", result.global_delta));
    } else if result.kept_clients != Some(vec![0, 1, 2, 3]) {
        residual_ok = Err(format!("kept {:?} != [0,1,2,3]", result.kept_clients));
    } else {
        let w = result.per_client_weight.as_ref().expect("reports weights");
        if w[4] != (4, 0.0) || w[..4].iter().any(|&(_, wi)| (wi - 1.0).abs() > 1e-12) {
            residual_ok = Err(format!("weights {w:?} != [1,1,1,1,0]"));
        }
    }
    props.push(check(
        "residual_base matches the hand-solved 5-point example",
        residual_ok,
    ));
    props
}

// ------------------------------------------------------------------ attacks

/// Independent feasibility test: a crafted delta is accepted when it lies
/// within the benign set's diameter of every benign delta.
fn ref_feasible(rows: &[Vec<f64>], crafted: &[f64]) -> bool {
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut diameter = 0.0f64;
    for a in rows {
        for b in rows {
            diameter = diameter.max(dist(a, b));
        }
    }
    rows.iter().all(|r| dist(r, crafted) <= diameter)
}

fn attack_suite() -> Vec<Property> {
    let mut props = Vec::new();

    // mu = 1, population sigma = 1, z = 0.3 -> exactly 1.3.
    let benign = vec![upd(0, &[0.0]), upd(1, &[2.0])];
    let lie = lie_update(&benign, 0.3).expect("valid instance");
    props.push(check(
        "lie({[0],[2]}, z=0.3) == [1.3] exactly",
        if lie == vec![1.3] {
            Ok(())
        } else {
            Err(format!("{lie:?}"))
        },
    ));

    // mu = [3,4] has norm 5, so gamma = 5 lands the craft on the origin.
    let benign = vec![upd(0, &[3.0, 4.0])];
    let stat = stat_opt_update(&benign, 5.0).expect("valid instance");
    props.push(check(
        "stat_opt(mu=[3,4], gamma=5) == [0,0] within 1e-12",
        if stat.iter().all(|v| v.abs() <= 1e-12) {
            Ok(())
        } else {
            Err(format!("{stat:?}"))
        },
    ));

    // Benign deltas {[0],[2]}: mu = [1], diameter 2, craft(gamma) = 1 -
    // gamma, and |craft - 2| <= 2 caps gamma at exactly 1.
    let benign = vec![upd(0, &[0.0]), upd(1, &[2.0])];
    let rows = vec![vec![0.0], vec![2.0]];
    let (crafted, gamma) = dyn_opt_update(&benign, 10.0, 1e-5).expect("valid instance");
    let mut dyn_ok = Ok(());
    if (gamma - 1.0).abs() > 1e-5 {
        dyn_ok = Err(format!("gamma {gamma} not within 1e-5 of 1.0"));
    } else if (crafted[0] - (1.0 - gamma)).abs() > 1e-12 {
        dyn_ok = Err(format!("crafted {crafted:?} != mu - gamma*mu/|mu|"));
    } else if !ref_feasible(&rows, &[1.0 - (gamma - 1e-4)]) {
        dyn_ok = Err("bracket: gamma - 1e-4 should be feasible".to_string());
    } else if ref_feasible(&rows, &[1.0 - (gamma + 1e-4)]) {
        dyn_ok = Err("bracket: gamma + 1e-4 should be infeasible".to_string());
    }
    props.push(check(
        "dyn_opt({[0],[2]}) finds gamma = 1.0 +- 1e-5 with a feasibility bracket",
        dyn_ok,
    ));
    props
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Instant;

    #[test]
    fn all_suites_pass() {
        for name in SUITES {
            let props = run_suite(name).unwrap();
            assert!(!props.is_empty());
            for (prop, result) in props {
                assert!(result.is_ok(), "{name}/{prop}: {result:?}");
            }
        }
    }

    #[test]
    fn unknown_suite_is_none() {
        assert!(run_suite("nope").is_none());
    }

    #[test]
    fn gradcheck_runtime_budget() {
        let start = Instant::now();
        let _ = run_suite("gradcheck").unwrap();
        assert!(start.elapsed().as_secs_f64() < 5.0);
    }

    #[test]
    fn aggregator_runtime_budget() {
        let start = Instant::now();
        let _ = run_suite("aggregators").unwrap();
        assert!(start.elapsed().as_secs_f64() < 10.0);
    }
}
