use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use urt_estimate::afc::IntervalSpec;
use urt_estimate::estimator::{
    backward_fixed_p, fit, forward, objective, objective_fixed_p, r_squared, softmax_neg,
    theta_derivative, EstimatorConfig, Problem,
};
use urt_estimate::network::{ExpandedNetwork, LinkKind, OdPair};
use urt_estimate::paths::{enumerate_paths, PathSearchConfig};
use urt_estimate::synth::{build_fig3_network, build_fig8_network};
use urt_estimate::vectorize::{build_incidence, Incidence, PathRow, RowIndex, VariableIndex};

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(
        costs in prop::collection::vec(-500.0f64..500.0, 1..12),
        theta in 0.01f64..5.0,
    ) {
        let p = softmax_neg(&costs, theta);
        let total: f64 = p.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn softmax_is_shift_invariant(
        units in prop::collection::vec(-4096i32..4096, 1..12),
        shift_units in -1_000_000i32..1_000_000,
        theta in 0.01f64..5.0,
    ) {
        // Dyadic costs and shifts keep every subtraction exact.
        let costs: Vec<f64> = units.iter().map(|&u| f64::from(u) / 64.0).collect();
        let shift = f64::from(shift_units) / 64.0;
        let shifted: Vec<f64> = costs.iter().map(|c| c + shift).collect();
        prop_assert_eq!(softmax_neg(&costs, theta), softmax_neg(&shifted, theta));
    }

    #[test]
    fn softmax_survives_huge_costs(base in 1e3f64..1e6, theta in 0.5f64..10.0) {
        let p = softmax_neg(&[base, base + 1.0, base + 2.0], theta);
        prop_assert!(p.iter().all(|x| x.is_finite()));
        prop_assert!(p[0] > p[1] && p[1] > p[2]);
    }

    #[test]
    fn softmax_prefers_cheaper_routes(a in 0.0f64..50.0, gap in 0.001f64..50.0, theta in 0.01f64..3.0) {
        let p = softmax_neg(&[a, a + gap], theta);
        prop_assert!(p[0] > p[1]);
        let ratio = p[1] / p[0];
        prop_assert!((ratio - (-theta * gap).exp()).abs() <= 1e-12);
    }
}

/// Random instance: `n_od` OD rows of 1 to 3 paths over `n_cols` columns.
struct Instance {
    a: Incidence,
    rows: RowIndex,
    c_tilde: Vec<f64>,
    weights: Vec<f64>,
    priors: Vec<f64>,
    n_link_columns: usize,
    t: Vec<f64>,
    theta: f64,
    lambdas: (f64, f64),
}

impl Instance {
    fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_cols = rng.random_range(2..20);
        let n_od = rng.random_range(1..10);
        let mut path_cols = Vec::new();
        let mut rows = RowIndex {
            od_rows: Vec::new(),
            path_rows: Vec::new(),
            blocks: Vec::new(),
        };
        for i in 0..n_od {
            let start = rows.path_rows.len();
            for rank in 0..rng.random_range(1..=3) {
                let mut cols: Vec<usize> = (0..n_cols).filter(|_| rng.random_bool(0.4)).collect();
                if cols.is_empty() {
                    cols.push(rng.random_range(0..n_cols));
                }
                path_cols.push(cols);
                rows.path_rows.push(PathRow {
                    od_row: i,
                    path_id: rows.path_rows.len(),
                    rank,
                    interval: 0,
                });
            }
            rows.od_rows.push((OdPair::new(i as u32 + 1, 100), 0));
            rows.blocks.push(start..rows.path_rows.len());
        }
        let lambdas = if rng.random_bool(0.5) {
            (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))
        } else {
            (0.0, 0.0)
        };
        Instance {
            a: Incidence::from_rows(n_cols, &path_cols),
            c_tilde: (0..n_od).map(|_| rng.random_range(5.0..40.0)).collect(),
            weights: (0..n_od).map(|_| rng.random_range(0.1..2.0)).collect(),
            priors: (0..n_cols).map(|_| rng.random_range(0.5..5.0)).collect(),
            n_link_columns: rng.random_range(0..=n_cols),
            t: (0..n_cols).map(|_| rng.random_range(0.0..6.0)).collect(),
            theta: rng.random_range(0.05..1.0),
            rows,
            lambdas,
        }
    }

    fn problem(&self) -> Problem<'_> {
        Problem {
            a: &self.a,
            rows: &self.rows,
            c_tilde: &self.c_tilde,
            weights: &self.weights,
            priors: &self.priors,
            n_link_columns: self.n_link_columns,
        }
    }
}

fn relative_error(got: &[f64], want: &[f64]) -> f64 {
    let diff: f64 = got
        .iter()
        .zip(want)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = want.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

#[test]
fn frozen_gradient_matches_central_differences() {
    for seed in 0..25 {
        let inst = Instance::random(seed);
        let problem = inst.problem();
        problem.check().unwrap();
        let fw = forward(&inst.a, &inst.rows, &inst.t, inst.theta).unwrap();
        let all: Vec<usize> = (0..inst.rows.n_od_rows()).collect();
        // A random minibatch as well as the full set.
        let batch: Vec<usize> = all
            .iter()
            .copied()
            .filter(|i| i % 2 == seed as usize % 2)
            .collect();
        for od_rows in [&all, &batch] {
            if od_rows.is_empty() {
                continue;
            }
            let grad = backward_fixed_p(&problem, &inst.t, &fw.p, inst.lambdas, od_rows).unwrap();
            let h = 1e-5;
            let numeric: Vec<f64> = (0..inst.t.len())
                .map(|c| {
                    let mut up = inst.t.clone();
                    let mut down = inst.t.clone();
                    up[c] += h;
                    down[c] -= h;
                    (objective_fixed_p(&problem, &up, &fw.p, inst.lambdas, od_rows)
                        - objective_fixed_p(&problem, &down, &fw.p, inst.lambdas, od_rows))
                        / (2.0 * h)
                })
                .collect();
            let err = relative_error(&grad, &numeric);
            assert!(err <= 1e-6, "instance {seed}: relative error {err}");
        }
    }
}

#[test]
fn theta_derivative_matches_central_differences() {
    for seed in 100..110 {
        let inst = Instance::random(seed);
        let problem = inst.problem();
        let all: Vec<usize> = (0..inst.rows.n_od_rows()).collect();
        let got = theta_derivative(&problem, &inst.t, inst.theta, inst.lambdas, &all).unwrap();
        let h = 1e-6;
        let numeric = (objective(&problem, &inst.t, inst.theta + h, inst.lambdas, &all).unwrap()
            - objective(&problem, &inst.t, inst.theta - h, inst.lambdas, &all).unwrap())
            / (2.0 * h);
        assert!(
            (got - numeric).abs() <= 1e-5 * numeric.abs().max(1.0),
            "{got} vs {numeric}"
        );
    }
}

#[test]
fn expected_time_is_probability_weighted_path_cost() {
    for seed in 200..210 {
        let inst = Instance::random(seed);
        let fw = forward(&inst.a, &inst.rows, &inst.t, inst.theta).unwrap();
        let dense = inst.a.to_dense();
        for (i, block) in inst.rows.blocks.iter().enumerate() {
            let costs: Vec<f64> = block
                .clone()
                .map(|r| (0..inst.t.len()).map(|c| dense[(r, c)] * inst.t[c]).sum())
                .collect();
            let z: f64 = costs.iter().map(|c| (-inst.theta * c).exp()).sum();
            let want: f64 = costs.iter().map(|c| (-inst.theta * c).exp() / z * c).sum();
            assert!((fw.c_hat[i] - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
    }
}

#[test]
fn row_weights_enter_the_loss_directly() {
    let inst = Instance::random(7);
    let problem = inst.problem();
    let all: Vec<usize> = (0..inst.rows.n_od_rows()).collect();
    let fw = forward(&inst.a, &inst.rows, &inst.t, inst.theta).unwrap();
    let got = objective(&problem, &inst.t, inst.theta, (0.0, 0.0), &all).unwrap();
    let num: f64 = all
        .iter()
        .map(|&i| inst.weights[i] * (inst.c_tilde[i] - fw.c_hat[i]).powi(2))
        .sum();
    let den: f64 = inst.weights.iter().sum();
    assert!((got - num / den).abs() <= 1e-12 * got.max(1.0));
}

/// Path cost recomputed from the path's link list and boarding events.
fn direct_path_costs(
    net: &ExpandedNetwork,
    index: &VariableIndex,
    t: &[f64],
) -> (Incidence, Vec<f64>) {
    let spec = IntervalSpec::default();
    let paths = enumerate_paths(
        net,
        &net.all_od_pairs(),
        &PathSearchConfig::default(),
        &net.prior_times(),
    )
    .unwrap();
    let cells = net
        .all_od_pairs()
        .into_iter()
        .flat_map(|od| (0..spec.count).map(move |h| (od, h)));
    let rows = RowIndex::build(cells, &paths);
    let a = build_incidence(&paths, index, &rows).unwrap();
    let by_id: std::collections::BTreeMap<usize, _> = paths
        .by_od
        .values()
        .flatten()
        .map(|p| (p.path_id, p))
        .collect();
    let direct = rows
        .path_rows
        .iter()
        .map(|pr| {
            let path = by_id[&pr.path_id];
            let mut total = 0.0;
            for &l in &path.links {
                let link = net.link(l);
                match link.kind {
                    LinkKind::Board => {
                        total += t[index
                            .wait_column(link.tail, link.direction, pr.interval)
                            .unwrap()];
                    }
                    LinkKind::Alight => {}
                    _ => total += t[index.link_column(l).unwrap()],
                }
            }
            total
        })
        .collect();
    (a, direct)
}

#[test]
fn incidence_product_equals_direct_path_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for net in [build_fig3_network(), build_fig8_network()] {
        let index = VariableIndex::build(&net, 10);
        let t: Vec<f64> = (0..index.total_columns())
            .map(|_| rng.random_range(0.0..10.0))
            .collect();
        let (a, direct) = direct_path_costs(&net, &index, &t);
        let product = a.mul(&t);
        assert_eq!(product.len(), direct.len());
        for (p, d) in product.iter().zip(&direct) {
            assert!((p - d).abs() <= 1e-9);
        }
    }
}

#[test]
fn gradient_vanishes_at_a_noiseless_optimum() {
    let inst = Instance::random(11);
    let fw = forward(&inst.a, &inst.rows, &inst.t, inst.theta).unwrap();
    let problem = Problem {
        c_tilde: &fw.c_hat,
        ..inst.problem()
    };
    let all: Vec<usize> = (0..inst.rows.n_od_rows()).collect();
    let grad = backward_fixed_p(&problem, &inst.t, &fw.p, (0.0, 0.0), &all).unwrap();
    assert!(grad.iter().all(|g| g.abs() < 1e-12));
}

#[test]
fn fit_reduces_the_loss_and_keeps_times_nonnegative() {
    let inst = Instance::random(21);
    let cfg = EstimatorConfig {
        max_epochs: 300,
        theta_init: inst.theta,
        ..EstimatorConfig::default()
    };
    let res = fit(&inst.problem(), &cfg).unwrap();
    assert!(res.loss_history.last().unwrap() < &res.initial_loss);
    assert!(res.t_hat.iter().all(|&v| v >= 0.0));
    let fitted = r_squared(&res.c_hat, &inst.c_tilde);
    assert!(fitted.is_ok());
}

#[test]
fn fit_is_deterministic() {
    let inst = Instance::random(5);
    let cfg = EstimatorConfig {
        max_epochs: 50,
        ..EstimatorConfig::default()
    };
    let a = fit(&inst.problem(), &cfg).unwrap();
    let b = fit(&inst.problem(), &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn r_squared_of_identical_vectors_is_one() {
    let v = [1.0, 2.0, 4.0, 8.0];
    assert_eq!(r_squared(&v, &v).unwrap(), 1.0);
    assert!(r_squared(&[1.0, 1.0], &[3.0, 3.0]).is_err());
}
