mod common;

use due_core::delay::PathFlowProfile;
use due_core::equilibrium::{cumulative_state, project, FeasibleSet};
use due_core::function_space::{sup_norm, Interpolation, SampledFunction, TimeGrid};
use due_core::sensitivity::{fundamental_matrix, solve_variational};
use due_core::state_operator::{
    continuity_probe, picard_solve, terminal_residual, AffineTarget, PicardOptions,
};
use due_core::systems::LinearSystem;

type Mat2 = [[f64; 2]; 2];

fn mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

/// `exp(A)` by scaling and squaring with a truncated Taylor series.
fn expm(a: &Mat2) -> Mat2 {
    let norm = a.iter().flatten().map(|v| v.abs()).sum::<f64>();
    let squarings = (norm / 0.25).log2().ceil().max(0.0) as i32;
    let scale = 0.5f64.powi(squarings);
    let s = [
        [a[0][0] * scale, a[0][1] * scale],
        [a[1][0] * scale, a[1][1] * scale],
    ];
    let mut term = [[1.0, 0.0], [0.0, 1.0]];
    let mut sum = term;
    for k in 1..25 {
        term = mul(&term, &s);
        for row in term.iter_mut() {
            for v in row.iter_mut() {
                *v /= k as f64;
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                sum[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        sum = mul(&sum, &sum);
    }
    sum
}

#[test]
fn fundamental_matrix_matches_matrix_exponential() {
    for a in [
        [[0.0, 1.0], [-2.0, -0.5]],
        [[-1.0, 0.3], [0.7, 0.4]],
        [[0.0, 2.0], [-2.0, 0.0]],
    ] {
        let grid = TimeGrid::<f64>::new(0.0, 1.0, 1000).unwrap();
        let sys =
            LinearSystem::new(2, 1, a.iter().flatten().copied().collect(), vec![0.0, 1.0]).unwrap();
        let u = SampledFunction::zeros(grid, 1, Interpolation::PiecewiseConstant);
        let x = picard_solve(&sys, &[1.0, 0.0], &u, &PicardOptions::new(1e-12))
            .unwrap()
            .trajectory;
        let m = fundamental_matrix(&sys, &x, &u).unwrap();
        let expected = expm(&a);
        let got = m.at(1000);
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (got[i * 2 + j] - expected[i][j]).abs() <= 1e-6,
                    "{a:?}: {got:?} vs {expected:?}"
                );
            }
        }
    }
}

#[test]
fn continuity_slope_matches_linear_response() {
    let grid = TimeGrid::<f64>::new(0.0, 2.0, 400).unwrap();
    let sys = LinearSystem::decay(1.0);
    let u = SampledFunction::from_scalar_fn(grid, Interpolation::PiecewiseConstant, |t| t.sin())
        .unwrap();
    let du = SampledFunction::from_scalar_fn(grid, Interpolation::PiecewiseConstant, |t| 1.0 + t)
        .unwrap();
    let opts = PicardOptions::new(1e-13).with_max_iter(2000);
    let probe = continuity_probe(&sys, &[0.3], &u, &du, &[1e-1, 1e-2, 1e-3], &opts).unwrap();
    let x = picard_solve(&sys, &[0.3], &u, &opts).unwrap().trajectory;
    let response = sup_norm(&solve_variational(&sys, &x, &u, &du).unwrap().delta_x);
    for (eps, dev) in probe {
        assert!(
            (dev / eps / response - 1.0).abs() <= 1e-2,
            "eps {eps}: {} vs {response}",
            dev / eps
        );
    }
}

#[test]
fn cumulative_state_meets_demand_after_projection() {
    let spec = common::three_paths_two_ods();
    let grid = TimeGrid::<f64>::new(0.0, 3.0, 90).unwrap();
    let set = FeasibleSet::from_spec(&spec, grid).unwrap();
    let raw = SampledFunction::from_fn(grid, 3, Interpolation::PiecewiseConstant, |t, out| {
        out[0] = 4.0 * t.sin();
        out[1] = 1.0 - t;
        out[2] = t * t;
    })
    .unwrap();
    let h = project(&raw, &set).unwrap();
    let y = cumulative_state(&h, &spec).unwrap();
    let gamma = AffineTarget::new(set.demands().to_vec(), 1e-9);
    let residual = terminal_residual(&gamma, &y);
    // direct quadrature of the departure rates
    for (w, paths) in set.od_paths().iter().enumerate() {
        let direct: f64 = paths.iter().map(|&p| h.path_total(p)).sum();
        assert!((y.last()[w] - direct).abs() <= 1e-12);
        assert!(residual[w].abs() <= 1e-9);
    }
}

#[test]
fn cumulative_state_reaches_ten() {
    let spec = common::desk();
    let grid = TimeGrid::<f64>::new(0.0, 3.0, 60).unwrap();
    let h = PathFlowProfile::from_fn(grid, 2, |p, k| {
        if p == 0 {
            2.0 + (k % 3) as f64
        } else {
            10.0 / 3.0 - 3.0
        }
    })
    .unwrap();
    let total = h.path_total(0) + h.path_total(1);
    let h = PathFlowProfile::from_fn(grid, 2, |p, k| h.get(p, k) * 10.0 / total).unwrap();
    let y = cumulative_state(&h, &spec).unwrap();
    assert_eq!(y.first()[0], 0.0);
    assert!((y.last()[0] - 10.0).abs() <= 1e-9);
}
