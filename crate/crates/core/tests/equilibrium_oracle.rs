use due_core::delay::{ArrivalPenalty, InstantaneousModel};
use due_core::equilibrium::{certify, solve_due, FeasibleSet, SolverConfig, StepRule};
use due_core::function_space::TimeGrid;

mod common;

use common::{desk, desk_oracle, DESK_CURVATURE as CURVATURE, DESK_Q as Q};

#[test]
fn desk_equilibrium_matches_brute_force() {
    let spec = desk();
    let grid = TimeGrid::<f64>::new(0.0, 3.0, 60).unwrap();
    let set = FeasibleSet::from_spec(&spec, grid).unwrap();
    let cfg = SolverConfig {
        step: 5.0,
        step_rule: StepRule::HalvingOnGapIncrease,
        max_iter: 5000,
        gap_tol: 1e-7,
        ..SolverConfig::default()
    };
    let pen = ArrivalPenalty::Quadratic {
        curvature: CURVATURE,
    };
    let report = solve_due(&spec, &pen, &set, &cfg, &InstantaneousModel).unwrap();
    let (v_ref, h_ref) = desk_oracle(&grid);
    let v = report.od_costs[0];
    println!(
        "iterations {} gap {:e} v {v} oracle {v_ref}",
        report.iterations, report.gap
    );
    assert!(report.converged());
    assert!(report.gap <= 1e-3 * Q * v);
    assert!((v - v_ref).abs() <= 1e-2 * v_ref);
    let l1: f64 = (0..grid.n_bins())
        .map(|k| {
            (0..2)
                .map(|p| (report.flows.get(p, k) - h_ref[k][p]).abs())
                .sum::<f64>()
        })
        .sum::<f64>()
        * grid.dt();
    println!("L1 {l1}");
    assert!(l1 <= 0.05 * Q);
    assert!(certify(&report, &set, None, 1e-2).is_empty());
}

mod invariants {
    use super::common::simplex_projection_by_enumeration;
    use due_core::delay::{ArrivalPenalty, DelayModelKind, PathFlowProfile};
    use due_core::equilibrium::{
        certify_profile, project, solve_due, vi_gap, FeasibleSet, SolverConfig,
    };
    use due_core::function_space::{Interpolation, SampledFunction, TimeGrid};
    use proptest::prelude::*;

    fn raw(grid: TimeGrid<f64>, dim: usize, v: Vec<f64>) -> SampledFunction<f64> {
        SampledFunction::new(grid, dim, Interpolation::PiecewiseConstant, v).unwrap()
    }

    proptest! {
        #[test]
        fn thresholding_matches_kkt_enumeration(h in prop::collection::vec(-3.0f64..3.0, 6), q in 0.1f64..5.0) {
            let grid = TimeGrid::<f64>::new(0.0, 1.5, 3).unwrap();
            let set = FeasibleSet::new(grid, vec![q], vec![vec![0, 1]]).unwrap();
            let g = project(&raw(grid, 2, h.clone()), &set).unwrap();
            // (path, bin) order for the enumeration oracle
            let flat: Vec<f64> = (0..2).flat_map(|p| (0..3).map(move |k| (p, k))).map(|(p, k)| h[k * 2 + p]).collect();
            let expected = simplex_projection_by_enumeration(&flat, q / grid.dt());
            for p in 0..2 {
                for k in 0..3 {
                    prop_assert!((g.get(p, k) - expected[p * 3 + k]).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn zero_gap_iff_empty_certificate(psi in prop::collection::vec(0.5f64..3.0, 8), pick in 0usize..8) {
            let grid = TimeGrid::<f64>::new(0.0, 1.0, 4).unwrap();
            let set = FeasibleSet::new(grid, vec![1.0], vec![vec![0, 1]]).unwrap();
            let psi = raw(grid, 2, psi);
            let h = PathFlowProfile::from_fn(grid, 2, |p, k| if k * 2 + p == pick { 4.0 } else { 0.0 }).unwrap();
            let gap = vi_gap(&h, &psi, &set);
            let clean = certify_profile(&h, &psi, &set, Some(0.0), 0.0).is_empty();
            prop_assert_eq!(gap == 0.0, clean);
        }
    }

    #[test]
    fn projected_fixed_point_has_negligible_gap() {
        let spec = super::common::desk();
        let grid = TimeGrid::<f64>::new(0.0, 3.0, 60).unwrap();
        let set = FeasibleSet::from_spec(&spec, grid).unwrap();
        let cfg = SolverConfig {
            step: 5.0,
            gap_tol: 1e-13,
            max_iter: 20000,
            ..SolverConfig::default()
        };
        let pen = ArrivalPenalty::Quadratic {
            curvature: super::CURVATURE,
        };
        let r = solve_due(&spec, &pen, &set, &cfg, &DelayModelKind::Instantaneous).unwrap();
        let step = 1.0;
        let image = project(
            &r.flows.as_function().add_scaled(-step, &r.psi).unwrap(),
            &set,
        )
        .unwrap();
        let moved = image
            .as_function()
            .values()
            .iter()
            .zip(r.flows.as_function().values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(moved <= 1e-10, "{moved}");
        let scale = super::Q * r.od_costs[0];
        assert!(r.gap <= 1e-8 * scale, "{}", r.gap);
    }
}
