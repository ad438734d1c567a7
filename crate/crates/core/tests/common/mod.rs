#![allow(dead_code)]

use due_core::function_space::TimeGrid;
use due_core::network::NetworkSpec;

pub const DESK_LINKS: [(f64, f64); 2] = [(1.0, 0.1), (1.5, 0.05)];
pub const DESK_CURVATURE: f64 = 0.2;
pub const DESK_Q: f64 = 10.0;
pub const DESK_TARGET: f64 = 2.0;

pub fn parallel(links: &[(f64, f64)], q: f64, target: f64) -> NetworkSpec {
    let links_json: Vec<_> = links
        .iter()
        .enumerate()
        .map(|(i, (a, b))| serde_json::json!({"id": format!("l{i}"), "tail": "O", "head": "D", "a": a, "b": b}))
        .collect();
    let paths: Vec<_> = (0..links.len())
        .map(|i| serde_json::json!({"id": format!("p{i}"), "od": 0, "links": [format!("l{i}")]}))
        .collect();
    let v = serde_json::json!({
        "nodes": ["O", "D"], "links": links_json, "paths": paths,
        "od_pairs": [{"origin": "O", "destination": "D", "Q": q, "T_A": target}]
    });
    NetworkSpec::from_json(&v.to_string()).unwrap()
}

pub fn desk() -> NetworkSpec {
    parallel(&DESK_LINKS, DESK_Q, DESK_TARGET)
}

/// Two O-D pairs sharing node `M`: pair 0 has paths `p0`, `p1`; pair 1 has `p2`.
pub fn three_paths_two_ods() -> NetworkSpec {
    let v = serde_json::json!({
        "nodes": ["A", "M", "B", "C"],
        "links": [
            {"id": "am", "tail": "A", "head": "M", "a": 1.0, "b": 0.1},
            {"id": "mb", "tail": "M", "head": "B", "a": 1.0, "b": 0.1},
            {"id": "ab", "tail": "A", "head": "B", "a": 2.5, "b": 0.05},
            {"id": "mc", "tail": "M", "head": "C", "a": 0.5, "b": 0.2}
        ],
        "paths": [
            {"id": "p0", "od": 0, "links": ["am", "mb"]},
            {"id": "p1", "od": 0, "links": ["ab"]},
            {"id": "p2", "od": 1, "links": ["mc"]}
        ],
        "od_pairs": [
            {"origin": "A", "destination": "B", "Q": 6.0, "T_A": 2.0},
            {"origin": "M", "destination": "C", "Q": 3.0, "T_A": 1.5}
        ]
    });
    NetworkSpec::from_json(&v.to_string()).unwrap()
}

fn desk_psi(p: usize, t: f64, h: f64) -> f64 {
    let d = DESK_LINKS[p].0 + DESK_LINKS[p].1 * h;
    d + DESK_CURVATURE * (t + d - DESK_TARGET).powi(2)
}

/// Rate at which path `p`'s effective delay reaches `v`: coarse scan over the
/// rate, then bisection inside the bracketing cell.
fn rate_for_cost(p: usize, t: f64, v: f64) -> f64 {
    if desk_psi(p, t, 0.0) >= v {
        return 0.0;
    }
    let cell = 0.5;
    let mut hi = cell;
    while desk_psi(p, t, hi) < v {
        hi += cell;
    }
    let mut lo = hi - cell;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if desk_psi(p, t, mid) < v {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Desk equilibrium by search over the common cost level `v`: returns `v`
/// and per-bin rates `[h_0, h_1]`.
pub fn desk_oracle(grid: &TimeGrid<f64>) -> (f64, Vec<[f64; 2]>) {
    let profile = |v: f64| -> Vec<[f64; 2]> {
        (0..grid.n_bins())
            .map(|k| {
                let t = grid.midpoint(k);
                [rate_for_cost(0, t, v), rate_for_cost(1, t, v)]
            })
            .collect()
    };
    let total = |v: f64| profile(v).iter().map(|r| r[0] + r[1]).sum::<f64>() * grid.dt();
    let (mut lo, mut hi) = (0.0, 1.0);
    while total(hi) < DESK_Q {
        lo = hi;
        hi += 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) < DESK_Q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let v = 0.5 * (lo + hi);
    (v, profile(v))
}

/// Projection onto `{g ≥ 0, Σ g = total}` by trying every support set and
/// keeping the one that satisfies the KKT conditions.
pub fn simplex_projection_by_enumeration(h: &[f64], total: f64) -> Vec<f64> {
    let n = h.len();
    assert!(n <= 16);
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let theta = (support.iter().map(|&i| h[i]).sum::<f64>() - total) / support.len() as f64;
        let inside_ok = support.iter().all(|&i| h[i] - theta >= -1e-12);
        let outside_ok = (0..n)
            .filter(|i| mask & (1 << i) == 0)
            .all(|i| h[i] - theta <= 1e-12);
        if inside_ok && outside_ok {
            return (0..n)
                .map(|i| {
                    if mask & (1 << i) != 0 {
                        (h[i] - theta).max(0.0)
                    } else {
                        0.0
                    }
                })
                .collect();
        }
    }
    unreachable!("a KKT point always exists")
}
