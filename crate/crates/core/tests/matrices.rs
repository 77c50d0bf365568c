mod common;

use std::collections::HashMap;

use hc_core::network::{FeederNetwork, NetworkData};
use hc_core::sensitivity::SensitivityMatrices;
use proptest::prelude::*;

use common::{build, random_network};

/// Internal indices (1-based) of the branches on the path from the substation to `k`.
fn path(net: &FeederNetwork, k: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut cur = k;
    while cur != 0 {
        out.push(cur);
        cur = net.parent_of(cur - 1);
    }
    out
}

/// Sensitivities from shared path resistance/reactance, computed without any matrix algebra.
fn path_sensitivities(net: &FeederNetwork, i: usize, j: usize) -> (f64, f64) {
    let pi = path(net, i + 1);
    let pj = path(net, j + 1);
    pi.iter()
        .filter(|b| pj.contains(b))
        .fold((0.0, 0.0), |(mp, mq), &b| (mp + 2.0 * net.r()[b - 1], mq + 2.0 * net.x()[b - 1]))
}

fn relabel(data: &NetworkData, shift: usize) -> NetworkData {
    let map = |id: usize| if id == data.substation { id } else { id + shift };
    let mut out = data.clone();
    for n in &mut out.nodes {
        n.id = map(n.id);
    }
    for b in &mut out.branches {
        b.from = map(b.from);
        b.to = map(b.to);
    }
    out.branches.reverse();
    out
}

fn by_id(net: &FeederNetwork, mat: &hc_core::nalgebra::DMatrix<f64>, shift: usize) -> HashMap<(usize, usize), f64> {
    let ids = net.node_ids();
    let mut out = HashMap::new();
    for i in 0..net.len() {
        for j in 0..net.len() {
            out.insert((ids[i] - shift, ids[j] - shift), mat[(i, j)]);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn incidence_identities(n in 1usize..=50, seed in any::<u64>()) {
        let (net, m) = build(&random_network(seed, n));
        prop_assert_eq!(m.det_i_minus_a(), 1.0);
        prop_assert!(m.inverse_residual() < 1e-10);
        for j in 0..n {
            // exactly one parent per node, and it precedes the node
            let col: Vec<usize> = (0..n).filter(|&i| m.a[(i, j)] != 0.0).collect();
            let parent = net.parent_of(j);
            if parent == 0 {
                prop_assert!(col.is_empty());
            } else {
                prop_assert_eq!(col, vec![parent - 1]);
            }
        }
    }

    #[test]
    fn c_is_subtree_indicator(n in 1usize..=30, seed in any::<u64>()) {
        let (net, m) = build(&random_network(seed, n));
        for i in 0..n {
            for j in 0..n {
                let below = path(&net, j + 1).contains(&(i + 1));
                prop_assert_eq!(m.c[(i, j)], if below { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn sensitivities_match_shared_paths(n in 1usize..=30, seed in any::<u64>()) {
        let (net, m) = build(&random_network(seed, n));
        for i in 0..n {
            for j in 0..n {
                let (mp, mq) = path_sensitivities(&net, i, j);
                prop_assert!((m.m_p[(i, j)] - mp).abs() < 1e-12);
                prop_assert!((m.m_q[(i, j)] - mq).abs() < 1e-12);
            }
        }
        prop_assert!(m.m_p.iter().all(|&v| v >= 0.0));
        prop_assert!(m.h.iter().all(|&v| v >= -1e-15));
    }

    #[test]
    fn sensitivity_matrices_positive_definite(n in 1usize..=50, seed in any::<u64>()) {
        let (_, m) = build(&random_network(seed, n));
        for mat in [&m.m_p, &m.m_q] {
            prop_assert!((mat - mat.transpose()).amax() < 1e-14);
            prop_assert!(mat.clone().symmetric_eigenvalues().min() > 0.0);
        }
    }

    #[test]
    fn relabeling_leaves_matrices_unchanged(n in 1usize..=20, seed in any::<u64>()) {
        let data = random_network(seed, n);
        let (a, ma) = build(&data);
        let (b, mb) = build(&relabel(&data, 100));
        for (x, y) in [(&ma.m_p, &mb.m_p), (&ma.m_q, &mb.m_q), (&ma.h, &mb.h)] {
            let lhs = by_id(&a, x, 0);
            let rhs = by_id(&b, y, 100);
            for (k, v) in &lhs {
                prop_assert!((v - rhs[k]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn chain_sensitivities_by_hand() {
    // 0 - 1 - 2 with r = (0.1, 0.2), x = (0.3, 0.4)
    use hc_core::network::{BranchData, NodeLimits};
    let data = NetworkData {
        substation: 0,
        v0: 1.0,
        base_kv: 1.0,
        base_mva: 1.0,
        nodes: vec![NodeLimits { id: 1, v_min: 0.9, v_max: 1.1 }, NodeLimits { id: 2, v_min: 0.9, v_max: 1.1 }],
        branches: vec![
            BranchData { from: 1, to: 2, r: 0.2, x: 0.4, l_min: 0.0, l_max: f64::INFINITY },
            BranchData { from: 0, to: 1, r: 0.1, x: 0.3, l_min: 0.0, l_max: f64::INFINITY },
        ],
    };
    let net = FeederNetwork::new(&data).unwrap();
    let m = SensitivityMatrices::from_network(&net).unwrap();
    let expect_p = [[0.2, 0.2], [0.2, 0.6]];
    let expect_q = [[0.6, 0.6], [0.6, 1.4]];
    for i in 0..2 {
        for j in 0..2 {
            assert!((m.m_p[(i, j)] - expect_p[i][j]).abs() < 1e-15);
            assert!((m.m_q[(i, j)] - expect_q[i][j]).abs() < 1e-15);
        }
    }
    // dV/dl: branch 2 losses enter V1 through the parent flow, 2(r1 r2 + x1 x2) = 0.28
    let expect_h = [[0.1, 0.28], [0.1, 0.48]];
    for i in 0..2 {
        for j in 0..2 {
            assert!((m.h[(i, j)] - expect_h[i][j]).abs() < 1e-14);
        }
    }
}
