//! Shared test helpers: random feeders and independent power-flow oracles.
#![allow(dead_code)]

use hc_core::capability::{CapabilitySpec, NodeCapability, ReactiveCase};
use hc_core::nalgebra::{DMatrix, DVector};
use hc_core::network::{BranchData, FeederNetwork, NetworkData, NodeLimits};
use hc_core::powerflow::InjectionProfile;
use hc_core::sensitivity::SensitivityMatrices;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VMIN: f64 = 0.95 * 0.95;
pub const VMAX: f64 = 1.05 * 1.05;

/// Random radial feeder with `n` non-root nodes. External ids are a shuffled
/// `1..=n`, branches are listed in random order and orientation.
pub fn random_network(seed: u64, n: usize) -> NetworkData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (1..=n).collect();
    ids.shuffle(&mut rng);
    let label = |k: usize| if k == 0 { 0 } else { ids[k - 1] };
    let mut branches: Vec<BranchData> = (1..=n)
        .map(|k| {
            let parent = rng.random_range(0..k);
            let (from, to) = if rng.random::<bool>() { (label(parent), label(k)) } else { (label(k), label(parent)) };
            BranchData {
                from,
                to,
                r: rng.random_range(0.002..0.03),
                x: rng.random_range(0.002..0.03),
                l_min: 0.0,
                l_max: f64::INFINITY,
            }
        })
        .collect();
    branches.shuffle(&mut rng);
    NetworkData {
        substation: 0,
        v0: 1.0,
        base_kv: 4.16,
        base_mva: 1.0,
        nodes: (1..=n).map(|id| NodeLimits { id, v_min: VMIN, v_max: VMAX }).collect(),
        branches,
    }
}

pub fn build(data: &NetworkData) -> (FeederNetwork, SensitivityMatrices) {
    let net = FeederNetwork::new(data).expect("valid random network");
    let m = SensitivityMatrices::from_network(&net).expect("nonsingular");
    (net, m)
}

/// Largest summed path impedance from the substation to any node.
pub fn max_path_impedance(net: &FeederNetwork) -> f64 {
    let n = net.len();
    let mut z = vec![0.0; n];
    for i in 0..n {
        let here = net.r()[i].hypot(net.x()[i]);
        let parent = net.parent_of(i);
        z[i] = here + if parent == 0 { 0.0 } else { z[parent - 1] };
    }
    z.into_iter().fold(0.0, f64::max)
}

/// Injections small enough that the feeder stays far from voltage collapse.
pub fn random_injections(seed: u64, net: &FeederNetwork) -> InjectionProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let n = net.len();
    let a = 0.15 / (n as f64 * max_path_impedance(net));
    InjectionProfile {
        p: (0..n).map(|_| rng.random_range(-a..a)).collect(),
        q: (0..n).map(|_| rng.random_range(-a..a)).collect(),
    }
}

/// Capability under which the lossless optimum is decided by one voltage
/// limit alone. The reactive range of `case` is rescaled so that reactive
/// power by itself cannot reach the opposite limit at any node, and the
/// real-power envelope is made too wide to bind: in the upper direction all
/// `p_j > 0` and `Mp, Mq >= 0`, so `v_i <= vmax` already forces
/// `p_i <= (vmax - v0 + q_abs * sum_j Mq[i, j]) / Mp[i, i]`.
pub fn wide_capability(m: &SensitivityMatrices, case: ReactiveCase) -> CapabilitySpec {
    let n = m.len();
    let headroom = (VMAX - m.v0).min(m.v0 - VMIN);
    let max_row = (0..n).map(|i| m.m_q.row(i).iter().sum::<f64>()).fold(0.0, f64::max);
    let q_abs = 0.5 * headroom / max_row;
    let case = match case {
        ReactiveCase::Box { .. } => ReactiveCase::Box { q_min: -q_abs, q_max: q_abs },
        ReactiveCase::Quadratic { .. } => ReactiveCase::Quadratic { s_max: q_abs },
        c => c,
    };
    let q_abs = if matches!(case, ReactiveCase::ConstantPf { .. }) { 0.0 } else { q_abs };
    let reach = (0..n)
        .map(|i| {
            let row: f64 = m.m_q.row(i).iter().sum();
            ((VMAX - m.v0).max(m.v0 - VMIN) + q_abs * row) / m.m_p[(i, i)]
        })
        .fold(0.0, f64::max);
    let bound = (2.0 * reach).max(q_abs);
    CapabilitySpec::uniform(n, NodeCapability { case, p_min: -bound, p_max: bound, demand: 0.0, solar: 0.0 }).unwrap()
}

pub fn box_case() -> ReactiveCase {
    ReactiveCase::Box { q_min: -0.05, q_max: 0.05 }
}

pub fn quadratic_case() -> ReactiveCase {
    ReactiveCase::Quadratic { s_max: 1.0 }
}

/// Two-node DistFlow solved in closed form: the high-voltage root of
/// `v^2 - (v0 + 2(r p + x q)) v + (r^2 + x^2)(p^2 + q^2) = 0`.
pub fn two_node_closed_form(v0: f64, r: f64, x: f64, p: f64, q: f64) -> Option<f64> {
    let b = v0 + 2.0 * (r * p + x * q);
    let c = (r * r + x * x) * (p * p + q * q);
    let disc = b * b - 4.0 * c;
    (disc >= 0.0 && b > 0.0).then(|| 0.5 * (b + disc.sqrt()))
}

#[derive(Clone, Copy, Debug)]
struct Cx(f64, f64);

impl Cx {
    fn mul(self, o: Cx) -> Cx {
        Cx(self.0 * o.0 - self.1 * o.1, self.0 * o.1 + self.1 * o.0)
    }
    fn conj(self) -> Cx {
        Cx(self.0, -self.1)
    }
}

/// Bus-injection AC power flow in rectangular coordinates, solved by Newton
/// with a central-difference Jacobian. Returns squared voltage magnitudes in
/// internal order. Independent of the branch-flow formulation.
pub fn newton_power_flow(net: &FeederNetwork, inj: &InjectionProfile) -> Option<Vec<f64>> {
    let n = net.len();
    let size = n + 1;
    let mut y = vec![vec![Cx(0.0, 0.0); size]; size];
    for i in 0..n {
        let (r, x) = (net.r()[i], net.x()[i]);
        let d = r * r + x * x;
        let adm = Cx(r / d, -x / d);
        let (a, b) = (net.parent_of(i), i + 1);
        y[a][a] = Cx(y[a][a].0 + adm.0, y[a][a].1 + adm.1);
        y[b][b] = Cx(y[b][b].0 + adm.0, y[b][b].1 + adm.1);
        y[a][b] = Cx(y[a][b].0 - adm.0, y[a][b].1 - adm.1);
        y[b][a] = Cx(y[b][a].0 - adm.0, y[b][a].1 - adm.1);
    }
    let root = Cx(net.v0().sqrt(), 0.0);
    let mismatch = |z: &DVector<f64>| -> DVector<f64> {
        let volt = |k: usize| if k == 0 { root } else { Cx(z[2 * (k - 1)], z[2 * (k - 1) + 1]) };
        let mut out = DVector::zeros(2 * n);
        for k in 1..size {
            let mut cur = Cx(0.0, 0.0);
            for (j, yk) in y[k].iter().enumerate() {
                let t = yk.mul(volt(j));
                cur = Cx(cur.0 + t.0, cur.1 + t.1);
            }
            let s = volt(k).mul(cur.conj());
            out[2 * (k - 1)] = s.0 - inj.p[k - 1];
            out[2 * (k - 1) + 1] = s.1 - inj.q[k - 1];
        }
        out
    };
    let mut z = DVector::from_fn(2 * n, |i, _| if i % 2 == 0 { root.0 } else { 0.0 });
    for _ in 0..60 {
        let f = mismatch(&z);
        if f.amax() < 1e-13 {
            return Some((0..n).map(|k| z[2 * k].powi(2) + z[2 * k + 1].powi(2)).collect());
        }
        let h = 1e-7;
        let mut jac = DMatrix::zeros(2 * n, 2 * n);
        for c in 0..2 * n {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[c] += h;
            zm[c] -= h;
            let col = (mismatch(&zp) - mismatch(&zm)) / (2.0 * h);
            jac.set_column(c, &col);
        }
        let step = jac.lu().solve(&(-f))?;
        z += step;
        if !z.iter().all(|v| v.is_finite()) {
            return None;
        }
    }
    let f = mismatch(&z);
    (f.amax() < 1e-10).then(|| (0..n).map(|k| z[2 * k].powi(2) + z[2 * k + 1].powi(2)).collect())
}
