//! Radial feeder model.
//!
//! Nodes are supplied with arbitrary external labels. On construction the
//! tree is validated and relabeled breadth-first from the substation, so that
//! internal node `k` (1-based, `k = 1..=n`) always has a parent with a smaller
//! index. Branch `k - 1` is the branch joining node `k` to its parent, which
//! identifies every branch with its downstream node.
//!
//! All quantities stored here are per-unit; voltages and currents are squared
//! magnitudes.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("network has no non-substation nodes")]
    Empty,
    #[error("no branch is incident to substation node {0}")]
    NotRooted(usize),
    #[error("network is not radial: {0}")]
    NotRadial(String),
    #[error("duplicate node id {0}")]
    DuplicateNode(usize),
    #[error("branch references unknown node {0}")]
    UnknownNode(usize),
    #[error("branch {from}-{to}: {reason}")]
    InvalidImpedance {
        from: usize,
        to: usize,
        reason: &'static str,
    },
    #[error("node {0}: voltage bounds must satisfy 0 < v_min < v_max")]
    InvalidVoltageBounds(usize),
    #[error("branch {from}-{to}: current bounds must satisfy 0 <= l_min <= l_max")]
    InvalidCurrentBounds { from: usize, to: usize },
    #[error("substation squared voltage must be positive, got {0}")]
    InvalidSubstationVoltage(f64),
}

/// Voltage limits of one node, squared magnitudes in pu.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeLimits {
    pub id: usize,
    pub v_min: f64,
    pub v_max: f64,
}

/// One branch as supplied by the caller. Orientation does not matter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchData {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub l_min: f64,
    pub l_max: f64,
}

/// Unvalidated network description using external node labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkData {
    pub substation: usize,
    /// Squared substation voltage magnitude, pu.
    pub v0: f64,
    pub base_kv: f64,
    pub base_mva: f64,
    /// Every node except the substation.
    pub nodes: Vec<NodeLimits>,
    pub branches: Vec<BranchData>,
}

/// Validated radial feeder in breadth-first internal order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeederNetwork {
    /// `ids[k]` is the external label of internal node `k`; `ids[0]` is the substation.
    ids: Vec<usize>,
    /// Internal parent of internal node `k`; `parent[0]` is unused and set to 0.
    parent: Vec<usize>,
    r: Vec<f64>,
    x: Vec<f64>,
    v_min: Vec<f64>,
    v_max: Vec<f64>,
    l_min: Vec<f64>,
    l_max: Vec<f64>,
    v0: f64,
    base_kv: f64,
    base_mva: f64,
}

impl FeederNetwork {
    pub fn new(data: &NetworkData) -> Result<Self, NetworkError> {
        let n = data.nodes.len();
        if n == 0 {
            return Err(NetworkError::Empty);
        }
        if !(data.v0 > 0.0 && data.v0.is_finite()) {
            return Err(NetworkError::InvalidSubstationVoltage(data.v0));
        }

        let mut slot: HashMap<usize, usize> = HashMap::with_capacity(n + 1);
        slot.insert(data.substation, 0);
        for (i, node) in data.nodes.iter().enumerate() {
            if slot.insert(node.id, i + 1).is_some() {
                return Err(NetworkError::DuplicateNode(node.id));
            }
            if !(node.v_min > 0.0 && node.v_min < node.v_max) {
                return Err(NetworkError::InvalidVoltageBounds(node.id));
            }
        }

        for b in &data.branches {
            for id in [b.from, b.to] {
                if !slot.contains_key(&id) {
                    return Err(NetworkError::UnknownNode(id));
                }
            }
            if b.from == b.to {
                return Err(NetworkError::NotRadial(format!("self-loop at node {}", b.from)));
            }
            if !(b.r >= 0.0 && b.r.is_finite()) {
                return Err(NetworkError::InvalidImpedance {
                    from: b.from,
                    to: b.to,
                    reason: "resistance must be non-negative",
                });
            }
            if !(b.x > 0.0 && b.x.is_finite()) {
                return Err(NetworkError::InvalidImpedance {
                    from: b.from,
                    to: b.to,
                    reason: "reactance must be positive (inductive network)",
                });
            }
            if !(b.l_min >= 0.0 && b.l_min <= b.l_max) {
                return Err(NetworkError::InvalidCurrentBounds { from: b.from, to: b.to });
            }
        }

        if !data
            .branches
            .iter()
            .any(|b| b.from == data.substation || b.to == data.substation)
        {
            return Err(NetworkError::NotRooted(data.substation));
        }
        if data.branches.len() != n {
            return Err(NetworkError::NotRadial(format!(
                "{} branches for {} non-substation nodes",
                data.branches.len(),
                n
            )));
        }

        // adjacency over input slots, in branch order so the relabeling is stable
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n + 1];
        for (bi, b) in data.branches.iter().enumerate() {
            let (u, v) = (slot[&b.from], slot[&b.to]);
            adj[u].push((v, bi));
            adj[v].push((u, bi));
        }

        let mut order = Vec::with_capacity(n + 1);
        let mut parent_slot = vec![usize::MAX; n + 1];
        let mut via_branch = vec![usize::MAX; n + 1];
        let mut seen = vec![false; n + 1];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(v, bi) in &adj[u] {
                if bi == via_branch[u] {
                    continue;
                }
                if seen[v] {
                    return Err(NetworkError::NotRadial(format!(
                        "cycle through branch {}-{}",
                        data.branches[bi].from, data.branches[bi].to
                    )));
                }
                seen[v] = true;
                parent_slot[v] = u;
                via_branch[v] = bi;
                queue.push_back(v);
            }
        }
        if order.len() != n + 1 {
            let missing = (1..=n).find(|&s| !seen[s]).unwrap_or(0);
            return Err(NetworkError::NotRadial(format!(
                "node {} is not connected to the substation",
                data.nodes[missing - 1].id
            )));
        }

        let mut internal = vec![0usize; n + 1];
        for (k, &s) in order.iter().enumerate() {
            internal[s] = k;
        }

        let mut net = FeederNetwork {
            ids: Vec::with_capacity(n + 1),
            parent: vec![0; n + 1],
            r: vec![0.0; n],
            x: vec![0.0; n],
            v_min: vec![0.0; n],
            v_max: vec![0.0; n],
            l_min: vec![0.0; n],
            l_max: vec![0.0; n],
            v0: data.v0,
            base_kv: data.base_kv,
            base_mva: data.base_mva,
        };
        for (k, &s) in order.iter().enumerate() {
            net.ids.push(if s == 0 { data.substation } else { data.nodes[s - 1].id });
            if k == 0 {
                continue;
            }
            net.parent[k] = internal[parent_slot[s]];
            let b = &data.branches[via_branch[s]];
            let node = &data.nodes[s - 1];
            net.r[k - 1] = b.r;
            net.x[k - 1] = b.x;
            net.l_min[k - 1] = b.l_min;
            net.l_max[k - 1] = b.l_max;
            net.v_min[k - 1] = node.v_min;
            net.v_max[k - 1] = node.v_max;
        }
        Ok(net)
    }

    /// Number of non-substation nodes (equal to the number of branches).
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn base_kv(&self) -> f64 {
        self.base_kv
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn substation_id(&self) -> usize {
        self.ids[0]
    }

    /// External ids of non-substation nodes, in internal order.
    pub fn node_ids(&self) -> &[usize] {
        &self.ids[1..]
    }

    /// Zero-based position of an external node id in every n-vector.
    pub fn position_of(&self, id: usize) -> Option<usize> {
        self.ids[1..].iter().position(|&x| x == id)
    }

    /// Internal parent (0 = substation) of the node at zero-based position `i`.
    pub fn parent_of(&self, i: usize) -> usize {
        self.parent[i + 1]
    }

    /// Zero-based positions of the children of internal node `k` (0 = substation).
    pub fn children_of(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| self.parent[i + 1] == k)
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn v_min(&self) -> &[f64] {
        &self.v_min
    }

    pub fn v_max(&self) -> &[f64] {
        &self.v_max
    }

    pub fn l_min(&self) -> &[f64] {
        &self.l_min
    }

    pub fn l_max(&self) -> &[f64] {
        &self.l_max
    }

    /// Replace the voltage bounds (squared magnitudes, internal order).
    pub fn with_voltage_bounds(mut self, v_min: Vec<f64>, v_max: Vec<f64>) -> Result<Self, NetworkError> {
        assert_eq!(v_min.len(), self.len());
        assert_eq!(v_max.len(), self.len());
        for i in 0..self.len() {
            if !(v_min[i] > 0.0 && v_min[i] < v_max[i]) {
                return Err(NetworkError::InvalidVoltageBounds(self.ids[i + 1]));
            }
        }
        self.v_min = v_min;
        self.v_max = v_max;
        Ok(self)
    }

    /// Reconstruct an equivalent [`NetworkData`] in internal order.
    pub fn to_data(&self) -> NetworkData {
        NetworkData {
            substation: self.ids[0],
            v0: self.v0,
            base_kv: self.base_kv,
            base_mva: self.base_mva,
            nodes: (0..self.len())
                .map(|i| NodeLimits {
                    id: self.ids[i + 1],
                    v_min: self.v_min[i],
                    v_max: self.v_max[i],
                })
                .collect(),
            branches: (0..self.len())
                .map(|i| BranchData {
                    from: self.ids[self.parent[i + 1]],
                    to: self.ids[i + 1],
                    r: self.r[i],
                    x: self.x[i],
                    l_min: self.l_min[i],
                    l_max: self.l_max[i],
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn branch(from: usize, to: usize) -> BranchData {
        BranchData { from, to, r: 0.01, x: 0.02, l_min: 0.0, l_max: f64::INFINITY }
    }

    fn node(id: usize) -> NodeLimits {
        NodeLimits { id, v_min: 0.9025, v_max: 1.1025 }
    }

    fn data(nodes: &[usize], branches: &[(usize, usize)]) -> NetworkData {
        NetworkData {
            substation: 0,
            v0: 1.0,
            base_kv: 4.16,
            base_mva: 1.0,
            nodes: nodes.iter().map(|&i| node(i)).collect(),
            branches: branches.iter().map(|&(a, b)| branch(a, b)).collect(),
        }
    }

    #[test]
    fn relabels_breadth_first() {
        // 0 - 30 - 10, 0 - 20 given in scrambled order and orientation
        let net = FeederNetwork::new(&data(&[10, 20, 30], &[(10, 30), (20, 0), (0, 30)])).unwrap();
        assert_eq!(net.node_ids(), &[20, 30, 10]);
        assert_eq!(net.parent_of(0), 0);
        assert_eq!(net.parent_of(1), 0);
        assert_eq!(net.parent_of(2), 2);
        for i in 0..net.len() {
            assert!(net.parent_of(i) < i + 1);
        }
        assert_eq!(net.children_of(2).collect::<Vec<_>>(), vec![2]);
        assert_eq!(net.position_of(10), Some(2));
    }

    #[test]
    fn rejects_cycle() {
        let mut d = data(&[1, 2, 3], &[(0, 1), (1, 2), (2, 1)]);
        d.branches[2].to = 0;
        // 0-1, 1-2, 2-0 is a cycle and node 3 is isolated
        assert!(matches!(FeederNetwork::new(&d), Err(NetworkError::NotRadial(_))));
    }

    #[test]
    fn rejects_disconnected() {
        let d = data(&[1, 2, 3], &[(0, 1), (2, 3), (3, 2)]);
        assert!(matches!(FeederNetwork::new(&d), Err(NetworkError::NotRadial(_))));
    }

    #[test]
    fn rejects_unrooted() {
        let d = data(&[1, 2], &[(1, 2), (2, 1)]);
        assert_eq!(FeederNetwork::new(&d), Err(NetworkError::NotRooted(0)));
    }

    #[test]
    fn rejects_branch_count_mismatch() {
        let d = data(&[1, 2], &[(0, 1)]);
        assert!(matches!(FeederNetwork::new(&d), Err(NetworkError::NotRadial(_))));
    }

    #[test]
    fn rejects_capacitive_branch() {
        let mut d = data(&[1], &[(0, 1)]);
        d.branches[0].x = 0.0;
        assert!(matches!(
            FeederNetwork::new(&d),
            Err(NetworkError::InvalidImpedance { .. })
        ));
        d.branches[0].x = 0.1;
        d.branches[0].r = -0.1;
        assert!(matches!(
            FeederNetwork::new(&d),
            Err(NetworkError::InvalidImpedance { .. })
        ));
    }

    #[test]
    fn rejects_bad_bounds() {
        let mut d = data(&[1], &[(0, 1)]);
        d.nodes[0].v_min = 1.2;
        assert_eq!(FeederNetwork::new(&d), Err(NetworkError::InvalidVoltageBounds(1)));
        let mut d = data(&[1], &[(0, 1)]);
        d.branches[0].l_min = -1.0;
        assert!(matches!(
            FeederNetwork::new(&d),
            Err(NetworkError::InvalidCurrentBounds { .. })
        ));
    }

    #[test]
    fn rejects_duplicates_and_unknowns() {
        let d = data(&[1, 1], &[(0, 1), (1, 0)]);
        assert_eq!(FeederNetwork::new(&d), Err(NetworkError::DuplicateNode(1)));
        let d = data(&[1], &[(0, 7)]);
        assert_eq!(FeederNetwork::new(&d), Err(NetworkError::UnknownNode(7)));
    }

    #[test]
    fn to_data_round_trips() {
        let net = FeederNetwork::new(&data(&[5, 6, 7], &[(6, 7), (0, 5), (5, 6)])).unwrap();
        let again = FeederNetwork::new(&net.to_data()).unwrap();
        assert_eq!(net, again);
    }
}
