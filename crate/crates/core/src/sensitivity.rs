//! Constant matrices of the linearised branch-flow model.
//!
//! With `l` the vector of squared branch currents, the nodal squared voltages
//! satisfy `V = v0 1 + Mp p + Mq q - H l` where
//!
//! * `A = [0 I] B - I` (parent/child adjacency of non-root nodes),
//! * `C = (I - A)^-1` (subtree indicator, `C[i][j] = 1` iff `j` is in the subtree of `i`),
//! * `D_R = C A R`, `D_X = C A X`,
//! * `Mp = 2 C^T R C`, `Mq = 2 C^T X C`,
//! * `H = C^T (2 (R D_R + X D_X) + Z^2)`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::network::FeederNetwork;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensitivityError {
    #[error("triangular solve hit a zero pivot at row {0}; node ordering is not topological")]
    SingularSystem(usize),
}

/// Incidence matrix `B` ((n+1) x n) and the derived `A` (n x n).
#[derive(Debug, Clone, PartialEq)]
pub struct Incidence {
    pub b: DMatrix<f64>,
    pub a: DMatrix<f64>,
}

/// All constant matrices, in the network's internal node order.
///
/// Immutable once built; safe to share between threads.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrices {
    pub b: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub r: DVector<f64>,
    pub x: DVector<f64>,
    pub z2: DVector<f64>,
    pub d_r: DMatrix<f64>,
    pub d_x: DMatrix<f64>,
    pub m_p: DMatrix<f64>,
    pub m_q: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub v0: f64,
}

/// Build `B` and `A`. Column `j` of `B` is the branch feeding internal node `j + 1`.
pub fn build_incidence(network: &FeederNetwork) -> Incidence {
    let n = network.len();
    let mut b = DMatrix::zeros(n + 1, n);
    for j in 0..n {
        b[(j + 1, j)] = 1.0;
        b[(network.parent_of(j), j)] = 1.0;
    }
    let a = b.rows(1, n).into_owned() - DMatrix::identity(n, n);
    Incidence { b, a }
}

/// Solve `(I - A) X = rhs` by back substitution, `I - A` upper triangular.
fn solve_unit_upper(i_minus_a: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>, SensitivityError> {
    let n = i_minus_a.nrows();
    let mut out = rhs.clone();
    for col in 0..rhs.ncols() {
        for i in (0..n).rev() {
            let pivot = i_minus_a[(i, i)];
            if pivot == 0.0 {
                return Err(SensitivityError::SingularSystem(i));
            }
            let mut acc = out[(i, col)];
            for k in i + 1..n {
                acc -= i_minus_a[(i, k)] * out[(k, col)];
            }
            out[(i, col)] = acc / pivot;
        }
    }
    Ok(out)
}

pub fn build_sensitivities(
    network: &FeederNetwork,
    incidence: &Incidence,
) -> Result<SensitivityMatrices, SensitivityError> {
    let n = network.len();
    let a = &incidence.a;
    let i_minus_a = DMatrix::identity(n, n) - a;
    if (0..n).any(|i| (0..i).any(|j| i_minus_a[(i, j)] != 0.0)) {
        // lower part must vanish under a topological order
        let row = (0..n)
            .find(|&i| (0..i).any(|j| i_minus_a[(i, j)] != 0.0))
            .unwrap_or(0);
        return Err(SensitivityError::SingularSystem(row));
    }

    let r = DVector::from_column_slice(network.r());
    let x = DVector::from_column_slice(network.x());
    let z2 = r.component_mul(&r) + x.component_mul(&x);
    let rm = DMatrix::from_diagonal(&r);
    let xm = DMatrix::from_diagonal(&x);

    let c = solve_unit_upper(&i_minus_a, &DMatrix::identity(n, n))?;
    let d_r = solve_unit_upper(&i_minus_a, &(a * &rm))?;
    let d_x = solve_unit_upper(&i_minus_a, &(a * &xm))?;

    let ct = c.transpose();
    let m_p = 2.0 * &ct * &rm * &c;
    let m_q = 2.0 * &ct * &xm * &c;
    let inner = 2.0 * (&rm * &d_r + &xm * &d_x) + DMatrix::from_diagonal(&z2);
    let h = &ct * inner;

    Ok(SensitivityMatrices {
        b: incidence.b.clone(),
        a: a.clone(),
        c,
        r,
        x,
        z2,
        d_r,
        d_x,
        m_p,
        m_q,
        h,
        v0: network.v0(),
    })
}

impl SensitivityMatrices {
    pub fn from_network(network: &FeederNetwork) -> Result<Self, SensitivityError> {
        build_sensitivities(network, &build_incidence(network))
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// `I - A`.
    pub fn i_minus_a(&self) -> DMatrix<f64> {
        DMatrix::identity(self.len(), self.len()) - &self.a
    }

    /// Determinant of `I - A`, taken as the product of its diagonal (the matrix is upper triangular).
    pub fn det_i_minus_a(&self) -> f64 {
        self.i_minus_a().diagonal().iter().product()
    }

    /// `max |C (I - A) - I|` over all entries.
    pub fn inverse_residual(&self) -> f64 {
        let n = self.len();
        (&self.c * self.i_minus_a() - DMatrix::<f64>::identity(n, n)).amax()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{BranchData, NetworkData, NodeLimits};

    fn chain(n: usize) -> FeederNetwork {
        let data = NetworkData {
            substation: 0,
            v0: 1.0,
            base_kv: 4.16,
            base_mva: 1.0,
            nodes: (1..=n).map(|id| NodeLimits { id, v_min: 0.9, v_max: 1.1 }).collect(),
            branches: (1..=n)
                .map(|id| BranchData {
                    from: id - 1,
                    to: id,
                    r: 0.01 * id as f64,
                    x: 0.02 * id as f64,
                    l_min: 0.0,
                    l_max: 1.0,
                })
                .collect(),
        };
        FeederNetwork::new(&data).unwrap()
    }

    #[test]
    fn single_branch_incidence() {
        let inc = build_incidence(&chain(1));
        assert_eq!(inc.b, DMatrix::from_row_slice(2, 1, &[1.0, 1.0]));
        assert_eq!(inc.a, DMatrix::from_row_slice(1, 1, &[0.0]));
    }

    #[test]
    fn three_node_chain() {
        let m = SensitivityMatrices::from_network(&chain(2)).unwrap();
        assert_eq!(m.a, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert_eq!(m.c, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]));
        // columns of B carry exactly two unit entries
        for j in 0..2 {
            assert_eq!(m.b.column(j).sum(), 2.0);
        }
        assert_eq!(m.det_i_minus_a(), 1.0);
    }

    #[test]
    fn single_branch_products() {
        let m = SensitivityMatrices::from_network(&chain(1)).unwrap();
        assert_eq!(m.d_r[(0, 0)], 0.0);
        assert_eq!(m.d_x[(0, 0)], 0.0);
        assert!((m.h[(0, 0)] - (0.01f64.powi(2) + 0.02f64.powi(2))).abs() < 1e-15);
        assert!((m.m_p[(0, 0)] - 0.02).abs() < 1e-15);
        assert!((m.m_q[(0, 0)] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn zero_pivot_is_reported() {
        let mut i_minus_a = DMatrix::<f64>::identity(2, 2);
        i_minus_a[(1, 1)] = 0.0;
        assert_eq!(
            solve_unit_upper(&i_minus_a, &DMatrix::identity(2, 2)),
            Err(SensitivityError::SingularSystem(1))
        );
    }

    #[test]
    fn chain_h_matches_hand_expansion() {
        // 0-1-2: H = C^T (2 (R D_R + X D_X) + Z^2) with D_R = [[0, r2], [0, 0]]
        let net = chain(2);
        let m = SensitivityMatrices::from_network(&net).unwrap();
        let (r1, r2, x1, x2) = (0.01, 0.02, 0.02, 0.04);
        let inner = [r1 * r1 + x1 * x1, 2.0 * (r1 * r2 + x1 * x2), 0.0, r2 * r2 + x2 * x2];
        let expect = [inner[0], inner[1], inner[0], inner[1] + inner[3]];
        for (k, e) in expect.iter().enumerate() {
            assert!((m.h[(k / 2, k % 2)] - e).abs() < 1e-15, "entry {k}");
        }
    }
}
