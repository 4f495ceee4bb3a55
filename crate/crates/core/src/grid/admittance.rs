use std::collections::HashMap;

use num_complex::Complex64;

use super::{GridCase, GridError};

/// Dense nodal admittance matrix in per-unit, rows ordered like `case.buses`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    n: usize,
    y: Vec<Complex64>,
    bus_order: HashMap<u32, usize>,
}

impl AdmittanceMatrix {
    pub fn from_dense(n: usize, y: Vec<Complex64>, bus_order: HashMap<u32, usize>) -> Self {
        assert_eq!(y.len(), n * n);
        AdmittanceMatrix { n, y, bus_order }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.y[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.y[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.y
    }

    pub fn bus_order(&self) -> &HashMap<u32, usize> {
        &self.bus_order
    }

    pub fn index_of(&self, bus: u32) -> Option<usize> {
        self.bus_order.get(&bus).copied()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).norm() <= tol))
    }

    /// Nodal current injections `I = Y·V`.
    pub fn currents(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.n);
        (0..self.n)
            .map(|i| self.row(i).iter().zip(v).map(|(y, v)| y * v).sum())
            .collect()
    }
}

/// Stamps every branch π-model and bus shunt into a dense `Y`.
///
/// For a branch with series admittance `y = 1/(r + jx)`, charging `b` and tap
/// `t` on the from side: `Y_ff += (y + jb/2)/t²`, `Y_tt += y + jb/2`,
/// `Y_ft = Y_tf -= y/t`.
pub fn build_admittance(case: &GridCase) -> Result<AdmittanceMatrix, GridError> {
    let n = case.n_buses();
    let order = case.bus_order();
    let mut y = vec![Complex64::new(0.0, 0.0); n * n];

    for (i, bus) in case.buses.iter().enumerate() {
        y[i * n + i] += Complex64::new(bus.g_shunt, bus.b_shunt);
    }
    for (k, br) in case.branches.iter().enumerate() {
        let z = Complex64::new(br.r, br.x);
        if z.norm_sqr() == 0.0 {
            return Err(GridError::ZeroImpedanceBranch { branch: k });
        }
        let f = *order.get(&br.from).ok_or(GridError::DanglingBranch {
            branch: k,
            line: None,
            bus: br.from,
        })?;
        let t = *order.get(&br.to).ok_or(GridError::DanglingBranch {
            branch: k,
            line: None,
            bus: br.to,
        })?;
        let ys = z.inv();
        let half_b = Complex64::new(0.0, br.b_charging / 2.0);
        let tap = br.tap;
        y[f * n + f] += (ys + half_b) / (tap * tap);
        y[t * n + t] += ys + half_b;
        y[f * n + t] -= ys / tap;
        y[t * n + f] -= ys / tap;
    }
    Ok(AdmittanceMatrix::from_dense(n, y, order))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{parse_case, Branch};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    const TWO_BUS: &str = "\
BUS
1, slack, 0, 0, 0.9, 1.1, 0, 0
2, pq, 50, 0, 0.9, 1.1, 0, 0
BRANCH
1, 2, 0, 0.1, 0, 1
GEN
1, 0, 100, -50, 50, 0, 10, 0
";

    #[test]
    fn single_lossless_line() {
        let y = build_admittance(&parse_case(TWO_BUS).unwrap()).unwrap();
        let expect = [c(0.0, -10.0), c(0.0, 10.0), c(0.0, 10.0), c(0.0, -10.0)];
        for (got, want) in y.as_slice().iter().zip(expect) {
            assert!((got - want).norm() < 1e-12);
        }
    }

    #[test]
    fn shunt_only_bus() {
        let case = parse_case("BUS\n1, slack, 0, 0, 0.9, 1.1, 0, 0.5\n").unwrap();
        let y = build_admittance(&case).unwrap();
        assert_eq!(y.as_slice(), &[c(0.0, 0.5)]);
    }

    /// Sum of independent per-branch 2×2 stamps.
    fn stamp_sum(case: &GridCase) -> Vec<Complex64> {
        let n = case.n_buses();
        let order = case.bus_order();
        let mut y = vec![c(0.0, 0.0); n * n];
        for br in &case.branches {
            let ys = c(1.0, 0.0) / c(br.r, br.x);
            let sh = c(0.0, br.b_charging / 2.0);
            let (f, t) = (order[&br.from], order[&br.to]);
            let stamp = [
                [(ys + sh) / (br.tap * br.tap), -ys / br.tap],
                [-ys / br.tap, ys + sh],
            ];
            for (a, ia) in [(0, f), (1, t)] {
                for (b, ib) in [(0, f), (1, t)] {
                    y[ia * n + ib] += stamp[a][b];
                }
            }
        }
        for (i, b) in case.buses.iter().enumerate() {
            y[i * n + i] += c(b.g_shunt, b.b_shunt);
        }
        y
    }

    fn ring() -> GridCase {
        parse_case(
            "BUS\n1, slack, 0, 0, 0.9, 1.1, 0, 0\n2, pq, 0, 0, 0.9, 1.1, 0, 0\n3, pq, 0, 0, 0.9, 1.1, 0, 0\n\
             BRANCH\n1, 2, 0.02, 0.2, 0, 1\n2, 3, 0.02, 0.2, 0, 1\n3, 1, 0.02, 0.2, 0, 1\n",
        )
        .unwrap()
    }

    #[test]
    fn ring_is_symmetric_with_zero_row_sums() {
        let case = ring();
        let y = build_admittance(&case).unwrap();
        let oracle = stamp_sum(&case);
        for (a, b) in y.as_slice().iter().zip(&oracle) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(y.is_symmetric(0.0));
        for i in 0..3 {
            let s: Complex64 = y.row(i).iter().sum();
            assert!(s.norm() < 1e-12);
        }
    }

    #[test]
    fn row_sums_equal_shunt_plus_charging() {
        let mut case = ring();
        case.branches[0].b_charging = 0.3;
        case.buses[2].g_shunt = 0.01;
        case.buses[2].b_shunt = -0.2;
        let y = build_admittance(&case).unwrap();
        let expected = [c(0.0, 0.15), c(0.0, 0.15), c(0.01, -0.2)];
        for (i, want) in expected.iter().enumerate() {
            let s: Complex64 = y.row(i).iter().sum();
            assert!((s - want).norm() < 1e-12, "row {i}: {s}");
        }
    }

    #[test]
    fn tapped_branch_stays_symmetric() {
        let mut case = ring();
        case.branches[1].tap = 0.97;
        let y = build_admittance(&case).unwrap();
        assert!(y.is_symmetric(1e-14));
        let oracle = stamp_sum(&case);
        for (a, b) in y.as_slice().iter().zip(&oracle) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn stamps_are_additive_over_branch_disjoint_cases() {
        let base = ring();
        let mut first = base.clone();
        first.branches.truncate(1);
        let mut second = base.clone();
        second.branches.drain(..1);
        second.branches.push(Branch {
            from: 1,
            to: 3,
            r: 0.01,
            x: 0.05,
            b_charging: 0.02,
            tap: 1.0,
        });
        let mut union = base.clone();
        union.branches = first
            .branches
            .iter()
            .chain(&second.branches)
            .cloned()
            .collect();
        let ya = build_admittance(&first).unwrap();
        let yb = build_admittance(&second).unwrap();
        let yu = build_admittance(&union).unwrap();
        for k in 0..9 {
            let sum = ya.as_slice()[k] + yb.as_slice()[k];
            assert!((yu.as_slice()[k] - sum).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_impedance_is_rejected() {
        let mut case = ring();
        case.branches[2].r = 0.0;
        case.branches[2].x = 0.0;
        assert_eq!(
            build_admittance(&case),
            Err(GridError::ZeroImpedanceBranch { branch: 2 })
        );
    }
}
