//! Variable layout, power balance and its first and second derivatives.
//!
//! Everything here works in per-unit. The decision vector is
//! `[θ (non-slack buses), |V| (all buses), P_G, Q_G]`; the slack angle is
//! pinned at zero by leaving it out of the vector.

use num_complex::Complex64;

use super::OpfError;
use crate::grid::{build_admittance, AdmittanceMatrix, GridCase};
use crate::linalg::Matrix;

/// Index map between the flat decision vector and named quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct VarLayout {
    pub n_bus: usize,
    pub n_gen: usize,
    pub slack: usize,
    angle: Vec<Option<usize>>,
}

impl VarLayout {
    fn new(n_bus: usize, n_gen: usize, slack: usize) -> Self {
        let mut next = 0;
        let angle = (0..n_bus)
            .map(|i| {
                if i == slack {
                    None
                } else {
                    next += 1;
                    Some(next - 1)
                }
            })
            .collect();
        VarLayout {
            n_bus,
            n_gen,
            slack,
            angle,
        }
    }

    pub fn n_vars(&self) -> usize {
        2 * self.n_bus - 1 + 2 * self.n_gen
    }

    pub fn angle(&self, bus: usize) -> Option<usize> {
        self.angle[bus]
    }

    pub fn vmag(&self, bus: usize) -> usize {
        self.n_bus - 1 + bus
    }

    pub fn pg(&self, k: usize) -> usize {
        2 * self.n_bus - 1 + k
    }

    pub fn qg(&self, k: usize) -> usize {
        2 * self.n_bus - 1 + self.n_gen + k
    }

    /// Column of the decision vector for the `(θ, |V|)` coordinate `c`,
    /// where `c < n` is an angle and `c >= n` a magnitude.
    fn voltage_col(&self, c: usize) -> Option<usize> {
        if c < self.n_bus {
            self.angle[c]
        } else {
            Some(self.vmag(c - self.n_bus))
        }
    }
}

/// Operating point in per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    pub p_gen: Vec<f64>,
    pub q_gen: Vec<f64>,
}

/// Side of a variable bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSide {
    Lower,
    Upper,
}

/// One inequality `h(x) ≤ 0` of the form `±(x_var − bound)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarBound {
    pub var: usize,
    pub side: BoundSide,
    /// Bound in per-unit.
    pub bound: f64,
    /// Physical units per per-unit for reporting (base MVA for P/Q, 1 for |V|).
    pub unit: f64,
}

impl VarBound {
    pub fn sign(&self) -> f64 {
        match self.side {
            BoundSide::Lower => -1.0,
            BoundSide::Upper => 1.0,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.sign() * (x[self.var] - self.bound)
    }
}

#[derive(Debug, Clone, Copy)]
struct Coupling {
    i: usize,
    j: usize,
    g: f64,
    b: f64,
}

/// AC OPF instance: costs, nodal balance and variable bounds.
#[derive(Debug, Clone)]
pub struct OpfProblem {
    pub case: GridCase,
    pub y: AdmittanceMatrix,
    pub layout: VarLayout,
    gen_bus: Vec<usize>,
    couplings: Vec<Coupling>,
    diag: Vec<Complex64>,
}

impl OpfProblem {
    pub fn new(case: GridCase) -> Result<Self, OpfError> {
        case.validate().map_err(|e| match e {
            crate::grid::GridError::InvalidLimits(msg) => OpfError::InfeasibleBounds(msg),
            other => OpfError::Grid(other),
        })?;
        let y = build_admittance(&case)?;
        Ok(Self::with_admittance(case, y))
    }

    /// Reuses an already built admittance matrix; loads and costs may differ
    /// from the case it was built from but the topology must not.
    pub fn with_admittance(case: GridCase, y: AdmittanceMatrix) -> Self {
        let n = case.n_buses();
        let slack = case.slack_index().expect("validated case has a slack bus");
        let layout = VarLayout::new(n, case.n_generators(), slack);
        let order = case.bus_order();
        let gen_bus = case.generators.iter().map(|g| order[&g.bus]).collect();
        let mut couplings = Vec::new();
        let mut diag = Vec::with_capacity(n);
        for i in 0..n {
            diag.push(y.get(i, i));
            for j in 0..n {
                let yij = y.get(i, j);
                if i != j && yij.norm_sqr() > 0.0 {
                    couplings.push(Coupling {
                        i,
                        j,
                        g: yij.re,
                        b: yij.im,
                    });
                }
            }
        }
        OpfProblem {
            case,
            y,
            layout,
            gen_bus,
            couplings,
            diag,
        }
    }

    pub fn base(&self) -> f64 {
        self.case.base_mva
    }

    pub fn n_eq(&self) -> usize {
        2 * self.layout.n_bus
    }

    pub fn n_ineq(&self) -> usize {
        4 * self.layout.n_gen + 2 * self.layout.n_bus
    }

    /// Bus row of each generator.
    pub fn gen_bus(&self) -> &[usize] {
        &self.gen_bus
    }

    /// Inequalities ordered as P_G lower, P_G upper, Q_G lower, Q_G upper,
    /// |V| lower, |V| upper.
    pub fn bounds(&self) -> Vec<VarBound> {
        let base = self.base();
        let lay = &self.layout;
        let gens = &self.case.generators;
        let mut out = Vec::with_capacity(self.n_ineq());
        let mut push = |var, side, bound, unit| {
            out.push(VarBound {
                var,
                side,
                bound,
                unit,
            })
        };
        for (k, g) in gens.iter().enumerate() {
            push(lay.pg(k), BoundSide::Lower, g.p_min / base, base);
        }
        for (k, g) in gens.iter().enumerate() {
            push(lay.pg(k), BoundSide::Upper, g.p_max / base, base);
        }
        for (k, g) in gens.iter().enumerate() {
            push(lay.qg(k), BoundSide::Lower, g.q_min / base, base);
        }
        for (k, g) in gens.iter().enumerate() {
            push(lay.qg(k), BoundSide::Upper, g.q_max / base, base);
        }
        for (i, b) in self.case.buses.iter().enumerate() {
            push(lay.vmag(i), BoundSide::Lower, b.v_min, 1.0);
        }
        for (i, b) in self.case.buses.iter().enumerate() {
            push(lay.vmag(i), BoundSide::Upper, b.v_max, 1.0);
        }
        out
    }

    pub fn pack(&self, pt: &OperatingPoint) -> Vec<f64> {
        let lay = &self.layout;
        let mut x = vec![0.0; lay.n_vars()];
        for i in 0..lay.n_bus {
            if let Some(a) = lay.angle(i) {
                x[a] = pt.v_ang[i] - pt.v_ang[lay.slack];
            }
            x[lay.vmag(i)] = pt.v_mag[i];
        }
        for k in 0..lay.n_gen {
            x[lay.pg(k)] = pt.p_gen[k];
            x[lay.qg(k)] = pt.q_gen[k];
        }
        x
    }

    pub fn unpack(&self, x: &[f64]) -> OperatingPoint {
        let lay = &self.layout;
        OperatingPoint {
            v_mag: (0..lay.n_bus).map(|i| x[lay.vmag(i)]).collect(),
            v_ang: (0..lay.n_bus)
                .map(|i| lay.angle(i).map_or(0.0, |a| x[a]))
                .collect(),
            p_gen: (0..lay.n_gen).map(|k| x[lay.pg(k)]).collect(),
            q_gen: (0..lay.n_gen).map(|k| x[lay.qg(k)]).collect(),
        }
    }

    /// Net injections `P_i + jQ_i = V_i·conj(I_i)` with `I = Y·V`.
    pub fn injections(&self, v_mag: &[f64], v_ang: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let v: Vec<Complex64> = v_mag
            .iter()
            .zip(v_ang)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect();
        let current = self.y.currents(&v);
        v.iter()
            .zip(&current)
            .map(|(vi, ii)| {
                let s = vi * ii.conj();
                (s.re, s.im)
            })
            .unzip()
    }

    /// Balance residual `[P_G − P_L − P(V); Q_G − Q_L − Q(V)]`, per-unit,
    /// generator outputs summed per bus.
    pub fn balance(&self, pt: &OperatingPoint) -> Vec<f64> {
        let n = self.layout.n_bus;
        let base = self.base();
        let (p, q) = self.injections(&pt.v_mag, &pt.v_ang);
        let mut r = vec![0.0; 2 * n];
        for (i, bus) in self.case.buses.iter().enumerate() {
            r[i] = -bus.p_load / base - p[i];
            r[n + i] = -bus.q_load / base - q[i];
        }
        for (k, &i) in self.gen_bus.iter().enumerate() {
            r[i] += pt.p_gen[k];
            r[n + i] += pt.q_gen[k];
        }
        r
    }

    /// Derivatives of the injections with respect to `(θ, |V|)` over all buses:
    /// returns a `2n × 2n` matrix with rows `[P; Q]` and columns `[θ; |V|]`.
    pub fn injection_jacobian(&self, v_mag: &[f64], v_ang: &[f64]) -> Matrix {
        let n = self.layout.n_bus;
        let mut jac = Matrix::zeros(2 * n, 2 * n);
        for c in &self.couplings {
            let (i, j) = (c.i, c.j);
            let (s, co) = (v_ang[i] - v_ang[j]).sin_cos();
            let (vi, vj) = (v_mag[i], v_mag[j]);
            let gc_bs = c.g * co + c.b * s;
            let gs_bc = c.g * s - c.b * co;
            // ∂P_i
            jac[(i, i)] -= vi * vj * gs_bc;
            jac[(i, j)] += vi * vj * gs_bc;
            jac[(i, n + i)] += vj * gc_bs;
            jac[(i, n + j)] += vi * gc_bs;
            // ∂Q_i
            jac[(n + i, i)] += vi * vj * gc_bs;
            jac[(n + i, j)] -= vi * vj * gc_bs;
            jac[(n + i, n + i)] += vj * gs_bc;
            jac[(n + i, n + j)] += vi * gs_bc;
        }
        for (i, d) in self.diag.iter().enumerate() {
            jac[(i, n + i)] += 2.0 * v_mag[i] * d.re;
            jac[(n + i, n + i)] -= 2.0 * v_mag[i] * d.im;
        }
        jac
    }

    /// Jacobian of [`balance`](Self::balance) with respect to the decision vector.
    pub fn balance_jacobian(&self, pt: &OperatingPoint) -> Matrix {
        let lay = &self.layout;
        let n = lay.n_bus;
        let inj = self.injection_jacobian(&pt.v_mag, &pt.v_ang);
        let mut jac = Matrix::zeros(2 * n, lay.n_vars());
        for r in 0..2 * n {
            for c in 0..2 * n {
                if let Some(col) = lay.voltage_col(c) {
                    jac[(r, col)] = -inj[(r, c)];
                }
            }
        }
        for (k, &i) in self.gen_bus.iter().enumerate() {
            jac[(i, lay.pg(k))] = 1.0;
            jac[(n + i, lay.qg(k))] = 1.0;
        }
        jac
    }

    /// Hessian of `Σ_i λ_i·P_i(V) + ν_i·Q_i(V)` over `(θ, |V|)` of all buses,
    /// as a `2n × 2n` matrix.
    pub fn injection_hessian(
        &self,
        v_mag: &[f64],
        v_ang: &[f64],
        lambda: &[f64],
        nu: &[f64],
    ) -> Matrix {
        let n = self.layout.n_bus;
        let mut h = Matrix::zeros(2 * n, 2 * n);
        for c in &self.couplings {
            let (i, j) = (c.i, c.j);
            let (s, co) = (v_ang[i] - v_ang[j]).sin_cos();
            let (vi, vj) = (v_mag[i], v_mag[j]);
            let (li, ni) = (lambda[i], nu[i]);
            let phi = li * (c.g * co + c.b * s) + ni * (c.g * s - c.b * co);
            let dphi = li * (-c.g * s + c.b * co) + ni * (c.g * co + c.b * s);
            let p = vi * vj;
            h[(i, i)] -= p * phi;
            h[(j, j)] -= p * phi;
            h[(i, j)] += p * phi;
            h[(j, i)] += p * phi;
            for (row, col, val) in [
                (i, n + i, vj * dphi),
                (i, n + j, vi * dphi),
                (j, n + i, -vj * dphi),
                (j, n + j, -vi * dphi),
            ] {
                h[(row, col)] += val;
                h[(col, row)] += val;
            }
            h[(n + i, n + j)] += phi;
            h[(n + j, n + i)] += phi;
        }
        for (i, d) in self.diag.iter().enumerate() {
            h[(n + i, n + i)] += 2.0 * (lambda[i] * d.re - nu[i] * d.im);
        }
        h
    }

    /// Hessian of `−λᵀ·balance` with respect to the decision vector; the
    /// balance is linear in the generator outputs so only the voltage block
    /// is nonzero.
    pub fn balance_lagrangian_hessian(
        &self,
        pt: &OperatingPoint,
        lambda: &[f64],
        nu: &[f64],
        out: &mut Matrix,
    ) {
        let lay = &self.layout;
        let n = lay.n_bus;
        let h = self.injection_hessian(&pt.v_mag, &pt.v_ang, lambda, nu);
        for r in 0..2 * n {
            let Some(row) = lay.voltage_col(r) else {
                continue;
            };
            for c in 0..2 * n {
                if let Some(col) = lay.voltage_col(c) {
                    out[(row, col)] += h[(r, c)];
                }
            }
        }
    }

    /// Generation cost in $/h with outputs in per-unit.
    pub fn cost(&self, p_gen: &[f64]) -> f64 {
        let base = self.base();
        self.case
            .generators
            .iter()
            .zip(p_gen)
            .map(|(g, &p)| g.cost.eval(p * base))
            .sum()
    }

    /// `∂cost/∂P_G` per generator, $/h per per-unit.
    pub fn cost_gradient(&self, p_gen: &[f64]) -> Vec<f64> {
        let base = self.base();
        self.case
            .generators
            .iter()
            .zip(p_gen)
            .map(|(g, &p)| g.cost.marginal(p * base) * base)
            .collect()
    }

    /// `∂²cost/∂P_G²` per generator.
    pub fn cost_curvature(&self) -> Vec<f64> {
        let base = self.base();
        self.case
            .generators
            .iter()
            .map(|g| 2.0 * g.cost.a * base * base)
            .collect()
    }
}

/// Power balance residual for a dispatch given in physical units (MW, MVAr),
/// returned in per-unit with active rows first.
pub fn eval_balance(
    v_mag: &[f64],
    v_ang: &[f64],
    p_gen: &[f64],
    q_gen: &[f64],
    problem: &OpfProblem,
) -> Result<Vec<f64>, OpfError> {
    let lay = &problem.layout;
    for (name, len, want) in [
        ("v_mag", v_mag.len(), lay.n_bus),
        ("v_ang", v_ang.len(), lay.n_bus),
        ("p_gen", p_gen.len(), lay.n_gen),
        ("q_gen", q_gen.len(), lay.n_gen),
    ] {
        if len != want {
            return Err(OpfError::DimensionMismatch {
                what: name,
                expected: want,
                got: len,
            });
        }
    }
    let base = problem.base();
    let pt = OperatingPoint {
        v_mag: v_mag.to_vec(),
        v_ang: v_ang.to_vec(),
        p_gen: p_gen.iter().map(|p| p / base).collect(),
        q_gen: q_gen.iter().map(|q| q / base).collect(),
    };
    Ok(problem.balance(&pt))
}
