//! Linearized energy M, flow linearization L, its adjoint, and the
//! coercivity certificates on a discrete X_Q space.
//!
//! Pairs are stored as (density, radial gradient of the second component).

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::closed;
use crate::error::OperatorError;
use crate::grid::{Normalization, Parity, RadialField, RadialGrid};
use crate::profiles::{build_t1s1, LevelOne};

pub type Pair = (Vec<f64>, Vec<f64>);

/// <(u,g1),(f,g2)> = 2 pi int (u f + g1 g2) r dr.
pub fn pairing(grid: &RadialGrid, a: (&[f64], &[f64]), b: (&[f64], &[f64])) -> f64 {
    let w = grid.quad_weights();
    let mut s = 0.0;
    for i in 0..w.len() {
        s += w[i] * (a.0[i] * b.0[i] + a.1[i] * b.1[i]);
    }
    2.0 * PI * s
}

/// ||(u,g)||_{X_Q}^2 = int u^2/Q + int g^2.
pub fn xq_norm_sq(grid: &RadialGrid, u: &[f64], g: &[f64]) -> f64 {
    let w = grid.quad_weights();
    let nodes = grid.nodes();
    let mut s = 0.0;
    for i in 0..w.len() {
        s += w[i] * (u[i] * u[i] / closed::q(nodes[i]) + g[i] * g[i]);
    }
    2.0 * PI * s
}

/// M(u, v) = (u/Q + v, d_r(v - phi_u)); v is recovered from its gradient.
pub fn apply_m(grid: &Arc<RadialGrid>, u: &[f64], g: &[f64]) -> Result<Pair, OperatorError> {
    let gf = RadialField::new(grid.clone(), g.to_vec(), Parity::Odd)?;
    let v = gf.potential_from_gradient(Normalization::LogConvolution)?;
    let uf = RadialField::new(grid.clone(), u.to_vec(), Parity::Even)?;
    let dphi_u = uf.poisson_field();
    let nodes = grid.nodes();
    let first = (0..nodes.len()).map(|i| u[i] / closed::q(nodes[i]) + v.values[i]).collect();
    let second = (0..nodes.len()).map(|i| g[i] - dphi_u.values[i]).collect();
    Ok((first, second))
}

/// <M(u,v),(u,v)> for int u = 0: int u^2/Q - 2 int m_u g dr + int g^2.
pub fn energy_form(grid: &RadialGrid, u: &[f64], g: &[f64]) -> f64 {
    let m = grid.cumulative(u, Parity::Even, |t| t);
    let nodes = grid.nodes();
    let w = grid.quad_weights();
    let mut s = 0.0;
    for i in 1..w.len() {
        let r = nodes[i];
        s += w[i] * (u[i] * u[i] / closed::q(r) - 2.0 * m[i] * g[i] / r + g[i] * g[i]);
    }
    s += w[0] * u[0] * u[0] / closed::q(0.0);
    2.0 * PI * s
}

/// L(e, eta) = (Lap e + e Q + e' phi_Q' + Q Lap eta + Q' eta', d_r(Lap eta - e)).
pub fn apply_l(grid: &RadialGrid, e: &[f64], g: &[f64]) -> Pair {
    let nodes = grid.nodes();
    let lap = grid.laplacian(e);
    let de = grid.d1(e, Parity::Even);
    let div = grid.divergence(g);
    let ddiv = grid.d1(&div, Parity::Even);
    let mut a = vec![0.0; nodes.len()];
    let mut b = vec![0.0; nodes.len()];
    for i in 0..nodes.len() {
        let r = nodes[i];
        let qq = closed::q(r);
        a[i] = lap[i] + e[i] * qq + de[i] * closed::dphi_q(r) + qq * div[i] + closed::dq(r) * g[i];
        b[i] = ddiv[i] - de[i];
    }
    (a, b)
}

/// L*(e, eta) = (div(Q grad e)/Q + Lap eta, d_r(Lap eta) - Q e').
pub fn apply_lstar(grid: &RadialGrid, e: &[f64], g: &[f64]) -> Pair {
    let nodes = grid.nodes();
    let lap = grid.laplacian(e);
    let de = grid.d1(e, Parity::Even);
    let div = grid.divergence(g);
    let ddiv = grid.d1(&div, Parity::Even);
    let mut a = vec![0.0; nodes.len()];
    let mut b = vec![0.0; nodes.len()];
    for i in 0..nodes.len() {
        let r = nodes[i];
        a[i] = lap[i] - 4.0 * r / (1.0 + r * r) * de[i] + div[i];
        b[i] = ddiv[i] - closed::q(r) * de[i];
    }
    (a, b)
}

/// Phi_{0,M} = (chi_M r^2, -4 int_0^r log(1+t^2)/t chi_M), second stored as its gradient.
pub fn phi0_direction(grid: &RadialGrid, m: f64) -> Pair {
    let nodes = grid.nodes();
    let a = nodes.iter().map(|&r| closed::chi(r, m) * r * r).collect();
    let b = nodes
        .iter()
        .map(|&r| if r == 0.0 { 0.0 } else { -4.0 * (1.0 + r * r).ln() / r * closed::chi(r, m) })
        .collect();
    (a, b)
}

pub fn lambda_q_pair(grid: &RadialGrid) -> Pair {
    (grid.sample(closed::lambda_q), grid.sample(closed::dphi_lambda_q))
}

#[derive(Clone, Debug, Serialize)]
pub struct PairingReport {
    #[serde(rename = "PhiM_T1")]
    pub phim_t1: f64,
    #[serde(rename = "PhiM_LambdaQ")]
    pub phim_lambdaq: f64,
    #[serde(rename = "Phi0M_T1")]
    pub phi0_t1: f64,
}

/// The orthogonality direction Phi_M and L* Phi_M.
#[derive(Clone, Debug)]
pub struct PhiM {
    pub m: f64,
    pub c_m: f64,
    pub phi: Pair,
    pub lstar_phi: Pair,
    pub report: PairingReport,
}

/// Smallest M accepted for the direction Phi_M.
pub const M_MIN: f64 = 5.0;

pub fn build_phi_m(grid: &RadialGrid, lvl1: &LevelOne, m: f64) -> Result<PhiM, OperatorError> {
    if grid.r_max() < 2.0 * m {
        return Err(OperatorError::GridTooShort { r_max: grid.r_max(), needed: 2.0 * m });
    }
    let phi0 = phi0_direction(grid, m);
    let lq = lambda_q_pair(grid);
    let t1 = (&lvl1.t1[..], &lvl1.s1_grad[..]);
    let p_lq = pairing(grid, (&phi0.0, &phi0.1), (&lq.0, &lq.1));
    // the scaling pairing behaves like -32 pi log M; it must dominate the O(1) part
    if m < M_MIN || !(p_lq < -16.0 * PI) {
        return Err(OperatorError::MTooSmall { m, pairing: p_lq });
    }
    let p_t1 = pairing(grid, (&phi0.0, &phi0.1), t1);
    let c_m = -p_t1 / p_lq;
    let ls = apply_lstar(grid, &phi0.0, &phi0.1);
    let phi: Pair = (
        phi0.0.iter().zip(&ls.0).map(|(a, b)| a + c_m * b).collect(),
        phi0.1.iter().zip(&ls.1).map(|(a, b)| a + c_m * b).collect(),
    );
    let lstar_phi = apply_lstar(grid, &phi.0, &phi.1);
    let report = PairingReport {
        phim_t1: pairing(grid, (&phi.0, &phi.1), t1),
        phim_lambdaq: pairing(grid, (&phi.0, &phi.1), (&lq.0, &lq.1)),
        phi0_t1: p_t1,
    };
    Ok(PhiM { m, c_m, phi, lstar_phi, report })
}

/// ⟨M E2, E2⟩ with E2 = L e.
pub fn lyapunov_functional(grid: &RadialGrid, e: &[f64], g: &[f64]) -> f64 {
    let (a, b) = apply_l(grid, e, g);
    energy_form(grid, &a, &b)
}

/// Discrete X_Q space for Rayleigh quotients: dual-cell weights, nodal
/// unknowns (u_0..u_N, g_1..g_N).
pub struct QuadraticSpace {
    grid: Arc<RadialGrid>,
    w: Vec<f64>,
    /// cumulative trapezoid matrix rows for m_u
    cum: DMatrix<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralSummary {
    pub value: f64,
    pub log_weighted: f64,
}

impl QuadraticSpace {
    pub fn new(grid: Arc<RadialGrid>) -> Self {
        let r = grid.nodes();
        let n = r.len();
        // dual-cell weights int r dr over [r_{i-1/2}, r_{i+1/2}]
        let mut w = vec![0.0; n];
        for i in 0..n {
            let lo = if i == 0 { 0.0 } else { 0.5 * (r[i - 1] + r[i]) };
            let hi = if i + 1 == n { r[i] } else { 0.5 * (r[i] + r[i + 1]) };
            w[i] = 0.5 * (hi * hi - lo * lo);
        }
        let mut cum = DMatrix::zeros(n, n);
        for i in 1..n {
            for j in 0..n {
                cum[(i, j)] = cum[(i - 1, j)];
            }
            let h = r[i] - r[i - 1];
            cum[(i, i - 1)] += 0.5 * h * r[i - 1];
            cum[(i, i)] += 0.5 * h * r[i];
        }
        QuadraticSpace { grid, w, cum }
    }

    pub fn dim(&self) -> usize {
        2 * self.grid.len() - 1
    }

    fn split<'a>(&self, x: &'a DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let n = self.grid.len();
        let u: Vec<f64> = (0..n).map(|i| x[i]).collect();
        let mut g = vec![0.0; n];
        for i in 1..n {
            g[i] = x[n + i - 1];
        }
        (u, g)
    }

    pub fn pack(&self, u: &[f64], g: &[f64]) -> DVector<f64> {
        let n = self.grid.len();
        let mut x = DVector::zeros(self.dim());
        for i in 0..n {
            x[i] = u[i];
        }
        for i in 1..n {
            x[n + i - 1] = g[i];
        }
        x
    }

    /// Matrix of the energy form (valid on int u = 0).
    pub fn energy_matrix(&self) -> DMatrix<f64> {
        let r = self.grid.nodes();
        let n = r.len();
        let d = self.dim();
        let mut a = DMatrix::zeros(d, d);
        for i in 0..n {
            a[(i, i)] = 2.0 * PI * self.w[i] / closed::q(r[i]);
        }
        for i in 1..n {
            a[(n + i - 1, n + i - 1)] = 2.0 * PI * self.w[i];
            let s = -2.0 * PI * self.w[i] / r[i];
            for j in 0..=i {
                let c = s * self.cum[(i, j)];
                a[(n + i - 1, j)] += c;
                a[(j, n + i - 1)] += c;
            }
        }
        a
    }

    /// Diagonal X_Q metric; with `log_weight` the gradient part carries (1+|log r|)^2.
    pub fn metric(&self, log_weight: bool) -> DVector<f64> {
        let r = self.grid.nodes();
        let n = r.len();
        let mut b = DVector::zeros(self.dim());
        for i in 0..n {
            b[i] = 2.0 * PI * self.w[i] / closed::q(r[i]);
        }
        for i in 1..n {
            let lw = if log_weight { (1.0 + r[i].ln().abs()).powi(2) } else { 1.0 };
            b[n + i - 1] = 2.0 * PI * self.w[i] * lw;
        }
        b
    }

    /// Linear functional x -> <x, (f1, f2)>.
    pub fn pairing_vector(&self, f1: &[f64], f2: &[f64]) -> DVector<f64> {
        let n = self.grid.len();
        let mut c = DVector::zeros(self.dim());
        for i in 0..n {
            c[i] = 2.0 * PI * self.w[i] * f1[i];
        }
        for i in 1..n {
            c[n + i - 1] = 2.0 * PI * self.w[i] * f2[i];
        }
        c
    }

    /// Functional x -> 2 pi m_u(r_max), consistent with the energy matrix.
    pub fn mass_vector(&self) -> DVector<f64> {
        let n = self.grid.len();
        let mut c = DVector::zeros(self.dim());
        for j in 0..n {
            c[j] = 2.0 * PI * self.cum[(n - 1, j)];
        }
        c
    }

    pub fn quadratic(&self, a: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
        x.dot(&(a * x))
    }

    pub fn norm_sq(&self, b: &DVector<f64>, x: &DVector<f64>) -> f64 {
        x.iter().zip(b.iter()).map(|(v, w)| v * v * w).sum()
    }

    /// Smallest generalized eigenvalues of (A, diag B) on the orthogonal complement
    /// of the constraint functionals, with the matching eigenvectors.
    pub fn constrained_spectrum(
        &self,
        a: &DMatrix<f64>,
        b: &DVector<f64>,
        constraints: &[DVector<f64>],
        count: usize,
    ) -> Result<Vec<(f64, DVector<f64>)>, OperatorError> {
        let d = self.dim();
        let s: DVector<f64> = b.map(|x| 1.0 / x.sqrt());
        let mut c = a.clone();
        for i in 0..d {
            for j in 0..d {
                c[(i, j)] *= s[i] * s[j];
            }
        }
        // constraint c.x = 0 with x = S y becomes (S c).y = 0
        let mut basis: Vec<DVector<f64>> = Vec::new();
        for k in constraints {
            let mut v = k.component_mul(&s);
            for q in &basis {
                let p = q.dot(&v);
                v -= q * p;
            }
            for q in &basis {
                let p = q.dot(&v);
                v -= q * p;
            }
            let nv = v.norm();
            if nv > 1e-300 {
                basis.push(v / nv);
            }
        }
        let shift = 1e3 * c.diagonal().iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
        if !basis.is_empty() {
            let qm = DMatrix::from_columns(&basis);
            // (I - P) C (I - P) + shift P
            let cq = &c * &qm;
            let qtc = qm.transpose() * &c;
            let qtcq = qm.transpose() * &cq;
            c -= &cq * qm.transpose();
            c -= &qm * qtc;
            c += &qm * qtcq * qm.transpose();
            c += (&qm * qm.transpose()) * shift;
        }
        // symmetrize against rounding
        let ct = c.transpose();
        c = (c + ct) * 0.5;
        let eig = SymmetricEigen::try_new(c, 1e-14, 10_000)
            .ok_or_else(|| OperatorError::Eigen("symmetric eigensolver did not converge".into()))?;
        let mut idx: Vec<usize> = (0..d).collect();
        idx.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
        Ok(idx
            .into_iter()
            .take(count)
            .map(|i| {
                let y = eig.eigenvectors.column(i).into_owned();
                (eig.eigenvalues[i], y.component_mul(&s))
            })
            .collect())
    }

    pub fn unpack(&self, x: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        self.split(x)
    }
}

/// Constrained minimum of <Mu,u>/||u||^2 under int u = 0 and <u, Lambda Q> = 0.
pub fn coercivity_m(space: &QuadraticSpace) -> Result<SpectralSummary, OperatorError> {
    let grid = space.grid.clone();
    let a = space.energy_matrix();
    let lq = lambda_q_pair(&grid);
    let cons = [space.mass_vector(), space.pairing_vector(&lq.0, &lq.1)];
    let v = space.constrained_spectrum(&a, &space.metric(false), &cons, 1)?[0].0;
    let lw = space.constrained_spectrum(&a, &space.metric(true), &cons, 1)?[0].0;
    Ok(SpectralSummary { value: v, log_weighted: lw })
}

/// Two lowest quotients with only the mass constraint: the scaling direction and the gap.
pub fn kernel_gap(space: &QuadraticSpace) -> Result<(f64, f64), OperatorError> {
    let a = space.energy_matrix();
    let ev = space.constrained_spectrum(&a, &space.metric(false), &[space.mass_vector()], 2)?;
    Ok((ev[0].0, ev[1].0))
}

/// Constrained quotient <M E2, E2>/||E2||^2 over E2 with int E2 = 0 and <E2, Phi_M> = 0.
///
/// E2 = L e ranges over this set when e runs over <e, L* Phi_M> = 0.
pub fn coercivity_l(space: &QuadraticSpace, phi: &PhiM) -> Result<SpectralSummary, OperatorError> {
    let a = space.energy_matrix();
    let cons = [space.mass_vector(), space.pairing_vector(&phi.phi.0, &phi.phi.1)];
    let v = space.constrained_spectrum(&a, &space.metric(false), &cons, 1)?[0].0;
    let lw = space.constrained_spectrum(&a, &space.metric(true), &cons, 1)?[0].0;
    Ok(SpectralSummary { value: v, log_weighted: lw })
}

/// Report of `spectral check`.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralReport {
    #[serde(rename = "M")]
    pub m: f64,
    pub pairing: PairingReport,
    pub c_m: f64,
    pub delta0_m_hat: SpectralSummary,
    pub delta0_l_hat: SpectralSummary,
    pub kernel_gap: (f64, f64),
}

/// Operators, directions and certificates for one cutoff radius.
pub struct OperatorBundle {
    pub grid: Arc<RadialGrid>,
    pub lvl1: Arc<LevelOne>,
    pub phi_m: PhiM,
}

impl OperatorBundle {
    pub fn new(grid: Arc<RadialGrid>, m: f64) -> Result<Self, OperatorError> {
        let lvl1 = Arc::new(build_t1s1(&grid)?);
        let phi_m = build_phi_m(&grid, &lvl1, m)?;
        Ok(OperatorBundle { grid, lvl1, phi_m })
    }

    pub fn apply_m(&self, u: &[f64], g: &[f64]) -> Result<Pair, OperatorError> {
        apply_m(&self.grid, u, g)
    }

    pub fn apply_l(&self, e: &[f64], g: &[f64]) -> Pair {
        apply_l(&self.grid, e, g)
    }

    pub fn apply_lstar(&self, e: &[f64], g: &[f64]) -> Pair {
        apply_lstar(&self.grid, e, g)
    }

    pub fn phi0(&self, b: f64) -> Pair {
        phi0_direction(&self.grid, b)
    }
}

/// Runs the spectral certificates for one M. The Rayleigh quotients use a
/// separate coarse grid (the dense eigensolve is cubic in its size).
pub fn spectral_check(grid: Arc<RadialGrid>, coarse: Arc<RadialGrid>, m: f64) -> Result<SpectralReport, OperatorError> {
    let bundle = OperatorBundle::new(grid, m)?;
    let coarse_lvl1 = build_t1s1(&coarse)?;
    let coarse_phi = build_phi_m(&coarse, &coarse_lvl1, m)?;
    let space = QuadraticSpace::new(coarse);
    Ok(SpectralReport {
        m,
        pairing: bundle.phi_m.report.clone(),
        c_m: bundle.phi_m.c_m,
        delta0_m_hat: coercivity_m(&space)?,
        delta0_l_hat: coercivity_l(&space, &coarse_phi)?,
        kernel_gap: kernel_gap(&space)?,
    })
}
