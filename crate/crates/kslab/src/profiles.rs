//! Approximate blow-up profiles built in partial-mass variables.
//!
//! The density profile is carried through its partial mass m and the
//! chemical gradient through n = r d_r v; d = n - m. Radial derivatives of
//! the constructed masses are taken from the variation-of-constants
//! formulas and the defining ODEs rather than from finite differences.

use std::sync::Arc;

use serde::Serialize;

use crate::closed::{self, cutoff_at};
use crate::error::ProfileError;
use crate::grid::{Parity, RadialField, RadialGrid};

/// Largest b for which profiles are built.
pub const B_STAR: f64 = 1.0e-2;

/// Q, its potential, the scaling direction and the partial mass of Q.
#[derive(Clone, Debug)]
pub struct GroundState {
    pub q: RadialField,
    pub phi_q: RadialField,
    pub lambda_q: RadialField,
    pub phi_lambda_q: RadialField,
    pub m0: RadialField,
}

impl GroundState {
    pub fn new(grid: &Arc<RadialGrid>) -> Self {
        GroundState {
            q: RadialField::from_fn(grid, Parity::Even, closed::q),
            phi_q: RadialField::from_fn(grid, Parity::Even, closed::phi_q),
            lambda_q: RadialField::from_fn(grid, Parity::Even, closed::lambda_q),
            phi_lambda_q: RadialField::from_fn(grid, Parity::Even, closed::phi_lambda_q),
            m0: RadialField::from_fn(grid, Parity::Even, closed::m0),
        }
    }
}

/// Kernel basis of L0 and its Wronskian.
#[derive(Clone, Debug)]
pub struct HomogeneousBasis {
    pub psi0: RadialField,
    pub psi1: RadialField,
    pub wronskian: RadialField,
}

impl HomogeneousBasis {
    pub fn new(grid: &Arc<RadialGrid>) -> Self {
        HomogeneousBasis {
            psi0: RadialField::from_fn(grid, Parity::Even, closed::psi0),
            psi1: RadialField::from_fn(grid, Parity::Even, closed::psi1),
            wronskian: RadialField::from_fn(grid, Parity::Odd, closed::wronskian),
        }
    }
}

/// Output of the L0 inversion: m, m'/r and m' on the nodes.
#[derive(Clone, Debug)]
pub struct MassSolution {
    pub m: Vec<f64>,
    pub dm_over_r: Vec<f64>,
    pub dm: Vec<f64>,
    pub ddm: Vec<f64>,
}

/// Output of the L1 inversion: d and d'.
#[derive(Clone, Debug)]
pub struct DSolution {
    pub d: Vec<f64>,
    pub dd: Vec<f64>,
    pub ddd: Vec<f64>,
}

fn check_source(f: &[f64]) -> Result<(), ProfileError> {
    if f.iter().any(|x| !x.is_finite()) {
        return Err(ProfileError::RegionIdentity("source is not finite on the grid".into()));
    }
    let scale = f.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if f[0].abs() > 1e-8 * scale.max(1e-300) {
        return Err(ProfileError::RegionIdentity("source must vanish at the origin".into()));
    }
    Ok(())
}

/// Solves L0 m = -f with m = O(r^4) at the origin.
pub fn invert_l0(grid: &RadialGrid, f: &[f64]) -> Result<MassSolution, ProfileError> {
    check_source(f)?;
    let ik = grid.cumulative(f, Parity::Even, closed::k1);
    let it = grid.cumulative(f, Parity::Even, |t| t);
    let nodes = grid.nodes();
    let n = nodes.len();
    let mut m = vec![0.0; n];
    let mut dmr = vec![0.0; n];
    for i in 1..n {
        let r = nodes[i];
        let a = -0.5 * ik[i];
        let b = 0.5 * it[i];
        m[i] = a * closed::psi0(r) + b * closed::psi1(r);
        dmr[i] = a * closed::dpsi0_over_r(r) + b * closed::dpsi1_over_r(r);
    }
    let dm: Vec<f64> = nodes.iter().zip(&dmr).map(|(r, v)| r * v).collect();
    let ddm = second_from_l0(nodes, &m, &dm, f);
    Ok(MassSolution { m, dm_over_r: dmr, dm, ddm })
}

/// m'' read off L0 m = -f.
fn second_from_l0(nodes: &[f64], m: &[f64], dm: &[f64], f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; nodes.len()];
    for i in 1..nodes.len() {
        let r = nodes[i];
        let qq = closed::q(r);
        let ql = -4.0 * r / (1.0 + r * r);
        out[i] = (1.0 / r + ql) * dm[i] - qq * m[i] + f[i];
    }
    out
}

/// Solves L1 d = f with d = c r^2 + O(r^4).
///
/// Written with tail integrals so the r^2 growth only enters through
/// c + F/2, F = int_0^inf f/t (the tail past r_max assumes f ~ t^-2).
pub fn invert_l1(grid: &RadialGrid, f: &[f64], c: f64) -> Result<DSolution, ProfileError> {
    check_source(f)?;
    let (tail, total) = l1_tail(grid, f);
    Ok(l1_assemble(grid, f, &tail, c + 0.5 * total, c))
}

/// The L1 inversion without r^2 growth at infinity, and the value of c it implies.
pub fn invert_l1_decaying(grid: &RadialGrid, f: &[f64]) -> Result<(DSolution, f64), ProfileError> {
    check_source(f)?;
    let (tail, total) = l1_tail(grid, f);
    let c = -0.5 * total;
    Ok((l1_assemble(grid, f, &tail, 0.0, c), c))
}

fn l1_tail(grid: &RadialGrid, f: &[f64]) -> (Vec<f64>, f64) {
    let n = f.len();
    let extra = 0.5 * f[n - 1];
    let mut tail = grid.cumulative_tail(f, Parity::Even, |t| 1.0 / t);
    for t in tail.iter_mut() {
        *t += extra;
    }
    let total = tail[0];
    (tail, total)
}

fn l1_assemble(grid: &RadialGrid, f: &[f64], tail: &[f64], growth: f64, c: f64) -> DSolution {
    let a = grid.cumulative(f, Parity::Even, |t| t);
    let nodes = grid.nodes();
    let n = nodes.len();
    let mut d = vec![0.0; n];
    let mut dd = vec![0.0; n];
    let mut ddd = vec![0.0; n];
    for i in 0..n {
        let r = nodes[i];
        d[i] = -0.5 * (a[i] + r * r * tail[i]) + growth * r * r;
        dd[i] = -r * tail[i] + 2.0 * growth * r;
        ddd[i] = if i == 0 { 2.0 * c } else { dd[i] / r + f[i] };
    }
    DSolution { d, dd, ddd }
}

/// Discrete L0 m = -m'' + (1/r + Q'/Q) m' - Q m by finite differences.
pub fn apply_l0(grid: &RadialGrid, m: &[f64]) -> Vec<f64> {
    let d1 = grid.d1(m, Parity::Even);
    let d2 = grid.d2(m, Parity::Even);
    grid.nodes()
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            if i == 0 {
                0.0
            } else {
                -d2[i] + (1.0 / r - 4.0 * r / (1.0 + r * r)) * d1[i] - closed::q(r) * m[i]
            }
        })
        .collect()
}

/// Discrete L1 d = d'' - d'/r.
pub fn apply_l1(grid: &RadialGrid, d: &[f64]) -> Vec<f64> {
    let d1 = grid.d1(d, Parity::Even);
    let d2 = grid.d2(d, Parity::Even);
    grid.nodes()
        .iter()
        .enumerate()
        .map(|(i, &r)| if i == 0 { 0.0 } else { d2[i] - d1[i] / r })
        .collect()
}

/// First-order correction (level b).
#[derive(Clone, Debug)]
pub struct LevelOne {
    pub m1: MassSolution,
    pub d1: DSolution,
    /// n1 = d1 + m1
    pub n1: Vec<f64>,
    pub dn1: Vec<f64>,
    pub t1: Vec<f64>,
    pub s1_grad: Vec<f64>,
}

pub fn build_t1s1(grid: &RadialGrid) -> Result<LevelOne, ProfileError> {
    let nodes = grid.nodes();
    let src_d: Vec<f64> = nodes.iter().map(|&r| r * closed::dm0(r)).collect();
    let (d1, c) = invert_l1_decaying(grid, &src_d)?;
    if (c + 2.0).abs() > 1e-4 {
        return Err(ProfileError::RegionIdentity(format!("level-one d has curvature {c}, expected -2")));
    }
    let src_m: Vec<f64> = nodes
        .iter()
        .zip(&d1.d)
        .map(|(&r, &d)| r * closed::dm0(r) - closed::q(r) * d)
        .collect();
    let m1 = invert_l0(grid, &src_m)?;
    let n1: Vec<f64> = m1.m.iter().zip(&d1.d).map(|(a, b)| a + b).collect();
    let dn1: Vec<f64> = m1.dm.iter().zip(&d1.dd).map(|(a, b)| a + b).collect();
    let t1 = m1.dm_over_r.clone();
    let s1_grad = nodes.iter().zip(&n1).map(|(&r, &v)| if r == 0.0 { 0.0 } else { v / r }).collect();
    Ok(LevelOne { m1, d1, n1, dn1, t1, s1_grad })
}

/// Radiation term and the constants fixing its far field.
#[derive(Clone, Debug, Serialize)]
pub struct RadiationConstants {
    pub c_b: f64,
    /// root of the quadratic constraint obtained when d_sigma/t^2 weights the far-field integral
    pub c_b_quadratic: f64,
    pub c1: f64,
    pub c2: f64,
    pub beta: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct Radiation {
    pub consts: RadiationConstants,
    pub m_sigma: Vec<f64>,
    pub d_sigma: Vec<f64>,
    pub sigma1: Vec<f64>,
    pub sigma2_grad: Vec<f64>,
}

/// Worst mismatch of the three regional identities.
#[derive(Clone, Debug, Serialize)]
pub struct RegionCheck {
    pub inner_mass: f64,
    pub inner_d: f64,
    pub outer_mass: f64,
    pub outer_d: f64,
    pub middle_mass_minus_4psi1: f64,
}

pub fn scales(b: f64) -> (f64, f64) {
    let b0 = 1.0 / b.sqrt();
    (b0, b.ln().abs() * b0)
}

pub fn build_radiation(grid: &RadialGrid, b: f64, lvl1: &LevelOne) -> Result<Radiation, ProfileError> {
    let (b0, _) = scales(b);
    let bq = 0.25 * b0;
    let b3 = 3.0 * b0;
    let nodes = grid.nodes();
    let n = nodes.len();
    let r_max = grid.r_max();
    let chi_q: Vec<f64> = nodes.iter().map(|&r| closed::chi(r, bq)).collect();
    let chi3: Vec<f64> = nodes.iter().map(|&r| closed::chi(r, b3)).collect();
    let off_q: Vec<f64> = chi_q.iter().map(|c| 1.0 - c).collect();

    // int_r^inf psi0/t = 1/(2(1+r^2)); the cut pieces are split into
    // head and tail integrals to keep the r^2 factors from cancelling.
    let j1 = grid.cumulative(&chi_q, Parity::Even, |t| t * closed::psi0(t));
    let j1_tail = grid.cumulative_tail(&chi_q, Parity::Even, |t| t * closed::psi0(t));
    let p = grid.cumulative(&off_q, Parity::Even, |t| closed::psi0(t) / t);
    let far = 0.5 / (1.0 + r_max * r_max);
    let p_tail: Vec<f64> = grid
        .cumulative_tail(&off_q, Parity::Even, |t| closed::psi0(t) / t)
        .into_iter()
        .map(|v| v + far)
        .collect();
    let beta2 = p_tail[0];
    let beta3 = j1_tail[0];
    let shape: Vec<f64> = (0..n)
        .map(|i| {
            let r = nodes[i];
            let r2 = r * r;
            let c3 = chi3[i];
            4.0 * ((1.0 - c3) * j1_tail[i] - c3 * j1[i] + r2 * ((1.0 - c3) * p_tail[i] - c3 * p[i])
                - 0.5 * r2 / (1.0 + r2))
        })
        .collect();
    let c1 = grid.integral(&chi_q, Parity::Even, |t| t.powi(3) / (1.0 + t * t).powi(2));
    let c2 = grid.integral(&shape, Parity::Even, |t| t / (1.0 + t * t).powi(2));
    if !(c1 - c2 > 0.0) {
        return Err(ProfileError::RegionIdentity(format!("far-field constraint is singular: c1 = {c1}, c2 = {c2}")));
    }
    let c_b = 1.0 / (c1 - c2);
    let c_b_quadratic = quadratic_root(c1, c2)?;
    let d_sigma: Vec<f64> = shape.iter().map(|s| c_b * s).collect();
    // weight chi - d_sigma/(c_b t^2); shape/t^2 -> -2 at the origin
    let h: Vec<f64> = (0..n)
        .map(|i| {
            let r = nodes[i];
            if i == 0 {
                chi_q[0] + 2.0
            } else {
                chi_q[i] - shape[i] / (r * r)
            }
        })
        .collect();
    let ia = grid.cumulative(&h, Parity::Even, |t| t * closed::psi1(t));
    let ia_tail = grid.cumulative_tail(&h, Parity::Even, |t| t * closed::psi1(t));
    let ib = grid.cumulative(&h, Parity::Even, |t| t.powi(3) / (1.0 + t * t).powi(2));
    let beta1 = 4.0 * c_b * ia_tail[0];
    let mut m_sigma = vec![0.0; n];
    let mut sigma1 = vec![0.0; n];
    let mut sigma2_grad = vec![0.0; n];
    for i in 1..n {
        let r = nodes[i];
        let (c3, dc3, _) = cutoff_at(r, b3);
        let a0 = (1.0 - c3) * ia_tail[i] - c3 * ia[i];
        m_sigma[i] = 4.0 * c_b * (closed::psi0(r) * a0 + closed::psi1(r) * ib[i]);
        sigma1[i] = 4.0 * c_b * (closed::dpsi0_over_r(r) * a0 + closed::dpsi1_over_r(r) * ib[i])
            - beta1 * dc3 * closed::psi0(r) / r;
        sigma2_grad[i] = (d_sigma[i] + m_sigma[i]) / r;
    }
    // inside B0/4 sigma1 = c_b T1; the origin value comes from level one
    sigma1[0] = c_b * lvl1.t1[0];
    Ok(Radiation {
        consts: RadiationConstants { c_b, c_b_quadratic, c1, c2, beta: [beta1, beta2, beta3] },
        m_sigma,
        d_sigma,
        sigma1,
        sigma2_grad,
    })
}

/// Root of c2 x^2 - c1 x + 1 = 0 on the branch that tends to 1/c1.
pub fn quadratic_root(c1: f64, c2: f64) -> Result<f64, ProfileError> {
    if c2.abs() < 1e-12 * c1 * c1 {
        return Ok(1.0 / c1);
    }
    let disc = c1 * c1 - 4.0 * c2;
    if disc < 0.0 {
        return Err(ProfileError::NegativeDiscriminant { c1, c2 });
    }
    Ok((c1 - disc.sqrt()) / (2.0 * c2))
}

/// Compares the radiation with c_b (m1, d1) inside B0/4 and (4 psi1, 0) beyond 6 B0.
pub fn radiation_regions(grid: &RadialGrid, b: f64, lvl1: &LevelOne, rad: &Radiation) -> RegionCheck {
    let (b0, _) = scales(b);
    let cb = rad.consts.c_b;
    let mut chk = RegionCheck {
        inner_mass: 0.0,
        inner_d: 0.0,
        outer_mass: 0.0,
        outer_d: 0.0,
        middle_mass_minus_4psi1: 0.0,
    };
    for (i, &r) in grid.nodes().iter().enumerate() {
        if r <= 0.25 * b0 {
            let sm = 1.0 + (cb * lvl1.m1.m[i]).abs();
            let sd = 1.0 + (cb * lvl1.d1.d[i]).abs();
            chk.inner_mass = chk.inner_mass.max((rad.m_sigma[i] - cb * lvl1.m1.m[i]).abs() / sm);
            chk.inner_d = chk.inner_d.max((rad.d_sigma[i] - cb * lvl1.d1.d[i]).abs() / sd);
        } else if r >= 6.0 * b0 {
            let p = 4.0 * closed::psi1(r);
            chk.outer_mass = chk.outer_mass.max((rad.m_sigma[i] - p).abs() / (1.0 + p.abs()));
            chk.outer_d = chk.outer_d.max(rad.d_sigma[i].abs());
        } else {
            let p = 4.0 * closed::psi1(r);
            chk.middle_mass_minus_4psi1 = chk.middle_mass_minus_4psi1.max((rad.m_sigma[i] - p).abs());
        }
    }
    chk
}

/// Second-order correction (level b^2).
#[derive(Clone, Debug)]
pub struct LevelTwo {
    pub m2: MassSolution,
    pub d2: DSolution,
    pub n2: Vec<f64>,
    pub dn2: Vec<f64>,
    pub t2: Vec<f64>,
    pub s2_grad: Vec<f64>,
}

pub fn build_t2s2(grid: &RadialGrid, lvl1: &LevelOne, rad: &Radiation) -> Result<LevelTwo, ProfileError> {
    let nodes = grid.nodes();
    let n = nodes.len();
    let m1 = &lvl1.m1;
    let d1 = &lvl1.d1;
    let mut d_src = vec![0.0; n];
    let mut m_src = vec![0.0; n];
    for i in 1..n {
        let r = nodes[i];
        d_src[i] = r * lvl1.dn1[i] - rad.d_sigma[i];
        // m_sigma2 = r m1' - m1' m1 / r - m1' d1 / r - m_sigma
        m_src[i] = r * m1.dm[i] - m1.dm[i] * m1.m[i] / r - m1.dm[i] * d1.d[i] / r - rad.m_sigma[i];
    }
    let d2 = invert_l1(grid, &d_src, 0.0)?;
    // L0 m2 = Q d2 - m_sigma2
    let f: Vec<f64> = (0..n).map(|i| m_src[i] - closed::q(nodes[i]) * d2.d[i]).collect();
    let m2 = invert_l0(grid, &f)?;
    let n2: Vec<f64> = m2.m.iter().zip(&d2.d).map(|(a, b)| a + b).collect();
    let dn2: Vec<f64> = m2.dm.iter().zip(&d2.dd).map(|(a, b)| a + b).collect();
    let t2 = m2.dm_over_r.clone();
    let s2_grad = nodes.iter().zip(&n2).map(|(&r, &v)| if r == 0.0 { 0.0 } else { v / r }).collect();
    Ok(LevelTwo { m2, d2, n2, dn2, t2, s2_grad })
}

/// Error norms of the localized profile.
#[derive(Clone, Debug, Serialize)]
pub struct NormReport {
    pub psi1_l2: f64,
    pub l1_over_q: f64,
    pub grad_psi2_weighted: f64,
    pub l2_sq: f64,
    pub q_grad_m1: f64,
    pub grad_psi2_l2: f64,
    pub degenerate_flux: f64,
}

/// The full profile family at one value of b.
#[derive(Clone, Debug)]
pub struct ProfileFamily {
    pub grid: Arc<RadialGrid>,
    pub b: f64,
    pub b0: f64,
    pub b1: f64,
    pub lvl1: Arc<LevelOne>,
    pub rad: Radiation,
    pub lvl2: LevelTwo,
    /// chi_{B1} T_i and chi_{B1} d_r S_i
    pub t1_loc: Vec<f64>,
    pub t2_loc: Vec<f64>,
    pub s1_grad_loc: Vec<f64>,
    pub s2_grad_loc: Vec<f64>,
    pub qb: Vec<f64>,
    pub pb_grad: Vec<f64>,
    /// partial masses of the localized profile
    pub mb: Vec<f64>,
    pub nb: Vec<f64>,
    pub breve_t: (Vec<f64>, Vec<f64>),
    pub psi1: Vec<f64>,
    pub psi2_grad: Vec<f64>,
}

impl ProfileFamily {
    pub fn build(grid: &Arc<RadialGrid>, b: f64) -> Result<ProfileFamily, ProfileError> {
        let lvl1 = Arc::new(build_t1s1(grid)?);
        Self::build_with(grid, b, lvl1)
    }

    /// Reuses a level-b solution, which does not depend on b.
    pub fn build_with(grid: &Arc<RadialGrid>, b: f64, lvl1: Arc<LevelOne>) -> Result<ProfileFamily, ProfileError> {
        Self::build_bounded(grid, b, lvl1, B_STAR)
    }

    /// As `build_with` with a caller-chosen ceiling on b; the modulation
    /// solver may probe slightly above b* while iterating.
    pub fn build_bounded(
        grid: &Arc<RadialGrid>,
        b: f64,
        lvl1: Arc<LevelOne>,
        b_max: f64,
    ) -> Result<ProfileFamily, ProfileError> {
        if !(b > 0.0 && b <= b_max) {
            return Err(ProfileError::BOutOfRange(b, b_max));
        }
        let (b0, b1) = scales(b);
        if grid.r_max() < 4.0 * b1 {
            return Err(ProfileError::GridTooShort { r_max: grid.r_max(), needed: 4.0 * b1 });
        }
        let rad = build_radiation(grid, b, &lvl1)?;
        let lvl2 = build_t2s2(grid, &lvl1, &rad)?;
        let nodes = grid.nodes();
        let n = nodes.len();
        let chi1: Vec<f64> = nodes.iter().map(|&r| closed::chi(r, b1)).collect();
        let t1_loc: Vec<f64> = (0..n).map(|i| chi1[i] * lvl1.t1[i]).collect();
        let t2_loc: Vec<f64> = (0..n).map(|i| chi1[i] * lvl2.t2[i]).collect();
        let s1_grad_loc: Vec<f64> = (0..n).map(|i| chi1[i] * lvl1.s1_grad[i]).collect();
        let s2_grad_loc: Vec<f64> = (0..n).map(|i| chi1[i] * lvl2.s2_grad[i]).collect();
        let qb: Vec<f64> = (0..n)
            .map(|i| closed::q(nodes[i]) + b * t1_loc[i] + b * b * t2_loc[i])
            .collect();
        let pb_grad: Vec<f64> = (0..n)
            .map(|i| closed::dphi_q(nodes[i]) + b * s1_grad_loc[i] + b * b * s2_grad_loc[i])
            .collect();
        let pert: Vec<f64> = (0..n).map(|i| b * t1_loc[i] + b * b * t2_loc[i]).collect();
        let mpert = grid.cumulative(&pert, Parity::Even, |t| t);
        let mb: Vec<f64> = (0..n).map(|i| closed::m0(nodes[i]) + mpert[i]).collect();
        let nb: Vec<f64> = (0..n)
            .map(|i| closed::m0(nodes[i]) + chi1[i] * (b * lvl1.n1[i] + b * b * lvl2.n2[i]))
            .collect();
        let bq = 0.25 * b0;
        let breve_t = (
            (0..n).map(|i| closed::chi(nodes[i], bq) * lvl1.t1[i]).collect(),
            (0..n).map(|i| closed::chi(nodes[i], bq) * lvl1.s1_grad[i]).collect(),
        );
        let mut fam = ProfileFamily {
            grid: grid.clone(),
            b,
            b0,
            b1,
            lvl1,
            rad,
            lvl2,
            t1_loc,
            t2_loc,
            s1_grad_loc,
            s2_grad_loc,
            qb,
            pb_grad,
            mb,
            nb,
            breve_t,
            psi1: Vec::new(),
            psi2_grad: Vec::new(),
        };
        let (p1, p2) = fam.assemble_error();
        fam.psi1 = p1;
        fam.psi2_grad = p2;
        Ok(fam)
    }

    /// Residual of the localized profile under the rescaled flow.
    fn assemble_error(&self) -> (Vec<f64>, Vec<f64>) {
        let nodes = self.grid.nodes();
        let n = nodes.len();
        let b = self.b;
        let bb = b * b;
        let cb = self.rad.consts.c_b;
        let (m1, d1) = (&self.lvl1.m1, &self.lvl1.d1);
        let (m2, d2) = (&self.lvl2.m2, &self.lvl2.d2);
        let mut psi1 = vec![0.0; n];
        let mut psi2 = vec![0.0; n];
        for i in 1..n {
            let r = nodes[i];
            let (c, dc, ddc) = cutoff_at(r, self.b1);
            let cq = closed::chi(r, 0.25 * self.b0);
            let dm0 = closed::dm0(r);
            let ddm0 = closed::q(r) + r * closed::dq(r);
            let dn0 = dm0;

            // unlocalized residual: -b^2 m_sigma + b^3 R3 + b^4 R4
            let (a1, a1p, a1pp) = (m1.m[i], m1.dm[i], m1.ddm[i]);
            let (a2, a2p, a2pp) = (m2.m[i], m2.dm[i], m2.ddm[i]);
            let (e1, e1p) = (d1.d[i], d1.dd[i]);
            let (e2, e2p) = (d2.d[i], d2.dd[i]);
            let n2 = self.lvl2.n2[i];
            let dn2 = self.lvl2.dn2[i];
            let r3 = -r * a2p + (a1p * a2 + a1 * a2p) / r + (a1p * e2 + a2p * e1) / r;
            let r4 = a2p * n2 / r;
            let prod_pp = a1pp * a2 + 2.0 * a1p * a2p + a1 * a2pp;
            let cross_p = a1pp * e2 + a1p * e2p + a2pp * e1 + a2p * e1p;
            let r3p = -a2p - r * a2pp + prod_pp / r - (a1p * a2 + a1 * a2p) / (r * r) + cross_p / r
                - (a1p * e2 + a2p * e1) / (r * r);
            let r4p = a2pp * n2 / r + a2p * dn2 / r - a2p * n2 / (r * r);
            let phi_b = -bb * self.rad.m_sigma[i] + bb * b * r3 + bb * bb * r4;
            // the -b^2 m_sigma'/r part is combined with the c_b b^2 chi T1 correction
            let rest_p_over_r = bb * b * r3p / r + bb * bb * r4p / r;
            let sig_minus = self.rad.sigma1[i] - cb * cq * self.lvl1.t1[i];

            // localization correction J1 and its derivative
            let ap = b * a1p + bb * a2p;
            let app = b * a1pp + bb * a2pp;
            let g = b * self.lvl1.n1[i] + bb * n2;
            let gp = b * self.lvl1.dn1[i] + bb * dn2;
            let w = c * c - c;
            let dw = (2.0 * c - 1.0) * dc;
            let j1p = ddc * ap + dc * app + dw * ap * g / r + w * (app * g + ap * gp) / r - w * ap * g / (r * r)
                - b * (dm0 + r * ddm0) * (1.0 - c)
                + b * r * dm0 * dc;
            psi1[i] = dc * phi_b / r + c * rest_p_over_r - bb * c * sig_minus + (1.0 - c) * cb * bb * cq * self.lvl1.t1[i]
                + j1p / r;

            // second component
            let omega_b = -bb * self.rad.d_sigma[i] - bb * b * r * dn2;
            let j2 = -b * r * dn0 * (1.0 - c) + dc * (-ap + 2.0 * gp - (b * r + 1.0 / r) * g) + ddc * g;
            psi2[i] = (c * omega_b + j2) / r + cb * bb * cq * self.lvl1.s1_grad[i];
        }
        psi1[0] = even_origin_value(nodes, &psi1);
        (psi1, psi2)
    }

    /// Weighted norms of the error, using the discrete linearized operator.
    pub fn norm_report(&self) -> NormReport {
        let grid = &self.grid;
        let nodes = grid.nodes();
        let n = nodes.len();
        let two_pi = 2.0 * std::f64::consts::PI;
        let integ = |f: &dyn Fn(usize) -> f64| -> f64 {
            let v: Vec<f64> = (0..n).map(f).collect();
            two_pi * grid.integral_rdr(&v)
        };
        let p1 = &self.psi1;
        let p2 = &self.psi2_grad;
        let lap_p1 = grid.laplacian(p1);
        let dp1 = grid.d1(p1, Parity::Even);
        let div_p2 = grid.divergence(p2);
        let mut l1 = vec![0.0; n];
        let mut l2 = vec![0.0; n];
        let mut qgm = vec![0.0; n];
        for i in 0..n {
            let r = nodes[i];
            let qq = closed::q(r);
            l1[i] = lap_p1[i] + p1[i] * qq + dp1[i] * closed::dphi_q(r) + qq * div_p2[i] + closed::dq(r) * p2[i];
            l2[i] = div_p2[i] - p1[i];
            qgm[i] = dp1[i] + p1[i] * closed::dphi_q(r) + qq * p2[i];
        }
        let phi0 = crate::operators::phi0_direction(grid, self.b0);
        let flux = crate::operators::pairing(grid, (&l1, &grad_of_l2(grid, &l2)), (&phi0.0, &phi0.1));
        NormReport {
            psi1_l2: integ(&|i| p1[i] * p1[i]),
            l1_over_q: integ(&|i| l1[i] * l1[i] / closed::q(nodes[i])),
            grad_psi2_weighted: integ(&|i| p2[i] * p2[i] / (1.0 + nodes[i] * nodes[i])),
            l2_sq: integ(&|i| l2[i] * l2[i]),
            q_grad_m1: integ(&|i| qgm[i] * qgm[i] / closed::q(nodes[i])),
            grad_psi2_l2: integ(&|i| p2[i] * p2[i]),
            degenerate_flux: flux,
        }
    }
}

fn grad_of_l2(grid: &RadialGrid, l2: &[f64]) -> Vec<f64> {
    grid.d1(l2, Parity::Even)
}

/// Value at r = 0 of an even function from its next nodes (fit in r^2).
pub fn even_origin_value(nodes: &[f64], f: &[f64]) -> f64 {
    let k = 4.min(nodes.len() - 1);
    let xs: Vec<f64> = (1..=k).map(|i| nodes[i] * nodes[i]).collect();
    let w = crate::grid::fornberg(0.0, &xs, 0);
    (1..=k).map(|i| w[0][i - 1] * f[i]).sum()
}
