//! Radial parabolic-parabolic flow in partial-mass variables.
//!
//! With m the partial mass of u and n = r d_r v, the system reads
//!   m_t = m'' - m'/r + m' n / r,
//!   n_t = d'' - d'/r,  d = n - m,
//! and in a frame shrinking like exp(-int a ds) both equations gain -a r (.)'.
//! Steps are linearly implicit Euler with one Richardson extrapolation.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::banded::BandMatrix;
use crate::closed;
use crate::diagnostics::{self, EnergyReport};
use crate::error::DynamicsError;
use crate::grid::{FieldPair, GridSpec, Normalization, Parity, RadialField, RadialGrid, Representation};
use crate::operators::{self, build_phi_m, PhiM};
use crate::profiles::{build_t1s1, LevelOne, ProfileFamily, B_STAR};

/// Computational frame of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    /// fixed physical coordinates; zero-flux outer wall
    Physical,
    /// coordinates y = r / lambda_frame with the frame following the bubble
    Rescaled,
}

/// Solution snapshot in partial-mass variables.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub t: f64,
    pub s: f64,
    pub pair: FieldPair,
    pub mass: f64,
    /// length unit of the frame in physical variables
    pub frame_scale: f64,
    /// a = -d log(frame_scale)/ds
    pub frame_speed: f64,
}

impl FlowState {
    pub fn new(grid: &Arc<RadialGrid>, m: Vec<f64>, n: Vec<f64>) -> Result<Self, DynamicsError> {
        let pair = FieldPair {
            density: RadialField::new(grid.clone(), m, Parity::Even)?,
            chem_gradient: RadialField::new(grid.clone(), n, Parity::Even)?,
            representation: Representation::PartialMass,
        };
        let mass = pair.mass();
        Ok(FlowState { t: 0.0, s: 0.0, pair, mass, frame_scale: 1.0, frame_speed: 0.0 })
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.pair.density.grid
    }

    pub fn m(&self) -> &[f64] {
        &self.pair.density.values
    }

    pub fn n(&self) -> &[f64] {
        &self.pair.chem_gradient.values
    }

    /// Density u = m'/r on the nodes.
    pub fn density(&self) -> Vec<f64> {
        self.pair.to_primitive().density.values
    }

    /// Central density u(0) = m''(0).
    pub fn central_density(&self) -> f64 {
        self.grid().d2(self.m(), Parity::Even)[0]
    }
}

/// Right-hand side of the partial-mass system at every node (zero at r = 0).
pub fn rhs_partial_mass(state: &FlowState) -> Result<(Vec<f64>, Vec<f64>), DynamicsError> {
    if state.pair.representation != Representation::PartialMass {
        return Err(DynamicsError::Config("state must be in partial-mass form".into()));
    }
    let grid = state.grid();
    let a = state.frame_speed;
    let m = state.m();
    let n = state.n();
    let d: Vec<f64> = n.iter().zip(m).map(|(x, y)| x - y).collect();
    let dm = grid.d1(m, Parity::Even);
    let ddm = grid.d2(m, Parity::Even);
    let dn = grid.d1(n, Parity::Even);
    let dd = grid.d1(&d, Parity::Even);
    let ddd = grid.d2(&d, Parity::Even);
    let nodes = grid.nodes();
    let mut fm = vec![0.0; nodes.len()];
    let mut fn_ = vec![0.0; nodes.len()];
    for i in 1..nodes.len() {
        let r = nodes[i];
        fm[i] = ddm[i] - dm[i] / r + dm[i] * n[i] / r - a * r * dm[i];
        fn_[i] = ddd[i] - dd[i] / r - a * r * dn[i];
    }
    Ok((fm, fn_))
}

/// Implicit stepper for one grid and frame.
pub struct FlowSolver {
    grid: Arc<RadialGrid>,
    frame: Frame,
    d1: Vec<Vec<(usize, f64)>>,
    d2: Vec<Vec<(usize, f64)>>,
    band: usize,
    /// m(r_max) held fixed in the physical frame
    wall_mass: f64,
    pub rtol: f64,
}

impl FlowSolver {
    pub fn new(grid: Arc<RadialGrid>, frame: Frame, wall_mass: f64, rtol: f64) -> Self {
        let n = grid.len();
        let d1: Vec<_> = (0..n).map(|i| grid.d1_row(i, Parity::Even)).collect();
        let d2: Vec<_> = (0..n).map(|i| grid.d2_row(i, Parity::Even)).collect();
        let mut reach = 0;
        for i in 0..n {
            for &(j, _) in d1[i].iter().chain(d2[i].iter()) {
                reach = reach.max(i.abs_diff(j));
            }
        }
        FlowSolver { grid, frame, d1, d2, band: 2 * reach + 1, wall_mass, rtol }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    fn row_apply(row: &[(usize, f64)], x: &[f64], comp: usize) -> f64 {
        row.iter().map(|&(j, w)| w * x[2 * j + comp]).sum()
    }

    /// Differential rows hold F(x); algebraic rows (origin and wall) hold G(x).
    fn residual(&self, x: &[f64], a: f64) -> Vec<f64> {
        let nodes = self.grid.nodes();
        let n = nodes.len();
        let mut f = vec![0.0; 2 * n];
        f[0] = x[0];
        f[1] = x[1];
        for i in 1..n - 1 {
            let r = nodes[i];
            let dm = Self::row_apply(&self.d1[i], x, 0);
            let ddm = Self::row_apply(&self.d2[i], x, 0);
            let dn = Self::row_apply(&self.d1[i], x, 1);
            let ddn = Self::row_apply(&self.d2[i], x, 1);
            let (dd, ddd) = (dn - dm, ddn - ddm);
            f[2 * i] = ddm - dm / r + dm * x[2 * i + 1] / r - a * r * dm;
            f[2 * i + 1] = ddd - dd / r - a * r * dn;
        }
        let w = n - 1;
        let dm = Self::row_apply(&self.d1[w], x, 0);
        let dn = Self::row_apply(&self.d1[w], x, 1);
        match self.frame {
            Frame::Physical => {
                f[2 * w] = x[2 * w] - self.wall_mass;
                f[2 * w + 1] = dn - dm;
            }
            Frame::Rescaled => {
                f[2 * w] = dm;
                f[2 * w + 1] = dn;
            }
        }
        f
    }

    /// Matrix of the linearly implicit step: I - dt J on differential rows,
    /// the constraint Jacobian on algebraic rows.
    fn step_matrix(&self, x: &[f64], a: f64, dt: f64) -> BandMatrix {
        let nodes = self.grid.nodes();
        let n = nodes.len();
        let mut mat = BandMatrix::zeros(2 * n, self.band, self.band);
        mat.add(0, 0, 1.0);
        mat.add(1, 1, 1.0);
        for i in 1..n - 1 {
            let r = nodes[i];
            let (rm, rn) = (2 * i, 2 * i + 1);
            let ni = x[rn];
            let dm = Self::row_apply(&self.d1[i], x, 0);
            mat.add(rm, rm, 1.0);
            mat.add(rn, rn, 1.0);
            for &(j, w) in &self.d1[i] {
                mat.add(rm, 2 * j, -dt * w * (-1.0 / r + ni / r - a * r));
                mat.add(rn, 2 * j + 1, -dt * w * (-1.0 / r - a * r));
                mat.add(rn, 2 * j, -dt * w / r);
            }
            for &(j, w) in &self.d2[i] {
                mat.add(rm, 2 * j, -dt * w);
                mat.add(rn, 2 * j + 1, -dt * w);
                mat.add(rn, 2 * j, dt * w);
            }
            mat.add(rm, rn, -dt * dm / r);
        }
        let wl = n - 1;
        match self.frame {
            Frame::Physical => {
                mat.add(2 * wl, 2 * wl, 1.0);
                for &(j, w) in &self.d1[wl] {
                    mat.add(2 * wl + 1, 2 * j + 1, w);
                    mat.add(2 * wl + 1, 2 * j, -w);
                }
            }
            Frame::Rescaled => {
                for &(j, w) in &self.d1[wl] {
                    mat.add(2 * wl, 2 * j, w);
                    mat.add(2 * wl + 1, 2 * j + 1, w);
                }
            }
        }
        mat
    }

    fn euler(&self, x: &[f64], a: f64, dt: f64) -> Result<Vec<f64>, DynamicsError> {
        let n = self.grid.len();
        let f = self.residual(x, a);
        let mut rhs = vec![0.0; 2 * n];
        for k in 0..2 * n {
            let algebraic = k < 2 || k >= 2 * (n - 1);
            rhs[k] = if algebraic { -f[k] } else { dt * f[k] };
        }
        let dx = self.step_matrix(x, a, dt).solve(&rhs).map_err(DynamicsError::Solve)?;
        Ok(x.iter().zip(&dx).map(|(u, v)| u + v).collect())
    }

    fn pack(state: &FlowState) -> Vec<f64> {
        let m = state.m();
        let n = state.n();
        let mut x = Vec::with_capacity(2 * m.len());
        for i in 0..m.len() {
            x.push(m[i]);
            x.push(n[i]);
        }
        x
    }

    /// One step of size dt: returns the extrapolated state and the scaled
    /// difference between the one-step and two-half-step solutions.
    pub fn step(&self, state: &FlowState, dt: f64) -> Result<(FlowState, f64), DynamicsError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(DynamicsError::Config(format!("time step must be positive, got {dt}")));
        }
        let a = state.frame_speed;
        let x0 = Self::pack(state);
        let full = self.euler(&x0, a, dt)?;
        let half = self.euler(&x0, a, 0.5 * dt)?;
        let half = self.euler(&half, a, 0.5 * dt)?;
        let mut err = 0.0f64;
        let mut x = vec![0.0; x0.len()];
        for k in 0..x0.len() {
            let sc = self.rtol * (1.0 + half[k].abs());
            err = err.max((half[k] - full[k]).abs() / sc);
            x[k] = 2.0 * half[k] - full[k];
        }
        if !err.is_finite() {
            return Err(DynamicsError::Solve(0));
        }
        let len = self.grid.len();
        let m: Vec<f64> = (0..len).map(|i| x[2 * i]).collect();
        let n: Vec<f64> = (0..len).map(|i| x[2 * i + 1]).collect();
        let mut next = FlowState::new(&self.grid, m, n)?;
        let scale = state.frame_scale;
        let (dtp, new_scale) = if a.abs() > 1e-14 {
            let g = (-a * dt).exp();
            (scale * scale * (1.0 - g * g) / (2.0 * a), scale * g)
        } else {
            (scale * scale * dt, scale)
        };
        next.t = state.t + dtp;
        next.s = state.s + dt;
        next.frame_scale = new_scale;
        next.frame_speed = a;
        Ok((next, err))
    }
}

/// Linear functional (mu, nu) -> <(mu'/r, nu/r), (phi1, phi2)> on partial masses.
#[derive(Clone, Debug)]
pub struct Direction {
    idx: Vec<usize>,
    cm: Vec<f64>,
    cn: Vec<f64>,
}

impl Direction {
    /// `phi` holds the density-type component and the gradient-type component.
    pub fn from_pair(grid: &RadialGrid, phi: &(Vec<f64>, Vec<f64>)) -> Self {
        // int mu' phi1 = - int mu phi1' for compactly supported phi1
        let dphi = grid.d1(&phi.0, Parity::Even);
        let w = grid.node_weights(Parity::Odd, |_| 1.0);
        let (mut idx, mut cm, mut cn) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..grid.len() {
            let a = -2.0 * PI * w[i] * dphi[i];
            let b = 2.0 * PI * w[i] * phi.1[i];
            if a != 0.0 || b != 0.0 {
                idx.push(i);
                cm.push(a);
                cn.push(b);
            }
        }
        Direction { idx, cm, cn }
    }

    pub fn eval(&self, m: &[f64], n: &[f64]) -> f64 {
        self.idx.iter().enumerate().map(|(k, &i)| self.cm[k] * m[i] + self.cn[k] * n[i]).sum()
    }

    /// Evaluates on (m(lambda r), n(lambda r)).
    pub fn eval_scaled(&self, grid: &RadialGrid, m: &[f64], n: &[f64], lambda: f64) -> f64 {
        let nodes = grid.nodes();
        self.idx
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let y = lambda * nodes[i];
                self.cm[k] * grid.interpolate(m, Parity::Even, y) + self.cn[k] * grid.interpolate(n, Parity::Even, y)
            })
            .sum()
    }
}

/// Output of the modulation solve.
#[derive(Clone, Debug)]
pub struct ModulationState {
    pub lambda: f64,
    pub b: f64,
    /// lifted parameter, NaN until `lift_b` has run
    pub b_hat: f64,
    pub s: f64,
    pub residuals: [f64; 2],
    /// error (mu, nu) in partial-mass form on the rescaled grid
    pub eps_pair: FieldPair,
    pub iterations: usize,
}

/// Orthogonality directions and profiles used for modulation on one grid.
pub struct Modulator {
    pub grid: Arc<RadialGrid>,
    pub lvl1: Arc<LevelOne>,
    pub phi: PhiM,
    dirs: [Direction; 2],
    pub b_max: f64,
    pub tol: f64,
}

/// Ceiling on b during modulation solves, above the profile default b*.
pub const MODULATION_B_MAX: f64 = 4.0 * B_STAR;

impl Modulator {
    pub fn new(grid: Arc<RadialGrid>, m_param: f64) -> Result<Self, DynamicsError> {
        let lvl1 = Arc::new(build_t1s1(&grid)?);
        let phi = build_phi_m(&grid, &lvl1, m_param)?;
        let dirs = [Direction::from_pair(&grid, &phi.phi), Direction::from_pair(&grid, &phi.lstar_phi)];
        Ok(Modulator { grid, lvl1, phi, dirs, b_max: MODULATION_B_MAX, tol: 1e-10 })
    }

    pub fn profile(&self, b: f64) -> Result<ProfileFamily, DynamicsError> {
        Ok(ProfileFamily::build_bounded(&self.grid, b, self.lvl1.clone(), self.b_max)?)
    }

    fn profile_values(&self, b: f64) -> Result<[f64; 2], DynamicsError> {
        let p = self.profile(b)?;
        Ok([self.dirs[0].eval(&p.mb, &p.nb), self.dirs[1].eval(&p.mb, &p.nb)])
    }

    fn state_values(&self, m: &[f64], n: &[f64], lambda: f64) -> [f64; 2] {
        [
            self.dirs[0].eval_scaled(&self.grid, m, n, lambda),
            self.dirs[1].eval_scaled(&self.grid, m, n, lambda),
        ]
    }

    /// Jacobian of the orthogonality conditions in (log lambda, b).
    pub fn jacobian(&self, m: &[f64], n: &[f64], lambda: f64, b: f64) -> Result<[[f64; 2]; 2], DynamicsError> {
        let h = 1e-6_f64;
        let wp = self.state_values(m, n, lambda * h.exp());
        let wm = self.state_values(m, n, lambda * (-h).exp());
        let db = 1e-4 * b;
        let pp = self.profile_values(b + db)?;
        let pm = self.profile_values(b - db)?;
        let mut j = [[0.0; 2]; 2];
        for k in 0..2 {
            j[k][0] = (wp[k] - wm[k]) / (2.0 * h);
            j[k][1] = -(pp[k] - pm[k]) / (2.0 * db);
        }
        Ok(j)
    }

    /// Solves <V_lambda - Q_b, Phi_M> = <V_lambda - Q_b, L* Phi_M> = 0 by damped Newton.
    pub fn decompose(&self, m: &[f64], n: &[f64], guess: (f64, f64)) -> Result<ModulationState, DynamicsError> {
        let (mut lambda, mut b) = guess;
        if !(lambda > 0.0 && b > 0.0) {
            return Err(DynamicsError::Decomposition(format!("invalid initial guess ({lambda}, {b})")));
        }
        let mut iterations = 0;
        let mut jac = self.jacobian(m, n, lambda, b)?;
        loop {
            let w = self.state_values(m, n, lambda);
            let p = self.profile_values(b)?;
            let g = [w[0] - p[0], w[1] - p[1]];
            let scale = [1.0 + w[0].abs() + p[0].abs(), 1.0 + w[1].abs() + p[1].abs()];
            if g[0].abs() <= self.tol * scale[0] && g[1].abs() <= self.tol * scale[1] {
                let prof = self.profile(b)?;
                let eps = self.error_pair(m, n, lambda, &prof)?;
                return Ok(ModulationState {
                    lambda,
                    b,
                    b_hat: f64::NAN,
                    s: 0.0,
                    residuals: g,
                    eps_pair: eps,
                    iterations,
                });
            }
            if iterations >= 40 {
                return Err(DynamicsError::Decomposition(format!(
                    "no convergence after {iterations} iterations (residuals {:e}, {:e})",
                    g[0], g[1]
                )));
            }
            if iterations > 0 && iterations % 4 == 0 {
                jac = self.jacobian(m, n, lambda, b)?;
            }
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            if !(det.abs() > 0.0) || !det.is_finite() {
                return Err(DynamicsError::Decomposition("singular Jacobian; M too small".into()));
            }
            let dl = -(jac[1][1] * g[0] - jac[0][1] * g[1]) / det;
            let dbb = -(-jac[1][0] * g[0] + jac[0][0] * g[1]) / det;
            // damp so that b stays positive and lambda moves by at most 20%
            let mut t = 1.0f64;
            if dbb < 0.0 && -dbb > 0.5 * b {
                t = t.min(0.5 * b / -dbb);
            }
            if dl.abs() > 0.2 {
                t = t.min(0.2 / dl.abs());
            }
            lambda *= (t * dl).exp();
            b += t * dbb;
            if b > self.b_max {
                return Err(DynamicsError::Decomposition(format!("b = {b} left the profile range")));
            }
            iterations += 1;
        }
    }

    fn error_pair(&self, m: &[f64], n: &[f64], lambda: f64, prof: &ProfileFamily) -> Result<FieldPair, DynamicsError> {
        let nodes = self.grid.nodes();
        let mu: Vec<f64> = nodes
            .iter()
            .enumerate()
            .map(|(i, &y)| self.grid.interpolate(m, Parity::Even, lambda * y) - prof.mb[i])
            .collect();
        let nu: Vec<f64> = nodes
            .iter()
            .enumerate()
            .map(|(i, &y)| self.grid.interpolate(n, Parity::Even, lambda * y) - prof.nb[i])
            .collect();
        Ok(FieldPair {
            density: RadialField::new(self.grid.clone(), mu, Parity::Even)?,
            chem_gradient: RadialField::new(self.grid.clone(), nu, Parity::Even)?,
            representation: Representation::PartialMass,
        })
    }

    /// <V_lambda - Q_bh, L* Phi_{0, 1/sqrt(bh)}>.
    pub fn lift_residual(&self, m: &[f64], n: &[f64], lambda: f64, b_hat: f64) -> Result<f64, DynamicsError> {
        let b0 = 1.0 / b_hat.sqrt();
        let phi0 = operators::phi0_direction(&self.grid, b0);
        let ls = operators::apply_lstar(&self.grid, &phi0.0, &phi0.1);
        let dir = Direction::from_pair(&self.grid, &ls);
        let p = self.profile(b_hat)?;
        Ok(dir.eval_scaled(&self.grid, m, n, lambda) - dir.eval(&p.mb, &p.nb))
    }

    /// Root of the lift residual near the modulated b.
    pub fn lift_b(&self, m: &[f64], n: &[f64], md: &ModulationState) -> Result<f64, DynamicsError> {
        let f = |x: f64| self.lift_residual(m, n, md.lambda, x);
        let b = md.b;
        let f0 = f(b)?;
        if f0 == 0.0 {
            return Ok(b);
        }
        let (mut lo, mut hi) = (b, b);
        let (mut flo, mut fhi) = (f0, f0);
        let mut factor = 1.25;
        let mut found = false;
        for _ in 0..8 {
            lo = b / factor;
            hi = (b * factor).min(self.b_max);
            flo = f(lo)?;
            fhi = f(hi)?;
            if flo * f0 <= 0.0 {
                hi = b;
                fhi = f0;
                found = true;
                break;
            }
            if fhi * f0 <= 0.0 {
                lo = b;
                flo = f0;
                found = true;
                break;
            }
            factor *= 1.5;
        }
        if !found || flo * fhi > 0.0 {
            return Err(DynamicsError::Bracket);
        }
        let mut conv = roots::SimpleConvergency { eps: 1e-14 * b.max(1e-300), max_iter: 200 };
        let mut failure = None;
        let root = roots::find_root_brent(
            lo,
            hi,
            |x: f64| match f(x) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            },
            &mut conv,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        root.map_err(|_| DynamicsError::Bracket)
    }
}

/// Initial data families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Initial {
    /// localized approximate profile at b0, scaled by lambda0
    Profile,
    /// factor times the ground state with its own potential
    ScaledGround { factor: f64 },
}

/// Run parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub frame: Frame,
    pub initial: Initial,
    pub b0: f64,
    pub lambda0: f64,
    pub m_param: f64,
    pub rtol: f64,
    pub dt0: f64,
    pub dt_max: f64,
    /// cap on |delta b| / b per step
    pub db_max: f64,
    /// gain of the frame speed correction on log of the residual scale
    pub feedback: f64,
    pub lambda_stop: f64,
    /// stop once b falls below this fraction of b0
    pub b_stop_ratio: f64,
    pub s_max: f64,
    pub t_max: f64,
    pub max_steps: usize,
    pub record_every: usize,
    pub delta: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridSpec { h0: 0.05, r_uniform: 5.0, nodes_per_decade: 48.0, r_max: 1.0e3, order: 6, growth: 1.05 },
            frame: Frame::Rescaled,
            initial: Initial::Profile,
            b0: 1.0e-2,
            lambda0: 1.0,
            m_param: 6.0,
            rtol: 1.0e-7,
            dt0: 1.0e-2,
            dt_max: 1.0,
            db_max: 1.0e-3,
            feedback: 0.2,
            lambda_stop: 1.0e-3,
            b_stop_ratio: 0.5,
            s_max: 1.0e4,
            t_max: 1.0e3,
            max_steps: 200_000,
            record_every: 5,
            delta: 0.0,
            seed: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let mut bad = Vec::new();
        if let Err(e) = self.grid.validate() {
            bad.push(e.to_string());
        }
        if self.initial == Initial::Profile && !(self.b0 > 0.0) {
            bad.push(format!("b0 must be positive, got {}", self.b0));
        }
        if self.initial == Initial::Profile && self.b0 > B_STAR {
            bad.push(format!("b0 = {} exceeds b* = {}", self.b0, B_STAR));
        }
        if let Initial::ScaledGround { factor } = self.initial {
            if !(factor > 0.0) {
                bad.push("ground-state factor must be positive".into());
            }
        }
        let positive = [
            ("lambda0", self.lambda0),
            ("rtol", self.rtol),
            ("dt0", self.dt0),
            ("dt_max", self.dt_max),
            ("db_max", self.db_max),
            ("s_max", self.s_max),
            ("t_max", self.t_max),
        ];
        for (k, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                bad.push(format!("{k} must be positive and finite"));
            }
        }
        if !(self.delta >= 0.0) {
            bad.push("delta must be nonnegative".into());
        }
        if self.record_every == 0 {
            bad.push("record_every must be at least 1".into());
        }
        if self.frame == Frame::Rescaled && self.initial != Initial::Profile {
            bad.push("the rescaled frame needs profile initial data".into());
        }
        if self.frame == Frame::Rescaled && !(self.m_param >= crate::operators::M_MIN) {
            bad.push(format!("M = {} below the minimum {}", self.m_param, crate::operators::M_MIN));
        }
        if self.frame == Frame::Rescaled && self.b0 > 0.0 && self.m_param > 1.0 / self.b0.sqrt() {
            bad.push(format!("M = {} exceeds the parabolic scale 1/sqrt(b0) = {}", self.m_param, 1.0 / self.b0.sqrt()));
        }
        if self.frame == Frame::Rescaled && self.grid.r_max < 4.0 * self.m_param {
            bad.push(format!("r_max = {} must be at least 4 M = {}", self.grid.r_max, 4.0 * self.m_param));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(DynamicsError::Config(bad.join("; ")))
        }
    }
}

/// One recorded sample.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Record {
    pub t: f64,
    pub s: f64,
    pub lambda: f64,
    pub b: f64,
    pub b_hat: f64,
    pub mass: f64,
    pub free_energy: f64,
    pub e2_norm: f64,
    pub lyapunov: f64,
    pub residual_phi: f64,
    pub residual_lstar_phi: f64,
}

/// Recorded history of a run, monotone in t and s.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct TimeSeries {
    pub records: Vec<Record>,
}

impl TimeSeries {
    pub fn column(&self, f: impl Fn(&Record) -> f64) -> Vec<f64> {
        self.records.iter().map(f).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.records {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Why a run ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    LambdaStop,
    BStop,
    SMax,
    TMax,
    MaxSteps,
    Failed(String),
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub series: TimeSeries,
    pub stop: StopReason,
    pub steps: usize,
    pub rejected: usize,
    /// most negative density seen, relative to the central density
    pub min_density_ratio: f64,
    pub seed: u64,
    /// last accepted state, in the run's frame
    pub final_state: FlowState,
}

impl RunResult {
    pub fn reached_lambda_stop(&self) -> bool {
        self.stop == StopReason::LambdaStop
    }
}

/// Smooth random perturbation of the initial data, rejected until the density stays positive.
fn perturb(
    grid: &Arc<RadialGrid>,
    u: &mut [f64],
    n: &mut [f64],
    delta: f64,
    seed: u64,
) -> Result<(), DynamicsError> {
    if delta == 0.0 {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = grid.nodes();
    let umax = u.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    for _ in 0..100 {
        let mut du = vec![0.0; u.len()];
        let mut dn = vec![0.0; u.len()];
        for _ in 0..4 {
            let amp: f64 = rng.random_range(-1.0..1.0);
            let c: f64 = rng.random_range(0.0..6.0);
            let w: f64 = rng.random_range(0.5..2.0);
            let amp_n: f64 = rng.random_range(-1.0..1.0);
            for (i, &r) in nodes.iter().enumerate() {
                let z = (r - c) / w;
                du[i] += delta * umax * amp * (-z * z).exp();
                let zn = r / w;
                dn[i] += delta * amp_n * zn * zn * (-zn * zn).exp();
            }
        }
        if u.iter().zip(&du).all(|(a, b)| a + b > 0.0) {
            for i in 0..u.len() {
                u[i] += du[i];
                n[i] += dn[i];
            }
            return Ok(());
        }
    }
    Err(DynamicsError::Positivity(-delta))
}

fn initial_state(cfg: &RunConfig, grid: &Arc<RadialGrid>) -> Result<FlowState, DynamicsError> {
    let nodes = grid.nodes();
    let (mut u, mut n): (Vec<f64>, Vec<f64>) = match cfg.initial {
        Initial::Profile => {
            let lvl1 = Arc::new(build_t1s1(grid)?);
            let prof = ProfileFamily::build_with(grid, cfg.b0, lvl1)?;
            let lam = match cfg.frame {
                Frame::Physical => cfg.lambda0,
                Frame::Rescaled => 1.0,
            };
            let u = nodes.iter().map(|&r| grid.interpolate(&prof.qb, Parity::Even, r / lam) / (lam * lam)).collect();
            let n = nodes.iter().map(|&r| grid.interpolate(&prof.nb, Parity::Even, r / lam)).collect();
            (u, n)
        }
        Initial::ScaledGround { factor } => {
            let u = nodes.iter().map(|&r| factor * closed::q(r)).collect();
            let n = nodes.iter().map(|&r| factor * closed::m0(r)).collect();
            (u, n)
        }
    };
    perturb(grid, &mut u, &mut n, cfg.delta, cfg.seed)?;
    let m = grid.cumulative(&u, Parity::Even, |t| t);
    let mut st = FlowState::new(grid, m, n)?;
    if cfg.frame == Frame::Rescaled {
        st.frame_scale = cfg.lambda0;
        st.frame_speed = cfg.b0;
    }
    Ok(st)
}

fn min_density_ratio(state: &FlowState) -> f64 {
    let u = state.density();
    let top = u.iter().fold(0.0f64, |a, &b| a.max(b));
    let low = u.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    low / top
}

fn energy_of(state: &FlowState, frame: Frame) -> Result<EnergyReport, DynamicsError> {
    let norm = match frame {
        Frame::Physical => Normalization::ZeroAtOuter,
        Frame::Rescaled => Normalization::LogConvolution,
    };
    Ok(diagnostics::free_energy(&state.pair, norm)?)
}

/// X_Q norm and Lyapunov value of E2 = L E for a partial-mass error pair.
pub fn error_norms(eps: &FieldPair) -> (f64, f64) {
    let prim = eps.to_primitive();
    let grid = &prim.density.grid;
    let (a, b) = operators::apply_l(grid, &prim.density.values, &prim.chem_gradient.values);
    (operators::xq_norm_sq(grid, &a, &b).sqrt(), operators::energy_form(grid, &a, &b))
}

/// Integrates a run to its stop criterion.
pub fn evolve(cfg: &RunConfig) -> Result<RunResult, DynamicsError> {
    cfg.validate()?;
    let grid = RadialGrid::new(cfg.grid.clone())?;
    let mut state = initial_state(cfg, &grid)?;
    let solver = FlowSolver::new(grid.clone(), cfg.frame, state.m()[grid.len() - 1], cfg.rtol);
    let modulator = match cfg.frame {
        Frame::Rescaled => Some(Modulator::new(grid.clone(), cfg.m_param)?),
        Frame::Physical => None,
    };
    let mut series = TimeSeries::default();
    let mut md: Option<ModulationState> = None;
    let mut b_prev = cfg.b0;
    if let Some(modu) = &modulator {
        let mut first = modu.decompose(state.m(), state.n(), (1.0, cfg.b0))?;
        b_prev = first.b;
        state.frame_speed = first.b - cfg.feedback * first.lambda.ln();
        first.b_hat = modu.lift_b(state.m(), state.n(), &first).unwrap_or(f64::NAN);
        md = Some(first);
    }
    let proxy = |st: &FlowState| (8.0 / st.central_density()).sqrt();
    let mut min_ratio = min_density_ratio(&state);
    let record = |st: &FlowState, md: &Option<ModulationState>, series: &mut TimeSeries| -> Result<(), DynamicsError> {
        let e = energy_of(st, cfg.frame)?;
        let (lambda, b, b_hat, res, e2, lyap) = match md {
            Some(m) => {
                let (e2, ly) = error_norms(&m.eps_pair);
                (st.frame_scale * m.lambda, m.b, m.b_hat, m.residuals, e2, ly)
            }
            None => (proxy(st), f64::NAN, f64::NAN, [f64::NAN; 2], f64::NAN, f64::NAN),
        };
        series.records.push(Record {
            t: st.t,
            s: st.s,
            lambda,
            b,
            b_hat,
            mass: e.mass,
            free_energy: e.free_energy,
            e2_norm: e2,
            lyapunov: lyap,
            residual_phi: res[0],
            residual_lstar_phi: res[1],
        });
        Ok(())
    };
    record(&state, &md, &mut series)?;

    let mut dt = cfg.dt0;
    let mut steps = 0usize;
    let mut rejected = 0usize;
    let stop;
    loop {
        if steps >= cfg.max_steps {
            stop = StopReason::MaxSteps;
            break;
        }
        let (next, err) = match solver.step(&state, dt) {
            Ok(v) => v,
            Err(e) => {
                if dt < 1e-12 {
                    stop = StopReason::Failed(e.to_string());
                    break;
                }
                dt *= 0.25;
                rejected += 1;
                continue;
            }
        };
        if err > 1.0 {
            dt *= (0.9 / err.sqrt()).max(0.2);
            rejected += 1;
            continue;
        }
        let mut next = next;
        let mut new_md = None;
        if let Some(modu) = &modulator {
            let guess = md.as_ref().map(|m| (m.lambda * ((state.frame_speed - m.b) * dt).exp(), m.b)).unwrap();
            match modu.decompose(next.m(), next.n(), guess) {
                Ok(m) => {
                    if (m.b - b_prev).abs() > cfg.db_max * b_prev && dt > 1e-6 {
                        dt *= 0.5;
                        rejected += 1;
                        continue;
                    }
                    new_md = Some(m);
                }
                Err(e) => {
                    if dt > 1e-6 {
                        dt *= 0.25;
                        rejected += 1;
                        continue;
                    }
                    stop = StopReason::Failed(e.to_string());
                    break;
                }
            }
        }
        steps += 1;
        min_ratio = min_ratio.min(min_density_ratio(&next));
        if let (Some(modu), Some(mut m)) = (&modulator, new_md) {
            // recentre the frame when the bubble has drifted from scale 1
            if m.lambda.ln().abs() > 0.1 {
                let (rm, rn) = rescale_fields(&grid, next.m(), next.n(), m.lambda);
                let mut moved = FlowState::new(&grid, rm, rn)?;
                moved.t = next.t;
                moved.s = next.s;
                moved.frame_scale = next.frame_scale * m.lambda;
                moved.mass = next.mass;
                next = moved;
                m = modu.decompose(next.m(), next.n(), (1.0, m.b))?;
            }
            m.s = next.s;
            b_prev = m.b;
            next.frame_speed = m.b - cfg.feedback * m.lambda.ln();
            if steps % cfg.record_every == 0 {
                m.b_hat = modu.lift_b(next.m(), next.n(), &m).unwrap_or(f64::NAN);
            }
            md = Some(m);
        }
        state = next;
        let grow = if err > 0.0 { (0.9 / err.sqrt()).min(2.0) } else { 2.0 };
        dt = (dt * grow).min(cfg.dt_max);

        let lam = match &md {
            Some(m) => state.frame_scale * m.lambda,
            None => proxy(&state),
        };
        let done = if lam < cfg.lambda_stop {
            Some(StopReason::LambdaStop)
        } else if md.as_ref().is_some_and(|m| m.b < cfg.b_stop_ratio * cfg.b0) {
            Some(StopReason::BStop)
        } else if state.s >= cfg.s_max {
            Some(StopReason::SMax)
        } else if state.t >= cfg.t_max {
            Some(StopReason::TMax)
        } else {
            None
        };
        if steps % cfg.record_every == 0 || done.is_some() {
            if done.is_some() {
                if let (Some(modu), Some(m)) = (&modulator, md.as_mut()) {
                    if m.b_hat.is_nan() {
                        m.b_hat = modu.lift_b(state.m(), state.n(), m).unwrap_or(f64::NAN);
                    }
                }
            }
            if let Err(e) = record(&state, &md, &mut series) {
                stop = StopReason::Failed(e.to_string());
                break;
            }
        }
        if let Some(r) = done {
            stop = r;
            break;
        }
    }
    Ok(RunResult { series, stop, steps, rejected, min_density_ratio: min_ratio, seed: cfg.seed, final_state: state })
}

/// (m(lambda y), n(lambda y)) on the same nodes.
pub fn rescale_fields(grid: &RadialGrid, m: &[f64], n: &[f64], lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let nodes = grid.nodes();
    (
        nodes.iter().map(|&y| grid.interpolate(m, Parity::Even, lambda * y)).collect(),
        nodes.iter().map(|&y| grid.interpolate(n, Parity::Even, lambda * y)).collect(),
    )
}

/// Summary of perturbed reruns.
#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    pub runs: usize,
    pub reached_stop: usize,
    pub stops: Vec<StopReason>,
    pub seeds: Vec<u64>,
}

/// Reruns `cfg` with `count` perturbations of size `delta`, seeds cfg.seed + 1 .. cfg.seed + count.
pub fn stability_probe(cfg: &RunConfig, count: usize, delta: f64) -> (StabilityReport, Vec<Result<RunResult, DynamicsError>>) {
    use rayon::prelude::*;
    let results: Vec<_> = (1..=count as u64)
        .into_par_iter()
        .map(|k| {
            let mut c = cfg.clone();
            c.delta = delta;
            c.seed = cfg.seed.wrapping_add(k);
            evolve(&c)
        })
        .collect();
    let stops: Vec<StopReason> = results
        .iter()
        .map(|r| match r {
            Ok(x) => x.stop.clone(),
            Err(e) => StopReason::Failed(e.to_string()),
        })
        .collect();
    let reached_stop = stops.iter().filter(|s| **s == StopReason::LambdaStop).count();
    let seeds = (1..=count as u64).map(|k| cfg.seed.wrapping_add(k)).collect();
    (StabilityReport { runs: count, reached_stop, stops, seeds }, results)
}
