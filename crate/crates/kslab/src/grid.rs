//! Radial mesh, finite-difference stencils and product quadrature.
//!
//! The mesh is uniform up to `r_uniform`, then the spacing grows smoothly
//! until it reaches a fixed ratio per node. Fields near the origin are
//! differentiated with mirror (ghost) nodes whose sign follows the parity.

use std::io::Write;
use std::sync::Arc;

use crate::error::GridError;

/// Behaviour of a radial function under r -> -r.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    fn sign(self) -> f64 {
        match self {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        }
    }

    pub fn flip(self) -> Parity {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
        }
    }
}

/// Mesh parameters.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub h0: f64,
    pub r_uniform: f64,
    pub nodes_per_decade: f64,
    pub r_max: f64,
    pub order: usize,
    /// maximal ratio between consecutive spacings in the transition zone
    pub growth: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            h0: 0.025,
            r_uniform: 10.0,
            nodes_per_decade: 64.0,
            r_max: 1.0e4,
            order: 6,
            growth: 1.05,
        }
    }
}

impl GridSpec {
    pub fn with_r_max(mut self, r_max: f64) -> Self {
        self.r_max = r_max;
        self
    }

    pub fn coarse(r_max: f64) -> Self {
        GridSpec {
            h0: 0.1,
            r_uniform: 10.0,
            nodes_per_decade: 24.0,
            r_max,
            order: 6,
            growth: 1.1,
        }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let mut bad = Vec::new();
        if !(self.h0 > 0.0) {
            bad.push("h0 must be positive".to_string());
        }
        if !(self.r_uniform > 0.0) {
            bad.push("r_uniform must be positive".to_string());
        }
        if !(self.nodes_per_decade >= 12.0) {
            bad.push("nodes_per_decade must be at least 12".to_string());
        }
        if !(self.r_max > self.r_uniform) {
            bad.push("r_max must exceed r_uniform".to_string());
        }
        if self.order < 2 || self.order % 2 != 0 || self.order > 10 {
            bad.push("order must be even and in [2, 10]".to_string());
        }
        if !(self.growth > 1.0) {
            bad.push("growth must exceed 1".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(GridError::InvalidSpec(bad.join("; ")))
        }
    }
}

#[derive(Clone, Debug)]
struct Row {
    idx: Vec<usize>,
    even: Vec<f64>,
    odd: Vec<f64>,
}

impl Row {
    fn apply(&self, f: &[f64], parity: Parity) -> f64 {
        let w = match parity {
            Parity::Even => &self.even,
            Parity::Odd => &self.odd,
        };
        self.idx.iter().zip(w).map(|(&j, &c)| c * f[j]).sum()
    }

    fn weights(&self, parity: Parity) -> &[f64] {
        match parity {
            Parity::Even => &self.even,
            Parity::Odd => &self.odd,
        }
    }
}

#[derive(Clone, Debug)]
struct QuadPoint {
    x: f64,
    w: f64,
    row: Row,
}

/// Nonuniform radial mesh with derivative stencils and quadrature rules.
#[derive(Debug)]
pub struct RadialGrid {
    nodes: Vec<f64>,
    order: usize,
    spec: GridSpec,
    d1: Vec<Row>,
    d2: Vec<Row>,
    d3: Vec<Row>,
    cells: Vec<Vec<QuadPoint>>,
    quad_weights: Vec<f64>,
}

const GAUSS_POINTS: usize = 8;

impl RadialGrid {
    pub fn new(spec: GridSpec) -> Result<Arc<RadialGrid>, GridError> {
        spec.validate()?;
        let nodes = build_nodes(&spec);
        Self::from_nodes(nodes, spec)
    }

    /// Builds the stencils on explicitly provided nodes (r_0 must be 0).
    pub fn from_nodes(nodes: Vec<f64>, spec: GridSpec) -> Result<Arc<RadialGrid>, GridError> {
        let order = spec.order;
        if nodes.first() != Some(&0.0) {
            return Err(GridError::InvalidSpec("first node must be 0".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GridError::InvalidSpec("nodes must be strictly increasing".into()));
        }
        if nodes.len() < order + 4 {
            return Err(GridError::TooCoarse { nodes: nodes.len(), needed: order + 4 });
        }
        let n = nodes.len();
        let d1 = (0..n).map(|i| stencil_row(&nodes, nodes[i], i as i64, order + 1, 1)).collect();
        let d2 = (0..n).map(|i| stencil_row(&nodes, nodes[i], i as i64, order + 1, 2)).collect();
        let d3 = (0..n).map(|i| stencil_row(&nodes, nodes[i], i as i64, order + 3, 3)).collect();

        let (gx, gw) = gauss_legendre(GAUSS_POINTS);
        let mut cells = Vec::with_capacity(n - 1);
        for c in 0..n - 1 {
            let (a, b) = (nodes[c], nodes[c + 1]);
            // graded sub-cells towards the origin for log-singular kernels
            let mut pieces = Vec::new();
            if c == 0 {
                let mut hi = b;
                for _ in 0..40 {
                    pieces.push((0.5 * hi, hi));
                    hi *= 0.5;
                }
                pieces.push((0.0, hi));
            } else {
                pieces.push((a, b));
            }
            let mut pts = Vec::with_capacity(pieces.len() * GAUSS_POINTS);
            let center = c as i64 - (order as i64) / 2;
            for (lo, hi) in pieces {
                let half = 0.5 * (hi - lo);
                let mid = 0.5 * (hi + lo);
                for (x, w) in gx.iter().zip(&gw) {
                    let xx = mid + half * x;
                    let row = interp_row(&nodes, xx, center, order + 2);
                    pts.push(QuadPoint { x: xx, w: w * half, row });
                }
            }
            cells.push(pts);
        }
        let mut grid = RadialGrid {
            nodes,
            order,
            spec,
            d1,
            d2,
            d3,
            cells,
            quad_weights: Vec::new(),
        };
        grid.quad_weights = grid.node_weights(Parity::Even, |t| t);
        Ok(Arc::new(grid))
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn r_max(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Weights w_i with sum_i w_i f_i ~ int_0^{r_max} f r dr for even f.
    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_weights
    }

    /// Per-node weights for int_0^{r_max} f(t) k(t) dt.
    pub fn node_weights(&self, parity: Parity, kernel: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut w = vec![0.0; self.len()];
        for cell in &self.cells {
            for p in cell {
                let k = p.w * kernel(p.x);
                for (&j, &c) in p.row.idx.iter().zip(p.row.weights(parity)) {
                    w[j] += k * c;
                }
            }
        }
        w
    }

    /// Finite-difference derivative of the given order (1, 2 or 3).
    pub fn diff(&self, f: &[f64], parity: Parity, order: usize) -> Result<Vec<f64>, GridError> {
        let rows = match order {
            1 => &self.d1,
            2 => &self.d2,
            3 => &self.d3,
            _ => return Err(GridError::UnsupportedOrder(order)),
        };
        Ok(rows.iter().map(|r| r.apply(f, parity)).collect())
    }

    pub fn d1(&self, f: &[f64], parity: Parity) -> Vec<f64> {
        self.d1.iter().map(|r| r.apply(f, parity)).collect()
    }

    pub fn d2(&self, f: &[f64], parity: Parity) -> Vec<f64> {
        self.d2.iter().map(|r| r.apply(f, parity)).collect()
    }

    pub fn d3(&self, f: &[f64], parity: Parity) -> Vec<f64> {
        self.d3.iter().map(|r| r.apply(f, parity)).collect()
    }

    /// Sparse first-derivative row of node i as (index, weight) pairs.
    pub fn d1_row(&self, i: usize, parity: Parity) -> Vec<(usize, f64)> {
        let r = &self.d1[i];
        r.idx.iter().copied().zip(r.weights(parity).iter().copied()).collect()
    }

    pub fn d2_row(&self, i: usize, parity: Parity) -> Vec<(usize, f64)> {
        let r = &self.d2[i];
        r.idx.iter().copied().zip(r.weights(parity).iter().copied()).collect()
    }

    /// f'' + f'/r for an even f, with 2 f''(0) at the origin.
    pub fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        let d1 = self.d1(f, Parity::Even);
        let d2 = self.d2(f, Parity::Even);
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, &r)| if i == 0 { 2.0 * d2[0] } else { d2[i] + d1[i] / r })
            .collect()
    }

    /// (r g)'/r for an odd g, with 2 g'(0) at the origin.
    pub fn divergence(&self, g: &[f64]) -> Vec<f64> {
        let d1 = self.d1(g, Parity::Odd);
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, &r)| if i == 0 { 2.0 * d1[0] } else { d1[i] + g[i] / r })
            .collect()
    }

    /// c_i = int_0^{r_i} f(t) k(t) dt with f interpolated from nodal values.
    pub fn cumulative(&self, f: &[f64], parity: Parity, kernel: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        out.push(0.0);
        for cell in &self.cells {
            let mut s = 0.0;
            for p in cell {
                s += p.w * kernel(p.x) * p.row.apply(f, parity);
            }
            acc += s;
            out.push(acc);
        }
        out
    }

    /// t_i = int_{r_i}^{r_max} f(t) k(t) dt, accumulated from the outer end.
    pub fn cumulative_tail(&self, f: &[f64], parity: Parity, kernel: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        let mut acc = 0.0;
        for c in (0..n - 1).rev() {
            let s: f64 = self.cells[c].iter().map(|p| p.w * kernel(p.x) * p.row.apply(f, parity)).sum();
            acc += s;
            out[c] = acc;
        }
        out
    }

    /// Cumulative integral of a closed-form integrand.
    pub fn cumulative_fn(&self, g: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        out.push(0.0);
        for cell in &self.cells {
            acc += cell.iter().map(|p| p.w * g(p.x)).sum::<f64>();
            out.push(acc);
        }
        out
    }

    /// int_0^{r_max} f(t) k(t) dt.
    pub fn integral(&self, f: &[f64], parity: Parity, kernel: impl Fn(f64) -> f64) -> f64 {
        *self.cumulative(f, parity, kernel).last().unwrap()
    }

    /// int_0^{r_max} f r dr with the precomputed weights.
    pub fn integral_rdr(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.quad_weights).map(|(a, b)| a * b).sum()
    }

    /// Local Lagrange interpolation; points beyond r_max take the last value.
    pub fn interpolate(&self, f: &[f64], parity: Parity, x: f64) -> f64 {
        let x = x.abs();
        let rmax = self.r_max();
        if x >= rmax {
            return f[self.len() - 1];
        }
        let c = self.nodes.partition_point(|&r| r <= x).saturating_sub(1);
        let center = c as i64 - (self.order as i64) / 2;
        interp_row(&self.nodes, x, center, self.order + 2).apply(f, parity)
    }

    /// Index of the first node with r >= x.
    pub fn index_at_or_above(&self, x: f64) -> usize {
        self.nodes.partition_point(|&r| r < x).min(self.len() - 1)
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&r| f(r)).collect()
    }
}

fn build_nodes(spec: &GridSpec) -> Vec<f64> {
    let nu = (spec.r_uniform / spec.h0).ceil() as usize;
    let h = spec.r_uniform / nu as f64;
    let mut nodes: Vec<f64> = (0..=nu).map(|i| i as f64 * h).collect();
    let ratio = 10f64.powf(1.0 / spec.nodes_per_decade) - 1.0;
    let mut step = h;
    let mut r = spec.r_uniform;
    while r < spec.r_max {
        step = (step * spec.growth).min(r * ratio).max(step);
        r += step;
        nodes.push(r);
    }
    // stretch the nonuniform part so the last node is exactly r_max
    let last = *nodes.last().unwrap();
    let ru = spec.r_uniform;
    let scale = (spec.r_max - ru) / (last - ru);
    for x in nodes.iter_mut().skip(nu + 1) {
        *x = ru + (*x - ru) * scale;
    }
    nodes
}

fn ext_pos(nodes: &[f64], k: i64) -> f64 {
    if k >= 0 {
        nodes[k as usize]
    } else {
        -nodes[(-k) as usize]
    }
}

fn window(n: usize, center: i64, size: usize) -> i64 {
    let last = n as i64 - 1;
    center.min(last - size as i64 + 1)
}

fn fold(lo: i64, w: &[f64]) -> Row {
    let mut idx: Vec<usize> = Vec::new();
    let mut even: Vec<f64> = Vec::new();
    let mut odd: Vec<f64> = Vec::new();
    for (k, &c) in w.iter().enumerate() {
        let e = lo + k as i64;
        let j = e.unsigned_abs() as usize;
        let (se, so) = if e < 0 { (Parity::Even.sign(), Parity::Odd.sign()) } else { (1.0, 1.0) };
        if let Some(p) = idx.iter().position(|&q| q == j) {
            even[p] += se * c;
            odd[p] += so * c;
        } else {
            idx.push(j);
            even.push(se * c);
            odd.push(so * c);
        }
    }
    Row { idx, even, odd }
}

fn stencil_row(nodes: &[f64], z: f64, i: i64, size: usize, deriv: usize) -> Row {
    let lo = window(nodes.len(), i - (size as i64) / 2, size);
    let xs: Vec<f64> = (0..size).map(|k| ext_pos(nodes, lo + k as i64)).collect();
    let w = fornberg(z, &xs, deriv);
    fold(lo, &w[deriv])
}

fn interp_row(nodes: &[f64], z: f64, center: i64, size: usize) -> Row {
    let lo = window(nodes.len(), center, size);
    let xs: Vec<f64> = (0..size).map(|k| ext_pos(nodes, lo + k as i64)).collect();
    let w = fornberg(z, &xs, 0);
    fold(lo, &w[0])
}

/// Finite-difference weights for derivatives 0..=m at z on nodes x.
pub fn fornberg(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        xs[i] = x;
        ws[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (xs, ws)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Sampled radial function.
#[derive(Clone, Debug)]
pub struct RadialField {
    pub grid: Arc<RadialGrid>,
    pub values: Vec<f64>,
    pub parity: Parity,
}

/// Additive constant convention for potentials recovered from gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    ValueAtZero,
    /// the logarithmic convolution potential of the divergence
    LogConvolution,
    ZeroAtOuter,
}

impl RadialField {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>, parity: Parity) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        Ok(RadialField { grid, values, parity })
    }

    pub fn from_fn(grid: &Arc<RadialGrid>, parity: Parity, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.sample(f);
        RadialField { grid: grid.clone(), values, parity }
    }

    pub fn zeros(grid: &Arc<RadialGrid>, parity: Parity) -> Self {
        RadialField { grid: grid.clone(), values: vec![0.0; grid.len()], parity }
    }

    pub fn at(&self, r: f64) -> f64 {
        self.grid.interpolate(&self.values, self.parity, r)
    }

    pub fn derivative(&self, order: usize) -> Result<RadialField, GridError> {
        if self.grid.len() < order + 2 {
            return Err(GridError::TooCoarse { nodes: self.grid.len(), needed: order + 2 });
        }
        let values = self.grid.diff(&self.values, self.parity, order)?;
        let parity = if order % 2 == 1 { self.parity.flip() } else { self.parity };
        Ok(RadialField { grid: self.grid.clone(), values, parity })
    }

    pub fn laplacian(&self) -> Result<RadialField, GridError> {
        if self.parity != Parity::Even {
            return Err(GridError::ParityMismatch("laplacian needs an even field"));
        }
        Ok(RadialField { grid: self.grid.clone(), values: self.grid.laplacian(&self.values), parity: Parity::Even })
    }

    /// 2 pi int f r dr.
    pub fn integrate(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.grid.integral(&self.values, self.parity, |t| t)
    }

    /// m(r) = int_0^r f t dt.
    pub fn partial_mass(&self) -> RadialField {
        let values = self.grid.cumulative(&self.values, self.parity, |t| t);
        RadialField { grid: self.grid.clone(), values, parity: Parity::Even }
    }

    /// Radial derivative of the logarithmic potential, m_f / r.
    pub fn poisson_field(&self) -> RadialField {
        let m = self.partial_mass();
        let values = self
            .grid
            .nodes()
            .iter()
            .zip(&m.values)
            .map(|(&r, &mm)| if r == 0.0 { 0.0 } else { mm / r })
            .collect();
        RadialField { grid: self.grid.clone(), values, parity: Parity::Odd }
    }

    /// Antiderivative of a gradient field.
    pub fn potential_from_gradient(&self, norm: Normalization) -> Result<RadialField, GridError> {
        if self.parity != Parity::Odd {
            return Err(GridError::ParityMismatch("gradient fields are odd"));
        }
        let mut v = self.grid.cumulative(&self.values, Parity::Odd, |_| 1.0);
        if norm == Normalization::ZeroAtOuter {
            let last = *v.last().unwrap();
            for x in v.iter_mut() {
                *x -= last;
            }
        }
        if norm == Normalization::LogConvolution {
            let n = v.len() - 1;
            let rmax = self.grid.r_max();
            let mass = rmax * self.values[n];
            if !mass.is_finite() {
                return Err(GridError::NonIntegrable);
            }
            // phi(0) = int f log t t dt = m(R) log R - int_0^R g
            let phi0 = mass * rmax.ln() - v[n];
            for x in v.iter_mut() {
                *x += phi0;
            }
        }
        Ok(RadialField { grid: self.grid.clone(), values: v, parity: Parity::Even })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "r,value")?;
        for (r, v) in self.grid.nodes().iter().zip(&self.values) {
            writeln!(w, "{:.17e},{:.17e}", r, v)?;
        }
        Ok(())
    }
}

/// Which variables a field pair stores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Representation {
    /// (u, d_r v)
    Primitive,
    /// (m_u, n_v) with u = m'/r and d_r v = n/r
    PartialMass,
}

/// The state (u, d_r v) or its partial-mass form.
#[derive(Clone, Debug)]
pub struct FieldPair {
    pub density: RadialField,
    pub chem_gradient: RadialField,
    pub representation: Representation,
}

impl FieldPair {
    pub fn primitive(u: RadialField, g: RadialField) -> Self {
        FieldPair { density: u, chem_gradient: g, representation: Representation::Primitive }
    }

    pub fn to_partial_mass(&self) -> FieldPair {
        match self.representation {
            Representation::PartialMass => self.clone(),
            Representation::Primitive => {
                let m = self.density.partial_mass();
                let nodes = self.chem_gradient.grid.nodes();
                let n: Vec<f64> = nodes.iter().zip(&self.chem_gradient.values).map(|(r, g)| r * g).collect();
                FieldPair {
                    density: m,
                    chem_gradient: RadialField { grid: self.density.grid.clone(), values: n, parity: Parity::Even },
                    representation: Representation::PartialMass,
                }
            }
        }
    }

    pub fn to_primitive(&self) -> FieldPair {
        match self.representation {
            Representation::Primitive => self.clone(),
            Representation::PartialMass => {
                let grid = &self.density.grid;
                let dm = grid.d1(&self.density.values, Parity::Even);
                let d2m = grid.d2(&self.density.values, Parity::Even);
                let nodes = grid.nodes();
                let u = (0..nodes.len())
                    .map(|i| if i == 0 { d2m[0] } else { dm[i] / nodes[i] })
                    .collect();
                let g = (0..nodes.len())
                    .map(|i| if i == 0 { 0.0 } else { self.chem_gradient.values[i] / nodes[i] })
                    .collect();
                FieldPair {
                    density: RadialField { grid: grid.clone(), values: u, parity: Parity::Even },
                    chem_gradient: RadialField { grid: grid.clone(), values: g, parity: Parity::Odd },
                    representation: Representation::Primitive,
                }
            }
        }
    }

    /// 2 pi lim m(r), read at r_max.
    pub fn mass(&self) -> f64 {
        match self.representation {
            Representation::PartialMass => 2.0 * std::f64::consts::PI * self.density.values.last().unwrap(),
            Representation::Primitive => self.density.integrate(),
        }
    }
}
