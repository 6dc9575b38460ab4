//! Closed-form radial functions: ground state, homogeneous basis, cutoff.

/// Ground state 8/(1+r^2)^2.
pub fn q(r: f64) -> f64 {
    8.0 / (1.0 + r * r).powi(2)
}

pub fn dq(r: f64) -> f64 {
    -32.0 * r / (1.0 + r * r).powi(3)
}

pub fn phi_q(r: f64) -> f64 {
    2.0 * (1.0 + r * r).ln()
}

pub fn dphi_q(r: f64) -> f64 {
    4.0 * r / (1.0 + r * r)
}

/// Scaling generator applied to Q: 2Q + rQ'.
pub fn lambda_q(r: f64) -> f64 {
    let s = 1.0 + r * r;
    16.0 * (1.0 - r * r) / (s * s * s)
}

pub fn phi_lambda_q(r: f64) -> f64 {
    -4.0 / (1.0 + r * r)
}

/// d_r phi_{Lambda Q} = r Q.
pub fn dphi_lambda_q(r: f64) -> f64 {
    r * q(r)
}

/// Lambda^2 Q = div(y Lambda Q) = 2 LQ + r (LQ)'.
pub fn lambda2_q(r: f64) -> f64 {
    let s = 1.0 + r * r;
    let dlq = 16.0 * (-2.0 * r * s - 6.0 * r * (1.0 - r * r)) / (s * s * s * s);
    2.0 * lambda_q(r) + r * dlq
}

/// partial mass of Q
pub fn m0(r: f64) -> f64 {
    4.0 * r * r / (1.0 + r * r)
}

pub fn dm0(r: f64) -> f64 {
    r * q(r)
}

pub fn psi0(r: f64) -> f64 {
    r * r / (1.0 + r * r).powi(2)
}

pub fn psi1(r: f64) -> f64 {
    let r2 = r * r;
    let l = if r > 0.0 { r.ln() } else { 0.0 };
    (r2 * r2 + 4.0 * r2 * l - 1.0) / (1.0 + r2).powi(2)
}

/// psi0'/r = 2(1-r^2)/(1+r^2)^3.
pub fn dpsi0_over_r(r: f64) -> f64 {
    2.0 * (1.0 - r * r) / (1.0 + r * r).powi(3)
}

/// psi1'/r = 8(1+r^2-(r^2-1) log r)/(1+r^2)^3, singular like log r at 0.
pub fn dpsi1_over_r(r: f64) -> f64 {
    let r2 = r * r;
    8.0 * (1.0 + r2 - (r2 - 1.0) * r.ln()) / (1.0 + r2).powi(3)
}

pub fn wronskian(r: f64) -> f64 {
    2.0 * r / (1.0 + r * r).powi(2)
}

/// Kernel (t^4 + 4 t^2 log t - 1)/t paired with psi0 in the inverse of L0.
pub fn k1(t: f64) -> f64 {
    let t2 = t * t;
    (t2 * t2 + 4.0 * t2 * t.ln() - 1.0) / t
}

fn smooth_step_parts(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0, 0.0)
    } else {
        let f = (-1.0 / t).exp();
        let t2 = t * t;
        (f, f / t2, f * (1.0 / (t2 * t2) - 2.0 / (t2 * t)))
    }
}

/// Smooth cutoff equal to 1 on [0,1] and 0 beyond 2, with its first two derivatives.
pub fn cutoff(x: f64) -> (f64, f64, f64) {
    if x <= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    if x >= 2.0 {
        return (0.0, 0.0, 0.0);
    }
    let (p, dp_t, ddp_t) = smooth_step_parts(2.0 - x);
    let (qv, dq_t, ddq_t) = smooth_step_parts(x - 1.0);
    let (dp, ddp) = (-dp_t, ddp_t);
    let (dqq, ddq) = (dq_t, ddq_t);
    let s = p + qv;
    let ds = dp + dqq;
    let num = dp * qv - p * dqq;
    let dnum = ddp * qv - p * ddq;
    (p / s, num / (s * s), dnum / (s * s) - 2.0 * num * ds / (s * s * s))
}

/// chi_B(r) = chi(r/B) and derivatives in r.
pub fn cutoff_at(r: f64, b: f64) -> (f64, f64, f64) {
    let (c, dc, ddc) = cutoff(r / b);
    (c, dc / b, ddc / (b * b))
}

pub fn chi(r: f64, b: f64) -> f64 {
    cutoff(r / b).0
}
