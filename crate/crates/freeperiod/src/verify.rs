//! Independent certification of candidate orbits: pointwise
//! Euler-Lagrange residuals, energy constancy, and closure under a
//! non-variational shooting integrator. Nothing here reads minimax
//! internals; a certificate is computed from the loop alone, so a PASS
//! cross-checks the variational pipeline instead of echoing it.

use crate::geometry::Manifold;
use crate::lagrangian::Lagrangian;
use crate::loopspace::{action, Loop};
use crate::{FpError, Result};
use serde::{Deserialize, Serialize};

/// Which search produced the candidate. Minimization methods are not
/// required to have positive action; the minimax ones are.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MountainPass,
    Sweepout,
    ClassMin,
}

impl Method {
    pub fn requires_positive_action(self) -> bool {
        !matches!(self, Method::ClassMin)
    }
}

/// Residual thresholds a certificate is judged against. The defaults
/// suit the acceptance scenarios at N <= 512; quadrature converges at
/// second order, so coarser loops should scale them by (512/N)^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertTolerances {
    pub el_residual: f64,
    pub energy_dev: f64,
    pub closure_err: f64,
}

impl Default for CertTolerances {
    fn default() -> Self {
        CertTolerances {
            el_residual: 1e-3,
            energy_dev: 1e-3,
            closure_err: 1e-3,
        }
    }
}

impl CertTolerances {
    /// Defaults rescaled to a loop of `n` samples: quadrature error is
    /// second order, so each threshold grows by (512/n)^2 for n < 512
    /// (and never tightens beyond the defaults).
    pub fn for_resolution(n: usize) -> Self {
        let base = CertTolerances::default();
        let scale = (512.0 / n.max(1) as f64).powi(2).max(1.0);
        CertTolerances {
            el_residual: base.el_residual * scale,
            energy_dev: base.energy_dev * scale,
            closure_err: base.closure_err * scale,
        }
    }
}

/// Assembled verdict for one candidate orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitCertificate {
    pub lp: Loop,
    pub k: f64,
    pub action: f64,
    pub el_residual: f64,
    pub energy_dev: f64,
    pub closure_err: f64,
    pub energy_drift: f64,
    pub class: Vec<i64>,
    pub method: Method,
    pub tolerances: CertTolerances,
    pub pass: bool,
    /// Names of the fields that broke their thresholds, if any.
    pub failures: Vec<String>,
}

impl OrbitCertificate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serialization cannot fail")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cert: OrbitCertificate = serde_json::from_str(s)?;
        cert.lp.validate_shape()?;
        Ok(cert)
    }
}

/// Lifted sample at a signed cyclic index: x_{i+N} = x_i + closure.
fn lifted_sample(lp: &Loop, m: &Manifold, i: isize, out: &mut [f64]) {
    let n = lp.n() as isize;
    let wrapped = i.rem_euclid(n) as usize;
    out.copy_from_slice(lp.sample(wrapped));
    let turns = (i - wrapped as isize) / n;
    if turns != 0 {
        let off = lp.closure_offset(m);
        for (o, c) in out.iter_mut().zip(&off) {
            *o += turns as f64 * c;
        }
    }
}

/// dx/dt at every sample by the five-point fourth-order stencil on the
/// lift, divided by the period. Flat n*dim buffer.
pub fn sample_velocities(m: &Manifold, lp: &Loop) -> Vec<f64> {
    let (n, d) = (lp.n(), lp.dim());
    let scale = n as f64 / (12.0 * lp.period());
    let mut out = vec![0.0; n * d];
    let mut xm2 = vec![0.0; d];
    let mut xm1 = vec![0.0; d];
    let mut xp1 = vec![0.0; d];
    let mut xp2 = vec![0.0; d];
    for i in 0..n as isize {
        lifted_sample(lp, m, i - 2, &mut xm2);
        lifted_sample(lp, m, i - 1, &mut xm1);
        lifted_sample(lp, m, i + 1, &mut xp1);
        lifted_sample(lp, m, i + 2, &mut xp2);
        let row = &mut out[i as usize * d..(i as usize + 1) * d];
        for j in 0..d {
            row[j] = scale * (-xp2[j] + 8.0 * xp1[j] - 8.0 * xm1[j] + xm2[j]);
        }
    }
    out
}

/// Norm of a covector r at x: sqrt(r^T g^{-1} r) on charts, ambient
/// norm of the tangential part on embedded manifolds.
fn covector_norm(m: &Manifold, x: &[f64], r: &[f64]) -> Result<f64> {
    if m.is_embedded() {
        let mut tang = vec![0.0; r.len()];
        m.tangent_project(x, r, &mut tang);
        return Ok(tang.iter().map(|c| c * c).sum::<f64>().sqrt());
    }
    if m.is_flat_euclidean() {
        return Ok(r.iter().map(|c| c * c).sum::<f64>().sqrt());
    }
    let g = m.metric_matrix(x)?;
    let rhs = nalgebra::DVector::from_column_slice(r);
    let y = g
        .clone()
        .cholesky()
        .ok_or_else(|| FpError::LinearSolve("metric not positive definite".into()))?
        .solve(&rhs);
    Ok(rhs.dot(&y).max(0.0).sqrt())
}

/// Max over samples of |d/dt L_v - L_x| in the covector norm, with
/// both the velocity and the momentum derivative taken by fourth-order
/// central differences in t = s T along the lift.
pub fn el_residual(l: &Lagrangian, lp: &Loop) -> Result<f64> {
    let m = l.manifold();
    lp.validate(m)?;
    let (n, d) = (lp.n(), lp.dim());
    let vels = sample_velocities(m, lp);
    let mut momenta = vec![0.0; n * d];
    let mut buf = vec![0.0; d];
    for i in 0..n {
        l.eval_lv(lp.sample(i), &vels[i * d..(i + 1) * d], &mut buf)?;
        momenta[i * d..(i + 1) * d].copy_from_slice(&buf);
    }
    // Momentum components are periodic in i: plain cyclic stencil.
    let scale = n as f64 / (12.0 * lp.period());
    let mut worst: f64 = 0.0;
    let mut lx = vec![0.0; d];
    let mut res = vec![0.0; d];
    for i in 0..n {
        let at = |j: isize| {
            let w = j.rem_euclid(n as isize) as usize;
            &momenta[w * d..(w + 1) * d]
        };
        let (pm2, pm1, pp1, pp2) = (
            at(i as isize - 2),
            at(i as isize - 1),
            at(i as isize + 1),
            at(i as isize + 2),
        );
        l.eval_lx(lp.sample(i), &vels[i * d..(i + 1) * d], &mut lx)?;
        for j in 0..d {
            res[j] = scale * (-pp2[j] + 8.0 * pp1[j] - 8.0 * pm1[j] + pm2[j]) - lx[j];
        }
        worst = worst.max(covector_norm(m, lp.sample(i), &res)?);
    }
    Ok(worst)
}

/// Max over samples of |E_L(x, xdot) - k| with stencil velocities.
pub fn energy_deviation(l: &Lagrangian, lp: &Loop, k: f64) -> Result<f64> {
    let m = l.manifold();
    lp.validate(m)?;
    let (n, d) = (lp.n(), lp.dim());
    let vels = sample_velocities(m, lp);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let e = l.energy(lp.sample(i), &vels[i * d..(i + 1) * d])?;
        worst = worst.max((e - k).abs());
    }
    Ok(worst)
}

/// Shooting outcome: return distance in the product sense (chart
/// distance of positions plus metric norm of the velocity gap) and the
/// worst energy drift along the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootReport {
    pub closure_err: f64,
    pub energy_drift: f64,
    pub diverged: bool,
    pub steps: usize,
    pub x_end: Vec<f64>,
    pub v_end: Vec<f64>,
}

/// Second-order right-hand side of the electromagnetic equation,
///   vdot^l = -Gamma^l_{ij} v^i v^j + g^{lm} ((dtheta)_{mj} v^j + dV_m),
/// the Euler-Lagrange equation of L = 1/2 |v|^2 + theta(v) + V as this
/// crate writes it (the stored V enters with a plus sign, so its
/// gradient does too). The search-time quadratic cap is deliberately
/// ignored: certified orbits live below the cap radius, where the two
/// Lagrangians agree. Embedded case: the round-sphere geodesic field.
fn acceleration(l: &Lagrangian, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
    let m = l.manifold();
    let d = x.len();
    if m.is_embedded() {
        let sq: f64 = v.iter().map(|c| c * c).sum();
        for (o, c) in out.iter_mut().zip(x) {
            *o = -sq * c;
        }
        return Ok(());
    }
    out.iter_mut().for_each(|o| *o = 0.0);
    if !m.is_flat() {
        let gamma = m.christoffel(x)?;
        gamma.contract(v, v, out);
        out.iter_mut().for_each(|o| *o = -*o);
    }
    let mut force = vec![0.0; d];
    let mut any_force = false;
    if let Some(theta) = l.theta() {
        let jac = theta.jacobian(x);
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += (jac[(i, j)] - jac[(j, i)]) * v[j];
            }
            force[i] = acc;
        }
        any_force = true;
    }
    if l.has_potential() {
        let mut dv = vec![0.0; d];
        l.potential_grad_into(x, &mut dv);
        for i in 0..d {
            force[i] += dv[i];
        }
        any_force = true;
    }
    if any_force {
        if m.is_flat_euclidean() {
            for i in 0..d {
                out[i] += force[i];
            }
        } else {
            let g = m.metric_matrix(x)?;
            let rhs = nalgebra::DVector::from_column_slice(&force);
            let sol = g
                .cholesky()
                .ok_or_else(|| FpError::LinearSolve("metric not positive definite".into()))?
                .solve(&rhs);
            for i in 0..d {
                out[i] += sol[i];
            }
        }
    }
    Ok(())
}

/// Conserved energy along solutions: 1/2 |v|^2_x - V(x) (the theta term
/// cancels in the Legendre transform).
fn raw_energy(l: &Lagrangian, x: &[f64], v: &[f64]) -> Result<f64> {
    Ok(0.5 * l.manifold().sq_norm(x, v)? - l.potential_at(x))
}

/// Integrates the flow of (x0, v0) for time `t_total` with classic RK4
/// at `steps` fixed steps, recording `n_out` >= 1 evenly spaced states
/// (the endpoint always included as the last entry).
pub fn shoot_path(
    l: &Lagrangian,
    x0: &[f64],
    v0: &[f64],
    t_total: f64,
    steps: usize,
    n_out: usize,
) -> Result<(Vec<(Vec<f64>, Vec<f64>)>, ShootReport)> {
    let m = l.manifold();
    let d = m.coord_dim();
    if x0.len() != d || v0.len() != d {
        return Err(FpError::DimMismatch {
            expected: d,
            got: x0.len().max(v0.len()),
            context: "shooting initial condition".into(),
        });
    }
    if !(t_total > 0.0) || steps == 0 || n_out == 0 {
        return Err(FpError::Contract(
            "shoot needs t_total > 0, steps >= 1, n_out >= 1".into(),
        ));
    }
    let h = t_total / steps as f64;
    let v0_norm = v0.iter().map(|c| c * c).sum::<f64>().sqrt();
    let speed_limit = 1e3 * v0_norm.max(1.0);
    let e0 = raw_energy(l, x0, v0)?;
    let mut x = x0.to_vec();
    let mut v = v0.to_vec();
    let mut drift: f64 = 0.0;
    let mut diverged = false;
    let mut path = Vec::with_capacity(n_out);
    let mut next_out = 0usize;
    let a = vec![0.0; d];
    let mut steps_done = 0usize;
    for step in 0..steps {
        // Emit states at floor(j * steps / n_out) for j < n_out.
        while next_out < n_out && step == next_out * steps / n_out {
            path.push((x.clone(), v.clone()));
            next_out += 1;
        }
        let (k1x, mut k1v) = (v.clone(), a.clone());
        acceleration(l, &x, &v, &mut k1v)?;
        let x2: Vec<f64> = x.iter().zip(&k1x).map(|(a, b)| a + 0.5 * h * b).collect();
        let v2: Vec<f64> = v.iter().zip(&k1v).map(|(a, b)| a + 0.5 * h * b).collect();
        let (k2x, mut k2v) = (v2.clone(), a.clone());
        acceleration(l, &x2, &v2, &mut k2v)?;
        let x3: Vec<f64> = x.iter().zip(&k2x).map(|(a, b)| a + 0.5 * h * b).collect();
        let v3: Vec<f64> = v.iter().zip(&k2v).map(|(a, b)| a + 0.5 * h * b).collect();
        let (k3x, mut k3v) = (v3.clone(), a.clone());
        acceleration(l, &x3, &v3, &mut k3v)?;
        let x4: Vec<f64> = x.iter().zip(&k3x).map(|(a, b)| a + h * b).collect();
        let v4: Vec<f64> = v.iter().zip(&k3v).map(|(a, b)| a + h * b).collect();
        let (k4x, mut k4v) = (v4.clone(), a.clone());
        acceleration(l, &x4, &v4, &mut k4v)?;
        for i in 0..d {
            x[i] += h / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]);
            v[i] += h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
        }
        steps_done = step + 1;
        drift = drift.max((raw_energy(l, &x, &v)? - e0).abs());
        let speed = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if speed > speed_limit {
            diverged = true;
            break;
        }
    }
    // Fill remaining slots (divergence cut the trajectory short).
    while path.len() < n_out {
        path.push((x.clone(), v.clone()));
    }
    let dx = m.chart_distance(&x, x0)?;
    let dv: Vec<f64> = v.iter().zip(v0).map(|(a, b)| a - b).collect();
    let dv_norm = if m.is_embedded() {
        dv.iter().map(|c| c * c).sum::<f64>().sqrt()
    } else {
        m.sq_norm(x0, &dv)?.max(0.0).sqrt()
    };
    let report = ShootReport {
        closure_err: dx + dv_norm,
        energy_drift: drift,
        diverged,
        steps: steps_done,
        x_end: x,
        v_end: v,
    };
    Ok((path, report))
}

/// Default-resolution shooting: one trajectory, report only.
pub fn shoot(l: &Lagrangian, x0: &[f64], v0: &[f64], t_total: f64) -> Result<ShootReport> {
    let (_, report) = shoot_path(l, x0, v0, t_total, 4096, 1)?;
    Ok(report)
}

/// Assembles a certificate for a candidate loop: action, EL residual,
/// energy deviation, and shooting closure from the loop's own initial
/// data. PASS iff every residual is below its threshold and, for
/// minimax methods, the action is positive.
pub fn certify(
    l: &Lagrangian,
    k: f64,
    lp: &Loop,
    method: Method,
    tolerances: CertTolerances,
) -> Result<OrbitCertificate> {
    let m = l.manifold();
    lp.validate(m)?;
    let act = action(l, k, lp)?;
    let el = el_residual(l, lp)?;
    let edev = energy_deviation(l, lp, k)?;
    let d = lp.dim();
    let vels = sample_velocities(m, lp);
    let report = shoot(l, lp.sample(0), &vels[0..d], lp.period())?;
    let mut failures = Vec::new();
    if !(el < tolerances.el_residual) {
        failures.push("el_residual".to_string());
    }
    if !(edev < tolerances.energy_dev) {
        failures.push("energy_dev".to_string());
    }
    if !(report.closure_err < tolerances.closure_err) || report.diverged {
        failures.push("closure_err".to_string());
    }
    if method.requires_positive_action() && !(act > 0.0) {
        failures.push("action".to_string());
    }
    Ok(OrbitCertificate {
        lp: lp.clone(),
        k,
        action: act,
        el_residual: el,
        energy_dev: edev,
        closure_err: report.closure_err,
        energy_drift: report.energy_drift,
        class: lp.winding().to_vec(),
        method,
        tolerances,
        pass: failures.is_empty(),
        failures,
    })
}

/// Recomputes a certificate's residual fields from its loop and lists
/// every stored field that disagrees with the recomputation (or any
/// threshold verdict that flips). Empty means the file is faithful.
pub fn recheck(l: &Lagrangian, cert: &OrbitCertificate) -> Result<Vec<String>> {
    let fresh = certify(l, cert.k, &cert.lp, cert.method, cert.tolerances)?;
    let mut diffs = Vec::new();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
    if !close(fresh.action, cert.action) {
        diffs.push(format!(
            "action: stored {:.12e}, recomputed {:.12e}",
            cert.action, fresh.action
        ));
    }
    if !close(fresh.el_residual, cert.el_residual) {
        diffs.push(format!(
            "el_residual: stored {:.12e}, recomputed {:.12e}",
            cert.el_residual, fresh.el_residual
        ));
    }
    if !close(fresh.energy_dev, cert.energy_dev) {
        diffs.push(format!(
            "energy_dev: stored {:.12e}, recomputed {:.12e}",
            cert.energy_dev, fresh.energy_dev
        ));
    }
    if !close(fresh.closure_err, cert.closure_err) {
        diffs.push(format!(
            "closure_err: stored {:.12e}, recomputed {:.12e}",
            cert.closure_err, fresh.closure_err
        ));
    }
    if fresh.pass != cert.pass {
        diffs.push(format!(
            "pass: stored {}, recomputed {}",
            cert.pass, fresh.pass
        ));
    }
    if fresh.class != cert.class {
        diffs.push("class: winding mismatch".to_string());
    }
    Ok(diffs)
}
