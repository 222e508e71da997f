//! Convex electromagnetic Lagrangians `L(x,v) = 1/2 |v|^2_x + theta_x(v)
//! + V(x)`, their fiberwise derivatives, the energy function, growth
//! constants and the quadratic-at-infinity cap.
//!
//! The cap multiplies the `theta` and `V` terms by a C^2 cutoff in the
//! metric speed `|v|_x`, equal to 1 on `[0, R]` and 0 beyond `R + blend`,
//! so the capped Lagrangian is exactly `1/2 |v|^2_x` at high speed and
//! bit-identical to the original below `R`.

use crate::expr::ScalarField;
use crate::geometry::{dot, ChartBox, Manifold};
use crate::{FpError, Result};
use nalgebra::DMatrix;
use std::sync::Arc;

/// A 1-form given by covector component fields theta_i(x).
#[derive(Debug, Clone)]
pub struct OneForm {
    comps: Vec<ScalarField>,
}

impl OneForm {
    pub fn new(comps: Vec<ScalarField>) -> Self {
        OneForm { comps }
    }

    pub fn parse(srcs: &[String], vars: &[&str]) -> Result<Self> {
        let comps = srcs
            .iter()
            .map(|s| ScalarField::parse(s, vars))
            .collect::<Result<Vec<_>>>()?;
        Ok(OneForm { comps })
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    /// theta_x written into `out`.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.comps) {
            *o = c.eval(x);
        }
    }

    /// Jacobian J[i][j] = d theta_j / d x_i.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.comps.len();
        let mut out = DMatrix::zeros(d, d);
        let mut grad = vec![0.0; d];
        for (j, c) in self.comps.iter().enumerate() {
            c.grad_into(x, &mut grad);
            for i in 0..d {
                out[(i, j)] = grad[i];
            }
        }
        out
    }

    /// Exterior derivative matrix (d theta)_{ij} = d_i theta_j - d_j theta_i.
    pub fn dtheta(&self, x: &[f64]) -> DMatrix<f64> {
        let j = self.jacobian(x);
        &j - j.transpose()
    }
}

/// Quadratic-at-infinity cap: the `theta` and `V` terms are multiplied by
/// a C^2 cutoff equal to 1 for `|v|_x <= radius` and 0 for
/// `|v|_x >= radius + blend`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuadraticCap {
    pub radius: f64,
    pub blend: f64,
}

/// C^2 smoothstep on [0,1]: 0 at 0, 1 at 1, zero first and second
/// derivatives at both ends.
#[inline]
pub(crate) fn smoothstep(t: f64) -> f64 {
    t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

#[inline]
pub(crate) fn smoothstep_d1(t: f64) -> f64 {
    30.0 * t * t * (1.0 - t) * (1.0 - t)
}

#[inline]
fn smoothstep_d2(t: f64) -> f64 {
    60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)
}

/// Growth constants of conditions (C1)-(C3), certified on a sample set.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GrowthConstants {
    /// Fiberwise convexity floor: min sampled metric eigenvalue.
    pub a1: f64,
    /// Lower quadratic bound: A2 |v|^2 - A3 <= L.
    pub a2: f64,
    pub a3: f64,
    /// Upper quadratic bound: L <= A4 (1 + |v|^2).
    pub a4: f64,
    /// Fiber derivative bound: |L_v| <= A5 (1 + |v|).
    pub a5: f64,
    /// Samples of a(r) = sup_{|v| <= r} L(x,v) on a speed grid.
    pub a_profile: Vec<(f64, f64)>,
    /// Samples of b(r) = sup_{|w|_x = 1, |v| <= r} w . L_vv . w.
    pub b_profile: Vec<(f64, f64)>,
}

/// Electromagnetic Lagrangian on a manifold, with optional cap.
/// Immutable after construction; evaluation is pure.
#[derive(Debug, Clone)]
pub struct Lagrangian {
    manifold: Arc<Manifold>,
    theta: Option<OneForm>,
    potential: Option<ScalarField>,
    cap: Option<QuadraticCap>,
}

impl Lagrangian {
    /// L = 1/2 |v|^2_x.
    pub fn pure_kinetic(manifold: Arc<Manifold>) -> Self {
        Lagrangian {
            manifold,
            theta: None,
            potential: None,
            cap: None,
        }
    }

    /// Full electromagnetic data. Embedded manifolds support only the
    /// pure kinetic case (theta and V must be absent).
    pub fn electromagnetic(
        manifold: Arc<Manifold>,
        theta: Option<OneForm>,
        potential: Option<ScalarField>,
    ) -> Result<Self> {
        if manifold.is_embedded() && (theta.is_some() || potential.is_some()) {
            return Err(FpError::Scenario(
                "embedded manifolds support only pure kinetic Lagrangians".into(),
            ));
        }
        if let Some(th) = &theta {
            if th.dim() != manifold.coord_dim() {
                return Err(FpError::DimMismatch {
                    expected: manifold.coord_dim(),
                    got: th.dim(),
                    context: "theta components".into(),
                });
            }
        }
        Ok(Lagrangian {
            manifold,
            theta,
            potential,
            cap: None,
        })
    }

    pub fn with_cap(mut self, cap: QuadraticCap) -> Self {
        self.cap = Some(cap);
        self
    }

    pub fn manifold(&self) -> &Arc<Manifold> {
        &self.manifold
    }

    pub fn cap(&self) -> Option<QuadraticCap> {
        self.cap
    }

    pub fn theta(&self) -> Option<&OneForm> {
        self.theta.as_ref()
    }

    pub fn has_potential(&self) -> bool {
        self.potential.is_some()
    }

    pub fn has_fields(&self) -> bool {
        self.theta.is_some() || self.potential.is_some()
    }

    pub fn potential_at(&self, x: &[f64]) -> f64 {
        self.potential.as_ref().map_or(0.0, |p| p.eval(x))
    }

    pub fn potential_grad_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.potential {
            Some(p) => p.grad_into(x, out),
            None => out.iter_mut().for_each(|o| *o = 0.0),
        }
    }

    /// Cutoff value and first two derivatives with respect to the metric
    /// speed m = |v|_x.
    fn cutoff(&self, m: f64) -> (f64, f64, f64) {
        match self.cap {
            None => (1.0, 0.0, 0.0),
            Some(c) => {
                if m <= c.radius {
                    (1.0, 0.0, 0.0)
                } else if m >= c.radius + c.blend {
                    (0.0, 0.0, 0.0)
                } else {
                    let t = (m - c.radius) / c.blend;
                    (
                        1.0 - smoothstep(t),
                        -smoothstep_d1(t) / c.blend,
                        -smoothstep_d2(t) / (c.blend * c.blend),
                    )
                }
            }
        }
    }

    fn check_finite(x: &[f64], v: &[f64]) -> Result<()> {
        if x.iter().chain(v).any(|a| !a.is_finite()) {
            return Err(FpError::Geometry(format!(
                "non-finite input: x = {:?}, v = {:?}",
                x, v
            )));
        }
        Ok(())
    }

    /// L(x, v).
    pub fn eval_l(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        Self::check_finite(x, v)?;
        let q = 0.5 * self.manifold.sq_norm(x, v)?;
        if !self.has_fields() {
            return Ok(q);
        }
        let th = match &self.theta {
            Some(t) => {
                let mut tv = vec![0.0; v.len()];
                t.eval_into(x, &mut tv);
                dot(&tv, v)
            }
            None => 0.0,
        };
        let pot = self.potential_at(x);
        let (s, _, _) = self.cutoff((2.0 * q).max(0.0).sqrt());
        Ok(q + s * (th + pot))
    }

    /// Fiber derivative L_v(x, v) written into `out` (covector components).
    pub fn eval_lv(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        Self::check_finite(x, v)?;
        let d = v.len();
        // gv = g(x) v; metric fast path avoids the matrix for flat charts.
        let gv: Vec<f64> = if self.manifold.is_embedded() || self.manifold.is_flat_euclidean() {
            v.to_vec()
        } else {
            let g = self.manifold.metric_matrix(x)?;
            (0..d).map(|i| (0..d).map(|j| g[(i, j)] * v[j]).sum()).collect()
        };
        if !self.has_fields() {
            out.copy_from_slice(&gv);
            return Ok(());
        }
        let q = 0.5 * dot(&gv, v);
        let m = (2.0 * q).max(0.0).sqrt();
        let (s, ds, _) = self.cutoff(m);
        let mut tv = vec![0.0; d];
        if let Some(t) = &self.theta {
            t.eval_into(x, &mut tv);
        }
        let a = dot(&tv, v) + self.potential_at(x);
        for i in 0..d {
            // d m / d v_i = gv_i / m; ds != 0 only in the blend zone where m >= R > 0.
            let mterm = if ds != 0.0 { ds * a * gv[i] / m } else { 0.0 };
            out[i] = gv[i] + s * tv[i] + mterm;
        }
        Ok(())
    }

    /// Base derivative L_x(x, v) written into `out` (covector components).
    pub fn eval_lx(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        Self::check_finite(x, v)?;
        let d = v.len();
        out.iter_mut().for_each(|o| *o = 0.0);
        if self.manifold.is_embedded() {
            // Ambient kinetic term has no base dependence.
            return Ok(());
        }
        let flat = self.manifold.is_flat();
        // qk[k] = 1/2 v^T (d_k g) v.
        let mut qk = vec![0.0; d];
        if !flat {
            let dg = self.manifold.metric_deriv(x)?;
            for k in 0..d {
                let mut acc = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        acc += dg[k][(i, j)] * v[i] * v[j];
                    }
                }
                qk[k] = 0.5 * acc;
            }
            out.copy_from_slice(&qk);
        }
        if !self.has_fields() {
            return Ok(());
        }
        let q = 0.5 * self.manifold.sq_norm(x, v)?;
        let m = (2.0 * q).max(0.0).sqrt();
        let (s, ds, _) = self.cutoff(m);
        let mut a = self.potential_at(x);
        let mut pot_grad = vec![0.0; d];
        self.potential_grad_into(x, &mut pot_grad);
        let mut th_grad = vec![0.0; d]; // d_k (theta_x(v))
        if let Some(t) = &self.theta {
            let jac = t.jacobian(x);
            for k in 0..d {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += jac[(k, j)] * v[j];
                }
                th_grad[k] = acc;
            }
            let mut tv = vec![0.0; d];
            t.eval_into(x, &mut tv);
            a += dot(&tv, v);
        }
        for k in 0..d {
            // d m / d x_k = qk / m on the blend zone.
            let mterm = if ds != 0.0 { ds * a * qk[k] / m } else { 0.0 };
            out[k] += s * (th_grad[k] + pot_grad[k]) + mterm;
        }
        Ok(())
    }

    /// Fiberwise Hessian L_vv(x, v); equals g(x) outside the blend zone.
    pub fn eval_lvv(&self, x: &[f64], v: &[f64]) -> Result<DMatrix<f64>> {
        Self::check_finite(x, v)?;
        let d = v.len();
        let g = self.manifold.metric_matrix(x)?;
        if !self.has_fields() {
            return Ok(g);
        }
        let mut gv = vec![0.0; d];
        for i in 0..d {
            gv[i] = (0..d).map(|j| g[(i, j)] * v[j]).sum();
        }
        let q = 0.5 * dot(&gv, v);
        let m = (2.0 * q).max(0.0).sqrt();
        let (_, ds, dss) = self.cutoff(m);
        if ds == 0.0 && dss == 0.0 {
            return Ok(g);
        }
        let mut tv = vec![0.0; d];
        if let Some(t) = &self.theta {
            t.eval_into(x, &mut tv);
        }
        let a = dot(&tv, v) + self.potential_at(x);
        let u: Vec<f64> = gv.iter().map(|g| g / m).collect();
        let mut h = g.clone();
        for i in 0..d {
            for j in 0..d {
                // d/dv_j of [ds * a * u_i + s * theta_i]:
                //   dss * a * u_i u_j  +  ds * theta_j u_i
                // + ds * a * (g_ij - u_i u_j) / m  +  ds * theta_i u_j
                h[(i, j)] += dss * a * u[i] * u[j]
                    + ds * (tv[j] * u[i] + tv[i] * u[j])
                    + ds * a * (g[(i, j)] - u[i] * u[j]) / m;
            }
        }
        Ok(h)
    }

    /// Energy E_L(x,v) = L_v(x,v)[v] - L(x,v), assembled exactly from the
    /// two evaluations so the defining identity is exact.
    pub fn energy(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        let mut lv = vec![0.0; v.len()];
        self.eval_lv(x, v, &mut lv)?;
        Ok(dot(&lv, v) - self.eval_l(x, v)?)
    }

    /// sup of E_L(x, 0) = -V(x) over the region: low-discrepancy sampling
    /// refined by gradient ascent. Monotone in `samples` (prefix
    /// property of the quasi-random sequence).
    pub fn e0_estimate(&self, region: &ChartBox, samples: usize) -> Result<f64> {
        if region.dim() != self.manifold.coord_dim() {
            return Err(FpError::DimMismatch {
                expected: self.manifold.coord_dim(),
                got: region.dim(),
                context: "e0 region".into(),
            });
        }
        if samples == 0 {
            return Err(FpError::Scenario("e0_estimate needs samples >= 1".into()));
        }
        let pot = match &self.potential {
            None => return Ok(0.0),
            Some(p) => p,
        };
        let mut best = f64::NEG_INFINITY;
        let mut best_x = region.center();
        for i in 0..samples {
            let x = region.quasi_point(i);
            let val = -pot.eval(&x);
            if val > best {
                best = val;
                best_x = x;
            }
        }
        // Local ascent on -V from the best sample, projected into the region.
        let d = region.dim();
        let mut x = best_x;
        let mut step = 0.1
            * region
                .lo
                .iter()
                .zip(&region.hi)
                .map(|(a, b)| b - a)
                .fold(f64::INFINITY, f64::min)
                .max(1e-6);
        let mut grad = vec![0.0; d];
        for _ in 0..200 {
            pot.grad_into(&x, &mut grad);
            let gn = dot(&grad, &grad).sqrt();
            if gn < 1e-12 || step < 1e-14 {
                break;
            }
            let mut cand = x.clone();
            for i in 0..d {
                // ascend -V, i.e. descend V
                cand[i] = (x[i] - step * grad[i] / gn).clamp(region.lo[i], region.hi[i]);
            }
            let val = -pot.eval(&cand);
            if val > best {
                best = val;
                x = cand;
                step *= 1.3;
            } else {
                step *= 0.5;
            }
        }
        Ok(best)
    }

    /// Growth constants certified on a quasi-random sample of
    /// region x {|v|_x <= vmax}. Errors if sampling reveals a
    /// non-convex fiber Hessian (cap misconfigured).
    pub fn estimate_growth_constants(
        &self,
        region: &ChartBox,
        vmax: f64,
    ) -> Result<GrowthConstants> {
        if vmax <= 0.0 {
            return Err(FpError::Scenario("vmax must be positive".into()));
        }
        let d = self.manifold.coord_dim();
        let x_samples: Vec<Vec<f64>> = (0..256).map(|i| region.quasi_point(i)).collect();

        let mut lam_min = f64::INFINITY;
        let mut lam_max = f64::NEG_INFINITY;
        for x in &x_samples {
            let g = self.manifold.metric_matrix(x)?;
            let eig = g.symmetric_eigen();
            for l in eig.eigenvalues.iter() {
                lam_min = lam_min.min(*l);
                lam_max = lam_max.max(*l);
            }
        }
        if lam_min <= 0.0 {
            return Err(FpError::Geometry(
                "metric not positive definite on sampled region".into(),
            ));
        }

        let a1 = lam_min;
        let a2 = if self.theta.is_some() {
            0.25 * lam_min
        } else {
            0.5 * lam_min
        };

        // Field suprema over the region, inflated 5% to cover the gap
        // between the quasi-random sample and the true sup; exact zeros
        // stay zero so pure-kinetic constants are exact.
        let mut sup_theta = 0.0f64;
        let mut sup_abs_v = 0.0f64;
        let mut sup_neg_v = 0.0f64;
        if self.has_fields() {
            let mut tv = vec![0.0; d];
            for i in 0..512 {
                let x = region.quasi_point(i);
                if let Some(t) = &self.theta {
                    t.eval_into(&x, &mut tv);
                    sup_theta = sup_theta.max(dot(&tv, &tv).sqrt());
                }
                let pot = self.potential_at(&x);
                sup_abs_v = sup_abs_v.max(pot.abs());
                sup_neg_v = sup_neg_v.max(-pot);
            }
            sup_theta *= 1.05;
            sup_abs_v *= 1.05;
            sup_neg_v *= 1.05;
        }

        // Analytic envelopes valid for every (x, v) with x in the region:
        //   L >= 1/2 lam_min |v|^2 - sup|theta||v| - sup(-V)
        //   L <= 1/2 lam_max |v|^2 + sup|theta||v| + sup|V|
        //   |L_v| <= lam_max |v| + sup|theta| (+ blend-zone term).
        let a3_analytic = if self.theta.is_some() {
            sup_neg_v + sup_theta * sup_theta / lam_min
        } else {
            sup_neg_v
        };
        let a4_analytic = 0.5 * lam_max + 0.5 * sup_theta + sup_abs_v;
        let blend_term = match (self.cap, self.has_fields()) {
            (Some(c), true) => {
                let amax = sup_theta * (c.radius + c.blend) / lam_min.sqrt() + sup_abs_v;
                (1.875 / c.blend) * amax * lam_max.sqrt() / (1.0 + c.radius / lam_max.sqrt())
            }
            _ => 0.0,
        };
        let a5_analytic = lam_max.max(sup_theta) + blend_term;

        // Speed grid: directions scaled to exact metric norms r on a grid
        // of radii in (0, vmax].
        let radii: Vec<f64> = (1..=16).map(|i| vmax * i as f64 / 16.0).collect();
        let dirs = direction_set(d);

        let mut a3 = a3_analytic;
        let mut a4 = a4_analytic;
        let mut a5 = a5_analytic;
        let mut a_profile: Vec<(f64, f64)> = radii.iter().map(|r| (*r, f64::NEG_INFINITY)).collect();
        let mut b_profile: Vec<(f64, f64)> = radii.iter().map(|r| (*r, f64::NEG_INFINITY)).collect();

        let mut lv = vec![0.0; d];
        for x in &x_samples {
            for dir in &dirs {
                let dn = self.manifold.sq_norm(x, dir)?.sqrt();
                if dn <= 0.0 {
                    continue;
                }
                for (ri, r) in radii.iter().enumerate() {
                    let v: Vec<f64> = dir.iter().map(|c| c * r / dn).collect();
                    let l = self.eval_l(x, &v)?;
                    self.eval_lv(x, &v, &mut lv)?;
                    let lv_norm = dot(&lv, &lv).sqrt();
                    a3 = a3.max(a2 * r * r - l);
                    a4 = a4.max(l / (1.0 + r * r));
                    a5 = a5.max(lv_norm / (1.0 + r));
                    if l > a_profile[ri].1 {
                        a_profile[ri].1 = l;
                    }
                    // b(r): generalized max eigenvalue of L_vv against g.
                    let h = self.eval_lvv(x, &v)?;
                    let g = self.manifold.metric_matrix(x)?;
                    let (bmin, bmax) = generalized_eig_range(&h, &g)?;
                    if bmin <= 0.0 {
                        return Err(FpError::Scenario(format!(
                            "sampled fiber Hessian not positive definite at x = {:?}, |v| = {:.3} (cap blend misconfigured): min eigenvalue {:.3e}",
                            x, r, bmin
                        )));
                    }
                    if bmax > b_profile[ri].1 {
                        b_profile[ri].1 = bmax;
                    }
                }
            }
        }
        // Profiles are sups over |v| <= r: enforce monotonicity in r.
        for i in 1..a_profile.len() {
            a_profile[i].1 = a_profile[i].1.max(a_profile[i - 1].1);
            b_profile[i].1 = b_profile[i].1.max(b_profile[i - 1].1);
        }
        // Snap accumulated rounding noise so exact cases report exact zeros.
        if a3.abs() < 1e-12 {
            a3 = 0.0;
        }
        Ok(GrowthConstants {
            a1,
            a2,
            a3,
            a4,
            a5,
            a_profile,
            b_profile,
        })
    }

    /// Returns a capped copy whose cap radius contains the sampled
    /// sublevel set {E_L <= k+1} and keeps the blended Lagrangian
    /// fiberwise convex over the region. Already-capped input is
    /// returned unchanged.
    pub fn quad_cap(&self, k: f64, region: &ChartBox) -> Result<Lagrangian> {
        if self.cap.is_some() {
            return Ok(self.clone());
        }
        if !self.has_fields() {
            // Pure kinetic is already quadratic at infinity; any cap is a
            // no-op, so attach the formula radius for the record.
            let r = 2.0 * (2.0 * (k + 1.0)).max(0.0).sqrt().max(1.0);
            return Ok(self.clone().with_cap(QuadraticCap {
                radius: r,
                blend: r / 4.0,
            }));
        }
        // {E_L <= k+1} means 1/2 |v|^2 <= k + 1 + V(x) below the cap.
        let mut sup_neg_v = 0.0f64;
        let mut sup_abs_v = 0.0f64;
        let mut sup_theta = 0.0f64;
        let d = self.manifold.coord_dim();
        let mut tv = vec![0.0; d];
        for i in 0..512 {
            let x = region.quasi_point(i);
            let pot = self.potential_at(&x);
            sup_neg_v = sup_neg_v.max(-pot);
            sup_abs_v = sup_abs_v.max(pot.abs());
            if let Some(t) = &self.theta {
                t.eval_into(&x, &mut tv);
                sup_theta = sup_theta.max(dot(&tv, &tv).sqrt());
            }
        }
        let mut lam_min = f64::INFINITY;
        for i in 0..128 {
            let x = region.quasi_point(i);
            let g = self.manifold.metric_matrix(&x)?;
            lam_min = lam_min.min(
                g.symmetric_eigen()
                    .eigenvalues
                    .iter()
                    .fold(f64::INFINITY, |a, b| a.min(*b)),
            );
        }
        let r0 = 2.0 * (2.0 * (k + 1.0 + sup_neg_v)).max(0.5).sqrt();
        // Blend-zone Hessian perturbation is bounded by
        //   |s''| (|theta| |v| + |V|) + |s'| (lammax/m)(...) + 2|s'||theta|
        // with |s'| <= 1.875/blend, |s''| <= 5.81/blend^2, blend = R/4.
        // Grow R until the bound stays below lam_min with margin 2.
        let mut r = r0;
        for _ in 0..64 {
            let blend = r / 4.0;
            let speed = (r + blend) / lam_min.sqrt();
            let amax = sup_theta * speed + sup_abs_v;
            let bound = 5.81 / (blend * blend) * amax
                + 1.875 / blend * (amax / r + 2.0 * sup_theta) / lam_min.sqrt();
            if 2.0 * bound <= lam_min {
                break;
            }
            r *= 1.5;
        }
        Ok(self.clone().with_cap(QuadraticCap {
            radius: r,
            blend: r / 4.0,
        }))
    }
}

/// Direction stencil: coordinate axes, diagonals, and a fixed generic
/// direction, enough to certify growth bounds on low-dimensional fibers.
fn direction_set(d: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        dirs.push(e.clone());
        e[i] = -1.0;
        dirs.push(e);
    }
    if d >= 2 {
        for i in 0..d {
            for j in (i + 1)..d {
                for (si, sj) in [(1.0, 1.0), (1.0, -1.0)] {
                    let mut e = vec![0.0; d];
                    e[i] = si;
                    e[j] = sj;
                    dirs.push(e);
                }
            }
        }
    }
    let generic: Vec<f64> = (0..d).map(|i| 0.7 + 0.31 * i as f64).collect();
    dirs.push(generic);
    dirs
}

/// Range of generalized eigenvalues of (h, g) with g SPD, via the
/// symmetric eigenproblem of L^-1 h L^-T for the Cholesky factor L of g.
fn generalized_eig_range(h: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<(f64, f64)> {
    let chol = g
        .clone()
        .cholesky()
        .ok_or_else(|| FpError::LinearSolve("metric not SPD in eigenvalue range".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| FpError::LinearSolve("singular Cholesky factor".into()))?;
    let m = &linv * h * linv.transpose();
    let sym = 0.5 * (&m + m.transpose());
    let eig = sym.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for l in eig.eigenvalues.iter() {
        lo = lo.min(*l);
        hi = hi.max(*l);
    }
    Ok((lo, hi))
}
