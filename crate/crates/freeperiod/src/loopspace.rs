//! Discrete model of the free-period loop space M = W^{1,2}(T, M) x (0, inf).
//!
//! A loop stores N uniform samples of the lift (periodic coordinates
//! unwrapped) together with a winding vector defining the closure
//! `x_N = x_0 + winding * periods`, and a period T > 0. Velocities are
//! midpoint differences `(x_{i+1} - x_i) N / T`, the action is the
//! midpoint quadrature of `T L(x, xdot/T) + k T` (O(N^-2)), and the
//! differential is the exact adjoint of that discretization, so descent
//! and directional-derivative tests are clean at machine precision.
//!
//! The product Riemannian metric is
//! `<(xi,a),(eta,b)> = a b + <xi_0, eta_0>_{x_0} + int <D xi, D eta>`
//! with covariant differences through the chart Christoffels (plain
//! differences on flat charts and for embedded loops). Riesz gradients
//! solve the corresponding SPD system by a block tridiagonal
//! factorization with a low-rank periodic corner correction; embedded
//! loops use projected preconditioned conjugate gradients on the
//! tangent-field subspace.

use crate::geometry::{dot, Manifold};
use crate::lagrangian::Lagrangian;
use crate::{FpError, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Minimum sample count for a valid loop.
pub const MIN_SAMPLES: usize = 8;

/// A closed curve: N uniform lift samples, period, winding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Loop {
    n: usize,
    dim: usize,
    period: f64,
    winding: Vec<i64>,
    /// Flattened lift samples, `samples[i*dim .. (i+1)*dim]`.
    samples: Vec<f64>,
}

impl Loop {
    pub fn new(n: usize, dim: usize, period: f64, winding: Vec<i64>, samples: Vec<f64>) -> Result<Self> {
        let lp = Loop {
            n,
            dim,
            period,
            winding,
            samples,
        };
        lp.validate_shape()?;
        Ok(lp)
    }

    /// Constant loop at a point.
    pub fn constant(x: &[f64], n: usize, period: f64) -> Result<Self> {
        let mut samples = Vec::with_capacity(n * x.len());
        for _ in 0..n {
            samples.extend_from_slice(x);
        }
        Loop::new(n, x.len(), period, vec![0; x.len()], samples)
    }

    /// Shape/value checks that need no manifold.
    pub fn validate_shape(&self) -> Result<()> {
        if self.n < MIN_SAMPLES {
            return Err(FpError::InvalidLoop(format!(
                "need at least {} samples, got {}",
                MIN_SAMPLES, self.n
            )));
        }
        if self.dim == 0 {
            return Err(FpError::InvalidLoop("zero-dimensional samples".into()));
        }
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(FpError::InvalidLoop(format!(
                "period must be positive and finite, got {}",
                self.period
            )));
        }
        if self.winding.len() != self.dim {
            return Err(FpError::InvalidLoop(format!(
                "winding length {} != dim {}",
                self.winding.len(),
                self.dim
            )));
        }
        if self.samples.len() != self.n * self.dim {
            return Err(FpError::InvalidLoop(format!(
                "sample buffer length {} != n*dim = {}",
                self.samples.len(),
                self.n * self.dim
            )));
        }
        if self.samples.iter().any(|v| !v.is_finite()) {
            return Err(FpError::InvalidLoop("non-finite sample".into()));
        }
        Ok(())
    }

    /// Full validation against a manifold: winding only on periodic
    /// coordinates, embedded samples on the surface to 1e-10.
    pub fn validate(&self, m: &Manifold) -> Result<()> {
        self.validate_shape()?;
        if self.dim != m.coord_dim() {
            return Err(FpError::DimMismatch {
                expected: m.coord_dim(),
                got: self.dim,
                context: "loop sample dimension".into(),
            });
        }
        let periods = m.periods();
        for (i, (w, p)) in self.winding.iter().zip(&periods).enumerate() {
            if *w != 0 && p.is_none() {
                return Err(FpError::InvalidLoop(format!(
                    "nonzero winding {} on non-periodic coordinate {}",
                    w, i
                )));
            }
        }
        if m.is_embedded() {
            if self.winding.iter().any(|w| *w != 0) {
                return Err(FpError::InvalidLoop(
                    "embedded loops are contractible records: winding must be zero".into(),
                ));
            }
            for i in 0..self.n {
                let c = m.constraint(self.sample(i)).abs();
                if c > 1e-10 {
                    return Err(FpError::InvalidLoop(format!(
                        "sample {} off the surface by {:.3e}",
                        i, c
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn set_period(&mut self, t: f64) {
        self.period = t;
    }

    pub fn winding(&self) -> &[i64] {
        &self.winding
    }

    #[inline]
    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn samples_flat(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_flat_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    /// Per-coordinate lift offset closing the loop: winding * period.
    pub fn closure_offset(&self, m: &Manifold) -> Vec<f64> {
        let periods = m.periods();
        self.winding
            .iter()
            .zip(&periods)
            .map(|(w, p)| p.map_or(0.0, |p| *w as f64 * p))
            .collect()
    }

    /// Sample i with wrap-around: `x_N = x_0 + closure`.
    pub fn sample_cyclic(&self, m: &Manifold, i: usize, out: &mut [f64]) {
        if i < self.n {
            out.copy_from_slice(self.sample(i));
        } else {
            let off = self.closure_offset(m);
            let base = self.sample(i - self.n);
            for (j, o) in out.iter_mut().enumerate() {
                *o = base[j] + off[j];
            }
        }
    }

    /// JSON record {n, dim, period, winding, samples}.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("loop serialization cannot fail")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let lp: Loop = serde_json::from_str(s)?;
        lp.validate_shape()?;
        Ok(lp)
    }

    /// CSV rows (t, x(t) ..., |xdot|_x, E_L) per sample, for plotting.
    pub fn to_csv(&self, l: &Lagrangian, header: bool) -> Result<String> {
        let m = l.manifold();
        let mut out = String::new();
        if header {
            out.push('t');
            for name in m.coord_names() {
                out.push(',');
                out.push_str(&name);
            }
            out.push_str(",speed,energy\n");
        }
        let geo = SegmentGeometry::new(self, m)?;
        // Midpoint data is per segment; report at segment parameter values.
        for i in 0..self.n {
            let t = (i as f64 + 0.5) / self.n as f64;
            let mid = geo.midpoint(i);
            let v = geo.velocity(i, self.period);
            let speed = m.sq_norm(mid, &v)?.max(0.0).sqrt();
            let energy = l.energy(mid, &v)?;
            out.push_str(&format!("{:.17e}", t));
            for c in mid {
                out.push_str(&format!(",{:.17e}", c));
            }
            out.push_str(&format!(",{:.17e},{:.17e}\n", speed, energy));
        }
        Ok(out)
    }
}

/// Variation field samples plus period variation.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopTangent {
    pub dim: usize,
    /// Flattened field, `xi[i*dim .. (i+1)*dim]`.
    pub xi: Vec<f64>,
    pub alpha: f64,
}

impl LoopTangent {
    pub fn zeros(n: usize, dim: usize) -> Self {
        LoopTangent {
            dim,
            xi: vec![0.0; n * dim],
            alpha: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.xi.len() / self.dim
    }

    #[inline]
    pub fn at(&self, i: usize) -> &[f64] {
        &self.xi[i * self.dim..(i + 1) * self.dim]
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.xi {
            *v *= s;
        }
        self.alpha *= s;
    }

    pub fn axpy(&mut self, a: f64, other: &LoopTangent) {
        for (v, o) in self.xi.iter_mut().zip(&other.xi) {
            *v += a * o;
        }
        self.alpha += a * other.alpha;
    }
}

/// The differential of the discrete action: covector components per
/// sample plus the period component. Pairs with `LoopTangent` by the
/// Euclidean coefficient pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDifferential {
    pub dim: usize,
    pub dx: Vec<f64>,
    pub dt: f64,
}

impl ActionDifferential {
    pub fn n(&self) -> usize {
        self.dx.len() / self.dim
    }

    /// dS[(xi, alpha)].
    pub fn pair(&self, t: &LoopTangent) -> f64 {
        dot(&self.dx, &t.xi) + self.dt * t.alpha
    }

    pub fn at(&self, i: usize) -> &[f64] {
        &self.dx[i * self.dim..(i + 1) * self.dim]
    }
}

/// Midpoints and parameter-velocity differences for all segments of a
/// loop, including the winding closure on the last one.
pub(crate) struct SegmentGeometry {
    dim: usize,
    n: usize,
    /// midpoints[i*dim..] = (x_i + x_{i+1}) / 2 on the lift
    midpoints: Vec<f64>,
    /// diffs[i*dim..] = x_{i+1} - x_i on the lift
    diffs: Vec<f64>,
}

impl SegmentGeometry {
    pub(crate) fn new(lp: &Loop, m: &Manifold) -> Result<Self> {
        let n = lp.n();
        let dim = lp.dim();
        let off = lp.closure_offset(m);
        let mut midpoints = vec![0.0; n * dim];
        let mut diffs = vec![0.0; n * dim];
        for i in 0..n {
            let a = lp.sample(i);
            for j in 0..dim {
                let b = if i + 1 < n {
                    lp.samples_flat()[(i + 1) * dim + j]
                } else {
                    lp.samples_flat()[j] + off[j]
                };
                midpoints[i * dim + j] = 0.5 * (a[j] + b);
                diffs[i * dim + j] = b - a[j];
            }
        }
        Ok(SegmentGeometry {
            dim,
            n,
            midpoints,
            diffs,
        })
    }

    #[inline]
    pub(crate) fn midpoint(&self, i: usize) -> &[f64] {
        &self.midpoints[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub(crate) fn diff(&self, i: usize) -> &[f64] {
        &self.diffs[i * self.dim..(i + 1) * self.dim]
    }

    /// Physical velocity (x_{i+1} - x_i) N / T.
    pub(crate) fn velocity(&self, i: usize, period: f64) -> Vec<f64> {
        let s = self.n as f64 / period;
        self.diff(i).iter().map(|d| d * s).collect()
    }
}

/// Free-period action `T * quadrature(L) + k T`.
pub fn action(l: &Lagrangian, k: f64, lp: &Loop) -> Result<f64> {
    let m = l.manifold();
    lp.validate(m)?;
    let t = lp.period();
    let geo = SegmentGeometry::new(lp, m)?;
    let mut sum = 0.0;
    for i in 0..lp.n() {
        let v = geo.velocity(i, t);
        sum += l.eval_l(geo.midpoint(i), &v)?;
    }
    Ok(t * sum / lp.n() as f64 + k * t)
}

/// Exact gradient of the discrete action with respect to samples and
/// period. The period component is the quadrature of `k - E_L`.
pub fn differential(l: &Lagrangian, k: f64, lp: &Loop) -> Result<ActionDifferential> {
    let m = l.manifold();
    lp.validate(m)?;
    let n = lp.n();
    let d = lp.dim();
    let t = lp.period();
    let geo = SegmentGeometry::new(lp, m)?;
    let mut dx = vec![0.0; n * d];
    let mut sum_energy = 0.0;
    let mut lx = vec![0.0; d];
    let mut lv = vec![0.0; d];
    let half_tn = 0.5 * t / n as f64;
    for i in 0..n {
        let v = geo.velocity(i, t);
        let mid = geo.midpoint(i);
        let lval = l.eval_l(mid, &v)?;
        l.eval_lx(mid, &v, &mut lx)?;
        l.eval_lv(mid, &v, &mut lv)?;
        sum_energy += dot(&lv, &v) - lval;
        let inext = if i + 1 < n { i + 1 } else { 0 };
        for j in 0..d {
            // d/dx_i (T/N) L(m_i, v_i) = (T/2N) L_x - L_v;
            // d/dx_{i+1} ...           = (T/2N) L_x + L_v.
            dx[i * d + j] += half_tn * lx[j] - lv[j];
            dx[inext * d + j] += half_tn * lx[j] + lv[j];
        }
    }
    let dt = k - sum_energy / n as f64;
    Ok(ActionDifferential { dim: d, dx, dt })
}

/// The discrete product metric, evaluated directly from its definition:
/// `alpha beta + xi_0^T g(x_0) eta_0 + (1/N) sum (D_i xi)^T g(m_i) (D_i eta)`
/// with `D_i xi = N (xi_{i+1} - xi_i) + Gamma(m_i)[u_i, (xi_i + xi_{i+1})/2]`
/// and `u_i` the parameter velocity. Flat charts and embedded loops use
/// plain differences.
pub fn product_inner(
    m: &Manifold,
    lp: &Loop,
    a: &LoopTangent,
    b: &LoopTangent,
) -> Result<f64> {
    let n = lp.n();
    let d = lp.dim();
    let geo = SegmentGeometry::new(lp, m)?;
    let use_gamma = !m.is_flat() && !m.is_embedded();
    let mut acc = a.alpha * b.alpha;
    acc += m.metric_eval(lp.sample(0), a.at(0), b.at(0))?;
    let nf = n as f64;
    let mut da = vec![0.0; d];
    let mut db = vec![0.0; d];
    let mut corr = vec![0.0; d];
    for i in 0..n {
        let inext = if i + 1 < n { i + 1 } else { 0 };
        let mid = geo.midpoint(i);
        for j in 0..d {
            da[j] = nf * (a.at(inext)[j] - a.at(i)[j]);
            db[j] = nf * (b.at(inext)[j] - b.at(i)[j]);
        }
        if use_gamma {
            let gamma = m.christoffel(mid)?;
            let u: Vec<f64> = geo.diff(i).iter().map(|v| v * nf).collect();
            let abar: Vec<f64> = (0..d)
                .map(|j| 0.5 * (a.at(i)[j] + a.at(inext)[j]))
                .collect();
            gamma.contract(&u, &abar, &mut corr);
            for j in 0..d {
                da[j] += corr[j];
            }
            let bbar: Vec<f64> = (0..d)
                .map(|j| 0.5 * (b.at(i)[j] + b.at(inext)[j]))
                .collect();
            gamma.contract(&u, &bbar, &mut corr);
            for j in 0..d {
                db[j] += corr[j];
            }
        }
        acc += m.metric_eval(mid, &da, &db)? / nf;
    }
    Ok(acc)
}

/// Product-metric norm of a tangent.
pub fn product_norm(m: &Manifold, lp: &Loop, t: &LoopTangent) -> Result<f64> {
    Ok(product_inner(m, lp, t, t)?.max(0.0).sqrt())
}

// ---------------------------------------------------------------------
// Riesz solve
// ---------------------------------------------------------------------

/// Symmetric block tridiagonal matrix with an SPD forward factorization.
struct BlockTridiag {
    nb: usize,
    d: usize,
    diag: Vec<DMatrix<f64>>,
    /// upper[i] couples block i with block i+1 (row i, column i+1).
    upper: Vec<DMatrix<f64>>,
}

struct BlockFactor {
    nb: usize,
    d: usize,
    /// Inverses of the pivot blocks.
    pivinv: Vec<DMatrix<f64>>,
    /// Forward coupling F_i = upper[i-1]^T pivinv[i-1], i = 1..nb.
    fwd: Vec<DMatrix<f64>>,
    upper: Vec<DMatrix<f64>>,
}

impl BlockTridiag {
    fn factor(self) -> Result<BlockFactor> {
        let nb = self.nb;
        let d = self.d;
        let mut pivinv = Vec::with_capacity(nb);
        let mut fwd = Vec::with_capacity(nb);
        let mut pivot = self.diag[0].clone();
        for i in 0..nb {
            if i > 0 {
                let f = self.upper[i - 1].transpose() * &pivinv[i - 1];
                pivot = &self.diag[i] - &f * &self.upper[i - 1];
                fwd.push(f);
            } else {
                fwd.push(DMatrix::zeros(d, d));
            }
            let inv = pivot.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| {
                FpError::LinearSolve(format!(
                    "product-metric block {} of {} is not positive definite (degenerate loop)",
                    i, nb
                ))
            })?;
            pivinv.push(inv);
        }
        Ok(BlockFactor {
            nb,
            d,
            pivinv,
            fwd,
            upper: self.upper,
        })
    }
}

impl BlockFactor {
    /// Solves T y = b in place.
    fn solve(&self, b: &mut [f64]) {
        let d = self.d;
        let nb = self.nb;
        // Forward: z_i = b_i - F_i z_{i-1}.
        for i in 1..nb {
            let (prev, cur) = b.split_at_mut(i * d);
            let zp = &prev[(i - 1) * d..];
            let f = &self.fwd[i];
            for r in 0..d {
                let mut acc = 0.0;
                for c in 0..d {
                    acc += f[(r, c)] * zp[c];
                }
                cur[r] -= acc;
            }
        }
        // Back: y_{nb-1} = P z; y_i = pivinv (z_i - U_i y_{i+1}).
        let mut tmp = vec![0.0; d];
        for i in (0..nb).rev() {
            if i + 1 < nb {
                let u = &self.upper[i];
                let (cur, next) = b.split_at_mut((i + 1) * d);
                let yi = &mut cur[i * d..];
                let yn = &next[..d];
                for r in 0..d {
                    let mut acc = 0.0;
                    for c in 0..d {
                        acc += u[(r, c)] * yn[c];
                    }
                    yi[r] -= acc;
                }
            }
            let p = &self.pivinv[i];
            let zi = &b[i * d..(i + 1) * d];
            for r in 0..d {
                let mut acc = 0.0;
                for c in 0..d {
                    acc += p[(r, c)] * zi[c];
                }
                tmp[r] = acc;
            }
            b[i * d..(i + 1) * d].copy_from_slice(&tmp);
        }
    }
}

/// The chart H^1 system split as `M = T + W^T S W` where T is block
/// tridiagonal (all segments except the closing one, plus the base-point
/// term) and the closing segment contributes the low-rank corner
/// `W xi = B xi_0 + A xi_{N-1}`, `S = g(m_{N-1}) / N`.
struct ChartRiesz {
    factor: BlockFactor,
    a_last: DMatrix<f64>,
    b_last: DMatrix<f64>,
    s_last: DMatrix<f64>,
    n: usize,
    d: usize,
}

impl ChartRiesz {
    fn build(m: &Manifold, lp: &Loop) -> Result<Self> {
        let n = lp.n();
        let d = lp.dim();
        let geo = SegmentGeometry::new(lp, m)?;
        let nf = n as f64;
        let use_gamma = !m.is_flat();
        let mut diag = vec![DMatrix::zeros(d, d); n];
        let mut upper = vec![DMatrix::zeros(d, d); n - 1];
        // Base-point term.
        diag[0] += m.metric_matrix(lp.sample(0))?;
        let mut a_last = DMatrix::zeros(d, d);
        let mut b_last = DMatrix::zeros(d, d);
        let mut s_last = DMatrix::zeros(d, d);
        for i in 0..n {
            let mid = geo.midpoint(i);
            let g = m.metric_matrix(mid)?;
            // D_i xi = A xi_i + B xi_{i+1}  with A = -N I + C/2, B = N I + C/2,
            // C w = Gamma(m_i)[u_i, w].
            let mut a = DMatrix::identity(d, d) * (-nf);
            let mut b = DMatrix::identity(d, d) * nf;
            if use_gamma {
                let gamma = m.christoffel(mid)?;
                let u: Vec<f64> = geo.diff(i).iter().map(|v| v * nf).collect();
                for r in 0..d {
                    for c in 0..d {
                        let mut acc = 0.0;
                        for s in 0..d {
                            acc += gamma.get(r, s, c) * u[s];
                        }
                        a[(r, c)] += 0.5 * acc;
                        b[(r, c)] += 0.5 * acc;
                    }
                }
            }
            if i + 1 < n {
                let ga = &g * &a;
                let gb = &g * &b;
                diag[i] += a.transpose() * &ga / nf;
                diag[i + 1] += b.transpose() * &gb / nf;
                upper[i] += a.transpose() * &gb / nf;
            } else {
                a_last = a;
                b_last = b;
                s_last = g / nf;
            }
        }
        let factor = BlockTridiag {
            nb: n,
            d,
            diag,
            upper,
        }
        .factor()?;
        Ok(ChartRiesz {
            factor,
            a_last,
            b_last,
            s_last,
            n,
            d,
        })
    }

    /// Solves (T + W^T S W) y = b via the Woodbury identity.
    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let d = self.d;
        let n = self.n;
        let mut y = b.to_vec();
        self.factor.solve(&mut y);
        // Z = T^{-1} W^T: d columns, each an (n*d)-vector.
        let mut z = vec![vec![0.0; n * d]; d];
        for (col, zc) in z.iter_mut().enumerate() {
            // Column col solves T z = W^T e_col with W = [B at block 0 |
            // A at block n-1], so the right side carries B^T e_col at
            // block 0 and A^T e_col at block n-1.
            for r in 0..d {
                zc[r] = self.b_last[(col, r)];
                zc[(n - 1) * d + r] = self.a_last[(col, r)];
            }
            self.factor.solve(zc);
        }
        // K = S^{-1} + W Z.
        let sinv = self
            .s_last
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| FpError::LinearSolve("closing-segment metric not SPD".into()))?;
        let mut k = sinv;
        for row in 0..d {
            for col in 0..d {
                let zc = &z[col];
                let mut acc = 0.0;
                for r in 0..d {
                    acc += self.b_last[(row, r)] * zc[r];
                    acc += self.a_last[(row, r)] * zc[(n - 1) * d + r];
                }
                k[(row, col)] += acc;
            }
        }
        // w = W y.
        let mut wy = vec![0.0; d];
        for row in 0..d {
            let mut acc = 0.0;
            for r in 0..d {
                acc += self.b_last[(row, r)] * y[r];
                acc += self.a_last[(row, r)] * y[(n - 1) * d + r];
            }
            wy[row] = acc;
        }
        let kinv = k
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| FpError::LinearSolve("Woodbury capacitance not SPD".into()))?;
        let mut coef = vec![0.0; d];
        for row in 0..d {
            let mut acc = 0.0;
            for col in 0..d {
                acc += kinv[(row, col)] * wy[col];
            }
            coef[row] = acc;
        }
        for (col, zc) in z.iter().enumerate() {
            let c = coef[col];
            for (yi, zi) in y.iter_mut().zip(zc) {
                *yi -= c * zi;
            }
        }
        Ok(y)
    }
}

/// Riesz representative of the action differential in the product
/// metric: `<grad, eta> = dS[eta]` for all discrete eta; the period
/// component equals the T-component of dS.
pub fn riesz_gradient(m: &Manifold, lp: &Loop, ds: &ActionDifferential) -> Result<LoopTangent> {
    let n = lp.n();
    let d = lp.dim();
    if ds.dx.len() != n * d {
        return Err(FpError::DimMismatch {
            expected: n * d,
            got: ds.dx.len(),
            context: "differential length".into(),
        });
    }
    let xi = if m.is_embedded() {
        embedded_riesz(m, lp, ds)?
    } else {
        let sys = ChartRiesz::build(m, lp)?;
        sys.solve(&ds.dx)?
    };
    Ok(LoopTangent {
        dim: d,
        xi,
        alpha: ds.dt,
    })
}

/// Projected preconditioned CG for embedded loops: the flat ambient H^1
/// operator restricted to tangent fields, preconditioned by its
/// unconstrained inverse.
fn embedded_riesz(m: &Manifold, lp: &Loop, ds: &ActionDifferential) -> Result<Vec<f64>> {
    let n = lp.n();
    let d = lp.dim();
    // Scalar cyclic H^1 matrix shared by all ambient coordinates:
    // base delta at 0, interior from plain differences.
    let nf = n as f64;
    let mut diag = vec![DMatrix::zeros(1, 1); n];
    let mut upper = vec![DMatrix::zeros(1, 1); n - 1];
    diag[0][(0, 0)] = 1.0;
    for i in 0..n {
        if i + 1 < n {
            diag[i][(0, 0)] += nf;
            diag[i + 1][(0, 0)] += nf;
            upper[i][(0, 0)] -= nf;
        }
    }
    let factor = BlockTridiag {
        nb: n,
        d: 1,
        diag,
        upper,
    }
    .factor()?;
    let corner = ChartRiesz {
        factor,
        a_last: DMatrix::from_element(1, 1, -nf),
        b_last: DMatrix::from_element(1, 1, nf),
        s_last: DMatrix::from_element(1, 1, 1.0 / nf),
        n,
        d: 1,
    };

    let project = |v: &mut [f64]| {
        let mut t = vec![0.0; d];
        for i in 0..n {
            let x = lp.sample(i);
            m.tangent_project(x, &v[i * d..(i + 1) * d], &mut t);
            v[i * d..(i + 1) * d].copy_from_slice(&t);
        }
    };

    // Flat operator apply: out = M xi (per ambient coordinate).
    let apply = |v: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|o| *o = 0.0);
        for c in 0..d {
            out[c] += v[c]; // base point term
        }
        for i in 0..n {
            let inext = if i + 1 < n { i + 1 } else { 0 };
            for c in 0..d {
                let diff = nf * (v[inext * d + c] - v[i * d + c]);
                out[i * d + c] -= diff;
                out[inext * d + c] += diff;
            }
        }
    };

    // Unconstrained inverse per coordinate as the preconditioner.
    let precond = |v: &[f64], out: &mut [f64]| -> Result<()> {
        let mut col = vec![0.0; n];
        for c in 0..d {
            for i in 0..n {
                col[i] = v[i * d + c];
            }
            let sol = corner.solve(&col)?;
            for i in 0..n {
                out[i * d + c] = sol[i];
            }
        }
        Ok(())
    };

    let mut b = ds.dx.clone();
    project(&mut b);
    let bnorm = dot(&b, &b).sqrt();
    let mut x = vec![0.0; n * d];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b;
    let mut z = vec![0.0; n * d];
    precond(&r, &mut z)?;
    project(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n * d];
    for _ in 0..(4 * n * d) {
        apply(&p, &mut ap);
        project(&mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(FpError::LinearSolve(
                "projected H^1 operator lost positivity (degenerate loop)".into(),
            ));
        }
        let alpha = rz / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= 1e-14 * bnorm {
            break;
        }
        precond(&r, &mut z)?;
        project(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..p.len() {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(x)
}

// ---------------------------------------------------------------------
// Lengths, distances, classes
// ---------------------------------------------------------------------

/// Metric length: chord-sum quadrature of |xdot| dt.
pub fn length(m: &Manifold, lp: &Loop) -> Result<f64> {
    let geo = SegmentGeometry::new(lp, m)?;
    let mut acc = 0.0;
    for i in 0..lp.n() {
        let sq = m.sq_norm(geo.midpoint(i), geo.diff(i))?;
        acc += sq.max(0.0).sqrt();
    }
    Ok(acc)
}

/// max over samples of the chart distance between same-parameter points.
pub fn loop_set_distance(m: &Manifold, a: &Loop, b: &Loop) -> Result<f64> {
    if a.n() != b.n() || a.dim() != b.dim() {
        return Err(FpError::DimMismatch {
            expected: a.n(),
            got: b.n(),
            context: "loop_set_distance needs equal sampling".into(),
        });
    }
    let mut worst = 0.0f64;
    for i in 0..a.n() {
        worst = worst.max(m.chart_distance(a.sample(i), b.sample(i))?);
    }
    Ok(worst)
}

/// An ordered path of loops sharing N, dim and winding.
#[derive(Debug, Clone)]
pub struct PathOfLoops {
    loops: Vec<Loop>,
}

impl PathOfLoops {
    pub fn new(loops: Vec<Loop>) -> Result<Self> {
        if loops.is_empty() {
            return Err(FpError::InvalidLoop("empty path of loops".into()));
        }
        let n = loops[0].n();
        let d = loops[0].dim();
        let w = loops[0].winding().to_vec();
        for lp in &loops {
            if lp.n() != n || lp.dim() != d || lp.winding() != w {
                return Err(FpError::InvalidLoop(
                    "path loops must share sample count, dimension and winding".into(),
                ));
            }
        }
        Ok(PathOfLoops { loops })
    }

    pub fn loops(&self) -> &[Loop] {
        &self.loops
    }

    pub fn loops_mut(&mut self) -> &mut [Loop] {
        &mut self.loops
    }

    pub fn len(&self) -> usize {
        self.loops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loops.is_empty()
    }
}

/// Max over consecutive pairs of the product-metric norm of the
/// difference quotient (m steps on parameter [0,1]).
pub fn path_speed(m: &Manifold, p: &PathOfLoops) -> Result<f64> {
    if p.len() < 2 {
        return Ok(0.0);
    }
    let steps = (p.len() - 1) as f64;
    let mut worst = 0.0f64;
    for j in 0..p.len() - 1 {
        let a = &p.loops()[j];
        let b = &p.loops()[j + 1];
        let n = a.n();
        let d = a.dim();
        let mut xi = vec![0.0; n * d];
        for i in 0..n * d {
            xi[i] = (b.samples_flat()[i] - a.samples_flat()[i]) * steps;
        }
        let t = LoopTangent {
            dim: d,
            xi,
            alpha: (b.period() - a.period()) * steps,
        };
        worst = worst.max(product_norm(m, a, &t)?);
    }
    Ok(worst)
}

/// Winding integers (free homotopy class data) for chart loops.
pub fn homotopy_class(m: &Manifold, lp: &Loop) -> Result<Vec<i64>> {
    if m.is_embedded() {
        return Err(FpError::Geometry(
            "homotopy classes are tracked only on periodic charts; embedded sweeps are contractible by construction".into(),
        ));
    }
    Ok(lp.winding().to_vec())
}
