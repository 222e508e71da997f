//! Manifold representations: global periodic charts and explicitly
//! embedded submanifolds of Euclidean space.
//!
//! A periodic chart is all of R^dim with a subset of coordinates
//! identified modulo given periods and a smooth metric `x -> g(x)`
//! supplied as expression fields (so metric derivatives, and hence
//! Christoffel symbols, are symbolic). The embedded representation covers
//! the round sphere: ambient constraint, tangent/normal projections and
//! the induced (ambient dot product) metric.

use crate::expr::ScalarField;
use crate::{FpError, Result};
use nalgebra::DMatrix;

/// 16-point Gauss-Legendre nodes and weights on [-1, 1], for metric line
/// quadrature in [`Manifold::chart_distance`].
const GL16_NODES: [f64; 16] = [
    -0.9894009349916499,
    -0.9445750230732326,
    -0.8656312023878318,
    -0.7554044083550030,
    -0.6178762444026438,
    -0.4580167776572274,
    -0.2816035507792589,
    -0.0950125098376374,
    0.0950125098376374,
    0.2816035507792589,
    0.4580167776572274,
    0.6178762444026438,
    0.7554044083550030,
    0.8656312023878318,
    0.9445750230732326,
    0.9894009349916499,
];
const GL16_WEIGHTS: [f64; 16] = [
    0.0271524594117541,
    0.0622535239386479,
    0.0951585116824928,
    0.1246289712555339,
    0.1495959888165767,
    0.1691565193950025,
    0.1826034150449236,
    0.1894506104550685,
    0.1894506104550685,
    0.1826034150449236,
    0.1691565193950025,
    0.1495959888165767,
    0.1246289712555339,
    0.0951585116824928,
    0.0622535239386479,
    0.0271524594117541,
];

/// Christoffel symbols at a point, `gamma[k][i][j]` with symmetry in (i, j).
#[derive(Debug, Clone)]
pub struct Christoffel {
    dim: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zero(dim: usize) -> Self {
        Christoffel {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.dim + i) * self.dim + j]
    }

    #[inline]
    fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        self.data[(k * self.dim + i) * self.dim + j] = v;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Contraction `out^k = gamma^k_{ij} u^i w^j`.
    pub fn contract(&self, u: &[f64], w: &[f64], out: &mut [f64]) {
        for k in 0..self.dim {
            let mut acc = 0.0;
            for i in 0..self.dim {
                for j in 0..self.dim {
                    acc += self.get(k, i, j) * u[i] * w[j];
                }
            }
            out[k] = acc;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }
}

#[derive(Debug, Clone)]
enum MetricRep {
    /// Constant metric matrix: flat plane, flat torus.
    Constant(DMatrix<f64>),
    /// Entry fields g[i][j] as expressions in the chart coordinates.
    Fields(Vec<ScalarField>),
}

/// Global periodic chart: R^dim with coordinate `i` identified modulo
/// `periods[i]` when set.
#[derive(Debug, Clone)]
pub struct PeriodicChart {
    dim: usize,
    coord_names: Vec<String>,
    periods: Vec<Option<f64>>,
    metric: MetricRep,
}

/// Explicitly embedded surfaces; only the round sphere is built in.
#[derive(Debug, Clone)]
pub enum Embedded {
    /// Unit sphere { |z| = 1 } in R^{dim+1}.
    UnitSphere { ambient: usize },
}

#[derive(Debug, Clone)]
pub enum Rep {
    Chart(PeriodicChart),
    Embedded(Embedded),
}

/// A complete Riemannian manifold in one of the two supported
/// representations. Immutable after construction; all evaluation is pure.
#[derive(Debug, Clone)]
pub struct Manifold {
    rep: Rep,
}

impl Manifold {
    /// Flat R^dim, no periodic identifications.
    pub fn euclidean(dim: usize) -> Self {
        Manifold {
            rep: Rep::Chart(PeriodicChart {
                dim,
                coord_names: default_names(dim),
                periods: vec![None; dim],
                metric: MetricRep::Constant(DMatrix::identity(dim, dim)),
            }),
        }
    }

    /// Flat torus with the given coordinate periods (all > 0).
    pub fn flat_torus(periods: &[f64]) -> Result<Self> {
        if periods.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(FpError::Geometry(format!(
                "torus periods must be positive, got {:?}",
                periods
            )));
        }
        let dim = periods.len();
        Ok(Manifold {
            rep: Rep::Chart(PeriodicChart {
                dim,
                coord_names: default_names(dim),
                periods: periods.iter().map(|p| Some(*p)).collect(),
                metric: MetricRep::Constant(DMatrix::identity(dim, dim)),
            }),
        })
    }

    /// Cylinder R x S^1 with metric dr^2 + beta(r) dtheta^2; `beta` is an
    /// expression in `r`, theta has period 2*pi.
    pub fn cylinder(beta_src: &str) -> Result<Self> {
        let names = ["r", "theta"];
        let beta = ScalarField::parse(beta_src, &names)?;
        let one = ScalarField::constant(1.0, &names);
        let zero = ScalarField::constant(0.0, &names);
        Ok(Manifold {
            rep: Rep::Chart(PeriodicChart {
                dim: 2,
                coord_names: names.iter().map(|s| s.to_string()).collect(),
                periods: vec![None, Some(2.0 * std::f64::consts::PI)],
                metric: MetricRep::Fields(vec![one, zero.clone(), zero, beta]),
            }),
        })
    }

    /// General periodic chart with metric entries given as expressions in
    /// the named coordinates (row-major dim x dim, must be symmetric).
    pub fn chart_with_metric(
        coord_names: &[&str],
        periods: &[Option<f64>],
        entries: &[String],
    ) -> Result<Self> {
        let dim = coord_names.len();
        if periods.len() != dim {
            return Err(FpError::DimMismatch {
                expected: dim,
                got: periods.len(),
                context: "periods per coordinate".into(),
            });
        }
        if entries.len() != dim * dim {
            return Err(FpError::DimMismatch {
                expected: dim * dim,
                got: entries.len(),
                context: "metric entries (row-major)".into(),
            });
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if entries[i * dim + j] != entries[j * dim + i] {
                    return Err(FpError::Geometry(format!(
                        "metric entries must be given symmetrically: g[{i}][{j}] = {:?} but g[{j}][{i}] = {:?}",
                        entries[i * dim + j],
                        entries[j * dim + i]
                    )));
                }
            }
        }
        let fields = entries
            .iter()
            .map(|s| ScalarField::parse(s, coord_names))
            .collect::<Result<Vec<_>>>()?;
        Ok(Manifold {
            rep: Rep::Chart(PeriodicChart {
                dim,
                coord_names: coord_names.iter().map(|s| s.to_string()).collect(),
                periods: periods.to_vec(),
                metric: MetricRep::Fields(fields),
            }),
        })
    }

    /// Round unit sphere S^2 embedded in R^3.
    pub fn unit_sphere() -> Self {
        Manifold {
            rep: Rep::Embedded(Embedded::UnitSphere { ambient: 3 }),
        }
    }

    pub fn rep(&self) -> &Rep {
        &self.rep
    }

    pub fn is_embedded(&self) -> bool {
        matches!(self.rep, Rep::Embedded(_))
    }

    /// Chart with a constant metric matrix (plane, flat torus).
    pub fn is_flat(&self) -> bool {
        matches!(
            &self.rep,
            Rep::Chart(PeriodicChart {
                metric: MetricRep::Constant(_),
                ..
            })
        )
    }

    /// Chart whose constant metric is the identity.
    pub fn is_flat_euclidean(&self) -> bool {
        match &self.rep {
            Rep::Chart(PeriodicChart {
                metric: MetricRep::Constant(g),
                ..
            }) => g.is_identity(0.0),
            _ => false,
        }
    }

    /// Intrinsic dimension.
    pub fn dim(&self) -> usize {
        match &self.rep {
            Rep::Chart(c) => c.dim,
            Rep::Embedded(Embedded::UnitSphere { ambient }) => ambient - 1,
        }
    }

    /// Number of coordinates used to store a point (chart dim or ambient
    /// dimension).
    pub fn coord_dim(&self) -> usize {
        match &self.rep {
            Rep::Chart(c) => c.dim,
            Rep::Embedded(Embedded::UnitSphere { ambient }) => *ambient,
        }
    }

    pub fn coord_names(&self) -> Vec<String> {
        match &self.rep {
            Rep::Chart(c) => c.coord_names.clone(),
            Rep::Embedded(Embedded::UnitSphere { ambient }) => default_names(*ambient),
        }
    }

    /// Per-coordinate periods (None for non-periodic / embedded coords).
    pub fn periods(&self) -> Vec<Option<f64>> {
        match &self.rep {
            Rep::Chart(c) => c.periods.clone(),
            Rep::Embedded(Embedded::UnitSphere { ambient }) => vec![None; *ambient],
        }
    }

    /// Metric matrix at `x` (chart) or the ambient identity (embedded,
    /// where tangent vectors carry the induced dot product).
    pub fn metric_matrix(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        match &self.rep {
            Rep::Chart(c) => {
                let d = c.dim;
                let mut g = DMatrix::zeros(d, d);
                match &c.metric {
                    MetricRep::Constant(m) => g.copy_from(m),
                    MetricRep::Fields(fields) => {
                        for i in 0..d {
                            for j in 0..d {
                                let v = fields[i * d + j].eval(x);
                                if !v.is_finite() {
                                    return Err(FpError::Geometry(format!(
                                        "non-finite metric entry g[{i}][{j}] at x = {:?}",
                                        x
                                    )));
                                }
                                g[(i, j)] = v;
                            }
                        }
                    }
                }
                Ok(g)
            }
            Rep::Embedded(Embedded::UnitSphere { ambient }) => {
                Ok(DMatrix::identity(*ambient, *ambient))
            }
        }
    }

    /// g_x(u, w).
    pub fn metric_eval(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<f64> {
        match &self.rep {
            Rep::Chart(c) => {
                let d = c.dim;
                match &c.metric {
                    MetricRep::Constant(g) => {
                        let mut acc = 0.0;
                        for i in 0..d {
                            for j in 0..d {
                                acc += g[(i, j)] * u[i] * w[j];
                            }
                        }
                        Ok(acc)
                    }
                    MetricRep::Fields(fields) => {
                        let mut acc = 0.0;
                        for i in 0..d {
                            for j in 0..d {
                                let gij = fields[i * d + j].eval(x);
                                if !gij.is_finite() {
                                    return Err(FpError::Geometry(format!(
                                        "non-finite metric entry g[{i}][{j}] at x = {:?}",
                                        x
                                    )));
                                }
                                acc += gij * u[i] * w[j];
                            }
                        }
                        Ok(acc)
                    }
                }
            }
            Rep::Embedded(_) => Ok(dot(u, w)),
        }
    }

    /// Squared metric norm of `v` at `x`.
    pub fn sq_norm(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        self.metric_eval(x, v, v)
    }

    /// Partial derivatives of the metric: `out[k] = d g / d x_k`.
    /// Zero matrices for constant metrics; symbolic for expression metrics.
    pub fn metric_deriv(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        match &self.rep {
            Rep::Chart(c) => {
                let d = c.dim;
                match &c.metric {
                    MetricRep::Constant(_) => Ok(vec![DMatrix::zeros(d, d); d]),
                    MetricRep::Fields(fields) => {
                        let mut out = vec![DMatrix::zeros(d, d); d];
                        let mut grad = vec![0.0; d];
                        for i in 0..d {
                            for j in 0..d {
                                fields[i * d + j].grad_into(x, &mut grad);
                                for (k, gk) in grad.iter().enumerate() {
                                    out[k][(i, j)] = *gk;
                                }
                            }
                        }
                        Ok(out)
                    }
                }
            }
            Rep::Embedded(_) => Err(FpError::Geometry(
                "metric derivatives are chart-only; embedded manifolds use projections".into(),
            )),
        }
    }

    /// Christoffel symbols of the chart metric at `x`:
    /// `gamma^k_{ij} = 1/2 g^{kl} (d_i g_{jl} + d_j g_{il} - d_l g_{ij})`.
    pub fn christoffel(&self, x: &[f64]) -> Result<Christoffel> {
        let c = match &self.rep {
            Rep::Chart(c) => c,
            Rep::Embedded(_) => {
                return Err(FpError::Geometry(
                    "christoffel symbols are chart-only; embedded geodesics use the constraint normal".into(),
                ))
            }
        };
        let d = c.dim;
        if matches!(c.metric, MetricRep::Constant(_)) {
            return Ok(Christoffel::zero(d));
        }
        let g = self.metric_matrix(x)?;
        let dg = self.metric_deriv(x)?;
        let ginv = g.clone().try_inverse().ok_or_else(|| {
            FpError::Geometry(format!("singular metric matrix at x = {:?}", x))
        })?;
        let mut gamma = Christoffel::zero(d);
        for k in 0..d {
            for i in 0..d {
                for j in 0..=i {
                    let mut acc = 0.0;
                    for l in 0..d {
                        acc += ginv[(k, l)]
                            * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                    }
                    let v = 0.5 * acc;
                    gamma.set(k, i, j, v);
                    gamma.set(k, j, i, v);
                }
            }
        }
        Ok(gamma)
    }

    /// Reduces `delta = y - x` per coordinate to the shortest lattice
    /// representative for periodic coordinates.
    pub fn wrap_delta(&self, delta: &mut [f64]) {
        if let Rep::Chart(c) = &self.rep {
            for (d, p) in delta.iter_mut().zip(&c.periods) {
                if let Some(p) = p {
                    *d -= (*d / p).round() * p;
                }
            }
        }
    }

    /// Length of the straight chart segment from `x` to `y` (shortest
    /// lattice representative in periodic coordinates) measured in the
    /// metric by Gauss-Legendre quadrature. An upper bound on the
    /// Riemannian distance; exact on flat charts. For embedded points the
    /// ambient chord length is returned.
    pub fn chart_distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match &self.rep {
            Rep::Chart(c) => {
                let d = c.dim;
                let mut delta: Vec<f64> = (0..d).map(|i| y[i] - x[i]).collect();
                self.wrap_delta(&mut delta);
                if delta.iter().all(|v| *v == 0.0) {
                    return Ok(0.0);
                }
                if let MetricRep::Constant(_) = &c.metric {
                    return Ok(self.sq_norm(x, &delta)?.max(0.0).sqrt());
                }
                let mut acc = 0.0;
                let mut pt = vec![0.0; d];
                for (node, wgt) in GL16_NODES.iter().zip(GL16_WEIGHTS.iter()) {
                    let t = 0.5 * (node + 1.0);
                    for i in 0..d {
                        pt[i] = x[i] + t * delta[i];
                    }
                    let sq = self.sq_norm(&pt, &delta)?;
                    if !sq.is_finite() || sq < 0.0 {
                        return Err(FpError::Geometry(format!(
                            "metric not positive along segment at {:?}",
                            pt
                        )));
                    }
                    acc += 0.5 * wgt * sq.sqrt();
                }
                Ok(acc)
            }
            Rep::Embedded(_) => {
                let mut acc = 0.0;
                for i in 0..x.len() {
                    let d = y[i] - x[i];
                    acc += d * d;
                }
                Ok(acc.sqrt())
            }
        }
    }

    /// Closest-point projection onto the manifold (identity for charts).
    pub fn project_point(&self, x: &[f64], out: &mut [f64]) {
        match &self.rep {
            Rep::Chart(_) => out.copy_from_slice(x),
            Rep::Embedded(Embedded::UnitSphere { .. }) => {
                let n = dot(x, x).sqrt();
                if n > 0.0 {
                    for (o, xi) in out.iter_mut().zip(x) {
                        *o = xi / n;
                    }
                } else {
                    out.copy_from_slice(x);
                }
            }
        }
    }

    /// Tangent projection pi(x) applied to `v` (identity for charts).
    pub fn tangent_project(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        match &self.rep {
            Rep::Chart(_) => out.copy_from_slice(v),
            Rep::Embedded(Embedded::UnitSphere { .. }) => {
                let n2 = dot(x, x);
                let c = if n2 > 0.0 { dot(x, v) / n2 } else { 0.0 };
                for i in 0..v.len() {
                    out[i] = v[i] - c * x[i];
                }
            }
        }
    }

    /// Normal projection pi_perp(x) applied to `v` (zero for charts).
    pub fn normal_project(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        match &self.rep {
            Rep::Chart(_) => out.iter_mut().for_each(|o| *o = 0.0),
            Rep::Embedded(Embedded::UnitSphere { .. }) => {
                let n2 = dot(x, x);
                let c = if n2 > 0.0 { dot(x, v) / n2 } else { 0.0 };
                for i in 0..v.len() {
                    out[i] = c * x[i];
                }
            }
        }
    }

    /// Constraint residual: 0 on the surface. Charts return 0.
    pub fn constraint(&self, x: &[f64]) -> f64 {
        match &self.rep {
            Rep::Chart(_) => 0.0,
            Rep::Embedded(Embedded::UnitSphere { .. }) => 0.5 * (dot(x, x) - 1.0),
        }
    }

    /// Validates a (point, tangent) pair; embedded tangents must have
    /// normal component below 1e-10 * |v|.
    pub fn check_tangent(&self, x: &[f64], v: &[f64]) -> Result<()> {
        if self.is_embedded() {
            let mut nrm = vec![0.0; v.len()];
            self.normal_project(x, v, &mut nrm);
            let vn = dot(v, v).sqrt();
            let nn = dot(&nrm, &nrm).sqrt();
            if nn > 1e-10 * vn.max(1e-300) {
                return Err(FpError::Geometry(format!(
                    "vector not tangent: |normal component| = {:.3e} vs |v| = {:.3e}",
                    nn, vn
                )));
            }
        }
        Ok(())
    }
}

fn default_names(dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("x{}", i + 1)).collect()
}

/// Axis-aligned box in chart coordinates; the workhorse for sampling
/// regions, confinement sets and covers.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChartBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ChartBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(FpError::DimMismatch {
                expected: lo.len(),
                got: hi.len(),
                context: "box bounds".into(),
            });
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a <= b)) {
            return Err(FpError::Geometry(format!(
                "box bounds must satisfy lo <= hi, got lo = {:?}, hi = {:?}",
                lo, hi
            )));
        }
        Ok(ChartBox { lo, hi })
    }

    /// Cube [-half, half]^dim.
    pub fn centered(dim: usize, half: f64) -> Self {
        ChartBox {
            lo: vec![-half; dim],
            hi: vec![half; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Signed slack: min over coordinates of the distance to the nearest
    /// face (> 0 strictly inside, < 0 outside).
    pub fn slack(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (lo, hi))| (v - lo).min(hi - v))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    /// Point at fractional coordinates `u` in [0,1]^dim.
    pub fn lerp(&self, u: &[f64]) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(u)
            .map(|((a, b), t)| a + (b - a) * t)
            .collect()
    }

    /// Deterministic low-discrepancy sequence point (additive golden-ratio
    /// lattice), so growing `i` gives a prefix-monotone sample of the box.
    pub fn quasi_point(&self, i: usize) -> Vec<f64> {
        // Coordinates advance by powers of the inverse of the plastic-like
        // constant; standard R_d sequence.
        let d = self.dim();
        let mut phi: f64 = 2.0;
        for _ in 0..24 {
            phi = (1.0 + phi).powf(1.0 / (d as f64 + 1.0));
        }
        let mut u = vec![0.0; d];
        let mut alpha = 1.0;
        for uj in u.iter_mut() {
            alpha /= phi;
            *uj = ((i as f64 + 1.0) * alpha).fract();
        }
        self.lerp(&u)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_torus_metric_is_identity() {
        let m = Manifold::flat_torus(&[1.0, 1.0]).unwrap();
        let u = [1.0, 0.0];
        assert_eq!(m.metric_eval(&[0.3, 0.7], &u, &u).unwrap(), 1.0);
        assert!(m.christoffel(&[0.2, 0.4]).unwrap().is_zero());
    }

    #[test]
    fn cylinder_metric_and_christoffels() {
        let m = Manifold::cylinder("1 + r^2").unwrap();
        // |d_theta|^2 at r = 1 is beta(1) = 2.
        let dtheta = [0.0, 1.0];
        assert_eq!(m.metric_eval(&[1.0, 0.3], &dtheta, &dtheta).unwrap(), 2.0);

        // gamma^r_{theta theta} = -beta'/2 = -1 and
        // gamma^theta_{r theta} = beta'/(2 beta) = 0.5 at r = 1.
        let g = m.christoffel(&[1.0, 0.0]).unwrap();
        assert!((g.get(0, 1, 1) + 1.0).abs() < 1e-12);
        assert!((g.get(1, 0, 1) - 0.5).abs() < 1e-12);
        assert!((g.get(1, 1, 0) - 0.5).abs() < 1e-12);
        assert_eq!(g.get(0, 0, 0), 0.0);
    }

    #[test]
    fn christoffel_matches_finite_differences_of_metric() {
        // Independent check: rebuild gamma from O(h^2) central differences
        // of g and compare with the symbolic route.
        let m = Manifold::cylinder("1 + r^2 + 0.3*sin(r)").unwrap();
        let x = [0.7, 1.1];
        let h = 1e-4;
        let d = 2;
        let mut dg = vec![DMatrix::zeros(d, d); d];
        for k in 0..d {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let gp = m.metric_matrix(&xp).unwrap();
            let gm = m.metric_matrix(&xm).unwrap();
            dg[k] = (gp - gm) / (2.0 * h);
        }
        let ginv = m.metric_matrix(&x).unwrap().try_inverse().unwrap();
        let gamma = m.christoffel(&x).unwrap();
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    let mut acc = 0.0;
                    for l in 0..d {
                        acc += ginv[(k, l)]
                            * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                    }
                    let fd = 0.5 * acc;
                    let sym = gamma.get(k, i, j);
                    assert!(
                        (fd - sym).abs() < 1e-5 * sym.abs().max(1.0),
                        "gamma^{k}_{i}{j}: fd {fd} vs symbolic {sym}"
                    );
                }
            }
        }
    }

    #[test]
    fn torus_distance_wraps_to_shortest_representative() {
        let m = Manifold::flat_torus(&[1.0, 1.0]).unwrap();
        assert!((m.chart_distance(&[0.0, 0.0], &[0.4, 0.0]).unwrap() - 0.4).abs() < 1e-15);
        assert!((m.chart_distance(&[0.0, 0.0], &[0.9, 0.0]).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(m.chart_distance(&[0.25, 0.5], &[0.25, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn cylinder_distance_quadrature_matches_dense_simpson() {
        let m = Manifold::cylinder("1 + r^2").unwrap();
        let x = [0.0, 0.0];
        let y = [0.0, std::f64::consts::PI];
        // Segment at r = 0: length = pi * sqrt(beta(0)) = pi.
        let d = m.chart_distance(&x, &y).unwrap();
        assert!((d - std::f64::consts::PI).abs() < 1e-12);

        // Generic segment vs a dense Simpson quadrature oracle.
        let x = [0.5, 0.2];
        let y = [1.5, 1.0];
        let delta = [1.0, 0.8];
        let n = 20_000;
        let f = |t: f64| {
            let pt = [x[0] + t * delta[0], x[1] + t * delta[1]];
            m.sq_norm(&pt, &delta).unwrap().sqrt()
        };
        let mut simpson = f(0.0) + f(1.0);
        for i in 1..n {
            let t = i as f64 / n as f64;
            simpson += if i % 2 == 1 { 4.0 } else { 2.0 } * f(t);
        }
        simpson /= 3.0 * n as f64;
        let d = m.chart_distance(&x, &y).unwrap();
        assert!(
            (d - simpson).abs() < 1e-9,
            "GL16 {d} vs Simpson {simpson}"
        );
    }

    #[test]
    fn sphere_projections_are_idempotent_and_complementary() {
        let m = Manifold::unit_sphere();
        let mut rng_state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            // xorshift; cheap deterministic samples for a pure-math check
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for _ in 0..1000 {
            let raw = [next(), next(), next()];
            let mut x = [0.0; 3];
            m.project_point(&raw, &mut x);
            let v = [next(), next(), next()];
            let mut t = [0.0; 3];
            let mut n = [0.0; 3];
            m.tangent_project(&x, &v, &mut t);
            m.normal_project(&x, &v, &mut n);
            let mut tt = [0.0; 3];
            m.tangent_project(&x, &t, &mut tt);
            for i in 0..3 {
                assert!((t[i] + n[i] - v[i]).abs() < 1e-12, "complementarity");
                assert!((tt[i] - t[i]).abs() < 1e-12, "idempotence");
            }
            assert!((dot(&x, &x) - 1.0).abs() < 1e-12);
            assert!(m.check_tangent(&x, &t).is_ok());
        }
    }

    #[test]
    fn sphere_tangent_metric_is_ambient_dot() {
        let m = Manifold::unit_sphere();
        let x = [0.0, 0.0, 1.0];
        let u = [1.0, 0.0, 0.0];
        assert_eq!(m.metric_eval(&x, &u, &u).unwrap(), 1.0);
    }

    #[test]
    fn metric_positive_definite_on_samples() {
        let m = Manifold::cylinder("1 + r^2").unwrap();
        for i in 0..1000 {
            let r = -5.0 + 10.0 * (i as f64 / 999.0);
            let g = m.metric_matrix(&[r, 0.1]).unwrap();
            let eig = g.symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|l| *l > 0.0));
        }
    }

    #[test]
    fn asymmetric_metric_entries_rejected() {
        let err = Manifold::chart_with_metric(
            &["a", "b"],
            &[None, None],
            &[
                "1".into(),
                "a".into(),
                "b".into(),
                "1".into(),
            ],
        );
        assert!(err.is_err());
    }

    #[test]
    fn chart_distance_symmetry_and_triangle_on_flat_charts() {
        let m = Manifold::flat_torus(&[1.0, 2.0]).unwrap();
        let mut state = 42u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for _ in 0..300 {
            let a = [next(), next()];
            let b = [next(), next()];
            let c = [next(), next()];
            let ab = m.chart_distance(&a, &b).unwrap();
            let ba = m.chart_distance(&b, &a).unwrap();
            let ac = m.chart_distance(&a, &c).unwrap();
            let cb = m.chart_distance(&c, &b).unwrap();
            assert!((ab - ba).abs() < 1e-9);
            assert!(ab <= ac + cb + 1e-9);
        }
    }
}
