//! Estimators for the critical values e0(L) and c_u(L) and for the
//! per-ball isoperimetric constant mu that powers the barrier estimate.
//! c_u is only ever bracketed: a negative-action loop certifies the low
//! side; "no loop found" is budget-relative evidence for the high side
//! and is recorded, never asserted.

use crate::geometry::{ChartBox, Manifold};
use crate::lagrangian::{Lagrangian, OneForm};
use crate::loopspace::{action, length, Loop};
use crate::minimax::{find_negative_action_loop, WitnessBudget};
use crate::{FpError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Closed metric ball in chart coordinates. On periodic charts the
/// diameter must clear every period so the ball is an embedded
/// Euclidean ball (closed curves inside it are contractible).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartBall {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl ChartBall {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.iter().any(|c| !c.is_finite()) || !radius.is_finite() || radius <= 0.0 {
            return Err(FpError::Geometry(format!(
                "chart ball needs finite center and radius > 0, got {:?}, {}",
                center, radius
            )));
        }
        Ok(ChartBall { center, radius })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.sq_dist(x) <= self.radius * self.radius * (1.0 + 1e-12)
    }

    fn sq_dist(&self, x: &[f64]) -> f64 {
        self.center
            .iter()
            .zip(x)
            .map(|(c, v)| (v - c) * (v - c))
            .sum()
    }

    /// Checks the ball is a valid chart ball of `m`.
    fn validate(&self, m: &Manifold) -> Result<()> {
        if m.is_embedded() {
            return Err(FpError::Geometry(
                "chart balls need a global chart; embedded manifolds have none".into(),
            ));
        }
        if self.center.len() != m.coord_dim() {
            return Err(FpError::DimMismatch {
                expected: m.coord_dim(),
                got: self.center.len(),
                context: "ball center".into(),
            });
        }
        for (i, p) in m.periods().iter().enumerate() {
            if let Some(p) = p {
                if 2.0 * self.radius >= *p {
                    return Err(FpError::Geometry(format!(
                        "ball diameter {} does not fit inside period {} of coordinate {}",
                        2.0 * self.radius,
                        p,
                        i
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Finitely many balls covering a box, with a certified Lebesgue
/// number: any subset of diameter <= `lebesgue_delta` lies in one ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallCover {
    pub balls: Vec<ChartBall>,
    pub lebesgue_delta: f64,
}

/// Regular grid cover: `cells` per axis, each cell's circumscribed ball
/// inflated by `inflation` > 1. Any point of the region lies in a cell
/// within half-diagonal of that cell's center, so sets of diameter up
/// to (inflation - 1) * half_diagonal stay inside the inflated ball:
/// that difference is the certified Lebesgue number.
pub fn grid_ball_cover(region: &ChartBox, cells: usize, inflation: f64) -> Result<BallCover> {
    if cells == 0 {
        return Err(FpError::Contract("grid cover needs cells >= 1".into()));
    }
    if !(inflation > 1.0) {
        return Err(FpError::Contract(format!(
            "grid cover needs inflation > 1, got {inflation}"
        )));
    }
    let d = region.dim();
    let side: Vec<f64> = region
        .lo
        .iter()
        .zip(&region.hi)
        .map(|(a, b)| (b - a) / cells as f64)
        .collect();
    let half_diag = 0.5 * side.iter().map(|s| s * s).sum::<f64>().sqrt();
    if !(half_diag > 0.0) {
        return Err(FpError::Geometry("degenerate region for a ball cover".into()));
    }
    let radius = inflation * half_diag;
    let mut balls = Vec::with_capacity(cells.pow(d as u32));
    let mut idx = vec![0usize; d];
    loop {
        let center: Vec<f64> = (0..d)
            .map(|j| region.lo[j] + (idx[j] as f64 + 0.5) * side[j])
            .collect();
        balls.push(ChartBall::new(center, radius)?);
        // Odometer increment over the grid.
        let mut j = 0;
        loop {
            if j == d {
                return Ok(BallCover {
                    balls,
                    lebesgue_delta: (inflation - 1.0) * half_diag,
                });
            }
            idx[j] += 1;
            if idx[j] < cells {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// Floor applied to mu so barrier formulas stay finite when theta is
/// closed (the constant may then be taken arbitrarily small).
pub const MU_FLOOR: f64 = 1e-12;

/// Isoperimetric constant of a 1-form on a chart ball: mu such that
/// |integral of theta over gamma| <= mu * length(gamma)^2 for closed
/// curves gamma inside the ball. Mechanism: Stokes through the flat
/// cone filling, mu = 1/2 * sup |dtheta|_op * distortion^2, where the
/// distortion converts metric length to chart length. The returned
/// constant is cross-checked against 10^3 random loops in the ball;
/// a violation aborts (it would mean a broken bound, not bad data).
pub fn estimate_mu(m: &Manifold, theta: &OneForm, ball: &ChartBall) -> Result<f64> {
    ball.validate(m)?;
    let d = m.coord_dim();
    if theta.dim() != d {
        return Err(FpError::DimMismatch {
            expected: d,
            got: theta.dim(),
            context: "one-form components".into(),
        });
    }
    // Sup of |dtheta| and of the inverse metric's largest eigenvalue
    // over a quasi-random cloud in the ball (center included).
    let bbox = ChartBox::new(
        ball.center.iter().map(|c| c - ball.radius).collect(),
        ball.center.iter().map(|c| c + ball.radius).collect(),
    )?;
    let mut sup_dtheta: f64 = 0.0;
    let mut sup_inv_eig: f64 = 0.0;
    let mut kept = 0usize;
    let mut idx = 0usize;
    let mut visit = |x: &[f64]| -> Result<()> {
        let jac = theta.jacobian(x);
        let mut a = nalgebra::DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                a[(i, j)] = jac[(i, j)] - jac[(j, i)];
            }
        }
        sup_dtheta = sup_dtheta.max(a.singular_values().max());
        let g = m.metric_matrix(x)?;
        let min_eig = g
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |acc, e| acc.min(*e));
        if !(min_eig > 0.0) {
            return Err(FpError::Geometry(format!(
                "metric not positive definite in the ball at {:?}",
                x
            )));
        }
        sup_inv_eig = sup_inv_eig.max(1.0 / min_eig);
        Ok(())
    };
    visit(&ball.center)?;
    while kept < 512 && idx < 100_000 {
        let x = bbox.quasi_point(idx);
        idx += 1;
        if !ball.contains(&x) {
            continue;
        }
        kept += 1;
        visit(&x)?;
    }
    let mu = (0.5 * sup_dtheta * sup_inv_eig).max(MU_FLOOR);

    // Random-loop audit: 10^3 smooth closed curves inside the ball.
    // The slack covers midpoint-quadrature error of the line integral;
    // genuine violations of the continuum bound are far larger.
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 128usize;
    for trial in 0..1000 {
        let budget = ball.radius * (0.15 + 0.8 * rng.gen::<f64>());
        let mut coeffs = Vec::with_capacity(d);
        let mut total = 0.0f64;
        for _ in 0..d {
            let c: [f64; 4] = core::array::from_fn(|_| rng.gen::<f64>() - 0.5);
            total += c.iter().map(|v| v.abs()).sum::<f64>();
            coeffs.push(c);
        }
        let scale = if total > 0.0 { budget / total } else { 0.0 };
        let mut samples = Vec::with_capacity(n * d);
        for i in 0..n {
            let ang = std::f64::consts::TAU * i as f64 / n as f64;
            for c in &coeffs {
                samples.push(
                    ball.center[samples.len() % d]
                        + scale
                            * (c[0] * ang.cos()
                                + c[1] * ang.sin()
                                + c[2] * (2.0 * ang).cos()
                                + c[3] * (2.0 * ang).sin()),
                );
            }
        }
        let lp = Loop::new(n, d, 1.0, vec![0; d], samples)?;
        let mut integral = 0.0;
        let mut tv = vec![0.0; d];
        for i in 0..n {
            let a = lp.sample(i);
            let b = lp.sample((i + 1) % n);
            let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
            theta.eval_into(&mid, &mut tv);
            integral += tv.iter().zip(a.iter().zip(b)).map(|(t, (x, y))| t * (y - x)).sum::<f64>();
        }
        let len = length(m, &lp)?;
        let bound = mu * len * len;
        let slack = (1e-3 * bound).max(1e-9);
        if integral.abs() > bound + slack {
            return Err(FpError::Contract(format!(
                "isoperimetric audit failed on loop {trial}: |∫γθ| = {:.6e} > mu ℓ² = {:.6e}",
                integral.abs(),
                bound
            )));
        }
    }
    Ok(mu)
}

/// A certified low-side witness: its action recomputes below zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoWitness {
    pub k: f64,
    pub action: f64,
    pub lp: Loop,
}

/// High-side evidence: the search at `k` exhausted its budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HiReport {
    pub k: f64,
    pub evaluations: usize,
}

/// Work limits for one c_u bracketing run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CuBudget {
    pub bisections: usize,
    /// Target bracket width.
    pub tolerance: f64,
    pub witness: WitnessBudget,
}

impl Default for CuBudget {
    fn default() -> Self {
        CuBudget {
            bisections: 40,
            tolerance: 1e-3,
            witness: WitnessBudget::default(),
        }
    }
}

/// Bracket for c_u with the evidence on both sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValueEstimate {
    pub value: f64,
    pub bracket: (f64, f64),
    pub lo_witnesses: Vec<LoWitness>,
    pub hi_reports: Vec<HiReport>,
    /// Total action evaluations spent.
    pub evaluations: usize,
    /// Set when a witness exists at the top of the search bracket: the
    /// true c_u may be anywhere above (possibly infinite).
    pub unbounded_suspected: bool,
}

fn certified_witness(l: &Lagrangian, k: f64, lp: Loop) -> Result<LoWitness> {
    let s = action(l, k, &lp)?;
    if !(s < 0.0) {
        return Err(FpError::Contract(format!(
            "witness at k = {k} recomputed to nonnegative action {s}"
        )));
    }
    Ok(LoWitness { k, action: s, lp })
}

/// Brackets c_u(L) by bisection on k over `k_bracket`. At each k the
/// witness search decides the side: a recomputed negative-action loop
/// forces c_u > k (and, by S_{k'} <= S_k for k' <= k at fixed T > 0,
/// settles every smaller k too, which is why bisection is sound);
/// budget exhaustion moves the upper end down. A witness at the top of
/// the bracket sets `unbounded_suspected` instead of narrowing.
pub fn estimate_cu(
    l: &Lagrangian,
    region: &ChartBox,
    k_bracket: (f64, f64),
    budget: &CuBudget,
) -> Result<CriticalValueEstimate> {
    let (mut lo, mut hi) = k_bracket;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(FpError::Contract(format!(
            "c_u bracket must be finite with lo < hi, got ({lo}, {hi})"
        )));
    }
    let mut est = CriticalValueEstimate {
        value: f64::NAN,
        bracket: (lo, hi),
        lo_witnesses: Vec::new(),
        hi_reports: Vec::new(),
        evaluations: 0,
        unbounded_suspected: false,
    };
    let probe = |k: f64, est: &mut CriticalValueEstimate| -> Result<bool> {
        match find_negative_action_loop(l, k, region, &budget.witness) {
            Ok(lp) => {
                est.lo_witnesses.push(certified_witness(l, k, lp)?);
                est.evaluations += 1;
                Ok(true)
            }
            Err(FpError::WitnessNotFound { evaluations }) => {
                est.hi_reports.push(HiReport { k, evaluations });
                est.evaluations += evaluations;
                Ok(false)
            }
            Err(e) => Err(e),
        }
    };

    if probe(hi, &mut est)? {
        est.unbounded_suspected = true;
        est.value = hi;
        est.bracket = (hi, hi);
        return Ok(est);
    }
    if !probe(lo, &mut est)? {
        // No witness even at the bottom: c_u <= lo at this resolution.
        est.value = lo;
        est.bracket = (lo, lo);
        return Ok(est);
    }
    for _ in 0..budget.bisections {
        if hi - lo <= budget.tolerance {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if probe(mid, &mut est)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    est.bracket = (lo, hi);
    est.value = 0.5 * (lo + hi);
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn flux_form(b: f64) -> OneForm {
        OneForm::parse(
            &[format!("-{}*x2", 0.5 * b), format!("{}*x1", 0.5 * b)],
            &["x1", "x2"],
        )
        .unwrap()
    }

    fn small_budget() -> CuBudget {
        CuBudget {
            bisections: 16,
            tolerance: 0.02,
            witness: WitnessBudget {
                probe_points: 256,
                circle_centers: 2,
                circle_radii: 6,
                descent_starts: 1,
                flow_time: 2.0,
                n_samples: 16,
                seed: 11,
            },
        }
    }

    #[test]
    fn mu_flat_unit_field_is_half() {
        // dtheta = B dx^1 wedge dx^2 with B = 1: operator norm 1, flat
        // metric distortion 1, so mu = 1/2 exactly. The planar
        // isoperimetric oracle needs only 1/(4 pi), so the audit holds
        // with a factor 2 pi to spare.
        let m = Manifold::euclidean(2);
        let ball = ChartBall::new(vec![0.0, 0.0], 1.0).unwrap();
        let mu = estimate_mu(&m, &flux_form(1.0), &ball).unwrap();
        assert!((mu - 0.5).abs() < 1e-12, "mu = {mu}");
        assert!(mu > 1.0 / (4.0 * std::f64::consts::PI));
    }

    #[test]
    fn mu_scales_with_metric_distortion() {
        // Metric 4 I doubles lengths, so the constant in mu l(gamma)^2
        // must drop by 4: mu = 1/2 * 1 * (1/4).
        let m = Manifold::chart_with_metric(
            &["x1", "x2"],
            &[None, None],
            &[
                "4".to_string(),
                "0".to_string(),
                "0".to_string(),
                "4".to_string(),
            ],
        )
        .unwrap();
        let ball = ChartBall::new(vec![0.0, 0.0], 1.0).unwrap();
        let mu = estimate_mu(&m, &flux_form(1.0), &ball).unwrap();
        assert!((mu - 0.125).abs() < 1e-12, "mu = {mu}");
    }

    #[test]
    fn mu_closed_form_hits_floor() {
        // theta = d(x1^2 + x2^2) is exact: dtheta = 0, integrals vanish
        // (Stokes), and the estimator returns the floor.
        let m = Manifold::euclidean(2);
        let theta =
            OneForm::parse(&["2*x1".to_string(), "2*x2".to_string()], &["x1", "x2"]).unwrap();
        let ball = ChartBall::new(vec![0.3, -0.2], 2.0).unwrap();
        let mu = estimate_mu(&m, &theta, &ball).unwrap();
        assert_eq!(mu, MU_FLOOR);
    }

    #[test]
    fn mu_rejects_bad_balls() {
        let torus = Manifold::flat_torus(&[1.0, 1.0]).unwrap();
        let big = ChartBall::new(vec![0.5, 0.5], 0.6).unwrap();
        assert!(estimate_mu(&torus, &flux_form(1.0), &big).is_err());
        let sphere = Manifold::unit_sphere();
        let ball = ChartBall::new(vec![0.0, 0.0, 0.0], 0.5).unwrap();
        let theta3 = OneForm::parse(
            &["0".to_string(), "0".to_string(), "0".to_string()],
            &["x1", "x2", "x3"],
        )
        .unwrap();
        assert!(estimate_mu(&sphere, &theta3, &ball).is_err());
        assert!(ChartBall::new(vec![0.0], -1.0).is_err());
    }

    #[test]
    fn grid_cover_lebesgue_number_certifies() {
        let region = ChartBox::centered(2, 2.0);
        let cover = grid_ball_cover(&region, 4, 1.5).unwrap();
        assert_eq!(cover.balls.len(), 16);
        let half_diag = 0.5f64 * (1.0f64 + 1.0f64).sqrt();
        assert!((cover.lebesgue_delta - 0.5 * half_diag).abs() < 1e-15);
        // Any pair within delta of each other shares a ball.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let p = [
                -2.0 + 4.0 * rng.gen::<f64>(),
                -2.0 + 4.0 * rng.gen::<f64>(),
            ];
            let ang = std::f64::consts::TAU * rng.gen::<f64>();
            let r = cover.lebesgue_delta * rng.gen::<f64>();
            let q = [p[0] + r * ang.cos(), p[1] + r * ang.sin()];
            if !region.contains(&q) {
                continue;
            }
            assert!(
                cover
                    .balls
                    .iter()
                    .any(|b| b.contains(&p) && b.contains(&q)),
                "pair {:?} {:?} not covered",
                p,
                q
            );
        }
        assert!(grid_ball_cover(&region, 0, 1.5).is_err());
        assert!(grid_ball_cover(&region, 4, 1.0).is_err());
    }

    #[test]
    fn cu_pure_kinetic_brackets_zero() {
        let plane = Arc::new(Manifold::euclidean(2));
        let l = Lagrangian::pure_kinetic(plane);
        let region = ChartBox::centered(2, 3.0);
        let est = estimate_cu(&l, &region, (-1.0, 1.0), &small_budget()).unwrap();
        assert!(!est.unbounded_suspected);
        let (lo, hi) = est.bracket;
        assert!(lo < 0.0 && hi >= 0.0, "bracket ({lo}, {hi})");
        assert!(hi - lo <= 0.02 + 1e-15);
        assert!(est.value.abs() <= 0.02);
        assert!(!est.lo_witnesses.is_empty() && !est.hi_reports.is_empty());
    }

    #[test]
    fn cu_torus_potential_brackets_one() {
        // V = -cos(2 pi x1): L + k >= k - 1 pointwise, so no witness
        // above 1; constant loops in the well certify every k < 1.
        let m = Arc::new(Manifold::flat_torus(&[1.0, 1.0]).unwrap());
        let v = crate::expr::ScalarField::parse("-cos(2*pi*x1)", &["x1", "x2"]).unwrap();
        let l = Lagrangian::electromagnetic(m, None, Some(v)).unwrap();
        let region = ChartBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let est = estimate_cu(&l, &region, (0.0, 2.0), &small_budget()).unwrap();
        assert!(!est.unbounded_suspected);
        assert!(
            (est.value - 1.0).abs() < 0.05,
            "value {} bracket {:?}",
            est.value,
            est.bracket
        );
        // Bracket invariant and witness certification.
        let (lo, hi) = est.bracket;
        assert!(lo <= est.value && est.value <= hi);
        for w in &est.lo_witnesses {
            assert!(w.action < 0.0);
            assert!((action(&l, w.k, &w.lp).unwrap() - w.action).abs() < 1e-15);
        }
    }

    #[test]
    fn cu_magnetic_plane_unbounded() {
        let plane = Arc::new(Manifold::euclidean(2));
        let l = Lagrangian::electromagnetic(plane, Some(flux_form(1.0)), None).unwrap();
        let region = ChartBox::centered(2, 12.0);
        let mut budget = small_budget();
        budget.witness.n_samples = 32;
        let est = estimate_cu(&l, &region, (0.2, 10.0), &budget).unwrap();
        assert!(est.unbounded_suspected);
        assert_eq!(est.bracket, (10.0, 10.0));
        assert_eq!(est.value, 10.0);
        let top = est.lo_witnesses.last().unwrap();
        assert_eq!(top.k, 10.0);
        assert!(top.action < 0.0);
    }

    #[test]
    fn cu_rejects_bad_bracket() {
        let plane = Arc::new(Manifold::euclidean(2));
        let l = Lagrangian::pure_kinetic(plane);
        let region = ChartBox::centered(2, 1.0);
        assert!(estimate_cu(&l, &region, (1.0, 1.0), &small_budget()).is_err());
        assert!(estimate_cu(&l, &region, (0.0, f64::INFINITY), &small_budget()).is_err());
    }
}
