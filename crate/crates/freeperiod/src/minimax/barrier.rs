//! Mountain-pass barrier: a certified level a > 0 that every admissible
//! path from a constant loop to a negative-action loop must cross.
//! Mechanism: a loop of metric length l inside one cover ball satisfies
//! S_k >= sqrt(2 A1 (k - e0)) l - mu l^2 (kinetic term vs. flux term),
//! and paths leaving the ball have length >= the Lebesgue number.

use crate::critvals::{estimate_mu, BallCover, MU_FLOOR};
use crate::geometry::ChartBox;
use crate::lagrangian::Lagrangian;
use crate::{FpError, Result};
use serde::{Deserialize, Serialize};

/// Certified barrier data. `mu` is the max of the per-ball constants
/// (any single ball's constant must bound the loop that happens to sit
/// in it, so the max is the safe certifying choice); `mu_inf` records
/// the smallest per-ball constant for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierEstimate {
    pub k: f64,
    /// Fiberwise convexity floor (smallest metric eigenvalue on K).
    pub a1: f64,
    /// Max of E(x, 0) = -L(x, 0) over K.
    pub e0: f64,
    /// Certifying isoperimetric constant: max over the cover's balls.
    pub mu: f64,
    /// Smallest per-ball constant, recorded but not used to certify.
    pub mu_inf: f64,
    pub lebesgue_delta: f64,
    /// Critical length scale: min(delta, sqrt(A1 (k - e0)) / (sqrt2 mu)).
    pub r: f64,
    /// Barrier level: sqrt(2 A1 (k - e0)) r - mu r^2, positive for k > e0.
    pub a: f64,
}

/// Number of quasi-random points for the e0 sup.
const E0_SAMPLES: usize = 4096;

/// Velocity box used only to key the growth-constant scan; a1 itself
/// is a pure metric quantity and does not depend on it.
const A1_VMAX: f64 = 1.0;

pub fn barrier(
    l: &Lagrangian,
    k: f64,
    region: &ChartBox,
    cover: &BallCover,
) -> Result<BarrierEstimate> {
    if cover.balls.is_empty() {
        return Err(FpError::Contract("ball cover is empty".into()));
    }
    let e0 = l.e0_estimate(region, E0_SAMPLES)?;
    if !(k > e0) {
        return Err(FpError::Contract(format!(
            "barrier needs k > e0; got k = {k}, e0 = {e0}"
        )));
    }
    let a1 = l.estimate_growth_constants(region, A1_VMAX)?.a1;
    let (mut mu, mut mu_inf) = (f64::NEG_INFINITY, f64::INFINITY);
    if let Some(theta) = l.theta() {
        for ball in &cover.balls {
            let m = estimate_mu(l.manifold(), theta, ball)?;
            mu = mu.max(m);
            mu_inf = mu_inf.min(m);
        }
    } else {
        // Vanishing 1-form: the constant may be taken arbitrarily
        // small; floor it so the formulas below stay finite.
        mu = MU_FLOOR;
        mu_inf = MU_FLOOR;
    }
    let gap = a1 * (k - e0);
    let r = cover
        .lebesgue_delta
        .min(gap.sqrt() / (std::f64::consts::SQRT_2 * mu));
    let a = (2.0 * gap).sqrt() * r - mu * r * r;
    if !(a > 0.0) {
        return Err(FpError::Contract(format!(
            "barrier level came out nonpositive (a = {a}) despite k > e0; \
             degenerate region or cover"
        )));
    }
    Ok(BarrierEstimate {
        k,
        a1,
        e0,
        mu,
        mu_inf,
        lebesgue_delta: cover.lebesgue_delta,
        r,
        a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critvals::grid_ball_cover;
    use crate::geometry::Manifold;
    use crate::lagrangian::OneForm;
    use std::sync::Arc;

    fn magnetic_plane(b: f64) -> Lagrangian {
        let theta = OneForm::parse(
            &[format!("-{}*x2", 0.5 * b), format!("{}*x1", 0.5 * b)],
            &["x1", "x2"],
        )
        .unwrap();
        Lagrangian::electromagnetic(Arc::new(Manifold::euclidean(2)), Some(theta), None).unwrap()
    }

    #[test]
    fn magnetic_plane_barrier_closed_form() {
        // Every input is exact here: A1 = 1 (flat metric), e0 = 0 (no
        // potential), mu = 1/2 (B = 1), delta = 0.5 * half-diagonal of
        // the single cell = sqrt(2) > 1. So r = sqrt(0.5)/(sqrt2*0.5)
        // = 1 and a = sqrt(2*0.5)*1 - 0.5 = 0.5 = k.
        let l = magnetic_plane(1.0);
        let region = ChartBox::centered(2, 2.0);
        let cover = grid_ball_cover(&region, 1, 1.5).unwrap();
        let est = barrier(&l, 0.5, &region, &cover).unwrap();
        assert!((est.a1 - 1.0).abs() < 1e-12);
        assert_eq!(est.e0, 0.0);
        assert!((est.mu - 0.5).abs() < 1e-12);
        assert!((est.mu_inf - 0.5).abs() < 1e-12);
        assert!((est.lebesgue_delta - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!((est.r - 1.0).abs() < 1e-12, "r = {}", est.r);
        assert!((est.a - 0.5).abs() < 1e-12, "a = {}", est.a);
    }

    #[test]
    fn vanishing_form_floors_mu_and_uses_delta() {
        let l = Lagrangian::pure_kinetic(Arc::new(Manifold::euclidean(2)));
        let region = ChartBox::centered(2, 1.0);
        let cover = grid_ball_cover(&region, 2, 1.25).unwrap();
        let k = 0.5;
        let est = barrier(&l, k, &region, &cover).unwrap();
        assert_eq!(est.mu, MU_FLOOR);
        assert_eq!(est.r, cover.lebesgue_delta);
        let expect = (2.0 * k).sqrt() * est.r - MU_FLOOR * est.r * est.r;
        assert!((est.a - expect).abs() < 1e-15);
        assert!(est.a > 0.0);
    }

    #[test]
    fn rejects_subcritical_energy() {
        let l = magnetic_plane(1.0);
        let region = ChartBox::centered(2, 2.0);
        let cover = grid_ball_cover(&region, 1, 1.5).unwrap();
        assert!(barrier(&l, 0.0, &region, &cover).is_err());
        assert!(barrier(&l, -1.0, &region, &cover).is_err());
    }

    #[test]
    fn barrier_positive_and_monotone_structure() {
        // a > 0 for every k > e0, and mu_inf <= mu always. With more
        // cells the Lebesgue number shrinks, never the other way.
        let l = magnetic_plane(2.0);
        let region = ChartBox::centered(2, 3.0);
        let coarse = grid_ball_cover(&region, 2, 1.4).unwrap();
        let fine = grid_ball_cover(&region, 6, 1.4).unwrap();
        for &k in &[0.05, 0.3, 1.0, 4.0] {
            let e = barrier(&l, k, &region, &coarse).unwrap();
            assert!(e.a > 0.0, "k = {k}: a = {}", e.a);
            assert!(e.mu_inf <= e.mu);
            assert!(e.r <= e.lebesgue_delta + 1e-15);
        }
        assert!(fine.lebesgue_delta < coarse.lebesgue_delta);
    }
}
