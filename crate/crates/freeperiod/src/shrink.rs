//! Shrinking structures: radial retractions of a noncompact chart
//! factor, the induced loop pushback, and numerical verification of the
//! defining inequality `L(phi(x), dphi_x v) <= L(x, v)`.
//!
//! The built-in maps act on the non-periodic coordinates of a chart
//! (the Euclidean factor) as `x -> f(|x|) x / |x|`, where the profile
//! `f` is the identity on `[0, r0]`, has derivative easing from 1 down
//! to a constant slope `s_inf` in `(0, 1)` across `[r0, r1]`, and is
//! affine beyond. Such maps are 1-Lipschitz, fix a core ball, compress
//! the collar `r0 < r <= r2` and are smoothly homotopic to the identity
//! through profiles, which is exactly the structure the confinement
//! arguments need: pushing a loop back cannot raise its action when the
//! inequality holds along it.

use crate::geometry::{ChartBox, Manifold};
use crate::lagrangian::{smoothstep, Lagrangian};
use crate::loopspace::Loop;
use crate::{FpError, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Piecewise profile: identity, quintic-eased slope drop, then affine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
    /// Terminal slope, in (0, 1).
    pub s_inf: f64,
}

/// Integral of the quintic smoothstep on [0, t].
fn smoothstep_integral(t: f64) -> f64 {
    let t4 = t * t * t * t;
    t4 * (2.5 + t * (-3.0 + t))
}

impl RadialProfile {
    pub fn new(r0: f64, r1: f64, r2: f64, s_inf: f64) -> Result<Self> {
        if !(0.0 < r0 && r0 < r1 && r1 < r2) {
            return Err(FpError::Contract(format!(
                "shrink radii must satisfy 0 < r0 < r1 < r2, got ({r0}, {r1}, {r2})"
            )));
        }
        if !(0.0 < s_inf && s_inf < 1.0) {
            return Err(FpError::Contract(format!(
                "terminal slope must lie in (0, 1), got {s_inf}"
            )));
        }
        Ok(RadialProfile { r0, r1, r2, s_inf })
    }

    /// f(r): identity on [0, r0], eased on [r0, r1], slope s_inf after.
    pub fn value(&self, r: f64) -> f64 {
        if r <= self.r0 {
            return r;
        }
        let w = self.r1 - self.r0;
        if r <= self.r1 {
            let t = (r - self.r0) / w;
            // r0 + w (t + (s_inf - 1) * integral of the ease) <= r:
            // the correction term is nonpositive, so f never exceeds r.
            self.r0 + w * (t + (self.s_inf - 1.0) * smoothstep_integral(t))
        } else {
            let f1 = self.r0 + w * (1.0 + (self.s_inf - 1.0) * 0.5);
            f1 + self.s_inf * (r - self.r1)
        }
    }

    /// f'(r), in [s_inf, 1] everywhere.
    pub fn deriv(&self, r: f64) -> f64 {
        if r <= self.r0 {
            1.0
        } else if r <= self.r1 {
            1.0 + (self.s_inf - 1.0) * smoothstep((r - self.r0) / (self.r1 - self.r0))
        } else {
            self.s_inf
        }
    }

    /// Collar width of the construction: r2 - f(r2) > 0.
    pub fn epsilon(&self) -> f64 {
        self.r2 - self.value(self.r2)
    }
}

/// A verified-or-verifiable shrink structure on a chart manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkMap {
    pub profile: RadialProfile,
    /// Chart coordinates forming the Euclidean factor the map acts on.
    pub radial_coords: Vec<usize>,
    /// Compact core: image box of the domain (radial extent f(r2),
    /// periodic coordinates one full period).
    pub k0: ChartBox,
    /// r2 - f(r2), the collar the map frees up around the core.
    pub epsilon: f64,
    /// Radial profiles are homotopic to the identity through profiles.
    pub homotopic: bool,
}

/// Builds the radial shrink map on the Euclidean factor of a chart:
/// every non-periodic coordinate is part of the factor. The domain K is
/// the radial ball of radius r2 (times the compact factor).
pub fn build_radial_shrink(
    m: &Manifold,
    r0: f64,
    r1: f64,
    r2: f64,
    s_inf: f64,
) -> Result<ShrinkMap> {
    if m.is_embedded() {
        return Err(FpError::Geometry(
            "embedded manifolds are compact: no radial factor to shrink".into(),
        ));
    }
    let profile = RadialProfile::new(r0, r1, r2, s_inf)?;
    let periods = m.periods();
    let radial_coords: Vec<usize> = (0..m.dim())
        .filter(|i| periods[*i].is_none())
        .collect();
    if radial_coords.is_empty() {
        return Err(FpError::Geometry(
            "manifold has no non-periodic coordinates: no radial factor to shrink".into(),
        ));
    }
    let fr2 = profile.value(r2);
    let mut lo = Vec::with_capacity(m.dim());
    let mut hi = Vec::with_capacity(m.dim());
    for i in 0..m.dim() {
        match periods[i] {
            Some(p) => {
                lo.push(0.0);
                hi.push(p);
            }
            None => {
                lo.push(-fr2);
                hi.push(fr2);
            }
        }
    }
    Ok(ShrinkMap {
        profile,
        radial_coords,
        k0: ChartBox::new(lo, hi)?,
        epsilon: profile.epsilon(),
        homotopic: true,
    })
}

impl ShrinkMap {
    pub fn radial_norm(&self, x: &[f64]) -> f64 {
        self.radial_coords
            .iter()
            .map(|&i| x[i] * x[i])
            .sum::<f64>()
            .sqrt()
    }

    /// Whether x lies in the domain K = { radial norm <= r2 }.
    pub fn domain_contains(&self, x: &[f64]) -> bool {
        self.radial_norm(x) <= self.profile.r2 * (1.0 + 1e-12)
    }

    /// phi(x): scales the radial factor by f(r)/r, identity elsewhere.
    /// Exact identity (bitwise) on the core r <= r0.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
        let r = self.radial_norm(x);
        if r <= self.profile.r0 {
            return;
        }
        let scale = self.profile.value(r) / r;
        for &i in &self.radial_coords {
            out[i] = scale * x[i];
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }

    /// Analytic differential of phi at x (dim x dim matrix): on the
    /// radial factor `(f/r) (I - u u^T) + f'(r) u u^T`, identity on the
    /// rest.
    pub fn dphi(&self, x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        let mut j = DMatrix::identity(d, d);
        let r = self.radial_norm(x);
        if r <= self.profile.r0 {
            return j;
        }
        let fr = self.profile.value(r) / r;
        let fp = self.profile.deriv(r);
        for &a in &self.radial_coords {
            for &b in &self.radial_coords {
                let uu = x[a] * x[b] / (r * r);
                j[(a, b)] = if a == b { fr } else { 0.0 } + (fp - fr) * uu;
            }
        }
        j
    }
}

/// One tangent sample for the inequality check.
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkSample {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

/// Outcome of a sampled verification of `phi^* L <= L`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkReport {
    pub samples_checked: usize,
    /// max over samples of L(phi x, dphi v) - L(x, v).
    pub max_violation: f64,
    pub worst: Option<ShrinkSample>,
    /// Round-off allowance used by `verified`.
    pub tolerance: f64,
}

impl ShrinkReport {
    pub fn verified(&self) -> bool {
        self.max_violation <= self.tolerance
    }
}

/// Deterministic quasi-random cloud in TK: positions fill the radial
/// ball of radius r2 (times one period of each compact coordinate),
/// velocities sweep directions and magnitudes up to vmax. The sequence
/// is prefix-stable: more samples extend, never reshuffle.
pub fn sample_tk(s: &ShrinkMap, m: &Manifold, count: usize, vmax: f64) -> Vec<ShrinkSample> {
    let d = m.dim();
    let periods = m.periods();
    let mut lo = Vec::with_capacity(d);
    let mut hi = Vec::with_capacity(d);
    for i in 0..d {
        match periods[i] {
            Some(p) => {
                lo.push(0.0);
                hi.push(p);
            }
            None => {
                lo.push(-s.profile.r2);
                hi.push(s.profile.r2);
            }
        }
    }
    let xbox = ChartBox::new(lo, hi).expect("valid sampling box");
    let vbox = ChartBox::centered(d, 1.0);
    let mut out = Vec::with_capacity(count);
    let mut idx = 0usize;
    while out.len() < count {
        let x = xbox.quasi_point(idx);
        idx += 1;
        if !s.domain_contains(&x) {
            continue;
        }
        // Velocity from an interleaved low-discrepancy stream; scale to
        // a magnitude ramp so small and near-vmax speeds both occur.
        let vdir = vbox.quasi_point(idx.wrapping_mul(7) + 3);
        let norm = vdir.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-9);
        let mag = vmax * ((out.len() % 97) as f64 + 1.0) / 97.0;
        let v = vdir.iter().map(|c| c * mag / norm).collect();
        out.push(ShrinkSample { x, v });
    }
    out
}

/// Evaluates the defining inequality on a sample cloud with the
/// analytic differential of the profile map. Nonpositive max violation
/// (up to the reported round-off tolerance) means the structure is
/// verified on the cloud.
pub fn verify_shrink_inequality(
    s: &ShrinkMap,
    l: &Lagrangian,
    samples: &[ShrinkSample],
) -> Result<ShrinkReport> {
    let mut worst: Option<ShrinkSample> = None;
    let mut max_violation = f64::NEG_INFINITY;
    let mut phix = vec![0.0; l.manifold().coord_dim()];
    for sample in samples {
        if !s.domain_contains(&sample.x) {
            return Err(FpError::Geometry(format!(
                "shrink verification sample outside the domain: radial norm {:.6} > r2 = {}",
                s.radial_norm(&sample.x),
                s.profile.r2
            )));
        }
        let rhs = l.eval_l(&sample.x, &sample.v)?;
        s.apply_into(&sample.x, &mut phix);
        let j = s.dphi(&sample.x);
        let mut dv = vec![0.0; sample.v.len()];
        for r in 0..dv.len() {
            let mut acc = 0.0;
            for c in 0..sample.v.len() {
                acc += j[(r, c)] * sample.v[c];
            }
            dv[r] = acc;
        }
        let lhs = l.eval_l(&phix, &dv)?;
        let violation = lhs - rhs;
        if violation > max_violation {
            max_violation = violation;
            worst = Some(sample.clone());
        }
    }
    Ok(ShrinkReport {
        samples_checked: samples.len(),
        max_violation: if samples.is_empty() { 0.0 } else { max_violation },
        worst,
        tolerance: 1e-12,
    })
}

/// Pushes a loop back into the core: phi applied samplewise, period and
/// winding untouched (the map is the identity on periodic coordinates).
pub fn pushback(s: &ShrinkMap, lp: &Loop) -> Result<Loop> {
    let mut out = lp.clone();
    let mut phix = vec![0.0; lp.dim()];
    for i in 0..lp.n() {
        let x = lp.sample(i);
        if !s.domain_contains(x) {
            return Err(FpError::Geometry(format!(
                "pushback: loop sample {} outside the shrink domain (radial norm {:.6} > r2 = {})",
                i,
                s.radial_norm(x),
                s.profile.r2
            )));
        }
        s.apply_into(x, &mut phix);
        out.sample_mut(i).copy_from_slice(&phix);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loopspace::action;
    use crate::lagrangian::OneForm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn example_profile() -> RadialProfile {
        RadialProfile::new(1.0, 2.0, 4.0, 0.5).unwrap()
    }

    #[test]
    fn profile_example_values() {
        let f = example_profile();
        assert_eq!(f.value(0.5), 0.5);
        assert_eq!(f.value(1.0), 1.0);
        // f(r1) = r0 + w (1 + (s_inf - 1)/2) = 1 + 0.75.
        assert!((f.value(2.0) - 1.75).abs() < 1e-15);
        assert!((f.value(4.0) - 2.75).abs() < 1e-15);
        assert!((f.epsilon() - 1.25).abs() < 1e-15);
        assert!(f.epsilon() > 0.0);
    }

    #[test]
    fn profile_slope_in_unit_interval() {
        let f = example_profile();
        let mut prev_val = 0.0;
        for i in 0..=1000 {
            let r = 10.0 * i as f64 / 1000.0;
            let d = f.deriv(r);
            assert!(d > 0.0 && d <= 1.0, "f'({r}) = {d}");
            let v = f.value(r);
            assert!(v <= r + 1e-15, "f({r}) = {v} exceeds r");
            assert!(v >= prev_val, "profile not monotone at {r}");
            prev_val = v;
        }
        // Terminal slope reached.
        assert_eq!(f.deriv(2.0), 0.5);
        assert_eq!(f.deriv(7.0), 0.5);
        // Derivative consistent with finite differences across the ramp.
        for r in [1.1, 1.5, 1.9, 2.5] {
            let h = 1e-6;
            let fd = (f.value(r + h) - f.value(r - h)) / (2.0 * h);
            assert!((fd - f.deriv(r)).abs() < 1e-9, "f' mismatch at {r}");
        }
    }

    #[test]
    fn profile_rejects_bad_parameters() {
        assert!(RadialProfile::new(2.0, 1.0, 4.0, 0.5).is_err());
        assert!(RadialProfile::new(1.0, 2.0, 2.0, 0.5).is_err());
        assert!(RadialProfile::new(1.0, 2.0, 4.0, 1.0).is_err());
        assert!(RadialProfile::new(1.0, 2.0, 4.0, 0.0).is_err());
    }

    #[test]
    fn build_targets_nonperiodic_coordinates() {
        let cyl = Manifold::cylinder("1 + r^2").unwrap();
        let s = build_radial_shrink(&cyl, 1.0, 2.0, 4.0, 0.5).unwrap();
        assert_eq!(s.radial_coords, vec![0]);
        assert!(s.homotopic);
        assert!((s.epsilon - 1.25).abs() < 1e-15);
        let plane = Manifold::euclidean(2);
        let s = build_radial_shrink(&plane, 1.0, 2.0, 4.0, 0.5).unwrap();
        assert_eq!(s.radial_coords, vec![0, 1]);
        let torus = Manifold::flat_torus(&[1.0, 1.0]).unwrap();
        assert!(build_radial_shrink(&torus, 1.0, 2.0, 4.0, 0.5).is_err());
        assert!(build_radial_shrink(&Manifold::unit_sphere(), 1.0, 2.0, 4.0, 0.5).is_err());
    }

    #[test]
    fn image_lands_in_core() {
        let plane = Manifold::euclidean(2);
        let s = build_radial_shrink(&plane, 1.0, 2.0, 4.0, 0.5).unwrap();
        let fr2 = s.profile.value(4.0);
        let box_k = ChartBox::centered(2, 4.0);
        let mut inside = 0usize;
        let mut idx = 0usize;
        while inside < 10_000 {
            let x = box_k.quasi_point(idx);
            idx += 1;
            if !s.domain_contains(&x) {
                continue;
            }
            inside += 1;
            let y = s.apply(&x);
            let ry = (y[0] * y[0] + y[1] * y[1]).sqrt();
            assert!(ry <= fr2 * (1.0 + 1e-12), "image radius {ry} > {fr2}");
            assert!(s.k0.contains(&y));
        }
    }

    #[test]
    fn identity_zone_is_bitwise_identity() {
        let plane = Manifold::euclidean(2);
        let s = build_radial_shrink(&plane, 1.0, 2.0, 4.0, 0.5).unwrap();
        let x = [0.3, -0.7];
        assert_eq!(s.apply(&x), vec![0.3, -0.7]);
        let j = s.dphi(&x);
        assert!(j.is_identity(0.0));
    }

    #[test]
    fn warped_cylinder_kinetic_verifies() {
        // Pure kinetic energy on the warped cylinder with increasing
        // even beta: the profile map cannot increase either velocity
        // component, so the inequality holds samplewise.
        let cyl = Arc::new(Manifold::cylinder("1 + r^2").unwrap());
        let l = Lagrangian::pure_kinetic(cyl.clone());
        let s = build_radial_shrink(&cyl, 1.0, 2.0, 4.0, 0.5).unwrap();
        let cloud = sample_tk(&s, &cyl, 10_000, 5.0);
        assert_eq!(cloud.len(), 10_000);
        let report = verify_shrink_inequality(&s, &l, &cloud).unwrap();
        assert!(
            report.verified(),
            "max violation {:.3e}",
            report.max_violation
        );
        assert!(report.max_violation <= 1e-12);
    }

    #[test]
    fn plane_kinetic_verifies() {
        let plane = Arc::new(Manifold::euclidean(2));
        let l = Lagrangian::pure_kinetic(plane.clone());
        let s = build_radial_shrink(&plane, 1.0, 2.0, 4.0, 0.5).unwrap();
        let cloud = sample_tk(&s, &plane, 10_000, 5.0);
        let report = verify_shrink_inequality(&s, &l, &cloud).unwrap();
        assert!(report.verified(), "max violation {:.3e}", report.max_violation);
    }

    #[test]
    fn magnetic_plane_violations_reported() {
        // The theta term scales by (f/r)^2 under the map while the
        // kinetic part scales quadratically too, so angular velocities
        // with theta contribution of the right sign raise the pulled-
        // back value: at x = (3, 0), v = (0, -1) with B = 1,
        //   lhs - rhs = (1 - (f/r)^2) (B r |v| / 2 - |v|^2 / 2) > 0.
        let plane = Arc::new(Manifold::euclidean(2));
        let theta = OneForm::parse(
            &["-0.5*x2".to_string(), "0.5*x1".to_string()],
            &["x1", "x2"],
        )
        .unwrap();
        let l = Lagrangian::electromagnetic(plane.clone(), Some(theta), None).unwrap();
        let s = build_radial_shrink(&plane, 1.0, 2.0, 4.0, 0.5).unwrap();
        // Crafted sample with the closed-form violation.
        let crafted = ShrinkSample {
            x: vec![3.0, 0.0],
            v: vec![0.0, -1.0],
        };
        let report = verify_shrink_inequality(&s, &l, &[crafted]).unwrap();
        let fr = s.profile.value(3.0) / 3.0;
        let expected = (1.0 - fr * fr) * (0.5 * 3.0 - 0.5);
        assert!(
            (report.max_violation - expected).abs() < 1e-12,
            "violation {} vs closed form {}",
            report.max_violation,
            expected
        );
        assert!(report.max_violation > 0.1);
        assert!(!report.verified());
        assert!(report.worst.is_some());
        // And a generic cloud also finds violations.
        let cloud = sample_tk(&s, &plane, 4000, 3.0);
        let report = verify_shrink_inequality(&s, &l, &cloud).unwrap();
        assert!(report.max_violation > 0.0);
    }

    #[test]
    fn sample_outside_domain_is_an_error() {
        let plane = Arc::new(Manifold::euclidean(2));
        let l = Lagrangian::pure_kinetic(plane.clone());
        let s = build_radial_shrink(&plane, 1.0, 2.0, 4.0, 0.5).unwrap();
        let bad = ShrinkSample {
            x: vec![5.0, 0.0],
            v: vec![0.0, 0.0],
        };
        assert!(verify_shrink_inequality(&s, &l, &[bad]).is_err());
    }

    #[test]
    fn pushback_identity_zone_and_period() {
        let cyl = Manifold::cylinder("1 + r^2").unwrap();
        let s = build_radial_shrink(&cyl, 1.0, 2.0, 4.0, 0.5).unwrap();
        // Winding-1 loop at r = 0.4: fully in the identity zone.
        let n = 16;
        let mut samples = Vec::new();
        for i in 0..n {
            samples.push(0.4 * (std::f64::consts::TAU * i as f64 / n as f64).cos());
            samples.push(std::f64::consts::TAU * i as f64 / n as f64);
        }
        let lp = Loop::new(n, 2, 1.7, vec![0, 1], samples).unwrap();
        let out = pushback(&s, &lp).unwrap();
        assert_eq!(out, lp);
        // A loop reaching into the collar moves but keeps period/winding.
        let mut far = lp.clone();
        for i in 0..n {
            far.sample_mut(i)[0] += 2.5;
        }
        let out = pushback(&s, &far).unwrap();
        assert_eq!(out.period(), far.period());
        assert_eq!(out.winding(), far.winding());
        assert!(out.sample(0)[0] < far.sample(0)[0]);
        // Outside the domain: error.
        let mut outside = lp.clone();
        outside.sample_mut(0)[0] = 4.5;
        assert!(pushback(&s, &outside).is_err());
    }

    #[test]
    fn pushback_never_increases_action_on_verified_systems() {
        // Plane and warped cylinder, pure kinetic: the discrete chord
        // action cannot grow because the map is 1-Lipschitz and odd, so
        // midpoint weights only shrink. 100 random loops, slack 1e-12.
        let cases: Vec<(Arc<Manifold>, Vec<i64>)> = vec![
            (Arc::new(Manifold::euclidean(2)), vec![0, 0]),
            (Arc::new(Manifold::cylinder("1 + r^2").unwrap()), vec![0, 1]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for (m, winding) in cases {
            let l = Lagrangian::pure_kinetic(m.clone());
            let s = build_radial_shrink(&m, 1.0, 2.0, 4.0, 0.5).unwrap();
            for _ in 0..100 {
                let n = 16;
                let mut samples = Vec::new();
                for i in 0..n {
                    let ang = std::f64::consts::TAU * i as f64 / n as f64;
                    // Radial excursions reaching well into the collar.
                    let radial = 3.5 * (rng.gen::<f64>() - 0.5) * 2.0;
                    match winding[1] {
                        1 => {
                            samples.push((radial).clamp(-3.9, 3.9) + 0.3 * ang.sin());
                            samples.push(ang);
                        }
                        _ => {
                            let rho = 0.2 + 3.6 * rng.gen::<f64>();
                            samples.push(rho * ang.cos() + 0.2 * (rng.gen::<f64>() - 0.5));
                            samples.push(rho * ang.sin() + 0.2 * (rng.gen::<f64>() - 0.5));
                        }
                    }
                }
                let Ok(lp) = Loop::new(n, 2, 0.5 + 2.0 * rng.gen::<f64>(), winding.clone(), samples)
                else {
                    continue;
                };
                if (0..n).any(|i| !s.domain_contains(lp.sample(i))) {
                    continue;
                }
                let pushed = pushback(&s, &lp).unwrap();
                let before = action(&l, 0.7, &lp).unwrap();
                let after = action(&l, 0.7, &pushed).unwrap();
                assert!(
                    after <= before + 1e-12,
                    "pushback raised action: {before} -> {after}"
                );
            }
        }
    }
}
