//! Minimization of the free-period action within a fixed winding class.
//! On a chart with periodic coordinates the class is pinned by the
//! loop's winding vector, which every deformation preserves, so the
//! class length infimum is positive and descent cannot collapse the
//! period. Descent may instead slide the whole loop off to infinity in
//! the non-periodic coordinates; that drift is a valid outcome (the
//! non-existence signature on cylinders whose waist recedes forever)
//! and is reported rather than treated as a failure.

use crate::gradientflow::{evolve, FlowConfig, FlowVerdict, PSRecord, PSRow};
use crate::lagrangian::Lagrangian;
use crate::loopspace::{action, length, loop_set_distance, Loop};
use crate::minimax::pass::{grad_state, polish_to_critical};
use crate::minimax::{MinimaxResult, MinimaxTols};
use crate::verify::{certify, CertTolerances, Method};
use crate::{FpError, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Work limits for one class minimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMinBudget {
    /// Descent starts: the seed plus perturbed copies.
    pub starts: usize,
    /// Fourier-mode amplitude of the perturbed starts.
    pub perturbation: f64,
    /// Flow/snap rounds per start.
    pub rounds: usize,
    /// Rescaled-flow duration per round.
    pub flow_time: f64,
    /// Initial flow step.
    pub flow_step: f64,
    /// Residual-polish iteration cap.
    pub polish_iters: usize,
    /// Admissible period window (d1, d2) for a converged minimizer.
    pub period_window: (f64, f64),
    /// Drift declaration: every sample's non-periodic coordinates beyond
    /// this radius means the loop escaped every bounded region.
    pub escape_radius: f64,
    /// Seed for the perturbed starts.
    pub rng_seed: u64,
}

impl Default for ClassMinBudget {
    fn default() -> Self {
        ClassMinBudget {
            starts: 3,
            perturbation: 0.05,
            rounds: 60,
            flow_time: 0.5,
            flow_step: 0.05,
            polish_iters: 2000,
            period_window: (1e-3, 1e4),
            escape_radius: 50.0,
            rng_seed: 7,
        }
    }
}

/// Evidence that the class has no minimizer in reach: the descent
/// pushed the loop monotonically out of every bounded region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub k: f64,
    pub winding: Vec<i64>,
    /// Barycenter of the non-periodic coordinates after each round of
    /// the drifting start.
    pub trail: Vec<Vec<f64>>,
    pub escape_radius: f64,
    /// Action when the loop was last seen.
    pub last_action: f64,
    pub ps: PSRecord,
}

/// A class minimization ends in a minimizer (possibly unconverged, then
/// uncertified) or in drift.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassMinOutcome {
    Minimizer(MinimaxResult),
    Drift(DriftReport),
}

/// Mean of each non-periodic coordinate over the loop's samples.
fn nonper_barycenter(nonper: &[usize], lp: &Loop) -> Vec<f64> {
    let n = lp.n() as f64;
    nonper
        .iter()
        .map(|&c| (0..lp.n()).map(|i| lp.sample(i)[c]).sum::<f64>() / n)
        .collect()
}

/// True when every sample sits beyond the radius in some non-periodic
/// coordinate: the loop as a whole has left every box of that size.
fn escaped_every_box(nonper: &[usize], lp: &Loop, radius: f64) -> bool {
    !nonper.is_empty()
        && (0..lp.n()).all(|i| {
            nonper
                .iter()
                .map(|&c| lp.sample(i)[c].abs())
                .fold(0.0f64, f64::max)
                > radius
        })
}

fn perturbed_start(seed: &Loop, amp: f64, rng: &mut ChaCha8Rng) -> Loop {
    let (n, d) = (seed.n(), seed.dim());
    let mut samples = seed.samples_flat().to_vec();
    for c in 0..d {
        let u1: f64 = rng.gen_range(-1.0..1.0);
        let u2: f64 = rng.gen_range(-1.0..1.0);
        for (j, chunk) in samples.chunks_mut(d).enumerate() {
            let t = TAU * j as f64 / n as f64;
            chunk[c] += amp * (u1 * t.sin() + u2 * (2.0 * t).cos());
        }
    }
    let stretch: f64 = rng.gen_range(-1.0..1.0);
    let period = seed.period() * (1.0 + 0.2 * stretch);
    Loop::new(n, d, period, seed.winding().to_vec(), samples)
        .expect("perturbing a valid loop keeps it valid")
}

/// Exact-in-quadrature linearity of the action in k: S_k = S_c + (k-c) T
/// for every reference level c. A violation means the quadrature itself
/// is broken, so it is a contract error, not a numerical verdict.
fn check_k_linearity(l: &Lagrangian, k: f64, lp: &Loop) -> Result<()> {
    let s_k = action(l, k, lp)?;
    let s_0 = action(l, 0.0, lp)?;
    let gap = (s_k - (s_0 + k * lp.period())).abs();
    if gap > 1e-9 * (1.0 + s_k.abs()) {
        return Err(FpError::Contract(format!(
            "action lost linearity in k: defect {gap:.3e}"
        )));
    }
    Ok(())
}

/// Minimizes S_k over the winding class `alpha` starting from `seed`
/// and its perturbations. Returns the best converged minimizer with a
/// certificate, a drift report when every start escapes to infinity, or
/// an uncertified best-effort loop when the budget runs out first.
pub fn class_minimize(
    l: &Lagrangian,
    k: f64,
    alpha: &[i64],
    seed: &Loop,
    budget: &ClassMinBudget,
    tols: MinimaxTols,
) -> Result<ClassMinOutcome> {
    let m = l.manifold();
    if m.is_embedded() {
        return Err(FpError::Contract(
            "winding classes live on periodic charts; embedded scenarios \
             track contractible loops only"
            .into(),
        ));
    }
    let d = m.coord_dim();
    if alpha.len() != d {
        return Err(FpError::DimMismatch {
            expected: d,
            got: alpha.len(),
            context: "winding class".into(),
        });
    }
    if alpha.iter().all(|&w| w == 0) {
        return Err(FpError::Contract(
            "class minimization needs a nontrivial winding class".into(),
        ));
    }
    let periods = m.periods();
    if let Some(c) = (0..d).find(|&c| alpha[c] != 0 && periods[c].is_none()) {
        return Err(FpError::Contract(format!(
            "winding on non-periodic coordinate {c}: no such class"
        )));
    }
    if seed.winding() != alpha {
        return Err(FpError::Contract(format!(
            "seed winding {:?} is not in class {:?}",
            seed.winding(),
            alpha
        )));
    }
    if budget.starts == 0 || budget.rounds == 0 {
        return Err(FpError::Contract(
            "class minimization needs at least one start and one round".into(),
        ));
    }
    let nonper: Vec<usize> = (0..d).filter(|&c| periods[c].is_none()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(budget.rng_seed);
    let mut starts = vec![seed.clone()];
    for _ in 1..budget.starts {
        starts.push(perturbed_start(seed, budget.perturbation, &mut rng));
    }

    let polish_entry = (10.0 * tols.gradient_tol).max(5e-2);
    let mut best: Option<(f64, Loop, Vec<PSRow>, bool)> = None;
    let mut drift: Option<DriftReport> = None;

    for start in &starts {
        let mut u = start.clone();
        let mut trail = vec![nonper_barycenter(&nonper, &u)];
        let mut rows: Vec<PSRow> = Vec::new();
        let mut converged = false;
        let mut drifted = false;
        let mut dead = false;
        for round in 0..budget.rounds {
            let mut cfg = FlowConfig::rescaled(budget.flow_step, budget.flow_time);
            cfg.grad_tol = 0.5 * tols.gradient_tol;
            match evolve(&cfg, l, k, &u, budget.flow_time) {
                Ok((evolved, rec)) => {
                    u = evolved;
                    match rec.verdict {
                        FlowVerdict::PeriodCollapse => {
                            // A nontrivial class keeps lengths bounded
                            // below; collapse means the discretization
                            // lost the class.
                            return Err(FpError::Contract(
                                "period collapsed inside a nontrivial winding class: \
                                 discretization failure"
                                .into(),
                            ));
                        }
                        FlowVerdict::PeriodBlowup => {
                            // S_k unbounded below in T: k is at or below
                            // the class's critical energy. The start is
                            // spent; others may still land.
                            dead = true;
                        }
                        _ => {}
                    }
                }
                Err(FpError::FlowStall { .. }) => {}
                Err(e) => return Err(e),
            }
            // Exact period optimization: in T alone the action is
            // a/T + b + cT.
            if let Ok((pa, _, pc)) = crate::minimax::witness::period_profile(l, k, &u) {
                if pc > 1e-12 && pa > 0.0 {
                    let t_star = (pa / pc).sqrt();
                    let (d1, d2) = budget.period_window;
                    let clamped = t_star.clamp(0.25 * d1, 4.0 * d2);
                    let mut cand = u.clone();
                    cand.set_period(clamped);
                    if action(l, k, &cand)? <= action(l, k, &u)? {
                        u = cand;
                    }
                } else {
                    // The period direction is unbounded: same verdict as
                    // a blowup.
                    dead = true;
                }
            }
            let (s, g, _) = grad_state(l, k, &u)?;
            trail.push(nonper_barycenter(&nonper, &u));
            rows.push(PSRow {
                time: (round + 1) as f64,
                action: s,
                grad_norm: g,
                period: u.period(),
                excursion: loop_set_distance(m, &u, start)?,
            });
            if escaped_every_box(&nonper, &u, budget.escape_radius) {
                drifted = true;
                break;
            }
            if dead {
                break;
            }
            if g < polish_entry {
                let radius = budget.escape_radius;
                let keep = |lp: &Loop| -> bool { !escaped_every_box(&nonper, lp, radius) };
                let (refined, polish_rows, conv) = polish_to_critical(
                    l,
                    k,
                    u.clone(),
                    &keep,
                    budget.polish_iters,
                    budget.period_window,
                    &tols,
                )?;
                u = refined;
                rows.extend(polish_rows.into_iter().map(|mut r| {
                    r.time += (round + 1) as f64;
                    r
                }));
                converged = conv;
                break;
            }
        }
        if drifted {
            let last_action = action(l, k, &u)?;
            let report = DriftReport {
                k,
                winding: alpha.to_vec(),
                trail,
                escape_radius: budget.escape_radius,
                last_action,
                ps: PSRecord {
                    rows,
                    verdict: FlowVerdict::Escaped,
                },
            };
            if drift.is_none() {
                drift = Some(report);
            }
            continue;
        }
        if dead {
            continue;
        }
        let s_final = action(l, k, &u)?;
        let better = match &best {
            Some((s_best, _, _, conv_best)) => {
                (converged && !conv_best) || (converged == *conv_best && s_final < *s_best)
            }
            None => true,
        };
        if better {
            best = Some((s_final, u, rows, converged));
        }
    }

    match (best, drift) {
        (Some((level, minimizer, rows, converged)), _) => {
            check_k_linearity(l, k, &minimizer)?;
            if minimizer.winding() != alpha {
                return Err(FpError::Contract(
                    "descent changed the winding class".into(),
                ));
            }
            if !(length(m, &minimizer)? > 0.0) {
                return Err(FpError::Contract(
                    "class minimizer degenerated to a constant loop".into(),
                ));
            }
            let certificate = if converged {
                let tol = CertTolerances::for_resolution(minimizer.n());
                Some(certify(l, k, &minimizer, Method::ClassMin, tol)?)
            } else {
                None
            };
            Ok(ClassMinOutcome::Minimizer(MinimaxResult {
                family_kind: Method::ClassMin,
                k,
                level,
                argmax: minimizer,
                ps: PSRecord {
                    rows,
                    verdict: if converged {
                        FlowVerdict::Converged
                    } else {
                        FlowVerdict::Budget
                    },
                },
                certificate,
            }))
        }
        (None, Some(report)) => Ok(ClassMinOutcome::Drift(report)),
        (None, None) => Err(FpError::Contract(
            "every descent start lost its period optimization: k is at or \
             below the class's critical energy"
            .into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Manifold;
    use std::sync::Arc;

    fn torus() -> Lagrangian {
        Lagrangian::pure_kinetic(Arc::new(Manifold::flat_torus(&[1.0, 1.0]).unwrap()))
    }

    fn cylinder(beta: &str) -> Lagrangian {
        Lagrangian::pure_kinetic(Arc::new(Manifold::cylinder(beta).unwrap()))
    }

    /// Wobbly representative of torus class (1, 0).
    fn torus_seed(n: usize) -> Loop {
        let mut samples = Vec::with_capacity(2 * n);
        for j in 0..n {
            let t = j as f64 / n as f64;
            samples.push(t + 0.03 * (TAU * t).sin());
            samples.push(0.3 + 0.05 * (TAU * t).cos());
        }
        Loop::new(n, 2, 1.4, vec![1, 0], samples).unwrap()
    }

    /// Circle around the cylinder at height r0.
    fn cylinder_seed(n: usize, r0: f64, period: f64) -> Loop {
        let mut samples = Vec::with_capacity(2 * n);
        for j in 0..n {
            samples.push(r0);
            samples.push(TAU * j as f64 / n as f64);
        }
        Loop::new(n, 2, period, vec![0, 1], samples).unwrap()
    }

    #[test]
    fn torus_class_minimizer_is_flat_geodesic() {
        let l = torus();
        let k = 0.5;
        let seed = torus_seed(32);
        let out = class_minimize(&l, k, &[1, 0], &seed, &ClassMinBudget::default(), MinimaxTols::default())
            .unwrap();
        let res = match out {
            ClassMinOutcome::Minimizer(r) => r,
            ClassMinOutcome::Drift(_) => panic!("torus class cannot drift"),
        };
        // Straight coordinate lines have no discretization error: the
        // class minimum is exactly S = 1 at T = 1, length 1.
        assert!((res.level - 1.0).abs() < 1e-8, "level {}", res.level);
        assert!((res.argmax.period() - 1.0).abs() < 1e-6);
        let len = length(l.manifold(), &res.argmax).unwrap();
        assert!((len - 1.0).abs() < 1e-7, "length {len}");
        assert_eq!(res.argmax.winding(), &[1, 0]);
        let cert = res.certificate.as_ref().expect("converged run certifies");
        assert!(cert.pass, "certificate failures: {:?}", cert.failures);
    }

    #[test]
    fn torus_action_is_affine_in_k() {
        let l = torus();
        let seed = torus_seed(32);
        let out = class_minimize(&l, 0.5, &[1, 0], &seed, &ClassMinBudget::default(), MinimaxTols::default())
            .unwrap();
        let res = match out {
            ClassMinOutcome::Minimizer(r) => r,
            ClassMinOutcome::Drift(_) => unreachable!(),
        };
        // S_k = S_c + (k - c) T for any reference c, exactly in the
        // quadrature; spot-check an arbitrary c.
        let c = 0.37;
        let s_k = action(&l, 0.5, &res.argmax).unwrap();
        let s_c = action(&l, c, &res.argmax).unwrap();
        assert!((s_k - (s_c + (0.5 - c) * res.argmax.period())).abs() < 1e-12);
    }

    #[test]
    fn cylinder_waist_minimizer() {
        let l = cylinder("1 + r^2");
        let k = 0.5;
        let seed = cylinder_seed(48, 0.4, 5.0);
        let out = class_minimize(&l, k, &[0, 1], &seed, &ClassMinBudget::default(), MinimaxTols::default())
            .unwrap();
        let res = match out {
            ClassMinOutcome::Minimizer(r) => r,
            ClassMinOutcome::Drift(_) => panic!("the waist is a genuine minimizer"),
        };
        // The waist circle r = 0 is again discretization-exact: length
        // 2 pi, T = 2 pi, S = 2 pi at k = 1/2.
        assert!((res.level - TAU).abs() < 1e-6, "level {}", res.level);
        assert!((res.argmax.period() - TAU).abs() < 1e-5);
        let len = length(l.manifold(), &res.argmax).unwrap();
        assert!((len - TAU).abs() < 1e-6, "length {len}");
        let max_r = (0..res.argmax.n())
            .map(|i| res.argmax.sample(i)[0].abs())
            .fold(0.0f64, f64::max);
        assert!(max_r < 1e-4, "waist offset {max_r}");
        assert!(res.certificate.as_ref().is_some_and(|c| c.pass));
    }

    #[test]
    fn exponential_cylinder_drifts() {
        let l = cylinder("exp(2*r)");
        let k = 0.5;
        let seed = cylinder_seed(32, 0.0, TAU);
        let mut budget = ClassMinBudget::default();
        budget.escape_radius = 2.5;
        budget.rounds = 120;
        budget.starts = 1;
        let out =
            class_minimize(&l, k, &[0, 1], &seed, &budget, MinimaxTols::default()).unwrap();
        let report = match out {
            ClassMinOutcome::Drift(r) => r,
            ClassMinOutcome::Minimizer(r) => {
                panic!("no minimizer exists, yet converged at level {}", r.level)
            }
        };
        assert_eq!(report.winding, vec![0, 1]);
        // The waist recedes monotonically: r strictly decreases along
        // the trail and ends beyond the escape radius.
        let rs: Vec<f64> = report.trail.iter().map(|b| b[0]).collect();
        assert!(rs.windows(2).all(|w| w[1] <= w[0] + 1e-12), "trail {rs:?}");
        assert!(*rs.last().unwrap() < -budget.escape_radius);
        assert_eq!(report.ps.verdict, FlowVerdict::Escaped);
    }

    #[test]
    fn class_minimize_rejects_bad_input() {
        let l = torus();
        let seed = torus_seed(16);
        let budget = ClassMinBudget::default();
        let tols = MinimaxTols::default();
        // Trivial class.
        assert!(class_minimize(&l, 0.5, &[0, 0], &seed, &budget, tols).is_err());
        // Wrong dimension.
        assert!(class_minimize(&l, 0.5, &[1], &seed, &budget, tols).is_err());
        // Seed outside the class.
        assert!(class_minimize(&l, 0.5, &[0, 1], &seed, &budget, tols).is_err());
        // Winding on a non-periodic coordinate.
        let cyl = cylinder("1 + r^2");
        let bad = Loop::new(8, 2, 1.0, vec![1, 0], vec![0.0; 16]).unwrap();
        assert!(class_minimize(&cyl, 0.5, &[1, 0], &bad, &budget, tols).is_err());
        // Embedded manifolds have no winding classes.
        let sphere = Lagrangian::pure_kinetic(Arc::new(Manifold::unit_sphere()));
        let slp = Loop::new(8, 3, 1.0, vec![0, 0, 0], vec![0.0; 24]).unwrap();
        assert!(class_minimize(&sphere, 0.5, &[0, 0, 0], &slp, &budget, tols).is_err());
    }
}
