//! Sweepout minimax on the embedded round sphere: a one-parameter
//! family of loops running from pole to pole is deformed by the
//! truncated flow while both pole members stay frozen, and the level is
//! the max member action. For a simply connected manifold the family is
//! homotopically essential, so the level stays positive and bounds the
//! converged orbit's period from below through the quadratic growth of
//! the Lagrangian.

use crate::geometry::{ChartBox, Manifold};
use crate::gradientflow::{evolve, FlowConfig, FlowVerdict, PSRecord, PSRow};
use crate::lagrangian::Lagrangian;
use crate::loopspace::{action, length, Loop};
use crate::minimax::pass::{grad_state, polish_to_critical};
use crate::minimax::{MinimaxResult, MinimaxTols};
use crate::verify::{certify, CertTolerances, Method};
use crate::{FpError, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Work limits and discretization knobs for one sweepout run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepBudget {
    /// Max deformation sweeps before giving up.
    pub sweeps: usize,
    /// Truncated-flow duration per member per sweep.
    pub flow_time: f64,
    /// Initial flow step.
    pub flow_step: f64,
    /// Residual-polish iteration cap for the argmax member.
    pub polish_iters: usize,
    /// Admissible period window (d1, d2) for the converged orbit.
    pub period_window: (f64, f64),
}

impl Default for SweepBudget {
    fn default() -> Self {
        SweepBudget {
            sweeps: 120,
            flow_time: 0.4,
            flow_step: 0.05,
            polish_iters: 4000,
            period_window: (1e-3, 1e4),
        }
    }
}

/// The standard latitude sweepout of the round 2-sphere: member `j` is
/// the latitude circle at polar angle `pi * j / (members - 1)`,
/// discretized as an inscribed regular n-gon and given the period that
/// minimizes its kinetic action at energy `k` (for a circle of chordal
/// length `len` that period is `len / sqrt(2k)`). The first and last
/// members are constant loops at the poles with period `pole_period`.
pub fn latitude_sweep(k: f64, members: usize, n: usize, pole_period: f64) -> Result<Vec<Loop>> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(FpError::Contract(format!(
            "latitude sweep needs a positive energy, got {k}"
        )));
    }
    if members < 3 {
        return Err(FpError::Contract(format!(
            "a sweepout needs at least 3 members, got {members}"
        )));
    }
    if !(pole_period > 0.0) {
        return Err(FpError::Contract(
            "pole members need a positive period".into(),
        ));
    }
    let mut fam = Vec::with_capacity(members);
    for j in 0..members {
        let s = j as f64 / (members - 1) as f64;
        let (sin_phi, cos_phi) = (PI * s).sin_cos();
        let mut samples = Vec::with_capacity(3 * n);
        for i in 0..n {
            let ang = TAU * i as f64 / n as f64;
            samples.push(sin_phi * ang.cos());
            samples.push(sin_phi * ang.sin());
            samples.push(cos_phi);
        }
        // Chordal polygon length; optimal period len / sqrt(2k), floored
        // so the pole members stay valid loops.
        let len = 2.0 * n as f64 * sin_phi.abs() * (PI / n as f64).sin();
        let period = (len / (2.0 * k).sqrt()).max(pole_period);
        fam.push(Loop::new(n, 3, period, vec![0, 0, 0], samples)?);
    }
    Ok(fam)
}

fn argmax_index(actions: &[f64], tol: f64) -> usize {
    let max = actions.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    actions
        .iter()
        .position(|&a| a >= max - tol)
        .unwrap_or(actions.len() - 1)
}

fn is_constant(lp: &Loop) -> bool {
    let d = lp.dim();
    let first = lp.sample(0);
    (0..lp.n()).all(|i| {
        lp.sample(i)
            .iter()
            .zip(first)
            .all(|(a, b)| (a - b).abs() < 1e-9)
    }) && d > 0
}

/// Longest member length; the sweep's width at this instant.
fn sup_length(m: &Manifold, fam: &[Loop]) -> Result<f64> {
    let mut sup = 0.0f64;
    for lp in fam {
        sup = sup.max(length(m, lp)?);
    }
    Ok(sup)
}

/// Prop-style period floor for a loop of length at least `l` whose
/// action at energy `k` does not exceed `a_cap`, from the lower
/// quadratic growth bound A2 |v|^2 - A3 <= L.
fn period_floor(a_cap: f64, a2: f64, a3: f64, k: f64, l: f64) -> f64 {
    let gap = a3 - k;
    (-a_cap + (a_cap * a_cap + 4.0 * a2 * gap * l * l).sqrt()) / (2.0 * gap)
}

/// Runs the sweepout minimax. The family must start and end with
/// constant loops (the poles), which are kept frozen; interior members
/// evolve under the level-truncated flow, and once the argmax member's
/// gradient is small it is polished onto the nearby critical loop.
///
/// Requires `k` above the unboundedness threshold of the Lagrangian
/// (zero for a pure kinetic system). The run fails with a homotopy-loss
/// alarm if every member becomes shorter than half the initial sweep
/// width: a family that sweeps the sphere must keep one long loop.
pub fn sweepout_minimax(
    l: &Lagrangian,
    k: f64,
    sweep: &[Loop],
    budget: SweepBudget,
    tols: MinimaxTols,
) -> Result<MinimaxResult> {
    let m = l.manifold();
    if !m.is_embedded() {
        return Err(FpError::Contract(
            "sweepout minimax runs on the embedded sphere scenario; \
             chart manifolds use the mountain-pass driver"
            .into(),
        ));
    }
    if !(k > 0.0) || !k.is_finite() {
        return Err(FpError::Contract(format!(
            "sweepout needs an energy above the unboundedness threshold, got {k}"
        )));
    }
    if sweep.len() < 3 {
        return Err(FpError::Contract(format!(
            "a sweepout needs at least 3 members, got {}",
            sweep.len()
        )));
    }
    let d = m.coord_dim();
    for (j, lp) in sweep.iter().enumerate() {
        if lp.dim() != d {
            return Err(FpError::DimMismatch {
                expected: d,
                got: lp.dim(),
                context: format!("sweep member {j}"),
            });
        }
        if lp.n() != sweep[0].n() || lp.winding() != sweep[0].winding() {
            return Err(FpError::Contract(
                "sweep members must share sample count and class".into(),
            ));
        }
    }
    if !is_constant(&sweep[0]) || !is_constant(&sweep[sweep.len() - 1]) {
        return Err(FpError::Contract(
            "a sweepout must start and end at constant (pole) loops".into(),
        ));
    }

    let mut fam: Vec<Loop> = sweep.to_vec();
    let mut actions = fam
        .iter()
        .map(|lp| action(l, k, lp))
        .collect::<Result<Vec<_>>>()?;
    let mut level = actions.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut top = argmax_index(&actions, tols.level_tol);

    // Initial sweep width: the family-wise sup of lengths. Its running
    // min over the deformation plays the role of the class's minimax
    // length l and feeds the period floor; falling below l/2 is the
    // degeneration alarm.
    let l0 = sup_length(m, &fam)?;
    if !(l0 > 0.0) {
        return Err(FpError::Contract(
            "the initial sweep is entirely constant: nothing to sweep".into(),
        ));
    }
    let mut l_min_sup = l0;

    let polish_entry = (10.0 * tols.gradient_tol).max(5e-2);
    let mut sweeps_used = 0usize;
    let mut level_hist = vec![level];
    let mut last_polish: Vec<PSRow>;
    let mut converged = false;
    loop {
        while sweeps_used < budget.sweeps {
            sweeps_used += 1;
            let mut cfg = FlowConfig::truncated(level, 1.0, budget.flow_step, budget.flow_time);
            cfg.grad_tol = 0.5 * tols.gradient_tol;
            // Poles are fixed points of the deformation.
            for j in 1..fam.len() - 1 {
                let s_j = action(l, k, &fam[j])?;
                if s_j <= cfg.cutoff_low {
                    continue; // rho vanishes: the member is frozen this sweep
                }
                match evolve(&cfg, l, k, &fam[j], budget.flow_time) {
                    Ok((evolved, rec)) => {
                        if rec.verdict == FlowVerdict::PeriodCollapse {
                            let end = rec.last().map(|r| r.action).unwrap_or(0.0);
                            if end > tols.level_tol.max(1e-9) {
                                return Err(FpError::Contract(format!(
                                    "period collapse at positive action {end:.6e} (member {j}): \
                                     discretization failure"
                                )));
                            }
                        }
                        fam[j] = evolved;
                    }
                    // A member on a numerical action plateau stays put.
                    Err(FpError::FlowStall { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            actions = fam
                .iter()
                .map(|lp| action(l, k, lp))
                .collect::<Result<Vec<_>>>()?;
            level = actions.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            top = argmax_index(&actions, tols.level_tol);
            let width = sup_length(m, &fam)?;
            if width < 0.5 * l0 {
                return Err(FpError::HomotopyLoss {
                    max_length: width,
                    initial: l0,
                });
            }
            l_min_sup = l_min_sup.min(width);
            level_hist.push(level);
            let plateau = level_hist.len() >= 4 && {
                let n = level_hist.len();
                level_hist[n - 4] - level < 1e-5 * (1.0 + level.abs())
            };
            let (_, g_top, _) = grad_state(l, k, &fam[top])?;
            if g_top < polish_entry || plateau {
                break;
            }
        }
        // The manifold projection keeps polish iterates on the sphere;
        // there is no confinement region to respect.
        let (refined, polish_rows, conv) = polish_to_critical(
            l,
            k,
            fam[top].clone(),
            &|_: &Loop| true,
            budget.polish_iters,
            budget.period_window,
            &tols,
        )?;
        fam[top] = refined;
        last_polish = polish_rows;
        actions = fam
            .iter()
            .map(|lp| action(l, k, lp))
            .collect::<Result<Vec<_>>>()?;
        level = actions.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let final_top = argmax_index(&actions, tols.level_tol);
        if final_top == top || (actions[final_top] - actions[top]) <= tols.level_tol {
            // The polished member carries the level: done.
            top = final_top;
            converged = conv;
            break;
        }
        // Another member still dominates; relax further from there.
        top = final_top;
        if sweeps_used >= budget.sweeps {
            break;
        }
    }
    // d(k) > 0: a positive level is part of the sweepout's contract.
    if !(level > 0.0) {
        return Err(FpError::Contract(format!(
            "sweepout minimax level must be positive, got {level}"
        )));
    }
    let argmax = fam[top].clone();
    let len_top = length(m, &argmax)?;
    if len_top < 0.5 * l0 {
        return Err(FpError::HomotopyLoss {
            max_length: len_top,
            initial: l0,
        });
    }

    // Period floor: any loop of length >= l with action <= level + 1
    // satisfies T >= period_floor by the lower quadratic growth bound,
    // where A3 is inflated to keep a definite margin above k.
    let gc = l.estimate_growth_constants(
        &ChartBox::centered(d, 1.0),
        (2.0 * k).sqrt().max(1.0) * 2.0,
    )?;
    let a3 = gc.a3.max(2.0 * k + 1.0);
    let t_floor = period_floor(level + 1.0, gc.a2, a3, k, l_min_sup.min(len_top));
    if argmax.period() + 1e-9 < t_floor {
        return Err(FpError::Contract(format!(
            "converged period {:.6e} violates the growth-bound floor {t_floor:.6e}",
            argmax.period()
        )));
    }

    let certificate = if converged {
        let tol = CertTolerances::for_resolution(argmax.n());
        Some(certify(l, k, &argmax, Method::Sweepout, tol)?)
    } else {
        None
    };
    Ok(MinimaxResult {
        family_kind: Method::Sweepout,
        k,
        level,
        argmax,
        ps: PSRecord {
            rows: last_polish,
            verdict: if converged {
                FlowVerdict::Converged
            } else {
                FlowVerdict::Budget
            },
        },
        certificate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn kinetic_sphere() -> Lagrangian {
        Lagrangian::pure_kinetic(Arc::new(Manifold::unit_sphere()))
    }

    /// Kinetic action of the latitude n-gon at polar angle pi*s and
    /// optimal period: the coefficient of 1/T is (n^2/2)(2 sin(pi s)
    /// sin(pi/n))^2, so min_T a/T + kT = 2 sqrt(a k) gives
    /// 2 sqrt(2k) n sin(pi s) sin(pi/n), maximized at the equator.
    fn latitude_level(k: f64, n: usize, s: f64) -> f64 {
        2.0 * (2.0 * k).sqrt() * n as f64 * (PI * s).sin() * (PI / n as f64).sin()
    }

    #[test]
    fn latitude_sweep_peaks_at_equator() {
        let l = kinetic_sphere();
        let k = 0.5;
        let (members, n) = (21, 48);
        let fam = latitude_sweep(k, members, n, 1e-3).unwrap();
        assert_eq!(fam.len(), members);
        let actions: Vec<f64> = fam.iter().map(|lp| action(&l, k, lp).unwrap()).collect();
        for (j, s_j) in actions.iter().enumerate() {
            let s = j as f64 / (members - 1) as f64;
            let want = if j == 0 || j == members - 1 {
                k * 1e-3 // constant pole loop: S = kT at the floor period
            } else {
                latitude_level(k, n, s)
            };
            assert!(
                (s_j - want).abs() <= 1e-12 * (1.0 + want.abs()),
                "member {j}: action {s_j} vs closed form {want}"
            );
        }
        let top = argmax_index(&actions, 0.0);
        assert_eq!(top, members / 2, "equator member must dominate");
        assert!(
            (actions[top] - latitude_level(k, n, 0.5)).abs() < 1e-12,
            "initial level must be the equator closed form"
        );
    }

    #[test]
    fn sweepout_converges_to_great_circle() {
        let l = kinetic_sphere();
        let k = 0.5;
        let n = 64;
        let fam = latitude_sweep(k, 11, n, 1e-3).unwrap();
        let res = sweepout_minimax(&l, k, &fam, SweepBudget::default(), MinimaxTols::default())
            .unwrap();
        // Discrete critical level/period/length: all equal 2 n sin(pi/n)
        // at k = 1/2 (the inscribed regular n-gon of the great circle).
        let want = 2.0 * n as f64 * (PI / n as f64).sin();
        assert!(
            (res.level - want).abs() < 1e-9,
            "level {} vs discrete closed form {want}",
            res.level
        );
        assert!((res.argmax.period() - want).abs() < 1e-7);
        let len = length(l.manifold(), &res.argmax).unwrap();
        assert!((len - want).abs() < 1e-7, "length {len} vs {want}");
        assert!((len - TAU).abs() < 1e-2, "length must be near 2 pi");
        let cert = res.certificate.as_ref().expect("converged run certifies");
        assert!(cert.pass, "certificate failures: {:?}", cert.failures);
        assert_eq!(res.ps.verdict, FlowVerdict::Converged);
    }

    #[test]
    fn perturbed_sweep_relaxes_to_critical_level() {
        let l = kinetic_sphere();
        let k = 0.5;
        let n = 32;
        let members = 9;
        let mut fam = latitude_sweep(k, members, n, 1e-3).unwrap();
        // Wobble the interior members off the latitude circles and
        // de-tune their periods; the flow must still locate a great
        // circle at the same discrete critical level.
        for (j, lp) in fam.iter_mut().enumerate().skip(1).take(members - 2) {
            let mut samples = lp.samples_flat().to_vec();
            for i in 0..n {
                let t = i as f64 / n as f64;
                samples[3 * i + 2] += 0.02 * (TAU * t + j as f64).sin();
                let r = (samples[3 * i].powi(2)
                    + samples[3 * i + 1].powi(2)
                    + samples[3 * i + 2].powi(2))
                .sqrt();
                for c in 0..3 {
                    samples[3 * i + c] /= r;
                }
            }
            let period = lp.period() * (1.0 + 0.05 * ((j % 3) as f64 - 1.0));
            *lp = Loop::new(n, 3, period, vec![0, 0, 0], samples).unwrap();
        }
        let res = sweepout_minimax(&l, k, &fam, SweepBudget::default(), MinimaxTols::default())
            .unwrap();
        let want = 2.0 * n as f64 * (PI / n as f64).sin();
        assert!(
            (res.level - want).abs() < 1e-6,
            "level {} vs discrete closed form {want}",
            res.level
        );
        let len = length(l.manifold(), &res.argmax).unwrap();
        assert!((len - want).abs() < 1e-4, "length {len} vs {want}");
        assert!(res.certificate.as_ref().is_some_and(|c| c.pass));
    }

    #[test]
    fn capped_sweep_raises_homotopy_alarm() {
        let l = kinetic_sphere();
        let k = 0.5f64;
        let n = 32;
        // A fake sweep that never leaves the polar cap: latitude circles
        // up to polar angle 0.15 pi and back. Nothing in it is critical,
        // so the flow shrinks every member toward the pole.
        let members = 7;
        let mut fam = Vec::new();
        for j in 0..members {
            let s = 0.15 * (1.0 - (2.0 * j as f64 / (members - 1) as f64 - 1.0).abs());
            let (sin_phi, cos_phi) = (PI * s).sin_cos();
            let mut samples = Vec::with_capacity(3 * n);
            for i in 0..n {
                let ang = TAU * i as f64 / n as f64;
                samples.push(sin_phi * ang.cos());
                samples.push(sin_phi * ang.sin());
                samples.push(cos_phi);
            }
            let len = 2.0 * n as f64 * sin_phi * (PI / n as f64).sin();
            let period = (len / (2.0 * k).sqrt()).max(1e-3);
            fam.push(Loop::new(n, 3, period, vec![0, 0, 0], samples).unwrap());
        }
        let err = sweepout_minimax(&l, k, &fam, SweepBudget::default(), MinimaxTols::default())
            .unwrap_err();
        assert!(
            matches!(err, FpError::HomotopyLoss { .. }),
            "expected the homotopy-loss alarm, got {err}"
        );
    }

    #[test]
    fn sweepout_rejects_bad_input() {
        let l = kinetic_sphere();
        let fam = latitude_sweep(0.5, 5, 16, 1e-3).unwrap();
        let budget = SweepBudget::default();
        let tols = MinimaxTols::default();

        // Chart manifolds are the mountain-pass regime.
        let plane = Lagrangian::pure_kinetic(Arc::new(Manifold::euclidean(2)));
        assert!(sweepout_minimax(&plane, 0.5, &fam, budget, tols).is_err());
        // Subcritical energy.
        assert!(sweepout_minimax(&l, 0.0, &fam, budget, tols).is_err());
        // Too few members.
        assert!(sweepout_minimax(&l, 0.5, &fam[..2], budget, tols).is_err());
        // Non-constant endpoints.
        assert!(sweepout_minimax(&l, 0.5, &fam[1..4], budget, tols).is_err());
        // Entirely constant family.
        let pole = fam[0].clone();
        let all_poles = vec![pole.clone(), pole.clone(), pole];
        assert!(matches!(
            sweepout_minimax(&l, 0.5, &all_poles, budget, tols),
            Err(FpError::Contract(_))
        ));
        // Builder argument validation.
        assert!(latitude_sweep(0.0, 5, 16, 1e-3).is_err());
        assert!(latitude_sweep(0.5, 2, 16, 1e-3).is_err());
        assert!(latitude_sweep(0.5, 5, 16, 0.0).is_err());
    }
}
