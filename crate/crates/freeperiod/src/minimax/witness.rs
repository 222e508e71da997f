//! Search for contractible loops of negative action at a given energy:
//! the computable side of the critical value c_u. A found loop is hard
//! evidence that k < c_u; exhausting the budget is only evidence of the
//! converse at the current resolution and is reported as an error
//! value, never asserted as a fact.

use crate::geometry::ChartBox;
use crate::gradientflow::{evolve, FlowConfig, FlowVerdict};
use crate::lagrangian::Lagrangian;
use crate::loopspace::{action, Loop, SegmentGeometry};
use crate::{FpError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Work limits for one witness search. Evaluations are counted in
/// discrete action computations.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WitnessBudget {
    /// Constant-loop probe points (plus a derivative-free polish).
    pub probe_points: usize,
    /// Circle-family seeds: centers tried and radii per center.
    pub circle_centers: usize,
    pub circle_radii: usize,
    /// Multi-start descent attempts and flow time per start.
    pub descent_starts: usize,
    pub flow_time: f64,
    /// Loop resolution for constructed candidates.
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for WitnessBudget {
    fn default() -> Self {
        WitnessBudget {
            probe_points: 512,
            circle_centers: 6,
            circle_radii: 12,
            descent_starts: 6,
            flow_time: 40.0,
            n_samples: 32,
            seed: 0xF00D,
        }
    }
}

/// Witness threshold: actions must recompute strictly below zero, so
/// the search only accepts a definite margin.
const NEGATIVE: f64 = -1e-12;

/// Splits the discrete free-period action of a fixed sample geometry as
/// S(T) = a/T + b + c T (kinetic, magnetic, potential-plus-k). Exact
/// for uncapped Lagrangians; with a cap it is still a good period
/// proposal and every candidate is re-evaluated with the true action.
pub(crate) fn period_profile(l: &Lagrangian, k: f64, lp: &Loop) -> Result<(f64, f64, f64)> {
    let m = l.manifold();
    let geo = SegmentGeometry::new(lp, m)?;
    let n = lp.n();
    let (mut a, mut b, mut vbar) = (0.0, 0.0, 0.0);
    let mut tv = vec![0.0; lp.dim()];
    for i in 0..n {
        let mid = geo.midpoint(i);
        let d = geo.diff(i);
        a += 0.5 * (n as f64) * m.sq_norm(mid, d)?;
        if let Some(theta) = l.theta() {
            theta.eval_into(mid, &mut tv);
            b += tv.iter().zip(d).map(|(t, dc)| t * dc).sum::<f64>();
        }
        vbar += l.potential_at(mid);
    }
    Ok((a, b, k + vbar / n as f64))
}

/// Best period for the profile: the exact minimizer sqrt(a/c) when the
/// potential side is positive, otherwise a period large enough that the
/// negative linear term dominates.
fn propose_period(a: f64, b: f64, c: f64) -> f64 {
    if c > 1e-12 {
        (a / c).sqrt().clamp(1e-3, 1e6)
    } else {
        ((a + b.abs() + 1.0) / (-c).max(1e-9)).clamp(1.0, 1e9)
    }
}

/// Round loop in the (0,1) coordinate plane, other coordinates pinned
/// at the center; contractible (zero winding). `orient` = +-1 picks the
/// traversal sense, which fixes the sign of the enclosed flux.
fn circle_loop(center: &[f64], rho: f64, orient: f64, n: usize, period: f64) -> Result<Loop> {
    let dim = center.len();
    let mut samples = Vec::with_capacity(n * dim);
    for i in 0..n {
        let ang = orient * std::f64::consts::TAU * i as f64 / n as f64;
        for (j, c) in center.iter().enumerate() {
            samples.push(match j {
                0 => c + rho * ang.cos(),
                1 => c + rho * ang.sin(),
                _ => *c,
            });
        }
    }
    Loop::new(n, dim, period, vec![0; dim], samples)
}

/// Smooth random contractible loop: two Fourier modes around a random
/// interior center, amplitudes budgeted to stay inside the region.
fn fourier_loop(region: &ChartBox, n: usize, rng: &mut ChaCha8Rng) -> Result<Loop> {
    let d = region.dim();
    let width: Vec<f64> = region
        .lo
        .iter()
        .zip(&region.hi)
        .map(|(a, b)| 0.5 * (b - a))
        .collect();
    let u: Vec<f64> = (0..d).map(|_| 0.3 + 0.4 * rng.gen::<f64>()).collect();
    let center = region.lerp(&u);
    let mut coeffs = Vec::new();
    for j in 0..d {
        let amp = 0.4 * width[j].min(10.0);
        let parts: [f64; 4] = [
            amp * (rng.gen::<f64>() - 0.5),
            amp * (rng.gen::<f64>() - 0.5),
            0.5 * amp * (rng.gen::<f64>() - 0.5),
            0.5 * amp * (rng.gen::<f64>() - 0.5),
        ];
        coeffs.push(parts);
    }
    let mut samples = Vec::with_capacity(n * d);
    for i in 0..n {
        let ang = std::f64::consts::TAU * i as f64 / n as f64;
        for (j, c) in coeffs.iter().enumerate() {
            samples.push(
                center[j]
                    + c[0] * ang.cos()
                    + c[1] * ang.sin()
                    + c[2] * (2.0 * ang).cos()
                    + c[3] * (2.0 * ang).sin(),
            );
        }
    }
    Loop::new(n, d, 0.5 + 2.0 * rng.gen::<f64>(), vec![0; d], samples)
}

/// Constant-loop probe: minimizes x -> L(x, 0) + k over the region by
/// quasi-random sampling plus a compass-search polish (derivative-free,
/// deterministic). Returns the best point and its value.
fn best_constant_site(
    l: &Lagrangian,
    k: f64,
    region: &ChartBox,
    probes: usize,
) -> Result<(Vec<f64>, f64)> {
    let m = l.manifold();
    let zero = vec![0.0; m.coord_dim()];
    let site_value = |x: &[f64]| l.eval_l(x, &zero).map(|v| v + k);
    let prep = |mut x: Vec<f64>| {
        if m.is_embedded() {
            // Degenerate radial projection (near the origin): snap to a
            // fixed pole instead.
            if x.iter().map(|c| c * c).sum::<f64>().sqrt() < 1e-6 {
                x.iter_mut().for_each(|c| *c = 0.0);
                x[0] = 1.0;
            }
            let mut p = vec![0.0; x.len()];
            m.project_point(&x, &mut p);
            x = p;
        }
        x
    };
    let mut best_x = prep(region.center());
    let mut best = site_value(&best_x)?;
    for i in 0..probes {
        let x = prep(region.quasi_point(i));
        let v = site_value(&x)?;
        if v < best {
            best = v;
            best_x = x;
        }
    }
    // Compass polish within the region.
    let mut step: f64 = 0.1
        * region
            .hi
            .iter()
            .zip(&region.lo)
            .map(|(b, a)| b - a)
            .fold(f64::INFINITY, f64::min)
            .min(1.0);
    for _ in 0..60 {
        let mut improved = false;
        for j in 0..best_x.len() {
            for sgn in [1.0, -1.0] {
                let mut cand = best_x.clone();
                cand[j] += sgn * step;
                let cand = prep(cand);
                if !m.is_embedded() && !region.contains(&cand) {
                    continue;
                }
                let v = site_value(&cand)?;
                if v < best - 1e-15 {
                    best = v;
                    best_x = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
            if step < 1e-9 {
                break;
            }
        }
    }
    Ok((best_x, best))
}

/// Finds a contractible loop with S_k < 0 inside the search region, or
/// reports budget exhaustion. Strategy: constant probes (decisive when
/// k is below the zero-velocity energy somewhere), closed-form-seeded
/// circle families (decisive for magnetic flux), then multi-start
/// descent under the rescaled flow with exact period re-optimization.
pub fn find_negative_action_loop(
    l: &Lagrangian,
    k: f64,
    region: &ChartBox,
    budget: &WitnessBudget,
) -> Result<Loop> {
    let m = l.manifold();
    if !m.is_embedded() && region.dim() != m.coord_dim() {
        return Err(FpError::DimMismatch {
            expected: m.coord_dim(),
            got: region.dim(),
            context: "witness search region".into(),
        });
    }
    let mut evals = 0usize;
    let n = budget.n_samples.max(crate::loopspace::MIN_SAMPLES);

    // Constant loops: S_k = T (L(x,0) + k), decided by the sign at the
    // best site.
    let (site, site_val) = best_constant_site(l, k, region, budget.probe_points)?;
    evals += budget.probe_points;
    if site_val < NEGATIVE {
        let lp = Loop::constant(&site, n, 1.0)?;
        let s = action(l, k, &lp)?;
        evals += 1;
        if s < NEGATIVE {
            return Ok(lp);
        }
    }

    // Circle families with the exact period profile.
    if !m.is_embedded() && m.coord_dim() >= 2 {
        let center0 = region.center();
        let mut centers = vec![center0];
        for i in 0..budget.circle_centers.saturating_sub(1) {
            // Interior points only: shrink toward the center by half.
            let q = region.quasi_point(i);
            let c = region.center();
            centers.push(q.iter().zip(&c).map(|(a, b)| 0.5 * (a + b)).collect());
        }
        for center in centers {
            let slack = region.slack(&center);
            if slack <= 1e-9 {
                continue;
            }
            for j in 0..budget.circle_radii {
                let rho = 0.95 * slack * (j + 1) as f64 / budget.circle_radii as f64;
                // Both senses: the winning flux sign depends on dtheta.
                for orient in [1.0, -1.0] {
                    let lp = circle_loop(&center, rho, orient, n, 1.0)?;
                    let (a, b, c) = period_profile(l, k, &lp)?;
                    let t = propose_period(a, b, c);
                    let lp = Loop::new(
                        lp.n(),
                        lp.dim(),
                        t,
                        lp.winding().to_vec(),
                        lp.samples_flat().to_vec(),
                    )?;
                    let s = action(l, k, &lp)?;
                    evals += 1;
                    if s < NEGATIVE {
                        return Ok(lp);
                    }
                }
            }
        }
    }

    // Multi-start descent: rescaled flow in chunks, period
    // re-optimization between chunks, early exit on sign change.
    if !m.is_embedded() {
        let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
        let chunks = 4usize;
        let chunk_time = budget.flow_time / chunks as f64;
        'starts: for _ in 0..budget.descent_starts {
            let Ok(mut lp) = fourier_loop(region, n, &mut rng) else {
                continue;
            };
            for _ in 0..chunks {
                let cfg = FlowConfig::rescaled(0.05, chunk_time);
                let rec = match evolve(&cfg, l, k, &lp, chunk_time) {
                    Ok((out, rec)) => {
                        lp = out;
                        rec
                    }
                    Err(FpError::FlowStall { record, .. }) => *record,
                    Err(e) => return Err(e),
                };
                evals += rec.rows.len();
                if action(l, k, &lp)? < NEGATIVE {
                    return Ok(lp);
                }
                if matches!(rec.verdict, FlowVerdict::PeriodCollapse) {
                    continue 'starts;
                }
                // Exact period line search on the current geometry.
                let (a, b, c) = period_profile(l, k, &lp)?;
                let t = propose_period(a, b, c);
                let cand = Loop::new(
                    lp.n(),
                    lp.dim(),
                    t,
                    lp.winding().to_vec(),
                    lp.samples_flat().to_vec(),
                )?;
                evals += 1;
                if action(l, k, &cand)? <= action(l, k, &lp)? {
                    lp = cand;
                }
                if action(l, k, &lp)? < NEGATIVE {
                    return Ok(lp);
                }
            }
        }
    }

    Err(FpError::WitnessNotFound { evaluations: evals })
}
