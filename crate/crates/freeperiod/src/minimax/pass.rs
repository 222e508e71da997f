//! Mountain-pass driver over discrete paths of loops, confined to the
//! shrink domain K, plus the energy scan that sweeps k and refines the
//! grid points where the level's difference quotient is tame.
//!
//! The deformation loop realizes the composition "flow, then push back
//! into the core": every interior node evolves under the truncated
//! descent field whose cutoffs track the current level, the path is
//! re-meshed to bounded node spacing, and nodes that left the core K0
//! are pushed back (never increasing their action). The level is the
//! max node action; it can only go down. Once the top node's gradient
//! is small, a residual-minimization polish drives it onto the nearby
//! critical loop.

use crate::geometry::{ChartBox, Manifold};
use crate::gradientflow::{evolve, FlowConfig, FlowVerdict, PSRecord, PSRow};
use crate::lagrangian::Lagrangian;
use crate::loopspace::{
    action, differential, loop_set_distance, product_norm, riesz_gradient, Loop, LoopTangent,
    PathOfLoops,
};
use crate::minimax::witness::{find_negative_action_loop, WitnessBudget};
use crate::minimax::{MinimaxResult, MinimaxTols};
use crate::shrink::ShrinkMap;
use crate::verify::{certify, CertTolerances, Method};
use crate::{FpError, Result};
use serde::{Deserialize, Serialize};

/// Work limits and discretization knobs for one mountain-pass run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassBudget {
    /// Max deformation sweeps before giving up.
    pub sweeps: usize,
    /// Truncated-flow duration per node per sweep.
    pub sweep_flow_time: f64,
    /// Initial flow step.
    pub flow_step: f64,
    /// Target product-metric spacing between consecutive nodes.
    pub mesh_bound: f64,
    /// Hard cap on path nodes (the mesh coarsens rather than exceed it).
    pub max_nodes: usize,
    /// Residual-minimization iterations for the final polish.
    pub polish_iters: usize,
    /// Admissible period window [D1, D2] for a converged critical loop.
    pub period_window: (f64, f64),
}

impl Default for PassBudget {
    fn default() -> Self {
        PassBudget {
            sweeps: 300,
            sweep_flow_time: 0.4,
            flow_step: 0.05,
            mesh_bound: 0.6,
            max_nodes: 49,
            polish_iters: 6000,
            period_window: (1e-3, 1e4),
        }
    }
}

/// A validated mountain-pass instance: a discrete path from a constant
/// loop to a negative-action loop, all inside the shrink domain K.
pub struct MountainPassProblem<'a> {
    l: &'a Lagrangian,
    k: f64,
    family: PathOfLoops,
    confinement: ShrinkMap,
    budget: PassBudget,
    tols: MinimaxTols,
}

impl<'a> MountainPassProblem<'a> {
    pub fn new(
        l: &'a Lagrangian,
        k: f64,
        family: PathOfLoops,
        confinement: ShrinkMap,
        budget: PassBudget,
        tols: MinimaxTols,
    ) -> Result<Self> {
        let m = l.manifold();
        if m.is_embedded() {
            return Err(FpError::Contract(
                "mountain-pass confinement needs a chart manifold".into(),
            ));
        }
        if family.len() < 2 {
            return Err(FpError::Contract(
                "mountain-pass family needs at least two loops".into(),
            ));
        }
        for (j, lp) in family.loops().iter().enumerate() {
            lp.validate(m)?;
            for i in 0..lp.n() {
                if !confinement.domain_contains(lp.sample(i)) {
                    return Err(FpError::Contract(format!(
                        "family node {j} leaves the confinement domain K at sample {i}"
                    )));
                }
            }
        }
        let p0 = &family.loops()[0];
        let x0 = p0.sample(0).to_vec();
        for i in 1..p0.n() {
            if p0.sample(i) != &x0[..] {
                return Err(FpError::Contract(
                    "family must start at a constant loop".into(),
                ));
            }
        }
        // Constant-loop action is exactly T (V(x0) + k) under midpoint
        // quadrature; a mismatch means the functional or the loop is
        // not what this driver assumes.
        let s0 = action(l, k, p0)?;
        let expect = p0.period() * (l.potential_at(&x0) + k);
        if (s0 - expect).abs() > 1e-9 * (1.0 + expect.abs()) {
            return Err(FpError::Contract(format!(
                "constant endpoint action {s0} differs from T(V+k) = {expect}"
            )));
        }
        let s_last = action(l, k, family.loops().last().unwrap())?;
        if !(s_last < 0.0) {
            return Err(FpError::Contract(format!(
                "family must end at a negative-action loop, got S = {s_last}"
            )));
        }
        Ok(MountainPassProblem {
            l,
            k,
            family,
            confinement,
            budget,
            tols,
        })
    }
}

/// Action, gradient norm and Riesz gradient at a loop.
pub(super) fn grad_state(l: &Lagrangian, k: f64, lp: &Loop) -> Result<(f64, f64, LoopTangent)> {
    let s = action(l, k, lp)?;
    let ds = differential(l, k, lp)?;
    let grad = riesz_gradient(l.manifold(), lp, &ds)?;
    let g2 = ds.pair(&grad).max(0.0);
    Ok((s, g2.sqrt(), grad))
}

/// Flat inner product on variation fields; the CGLS solve below only
/// needs some fixed inner product, not the loop-space metric.
fn tangent_dot(a: &LoopTangent, b: &LoopTangent) -> f64 {
    a.xi.iter().zip(&b.xi).map(|(x, y)| x * y).sum::<f64>() + a.alpha * b.alpha
}

/// Product-metric distance proxy between consecutive nodes: norm of
/// the coordinate difference measured at `a`.
fn node_distance(m: &Manifold, a: &Loop, b: &Loop) -> Result<f64> {
    let n = a.n();
    let d = a.dim();
    let mut xi = vec![0.0; n * d];
    for (x, (pa, pb)) in xi
        .iter_mut()
        .zip(a.samples_flat().iter().zip(b.samples_flat()))
    {
        *x = pb - pa;
    }
    let t = LoopTangent {
        dim: d,
        xi,
        alpha: b.period() - a.period(),
    };
    product_norm(m, a, &t)
}

fn lerp_loops(a: &Loop, b: &Loop, u: f64) -> Loop {
    let mut out = a.clone();
    for (o, (x, y)) in out
        .samples_flat_mut()
        .iter_mut()
        .zip(a.samples_flat().iter().zip(b.samples_flat()))
    {
        *o = x + u * (y - x);
    }
    out.set_period(a.period() + u * (b.period() - a.period()));
    out
}

/// Redistributes path nodes to uniform product-metric arc length,
/// keeping both endpoints bitwise and re-inserting the loop at
/// `keep_ix` (the current argmax) at its arc position so the top of
/// the path is never interpolated away. Returns the new path and the
/// kept node's new index.
fn remesh(
    m: &Manifold,
    path: Vec<Loop>,
    mesh_bound: f64,
    max_nodes: usize,
    keep_ix: usize,
) -> Result<(Vec<Loop>, usize)> {
    let n_old = path.len();
    let mut cum = vec![0.0; n_old];
    for i in 0..n_old - 1 {
        cum[i + 1] = cum[i] + node_distance(m, &path[i], &path[i + 1])?;
    }
    let total = cum[n_old - 1];
    if !(total > 1e-14) {
        return Ok((path, keep_ix));
    }
    let want = (total / mesh_bound).ceil() as usize + 1;
    let m_new = want.clamp(3, max_nodes.max(3));
    let mut out = Vec::with_capacity(m_new);
    out.push(path[0].clone());
    let mut seg = 0usize;
    for j in 1..m_new - 1 {
        let s = total * j as f64 / (m_new - 1) as f64;
        while seg + 2 < n_old && cum[seg + 1] <= s {
            seg += 1;
        }
        let width = cum[seg + 1] - cum[seg];
        let u = if width > 0.0 { (s - cum[seg]) / width } else { 0.0 };
        out.push(lerp_loops(&path[seg], &path[seg + 1], u.clamp(0.0, 1.0)));
    }
    out.push(path[n_old - 1].clone());
    let mut new_keep = 0;
    if keep_ix > 0 && keep_ix < n_old - 1 && m_new > 2 {
        let pos = cum[keep_ix] / total * (m_new - 1) as f64;
        new_keep = (pos.round() as usize).clamp(1, m_new - 2);
        out[new_keep] = path[keep_ix].clone();
    }
    Ok((out, new_keep))
}

/// Smallest index whose action is within `level_tol` of the max.
fn argmax_index(actions: &[f64], level_tol: f64) -> usize {
    let max = actions.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    actions
        .iter()
        .position(|&a| a >= max - level_tol)
        .unwrap_or(0)
}

/// Confinement outcome for one node, applied in place.
fn confine_node(
    l: &Lagrangian,
    k: f64,
    conf: &ShrinkMap,
    node: &mut Loop,
    index: usize,
) -> Result<()> {
    let core = conf.profile.value(conf.profile.r2);
    let mut worst = 0.0f64;
    for i in 0..node.n() {
        worst = worst.max(conf.radial_norm(node.sample(i)));
    }
    if worst > conf.profile.r2 * (1.0 + 1e-9) {
        return Err(FpError::Contract(format!(
            "node {index} escaped the confinement domain K (radial norm {worst:.6} > r2 = {})",
            conf.profile.r2
        )));
    }
    if worst > core {
        let before = action(l, k, node)?;
        let pushed = crate::shrink::pushback(conf, node)?;
        let after = action(l, k, &pushed)?;
        if after > before + 1e-9 * (1.0 + before.abs()) {
            return Err(FpError::ShrinkViolation {
                radius: worst,
                violation: after - before,
            });
        }
        *node = pushed;
    }
    Ok(())
}

/// Residual-minimization polish: descends F = 1/2 |grad S|^2 with a
/// finite-difference Hessian-vector direction and backtracking, keeping
/// the loop wherever `keep` says it belongs (confinement region, chart
/// box, the whole manifold). Returns the refined loop, its trajectory
/// rows, and whether the gradient tolerance was met inside the period
/// window.
pub(super) fn polish_to_critical(
    l: &Lagrangian,
    k: f64,
    start: Loop,
    keep: &dyn Fn(&Loop) -> bool,
    iters: usize,
    window: (f64, f64),
    tols: &MinimaxTols,
) -> Result<(Loop, Vec<PSRow>, bool)> {
    let m = l.manifold();
    let (d1, d2) = window;
    let inside = |lp: &Loop| -> bool {
        keep(lp) && lp.period() > 0.25 * d1 && lp.period() < 4.0 * d2
    };
    let mut u = start.clone();
    let (mut s, mut g, mut grad) = grad_state(l, k, &u)?;
    let mut rows = vec![PSRow {
        time: 0.0,
        action: s,
        grad_norm: g,
        period: u.period(),
        excursion: 0.0,
    }];
    let mut eta = 0.25f64;
    let mut converged = g < tols.gradient_tol && u.period() >= d1 && u.period() <= d2;
    for it in 0..iters {
        if converged {
            break;
        }
        if g < 1e-15 {
            converged = u.period() >= d1 && u.period() <= d2;
            break;
        }
        let mut accepted = false;
        // In the period alone the action is a/T + b + cT; snapping T to
        // the minimizer is an exact line search in that direction.
        if let Ok((pa, _, pc)) = crate::minimax::witness::period_profile(l, k, &u) {
            if pc > 1e-12 && pa > 0.0 {
                let t_star = (pa / pc).sqrt();
                if (t_star - u.period()).abs() > 1e-13 * (1.0 + t_star) {
                    let mut cand = u.clone();
                    cand.set_period(t_star);
                    if inside(&cand) {
                        if let Ok((cs, cg, cgrad)) = grad_state(l, k, &cand) {
                            if cg < g {
                                u = cand;
                                s = cs;
                                g = cg;
                                grad = cgrad;
                                accepted = true;
                            }
                        }
                    }
                }
            }
        }
        if !accepted {
            // Gauss-Newton direction for F = 1/2 |grad|^2: solve
            // H d = -grad in the least-squares sense by CGLS, with H v
            // taken as a forward difference of Riesz gradients. The
            // least-squares solve ignores H's null modes (loop
            // reparameterizations, ambient isometries), which otherwise
            // reduce plain -H grad descent to a crawl.
            let apply_h = |v: &LoopTangent| -> Result<Option<LoopTangent>> {
                let vn = tangent_dot(v, v).sqrt();
                if vn < 1e-300 {
                    return Ok(None);
                }
                let eps = 1e-7 * (1.0 + u.period()) / vn;
                let probe = crate::gradientflow::advance(m, &u, v, eps);
                if !inside(&probe) {
                    return Ok(None);
                }
                let ds = differential(l, k, &probe)?;
                let mut hv = riesz_gradient(m, &probe, &ds)?;
                hv.axpy(-1.0, &grad);
                hv.scale(1.0 / eps);
                Ok(Some(hv))
            };
            let mut dir = LoopTangent::zeros(u.n(), u.dim());
            let mut resid = grad.clone();
            resid.scale(-1.0);
            let mut z = match apply_h(&resid)? {
                Some(z) => z,
                None => break,
            };
            let mut p_dir = z.clone();
            let mut z2 = tangent_dot(&z, &z);
            let b2 = tangent_dot(&resid, &resid);
            for _ in 0..12 {
                if z2 < 1e-30 * b2 {
                    break;
                }
                let hp = match apply_h(&p_dir)? {
                    Some(hp) => hp,
                    None => break,
                };
                let hp2 = tangent_dot(&hp, &hp);
                if hp2 < 1e-300 {
                    break;
                }
                let alpha = z2 / hp2;
                dir.axpy(alpha, &p_dir);
                resid.axpy(-alpha, &hp);
                if tangent_dot(&resid, &resid) < 1e-6 * b2 {
                    break;
                }
                z = match apply_h(&resid)? {
                    Some(z) => z,
                    None => break,
                };
                let z2_new = tangent_dot(&z, &z);
                p_dir.scale(z2_new / z2);
                p_dir.axpy(1.0, &z);
                z2 = z2_new;
            }
            if tangent_dot(&dir, &dir) < 1e-300 {
                // CG produced nothing (boundary or null gradient): fall
                // back to one -H grad step.
                match apply_h(&grad)? {
                    Some(mut hg) => {
                        hg.scale(-1.0);
                        dir = hg;
                    }
                    None => break,
                }
            }
            // Backtracking on |grad|^2, fresh from a full step.
            eta = eta.max(1.0);
            for _ in 0..40 {
                let cand = crate::gradientflow::advance(m, &u, &dir, eta);
                if inside(&cand) {
                    if let Ok((cs, cg, cgrad)) = grad_state(l, k, &cand) {
                        if cg < g {
                            u = cand;
                            s = cs;
                            g = cg;
                            grad = cgrad;
                            accepted = true;
                            break;
                        }
                    }
                }
                eta *= 0.5;
                if eta < 1e-13 {
                    break;
                }
            }
        }
        rows.push(PSRow {
            time: (it + 1) as f64,
            action: s,
            grad_norm: g,
            period: u.period(),
            excursion: loop_set_distance(m, &u, &start)?,
        });
        if !accepted {
            break;
        }
        converged = g < tols.gradient_tol && u.period() >= d1 && u.period() <= d2;
    }
    Ok((u, rows, converged))
}

/// Runs the deformation/minimax procedure. The returned level is the
/// final max node action (an upper bound for the true pass value), the
/// argmax loop is polished to an approximate critical point, and a
/// certificate is attached when the polish converged.
pub fn mountain_pass(p: MountainPassProblem<'_>) -> Result<MinimaxResult> {
    let MountainPassProblem {
        l,
        k,
        family,
        confinement,
        budget,
        tols,
    } = p;
    let m = l.manifold();
    let mut path = family.loops().to_vec();
    let mut actions = path
        .iter()
        .map(|lp| action(l, k, lp))
        .collect::<Result<Vec<_>>>()?;
    let mut level = actions.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut top = argmax_index(&actions, tols.level_tol);

    // Mesh the initial family before the first sweep so the level is
    // sampled on the whole connecting path, not just its corners.
    let (re, keep) = remesh(m, path, budget.mesh_bound, budget.max_nodes, top)?;
    path = re;
    top = keep;

    // The sweep phase hands over to the polish as soon as the top node
    // is in the critical point's basin (small gradient) or the level
    // plateaus; if the polished node is not the path max yet, more
    // sweeps relax the rest of the string below it.
    let polish_entry = (10.0 * tols.gradient_tol).max(5e-2);
    let mut sweeps_used = 0usize;
    let mut level_hist = vec![level];
    let mut last_polish: Vec<PSRow>;
    let mut converged = false;
    loop {
        while sweeps_used < budget.sweeps {
            sweeps_used += 1;
            let mut cfg =
                FlowConfig::truncated(level, 1.0, budget.flow_step, budget.sweep_flow_time);
            cfg.grad_tol = 0.5 * tols.gradient_tol;
            for i in 1..path.len() {
                let s_i = action(l, k, &path[i])?;
                if s_i <= cfg.cutoff_low {
                    continue; // rho vanishes: the node is frozen this sweep
                }
                match evolve(&cfg, l, k, &path[i], budget.sweep_flow_time) {
                    Ok((evolved, rec)) => {
                        if rec.verdict == FlowVerdict::PeriodCollapse {
                            let end = rec.last().map(|r| r.action).unwrap_or(0.0);
                            if end > tols.level_tol.max(1e-9) {
                                return Err(FpError::Contract(format!(
                                    "period collapse at positive action {end:.6e} (node {i}): \
                                     discretization failure"
                                )));
                            }
                        }
                        path[i] = evolved;
                    }
                    // A node on a numerical action plateau stays put.
                    Err(FpError::FlowStall { .. }) => {}
                    Err(e) => return Err(e),
                }
                confine_node(l, k, &confinement, &mut path[i], i)?;
            }
            actions = path
                .iter()
                .map(|lp| action(l, k, lp))
                .collect::<Result<Vec<_>>>()?;
            let s_last = *actions.last().unwrap();
            if !(s_last < 0.0) {
                return Err(FpError::Contract(format!(
                    "negative endpoint lost its sign during deformation (S = {s_last})"
                )));
            }
            level = actions.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            top = argmax_index(&actions, tols.level_tol);
            let (re, keep) = remesh(m, path, budget.mesh_bound, budget.max_nodes, top)?;
            path = re;
            top = keep;
            level_hist.push(level);
            let plateau = level_hist.len() >= 4 && {
                let n = level_hist.len();
                level_hist[n - 4] - level < 1e-5 * (1.0 + level.abs())
            };
            let (_, g_top, _) = grad_state(l, k, &path[top])?;
            if g_top < polish_entry || plateau {
                break;
            }
        }
        let keep =
            |lp: &Loop| -> bool { (0..lp.n()).all(|i| confinement.domain_contains(lp.sample(i))) };
        let (refined, polish_rows, conv) = polish_to_critical(
            l,
            k,
            path[top].clone(),
            &keep,
            budget.polish_iters,
            budget.period_window,
            &tols,
        )?;
        path[top] = refined;
        last_polish = polish_rows;
        actions = path
            .iter()
            .map(|lp| action(l, k, lp))
            .collect::<Result<Vec<_>>>()?;
        level = actions.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let final_top = argmax_index(&actions, tols.level_tol);
        if final_top == top || (actions[final_top] - actions[top]) <= tols.level_tol {
            // The polished node carries the level: done.
            top = final_top;
            converged = conv;
            break;
        }
        // Another node still dominates; relax further from there.
        top = final_top;
        if sweeps_used >= budget.sweeps {
            break;
        }
    }
    if !(level > 0.0) {
        return Err(FpError::Contract(format!(
            "minimax level must be positive, got {level}"
        )));
    }
    let argmax = path[top].clone();
    let certificate = if converged {
        let tol = CertTolerances::for_resolution(argmax.n());
        Some(certify(l, k, &argmax, Method::MountainPass, tol)?)
    } else {
        None
    };
    Ok(MinimaxResult {
        family_kind: Method::MountainPass,
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

/// Builds the canonical pass family: a short constant loop at the
/// region center joined to the witness by straight-line interpolation
/// (the driver re-meshes immediately, so two endpoints suffice).
pub fn pass_family(region: &ChartBox, witness: &Loop, t0: f64) -> Result<PathOfLoops> {
    let p0 = Loop::constant(&region.center(), witness.n(), t0)?;
    if p0.winding() != witness.winding() {
        return Err(FpError::Contract(
            "pass families need a contractible witness".into(),
        ));
    }
    PathOfLoops::new(vec![p0, witness.clone()])
}

/// One row of the energy scan table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StruweRow {
    pub k: f64,
    pub level: f64,
    /// One-sided difference quotient of the level (forward; backward
    /// for the last grid point).
    pub quotient: f64,
    /// Whether this grid point was refined with the tight period box.
    pub refined: bool,
    /// Converged period of the refined orbit, when any.
    pub period: Option<f64>,
    pub certified: bool,
}

/// Energy-scan outcome: the c(k) table, the adaptive quotient
/// threshold, and the refined results with certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StruweScan {
    pub rows: Vec<StruweRow>,
    pub d_threshold: f64,
    pub results: Vec<MinimaxResult>,
}

impl StruweScan {
    /// Fixed CSV columns: k, level, quotient, refined, period, certified.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,level,quotient,refined,period,certified\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{},{},{}\n",
                r.k,
                r.level,
                r.quotient,
                r.refined,
                r.period.map(|t| format!("{t:.17e}")).unwrap_or_default(),
                r.certified
            ));
        }
        out
    }
}

/// Scans c(k) over a uniform grid on [k_min, k_max]. Each grid point
/// gets a fresh witness and a full pass run; the level table must be
/// monotone non-decreasing within 1e-8. The quotient threshold D is
/// adaptive (twice the median of the observed one-sided quotients) and
/// every grid point whose quotient is below D is re-run warm from its
/// argmax with the period box D2 = D + 2 to produce certificates.
#[allow(clippy::too_many_arguments)]
pub fn struwe_scan(
    l: &Lagrangian,
    region: &ChartBox,
    confinement: &ShrinkMap,
    k_min: f64,
    k_max: f64,
    grid_size: usize,
    budget: &PassBudget,
    wbudget: &WitnessBudget,
    tols: MinimaxTols,
) -> Result<StruweScan> {
    if grid_size < 3 {
        return Err(FpError::Contract(format!(
            "energy scan needs grid_size >= 3, got {grid_size}"
        )));
    }
    if !(k_min.is_finite() && k_max.is_finite() && k_min < k_max) {
        return Err(FpError::Contract(format!(
            "energy scan needs k_min < k_max, got [{k_min}, {k_max}]"
        )));
    }
    let ks: Vec<f64> = (0..grid_size)
        .map(|i| k_min + (k_max - k_min) * i as f64 / (grid_size - 1) as f64)
        .collect();
    let mut passes = Vec::with_capacity(grid_size);
    let mut witnesses = Vec::with_capacity(grid_size);
    for &k in &ks {
        let w = find_negative_action_loop(l, k, region, wbudget)?;
        let family = pass_family(region, &w, 1e-2)?;
        let problem =
            MountainPassProblem::new(l, k, family, confinement.clone(), *budget, tols)?;
        passes.push(mountain_pass(problem)?);
        witnesses.push(w);
    }
    for i in 1..grid_size {
        if passes[i].level < passes[i - 1].level - 1e-8 {
            return Err(FpError::NonMonotoneScan {
                k: ks[i],
                value: passes[i].level,
                prev: passes[i - 1].level,
            });
        }
    }
    let quotients: Vec<f64> = (0..grid_size)
        .map(|i| {
            if i + 1 < grid_size {
                (passes[i + 1].level - passes[i].level) / (ks[i + 1] - ks[i])
            } else {
                (passes[i].level - passes[i - 1].level) / (ks[i] - ks[i - 1])
            }
        })
        .collect();
    let mut sorted = quotients.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = if grid_size % 2 == 1 {
        sorted[grid_size / 2]
    } else {
        0.5 * (sorted[grid_size / 2 - 1] + sorted[grid_size / 2])
    };
    let d_threshold = 2.0 * median;

    let mut rows = Vec::with_capacity(grid_size);
    let mut results = Vec::new();
    for i in 0..grid_size {
        let mut row = StruweRow {
            k: ks[i],
            level: passes[i].level,
            quotient: quotients[i],
            refined: false,
            period: None,
            certified: false,
        };
        if quotients[i] < d_threshold {
            // Warm re-run through the found argmax with the tight box.
            let mut tight = *budget;
            tight.period_window = (budget.period_window.0, d_threshold + 2.0);
            let family = PathOfLoops::new(vec![
                Loop::constant(&region.center(), passes[i].argmax.n(), 1e-2)?,
                passes[i].argmax.clone(),
                witnesses[i].clone(),
            ])?;
            let problem =
                MountainPassProblem::new(l, ks[i], family, confinement.clone(), tight, tols)?;
            let refined = mountain_pass(problem)?;
            row.refined = true;
            row.period = Some(refined.argmax.period());
            row.certified = refined
                .certificate
                .as_ref()
                .map(|c| c.pass)
                .unwrap_or(false);
            results.push(refined);
        }
        rows.push(row);
    }
    Ok(StruweScan {
        rows,
        d_threshold,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::OneForm;
    use crate::shrink::build_radial_shrink;
    use std::sync::Arc;

    fn magnetic_plane(b: f64) -> Lagrangian {
        let theta = OneForm::parse(
            &[format!("-{}*x2", 0.5 * b), format!("{}*x1", 0.5 * b)],
            &["x1", "x2"],
        )
        .unwrap();
        Lagrangian::electromagnetic(Arc::new(Manifold::euclidean(2)), Some(theta), None).unwrap()
    }

    /// Discrete critical data of the cyclotron polygon: the regular
    /// N-gon inscribed in radius rho* = sqrt(2k)/(B cos(pi/N)) with
    /// period T* = 2 N rho* sin(pi/N)/sqrt(2k) is an exact critical
    /// point of the discrete action, with value 2 k N tan(pi/N)/B.
    fn discrete_cyclotron(n: usize, k: f64, b: f64) -> (f64, f64, f64) {
        let x = std::f64::consts::PI / n as f64;
        let rho = (2.0 * k).sqrt() / (b * x.cos());
        let period = 2.0 * (n as f64) * rho * x.sin() / (2.0 * k).sqrt();
        let level = 2.0 * k * (n as f64) * x.tan() / b;
        (rho, period, level)
    }

    fn clockwise_circle(center: &[f64], rho: f64, n: usize, period: f64) -> Loop {
        let mut samples = Vec::with_capacity(2 * n);
        for i in 0..n {
            let ang = -std::f64::consts::TAU * i as f64 / n as f64;
            samples.push(center[0] + rho * ang.cos());
            samples.push(center[1] + rho * ang.sin());
        }
        Loop::new(n, 2, period, vec![0, 0], samples).unwrap()
    }

    fn test_budget() -> PassBudget {
        PassBudget {
            sweeps: 200,
            sweep_flow_time: 0.4,
            flow_step: 0.05,
            mesh_bound: 0.8,
            max_nodes: 33,
            polish_iters: 4000,
            period_window: (1e-2, 1e3),
        }
    }

    #[test]
    fn constructor_rejects_bad_families() {
        let l = magnetic_plane(1.0);
        let conf = build_radial_shrink(l.manifold(), 4.0, 5.0, 6.0, 0.5).unwrap();
        let n = 16;
        let neg = clockwise_circle(&[0.0, 0.0], 3.0, n, 8.5);
        let good = Loop::constant(&[0.0, 0.0], n, 0.01).unwrap();
        // Non-constant start.
        let f = PathOfLoops::new(vec![neg.clone(), neg.clone()]).unwrap();
        assert!(matches!(
            MountainPassProblem::new(&l, 0.5, f, conf.clone(), test_budget(), MinimaxTols::default()),
            Err(FpError::Contract(_))
        ));
        // Nonnegative end.
        let f = PathOfLoops::new(vec![good.clone(), good.clone()]).unwrap();
        assert!(MountainPassProblem::new(&l, 0.5, f, conf.clone(), test_budget(), MinimaxTols::default()).is_err());
        // Sample outside K.
        let far = clockwise_circle(&[4.0, 0.0], 3.0, n, 8.5);
        let f = PathOfLoops::new(vec![good.clone(), far]).unwrap();
        assert!(MountainPassProblem::new(&l, 0.5, f, conf, test_budget(), MinimaxTols::default()).is_err());
        // Pure kinetic admits no valid family at all: no negative loop.
        let lk = Lagrangian::pure_kinetic(Arc::new(Manifold::euclidean(2)));
        let confk = build_radial_shrink(lk.manifold(), 4.0, 5.0, 6.0, 0.5).unwrap();
        let f = PathOfLoops::new(vec![good.clone(), clockwise_circle(&[0.0, 0.0], 3.0, n, 8.5)]).unwrap();
        assert!(MountainPassProblem::new(&lk, 0.5, f, confk, test_budget(), MinimaxTols::default()).is_err());
    }

    #[test]
    fn magnetic_plane_pass_finds_cyclotron() {
        let n = 64;
        let k = 0.5;
        let l = magnetic_plane(1.0);
        let conf = build_radial_shrink(l.manifold(), 4.0, 5.0, 6.0, 0.5).unwrap();
        let region = ChartBox::centered(2, 4.0);
        let witness = clockwise_circle(&[0.0, 0.0], 3.0, n, 8.5);
        assert!(action(&l, k, &witness).unwrap() < 0.0);
        let family = pass_family(&region, &witness, 0.01).unwrap();
        let problem =
            MountainPassProblem::new(&l, k, family, conf, test_budget(), MinimaxTols::default())
                .unwrap();
        let res = mountain_pass(problem).unwrap();
        let (rho_star, t_star, level_star) = discrete_cyclotron(n, k, 1.0);
        assert_eq!(res.ps.verdict, FlowVerdict::Converged);
        assert!(
            (res.level - level_star).abs() < 1e-6,
            "level {} vs discrete critical value {}",
            res.level,
            level_star
        );
        assert!(
            (res.argmax.period() - t_star).abs() < 1e-5,
            "period {} vs {}",
            res.argmax.period(),
            t_star
        );
        // Mean sample radius about the centroid matches rho*.
        let (mut cx, mut cy) = (0.0, 0.0);
        for i in 0..n {
            cx += res.argmax.sample(i)[0];
            cy += res.argmax.sample(i)[1];
        }
        cx /= n as f64;
        cy /= n as f64;
        let mean_rho = (0..n)
            .map(|i| {
                let s = res.argmax.sample(i);
                ((s[0] - cx).powi(2) + (s[1] - cy).powi(2)).sqrt()
            })
            .sum::<f64>()
            / n as f64;
        assert!(
            (mean_rho - rho_star).abs() < 1e-5,
            "radius {mean_rho} vs {rho_star}"
        );
        let cert = res.certificate.expect("converged pass must certify");
        assert!(cert.pass, "certificate failures: {:?}", cert.failures);
        assert_eq!(cert.method, Method::MountainPass);
        assert!(res.level > 0.0);
    }

    #[test]
    fn pass_level_dominates_barrier() {
        let n = 48;
        let k = 0.5;
        let l = magnetic_plane(1.0);
        let conf = build_radial_shrink(l.manifold(), 4.0, 5.0, 6.0, 0.5).unwrap();
        let region = ChartBox::centered(2, 4.0);
        let witness = clockwise_circle(&[0.0, 0.0], 3.0, n, 8.5);
        let family = pass_family(&region, &witness, 0.01).unwrap();
        let problem =
            MountainPassProblem::new(&l, k, family, conf, test_budget(), MinimaxTols::default())
                .unwrap();
        let res = mountain_pass(problem).unwrap();
        let cover = crate::critvals::grid_ball_cover(&region, 3, 1.4).unwrap();
        let bar = crate::minimax::barrier(&l, k, &region, &cover).unwrap();
        assert!(
            res.level >= bar.a,
            "level {} below barrier {}",
            res.level,
            bar.a
        );
    }

    #[test]
    fn struwe_scan_levels_track_cyclotron_formula() {
        let n = 48;
        let l = magnetic_plane(1.0);
        let conf = build_radial_shrink(l.manifold(), 4.0, 5.0, 6.0, 0.5).unwrap();
        let region = ChartBox::centered(2, 4.0);
        let wb = WitnessBudget {
            n_samples: n,
            ..WitnessBudget::default()
        };
        let scan = struwe_scan(
            &l,
            &region,
            &conf,
            0.3,
            0.7,
            3,
            &test_budget(),
            &wb,
            MinimaxTols::default(),
        )
        .unwrap();
        assert_eq!(scan.rows.len(), 3);
        let tan_factor = 2.0 * (n as f64) * (std::f64::consts::PI / n as f64).tan();
        for row in &scan.rows {
            let expect = row.k * tan_factor;
            assert!(
                (row.level - expect).abs() < 1e-5,
                "c({}) = {} vs {}",
                row.k,
                row.level,
                expect
            );
            // Linear c(k): every quotient equals the slope, so all rows
            // sit below the 2*median threshold and get refined.
            assert!(row.refined);
            assert!(row.certified, "refinement at k = {} not certified", row.k);
            let t = row.period.unwrap();
            assert!(
                t <= scan.d_threshold + 2.0 + 1.0,
                "period {t} beyond D + 2 + tau"
            );
        }
        for pair in scan.rows.windows(2) {
            assert!(pair[1].level >= pair[0].level - 1e-8);
        }
        assert!((scan.d_threshold - 2.0 * tan_factor).abs() < 1e-3);
        assert_eq!(scan.results.len(), 3);
        let csv = scan.to_csv();
        assert!(csv.starts_with("k,level,quotient,refined,period,certified\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn struwe_scan_rejects_bad_grids() {
        let l = magnetic_plane(1.0);
        let conf = build_radial_shrink(l.manifold(), 4.0, 5.0, 6.0, 0.5).unwrap();
        let region = ChartBox::centered(2, 4.0);
        let wb = WitnessBudget::default();
        assert!(struwe_scan(
            &l, &region, &conf, 0.3, 0.7, 2, &test_budget(), &wb, MinimaxTols::default()
        )
        .is_err());
        assert!(struwe_scan(
            &l, &region, &conf, 0.7, 0.3, 5, &test_budget(), &wb, MinimaxTols::default()
        )
        .is_err());
        // Pure kinetic: no witness exists, the scan's precondition
        // k < c_u fails and the witness error surfaces.
        let lk = Lagrangian::pure_kinetic(Arc::new(Manifold::euclidean(2)));
        let confk = build_radial_shrink(lk.manifold(), 4.0, 5.0, 6.0, 0.5).unwrap();
        let wb_small = WitnessBudget {
            probe_points: 64,
            circle_centers: 2,
            circle_radii: 3,
            descent_starts: 1,
            flow_time: 1.0,
            n_samples: 16,
            seed: 5,
        };
        assert!(matches!(
            struwe_scan(
                &lk, &region, &confk, 0.3, 0.7, 3, &test_budget(), &wb_small,
                MinimaxTols::default()
            ),
            Err(FpError::WitnessNotFound { .. })
        ));
    }
}
