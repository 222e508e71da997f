//! Command-line front end. Every run is driven by a scenario TOML plus
//! the seed named inside it; identical scenario and seed produce
//! bit-identical JSON artifacts. Exit codes: 0 = certified success,
//! 1 = the search ran but did not certify an orbit (non-convergence,
//! drift, homotopy loss, missing witness, non-monotone scan, failed
//! certificate), 2 = invalid scenario, arguments or IO.

use clap::{Parser, Subcommand, ValueEnum};
use freeperiod::critvals::{estimate_cu, grid_ball_cover, CuBudget};
use freeperiod::geometry::{ChartBox, Manifold};
use freeperiod::lagrangian::Lagrangian;
use freeperiod::loopspace::{self, Loop};
use freeperiod::minimax::{
    barrier, class_minimize, find_negative_action_loop, latitude_sweep, mountain_pass,
    pass_family, struwe_scan, sweepout_minimax, ClassMinBudget, ClassMinOutcome, MinimaxResult,
    MountainPassProblem, PassBudget, SweepBudget, WitnessBudget,
};
use freeperiod::scenario::{atomic_write, Scenario};
use freeperiod::verify::recheck;
use freeperiod::{FpError, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "freeperiod",
    version,
    about = "Locate and certify periodic orbits of prescribed energy"
)]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one minimax search and certify the resulting orbit.
    FindOrbit {
        scenario: PathBuf,
        /// Energy value; defaults to the scenario's `search.k`.
        #[arg(long)]
        k: Option<f64>,
        #[arg(long, value_enum, default_value_t = MethodArg::MountainPass)]
        method: MethodArg,
        /// Winding class for class minimization, e.g. "1,0".
        #[arg(long)]
        class: Option<String>,
        /// Sweepout family size.
        #[arg(long, default_value_t = 9)]
        members: usize,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Sample the mountain-pass value over an energy interval.
    Scan {
        scenario: PathBuf,
        #[arg(long)]
        k_min: f64,
        #[arg(long)]
        k_max: f64,
        #[arg(long, default_value_t = 9)]
        steps: usize,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Bracket the energy below which negative-action loops exist.
    EstimateCu {
        scenario: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        k_lo: f64,
        #[arg(long, default_value_t = 10.0)]
        k_hi: f64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Certify a positive minimax barrier level for the scenario.
    Barrier {
        scenario: PathBuf,
        #[arg(long)]
        k: Option<f64>,
        /// Grid cells per axis for the ball cover.
        #[arg(long, default_value_t = 8)]
        cells: usize,
        /// Ball inflation factor (> 1).
        #[arg(long, default_value_t = 1.5)]
        inflation: f64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Recompute a stored certificate against its scenario.
    Verify {
        certificate: PathBuf,
        scenario: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    MountainPass,
    Sweepout,
    ClassMin,
}

impl MethodArg {
    fn slug(self) -> &'static str {
        match self {
            MethodArg::MountainPass => "mountain_pass",
            MethodArg::Sweepout => "sweepout",
            MethodArg::ClassMin => "class_min",
        }
    }
}

/// Envelope written around every JSON payload.
#[derive(Serialize)]
struct Artifact<T: Serialize> {
    tool_version: &'static str,
    scenario: String,
    seed: u64,
    payload: T,
}

fn write_artifact<T: Serialize>(dir: &Path, file: &str, sc: &Scenario, payload: T) -> Result<()> {
    let art = Artifact {
        tool_version: env!("CARGO_PKG_VERSION"),
        scenario: sc.name.clone(),
        seed: sc.seed,
        payload,
    };
    let json = serde_json::to_string_pretty(&art)
        .map_err(|e| FpError::Serde(e.to_string()))?;
    std::fs::create_dir_all(dir)?;
    atomic_write(&dir.join(file), &json)
}

#[derive(Serialize)]
struct FailureNote {
    error: String,
}

/// 1 = the mathematics refused, 2 = the setup was wrong.
fn exit_code_for(e: &FpError) -> i32 {
    match e {
        FpError::FlowStall { .. }
        | FpError::WitnessNotFound { .. }
        | FpError::NonMonotoneScan { .. }
        | FpError::ShrinkViolation { .. }
        | FpError::HomotopyLoss { .. }
        | FpError::Certificate(_) => 1,
        _ => 2,
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        // A later duplicate build (e.g. in tests) is harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let code = match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    };
    std::process::exit(code);
}

fn dispatch(cmd: Cmd) -> Result<i32> {
    match cmd {
        Cmd::FindOrbit {
            scenario,
            k,
            method,
            class,
            members,
            out_dir,
        } => find_orbit(&scenario, k, method, class.as_deref(), members, &out_dir),
        Cmd::Scan {
            scenario,
            k_min,
            k_max,
            steps,
            out_dir,
        } => scan(&scenario, k_min, k_max, steps, &out_dir),
        Cmd::EstimateCu {
            scenario,
            k_lo,
            k_hi,
            out_dir,
        } => cu(&scenario, k_lo, k_hi, &out_dir),
        Cmd::Barrier {
            scenario,
            k,
            cells,
            inflation,
            out_dir,
        } => barrier_cmd(&scenario, k, cells, inflation, &out_dir),
        Cmd::Verify {
            certificate,
            scenario,
        } => verify_cmd(&certificate, &scenario),
    }
}

/// Writes the orbit artifact pair (JSON result + sample CSV) and turns
/// the certificate verdict into an exit code.
fn finish_orbit(
    sc: &Scenario,
    m: &Manifold,
    method: MethodArg,
    res: &MinimaxResult,
    out_dir: &Path,
) -> Result<i32> {
    let stem = format!("{}_{}_orbit", sc.name, method.slug());
    write_artifact(out_dir, &format!("{stem}.json"), sc, res)?;
    atomic_write(&out_dir.join(format!("{stem}.csv")), &loop_csv(m, &res.argmax))?;
    let verdict = match &res.certificate {
        Some(c) if c.pass => "PASS",
        Some(_) => "FAIL",
        None => "NONE",
    };
    println!(
        "method={} k={} level={:.12e} period={:.12e} certificate={}",
        method.slug(),
        res.k,
        res.level,
        res.argmax.period(),
        verdict
    );
    if verdict != "PASS" {
        for c in &res.certificate {
            for f in &c.failures {
                eprintln!("certificate failure: {f}");
            }
        }
    }
    Ok(if verdict == "PASS" { 0 } else { 1 })
}

fn fail_note(sc: &Scenario, slug: &str, out_dir: &Path, e: &FpError) -> Result<i32> {
    eprintln!("error: {e}");
    write_artifact(
        out_dir,
        &format!("{}_{}_failure.json", sc.name, slug),
        sc,
        FailureNote {
            error: e.to_string(),
        },
    )?;
    Ok(1)
}

fn find_orbit(
    path: &Path,
    k_flag: Option<f64>,
    method: MethodArg,
    class: Option<&str>,
    members: usize,
    out_dir: &Path,
) -> Result<i32> {
    let sc = Scenario::load(path)?;
    let k = k_flag.unwrap_or(sc.search.k);
    if !k.is_finite() {
        return Err(FpError::Scenario(format!("energy must be finite, got {k}")));
    }
    let l = sc.build_lagrangian()?;
    let m = Arc::clone(l.manifold());
    let tols = sc.tols();
    let n = sc.discretization.n;

    match method {
        MethodArg::MountainPass => {
            let shrink = sc.build_shrink()?.ok_or_else(|| {
                FpError::Scenario(
                    "mountain-pass confinement needs a [shrink] section".into(),
                )
            })?;
            let region = sc.region()?;
            let wbudget = WitnessBudget {
                n_samples: n,
                seed: sc.seed,
                ..WitnessBudget::default()
            };
            let witness = match find_negative_action_loop(&l, k, &region, &wbudget) {
                Ok(w) => w,
                Err(e) if exit_code_for(&e) == 1 => {
                    return fail_note(&sc, method.slug(), out_dir, &e)
                }
                Err(e) => return Err(e),
            };
            let family = pass_family(&region, &witness, 1e-2)?;
            let problem =
                MountainPassProblem::new(&l, k, family, shrink, PassBudget::default(), tols)?;
            match mountain_pass(problem) {
                Ok(res) => finish_orbit(&sc, &m, method, &res, out_dir),
                Err(e) if exit_code_for(&e) == 1 => fail_note(&sc, method.slug(), out_dir, &e),
                Err(e) => Err(e),
            }
        }
        MethodArg::Sweepout => {
            if !m.is_embedded() {
                return Err(FpError::Scenario(
                    "the sweepout driver targets the embedded sphere scenario".into(),
                ));
            }
            let sweep = latitude_sweep(k, members, n, 1e-3)?;
            match sweepout_minimax(&l, k, &sweep, SweepBudget::default(), tols) {
                Ok(res) => finish_orbit(&sc, &m, method, &res, out_dir),
                Err(e) if exit_code_for(&e) == 1 => fail_note(&sc, method.slug(), out_dir, &e),
                Err(e) => Err(e),
            }
        }
        MethodArg::ClassMin => {
            let alpha = match class {
                Some(text) => parse_class(text)?,
                None => sc.search.class.clone().ok_or_else(|| {
                    FpError::Scenario(
                        "class minimization needs --class or search.class".into(),
                    )
                })?,
            };
            let seed_loop = class_seed(&m, &sc.region()?, &alpha, n, k)?;
            let budget = ClassMinBudget {
                rng_seed: sc.seed,
                ..ClassMinBudget::default()
            };
            match class_minimize(&l, k, &alpha, &seed_loop, &budget, tols) {
                Ok(ClassMinOutcome::Minimizer(res)) => {
                    finish_orbit(&sc, &m, method, &res, out_dir)
                }
                Ok(ClassMinOutcome::Drift(report)) => {
                    write_artifact(
                        out_dir,
                        &format!("{}_class_min_drift.json", sc.name),
                        &sc,
                        &report,
                    )?;
                    println!(
                        "method=class_min k={} drift: infimum not attained, trail of {} rounds written",
                        k,
                        report.trail.len()
                    );
                    Ok(1)
                }
                Err(e) if exit_code_for(&e) == 1 => fail_note(&sc, method.slug(), out_dir, &e),
                Err(e) => Err(e),
            }
        }
    }
}

fn scan(path: &Path, k_min: f64, k_max: f64, steps: usize, out_dir: &Path) -> Result<i32> {
    let sc = Scenario::load(path)?;
    let l = sc.build_lagrangian()?;
    let shrink = sc.build_shrink()?.ok_or_else(|| {
        FpError::Scenario("energy scans need a [shrink] section".into())
    })?;
    let region = sc.region()?;
    let wbudget = WitnessBudget {
        n_samples: sc.discretization.n,
        seed: sc.seed,
        ..WitnessBudget::default()
    };
    match struwe_scan(
        &l,
        &region,
        &shrink,
        k_min,
        k_max,
        steps,
        &PassBudget::default(),
        &wbudget,
        sc.tols(),
    ) {
        Ok(table) => {
            write_artifact(out_dir, &format!("{}_scan.json", sc.name), &sc, &table)?;
            atomic_write(&out_dir.join(format!("{}_scan.csv", sc.name)), &table.to_csv())?;
            let certified = table
                .results
                .iter()
                .filter(|r| r.certificate.as_ref().is_some_and(|c| c.pass))
                .count();
            println!(
                "scan k=[{k_min},{k_max}] points={} refined={} certified={}",
                table.rows.len(),
                table.results.len(),
                certified
            );
            Ok(0)
        }
        Err(e) if exit_code_for(&e) == 1 => fail_note(&sc, "scan", out_dir, &e),
        Err(e) => Err(e),
    }
}

fn cu(path: &Path, k_lo: f64, k_hi: f64, out_dir: &Path) -> Result<i32> {
    let sc = Scenario::load(path)?;
    let l = sc.build_lagrangian()?;
    let region = sc.region()?;
    let budget = CuBudget {
        witness: WitnessBudget {
            n_samples: sc.discretization.n,
            seed: sc.seed,
            ..WitnessBudget::default()
        },
        ..CuBudget::default()
    };
    let est = estimate_cu(&l, &region, (k_lo, k_hi), &budget)?;
    write_artifact(out_dir, &format!("{}_cu.json", sc.name), &sc, &est)?;
    println!(
        "c_u bracket=[{:.6e},{:.6e}] value={:.6e} unbounded_suspected={}",
        est.bracket.0, est.bracket.1, est.value, est.unbounded_suspected
    );
    Ok(0)
}

fn barrier_cmd(
    path: &Path,
    k_flag: Option<f64>,
    cells: usize,
    inflation: f64,
    out_dir: &Path,
) -> Result<i32> {
    let sc = Scenario::load(path)?;
    let k = k_flag.unwrap_or(sc.search.k);
    let l = sc.build_lagrangian()?;
    let region = sc.region()?;
    let e0 = l.e0_estimate(&region, 4096)?;
    if !(k > e0) {
        let e = FpError::Certificate(format!(
            "barrier undefined at k = {k}: k must exceed e0 = {e0:.6e} on the region"
        ));
        return fail_note(&sc, "barrier", out_dir, &e);
    }
    let cover = grid_ball_cover(&region, cells, inflation)?;
    let est = barrier(&l, k, &region, &cover)?;
    write_artifact(out_dir, &format!("{}_barrier.json", sc.name), &sc, &est)?;
    println!(
        "barrier k={} a={:.6e} r={:.6e} mu={:.6e} lebesgue_delta={:.6e}",
        k, est.a, est.r, est.mu, est.lebesgue_delta
    );
    Ok(if est.a > 0.0 { 0 } else { 1 })
}

fn verify_cmd(cert_path: &Path, scenario_path: &Path) -> Result<i32> {
    let sc = Scenario::load(scenario_path)?;
    let l = sc.build_lagrangian()?;
    let text = std::fs::read_to_string(cert_path)?;
    let cert = freeperiod::verify::OrbitCertificate::from_json_str(&text)?;
    let diffs = recheck(&l, &cert)?;
    for d in &diffs {
        eprintln!("mismatch: {d}");
    }
    if diffs.is_empty() && cert.pass {
        println!("certificate consistent: PASS");
        Ok(0)
    } else {
        println!(
            "certificate rejected: pass={} mismatches={}",
            cert.pass,
            diffs.len()
        );
        Ok(1)
    }
}

fn parse_class(text: &str) -> Result<Vec<i64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<i64>()
                .map_err(|_| FpError::Scenario(format!("bad winding class entry {s:?}")))
        })
        .collect()
}

/// Straight representative of a winding class: periodic coordinates
/// advance linearly by their winding, the rest sit at the region
/// center. The period starts at length / sqrt(2k); the driver's period
/// snap refines it.
fn class_seed(
    m: &Arc<Manifold>,
    region: &ChartBox,
    class: &[i64],
    n: usize,
    k: f64,
) -> Result<Loop> {
    let periods = m.periods();
    if class.len() != periods.len() {
        return Err(FpError::DimMismatch {
            expected: periods.len(),
            got: class.len(),
            context: "winding class".into(),
        });
    }
    let c = region.center();
    let mut samples = Vec::with_capacity(n * class.len());
    for j in 0..n {
        let t = j as f64 / n as f64;
        for (i, &w) in class.iter().enumerate() {
            match (w, periods[i]) {
                (0, _) => samples.push(c[i]),
                (_, Some(p)) => samples.push(c[i] + w as f64 * p * t),
                (_, None) => {
                    return Err(FpError::Scenario(format!(
                        "winding class is nonzero on non-periodic coordinate {i}"
                    )))
                }
            }
        }
    }
    let mut lp = Loop::new(n, class.len(), 1.0, class.to_vec(), samples)?;
    let len = loopspace::length(m, &lp)?;
    lp.set_period((len / (2.0 * k).sqrt()).max(1e-2));
    Ok(lp)
}

/// CSV of one loop: sample index, loop parameter, coordinates.
fn loop_csv(m: &Manifold, lp: &Loop) -> String {
    let names = m.coord_names();
    let mut out = String::from("i,t");
    for name in &names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..lp.n() {
        out.push_str(&format!("{},{:.17e}", i, i as f64 / lp.n() as f64));
        for x in lp.sample(i) {
            out.push_str(&format!(",{x:.17e}"));
        }
        out.push('\n');
    }
    out
}
