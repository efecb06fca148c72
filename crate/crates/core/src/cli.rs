//! Batch front end: `solve`, `sweep` and `verify`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 convergence failure,
//! 4 verification failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bcs::{idx, Instant, ProblemVariant, UnknownParameters, SLACK_DIM};
use crate::config::{parse_json, ConfigError, GuessFile, Overrides, RunConfig, ScenarioFile};
use crate::diagnostics::{self, num, SolutionReport, SweepOptions, ACTIVE_TOL};
use crate::guess::{build_guess, GuessError};
use crate::mpbvp::{BvpError, MeshFunction, SegmentMesh, SegmentedBvp, Solution};
use crate::problem::{solve_interception, InterceptionBvp, InterceptionSolution};
use crate::vec3::Vec3;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

/// Default output directory when `--out` is not given.
pub const OUT_DIR_ENV: &str = "INTERCEPT_OUT_DIR";
pub const MIN_SAMPLES: usize = 200;

#[derive(Parser, Debug)]
#[command(name = "intercept", version, about = "Optimal impulsive interception by the indirect method")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve one problem variant and write solution.json plus trajectory CSVs.
    Solve(SolveArgs),
    /// One-impulse sweep over fixed impulse instants.
    Sweep(SweepArgs),
    /// Re-check a solution artifact with the RK oracle.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides the variant of the scenario file.
    #[arg(long)]
    pub variant: Option<String>,
    /// Impulse instant for one-impulse-fixed-t1.
    #[arg(long)]
    pub t1: Option<f64>,
    /// Read --t1 as a fraction of the impact instant.
    #[arg(long)]
    pub t1_scaled: bool,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Guess file; replaces the guess block of the scenario.
    #[arg(long)]
    pub guess: Option<PathBuf>,
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    pub out: PathBuf,
    /// Trajectory points per segment (at least 200).
    #[arg(long, default_value_t = MIN_SAMPLES)]
    pub samples: usize,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// `start:step:stop` (inclusive) or a comma list.
    #[arg(long)]
    pub grid: String,
    /// Grid values are fractions of the impact instant.
    #[arg(long)]
    pub scaled: bool,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Solve rows independently (in parallel) instead of warm-starting.
    #[arg(long)]
    pub cold: bool,
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long)]
    pub solution: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    /// Allowed interception miss, meters.
    #[arg(long, default_value_t = 1.0)]
    pub tol_pos: f64,
}

/// What `solve` writes to solution.json.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolutionArtifact {
    pub scenario: String,
    pub variant: ProblemVariant,
    pub tol: f64,
    /// Authoritative unknown constants; `verify` rebuilds the parameter
    /// vector from these.
    pub parameters: UnknownParameters,
    pub raw_parameters: Vec<f64>,
    pub report: SolutionReport,
    pub mesh: Vec<SegmentMesh>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FailureArtifact {
    pub scenario: String,
    pub variant: ProblemVariant,
    pub error: String,
    pub iterations: Option<usize>,
    pub residual_norm: Option<f64>,
    pub worst_row: Option<String>,
    pub last_parameters: Option<UnknownParameters>,
    pub raw_parameters: Option<Vec<f64>>,
}

struct Failure(i32, String);

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure(EXIT_CONFIG, e.to_string())
    }
}

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure(EXIT_CONFIG, format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| io_fail(path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    // serde_json prints the shortest repr that round-trips, so no digits are lost
    serde_json::to_string_pretty(v).expect("artifact serializes")
}

pub fn run(cli: Cli) -> i32 {
    let r = match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Verify(a) => cmd_verify(&a),
    };
    match r {
        Ok(code) => code,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}

fn parse_variant(a: &SolveArgs) -> Result<Option<ProblemVariant>, Failure> {
    let mut v = match &a.variant {
        Some(s) => Some(s.parse::<ProblemVariant>().map_err(|e| Failure(EXIT_CONFIG, e))?),
        None => None,
    };
    if let Some(t) = a.t1 {
        let inst = if a.t1_scaled { Instant::scaled(t) } else { Instant::seconds(t) };
        match v {
            None | Some(ProblemVariant::OneImpulseFixedT1 { .. }) => v = Some(ProblemVariant::OneImpulseFixedT1 { t1: inst }),
            Some(other) => return Err(Failure(EXIT_CONFIG, format!("--t1 does not apply to {other}"))),
        }
    }
    Ok(v)
}

fn guess_failure(e: GuessError) -> Failure {
    let code = match e {
        GuessError::Missing(..) | GuessError::Order(_) | GuessError::Bc(_) => EXIT_CONFIG,
        _ => EXIT_CONVERGENCE,
    };
    Failure(code, format!("guess: {e}"))
}

/// Labels of every residual row: collocation rows first, then boundary rows.
fn residual_labels(bvp: &InterceptionBvp, mesh: &MeshFunction) -> Vec<String> {
    let mut out = Vec::new();
    for (k, seg) in mesh.segments.iter().enumerate() {
        for j in 0..seg.n_nodes() - 1 {
            for i in 0..seg.dim {
                out.push(format!("collocation seg {k} interval {j} component {i}"));
            }
        }
    }
    out.extend((0..bvp.n_bc()).map(|i| bvp.bc_label(i)));
    out
}

fn write_failure(cfg: &RunConfig, out: &Path, err: &BvpError) -> Result<(), Failure> {
    let bvp = InterceptionBvp::new(cfg.variant, cfg.scenario.clone());
    let mut fa = FailureArtifact {
        scenario: cfg.scenario.label.clone(),
        variant: cfg.variant,
        error: err.to_string(),
        iterations: None,
        residual_norm: None,
        worst_row: None,
        last_parameters: None,
        raw_parameters: None,
    };
    if let BvpError::Convergence(c) = err {
        let labels = residual_labels(&bvp, &c.last);
        fa.iterations = Some(c.iterations);
        fa.residual_norm = Some(c.residual_norm);
        fa.worst_row = labels.get(c.worst_row).cloned();
        fa.last_parameters = UnknownParameters::unpack(&cfg.variant, &c.last.params).ok();
        fa.raw_parameters = Some(c.last.params.clone());
        if !c.residual.is_empty() {
            let mut csv = String::from("row,label,value\n");
            for (i, r) in c.residual.iter().enumerate() {
                let l = labels.get(i).map(String::as_str).unwrap_or("");
                let _ = writeln!(csv, "{i},\"{l}\",{r}");
            }
            write_file(&out.join("residuals.csv"), &csv)?;
        }
    }
    write_file(&out.join("failure.json"), &to_json(&fa))
}

fn trajectory_csv(sol: &InterceptionSolution, n: usize) -> String {
    let slack = sol.bvp.variant.has_slack();
    let mut s = String::from("segment,t,rM_x,rM_y,rM_z,vM_x,vM_y,vM_z,rT_x,rT_y,rT_z,vT_x,vT_y,vT_z,primer");
    if slack {
        s.push_str(",eps_x,eps_y,eps_z,peps_x,peps_y,peps_z");
    }
    s.push('\n');
    for smp in diagnostics::samples(sol, n) {
        let y = &smp.y;
        let _ = write!(s, "{},{}", smp.segment, num(smp.t));
        for o in [idx::R, idx::V, idx::RT, idx::VT] {
            for v in &y[o..o + 3] {
                let _ = write!(s, ",{}", num(*v));
            }
        }
        let _ = write!(s, ",{}", num(Vec3::from_slice(&y[idx::PV..]).norm()));
        if slack {
            if y.len() == SLACK_DIM {
                for v in &y[idx::EPS..idx::PEPS + 3] {
                    let _ = write!(s, ",{}", num(*v));
                }
            } else {
                s.push_str(",,,,,,");
            }
        }
        s.push('\n');
    }
    s
}

fn primer_csv(sol: &InterceptionSolution, n: usize) -> String {
    let mut s = String::from("t,primer\n");
    for p in diagnostics::primer_history(sol, n) {
        let _ = writeln!(s, "{},{}", num(p.t), num(p.magnitude));
    }
    s
}

/// Summary block; every number parses back to exactly the value stored in
/// solution.json.
pub fn summary(r: &SolutionReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Converged: {} on {}", r.variant, r.scenario);
    let _ = writeln!(s, "cost = {}", num(r.cost));
    let _ = writeln!(s, "t1 = {}", num(r.instants.t1));
    if let Some(t) = r.instants.t2 {
        let _ = writeln!(s, "t2 = {}", num(t));
    }
    let _ = writeln!(s, "t_impact = {}", num(r.instants.th));
    if let Some(t) = r.instants.tf {
        let _ = writeln!(s, "tf = {}", num(t));
    }
    let _ = writeln!(s, "dv1 = [{}, {}, {}]", num(r.dv1.x), num(r.dv1.y), num(r.dv1.z));
    if let Some(d) = r.dv2 {
        let _ = writeln!(s, "dv2 = [{}, {}, {}]", num(d.x), num(d.y), num(d.z));
    }
    let list = |v: &[f64]| v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(", ");
    if !r.multipliers.lambda.is_empty() {
        let _ = writeln!(s, "lambda = [{}]", list(&r.multipliers.lambda));
    }
    if let Some(d) = r.terminal_deviation {
        let _ = writeln!(s, "terminal deviation = [{}, {}, {}]", num(d.x), num(d.y), num(d.z));
    }
    let _ = writeln!(s, "interception miss = {}", num(r.interception_miss));
    let _ = writeln!(s, "max residual = {}", num(r.max_residual));
    s
}

fn cmd_solve(a: &SolveArgs) -> Result<i32, Failure> {
    let gf: Option<GuessFile> = match &a.guess {
        Some(p) => Some(parse_json(p)?),
        None => None,
    };
    let ov = Overrides { variant: parse_variant(a)?, tol: a.tol, guess: gf };
    let cfg = RunConfig::load(&a.scenario, &ov)?;
    let guess = build_guess(&cfg.variant, &cfg.scenario, &cfg.guess).map_err(guess_failure)?;
    std::fs::create_dir_all(&a.out).map_err(|e| io_fail(&a.out, e))?;
    let sol = match solve_interception(cfg.variant, cfg.scenario.clone(), guess, &cfg.options) {
        Ok(s) => s,
        Err(e) => {
            write_failure(&cfg, &a.out, &e)?;
            return Err(Failure(EXIT_CONVERGENCE, e.to_string()));
        }
    };
    let report = diagnostics::verify(&sol, &cfg.scenario, 1.0);
    let n = a.samples.max(MIN_SAMPLES);
    let art = SolutionArtifact {
        scenario: cfg.scenario.label.clone(),
        variant: cfg.variant,
        tol: cfg.tol,
        parameters: sol.params.clone(),
        raw_parameters: sol.solution.mesh.params.clone(),
        report: report.clone(),
        mesh: sol.solution.mesh.segments.clone(),
    };
    write_file(&a.out.join("solution.json"), &to_json(&art))?;
    write_file(&a.out.join("trajectory.csv"), &trajectory_csv(&sol, n))?;
    write_file(&a.out.join("primer.csv"), &primer_csv(&sol, n))?;
    write_file(&a.out.join("report.txt"), &report.to_text())?;
    print!("{}", summary(&report));
    Ok(EXIT_OK)
}

/// `start:step:stop` inclusive, or `a,b,c`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, String> {
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("grid value {s:?}: {e}"));
    let vals = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [a, h, b] = parts[..] else { return Err(format!("grid {spec:?} is not start:step:stop")) };
        let (a, h, b) = (num(a)?, num(h)?, num(b)?);
        if !(h > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(format!("grid {spec:?} needs a positive step"));
        }
        if b < a {
            return Ok(Vec::new());
        }
        let n = ((b - a) / h + 1e-9).floor() as usize + 1;
        // drop the binary noise of a + i h
        (0..n).map(|i| ((a + i as f64 * h) * 1e12).round() / 1e12).collect()
    } else {
        spec.split(',').filter(|s| !s.trim().is_empty()).map(num).collect::<Result<Vec<_>, _>>()?
    };
    if vals.windows(2).any(|w| w[1] <= w[0]) {
        return Err(format!("grid {spec:?} is not strictly ascending"));
    }
    Ok(vals)
}

fn cmd_sweep(a: &SweepArgs) -> Result<i32, Failure> {
    let grid = parse_grid(&a.grid).map_err(|e| Failure(EXIT_CONFIG, e))?;
    if grid.is_empty() {
        return Err(Failure(EXIT_CONFIG, format!("grid {:?} is empty", a.grid)));
    }
    let file = ScenarioFile::load(&a.scenario)?;
    let sc = file.scenario()?;
    let tol = a.tol.or(file.tol).unwrap_or(1e-9);
    let probe = ScenarioFile { variant: Some(crate::config::VariantSpec::Name("one-impulse-fixed-t1".into())), tol: Some(tol), ..file.clone() };
    let cfg = RunConfig::from_file(&probe, &Overrides::default())?;
    let grid: Vec<Instant> =
        grid.into_iter().map(|v| if a.scaled { Instant::scaled(v) } else { Instant::seconds(v) }).collect();
    let opts = SweepOptions {
        solve: cfg.options.clone(),
        th_guess: cfg.guess.th.unwrap_or(700.0),
        warm_start: !a.cold,
    };
    let table = diagnostics::sweep_fixed_impulse(&sc, &grid, &opts);
    std::fs::create_dir_all(&a.out).map_err(|e| io_fail(&a.out, e))?;
    write_file(&a.out.join("sweep.csv"), &table.to_csv())?;
    write_file(&a.out.join("sweep.json"), &to_json(&table))?;
    println!("{:>14} {:>14} {:>14}  converged", "t1", "th", "cost");
    let f = |v: Option<f64>| v.map(|x| format!("{x:14.6}")).unwrap_or_else(|| format!("{:>14}", "-"));
    for r in &table.rows {
        println!("{} {} {}  {}", f(r.t1), f(r.th), f(r.cost), if r.converged { "yes" } else { "no" });
        if let Some(e) = &r.error {
            println!("    failed at {} {:?}: {e}", r.t1_input.value, r.t1_input.unit);
        }
    }
    println!("monotonic: {}", if table.monotonic { "yes" } else { "no" });
    Ok(if table.n_converged() > 0 { EXIT_OK } else { EXIT_CONVERGENCE })
}

fn cmd_verify(a: &VerifyArgs) -> Result<i32, Failure> {
    let art: SolutionArtifact = parse_json(&a.solution)?;
    let sc = ScenarioFile::load(&a.scenario)?.scenario()?;
    if art.scenario != sc.label {
        return Err(Failure(EXIT_CONFIG, format!("artifact is for {:?}, scenario is {:?}", art.scenario, sc.label)));
    }
    let variant = art.variant;
    let params = art.parameters.pack(&variant).map_err(|e| Failure(EXIT_CONFIG, e.to_string()))?;
    let bvp = InterceptionBvp::new(variant, sc.clone());
    let mesh = MeshFunction { segments: art.mesh.clone(), params };
    let solution = Solution::from_mesh(&bvp, mesh).map_err(|e| Failure(EXIT_CONFIG, format!("artifact mesh: {e}")))?;
    let sol = InterceptionSolution { bvp, params: art.parameters.clone(), solution, corrections: art.report.corrections.clone() };
    let report = diagnostics::verify(&sol, &sc, a.tol_pos);
    let mut bad = report.violations(a.tol_pos);
    for name in &art.report.active_constraints {
        match report.constraints.iter().find(|c| &c.name == name) {
            Some(c) if c.g_scaled.abs() <= ACTIVE_TOL => {}
            Some(c) => bad.push(format!("{name} reported active but g = {:.6e}", c.g)),
            None => bad.push(format!("{name} reported active but absent")),
        }
    }
    println!("cost = {}", num(report.cost));
    println!("interception miss = {}", num(report.interception_miss));
    if let Some(d) = report.terminal_deviation {
        println!("terminal deviation = [{}, {}, {}]", num(d.x), num(d.y), num(d.z));
    }
    println!("active = {}", report.active_constraints.join("; "));
    if bad.is_empty() {
        println!("verification passed");
        Ok(EXIT_OK)
    } else {
        for b in &bad {
            println!("violation: {b}");
        }
        Ok(EXIT_VERIFY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_ranges() {
        let g = parse_grid("0:0.05:0.85").unwrap();
        assert_eq!(g.len(), 18);
        assert_eq!(g[3], 0.15);
        assert_eq!(*g.last().unwrap(), 0.85);
        assert_eq!(parse_grid("0,5,10,600").unwrap(), vec![0.0, 5.0, 10.0, 600.0]);
        assert!(parse_grid("1:1:0").unwrap().is_empty());
        assert!(parse_grid("0:0:1").is_err());
        assert!(parse_grid("5,1").is_err());
        assert!(parse_grid("").unwrap().is_empty());
    }
}
