//! Command-line front end.
//!
//! Exit status: 0 when every check passes, 1 on a domain failure (violated
//! assumption, failed check, solver or simulation error), 2 on usage or
//! configuration errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::artstein::assemble_pdeode_sff;
use crate::config::{BuiltSystem, ProjectConfig, SystemDef};
use crate::ctrl_algebra::{
    build_boundary_algebra, exact_controllability_check, kalman_check, numerical_rank,
};
use crate::error::{Error, Result};
use crate::export::{
    write_field_csv, write_json, write_matrix_csv, write_sq_kernel_csv, write_trajectory_csv,
    write_tri_kernel_csv,
};
use crate::model::validate_system;
use crate::pipeline::{pdeode_transformation, Transformation};
use crate::sim::{as_pdeode_spec, as_spec, simulate, GeneralizedCouplingSpec};
use crate::verify::{
    artstein_consistency, convergence_study, kernel_residual_fredholm, kernel_residual_volterra,
    structure_check_sff, transform_consistency, CheckReport,
};
use crate::volterra::{BcMode, KernelSolverOptions};

pub const OUT_ENV: &str = "HYPERBOLIC_SFF_OUT";
pub const DEFAULT_OUT: &str = "out";

#[derive(Debug, Parser)]
#[command(
    name = "hyperbolic-sff",
    version,
    about = "Strict-feedback forms of heterodirectional hyperbolic systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Project file (TOML).
    pub config: PathBuf,
    /// Number of grid cells; overrides the project file.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Additional kernel boundary data.
    #[arg(long, value_enum)]
    pub bc_mode: Option<BcModeArg>,
    /// Seed for random initial data.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = OUT_ENV)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BcModeArg {
    Hu,
    Remark2,
}

impl From<BcModeArg> for BcMode {
    fn from(a: BcModeArg) -> Self {
        match a {
            BcModeArg::Hu => BcMode::TopZero,
            BcModeArg::Remark2 => BcMode::TailBalance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Form {
    Original,
    Intermediate,
    Sff,
    Pdeode,
    PdeodeSff,
}

impl Form {
    fn name(self) -> &'static str {
        match self {
            Form::Original => "original",
            Form::Intermediate => "intermediate",
            Form::Sff => "sff",
            Form::Pdeode => "pdeode",
            Form::PdeodeSff => "pdeode-sff",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Kernels,
    Structure,
    Consistency,
    Artstein,
    Convergence,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the standing assumptions on the system.
    Check(Common),
    /// Compute all kernels and coefficients and write them as CSV.
    Transform(Common),
    /// Simulate one form of the system and write the trajectory as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "original")]
        form: Form,
    },
    /// Run a verification suite and write a JSON report.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        suite: Suite,
        /// Form inspected by the structure suite.
        #[arg(long, value_enum)]
        form: Option<Form>,
    },
}

/// Failure of a command, carrying its exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Domain(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Domain(_) => 1,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Usage(e.to_string()),
            other => Failure::Domain(other.to_string()),
        }
    }
}

type CmdResult = std::result::Result<bool, Failure>;

struct Context {
    cfg: ProjectConfig,
    out: PathBuf,
}

impl Context {
    fn load(common: &Common) -> std::result::Result<Self, Failure> {
        let mut cfg = ProjectConfig::load(&common.config).map_err(|e| match e {
            Error::Io(io) => {
                Failure::Usage(format!("cannot read {}: {io}", common.config.display()))
            }
            other => Failure::from(other),
        })?;
        if let Some(g) = common.grid {
            if g < 2 {
                return Err(Failure::Usage("--grid needs at least 2 cells".into()));
            }
            cfg.grid = g;
        }
        if let Some(m) = common.bc_mode {
            cfg.bc_mode = m.into();
        }
        if let Some(s) = common.seed {
            cfg.seed = s;
        }
        let out = common
            .out
            .clone()
            .or_else(|| cfg.out.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        Ok(Self { cfg, out })
    }

    fn opts(&self) -> KernelSolverOptions {
        KernelSolverOptions::with_bc_mode(self.cfg.bc_mode)
    }

    fn build(&self) -> std::result::Result<BuiltSystem, Failure> {
        Ok(self.cfg.build()?)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    command: &'a str,
    grid: usize,
    bc_mode: &'a str,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    form: Option<&'a str>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    iterations: Vec<(String, usize)>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    files: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    reports: Vec<CheckReport>,
}

impl<'a> RunMetadata<'a> {
    fn new(command: &'a str, ctx: &Context) -> Self {
        Self {
            command,
            grid: ctx.cfg.grid,
            bc_mode: ctx.cfg.bc_mode.as_str(),
            seed: ctx.cfg.seed,
            form: None,
            iterations: Vec::new(),
            files: Vec::new(),
            reports: Vec::new(),
        }
    }
}

pub fn cmd_check(common: &Common) -> CmdResult {
    let ctx = Context::load(common)?;
    let built = ctx.build()?;
    let sys = built.base();
    println!(
        "system: n- = {}, n+ = {}, grid = {}",
        sys.n_minus, sys.n_plus, ctx.cfg.grid
    );
    let mut ok = true;
    let report = validate_system(sys);
    for v in &report.violations {
        println!("invalid system: {}", v.message);
        ok = false;
    }
    if report.is_valid() {
        println!("system invariants: ok");
    }
    if exact_controllability_check(&sys.q, sys.n_plus) {
        println!("exact controllability (rank Q = n+): ok");
    } else {
        println!(
            "exact controllability violated: rank Q = {} < n+ = {}; the underactuated case is out of scope",
            numerical_rank(&sys.q),
            sys.n_plus
        );
        ok = false;
    }
    if let BuiltSystem::PdeOde(p) = &built {
        if kalman_check(&p.f, &p.b) {
            println!("controllability of (F, B): ok");
        } else {
            println!("controllability of (F, B) violated");
            ok = false;
        }
    }
    println!(
        "{}",
        if ok {
            "all assumptions hold"
        } else {
            "assumptions violated"
        }
    );
    Ok(ok)
}

pub fn cmd_transform(common: &Common) -> CmdResult {
    if !cmd_check(common)? {
        return Ok(false);
    }
    let ctx = Context::load(common)?;
    let built = ctx.build()?;
    let tr = Transformation::compute(built.base(), &ctx.opts())?;
    let mut meta = RunMetadata::new("transform", &ctx);
    let mut files = Vec::new();
    let mut put = |name: &str| {
        files.push(name.to_string());
        ctx.path(name)
    };
    write_tri_kernel_csv(&put("K_mm.csv"), "K_mm", &tr.kernels.k_mm)?;
    write_tri_kernel_csv(&put("K_mp.csv"), "K_mp", &tr.kernels.k_mp)?;
    write_tri_kernel_csv(&put("K_pm.csv"), "K_pm", &tr.kernels.k_pm)?;
    write_tri_kernel_csv(&put("K_pp.csv"), "K_pp", &tr.kernels.k_pp)?;
    write_field_csv(&put("A0_minus.csv"), "A0_minus", &tr.coeffs.a0_minus)?;
    write_field_csv(&put("A0_plus.csv"), "A0_plus", &tr.coeffs.a0_plus)?;
    write_field_csv(&put("B0_plus.csv"), "B0_plus", &tr.coeffs.b0_plus)?;
    write_sq_kernel_csv(&put("P_I.csv"), "P_I", &tr.fredholm.p)?;
    write_field_csv(
        &put("A0_tilde_plus.csv"),
        "A0_tilde_plus",
        &tr.sff.a0_tilde_plus,
    )?;
    write_field_csv(
        &put("B0_tilde_plus.csv"),
        "B0_tilde_plus",
        &tr.sff.b0_tilde_plus,
    )?;
    if let BuiltSystem::PdeOde(p) = &built {
        let (_, ker) = pdeode_transformation(p)?;
        write_field_csv(&put("N.csv"), "N", &ker.n)?;
        write_matrix_csv(&put("F_bar.csv"), &ker.f_bar)?;
        write_matrix_csv(&put("B_bar.csv"), &ker.b_bar)?;
    }
    meta.files = files;
    meta.iterations = vec![
        ("minus".into(), tr.kernels.stats_minus.iterations),
        ("plus".into(), tr.kernels.stats_plus.iterations),
    ];
    let rv = kernel_residual_volterra(&tr.kernels, &tr.sys);
    let rf = kernel_residual_fredholm(&tr.fredholm, &tr.coeffs.a0_plus, &tr.sys.lambda_plus);
    println!("{}", rv.summary());
    println!("{}", rf.summary());
    meta.reports = vec![rv, rf];
    write_json(&ctx.path("metadata.json"), &meta)?;
    println!(
        "wrote {} files to {}",
        meta.files.len() + 1,
        ctx.out.display()
    );
    Ok(true)
}

fn form_spec(
    form: Form,
    built: &BuiltSystem,
    ctx: &Context,
) -> std::result::Result<GeneralizedCouplingSpec, Failure> {
    let pdeode = |what: &str| match built {
        BuiltSystem::PdeOde(p) => Ok(p),
        BuiltSystem::Hyperbolic(_) => Err(Failure::Usage(format!(
            "form {what} needs a system with kind = \"pde-ode\""
        ))),
    };
    Ok(match form {
        Form::Original => as_spec(built.base()),
        Form::Intermediate => {
            Transformation::compute(built.base(), &ctx.opts())?.intermediate_spec()
        }
        Form::Sff => Transformation::compute(built.base(), &ctx.opts())?.sff_spec(),
        Form::Pdeode => as_pdeode_spec(pdeode("pdeode")?),
        Form::PdeodeSff => {
            let p = pdeode("pdeode-sff")?;
            let (algebra, ker) = pdeode_transformation(p)?;
            assemble_pdeode_sff(p, &ker, &algebra)
        }
    })
}

pub fn cmd_simulate(common: &Common, form: Form) -> CmdResult {
    let ctx = Context::load(common)?;
    let built = ctx.build()?;
    let spec = form_spec(form, &built, &ctx)?;
    let traj = simulate(&spec, &ctx.cfg.simulation, ctx.cfg.seed)?;
    let name = format!("trajectory_{}", form.name());
    let csv = ctx.path(&format!("{name}.csv"));
    let ode = ctx.path(&format!("{name}_ode.csv"));
    write_trajectory_csv(&csv, Some(&ode), &traj)?;
    let mut meta = RunMetadata::new("simulate", &ctx);
    meta.form = Some(form.name());
    meta.files.push(format!("{name}.csv"));
    if spec.ode.is_some() {
        meta.files.push(format!("{name}_ode.csv"));
    }
    write_json(
        &ctx.path(&format!("metadata_simulate_{}.json", form.name())),
        &meta,
    )?;
    println!(
        "simulated {} form: {} snapshots, dt = {:e}, final sup norm {:e}",
        form.name(),
        traj.len(),
        traj.dt,
        traj.final_state().sup_norm()
    );
    Ok(true)
}

fn convergence_grids(grid: usize) -> std::result::Result<Vec<usize>, Failure> {
    if !grid.is_multiple_of(4) || grid < 16 {
        return Err(Failure::Usage(format!(
            "convergence suite needs a grid divisible by 4 and at least 16, got {grid}"
        )));
    }
    Ok(vec![grid / 4, grid / 2, grid])
}

fn hyperbolic_at(def: &SystemDef, n: usize) -> Result<crate::model::HyperbolicSystem> {
    Ok(def.build(n)?.base().clone())
}

fn pdeode_at(def: &SystemDef, n: usize) -> Result<crate::model::PdeOdeSystem> {
    match def.build(n)? {
        BuiltSystem::PdeOde(p) => Ok(p),
        BuiltSystem::Hyperbolic(_) => Err(Error::InvalidSystem("not a PDE-ODE system".into())),
    }
}

fn run_suite(
    ctx: &Context,
    built: &BuiltSystem,
    suite: Suite,
    form: Option<Form>,
) -> std::result::Result<Vec<CheckReport>, Failure> {
    let cfg = &ctx.cfg;
    let seed = cfg.seed;
    Ok(match suite {
        Suite::Kernels => {
            let tr = Transformation::compute(built.base(), &ctx.opts())?;
            vec![
                kernel_residual_volterra(&tr.kernels, &tr.sys),
                kernel_residual_fredholm(&tr.fredholm, &tr.coeffs.a0_plus, &tr.sys.lambda_plus),
            ]
        }
        Suite::Structure => {
            let default = match built {
                BuiltSystem::PdeOde(_) => Form::PdeodeSff,
                BuiltSystem::Hyperbolic(_) => Form::Sff,
            };
            let spec = form_spec(form.unwrap_or(default), built, ctx)?;
            let algebra = build_boundary_algebra(&built.base().q)?;
            vec![structure_check_sff(&spec, &algebra)]
        }
        Suite::Consistency => {
            let tr = Transformation::compute(built.base(), &ctx.opts())?;
            vec![transform_consistency(
                &tr.sys,
                &tr.kernels,
                &tr.coeffs,
                &tr.sff,
                &tr.fredholm,
                &tr.algebra,
                &cfg.simulation,
                seed,
            )?]
        }
        Suite::Artstein => {
            let BuiltSystem::PdeOde(p) = built else {
                return Err(Failure::Usage(
                    "the artstein suite needs kind = \"pde-ode\"".into(),
                ));
            };
            let (algebra, ker) = pdeode_transformation(p)?;
            vec![artstein_consistency(
                p,
                &ker,
                &algebra,
                &cfg.simulation,
                seed,
            )?]
        }
        Suite::Convergence => {
            let grids = convergence_grids(cfg.grid)?;
            let def = &cfg.system;
            let opts = ctx.opts();
            match built {
                BuiltSystem::Hyperbolic(_) => vec![
                    convergence_study("kernel_residual_volterra", &grids, &|n| {
                        let tr = Transformation::compute(&hyperbolic_at(def, n)?, &opts)?;
                        let rep = kernel_residual_volterra(&tr.kernels, &tr.sys);
                        Ok(rep.measurement("interior_residual").unwrap_or(f64::NAN))
                    })?,
                    convergence_study("transform_consistency", &grids, &|n| {
                        let tr = Transformation::compute(&hyperbolic_at(def, n)?, &opts)?;
                        let rep = transform_consistency(
                            &tr.sys,
                            &tr.kernels,
                            &tr.coeffs,
                            &tr.sff,
                            &tr.fredholm,
                            &tr.algebra,
                            &cfg.simulation,
                            seed,
                        )?;
                        Ok(rep.measurement("max_discrepancy").unwrap_or(f64::NAN))
                    })?,
                ],
                BuiltSystem::PdeOde(_) => {
                    vec![convergence_study("artstein_consistency", &grids, &|n| {
                        let p = pdeode_at(def, n)?;
                        let (algebra, ker) = pdeode_transformation(&p)?;
                        let rep = artstein_consistency(&p, &ker, &algebra, &cfg.simulation, seed)?;
                        Ok(rep
                            .measurement("xi_bar_derivative_residual")
                            .unwrap_or(f64::NAN))
                    })?]
                }
            }
        }
    })
}

pub fn cmd_verify(common: &Common, suite: Suite, form: Option<Form>) -> CmdResult {
    let ctx = Context::load(common)?;
    let built = ctx.build()?;
    let suite_name = suite
        .to_possible_value()
        .expect("named suite")
        .get_name()
        .to_string();
    let mut meta = RunMetadata::new("verify", &ctx);
    meta.form = form.map(Form::name);
    let reports = match run_suite(&ctx, &built, suite, form) {
        Ok(r) => r,
        Err(Failure::Domain(msg)) => {
            let mut rep = CheckReport::new(&suite_name);
            rep.fail(msg);
            vec![rep]
        }
        Err(usage) => return Err(usage),
    };
    let passed = reports.iter().all(|r| r.passed);
    for r in &reports {
        println!("{}", r.summary());
        for n in &r.notes {
            println!("  note: {n}");
        }
    }
    meta.reports = reports;
    let path = ctx.path(&format!("report_{suite_name}.json"));
    write_json(&path, &meta)?;
    println!(
        "{} suite: {}",
        suite_name,
        if passed { "PASS" } else { "FAIL" }
    );
    Ok(passed)
}

/// Runs a parsed command line and returns the process exit status.
pub fn run(cli: Cli) -> u8 {
    let result = match &cli.command {
        Command::Check(c) => cmd_check(c),
        Command::Transform(c) => cmd_transform(c),
        Command::Simulate { common, form } => cmd_simulate(common, *form),
        Command::Verify {
            common,
            suite,
            form,
        } => cmd_verify(common, *suite, *form),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(f) => {
            match &f {
                Failure::Usage(m) | Failure::Domain(m) => eprintln!("error: {m}"),
            }
            f.code()
        }
    }
}

pub fn main() -> ExitCode {
    ExitCode::from(run(Cli::parse()))
}
