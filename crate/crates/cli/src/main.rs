use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use mpc_bounds::bounds::SeriesStart;
use mpc_bounds::cmpc::TerminalGain;
use mpc_bounds::par::Exec;
use mpc_bounds::{Analysis, Vector};
use mpcb::commands::{self, Ctx};
use mpcb::reproduce;
use mpcb::scenario::{load_scenario, Scenario, Terminal, UsageError};

#[derive(Parser)]
#[command(
    name = "mpcb",
    version,
    about = "Performance bounds for model predictive control of LQ problems"
)]
struct Cli {
    /// Seed for Monte Carlo volumes; defaults to the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Multiplies every acceptance tolerance.
    #[arg(long, global = true, default_value_t = 1.0)]
    tol_scale: f64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Disable the parallel grid sweeps.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Actual gap and the three bounds for each horizon.
    Bounds {
        /// Built-in scenario name or path to a TOML file.
        #[arg(long, default_value = "di-2d")]
        scenario: String,
        /// Horizons, comma separated; defaults to the scenario horizon.
        #[arg(long, value_delimiter = ',')]
        ell: Vec<usize>,
        /// Replace the scenario terminal cost with the ζ design.
        #[arg(long)]
        zeta: Option<f64>,
        /// First index of the power series in the Newton constant.
        #[arg(long, value_enum, default_value_t = Series::Zero)]
        series: Series,
    },
    /// Terminal sets and their volume ratios against the Riccati design.
    TerminalSet {
        /// Built-in scenario name or path to a TOML file.
        #[arg(long, default_value = "di-2d")]
        scenario: String,
        /// Amplification factors, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [5.0, 15.0, 25.0, 35.0])]
        zeta: Vec<f64>,
        /// Feedback gain that the terminal set is invariant under.
        #[arg(long, value_enum, default_value_t = Gain::Zeta)]
        gain: Gain,
    },
    /// Feasible region of the design against the Riccati design on a grid.
    Region {
        /// Built-in scenario name or path to a TOML file.
        #[arg(long, default_value = "di-2d")]
        scenario: String,
        /// Horizon; defaults to the scenario horizon.
        #[arg(long)]
        ell: Option<usize>,
        /// Points per axis; defaults to the scenario grid.
        #[arg(long)]
        grid: Option<usize>,
        /// Replace the scenario terminal cost with the ζ design.
        #[arg(long)]
        zeta: Option<f64>,
    },
    /// Relative suboptimality against the horizon-100 reference on a grid.
    Submap {
        /// Built-in scenario name or path to a TOML file.
        #[arg(long, default_value = "di-2d")]
        scenario: String,
        /// Horizon; defaults to the scenario horizon.
        #[arg(long)]
        ell: Option<usize>,
        /// Points per axis; defaults to the scenario grid.
        #[arg(long)]
        grid: Option<usize>,
        /// Replace the scenario terminal cost with the ζ design.
        #[arg(long)]
        zeta: Option<f64>,
    },
    /// Closed-loop trajectory with its cost against the reference.
    Simulate {
        /// Built-in scenario name or path to a TOML file.
        #[arg(long, default_value = "ac-4d")]
        scenario: String,
        /// Comma or space separated initial state.
        #[arg(long)]
        x0: Option<String>,
        /// Horizon; defaults to the scenario horizon.
        #[arg(long)]
        ell: Option<usize>,
        /// Closed-loop steps to simulate.
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Replace the scenario terminal cost with the ζ design.
        #[arg(long)]
        zeta: Option<f64>,
    },
    /// Reruns a numerical study and checks every number.
    Reproduce {
        /// Study to rerun: 2 is table1 and table2, 3 is table3 with the region and submap.
        #[arg(long, value_parser = reproduce::EXAMPLES)]
        example: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Series {
    Zero,
    One,
}

#[derive(Clone, Copy, ValueEnum)]
enum Gain {
    /// Gain of the ζ-amplified problem.
    Zeta,
    /// Greedy gain of the terminal cost.
    Greedy,
}

fn scenario_with(spec: &str, zeta: Option<f64>) -> Result<Scenario> {
    let mut scn = load_scenario(spec)?;
    if let Some(z) = zeta {
        if z.is_nan() || z < 1.0 {
            return Err(UsageError(format!("--zeta must be >= 1, got {z}")).into());
        }
        scn.terminal = Terminal::ZetaDare(z);
    }
    Ok(scn)
}

fn parse_x0(text: &str, n: usize) -> Result<Vector> {
    let vals: Result<Vec<f64>, _> = text
        .split([',', ' '])
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect();
    match vals {
        Ok(v) if v.len() == n => Ok(Vector::from_vec(v)),
        Ok(v) => Err(UsageError(format!("--x0 has {} entries, expected {n}", v.len())).into()),
        Err(e) => Err(UsageError(format!("--x0: {e}")).into()),
    }
}

fn run(cli: Cli) -> Result<bool> {
    if cli.tol_scale.is_nan() || cli.tol_scale <= 0.0 {
        return Err(UsageError("--tol-scale must be positive".into()).into());
    }
    let ctx = Ctx {
        out: cli.out,
        seed: cli.seed,
        tol_scale: cli.tol_scale,
        exec: if cli.sequential { Exec::Sequential } else { Exec::best() },
    };
    match cli.command {
        Command::Bounds {
            scenario,
            ell,
            zeta,
            series,
        } => {
            let scn = scenario_with(&scenario, zeta)?;
            let ells = if ell.is_empty() { vec![scn.horizon] } else { ell };
            if ells.contains(&0) {
                return Err(UsageError("--ell entries must be positive".into()).into());
            }
            let analysis = Analysis::new(scn.system.clone())?;
            let k = scn.terminal_matrix()?;
            let mut rows = commands::bounds_rows(&analysis, &k, &ells, ctx.exec);
            if let Series::One = series {
                for row in &mut rows {
                    if let Ok(r) = &mut row.report {
                        let nc = analysis
                            .newton_gamma_with(&analysis.system().iterate_bellman(&k, r.ell - 1)?, SeriesStart::One)?;
                        r.gamma = nc.gamma;
                        r.bound_newton = nc.gamma * r.beta_ell * r.beta_ell * r.design_distance * r.design_distance;
                    }
                }
            }
            println!(
                "{:>4} {:>12} {:>12} {:>12} {:>12}",
                "ell", "gap", "contraction", "monotone", "newton"
            );
            for row in &rows {
                match &row.report {
                    Ok(r) => println!(
                        "{:>4} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
                        r.ell, r.actual_gap, r.bound_contraction, r.bound_monotone, r.bound_newton
                    ),
                    Err(e) => println!("{:>4} {e}", row.ell),
                }
            }
            let path = ctx.write(
                "bounds.csv",
                &commands::bounds_csv(&scn.name, &scn.terminal_label(), &rows),
            )?;
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::TerminalSet { scenario, zeta, gain } => {
            let scn = load_scenario(&scenario)?;
            if zeta.iter().any(|z| z.is_nan() || *z < 1.0) {
                return Err(UsageError("--zeta entries must be >= 1".into()).into());
            }
            let prob = scn.problem()?;
            let gain = match gain {
                Gain::Zeta => TerminalGain::ZetaProblem,
                Gain::Greedy => TerminalGain::Greedy,
            };
            let rows = commands::terminal_sets(&prob, &zeta, gain, ctx.seed_for(&scn), ctx.exec)?;
            println!("{:>8} {:>12} {:>8} {:>6}", "zeta", "volume", "ratio", "in X");
            for r in &rows {
                println!(
                    "{:>8} {:>12.6} {:>8.4} {:>6}",
                    r.zeta, r.volume, r.ratio, r.inside_state_set
                );
                ctx.write(&commands::polytope_file(r.zeta), &r.design.s.to_csv())?;
            }
            ctx.write("terminal_sets.csv", &commands::terminal_sets_csv(&rows))?;
            ctx.write("terminal_sets.gp", commands::TERMINAL_GP)?;
            println!("wrote {}", ctx.out.display());
            Ok(true)
        }
        Command::Region {
            scenario,
            ell,
            grid,
            zeta,
        } => {
            let scn = scenario_with(&scenario, zeta)?;
            let prob = scn.problem()?;
            let design = commands::scenario_design(&scn, &prob, TerminalGain::ZetaProblem)?;
            let spec = commands::grid_spec(&scn, &prob, grid)?;
            let cmp = commands::region_comparison(&prob, &design, ell.unwrap_or(scn.horizon), &spec, ctx.exec)?;
            ctx.write("region_design.csv", &cmp.design.to_csv())?;
            ctx.write("region_kstar.csv", &cmp.kstar.to_csv())?;
            ctx.write("region_design_boundary.csv", &cmp.design.boundary_csv())?;
            ctx.write("region_kstar_boundary.csv", &cmp.kstar.boundary_csv())?;
            ctx.write("region.gp", commands::REGION_GP)?;
            println!(
                "feasible points: design {}, K* {}; K*-feasible points outside the design region: {}",
                cmp.design.feasible_count(),
                cmp.kstar.feasible_count(),
                cmp.violations
            );
            println!("wrote {}", ctx.out.display());
            Ok(true)
        }
        Command::Submap {
            scenario,
            ell,
            grid,
            zeta,
        } => {
            let scn = scenario_with(&scenario, zeta)?;
            let prob = scn.problem()?;
            let design = commands::scenario_design(&scn, &prob, TerminalGain::ZetaProblem)?;
            let spec = commands::grid_spec(&scn, &prob, grid)?;
            let map = commands::submap(&prob, &design, ell.unwrap_or(scn.horizon), &spec, ctx.exec)?;
            ctx.write("submap.csv", &map.to_csv())?;
            ctx.write("submap.gp", commands::SUBMAP_GP)?;
            match map.max_rel_gap() {
                Some((g, x)) => {
                    println!("max relative gap {:.4}% at ({}, {})", g * 100.0, x[0], x[1])
                }
                None => println!("no feasible grid point away from the origin"),
            }
            println!("wrote {}", ctx.out.display());
            Ok(true)
        }
        Command::Simulate {
            scenario,
            x0,
            ell,
            steps,
            zeta,
        } => {
            let scn = scenario_with(&scenario, zeta)?;
            let prob = scn.problem()?;
            let n = scn.state_dim();
            let x0 = match x0 {
                Some(t) => parse_x0(&t, n)?,
                None => scn
                    .x0
                    .clone()
                    .ok_or_else(|| UsageError("scenario has no x0; pass --x0".into()))?,
            };
            let design = commands::scenario_design(&scn, &prob, TerminalGain::ZetaProblem)?;
            let traj = commands::simulate(&prob, &design, ell.unwrap_or(scn.horizon), &x0, steps)?;
            ctx.write(
                "trajectory.csv",
                &commands::trajectory_csv(&traj, n, prob.system().input_dim()),
            )?;
            ctx.write("trajectory.gp", commands::TRAJECTORY_GP)?;
            let first = &traj.rows[0];
            if first.j_mu.is_infinite() {
                println!("x0 is outside the feasible region of the MPC problem");
            } else {
                println!(
                    "J_mu(x0) = {}, J*(x0) approx {}, recursively feasible: {}",
                    first.j_mu, first.j_star, traj.feasible
                );
            }
            println!("wrote {}", ctx.out.display());
            Ok(true)
        }
        Command::Reproduce { example } => {
            let summary = reproduce::run(&example, &ctx)?;
            for c in &summary.checks {
                println!(
                    "{} {} = {} (expected {}, {})",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.expected,
                    c.tolerance
                );
            }
            for n in &summary.notes {
                println!("note: {n}");
            }
            println!("wrote {}", ctx.out.join("summary.json").display());
            Ok(summary.pass)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
