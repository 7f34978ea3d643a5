//! The subcommands, as functions returning their data and CSV text.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use mpc_bounds::cmpc::{
    feasible_region_grid, suboptimality_map, ConstrainedProblem, CostMapGrid, GridSpec, MpcController, TerminalDesign,
    TerminalGain, REFERENCE_HORIZON,
};
use mpc_bounds::par::Exec;
use mpc_bounds::polytope::{lp_solve, LpStatus};
use mpc_bounds::{Analysis, BoundsReport, HPolytope, SymMatrix, Vector};

use crate::scenario::{Scenario, Terminal};

/// Settings shared by every command.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub out: PathBuf,
    /// Overrides the scenario seed when set.
    pub seed: Option<u64>,
    pub tol_scale: f64,
    pub exec: Exec,
}

impl Ctx {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            out: out.into(),
            seed: None,
            tol_scale: 1.0,
            exec: Exec::best(),
        }
    }

    pub fn seed_for(&self, scn: &Scenario) -> u64 {
        self.seed.unwrap_or(scn.seed)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let path = self.out.join(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Terminal design named by the scenario.
pub fn scenario_design(scn: &Scenario, prob: &ConstrainedProblem, gain: TerminalGain) -> Result<TerminalDesign> {
    Ok(match &scn.terminal {
        Terminal::Dare => TerminalDesign::optimal(prob)?,
        Terminal::ZetaDare(z) => TerminalDesign::zeta(prob, *z, gain)?,
        Terminal::Matrix(k) => {
            let l = prob.system().greedy_gain(k)?;
            TerminalDesign::with_gain(prob, k.clone(), l, f64::NAN)?
        }
    })
}

pub struct BoundsRow {
    pub ell: usize,
    pub report: std::result::Result<BoundsReport, String>,
}

pub fn bounds_rows(analysis: &Analysis, k: &SymMatrix, ells: &[usize], exec: Exec) -> Vec<BoundsRow> {
    let cases: Vec<_> = ells.iter().map(|&l| (k.clone(), l)).collect();
    analysis
        .reports(&cases, exec)
        .into_iter()
        .zip(ells)
        .map(|(r, &ell)| BoundsRow {
            ell,
            report: r.map_err(|e| e.to_string()),
        })
        .collect()
}

pub fn bounds_csv(scenario: &str, terminal: &str, rows: &[BoundsRow]) -> String {
    let mut s = String::from(
        "scenario,terminal,ell,gap,contraction,monotone,newton,alpha,beta_ell,rho,c1,c2,eta,gamma,distance,status\n",
    );
    for row in rows {
        match &row.report {
            Ok(r) => {
                let _ = writeln!(
                    s,
                    "{scenario},{terminal},{},{},{},{},{},{},{},{},{},{},{},{},{},ok",
                    r.ell,
                    r.actual_gap,
                    r.bound_contraction,
                    r.bound_monotone,
                    r.bound_newton,
                    r.alpha,
                    r.beta_ell,
                    r.rho,
                    r.c1,
                    r.c2,
                    r.eta,
                    r.gamma,
                    r.design_distance
                );
            }
            Err(e) => {
                let _ = writeln!(
                    s,
                    "{scenario},{terminal},{},,,,,,,,,,,,,\"{}\"",
                    row.ell,
                    e.replace('"', "'")
                );
            }
        }
    }
    s
}

/// Largest violation of `S ⊆ X` over the rows of `X`, by linear programming.
/// `+∞` when `S` is unbounded in a constrained direction.
pub fn containment_excess(s: &HPolytope, x: &HPolytope) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..x.num_constraints() {
        let c = x.h_matrix().row(i).transpose();
        let lp = lp_solve(&c, s)?;
        match lp.status {
            LpStatus::Optimal => worst = worst.max(lp.value - x.h_vector()[i]),
            LpStatus::Unbounded => return Ok(f64::INFINITY),
            LpStatus::Infeasible => {}
        }
    }
    Ok(worst)
}

pub struct TerminalSetRow {
    pub zeta: f64,
    pub design: TerminalDesign,
    pub volume: f64,
    pub std_error: f64,
    pub ratio: f64,
    pub inside_state_set: bool,
}

pub fn zeta_label(z: f64) -> String {
    format!("{z}").replace('.', "p")
}

/// Terminal sets for `ζ = 1` followed by each requested `ζ`.
pub fn terminal_sets(
    prob: &ConstrainedProblem,
    zetas: &[f64],
    gain: TerminalGain,
    seed: u64,
    exec: Exec,
) -> Result<Vec<TerminalSetRow>> {
    let mut rows = Vec::new();
    let mut base = None;
    for &z in std::iter::once(&1.0).chain(zetas) {
        let design = if z == 1.0 {
            TerminalDesign::optimal(prob)?
        } else {
            TerminalDesign::zeta(prob, z, gain)?
        };
        let vol = design.s.volume(seed, exec)?;
        let base_vol = *base.get_or_insert(vol.value);
        let inside = containment_excess(&design.s, prob.state_set())? <= 1e-7;
        rows.push(TerminalSetRow {
            zeta: z,
            design,
            volume: vol.value,
            std_error: vol.std_error,
            ratio: vol.value / base_vol,
            inside_state_set: inside,
        });
    }
    Ok(rows)
}

pub fn terminal_sets_csv(rows: &[TerminalSetRow]) -> String {
    let mut s = String::from("zeta,volume,volume_std_error,ratio,k_det,constraints,inside_state_set,polytope_file\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.zeta,
            r.volume,
            r.std_error,
            r.ratio,
            r.design.k_det,
            r.design.s.num_constraints(),
            u8::from(r.inside_state_set),
            polytope_file(r.zeta)
        );
    }
    s
}

pub fn polytope_file(zeta: f64) -> String {
    format!("terminal_set_zeta_{}.csv", zeta_label(zeta))
}

pub fn grid_spec(scn: &Scenario, prob: &ConstrainedProblem, resolution: Option<usize>) -> Result<GridSpec> {
    let res = resolution.or(scn.grid.map(|g| g.resolution)).unwrap_or(101);
    Ok(match scn.grid.and_then(|g| g.bounds) {
        Some(b) => GridSpec::new([b[0][0], b[1][0]], [b[0][1], b[1][1]], res)?,
        None => GridSpec::over(prob.state_set(), res)?,
    })
}

pub struct RegionComparison {
    pub design: CostMapGrid,
    pub kstar: CostMapGrid,
    /// Grid points feasible with `K*` but not with the design.
    pub violations: usize,
}

pub fn region_comparison(
    prob: &ConstrainedProblem,
    design: &TerminalDesign,
    ell: usize,
    spec: &GridSpec,
    exec: Exec,
) -> Result<RegionComparison> {
    let d = feasible_region_grid(prob, design, ell, spec, exec)?;
    let k = feasible_region_grid(prob, &TerminalDesign::optimal(prob)?, ell, spec, exec)?;
    let violations = d
        .cells
        .iter()
        .zip(&k.cells)
        .filter(|(a, b)| b.feasible && !a.feasible)
        .count();
    Ok(RegionComparison {
        design: d,
        kstar: k,
        violations,
    })
}

pub fn submap(
    prob: &ConstrainedProblem,
    design: &TerminalDesign,
    ell: usize,
    spec: &GridSpec,
    exec: Exec,
) -> Result<CostMapGrid> {
    Ok(suboptimality_map(prob, design, ell, spec, exec)?)
}

pub struct TrajectoryRow {
    pub k: usize,
    pub x: Vector,
    /// Absent at the last row and where the problem is infeasible.
    pub u: Option<Vector>,
    pub stage_cost: f64,
    pub j_mu: f64,
    pub j_star: f64,
}

pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    /// Every visited state admitted a feasible MPC problem.
    pub feasible: bool,
}

/// Runs the ℓ-horizon policy for `steps` steps, recording `J_μ̃(x_k)` and the
/// ℓ = 100 reference cost at every state.
pub fn simulate(
    prob: &ConstrainedProblem,
    design: &TerminalDesign,
    ell: usize,
    x0: &Vector,
    steps: usize,
) -> Result<Trajectory> {
    let ctrl = MpcController::new(prob, design, ell)?;
    let reference = MpcController::new(prob, design, REFERENCE_HORIZON)?;
    let sys = prob.system();
    let mut rows = Vec::new();
    let mut x = x0.clone();
    let mut feasible = true;
    for k in 0..=steps {
        let j_mu = ctrl.closed_loop_cost(&x)?;
        let j_star = reference.closed_loop_cost(&x)?;
        let u = if k < steps { ctrl.policy(&x)? } else { None };
        let stage_cost = u
            .as_ref()
            .map_or(f64::NAN, |(u, _)| sys.q().quad_form(&x) + sys.r().quad_form(u));
        let next = u.as_ref().map(|(u, _)| sys.a() * &x + sys.b() * u);
        if k < steps && u.is_none() {
            feasible = false;
        }
        rows.push(TrajectoryRow {
            k,
            x: x.clone(),
            u: u.map(|(u, _)| u),
            stage_cost,
            j_mu,
            j_star,
        });
        match next {
            Some(n) => x = n,
            None => break,
        }
    }
    Ok(Trajectory { rows, feasible })
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        v.to_string()
    }
}

pub fn trajectory_csv(t: &Trajectory, n: usize, m: usize) -> String {
    let mut s = String::from("k");
    for i in 1..=n {
        let _ = write!(s, ",x{i}");
    }
    for j in 1..=m {
        let _ = write!(s, ",u{j}");
    }
    s.push_str(",stage_cost,J_mu,J_star_approx\n");
    for r in &t.rows {
        let _ = write!(s, "{}", r.k);
        for v in r.x.iter() {
            let _ = write!(s, ",{v}");
        }
        for j in 0..m {
            let _ = write!(s, ",{}", r.u.as_ref().map_or(String::new(), |u| u[j].to_string()));
        }
        let _ = writeln!(
            s,
            ",{},{},{}",
            fmt_num(r.stage_cost),
            fmt_num(r.j_mu),
            fmt_num(r.j_star)
        );
    }
    s
}

pub const REGION_GP: &str = "\
# Feasible regions on the shared grid.
set datafile separator ','
set xlabel 'x1'
set ylabel 'x2'
set size ratio -1
plot 'region_design.csv' every ::1 using ($3 == 1 ? $1 : 1/0):2 with points pt 7 ps 0.3 title 'design K', \\
     'region_kstar.csv' every ::1 using ($3 == 1 ? $1 : 1/0):2 with points pt 7 ps 0.3 title 'K*', \\
     'region_design_boundary.csv' every ::1 using 1:2 with points pt 1 title 'boundary (design)'
";

pub const SUBMAP_GP: &str = "\
# Relative suboptimality in percent; infeasible points are skipped.
set datafile separator ','
set xlabel 'x1'
set ylabel 'x2'
set size ratio -1
set cblabel 'gap (%)'
plot 'submap.csv' every ::1 using 1:2:(100 * $5) with points pt 5 ps 0.4 palette notitle
";

pub const TRAJECTORY_GP: &str = "\
# Closed-loop cost against the horizon-100 reference along the trajectory.
set datafile separator ','
set key autotitle columnhead
set xlabel 'k'
plot 'trajectory.csv' using 1:(column('J_mu') - column('J_star_approx')) with linespoints title 'J_mu - J*'
";

pub const TERMINAL_GP: &str = "\
# Volume ratios of the terminal sets.
set datafile separator ','
set key autotitle columnhead
set xlabel 'zeta'
set ylabel 'V_K / V_K*'
plot 'terminal_sets.csv' using 1:4 with linespoints
";
