//! Constrained MPC: terminal designs, the receding-horizon policy, closed-loop
//! costs and grid maps over two-dimensional state spaces.
//!
//! Costs follow the extended-real convention: states or inputs outside their
//! sets cost `+∞`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::matcore::{psd_order_holds, spd_solve, SymMatrix, Vector};
use crate::par::Exec;
use crate::polytope::{maximal_invariant_set, HPolytope};
use crate::qp::{CondensedMpc, MpcSolve};
use crate::riccati::{GainPolicy, LqSystem};

/// Horizon used to approximate the optimal cost.
pub const REFERENCE_HORIZON: usize = 100;
/// Simulation cap for closed-loop costs.
pub const MAX_STEPS: usize = 10_000;
/// `ball_tol` relative to the constraint box radius.
pub const BALL_REL_TOL: f64 = 1e-6;
/// Bisection steps used to refine the feasibility boundary.
pub const BOUNDARY_BISECTIONS: usize = 5;

/// System with state constraints `X̂` and input constraints `U`.
#[derive(Debug, Clone)]
pub struct ConstrainedProblem {
    sys: LqSystem,
    xhat: HPolytope,
    u: HPolytope,
    kstar: SymMatrix,
    lstar: GainPolicy,
}

/// Which feedback defines the terminal set of a design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TerminalGain {
    /// `−(B'KB + ζR)⁻¹B'KA`, optimal for the inflated-weight problem.
    #[default]
    ZetaProblem,
    /// `−(B'KB + R)⁻¹B'KA`, the greedy gain of `K` for the original problem.
    Greedy,
}

/// Terminal cost `x'Kx` restricted to the terminal set `S`.
#[derive(Debug, Clone)]
pub struct TerminalDesign {
    pub k: SymMatrix,
    pub s: HPolytope,
    pub gain: GainPolicy,
    pub zeta: f64,
    /// Determinedness index of `S`.
    pub k_det: usize,
}

impl ConstrainedProblem {
    /// `X̂` may be unbounded; `U` must be bounded. Both must contain the
    /// origin in their interior.
    pub fn new(sys: LqSystem, xhat: HPolytope, u: HPolytope) -> Result<Self> {
        if xhat.dim() != sys.state_dim() || u.dim() != sys.input_dim() {
            return Err(Error::invalid("constraint set dimensions do not match the system"));
        }
        for (set, name) in [(&xhat, "state"), (&u, "input")] {
            if set.h_vector().iter().any(|&v| v <= 0.0) {
                return Err(Error::invalid(format!(
                    "{name} constraint set must contain the origin in its interior"
                )));
            }
        }
        if !u.is_bounded()? {
            return Err(Error::invalid("input constraint set must be bounded"));
        }
        let (kstar, lstar) = sys.solve_dare()?;
        Ok(Self {
            sys,
            xhat,
            u,
            kstar,
            lstar,
        })
    }

    pub fn system(&self) -> &LqSystem {
        &self.sys
    }

    pub fn state_set(&self) -> &HPolytope {
        &self.xhat
    }

    pub fn input_set(&self) -> &HPolytope {
        &self.u
    }

    pub fn kstar(&self) -> &SymMatrix {
        &self.kstar
    }

    pub fn lstar(&self) -> &GainPolicy {
        &self.lstar
    }

    /// `x'Qx + u'Ru`, or `+∞` outside `X̂ × U`.
    pub fn stage_cost(&self, x: &Vector, u: &Vector) -> Result<f64> {
        if !self.xhat.contains(x)? || !self.u.contains(u)? {
            return Ok(f64::INFINITY);
        }
        Ok(self.sys.q().quad_form(x) + self.sys.r().quad_form(u))
    }
}

impl TerminalDesign {
    /// `K` from the ζ-inflated Riccati equation, `S` the maximal admissible
    /// invariant set under the chosen gain. `ζ = 1` gives `(K*, L*)`.
    pub fn zeta(prob: &ConstrainedProblem, zeta: f64, gain: TerminalGain) -> Result<Self> {
        let sys = prob.system();
        let k = sys.zeta_dare(zeta)?;
        let l = match gain {
            TerminalGain::ZetaProblem => sys.zeta_gain(&k, zeta)?,
            TerminalGain::Greedy => sys.greedy_gain(&k)?,
        };
        Self::with_gain(prob, k, l, zeta)
    }

    /// The design built from the Riccati solution.
    pub fn optimal(prob: &ConstrainedProblem) -> Result<Self> {
        Self::with_gain(prob, prob.kstar.clone(), prob.lstar.clone(), 1.0)
    }

    pub fn with_gain(prob: &ConstrainedProblem, k: SymMatrix, gain: GainPolicy, zeta: f64) -> Result<Self> {
        let inv = maximal_invariant_set(gain.closed_loop(), prob.state_set(), prob.input_set(), gain.matrix())?;
        Ok(Self {
            k,
            s: inv.set,
            gain,
            zeta,
            k_det: inv.k_det,
        })
    }

    /// The structural conditions that place `x'K x + δ_S` in the region of
    /// decreasing: `K ∈ D`, `F_L(K) ≤ K` for the terminal gain, and `S`
    /// bounded.
    pub fn check(&self, prob: &ConstrainedProblem) -> Result<DesignCheck> {
        let sys = prob.system();
        Ok(DesignCheck {
            k_in_region: sys.in_region_of_decreasing(&self.k)?,
            gain_decreases: psd_order_holds(&self.k, &sys.policy_bellman(&self.gain, &self.k)?)?,
            set_bounded: self.s.is_bounded()?,
        })
    }

    /// `x'Kx` on `S`, `+∞` elsewhere.
    pub fn terminal_cost(&self, x: &Vector) -> Result<f64> {
        if self.s.contains(x)? {
            Ok(self.k.quad_form(x))
        } else {
            Ok(f64::INFINITY)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DesignCheck {
    pub k_in_region: bool,
    pub gain_decreases: bool,
    pub set_bounded: bool,
}

impl DesignCheck {
    pub fn all(&self) -> bool {
        self.k_in_region && self.gain_decreases && self.set_bounded
    }
}

/// The ℓ-horizon MPC policy for one terminal design, prepared for repeated
/// evaluation.
#[derive(Debug, Clone)]
pub struct MpcController<'a> {
    prob: &'a ConstrainedProblem,
    design: &'a TerminalDesign,
    ell: usize,
    condensed: CondensedMpc,
    tail: SymMatrix,
    /// Level `c` of the invariant ellipsoid `x'K_L̃x ≤ c` on which the
    /// unconstrained minimizer is feasible.
    linear_level: f64,
    ball_tol: f64,
}

/// A simulated closed loop.
#[derive(Debug, Clone, Default)]
pub struct Rollout {
    pub states: Vec<Vector>,
    pub controls: Vec<Vector>,
    pub stage_costs: Vec<f64>,
    /// `(T^ℓ J)(x_k)` for each visited state.
    pub values: Vec<f64>,
    /// `x'K_L̃x` at the final state.
    pub tail: f64,
    /// Accumulated cost plus tail; `+∞` if a QP became infeasible.
    pub total: f64,
    pub feasible: bool,
}

impl<'a> MpcController<'a> {
    pub fn new(prob: &'a ConstrainedProblem, design: &'a TerminalDesign, ell: usize) -> Result<Self> {
        let sys = prob.system();
        let condensed = CondensedMpc::new(
            sys,
            prob.state_set(),
            prob.input_set(),
            &design.s,
            &design.k,
            ell,
            Some(prob.lstar()),
        )?;
        let kbar = sys.iterate_bellman(&design.k, ell - 1)?;
        let tail = sys.closed_loop_cost(&sys.greedy_gain(&kbar)?)?;
        let linear_level = linear_level(&condensed, &tail)?;
        let radius_set = if prob.state_set().is_bounded()? {
            prob.state_set()
        } else {
            &design.s
        };
        let (lo, hi) = radius_set.bounding_box()?;
        let radius = lo.iter().chain(hi.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(Self {
            prob,
            design,
            ell,
            condensed,
            tail,
            linear_level,
            ball_tol: BALL_REL_TOL * radius,
        })
    }

    pub fn horizon(&self) -> usize {
        self.ell
    }

    pub fn ball_tol(&self) -> f64 {
        self.ball_tol
    }

    /// `K_L̃` of the unconstrained MPC gain, used as the closed-loop tail.
    pub fn tail_matrix(&self) -> &SymMatrix {
        &self.tail
    }

    /// Full solve at `x`.
    pub fn solve(&self, x: &Vector) -> Result<MpcSolve> {
        self.condensed.solve(x)
    }

    /// First control and `(T^ℓ J)(x)`, or `None` when infeasible.
    pub fn policy(&self, x: &Vector) -> Result<Option<(Vector, f64)>> {
        let s = self.condensed.solve(x)?;
        Ok(s.is_feasible().then_some((s.u0, s.value)))
    }

    /// `(T^ℓ J)(x)`, `+∞` when infeasible.
    pub fn value(&self, x: &Vector) -> Result<f64> {
        Ok(self.condensed.solve(x)?.value)
    }

    /// True when the policy is `L̃x` from `x` onwards, so the remaining
    /// closed-loop cost is exactly `x'K_L̃x`.
    pub fn in_linear_region(&self, x: &Vector) -> bool {
        self.tail.quad_form(x) <= self.linear_level
    }

    /// Simulates the closed loop until the state is in `S` and within
    /// `ball_tol` of the origin, or inside the invariant ellipsoid where the
    /// policy is linear, then adds `x'K_L̃x`.
    pub fn rollout(&self, x0: &Vector) -> Result<Rollout> {
        let sys = self.prob.system();
        let mut out = Rollout {
            feasible: true,
            ..Default::default()
        };
        let mut x = x0.clone();
        let mut acc = 0.0;
        for _ in 0..MAX_STEPS {
            if self.in_linear_region(&x) || (x.norm() <= self.ball_tol && self.design.s.contains(&x)?) {
                out.tail = self.tail.quad_form(&x);
                out.total = acc + out.tail;
                out.states.push(x);
                return Ok(out);
            }
            let sol = self.condensed.solve(&x)?;
            if !sol.is_feasible() {
                out.feasible = false;
                out.total = f64::INFINITY;
                out.states.push(x);
                out.values.push(f64::INFINITY);
                return Ok(out);
            }
            let stage = sys.q().quad_form(&x) + sys.r().quad_form(&sol.u0);
            acc += stage;
            let next = sys.a() * &x + sys.b() * &sol.u0;
            out.states.push(x);
            out.controls.push(sol.u0);
            out.stage_costs.push(stage);
            out.values.push(sol.value);
            x = next;
        }
        Err(Error::NotConverged {
            what: "closed-loop simulation",
            iterations: MAX_STEPS,
            residual: x.norm(),
        })
    }

    /// `J_μ̃(x0)`.
    pub fn closed_loop_cost(&self, x0: &Vector) -> Result<f64> {
        Ok(self.rollout(x0)?.total)
    }
}

/// Largest `c` with `{x : x'Px ≤ c}` inside the region where the
/// unconstrained minimizer is feasible. The ellipsoid is invariant under the
/// unconstrained closed loop because `P = K_L̃` is its Lyapunov matrix.
fn linear_level(condensed: &CondensedMpc, p: &SymMatrix) -> Result<f64> {
    let (w, g0, _) = condensed.unconstrained_region()?;
    let pinv = spd_solve(p.as_matrix(), &w.transpose())?;
    let mut level = f64::INFINITY;
    for i in 0..w.nrows() {
        let s = w.row(i).dot(&pinv.column(i).transpose());
        if s > 0.0 {
            level = level.min(g0[i] * g0[i] / s);
        }
    }
    Ok(level * (1.0 - 1e-9))
}

/// `(TJ)(x)` for `J = x'Kx + δ_S`.
pub fn bellman_apply(prob: &ConstrainedProblem, design: &TerminalDesign, x: &Vector) -> Result<f64> {
    MpcController::new(prob, design, 1)?.value(x)
}

/// `J_μ̃(x0)` for the ℓ-horizon policy.
pub fn closed_loop_cost_fn(prob: &ConstrainedProblem, design: &TerminalDesign, ell: usize, x0: &Vector) -> Result<f64> {
    MpcController::new(prob, design, ell)?.closed_loop_cost(x0)
}

/// The closed-loop cost of the ℓ = 100 policy, an upper approximation of `J*`.
pub fn approx_optimal_cost(prob: &ConstrainedProblem, design: &TerminalDesign, x0: &Vector) -> Result<f64> {
    closed_loop_cost_fn(prob, design, REFERENCE_HORIZON, x0)
}

/// Uniform grid over a rectangle in the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub resolution: usize,
}

impl GridSpec {
    pub fn new(lo: [f64; 2], hi: [f64; 2], resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::invalid("grid resolution must be at least 2"));
        }
        if !(lo[0] < hi[0] && lo[1] < hi[1]) || lo.iter().chain(hi.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid bounds must be finite with lo < hi"));
        }
        Ok(Self { lo, hi, resolution })
    }

    /// The bounding box of `X̂`.
    pub fn over(set: &HPolytope, resolution: usize) -> Result<Self> {
        if set.dim() != 2 {
            return Err(Error::invalid("grids are two-dimensional"));
        }
        let (lo, hi) = set.bounding_box()?;
        Self::new([lo[0], lo[1]], [hi[0], hi[1]], resolution)
    }

    pub fn len(&self) -> usize {
        self.resolution * self.resolution
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn coord(&self, axis: usize, i: usize) -> f64 {
        let t = i as f64 / (self.resolution - 1) as f64;
        // Endpoints are exact.
        if i + 1 == self.resolution {
            self.hi[axis]
        } else {
            self.lo[axis] + t * (self.hi[axis] - self.lo[axis])
        }
    }

    /// Point `idx` in row-major order: `x2` indexes rows, `x1` columns.
    pub fn point(&self, idx: usize) -> [f64; 2] {
        let (row, col) = (idx / self.resolution, idx % self.resolution);
        [self.coord(0, col), self.coord(1, row)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub x: [f64; 2],
    pub feasible: bool,
    /// `+∞` exactly when infeasible.
    pub cost: f64,
    /// Relative gap against the reference cost; NaN where undefined.
    pub rel_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostMapGrid {
    pub spec: GridSpec,
    pub cells: Vec<GridCell>,
    /// Feasibility boundary points refined by bisection along grid edges.
    pub boundary: Vec<[f64; 2]>,
    /// `key=value` lines written into the CSV header.
    pub metadata: Vec<(String, String)>,
}

impl CostMapGrid {
    pub fn feasible_count(&self) -> usize {
        self.cells.iter().filter(|c| c.feasible).count()
    }

    /// Largest finite relative gap and where it occurs.
    pub fn max_rel_gap(&self) -> Option<(f64, [f64; 2])> {
        self.cells
            .iter()
            .filter(|c| c.rel_gap.is_finite())
            .fold(None, |best: Option<(f64, [f64; 2])>, c| match best {
                Some((g, _)) if g >= c.rel_gap => best,
                _ => Some((c.rel_gap, c.x)),
            })
    }

    /// Metadata as `# key=value` lines, then `x1,x2,feasible,cost,rel_gap`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let sp = &self.spec;
        let _ = writeln!(
            s,
            "# grid x1=[{},{}] x2=[{},{}] resolution={} order=row-major(x2 rows, x1 columns)",
            sp.lo[0], sp.hi[0], sp.lo[1], sp.hi[1], sp.resolution
        );
        for (k, v) in &self.metadata {
            let _ = writeln!(s, "# {k}={v}");
        }
        s.push_str("x1,x2,feasible,cost,rel_gap\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                c.x[0],
                c.x[1],
                u8::from(c.feasible),
                fmt_cost(c.cost),
                if c.rel_gap.is_nan() {
                    String::new()
                } else {
                    c.rel_gap.to_string()
                }
            );
        }
        s
    }

    pub fn boundary_csv(&self) -> String {
        let mut s = String::from("x1,x2\n");
        for p in &self.boundary {
            let _ = writeln!(s, "{},{}", p[0], p[1]);
        }
        s
    }
}

fn fmt_cost(c: f64) -> String {
    if c.is_infinite() {
        "inf".into()
    } else {
        c.to_string()
    }
}

fn v2(p: [f64; 2]) -> Vector {
    Vector::from_column_slice(&p)
}

/// Feasibility and optimal value of the ℓ-horizon problem at every grid
/// point, with the boundary refined along grid edges.
pub fn feasible_region_grid(
    prob: &ConstrainedProblem,
    design: &TerminalDesign,
    ell: usize,
    spec: &GridSpec,
    exec: Exec,
) -> Result<CostMapGrid> {
    if prob.system().state_dim() != 2 {
        return Err(Error::invalid("grid maps require a two-dimensional state"));
    }
    let ctrl = MpcController::new(prob, design, ell)?;
    let cells = exec.try_map_range(spec.len(), |i| {
        let x = spec.point(i);
        let value = ctrl.value(&v2(x))?;
        Ok::<_, Error>(GridCell {
            x,
            feasible: value.is_finite(),
            cost: value,
            rel_gap: f64::NAN,
        })
    })?;
    let boundary = refine_boundary(&ctrl, spec, &cells, exec)?;
    Ok(CostMapGrid {
        spec: *spec,
        cells,
        boundary,
        metadata: vec![
            ("map".into(), "feasible-region".into()),
            ("ell".into(), ell.to_string()),
            ("zeta".into(), design.zeta.to_string()),
            ("cost".into(), "optimal value of the ell-horizon problem".into()),
        ],
    })
}

/// Bisects every grid edge whose endpoints disagree on feasibility.
fn refine_boundary(ctrl: &MpcController, spec: &GridSpec, cells: &[GridCell], exec: Exec) -> Result<Vec<[f64; 2]>> {
    let r = spec.resolution;
    let mut edges = Vec::new();
    for row in 0..r {
        for col in 0..r {
            let i = row * r + col;
            if col + 1 < r && cells[i].feasible != cells[i + 1].feasible {
                edges.push((i, i + 1));
            }
            if row + 1 < r && cells[i].feasible != cells[i + r].feasible {
                edges.push((i, i + r));
            }
        }
    }
    exec.try_map_range(edges.len(), |e| {
        let (a, b) = edges[e];
        let (mut inside, mut outside) = if cells[a].feasible {
            (cells[a].x, cells[b].x)
        } else {
            (cells[b].x, cells[a].x)
        };
        for _ in 0..BOUNDARY_BISECTIONS {
            let mid = [(inside[0] + outside[0]) / 2.0, (inside[1] + outside[1]) / 2.0];
            if ctrl.value(&v2(mid))?.is_finite() {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        Ok(inside)
    })
}

/// `(J_μ̃ − J*)/J*` over the feasible grid points, with `J*` approximated by
/// the ℓ = 100 closed loop. The origin gets NaN.
pub fn suboptimality_map(
    prob: &ConstrainedProblem,
    design: &TerminalDesign,
    ell: usize,
    spec: &GridSpec,
    exec: Exec,
) -> Result<CostMapGrid> {
    if prob.system().state_dim() != 2 {
        return Err(Error::invalid("grid maps require a two-dimensional state"));
    }
    let ctrl = MpcController::new(prob, design, ell)?;
    let reference = MpcController::new(prob, design, REFERENCE_HORIZON)?;
    let cells = exec.try_map_range(spec.len(), |i| {
        let x = spec.point(i);
        let xv = v2(x);
        let cost = ctrl.closed_loop_cost(&xv)?;
        if !cost.is_finite() {
            return Ok::<_, Error>(GridCell {
                x,
                feasible: false,
                cost,
                rel_gap: f64::NAN,
            });
        }
        let jstar = reference.closed_loop_cost(&xv)?;
        let rel_gap = if jstar > 0.0 && jstar.is_finite() {
            (cost - jstar) / jstar
        } else {
            f64::NAN
        };
        Ok(GridCell {
            x,
            feasible: true,
            cost,
            rel_gap,
        })
    })?;
    Ok(CostMapGrid {
        spec: *spec,
        cells,
        boundary: Vec::new(),
        metadata: vec![
            ("map".into(), "relative-suboptimality".into()),
            ("ell".into(), ell.to_string()),
            ("zeta".into(), design.zeta.to_string()),
            ("cost".into(), "closed-loop cost of the ell-horizon policy".into()),
            (
                "rel_gap".into(),
                format!("(cost - Jref)/Jref with Jref the closed-loop cost at horizon {REFERENCE_HORIZON}"),
            ),
        ],
    })
}
