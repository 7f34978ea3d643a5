//! Scenario files: TOML with explicit matrix row arrays.

use std::fmt;
use std::path::Path;

use mpc_bounds::cmpc::ConstrainedProblem;
use mpc_bounds::matcore::matrix_from_rows;
use mpc_bounds::{HPolytope, LqSystem, Matrix, SymMatrix, Vector};
use serde::Deserialize;

pub const BUILTINS: [(&str, &str); 3] = [
    ("lqr-scalar", include_str!("../scenarios/lqr-scalar.toml")),
    ("di-2d", include_str!("../scenarios/di-2d.toml")),
    ("ac-4d", include_str!("../scenarios/ac-4d.toml")),
];

/// A malformed scenario or command line; maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    constraints: Option<RawConstraints>,
    terminal: Option<RawTerminal>,
    horizon: usize,
    grid: Option<RawGrid>,
    x0: Option<Vec<f64>>,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstraints {
    state: RawSet,
    input: RawSet,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSet {
    #[serde(rename = "box")]
    radii: Option<Vec<f64>>,
    #[serde(rename = "H")]
    hmat: Option<Vec<Vec<f64>>>,
    h: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTerminal {
    kind: String,
    zeta: Option<f64>,
    #[serde(rename = "K")]
    k: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    resolution: usize,
    bounds: Option<[[f64; 2]; 2]>,
}

#[derive(Debug, Clone)]
pub enum Terminal {
    Dare,
    ZetaDare(f64),
    /// A terminal weight given directly.
    Matrix(SymMatrix),
}

#[derive(Debug, Clone, Copy)]
pub struct GridConfig {
    pub resolution: usize,
    pub bounds: Option<[[f64; 2]; 2]>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub system: LqSystem,
    /// `(X̂, U)`.
    pub constraints: Option<(HPolytope, HPolytope)>,
    pub terminal: Terminal,
    pub horizon: usize,
    pub grid: Option<GridConfig>,
    pub x0: Option<Vector>,
    pub seed: u64,
}

/// A builtin name or a path to a scenario file.
pub fn load_scenario(spec: &str) -> Result<Scenario, UsageError> {
    if let Some((_, text)) = BUILTINS.iter().find(|(name, _)| *name == spec) {
        return parse_scenario(text, spec);
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path).map_err(|e| {
        let names: Vec<_> = BUILTINS.iter().map(|(n, _)| *n).collect();
        UsageError(format!(
            "cannot read scenario `{spec}` ({e}); builtins are {}",
            names.join(", ")
        ))
    })?;
    parse_scenario(&text, spec)
}

pub fn parse_scenario(text: &str, origin: &str) -> Result<Scenario, UsageError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| UsageError(format!("{origin}: {e}")))?;
    let fail = |msg: String| UsageError(format!("{origin}: {msg}"));

    let a = matrix("A", &raw.a, None, None).map_err(fail)?;
    let n = a.nrows();
    if a.ncols() != n {
        return Err(fail(format!("field `A` must be square, got {}x{}", n, a.ncols())));
    }
    let b = matrix("B", &raw.b, Some(n), None).map_err(fail)?;
    let m = b.ncols();
    let q = sym("Q", &raw.q, n).map_err(fail)?;
    let r = sym("R", &raw.r, m).map_err(fail)?;
    let system = LqSystem::new(a, b, q, r).map_err(|e| fail(e.to_string()))?;

    let constraints = match raw.constraints {
        Some(c) => Some((
            set("constraints.state", &c.state, n).map_err(fail)?,
            set("constraints.input", &c.input, m).map_err(fail)?,
        )),
        None => None,
    };

    let terminal = match raw.terminal {
        None => Terminal::Dare,
        Some(t) => match t.kind.as_str() {
            "dare" => Terminal::Dare,
            "zeta_dare" => {
                let z = t
                    .zeta
                    .ok_or_else(|| fail("field `terminal.zeta` is required for kind \"zeta_dare\"".into()))?;
                if !z.is_finite() || z < 1.0 {
                    return Err(fail(format!("field `terminal.zeta` must be >= 1, got {z}")));
                }
                Terminal::ZetaDare(z)
            }
            "matrix" => {
                let rows =
                    t.k.as_ref()
                        .ok_or_else(|| fail("field `terminal.K` is required for kind \"matrix\"".into()))?;
                Terminal::Matrix(sym("terminal.K", rows, n).map_err(fail)?)
            }
            other => {
                return Err(fail(format!(
                    "field `terminal.kind`: unknown kind \"{other}\", expected \"dare\", \"zeta_dare\" or \"matrix\""
                )))
            }
        },
    };

    if raw.horizon == 0 {
        return Err(fail("field `horizon` must be a positive integer".into()));
    }
    let grid = match raw.grid {
        Some(g) => {
            if g.resolution < 2 {
                return Err(fail("field `grid.resolution` must be at least 2".into()));
            }
            if n != 2 {
                return Err(fail("field `grid` requires a two-dimensional state".into()));
            }
            if let Some(bd) = g.bounds {
                if bd
                    .iter()
                    .any(|r| !r[0].is_finite() || !r[1].is_finite() || r[0] >= r[1])
                {
                    return Err(fail(
                        "field `grid.bounds` must be finite [lo, hi] pairs with lo < hi".into(),
                    ));
                }
            }
            Some(GridConfig {
                resolution: g.resolution,
                bounds: g.bounds,
            })
        }
        None => None,
    };
    let x0 = match raw.x0 {
        Some(v) if v.len() != n => return Err(fail(format!("field `x0` has {} entries, expected {n}", v.len()))),
        Some(v) => Some(Vector::from_vec(v)),
        None => None,
    };
    Ok(Scenario {
        name: raw.name,
        system,
        constraints,
        terminal,
        horizon: raw.horizon,
        grid,
        x0,
        seed: raw.seed,
    })
}

fn matrix(field: &str, rows: &[Vec<f64>], nrows: Option<usize>, ncols: Option<usize>) -> Result<Matrix, String> {
    if rows.is_empty() {
        return Err(format!("field `{field}` has no rows"));
    }
    if let Some(nr) = nrows {
        if rows.len() != nr {
            return Err(format!("field `{field}` has {} rows, expected {nr}", rows.len()));
        }
    }
    let nc = ncols.unwrap_or(rows[0].len());
    if nc == 0 {
        return Err(format!("field `{field}`: row 0 is empty"));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != nc {
            return Err(format!(
                "field `{field}`: row {i} has {} entries, expected {nc}",
                row.len()
            ));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(format!("field `{field}`: row {i}, column {j} is not finite"));
        }
    }
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Ok(matrix_from_rows(&refs))
}

fn sym(field: &str, rows: &[Vec<f64>], n: usize) -> Result<SymMatrix, String> {
    let m = matrix(field, rows, Some(n), Some(n))?;
    SymMatrix::new(m).map_err(|e| format!("field `{field}`: {e}"))
}

fn set(field: &str, raw: &RawSet, n: usize) -> Result<HPolytope, String> {
    match (&raw.radii, &raw.hmat, &raw.h) {
        (Some(radii), None, None) => {
            if radii.len() != n {
                return Err(format!("field `{field}.box` has {} entries, expected {n}", radii.len()));
            }
            if let Some(i) = radii.iter().position(|r| r.is_nan() || *r <= 0.0) {
                return Err(format!("field `{field}.box`: entry {i} must be positive"));
            }
            let lo: Vec<f64> = radii.iter().map(|r| -r).collect();
            HPolytope::from_bounds(&lo, radii).map_err(|e| format!("field `{field}`: {e}"))
        }
        (None, Some(hm), Some(hv)) => {
            let h = matrix(&format!("{field}.H"), hm, Some(hv.len()), Some(n))?;
            if let Some(i) = hv.iter().position(|v| !v.is_finite() || *v <= 0.0) {
                return Err(format!(
                    "field `{field}.h`: entry {i} must be positive so the origin is interior"
                ));
            }
            HPolytope::new(h, Vector::from_column_slice(hv)).map_err(|e| format!("field `{field}`: {e}"))
        }
        _ => Err(format!("field `{field}` needs either `box` or both `H` and `h`")),
    }
}

impl Scenario {
    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    /// The constrained problem, or a usage error if the scenario has none.
    pub fn problem(&self) -> anyhow::Result<ConstrainedProblem> {
        let Some((xhat, u)) = &self.constraints else {
            return Err(UsageError(format!("scenario `{}` has no constraints", self.name)).into());
        };
        Ok(ConstrainedProblem::new(self.system.clone(), xhat.clone(), u.clone())?)
    }

    /// `ζ` of the terminal design; 1 for the Riccati solution.
    pub fn zeta(&self) -> Option<f64> {
        match &self.terminal {
            Terminal::Dare => Some(1.0),
            Terminal::ZetaDare(z) => Some(*z),
            Terminal::Matrix(_) => None,
        }
    }

    pub fn terminal_matrix(&self) -> anyhow::Result<SymMatrix> {
        Ok(match &self.terminal {
            Terminal::Dare => self.system.solve_dare()?.0,
            Terminal::ZetaDare(z) => self.system.zeta_dare(*z)?,
            Terminal::Matrix(k) => k.clone(),
        })
    }

    pub fn terminal_label(&self) -> String {
        match &self.terminal {
            Terminal::Dare => "dare".into(),
            Terminal::ZetaDare(z) => format!("zeta_dare({z})"),
            Terminal::Matrix(_) => "matrix".into(),
        }
    }
}
