//! Half-space polytopes `{x | Hx ≤ h}`, a dense simplex LP and maximal
//! constraint-admissible invariant sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matcore::{ensure_finite, is_stable, Matrix, Vector};
use crate::par::Exec;

/// Slack allowed in membership tests.
pub const FEAS_TOL: f64 = 1e-9;
/// Optimality and redundancy tolerance of the LP.
pub const LP_TOL: f64 = 1e-9;
/// Gilbert–Tan iteration cap.
pub const MAX_INVARIANT_ITERATIONS: usize = 500;
/// Samples used by the Monte Carlo volume estimate.
pub const MC_SAMPLES: usize = 1_000_000;

const PIVOT_TOL: f64 = 1e-11;
const MAX_PIVOTS: usize = 50_000;
const DEGENERATE_STREAK: usize = 50;
const MC_CHUNK: usize = 50_000;

#[derive(Debug, Clone, PartialEq)]
pub struct HPolytope {
    h: Matrix,
    rhs: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Maximizer; empty unless `status` is optimal.
    pub x: Vector,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeEstimate {
    pub value: f64,
    /// Zero for exact (one- and two-dimensional) volumes.
    pub std_error: f64,
    pub samples: usize,
}

/// Maximal invariant set together with its determinedness index.
#[derive(Debug, Clone)]
pub struct InvariantSet {
    pub set: HPolytope,
    pub k_det: usize,
}

impl HPolytope {
    pub fn new(h: Matrix, rhs: Vector) -> Result<Self> {
        if h.ncols() == 0 {
            return Err(Error::invalid("polytope dimension must be positive"));
        }
        if h.nrows() != rhs.len() {
            return Err(Error::invalid(format!(
                "H has {} rows but h has {} entries",
                h.nrows(),
                rhs.len()
            )));
        }
        ensure_finite(&h, "H")?;
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("h has non-finite entries"));
        }
        for (i, row) in h.row_iter().enumerate() {
            if row.norm() == 0.0 {
                return Err(Error::invalid(format!("row {i} of H is zero")));
            }
        }
        Ok(Self { h, rhs })
    }

    /// The whole space `ℝⁿ` (no half-spaces).
    pub fn universe(n: usize) -> Self {
        Self {
            h: Matrix::zeros(0, n),
            rhs: Vector::zeros(0),
        }
    }

    /// `{x | lower ≤ x ≤ upper}`; infinite bounds are skipped.
    pub fn from_bounds(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::invalid("bound vectors must be nonempty and of equal length"));
        }
        let n = lower.len();
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for i in 0..n {
            if lower[i].is_nan() || upper[i].is_nan() || lower[i] > upper[i] {
                return Err(Error::invalid(format!(
                    "invalid bounds [{}, {}] on coordinate {i}",
                    lower[i], upper[i]
                )));
            }
            if upper[i].is_finite() {
                let mut r = vec![0.0; n];
                r[i] = 1.0;
                rows.push(r);
                rhs.push(upper[i]);
            }
            if lower[i].is_finite() {
                let mut r = vec![0.0; n];
                r[i] = -1.0;
                rows.push(r);
                rhs.push(-lower[i]);
            }
        }
        let h = Matrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        Self::new(h, Vector::from_vec(rhs))
    }

    /// `{x | |xᵢ| ≤ rᵢ}`; infinite radii leave a coordinate free.
    pub fn symmetric_box(radii: &[f64]) -> Result<Self> {
        let lower: Vec<f64> = radii.iter().map(|r| -r).collect();
        Self::from_bounds(&lower, radii)
    }

    pub fn dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn num_constraints(&self) -> usize {
        self.h.nrows()
    }

    pub fn h_matrix(&self) -> &Matrix {
        &self.h
    }

    pub fn h_vector(&self) -> &Vector {
        &self.rhs
    }

    fn check_point(&self, x: &Vector) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "point has dimension {}, polytope has dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Largest `Hᵢx − hᵢ`; nonpositive inside. `-∞` for the universe.
    pub fn max_violation(&self, x: &Vector) -> Result<f64> {
        self.check_point(x)?;
        let r = &self.h * x - &self.rhs;
        Ok(r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    /// `Hx ≤ h + FEAS_TOL` componentwise.
    pub fn contains(&self, x: &Vector) -> Result<bool> {
        Ok(self.max_violation(x)? <= FEAS_TOL)
    }

    /// `{x | Mx ∈ self}`.
    pub fn preimage(&self, m: &Matrix) -> Result<Self> {
        if m.nrows() != self.dim() {
            return Err(Error::invalid(format!(
                "map has {} outputs, polytope dimension is {}",
                m.nrows(),
                self.dim()
            )));
        }
        let hm = &self.h * m;
        let keep: Vec<usize> = (0..hm.nrows()).filter(|&i| hm.row(i).norm() > 0.0).collect();
        for i in 0..hm.nrows() {
            if !keep.contains(&i) && self.rhs[i] < 0.0 {
                return Err(Error::domain("preimage is empty"));
            }
        }
        Ok(Self {
            h: hm.select_rows(keep.iter()),
            rhs: self.rhs.select_rows(keep.iter()),
        })
    }

    pub fn intersect(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::invalid("cannot intersect polytopes of different dimension"));
        }
        let r1 = self.num_constraints();
        let r = r1 + other.num_constraints();
        let n = self.dim();
        let h = Matrix::from_fn(r, n, |i, j| if i < r1 { self.h[(i, j)] } else { other.h[(i - r1, j)] });
        let rhs = Vector::from_fn(r, |i, _| if i < r1 { self.rhs[i] } else { other.rhs[i - r1] });
        Ok(Self { h, rhs })
    }

    /// Same set with every row scaled to unit norm.
    pub fn normalized(&self) -> Self {
        let mut h = self.h.clone();
        let mut rhs = self.rhs.clone();
        for i in 0..h.nrows() {
            let s = h.row(i).norm();
            h.row_mut(i).unscale_mut(s);
            rhs[i] /= s;
        }
        Self { h, rhs }
    }

    /// Drops rows implied by the others.
    pub fn remove_redundant(&self) -> Result<Self> {
        let mut keep: Vec<bool> = vec![true; self.num_constraints()];
        for i in 0..self.num_constraints() {
            keep[i] = false;
            let others: Vec<usize> = (0..keep.len()).filter(|&j| keep[j]).collect();
            let rest = Self {
                h: self.h.select_rows(others.iter()),
                rhs: self.rhs.select_rows(others.iter()),
            };
            let c = self.h.row(i).transpose();
            let sol = lp_solve(&c, &rest)?;
            keep[i] = match sol.status {
                LpStatus::Optimal => sol.value > self.rhs[i] + LP_TOL * self.rhs[i].abs().max(1.0),
                LpStatus::Unbounded => true,
                LpStatus::Infeasible => return Err(Error::Infeasible("polytope is empty".into())),
            };
        }
        let rows: Vec<usize> = (0..keep.len()).filter(|&j| keep[j]).collect();
        Ok(Self {
            h: self.h.select_rows(rows.iter()),
            rhs: self.rhs.select_rows(rows.iter()),
        })
    }

    /// Coordinate bounds `(lower, upper)`; domain error when unbounded.
    pub fn bounding_box(&self) -> Result<(Vector, Vector)> {
        let n = self.dim();
        let mut lo = Vector::zeros(n);
        let mut hi = Vector::zeros(n);
        for i in 0..n {
            for (sign, out) in [(1.0, &mut hi), (-1.0, &mut lo)] {
                let mut c = Vector::zeros(n);
                c[i] = sign;
                let sol = lp_solve(&c, self)?;
                match sol.status {
                    LpStatus::Optimal => out[i] = sign * sol.value,
                    LpStatus::Unbounded => {
                        return Err(Error::domain(format!("polytope is unbounded along coordinate {i}")))
                    }
                    LpStatus::Infeasible => return Err(Error::Infeasible("polytope is empty".into())),
                }
            }
        }
        Ok((lo, hi))
    }

    pub fn is_bounded(&self) -> Result<bool> {
        match self.bounding_box() {
            Ok(_) => Ok(true),
            Err(Error::Domain(_)) => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// Center and radius of the largest inscribed ball.
    pub fn chebyshev_ball(&self) -> Result<(Vector, f64)> {
        let n = self.dim();
        let r = self.num_constraints();
        // Variables (x, t): Hx + ‖Hᵢ‖ t ≤ h, −t ≤ 0.
        let h = Matrix::from_fn(r + 1, n + 1, |i, j| match (i < r, j < n) {
            (true, true) => self.h[(i, j)],
            (true, false) => self.h.row(i).norm(),
            (false, true) => 0.0,
            (false, false) => -1.0,
        });
        let rhs = Vector::from_fn(r + 1, |i, _| if i < r { self.rhs[i] } else { 0.0 });
        let mut c = Vector::zeros(n + 1);
        c[n] = 1.0;
        let sol = lp_solve(&c, &Self { h, rhs })?;
        match sol.status {
            LpStatus::Optimal => Ok((sol.x.rows(0, n).into_owned(), sol.value)),
            LpStatus::Unbounded => Err(Error::domain("polytope contains arbitrarily large balls")),
            LpStatus::Infeasible => Err(Error::Infeasible("polytope is empty".into())),
        }
    }

    /// Counterclockwise vertices of a bounded two-dimensional polytope; empty
    /// when the interior is empty.
    pub fn vertices_2d(&self) -> Result<Vec<[f64; 2]>> {
        if self.dim() != 2 {
            return Err(Error::invalid("vertex enumeration is implemented for dimension 2 only"));
        }
        let p = self.normalized();
        let r = p.num_constraints();
        let scale = p.rhs.amax().max(1.0);
        let mut verts: Vec<[f64; 2]> = Vec::new();
        for i in 0..r {
            for j in (i + 1)..r {
                let (a, b, c, d) = (p.h[(i, 0)], p.h[(i, 1)], p.h[(j, 0)], p.h[(j, 1)]);
                let det = a * d - b * c;
                if det.abs() < 1e-12 {
                    continue;
                }
                let x = (p.rhs[i] * d - b * p.rhs[j]) / det;
                let y = (a * p.rhs[j] - c * p.rhs[i]) / det;
                let v = Vector::from_vec(vec![x, y]);
                if p.max_violation(&v)? <= 1e-9 * scale
                    && !verts
                        .iter()
                        .any(|w| (w[0] - x).abs() <= 1e-9 * scale && (w[1] - y).abs() <= 1e-9 * scale)
                {
                    verts.push([x, y]);
                }
            }
        }
        if verts.len() < 3 {
            return Ok(Vec::new());
        }
        let cx = verts.iter().map(|v| v[0]).sum::<f64>() / verts.len() as f64;
        let cy = verts.iter().map(|v| v[1]).sum::<f64>() / verts.len() as f64;
        verts.sort_by(|u, v| {
            let au = (u[1] - cy).atan2(u[0] - cx);
            let av = (v[1] - cy).atan2(v[0] - cx);
            au.total_cmp(&av)
        });
        if shoelace(&verts) <= 1e-12 * scale * scale {
            return Ok(Vec::new());
        }
        Ok(verts)
    }

    /// Exact in one and two dimensions, Monte Carlo with [`MC_SAMPLES`]
    /// samples otherwise.
    pub fn volume(&self, seed: u64, exec: Exec) -> Result<VolumeEstimate> {
        match self.dim() {
            1 => {
                let (lo, hi) = self.bounding_box()?;
                Ok(VolumeEstimate {
                    value: hi[0] - lo[0],
                    std_error: 0.0,
                    samples: 0,
                })
            }
            2 => {
                self.bounding_box()?;
                Ok(VolumeEstimate {
                    value: shoelace(&self.vertices_2d()?),
                    std_error: 0.0,
                    samples: 0,
                })
            }
            _ => self.monte_carlo_volume(MC_SAMPLES, seed, exec),
        }
    }

    /// Hit-or-miss estimate over the bounding box. Samples are drawn in fixed
    /// chunks, each with its own seeded stream, so the result does not depend
    /// on `exec`.
    pub fn monte_carlo_volume(&self, samples: usize, seed: u64, exec: Exec) -> Result<VolumeEstimate> {
        if samples == 0 {
            return Err(Error::invalid("sample count must be positive"));
        }
        let (lo, hi) = self.bounding_box()?;
        let n = self.dim();
        let box_vol: f64 = (0..n).map(|i| hi[i] - lo[i]).product();
        if box_vol <= 0.0 {
            return Ok(VolumeEstimate {
                value: 0.0,
                std_error: 0.0,
                samples,
            });
        }
        let rows: Vec<f64> = self.h.transpose().iter().copied().collect();
        let chunks = samples.div_ceil(MC_CHUNK);
        let hits: Vec<usize> = exec.map_range(chunks, |c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut x = vec![0.0; n];
            let mut hits = 0;
            for _ in 0..count {
                for i in 0..n {
                    x[i] = lo[i] + (hi[i] - lo[i]) * rng.random::<f64>();
                }
                let inside = rows
                    .chunks_exact(n)
                    .zip(self.rhs.iter())
                    .all(|(row, b)| row.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>() <= *b);
                if inside {
                    hits += 1;
                }
            }
            hits
        });
        let total: usize = hits.iter().sum();
        let p = total as f64 / samples as f64;
        Ok(VolumeEstimate {
            value: box_vol * p,
            std_error: box_vol * (p * (1.0 - p) / samples as f64).sqrt(),
            samples,
        })
    }

    /// `count` approximately uniform points by hit-and-run from the
    /// Chebyshev center, keeping every `thin`-th step.
    pub fn sample_hit_and_run(&self, count: usize, thin: usize, seed: u64) -> Result<Vec<Vector>> {
        let (mut x, radius) = self.chebyshev_ball()?;
        if radius <= 0.0 {
            return Err(Error::domain("polytope has empty interior"));
        }
        let n = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        let thin = thin.max(1);
        while out.len() < count {
            for _ in 0..thin {
                let d = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let d = d.normalize();
                let hd = &self.h * &d;
                let slack = &self.rhs - &self.h * &x;
                let (mut tmin, mut tmax) = (f64::NEG_INFINITY, f64::INFINITY);
                for i in 0..hd.len() {
                    if hd[i] > 1e-14 {
                        tmax = tmax.min(slack[i] / hd[i]);
                    } else if hd[i] < -1e-14 {
                        tmin = tmin.max(slack[i] / hd[i]);
                    }
                }
                if !(tmin.is_finite() && tmax.is_finite()) {
                    return Err(Error::domain("polytope is unbounded"));
                }
                let t = tmin + (tmax - tmin) * rng.random::<f64>();
                x += d * t;
            }
            out.push(x.clone());
        }
        Ok(out)
    }

    /// One half-space per line: `H` entries then `h`, after a header.
    pub fn to_csv(&self) -> String {
        let n = self.dim();
        let mut s = String::new();
        for j in 0..n {
            s.push_str(&format!("H{},", j + 1));
        }
        s.push_str("h\n");
        for i in 0..self.num_constraints() {
            for j in 0..n {
                s.push_str(&format!("{},", self.h[(i, j)]));
            }
            s.push_str(&format!("{}\n", self.rhs[i]));
        }
        s
    }
}

fn shoelace(verts: &[[f64; 2]]) -> f64 {
    let k = verts.len();
    let mut a = 0.0;
    for i in 0..k {
        let (p, q) = (verts[i], verts[(i + 1) % k]);
        a += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * a.abs()
}

/// Dense simplex tableau in standard form `max c'y, Ay = b, y ≥ 0, b ≥ 0`.
struct Tableau {
    rows: usize,
    cols: usize,
    /// Row-major, `rows + 1` rows of `cols + 1` entries; the last row holds
    /// reduced costs and the last column the right-hand side.
    t: Vec<f64>,
    basis: Vec<usize>,
}

enum PivotOutcome {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.cols + 1) + j]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.cols + 1;
        let p = self.t[pr * w + pc];
        for j in 0..w {
            self.t[pr * w + j] /= p;
        }
        for i in 0..=self.rows {
            if i == pr {
                continue;
            }
            let f = self.t[i * w + pc];
            if f != 0.0 {
                for j in 0..w {
                    self.t[i * w + j] -= f * self.t[pr * w + j];
                }
            }
        }
        self.basis[pr] = pc;
    }

    /// Primal simplex on the current objective row. Columns `>= allowed`
    /// never enter. Largest-coefficient entering rule, switching to Bland's
    /// rule after a run of degenerate pivots.
    fn run(&mut self, allowed: usize) -> Result<PivotOutcome> {
        let mut degenerate = 0usize;
        for _ in 0..MAX_PIVOTS {
            let bland = degenerate >= DEGENERATE_STREAK;
            let obj = self.rows;
            let mut entering = None;
            let mut best = -LP_TOL;
            for j in 0..allowed {
                let d = self.at(obj, j);
                if d < best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(pc) = entering else {
                return Ok(PivotOutcome::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, pc);
                if a > PIVOT_TOL {
                    let ratio = self.at(i, self.cols) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((k, r)) => {
                            if ratio < r - 1e-14 || (ratio <= r + 1e-14 && self.basis[i] < self.basis[k]) {
                                Some((i, ratio))
                            } else {
                                Some((k, r))
                            }
                        }
                    }
                }
            }
            let Some((pr, ratio)) = leave else {
                return Ok(PivotOutcome::Unbounded);
            };
            degenerate = if ratio.abs() <= 1e-14 { degenerate + 1 } else { 0 };
            self.pivot(pr, pc);
        }
        Err(Error::NotConverged {
            what: "simplex",
            iterations: MAX_PIVOTS,
            residual: f64::NAN,
        })
    }
}

/// Maximizes `c'x` over `P` by a two-phase simplex method.
pub fn lp_solve(c: &Vector, p: &HPolytope) -> Result<LpSolution> {
    let n = p.dim();
    if c.len() != n {
        return Err(Error::invalid(format!(
            "objective has length {}, polytope dimension is {n}",
            c.len()
        )));
    }
    let m = p.num_constraints();
    if m == 0 {
        return Ok(if c.iter().all(|v| *v == 0.0) {
            LpSolution {
                status: LpStatus::Optimal,
                x: Vector::zeros(n),
                value: 0.0,
            }
        } else {
            LpSolution {
                status: LpStatus::Unbounded,
                x: Vector::zeros(0),
                value: f64::INFINITY,
            }
        });
    }
    // Columns: x⁺ (n), x⁻ (n), slacks (m), artificials (one per negative rhs).
    let neg: Vec<usize> = (0..m).filter(|&i| p.rhs[i] < 0.0).collect();
    let n_struct = 2 * n + m;
    let cols = n_struct + neg.len();
    let w = cols + 1;
    let mut t = vec![0.0; (m + 1) * w];
    let mut basis = vec![0; m];
    for i in 0..m {
        let sign = if p.rhs[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i * w + j] = sign * p.h[(i, j)];
            t[i * w + n + j] = -sign * p.h[(i, j)];
        }
        t[i * w + 2 * n + i] = sign;
        t[i * w + cols] = sign * p.rhs[i];
        basis[i] = 2 * n + i;
    }
    for (k, &i) in neg.iter().enumerate() {
        t[i * w + n_struct + k] = 1.0;
        basis[i] = n_struct + k;
    }
    let mut tab = Tableau {
        rows: m,
        cols,
        t,
        basis,
    };

    if !neg.is_empty() {
        // Phase 1: maximize −Σ artificials.
        for k in 0..neg.len() {
            tab.t[m * w + n_struct + k] = 1.0;
        }
        for &i in &neg {
            for j in 0..w {
                tab.t[m * w + j] -= tab.t[i * w + j];
            }
        }
        tab.run(cols)?;
        let infeas = -tab.at(m, cols);
        let scale = p.rhs.amax().max(1.0);
        if infeas > LP_TOL * scale {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: Vector::zeros(0),
                value: f64::NAN,
            });
        }
        // Drive remaining artificials out of the basis.
        for i in 0..m {
            if tab.basis[i] >= n_struct {
                if let Some(j) = (0..n_struct).find(|&j| tab.at(i, j).abs() > 1e-9) {
                    tab.pivot(i, j);
                }
            }
        }
    }

    // Phase 2 objective row: −c on x⁺, +c on x⁻.
    for j in 0..w {
        tab.t[m * w + j] = 0.0;
    }
    for j in 0..n {
        tab.t[m * w + j] = -c[j];
        tab.t[m * w + n + j] = c[j];
    }
    for i in 0..m {
        let b = tab.basis[i];
        let f = tab.t[m * w + b];
        if f != 0.0 {
            for j in 0..w {
                tab.t[m * w + j] -= f * tab.t[i * w + j];
            }
        }
    }
    match tab.run(n_struct)? {
        PivotOutcome::Unbounded => Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: Vector::zeros(0),
            value: f64::INFINITY,
        }),
        PivotOutcome::Optimal => {
            let mut y = vec![0.0; cols];
            for i in 0..m {
                y[tab.basis[i]] = tab.at(i, cols);
            }
            let x = Vector::from_fn(n, |j, _| y[j] - y[n + j]);
            let value = c.dot(&x);
            Ok(LpSolution {
                status: LpStatus::Optimal,
                x,
                value,
            })
        }
    }
}

/// Maximal positively invariant set of `x⁺ = D x` inside
/// `X̂ ∩ {x | Lx ∈ U}`, by Gilbert–Tan iteration with LP redundancy checks.
///
/// `X̂` may be unbounded as long as the iteration terminates.
pub fn maximal_invariant_set(
    closed_loop: &Matrix,
    xhat: &HPolytope,
    u: &HPolytope,
    gain: &Matrix,
) -> Result<InvariantSet> {
    let n = closed_loop.nrows();
    if !closed_loop.is_square() || xhat.dim() != n || gain.ncols() != n || gain.nrows() != u.dim() {
        return Err(Error::invalid(
            "closed loop, constraint sets and gain have inconsistent dimensions",
        ));
    }
    if !is_stable(closed_loop)? {
        return Err(Error::domain(
            "closed loop is not stable; no bounded invariant set is determined",
        ));
    }
    if xhat.rhs.iter().chain(u.rhs.iter()).any(|&v| v <= 0.0) {
        return Err(Error::domain(
            "constraint sets must contain the origin in their interior",
        ));
    }
    let base = xhat.intersect(&u.preimage(gain)?)?.normalized();
    let c = base.h.clone();
    let d = base.rhs.clone();
    let mut set = base;
    let mut ck = c.clone();
    for k in 1..=MAX_INVARIANT_ITERATIONS {
        ck = &ck * closed_loop;
        let mut new_rows = Vec::new();
        for i in 0..ck.nrows() {
            let row = ck.row(i).transpose();
            let norm = row.norm();
            if norm <= 1e-14 * d[i] {
                continue;
            }
            let sol = lp_solve(&row, &set)?;
            let redundant = match sol.status {
                LpStatus::Optimal => sol.value <= d[i] + LP_TOL * d[i].max(1.0),
                LpStatus::Unbounded => false,
                LpStatus::Infeasible => return Err(Error::Infeasible("constraint set is empty".into())),
            };
            if !redundant {
                new_rows.push(i);
            }
        }
        if new_rows.is_empty() {
            let set = set.remove_redundant()?;
            return Ok(InvariantSet { set, k_det: k - 1 });
        }
        let add = HPolytope {
            h: ck.select_rows(new_rows.iter()),
            rhs: d.select_rows(new_rows.iter()),
        }
        .normalized();
        set = set.intersect(&add)?;
    }
    Err(Error::NotConverged {
        what: "maximal invariant set",
        iterations: MAX_INVARIANT_ITERATIONS,
        residual: f64::NAN,
    })
}
