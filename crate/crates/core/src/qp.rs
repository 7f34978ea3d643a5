//! Dense convex QP `min ½z'Pz + q'z  s.t.  Gz ≤ g, Ez = e` and condensing of
//! the finite-horizon MPC problem into that form.
//!
//! The solver is the Goldfarb–Idnani dual active-set method. With `P = LL'`
//! and `y = L'z` the problem becomes a Euclidean projection, so the active
//! set is tracked by a QR factorization of the transformed constraint
//! normals. [`QpSolver`] keeps the factorization of `P` and the transformed
//! normals so repeated solves with different `q`, `g`, `e` are cheap.

use nalgebra::Cholesky;

use crate::error::{Error, Result};
use crate::matcore::{ensure_finite, spd_solve, tol, Matrix, SymMatrix, Vector};
use crate::polytope::HPolytope;
use crate::riccati::{GainPolicy, LqSystem};

pub const QP_FEAS_TOL: f64 = 1e-8;
pub const QP_DUAL_TOL: f64 = 1e-8;
pub const QP_COMP_TOL: f64 = 1e-8;
/// Added to `P` when it is only semidefinite.
pub const TIKHONOV: f64 = 1e-10;
const MAX_ITERATIONS: usize = 50_000;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    p: SymMatrix,
    q: Vector,
    g_mat: Matrix,
    g: Vector,
    e_mat: Matrix,
    e: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    /// Iteration cap hit, or the final KKT residuals missed their tolerances.
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QpResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: Vector,
    pub duals_ineq: Vector,
    pub duals_eq: Vector,
    pub status: QpStatus,
    pub objective: f64,
    pub residuals: QpResiduals,
    /// For infeasible problems: multipliers `(λ ≥ 0, μ)` with
    /// `G'λ + E'μ ≈ 0` and `g'λ + e'μ = −margin < 0`.
    pub certificate: Option<InfeasibilityCertificate>,
    pub iterations: usize,
    /// Whether `TIKHONOV · I` was added to `P`.
    pub regularized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibilityCertificate {
    pub lambda: Vector,
    pub mu: Vector,
    pub margin: f64,
}

impl QpProblem {
    pub fn new(p: SymMatrix, q: Vector, g_mat: Matrix, g: Vector, e_mat: Matrix, e: Vector) -> Result<Self> {
        let n = p.dim();
        if q.len() != n || g_mat.ncols() != n || e_mat.ncols() != n {
            return Err(Error::invalid("P, q, G and E must share the variable dimension"));
        }
        if g_mat.nrows() != g.len() || e_mat.nrows() != e.len() {
            return Err(Error::invalid(
                "constraint matrices and right-hand sides disagree in length",
            ));
        }
        ensure_finite(&g_mat, "G")?;
        ensure_finite(&e_mat, "E")?;
        if q.iter().chain(g.iter()).chain(e.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("q, g and e must be finite"));
        }
        if p.min_eigenvalue() < -tol::PSD * p.norm().max(1.0) {
            return Err(Error::invalid("P must be positive semidefinite"));
        }
        Ok(Self {
            p,
            q,
            g_mat,
            g,
            e_mat,
            e,
        })
    }

    pub fn with_inequalities(p: SymMatrix, q: Vector, g_mat: Matrix, g: Vector) -> Result<Self> {
        let n = p.dim();
        Self::new(p, q, g_mat, g, Matrix::zeros(0, n), Vector::zeros(0))
    }

    pub fn dim(&self) -> usize {
        self.p.dim()
    }

    pub fn p(&self) -> &SymMatrix {
        &self.p
    }

    pub fn q(&self) -> &Vector {
        &self.q
    }

    pub fn inequalities(&self) -> (&Matrix, &Vector) {
        (&self.g_mat, &self.g)
    }

    pub fn equalities(&self) -> (&Matrix, &Vector) {
        (&self.e_mat, &self.e)
    }

    pub fn objective(&self, z: &Vector) -> f64 {
        0.5 * self.p.quad_form(z) + self.q.dot(z)
    }
}

/// Factorized `P` and transformed constraint normals for a fixed `(P, G, E)`.
#[derive(Debug, Clone)]
pub struct QpSolver {
    p: Matrix,
    chol: Cholesky<f64, nalgebra::Dyn>,
    g_mat: Matrix,
    e_mat: Matrix,
    /// Columns `L⁻¹Gᵢ'` then `L⁻¹Eᵢ'`.
    normals: Matrix,
    norms: Vec<f64>,
    regularized: bool,
}

/// Givens rotation `(c, s)` with `[c s; −s c]·[a; b] = [r; 0]`.
fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    if b == 0.0 {
        (1.0, 0.0, a)
    } else {
        let r = a.hypot(b);
        (a / r, b / r, r)
    }
}

/// Rotates columns `i` and `j` of `m`.
fn rotate_cols(m: &mut Matrix, i: usize, j: usize, c: f64, s: f64) {
    for k in 0..m.nrows() {
        let (a, b) = (m[(k, i)], m[(k, j)]);
        m[(k, i)] = c * a + s * b;
        m[(k, j)] = -s * a + c * b;
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Ineq,
    Eq,
}

struct Active {
    idx: usize,
    kind: Kind,
    /// `-1` when an equality is used with its reversed orientation.
    sign: f64,
    mult: f64,
}

impl QpSolver {
    pub fn new(p: &SymMatrix, g_mat: &Matrix, e_mat: &Matrix) -> Result<Self> {
        let n = p.dim();
        if g_mat.ncols() != n || e_mat.ncols() != n {
            return Err(Error::invalid("constraint matrices must have one column per variable"));
        }
        let mut pm = p.as_matrix().clone();
        let mut regularized = false;
        let chol = match Cholesky::new(pm.clone()) {
            Some(c) => c,
            None => {
                if p.min_eigenvalue() < -tol::PSD * p.norm().max(1.0) {
                    return Err(Error::invalid("P must be positive semidefinite"));
                }
                regularized = true;
                for i in 0..n {
                    pm[(i, i)] += TIKHONOV;
                }
                Cholesky::new(pm.clone())
                    .ok_or_else(|| Error::domain("P is too close to singular even after regularization"))?
            }
        };
        let mi = g_mat.nrows();
        let me = e_mat.nrows();
        let mut all = Matrix::zeros(n, mi + me);
        all.columns_mut(0, mi).copy_from(&g_mat.transpose());
        all.columns_mut(mi, me).copy_from(&e_mat.transpose());
        chol.l().solve_lower_triangular_mut(&mut all);
        let norms = (0..mi + me).map(|j| all.column(j).norm()).collect();
        Ok(Self {
            p: pm,
            chol,
            g_mat: g_mat.clone(),
            e_mat: e_mat.clone(),
            normals: all,
            norms,
            regularized,
        })
    }

    pub fn for_problem(prob: &QpProblem) -> Result<Self> {
        Self::new(&prob.p, &prob.g_mat, &prob.e_mat)
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn solve(&self, q: &Vector, g: &Vector, e: &Vector) -> Result<QpSolution> {
        let n = self.dim();
        let mi = self.g_mat.nrows();
        let me = self.e_mat.nrows();
        if q.len() != n || g.len() != mi || e.len() != me {
            return Err(Error::invalid("q, g or e has the wrong length"));
        }
        let rhs = |j: usize| if j < mi { g[j] } else { e[j - mi] };

        // y-space: minimize ½‖y + c‖², c = L⁻¹q.
        let mut c = q.clone();
        self.chol.l().solve_lower_triangular_mut(&mut c);
        let mut y = -&c;
        let mut qmat = Matrix::identity(n, n);
        let mut rmat = Matrix::zeros(n, n);
        let mut active: Vec<Active> = Vec::new();
        // Equalities already enforced or found implied by the active set.
        let mut eq_done = vec![false; me];
        let mut iterations = 0;

        let violation = |y: &Vector, j: usize| -> (f64, f64) {
            let s = self.normals.column(j).dot(y) - rhs(j);
            let scale = rhs(j).abs().max(self.norms[j] * y.norm()).max(1.0);
            (s, 1e-12 * scale)
        };

        loop {
            // Pick the next constraint: unmet equalities first, then the most
            // violated inequality (scaled by its normal).
            let mut pick: Option<(usize, Kind, f64)> = None;
            for j in mi..mi + me {
                if !eq_done[j - mi] {
                    let (s, _) = violation(&y, j);
                    pick = Some((j, Kind::Eq, if s > 0.0 { 1.0 } else { -1.0 }));
                    break;
                }
            }
            if pick.is_none() {
                let mut worst = 0.0;
                for j in 0..mi {
                    let (s, tol) = violation(&y, j);
                    if s > tol {
                        let score = if self.norms[j] > 0.0 {
                            s / self.norms[j]
                        } else {
                            f64::INFINITY
                        };
                        if pick.is_none() || score > worst {
                            worst = score;
                            pick = Some((j, Kind::Ineq, 1.0));
                        }
                    }
                }
            }
            let Some((p, kind, sign)) = pick else {
                break;
            };
            let np = self.normals.column(p) * sign;
            let bp = rhs(p) * sign;
            let mut up = 0.0;

            // Step loop for constraint p (possibly several partial steps).
            loop {
                iterations += 1;
                if iterations > MAX_ITERATIONS {
                    return Ok(self.finish(y, &active, q, g, e, QpStatus::MaxIter, None, iterations));
                }
                let qa = active.len();
                let v = qmat.transpose() * &np;
                // Primal direction −Q₂Q₂'n and dual direction R⁻¹Q₁'n.
                let mut z = Vector::zeros(n);
                for i in qa..n {
                    z.axpy(-v[i], &qmat.column(i), 1.0);
                }
                let r = if qa > 0 {
                    let mut r = v.rows(0, qa).into_owned();
                    rmat.view((0, 0), (qa, qa)).solve_upper_triangular_mut(&mut r);
                    r
                } else {
                    Vector::zeros(0)
                };
                let mut t1 = f64::INFINITY;
                let mut drop_at = None;
                for (k, a) in active.iter().enumerate() {
                    if a.kind == Kind::Ineq && r[k] > 0.0 {
                        let t = a.mult / r[k];
                        if t < t1 {
                            t1 = t;
                            drop_at = Some(k);
                        }
                    }
                }
                let zz = z.norm_squared();
                let s = np.dot(&y) - bp;
                let z_zero = zz == 0.0 || zz.sqrt() <= 1e-11 * np.norm();
                let t2 = if z_zero { f64::INFINITY } else { s / zz };
                if z_zero && kind == Kind::Eq && s.abs() <= violation(&y, p).1 {
                    // Implied by the active equalities.
                    eq_done[p - mi] = true;
                    break;
                }
                if z_zero && t1 == f64::INFINITY {
                    // n_p is a nonpositive combination of active normals.
                    let cert = self.certificate(p, sign, &active, &r, g, e);
                    let mut sol = self.finish(y, &active, q, g, e, QpStatus::Infeasible, Some(cert), iterations);
                    sol.objective = f64::INFINITY;
                    return Ok(sol);
                }
                let t = t1.min(t2);
                if !z_zero {
                    y.axpy(t, &z, 1.0);
                }
                for (k, a) in active.iter_mut().enumerate() {
                    a.mult -= t * r[k];
                }
                up += t;
                if t2 <= t1 {
                    // Full step: add p.
                    let mut v = qmat.transpose() * &np;
                    for i in (qa + 1..n).rev() {
                        let (cg, sg, rr) = givens(v[i - 1], v[i]);
                        v[i - 1] = rr;
                        v[i] = 0.0;
                        rotate_cols(&mut qmat, i - 1, i, cg, sg);
                    }
                    for i in 0..=qa {
                        rmat[(i, qa)] = v[i];
                    }
                    active.push(Active {
                        idx: p,
                        kind,
                        sign,
                        mult: up,
                    });
                    if kind == Kind::Eq {
                        eq_done[p - mi] = true;
                    }
                    break;
                }
                // Partial step: drop the blocking constraint and retry.
                let k = drop_at.expect("partial step has a blocking constraint");
                active.remove(k);
                for col in k..qa - 1 {
                    for row in 0..=col + 1 {
                        rmat[(row, col)] = rmat[(row, col + 1)];
                    }
                }
                for row in 0..n {
                    rmat[(row, qa - 1)] = 0.0;
                }
                for col in k..qa - 1 {
                    let (cg, sg, rr) = givens(rmat[(col, col)], rmat[(col + 1, col)]);
                    rmat[(col, col)] = rr;
                    rmat[(col + 1, col)] = 0.0;
                    for j in col + 1..qa - 1 {
                        let (a, b) = (rmat[(col, j)], rmat[(col + 1, j)]);
                        rmat[(col, j)] = cg * a + sg * b;
                        rmat[(col + 1, j)] = -sg * a + cg * b;
                    }
                    rotate_cols(&mut qmat, col, col + 1, cg, sg);
                }
            }
        }
        let mut sol = self.finish(y, &active, q, g, e, QpStatus::Optimal, None, iterations);
        if !self.certified(&sol.residuals, &sol, q, g) {
            if let Some(polished) = self.polish(&sol, q, g, e) {
                sol = polished;
            }
            if !self.certified(&sol.residuals, &sol, q, g) {
                sol.status = QpStatus::MaxIter;
            }
        }
        Ok(sol)
    }

    fn certificate(
        &self,
        p: usize,
        sign: f64,
        active: &[Active],
        r: &Vector,
        g: &Vector,
        e: &Vector,
    ) -> InfeasibilityCertificate {
        let mi = self.g_mat.nrows();
        let mut lambda = Vector::zeros(mi);
        let mut mu = Vector::zeros(self.e_mat.nrows());
        let mut put = |idx: usize, val: f64| {
            if idx < mi {
                lambda[idx] += val;
            } else {
                mu[idx - mi] += val;
            }
        };
        put(p, sign);
        for (k, a) in active.iter().enumerate() {
            put(a.idx, -r[k] * a.sign);
        }
        let margin = -(g.dot(&lambda) + e.dot(&mu));
        InfeasibilityCertificate { lambda, mu, margin }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        y: Vector,
        active: &[Active],
        q: &Vector,
        g: &Vector,
        e: &Vector,
        status: QpStatus,
        certificate: Option<InfeasibilityCertificate>,
        iterations: usize,
    ) -> QpSolution {
        let mut z = y;
        self.chol.l().tr_solve_lower_triangular_mut(&mut z);
        let mi = self.g_mat.nrows();
        let mut lam = Vector::zeros(mi);
        let mut mu = Vector::zeros(self.e_mat.nrows());
        if status == QpStatus::Optimal {
            for a in active {
                if a.idx < mi {
                    lam[a.idx] = a.mult.max(0.0);
                } else {
                    mu[a.idx - mi] = a.mult * a.sign;
                }
            }
        }
        let residuals = self.residuals(&z, &lam, &mu, q, g, e);
        let objective = 0.5 * (z.transpose() * &self.p * &z)[(0, 0)] + q.dot(&z);
        QpSolution {
            z,
            duals_ineq: lam,
            duals_eq: mu,
            status,
            objective,
            residuals,
            certificate,
            iterations,
            regularized: self.regularized,
        }
    }

    fn residuals(&self, z: &Vector, lam: &Vector, mu: &Vector, q: &Vector, g: &Vector, e: &Vector) -> QpResiduals {
        let gz = &self.g_mat * z;
        let ez = &self.e_mat * z;
        let primal_ineq = (0..g.len()).map(|i| (gz[i] - g[i]).max(0.0)).fold(0.0, f64::max);
        let primal_eq = (0..e.len()).map(|i| (ez[i] - e[i]).abs()).fold(0.0, f64::max);
        let grad = &self.p * z + q + self.g_mat.transpose() * lam + self.e_mat.transpose() * mu;
        let comp = (0..g.len())
            .map(|i| (lam[i] * (g[i] - gz[i])).abs())
            .fold(0.0, f64::max);
        QpResiduals {
            primal: primal_ineq.max(primal_eq),
            dual: grad.amax(),
            complementarity: comp,
        }
    }

    fn certified(&self, res: &QpResiduals, sol: &QpSolution, q: &Vector, g: &Vector) -> bool {
        let zs = sol.z.amax();
        let scale = 1.0 + self.p.amax() * zs + q.amax();
        res.primal <= QP_FEAS_TOL * (1.0 + g.amax().max(self.g_mat.amax() * zs))
            && res.dual <= QP_DUAL_TOL * scale
            && res.complementarity <= QP_COMP_TOL * scale.max(1.0 + sol.duals_ineq.amax() * g.amax())
    }

    /// Re-solves the equality-constrained KKT system on the final active set.
    fn polish(&self, sol: &QpSolution, q: &Vector, g: &Vector, e: &Vector) -> Option<QpSolution> {
        let n = self.dim();
        let act: Vec<usize> = (0..g.len()).filter(|&i| sol.duals_ineq[i] > 0.0).collect();
        let me = self.e_mat.nrows();
        let k = act.len() + me;
        let mut kkt = Matrix::zeros(n + k, n + k);
        let mut rhs = Vector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&self.p);
        rhs.rows_mut(0, n).copy_from(&(-q));
        for (r, &i) in act.iter().enumerate() {
            let row = self.g_mat.row(i);
            kkt.view_mut((n + r, 0), (1, n)).copy_from(&row);
            kkt.view_mut((0, n + r), (n, 1)).copy_from(&row.transpose());
            rhs[n + r] = g[i];
        }
        for j in 0..me {
            let row = self.e_mat.row(j);
            let r = act.len() + j;
            kkt.view_mut((n + r, 0), (1, n)).copy_from(&row);
            kkt.view_mut((0, n + r), (n, 1)).copy_from(&row.transpose());
            rhs[n + r] = e[j];
        }
        let x = kkt.lu().solve(&rhs)?;
        let z = x.rows(0, n).into_owned();
        let mut lam = Vector::zeros(g.len());
        for (r, &i) in act.iter().enumerate() {
            if x[n + r] < 0.0 {
                return None;
            }
            lam[i] = x[n + r];
        }
        let mu = x.rows(n + act.len(), me).into_owned();
        let residuals = self.residuals(&z, &lam, &mu, q, g, e);
        let objective = 0.5 * (z.transpose() * &self.p * &z)[(0, 0)] + q.dot(&z);
        Some(QpSolution {
            z,
            duals_ineq: lam,
            duals_eq: mu,
            residuals,
            objective,
            ..sol.clone()
        })
    }
}

pub fn solve_qp(prob: &QpProblem) -> Result<QpSolution> {
    QpSolver::for_problem(prob)?.solve(&prob.q, &prob.g, &prob.e)
}

/// The ℓ-step MPC problem from `x0` in condensed form, with the affine
/// dependence on `x0` kept symbolic so one factorization serves all states.
///
/// Inputs are parametrized as `u_k = L x_k + v_k` with an optional
/// pre-stabilizing `L` (zero if absent); decision variables are the `v_k`.
/// Pre-stabilization changes only the conditioning of the QP, not its
/// solution.
#[derive(Debug, Clone)]
pub struct CondensedMpc {
    n: usize,
    m: usize,
    ell: usize,
    a: Matrix,
    b: Matrix,
    pre: Matrix,
    hessian: SymMatrix,
    /// `q = lin · x0`.
    lin: Matrix,
    /// `cost constant = x0' quad x0`.
    quad: SymMatrix,
    g_mat: Matrix,
    g0: Vector,
    /// `g = g0 + g_x · x0`.
    g_x: Matrix,
    solver: QpSolver,
}

/// Outcome of one MPC solve.
#[derive(Debug, Clone)]
pub struct MpcSolve {
    /// First control `u_0`; empty when infeasible.
    pub u0: Vector,
    /// Full control sequence, stacked.
    pub controls: Vector,
    /// Optimal finite-horizon cost including the terminal term; `+∞` if infeasible.
    pub value: f64,
    pub qp: QpSolution,
}

impl MpcSolve {
    pub fn is_feasible(&self) -> bool {
        self.qp.status == QpStatus::Optimal
    }
}

impl CondensedMpc {
    pub fn new(
        sys: &LqSystem,
        xhat: &HPolytope,
        u: &HPolytope,
        s: &HPolytope,
        k: &SymMatrix,
        ell: usize,
        prestabilize: Option<&GainPolicy>,
    ) -> Result<Self> {
        let n = sys.state_dim();
        let m = sys.input_dim();
        if ell == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if xhat.dim() != n || s.dim() != n || u.dim() != m || k.dim() != n {
            return Err(Error::invalid(
                "constraint sets or terminal cost do not match the system",
            ));
        }
        let pre = match prestabilize {
            Some(g) => {
                if g.matrix().nrows() != m || g.matrix().ncols() != n {
                    return Err(Error::invalid("pre-stabilizing gain has the wrong shape"));
                }
                g.matrix().clone()
            }
            None => Matrix::zeros(m, n),
        };
        let acl = sys.a() + sys.b() * &pre;
        let nz = m * ell;

        // x_k = phi[k] x0 + gam[k] v,  u_k = psi[k] x0 + lam[k] v.
        let mut phi = vec![Matrix::identity(n, n)];
        let mut gam = vec![Matrix::zeros(n, nz)];
        for kk in 0..ell {
            let mut next_g = &acl * &gam[kk];
            for i in 0..n {
                for j in 0..m {
                    next_g[(i, kk * m + j)] += sys.b()[(i, j)];
                }
            }
            phi.push(&acl * &phi[kk]);
            gam.push(next_g);
        }
        let mut psi = Vec::with_capacity(ell);
        let mut lam = Vec::with_capacity(ell);
        for kk in 0..ell {
            psi.push(&pre * &phi[kk]);
            let mut l = &pre * &gam[kk];
            for j in 0..m {
                l[(j, kk * m + j)] += 1.0;
            }
            lam.push(l);
        }

        let (qm, rm, km) = (sys.q().as_matrix(), sys.r().as_matrix(), k.as_matrix());
        let mut hz = Matrix::zeros(nz, nz);
        let mut hx = Matrix::zeros(nz, n);
        let mut hc = Matrix::zeros(n, n);
        for kk in 0..=ell {
            let w = if kk == ell { km } else { qm };
            let gw = gam[kk].transpose() * w;
            hz += &gw * &gam[kk];
            hx += &gw * &phi[kk];
            hc += phi[kk].transpose() * w * &phi[kk];
        }
        for kk in 0..ell {
            let lw = lam[kk].transpose() * rm;
            hz += &lw * &lam[kk];
            hx += &lw * &psi[kk];
            hc += psi[kk].transpose() * rm * &psi[kk];
        }
        let hessian = SymMatrix::symmetrized(hz * 2.0);
        let lin = hx * 2.0;
        let quad = SymMatrix::symmetrized(hc);

        // Constraints: x_k ∈ X̂ (k < ℓ), u_k ∈ U (k < ℓ), x_ℓ ∈ S.
        let rx = xhat.num_constraints();
        let ru = u.num_constraints();
        let rs = s.num_constraints();
        let rows = ell * (rx + ru) + rs;
        let mut g_mat = Matrix::zeros(rows, nz);
        let mut g_x = Matrix::zeros(rows, n);
        let mut g0 = Vector::zeros(rows);
        let mut at = 0;
        let mut push = |hm: &Matrix, hv: &Vector, a: &Matrix, b: &Matrix| {
            let r = hm.nrows();
            g_mat.view_mut((at, 0), (r, nz)).copy_from(&(hm * a));
            g_x.view_mut((at, 0), (r, n)).copy_from(&(-(hm * b)));
            g0.rows_mut(at, r).copy_from(hv);
            at += r;
        };
        for kk in 0..ell {
            push(xhat.h_matrix(), xhat.h_vector(), &gam[kk], &phi[kk]);
            push(u.h_matrix(), u.h_vector(), &lam[kk], &psi[kk]);
        }
        push(s.h_matrix(), s.h_vector(), &gam[ell], &phi[ell]);

        let solver = QpSolver::new(&hessian, &g_mat, &Matrix::zeros(0, nz))?;
        Ok(Self {
            n,
            m,
            ell,
            a: sys.a().clone(),
            b: sys.b().clone(),
            pre,
            hessian,
            lin,
            quad,
            g_mat,
            g0,
            g_x,
            solver,
        })
    }

    pub fn horizon(&self) -> usize {
        self.ell
    }

    pub fn problem(&self, x0: &Vector) -> Result<QpProblem> {
        self.check_state(x0)?;
        QpProblem::with_inequalities(
            self.hessian.clone(),
            &self.lin * x0,
            self.g_mat.clone(),
            &self.g0 + &self.g_x * x0,
        )
    }

    fn check_state(&self, x0: &Vector) -> Result<()> {
        if x0.len() != self.n {
            return Err(Error::invalid(format!(
                "state has dimension {}, expected {}",
                x0.len(),
                self.n
            )));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("state must be finite"));
        }
        Ok(())
    }

    /// `(W, w)` such that the unconstrained minimizer at `x0` satisfies every
    /// constraint iff `W x0 ≤ w`, together with its first-control gain.
    pub fn unconstrained_region(&self) -> Result<(Matrix, Vector, Matrix)> {
        let kz = -spd_solve(self.hessian.as_matrix(), &self.lin)?;
        let w = &self.g_mat * &kz - &self.g_x;
        let gain = &self.pre + kz.rows(0, self.m);
        Ok((w, self.g0.clone(), gain))
    }

    /// Solves the MPC problem at `x0` and maps the result back to controls.
    pub fn solve(&self, x0: &Vector) -> Result<MpcSolve> {
        self.check_state(x0)?;
        let q = &self.lin * x0;
        let g = &self.g0 + &self.g_x * x0;
        let qp = self.solver.solve(&q, &g, &Vector::zeros(0))?;
        if qp.status != QpStatus::Optimal {
            return Ok(MpcSolve {
                u0: Vector::zeros(0),
                controls: Vector::zeros(0),
                value: f64::INFINITY,
                qp,
            });
        }
        let value = qp.objective + self.quad.quad_form(x0);
        let controls = self.controls_from(x0, &qp.z);
        let u0 = controls.rows(0, self.m).into_owned();
        Ok(MpcSolve {
            u0,
            controls,
            value: value.max(0.0),
            qp,
        })
    }

    /// Recovers `u_k = L x_k + v_k` by forward simulation.
    fn controls_from(&self, x0: &Vector, v: &Vector) -> Vector {
        let mut out = Vector::zeros(self.m * self.ell);
        let mut x = x0.clone();
        for kk in 0..self.ell {
            let uk = &self.pre * &x + v.rows(kk * self.m, self.m);
            out.rows_mut(kk * self.m, self.m).copy_from(&uk);
            x = &self.a * &x + &self.b * &uk;
        }
        out
    }
}

/// Condensed QP of the ℓ-step MPC problem at `x0`, without pre-stabilization.
pub fn condense_mpc(
    sys: &LqSystem,
    xhat: &HPolytope,
    u: &HPolytope,
    s: &HPolytope,
    k: &SymMatrix,
    ell: usize,
    x0: &Vector,
) -> Result<QpProblem> {
    CondensedMpc::new(sys, xhat, u, s, k, ell, None)?.problem(x0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::matrix_from_rows;
    use crate::riccati::fixtures::double_integrator;
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn unconstrained_minimum() {
        let prob = QpProblem::with_inequalities(
            SymMatrix::identity(2),
            v(&[-1.0, -1.0]),
            Matrix::zeros(0, 2),
            Vector::zeros(0),
        )
        .unwrap();
        let sol = solve_qp(&prob).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.z, v(&[1.0, 1.0]), epsilon = 1e-14);
        assert_relative_eq!(sol.objective, -1.0, epsilon = 1e-14);
    }

    #[test]
    fn clipping() {
        // (u − 3)² = u² − 6u + 9, |u| ≤ 1.
        let prob = QpProblem::with_inequalities(
            SymMatrix::scalar(2.0),
            v(&[-6.0]),
            matrix_from_rows(&[&[1.0], &[-1.0]]),
            v(&[1.0, 1.0]),
        )
        .unwrap();
        let sol = solve_qp(&prob).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.z[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(sol.duals_ineq[0], 4.0, epsilon = 1e-12);
        assert_eq!(sol.duals_ineq[1], 0.0);
    }

    #[test]
    fn equality_and_inequality() {
        // min ½‖z‖² s.t. z1 + z2 = 2, z1 ≤ 0.5
        let prob = QpProblem::new(
            SymMatrix::identity(2),
            Vector::zeros(2),
            matrix_from_rows(&[&[1.0, 0.0]]),
            v(&[0.5]),
            matrix_from_rows(&[&[1.0, 1.0]]),
            v(&[2.0]),
        )
        .unwrap();
        let sol = solve_qp(&prob).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.z, v(&[0.5, 1.5]), epsilon = 1e-12);
    }

    #[test]
    fn redundant_equalities() {
        let prob = QpProblem::new(
            SymMatrix::identity(2),
            Vector::zeros(2),
            Matrix::zeros(0, 2),
            Vector::zeros(0),
            matrix_from_rows(&[&[1.0, 1.0], &[2.0, 2.0]]),
            v(&[2.0, 4.0]),
        )
        .unwrap();
        let sol = solve_qp(&prob).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.z, v(&[1.0, 1.0]), epsilon = 1e-12);
    }

    #[test]
    fn infeasible_with_certificate() {
        // z ≤ −1 and −z ≤ −1.
        let g_mat = matrix_from_rows(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0]]);
        let g = v(&[-1.0, -1.0, 3.0]);
        let prob =
            QpProblem::with_inequalities(SymMatrix::identity(2), Vector::zeros(2), g_mat.clone(), g.clone()).unwrap();
        let sol = solve_qp(&prob).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
        let cert = sol.certificate.unwrap();
        assert!(cert.lambda.iter().all(|l| *l >= 0.0));
        assert!((g_mat.transpose() * &cert.lambda).amax() < 1e-12);
        assert!(cert.margin > 0.0);
        assert_relative_eq!(-g.dot(&cert.lambda), cert.margin, epsilon = 1e-12);
    }

    #[test]
    fn zero_row_infeasible() {
        let prob = QpProblem::with_inequalities(
            SymMatrix::identity(1),
            Vector::zeros(1),
            Matrix::zeros(1, 1),
            v(&[-0.5]),
        );
        // A zero row is allowed in a QP; it is satisfied or violated for all z.
        let sol = solve_qp(&prob.unwrap()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn semidefinite_hessian_is_regularized() {
        let p = SymMatrix::from_diagonal(&[1.0, 0.0]);
        let prob =
            QpProblem::with_inequalities(p, v(&[-1.0, -1.0]), matrix_from_rows(&[&[0.0, 1.0]]), v(&[2.0])).unwrap();
        let sol = solve_qp(&prob).unwrap();
        assert!(sol.regularized);
        assert_relative_eq!(sol.z, v(&[1.0, 2.0]), epsilon = 1e-6);
    }

    #[test]
    fn condense_one_step_matches_greedy_gain() {
        let sys = double_integrator();
        let k = sys.zeta_dare(50.0).unwrap();
        let free2 = HPolytope::universe(2);
        let free1 = HPolytope::universe(1);
        let x0 = v(&[1.5, -0.7]);
        let prob = condense_mpc(&sys, &free2, &free1, &free2, &k, 1, &x0).unwrap();
        let b = sys.b();
        let expected_p = (b.transpose() * k.as_matrix() * b + sys.r().as_matrix()) * 2.0;
        assert_relative_eq!(prob.p().as_matrix(), &expected_p, epsilon = 1e-10);
        let sol = solve_qp(&prob).unwrap();
        let u = sys.greedy_gain(&k).unwrap().matrix() * &x0;
        assert_relative_eq!(sol.z, u, epsilon = 1e-10);
    }

    #[test]
    fn condensed_objective_matches_rollout() {
        let sys = double_integrator();
        let k = sys.zeta_dare(50.0).unwrap();
        let (_, lstar) = sys.solve_dare().unwrap();
        let xhat = HPolytope::symmetric_box(&[5.0, 5.0]).unwrap();
        let u = HPolytope::symmetric_box(&[1.0]).unwrap();
        let x0 = v(&[-2.0, 1.0]);
        for pre in [None, Some(&lstar)] {
            let c = CondensedMpc::new(&sys, &xhat, &u, &xhat, &k, 4, pre).unwrap();
            let res = c.solve(&x0).unwrap();
            assert!(res.is_feasible());
            // Roll out the returned controls and recompute the cost.
            let mut x = x0.clone();
            let mut cost = 0.0;
            for kk in 0..4 {
                let uk = res.controls.rows(kk, 1).into_owned();
                cost += sys.q().quad_form(&x) + sys.r().quad_form(&uk);
                x = sys.a() * &x + sys.b() * &uk;
            }
            cost += k.quad_form(&x);
            assert_relative_eq!(cost, res.value, max_relative = 1e-10);
        }
    }

    #[test]
    fn condensed_origin_is_zero() {
        let sys = double_integrator();
        let k = sys.zeta_dare(50.0).unwrap();
        let xhat = HPolytope::symmetric_box(&[5.0, 5.0]).unwrap();
        let u = HPolytope::symmetric_box(&[1.0]).unwrap();
        let c = CondensedMpc::new(&sys, &xhat, &u, &xhat, &k, 3, None).unwrap();
        let res = c.solve(&Vector::zeros(2)).unwrap();
        assert!(res.is_feasible());
        assert_eq!(res.value, 0.0);
        assert!(res.controls.amax() == 0.0);
    }

    #[test]
    fn condensed_initial_state_outside_is_infeasible() {
        let sys = double_integrator();
        let k = sys.zeta_dare(50.0).unwrap();
        let xhat = HPolytope::symmetric_box(&[5.0, 5.0]).unwrap();
        let u = HPolytope::symmetric_box(&[1.0]).unwrap();
        let c = CondensedMpc::new(&sys, &xhat, &u, &xhat, &k, 3, None).unwrap();
        let res = c.solve(&v(&[5.5, 0.0])).unwrap();
        assert!(!res.is_feasible());
        assert_eq!(res.value, f64::INFINITY);
    }
}
