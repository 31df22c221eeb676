//! Preconditioner application with on-the-fly upcast, unrestarted MGS-GMRES
//! and preconditioned CG inner solvers, and the mixed-precision iterative
//! refinement outer driver.
//!
//! The inner solvers run entirely in working precision on the scaled system;
//! the factor entries are decoded from their storage precision during the
//! triangular solves. The driver owns the scaling transforms and measures
//! convergence by the normwise backward error of the original system.

use crate::factorize::IcFactor;
use crate::sparsecore::{ScaleVector, SparseSpd};

/// Anything that can apply a symmetric operator to a vector.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for SparseSpd {
    fn dim(&self) -> usize {
        self.n()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y);
    }
}

/// The scaled operator S^{-1} A S^{-1}, applied through the original matrix.
pub struct ScaledOperator<'a> {
    pub a: &'a SparseSpd,
    pub scale: &'a ScaleVector,
}

impl LinearOperator for ScaledOperator<'_> {
    fn dim(&self) -> usize {
        self.a.n()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let s = &self.scale.s;
        let tmp: Vec<f64> = x.iter().zip(s).map(|(xi, si)| xi / si).collect();
        self.a.matvec(&tmp, y);
        for (yi, si) in y.iter_mut().zip(s) {
            *yi /= si;
        }
    }
}

/// A low-precision factor together with the scaling it was computed under.
/// Applying it solves (L L^T) z = r in the scaled variable space; the
/// refinement driver owns the S transforms.
pub struct Preconditioner {
    pub factor: IcFactor,
    pub scale: ScaleVector,
}

impl Preconditioner {
    pub fn new(factor: IcFactor, scale: ScaleVector) -> Preconditioner {
        assert_eq!(factor.n(), scale.s.len());
        Preconditioner { factor, scale }
    }

    /// Neutral preconditioner: identity factor, unit scaling.
    pub fn identity(n: usize) -> Preconditioner {
        Preconditioner {
            factor: IcFactor::identity(n),
            scale: ScaleVector::ones(n),
        }
    }

    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        apply_precond(self, r)
    }
}

/// Solve (L L^T) z = r, decoding each stored entry of L to working precision
/// on the fly. Only the returned n-vector is allocated.
pub fn apply_precond(p: &Preconditioner, r: &[f64]) -> Vec<f64> {
    let factor = &p.factor;
    let pattern = factor.pattern();
    let n = factor.n();
    assert_eq!(r.len(), n);
    let mut z = r.to_vec();
    // Forward solve L y = r, column-oriented.
    for j in 0..n {
        let range = pattern.col_range(j);
        let d = factor.value(range.start);
        assert!(d != 0.0, "zero decoded diagonal in factor column {j}");
        z[j] /= d;
        let zj = z[j];
        for idx in range.skip(1) {
            z[pattern.row_idx[idx]] -= factor.value(idx) * zj;
        }
    }
    // Backward solve L^T z = y; column j of L is row j of L^T.
    for j in (0..n).rev() {
        let range = pattern.col_range(j);
        let mut acc = z[j];
        for idx in range.clone().skip(1) {
            acc -= factor.value(idx) * z[pattern.row_idx[idx]];
        }
        z[j] = acc / factor.value(range.start);
    }
    z
}

/// Inner Krylov solver selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Gmres,
    Cg,
}

/// Configuration of the iterative-refinement driver and its inner solver.
#[derive(Debug, Clone)]
pub struct IrConfig {
    /// Outer convergence threshold on the normwise backward error.
    pub delta: f64,
    /// Inner relative residual tolerance (preconditioned residual versus the
    /// initial preconditioned residual).
    pub inner_tol: f64,
    pub max_inner: usize,
    pub itmax_outer: usize,
    pub solver: SolverKind,
}

pub const UNIT_ROUNDOFF_F64: f64 = f64::EPSILON / 2.0;

impl Default for IrConfig {
    fn default() -> Self {
        IrConfig {
            delta: 1e3 * UNIT_ROUNDOFF_F64,
            inner_tol: UNIT_ROUNDOFF_F64.powf(0.25),
            max_inner: 1000,
            itmax_outer: 20,
            solver: SolverKind::Gmres,
        }
    }
}

/// How an inner solve ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerStatus {
    Converged,
    /// Hit `max_inner` without reaching the tolerance (the NC outcome).
    MaxIter,
    /// CG detected a nonpositive curvature direction.
    Indefinite,
}

/// Result of one inner Krylov solve.
#[derive(Debug, Clone)]
pub struct InnerSolve {
    pub d: Vec<f64>,
    pub its: usize,
    pub converged: bool,
    pub status: InnerStatus,
    /// Preconditioned residual norms per iteration.
    pub res_history: Vec<f64>,
}

/// Unrestarted left-preconditioned GMRES with modified Gram-Schmidt.
///
/// Stops when the preconditioned relative residual drops below
/// `cfg.inner_tol` or after `cfg.max_inner` iterations (NC). An exact Krylov
/// breakdown returns the current iterate as converged.
pub fn gmres_solve<O: LinearOperator>(
    op: &O,
    p: &Preconditioner,
    rhs: &[f64],
    cfg: &IrConfig,
) -> InnerSolve {
    let n = rhs.len();
    let z0 = p.apply(rhs);
    let beta = norm2(&z0);
    if beta == 0.0 {
        return InnerSolve {
            d: vec![0.0; n],
            its: 0,
            converged: true,
            status: InnerStatus::Converged,
            res_history: vec![0.0],
        };
    }

    let mut basis: Vec<Vec<f64>> = vec![scaled(&z0, 1.0 / beta)];
    let mut r_cols: Vec<Vec<f64>> = Vec::new(); // upper-triangular R columns
    let mut cs: Vec<f64> = Vec::new();
    let mut sn: Vec<f64> = Vec::new();
    let mut g = vec![beta];
    let mut history = Vec::new();
    let mut converged = false;
    let mut status = InnerStatus::MaxIter;
    let mut its = 0;

    let mut y_work = vec![0.0; n];
    for j in 0..cfg.max_inner {
        op.apply(&basis[j], &mut y_work);
        let mut w = p.apply(&y_work);

        let mut h = Vec::with_capacity(j + 2);
        for v in basis.iter() {
            let hij = dot(&w, v);
            axpy(&mut w, -hij, v);
            h.push(hij);
        }
        let h_next = norm2(&w);

        for i in 0..j {
            let t = cs[i] * h[i] + sn[i] * h[i + 1];
            h[i + 1] = -sn[i] * h[i] + cs[i] * h[i + 1];
            h[i] = t;
        }
        let r = (h[j] * h[j] + h_next * h_next).sqrt();
        let (c, s) = if r == 0.0 { (1.0, 0.0) } else { (h[j] / r, h_next / r) };
        h[j] = c * h[j] + s * h_next;
        cs.push(c);
        sn.push(s);
        g.push(-s * g[j]);
        g[j] *= c;

        r_cols.push(h);
        its = j + 1;
        let residual = g[j + 1].abs();
        history.push(residual);

        if residual <= cfg.inner_tol * beta {
            converged = true;
            status = InnerStatus::Converged;
            break;
        }
        if h_next < 1e-306 {
            // Exact Arnoldi breakdown: the Krylov space is invariant, so the
            // current least-squares iterate solves the system.
            converged = true;
            status = InnerStatus::Converged;
            break;
        }
        basis.push(scaled(&w, 1.0 / h_next));
    }

    // Back substitution on R y = g.
    let m = its;
    let mut y = vec![0.0; m];
    for i in (0..m).rev() {
        let mut acc = g[i];
        for (k, yk) in y.iter().enumerate().skip(i + 1) {
            acc -= r_cols[k][i] * yk;
        }
        y[i] = acc / r_cols[i][i];
    }
    let mut d = vec![0.0; n];
    for (k, yk) in y.iter().enumerate() {
        axpy(&mut d, *yk, &basis[k]);
    }
    InnerSolve {
        d,
        its,
        converged,
        status,
        res_history: history,
    }
}

/// Preconditioned conjugate gradients with the same stopping contract as
/// [`gmres_solve`]. A nonpositive curvature direction (p^T A p <= 0) aborts
/// with `Indefinite`.
pub fn cg_solve<O: LinearOperator>(
    op: &O,
    p: &Preconditioner,
    rhs: &[f64],
    cfg: &IrConfig,
) -> InnerSolve {
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z = p.apply(&r);
    let z0_norm = norm2(&z);
    let mut history = Vec::new();
    if z0_norm == 0.0 {
        return InnerSolve {
            d: x,
            its: 0,
            converged: true,
            status: InnerStatus::Converged,
            res_history: vec![0.0],
        };
    }
    let mut rz = dot(&r, &z);
    let mut dir = z.clone();
    let mut q = vec![0.0; n];
    let mut its = 0;
    let mut converged = false;
    let mut status = InnerStatus::MaxIter;
    while its < cfg.max_inner {
        op.apply(&dir, &mut q);
        let curvature = dot(&dir, &q);
        if curvature <= 0.0 {
            status = InnerStatus::Indefinite;
            break;
        }
        let alpha = rz / curvature;
        axpy(&mut x, alpha, &dir);
        axpy(&mut r, -alpha, &q);
        z = p.apply(&r);
        its += 1;
        let zn = norm2(&z);
        history.push(zn);
        if zn <= cfg.inner_tol * z0_norm {
            converged = true;
            status = InnerStatus::Converged;
            break;
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (di, zi) in dir.iter_mut().zip(&z) {
            *di = zi + beta * *di;
        }
    }
    InnerSolve {
        d: x,
        its,
        converged,
        status,
        res_history: history,
    }
}

/// Normwise backward error ||b - Ax||_inf / (||A||_inf ||x||_inf + ||b||_inf).
pub fn backward_error(a: &SparseSpd, b: &[f64], x: &[f64]) -> f64 {
    let mut ax = vec![0.0; b.len()];
    a.matvec(x, &mut ax);
    let num = b
        .iter()
        .zip(&ax)
        .fold(0.0f64, |m, (bi, axi)| m.max((bi - axi).abs()));
    backward_error_from_norms(num, a.norm_inf(), norm_inf(x), norm_inf(b))
}

fn backward_error_from_norms(residual: f64, norm_a: f64, norm_x: f64, norm_b: f64) -> f64 {
    let denom = norm_a * norm_x + norm_b;
    if denom == 0.0 {
        return if residual == 0.0 { 0.0 } else { f64::INFINITY };
    }
    residual / denom
}

/// Outcome of the iterative-refinement driver.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: Vec<f64>,
    pub total_inner_its: usize,
    pub outer_its: usize,
    /// Backward error before each correction and after the last one.
    pub res_history: Vec<f64>,
    pub converged: bool,
    /// True when an inner solve hit `max_inner` without converging.
    pub nc: bool,
}

/// Mixed-precision iterative refinement: x starts at zero; each outer step
/// computes the residual in working precision, solves the scaled correction
/// equation with the preconditioned inner solver, and updates x in working
/// precision, stopping once the normwise backward error of the original
/// system drops below `cfg.delta`.
///
/// The preconditioner must have been built from the scaled system
/// S^{-1} A S^{-1} of this matrix; the driver maps residuals into scaled
/// space and corrections back.
pub fn ir_driver(a: &SparseSpd, b: &[f64], p: &Preconditioner, cfg: &IrConfig) -> SolveReport {
    let n = a.n();
    assert_eq!(b.len(), n);
    assert_eq!(p.scale.s.len(), n);
    let norm_a = a.norm_inf();
    let norm_b = norm_inf(b);
    let op = ScaledOperator { a, scale: &p.scale };

    let mut x = vec![0.0; n];
    let mut ax = vec![0.0; n];
    let mut history = Vec::new();
    let mut total_inner = 0usize;
    let mut outer_its = 0usize;
    let mut nc = false;
    let mut converged = false;
    let mut inner_failed = false;

    loop {
        a.matvec(&x, &mut ax);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect();
        let res = backward_error_from_norms(norm_inf(&r), norm_a, norm_inf(&x), norm_b);
        history.push(res);
        if res <= cfg.delta {
            converged = true;
            break;
        }
        if outer_its == cfg.itmax_outer || inner_failed {
            break;
        }

        // Correction equation in scaled variables: (S^{-1}AS^{-1}) y = S^{-1} r.
        for (ri, si) in r.iter_mut().zip(&p.scale.s) {
            *ri /= si;
        }
        let inner = match cfg.solver {
            SolverKind::Gmres => gmres_solve(&op, p, &r, cfg),
            SolverKind::Cg => cg_solve(&op, p, &r, cfg),
        };
        total_inner += inner.its;
        for ((xi, di), si) in x.iter_mut().zip(&inner.d).zip(&p.scale.s) {
            *xi += di / si;
        }
        outer_its += 1;
        if !inner.converged {
            if inner.status == InnerStatus::MaxIter {
                nc = true;
            }
            inner_failed = true;
        }
    }

    SolveReport {
        x,
        total_inner_its: total_inner,
        outer_its,
        res_history: history,
        converged,
        nc,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn scaled(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
