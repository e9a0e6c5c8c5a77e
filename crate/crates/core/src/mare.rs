//! Composite modified Riccati operator and the boundedness tests.
//!
//! `phi = g_{lambda_m} ∘ … ∘ g_{lambda_1} ∘ h` maps the expected covariance at
//! one step to an upper bound at the next. Its fixed-point iteration from
//! zero is monotone; the gain-parameterized envelope `phi_m` is affine in
//! its matrix argument and is what a stability certificate is checked
//! against.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::LinearSystem;

/// A system together with per-component information rates.
#[derive(Debug, Clone, PartialEq)]
pub struct MareProblem {
    pub sys: LinearSystem,
    pub lambdas: Vec<f64>,
}

impl MareProblem {
    pub fn new(sys: LinearSystem, lambdas: Vec<f64>) -> Result<Self> {
        sys.check_dimensions()?;
        if lambdas.len() != sys.meas_dim() {
            return Err(Error::DimensionMismatch {
                what: "lambdas",
                expected_rows: sys.meas_dim(),
                expected_cols: 1,
                rows: lambdas.len(),
                cols: 1,
            });
        }
        if let Some(&bad) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(Error::InvalidArgument {
                name: "lambda",
                value: bad,
                reason: "information rates must lie in [0, 1]",
            });
        }
        if !sys.r_is_diagonal() {
            return Err(Error::NonDiagonalNoise);
        }
        Ok(Self { sys, lambdas })
    }

    pub fn m(&self) -> usize {
        self.lambdas.len()
    }

    pub fn n(&self) -> usize {
        self.sys.state_dim()
    }

    fn c_row(&self, i: usize) -> RowDVector<f64> {
        self.sys.c.row(i).into_owned()
    }

    fn r(&self, i: usize) -> f64 {
        self.sys.r[(i, i)]
    }
}

/// `h(X) = A X A' + Q`.
pub fn h_op(x: &DMatrix<f64>, sys: &LinearSystem) -> DMatrix<f64> {
    linalg::symmetrize(&(&sys.a * x * sys.a.transpose() + &sys.q))
}

/// `g_λ(X) = X − λ X c'(c X c' + r)^{-1} c X` for a single measurement row.
pub fn g_lambda(x: &DMatrix<f64>, lambda: f64, c: &RowDVector<f64>, r: f64) -> DMatrix<f64> {
    let xc = x * c.transpose();
    let denom = (c * &xc)[0] + r;
    linalg::symmetrize(&(x - (&xc * xc.transpose()) * (lambda / denom)))
}

/// `g_{λ_s} ∘ … ∘ g_{λ_1}(X)` over the first `s` components.
pub fn m_partial(x: &DMatrix<f64>, problem: &MareProblem, s: usize) -> DMatrix<f64> {
    let mut out = x.clone();
    for i in 0..s {
        out = g_lambda(&out, problem.lambdas[i], &problem.c_row(i), problem.r(i));
    }
    out
}

/// `ℳ_m(X)`: all component shrinkages, without the time update.
pub fn m_op(x: &DMatrix<f64>, problem: &MareProblem) -> DMatrix<f64> {
    m_partial(x, problem, problem.m())
}

/// `φ(X) = ℳ_m(h(X))`.
pub fn varphi(x: &DMatrix<f64>, problem: &MareProblem) -> DMatrix<f64> {
    m_op(&h_op(x, &problem.sys), problem)
}

/// `ψ_λ(L, X) = (1−λ) X + λ (E X E' + L r L')` with `E = I + L c`.
pub fn psi_lambda(
    l: &DVector<f64>,
    x: &DMatrix<f64>,
    lambda: f64,
    c: &RowDVector<f64>,
    r: f64,
) -> DMatrix<f64> {
    let n = x.nrows();
    let e = DMatrix::identity(n, n) + l * c;
    let inner = &e * x * e.transpose() + (l * l.transpose()) * r;
    linalg::symmetrize(&(x * (1.0 - lambda) + inner * lambda))
}

/// Gain minimizing `ψ_λ(·, X)`: `−X c'(c X c' + r)^{-1}`.
pub fn psi_optimal_gain(x: &DMatrix<f64>, c: &RowDVector<f64>, r: f64) -> DVector<f64> {
    let xc = x * c.transpose();
    let denom = (c * &xc)[0] + r;
    -xc / denom
}

/// Weights `η²_{j,s}` for `j = 0..=s`, with `λ_0 = 1`.
///
/// `lambdas[i-1]` holds `λ_i`. `η²_{j,s} = λ_j ∏_{i=j+1}^{s} (1 − λ_i)`.
pub fn eta_coeffs(lambdas: &[f64], s: usize) -> Vec<f64> {
    assert!(s <= lambdas.len(), "s exceeds the number of components");
    let lam = |j: usize| if j == 0 { 1.0 } else { lambdas[j - 1] };
    let mut out = vec![0.0; s + 1];
    let mut tail = 1.0;
    for j in (0..=s).rev() {
        out[j] = lam(j) * tail;
        if j > 0 {
            tail *= 1.0 - lam(j);
        }
    }
    out
}

// Sum over j of η²_{j,s} (E_j T_{j−1} E_j' + L_j R_j L_j'), with or without the
// L R L' terms, starting from `x` as T_{-1} = T_0.
fn t_sum(gains: &[DVector<f64>], x: &DMatrix<f64>, problem: &MareProblem, noise: bool) -> DMatrix<f64> {
    let s = gains.len();
    assert!(s <= problem.m(), "more gains than measurement components");
    let n = x.nrows();
    // Terms B_j do not depend on s, so they are computed once.
    let mut terms: Vec<DMatrix<f64>> = Vec::with_capacity(s + 1);
    terms.push(x.clone());
    let mut t_prev = x.clone();
    for j in 1..=s {
        let l = &gains[j - 1];
        let e = DMatrix::identity(n, n) + l * problem.c_row(j - 1);
        let mut b = &e * &t_prev * e.transpose();
        if noise {
            b += (l * l.transpose()) * problem.r(j - 1);
        }
        terms.push(b);
        let w = eta_coeffs(&problem.lambdas, j);
        let mut t = DMatrix::zeros(n, n);
        for (wj, bj) in w.iter().zip(&terms) {
            t += bj * *wj;
        }
        t_prev = linalg::symmetrize(&t);
    }
    t_prev
}

/// `𝒯_s(L_1..L_s, X)` with `s = gains.len()`.
pub fn t_recursion(gains: &[DVector<f64>], x: &DMatrix<f64>, problem: &MareProblem) -> DMatrix<f64> {
    t_sum(gains, x, problem, true)
}

/// `φ_m(L_1..L_m, X) = 𝒯_m(L, h(X))`.
pub fn phi_m(gains: &[DVector<f64>], x: &DMatrix<f64>, problem: &MareProblem) -> DMatrix<f64> {
    t_recursion(gains, &h_op(x, &problem.sys), problem)
}

/// Linear part `ℒ_m(Y)` of `φ_m`: the recursion started from `A Y A'` with
/// the `Q` and `L R L'` terms dropped.
///
/// `φ_m(L, Y) = ℒ_m(Y) + φ_m(L, 0)` for every `Y`.
pub fn linear_part(y: &DMatrix<f64>, gains: &[DVector<f64>], problem: &MareProblem) -> DMatrix<f64> {
    let a = &problem.sys.a;
    let start = linalg::symmetrize(&(a * y * a.transpose()));
    t_sum(gains, &start, problem, false)
}

/// Gains `L_j^X` that make `𝒯_m(L^X, X) = ℳ_m(X)`, each taken from the
/// running `𝒯_{j−1}`.
pub fn t_optimal_gains(x: &DMatrix<f64>, problem: &MareProblem) -> Vec<DVector<f64>> {
    let mut gains = Vec::with_capacity(problem.m());
    for j in 0..problem.m() {
        let t = if j == 0 { x.clone() } else { t_recursion(&gains, x, problem) };
        gains.push(psi_optimal_gain(&t, &problem.c_row(j), problem.r(j)));
    }
    gains
}

/// Gains at which `φ_m(L, X) = φ(X)`.
pub fn optimal_gains(x: &DMatrix<f64>, problem: &MareProblem) -> Vec<DVector<f64>> {
    t_optimal_gains(&h_op(x, &problem.sys), problem)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterOptions {
    /// Convergence when the max-norm of the increment is at most this.
    pub tol: f64,
    pub max_iter: usize,
    /// Divergence once the trace exceeds this.
    pub trace_ceiling: f64,
}

impl Default for IterOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 100_000,
            trace_ceiling: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterationStatus {
    Converged,
    Diverged,
    Undetermined,
}

impl IterationStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::Diverged => "diverged",
            Self::Undetermined => "undetermined",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointRun {
    pub status: IterationStatus,
    /// Last iterate (the fixed point when converged).
    pub last: DMatrix<f64>,
    pub iterations: usize,
    /// Trace of every iterate, starting with `X0`.
    pub trace_history: Vec<f64>,
    pub last_increment: f64,
}

impl FixedPointRun {
    pub fn fixed_point(&self) -> Option<&DMatrix<f64>> {
        (self.status == IterationStatus::Converged).then_some(&self.last)
    }
}

const GROWTH_WINDOW: usize = 10;

/// `P_{k+1} = φ(P_k)` from `x0`.
pub fn iterate_fixed_point(problem: &MareProblem, x0: &DMatrix<f64>, opts: &IterOptions) -> FixedPointRun {
    assert!(opts.tol > 0.0, "tolerance must be positive");
    let mut cur = x0.clone();
    let mut history = vec![cur.trace()];
    let mut inc = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let next = varphi(&cur, problem);
        inc = linalg::max_abs(&(&next - &cur));
        let tr = next.trace();
        history.push(tr);
        cur = next;
        if !tr.is_finite() || tr > opts.trace_ceiling {
            return run(IterationStatus::Diverged, cur, it, history, inc);
        }
        if inc <= opts.tol {
            return run(IterationStatus::Converged, cur, it, history, inc);
        }
    }
    let growing = history.len() > GROWTH_WINDOW
        && history[history.len() - GROWTH_WINDOW - 1..]
            .windows(2)
            .all(|w| w[1] > w[0]);
    let status = if growing {
        IterationStatus::Diverged
    } else {
        IterationStatus::Undetermined
    };
    run(status, cur, opts.max_iter, history, inc)
}

fn run(status: IterationStatus, last: DMatrix<f64>, iterations: usize, trace_history: Vec<f64>, last_increment: f64) -> FixedPointRun {
    FixedPointRun {
        status,
        last,
        iterations,
        trace_history,
        last_increment,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NecessaryCheck {
    pub ok: bool,
    /// `∏ (1 − λ_i)`.
    pub lhs: f64,
    /// `1 / ρ(A)²`.
    pub rhs: f64,
}

pub fn necessary_check(problem: &MareProblem) -> NecessaryCheck {
    let lhs = problem.lambdas.iter().map(|l| 1.0 - l).product::<f64>();
    let rho = linalg::spectral_radius(&problem.sys.a);
    let rhs = 1.0 / (rho * rho);
    NecessaryCheck {
        ok: lhs <= rhs,
        lhs,
        rhs,
    }
}

/// Gains and matrix with `P̃ ≻ 0` and `P̃ − φ_m(L̃, P̃) ≻ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub gains: Vec<DVector<f64>>,
    pub p_tilde: DMatrix<f64>,
    /// Smallest eigenvalue of `P̃ − φ_m(L̃, P̃)`.
    pub margin: f64,
    pub direction: InflationDirection,
    pub inflation: f64,
}

/// How the fixed point was inflated to obtain `P̃`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InflationDirection {
    /// `P̄ + c I`.
    Identity,
    /// `P̄ + c D` with `D − ℒ_m(D) = I`.
    Lyapunov,
}

impl InflationDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Lyapunov => "lyapunov",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SufficientCheck {
    pub ok: bool,
    pub certificate: Option<Certificate>,
    pub notes: Vec<String>,
}

const LADDER: [f64; 4] = [1e-6, 1e-4, 1e-2, 1.0];

/// Searches for a stability certificate around the fixed point reached from 0.
///
/// `ok = false` means no certificate was found, not that none exists.
pub fn sufficient_check(problem: &MareProblem, margin_tol: f64) -> SufficientCheck {
    let run = iterate_fixed_point(problem, &DMatrix::zeros(problem.n(), problem.n()), &IterOptions::default());
    certify(problem, &run, margin_tol)
}

/// Certificate search from an existing fixed-point run.
pub fn certify(problem: &MareProblem, run: &FixedPointRun, margin_tol: f64) -> SufficientCheck {
    let mut notes = Vec::new();
    let Some(p_bar) = run.fixed_point() else {
        notes.push(format!("fixed-point iteration {}; no certificate searched", run.status.as_str()));
        return SufficientCheck {
            ok: false,
            certificate: None,
            notes,
        };
    };
    let n = problem.n();
    let gains = optimal_gains(p_bar, problem);
    let scale = (p_bar.trace() / n as f64).max(f64::MIN_POSITIVE);

    let attempt = |dir: &DMatrix<f64>, kind: InflationDirection| -> Option<Certificate> {
        for c in LADDER {
            let inflation = c * scale;
            let p_tilde = linalg::symmetrize(&(p_bar + dir * inflation));
            if !(linalg::min_eigenvalue(&p_tilde) > 0.0) {
                continue;
            }
            let margin = linalg::min_eigenvalue(&(&p_tilde - phi_m(&gains, &p_tilde, problem)));
            if margin > margin_tol {
                return Some(Certificate {
                    gains: gains.clone(),
                    p_tilde,
                    margin,
                    direction: kind,
                    inflation,
                });
            }
        }
        None
    };

    let mut certificate = attempt(&DMatrix::identity(n, n), InflationDirection::Identity);
    if certificate.is_none() {
        match lyapunov_direction(&gains, problem) {
            Some(d) => {
                notes.push(String::from("identity inflation failed; used the Lyapunov direction of the linear part"));
                certificate = attempt(&d, InflationDirection::Lyapunov);
            }
            None => notes.push(String::from("linear part at the fixed-point gains is not contractive")),
        }
    }

    let lo = linalg::min_eigenvalue(p_bar);
    if !(lo > 0.0) {
        if linalg::min_eigenvalue(&problem.sys.q) > 0.0 {
            notes.push(format!("fixed point is not positive definite although Q is (min eigenvalue {lo:e})"));
        } else {
            notes.push(format!("Q is singular and the fixed point has min eigenvalue {lo:e}"));
        }
    }
    if certificate.is_none() {
        notes.push(String::from("no certificate found on the inflation ladder"));
    }
    SufficientCheck {
        ok: certificate.is_some(),
        certificate,
        notes,
    }
}

// Solves D = ℒ_m(D) + I by iteration; None when the series does not settle.
fn lyapunov_direction(gains: &[DVector<f64>], problem: &MareProblem) -> Option<DMatrix<f64>> {
    let n = problem.n();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut d = eye.clone();
    for _ in 0..100_000 {
        let next = linear_part(&d, gains, problem) + &eye;
        let inc = linalg::max_abs(&(&next - &d));
        d = next;
        if !(d.trace() < 1e12) {
            return None;
        }
        if inc <= 1e-12 * linalg::max_abs(&d) {
            return Some(linalg::symmetrize(&d));
        }
    }
    None
}

/// Fixed point, iteration history, and both condition verdicts.
#[derive(Debug, Clone, PartialEq)]
pub struct MareReport {
    pub run: FixedPointRun,
    pub necessary: NecessaryCheck,
    pub sufficient: SufficientCheck,
}

impl MareReport {
    pub fn fixed_point(&self) -> Option<&DMatrix<f64>> {
        self.run.fixed_point()
    }
}

pub fn analyze(problem: &MareProblem, opts: &IterOptions, margin_tol: f64) -> MareReport {
    let run = iterate_fixed_point(problem, &DMatrix::zeros(problem.n(), problem.n()), opts);
    let sufficient = certify(problem, &run, margin_tol);
    MareReport {
        necessary: necessary_check(problem),
        sufficient,
        run,
    }
}
