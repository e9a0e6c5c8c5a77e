//! The plant: `x_{k+1} = A x_k + w_k`, `y_k = C x_k + v_k`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Linear Gaussian state-space model with its initial-state prior.
///
/// Fields are public so callers can build systems from whatever source they
/// like; [`LinearSystem::new`] and [`LinearSystem::check`] enforce the shape
/// and covariance invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub x0_mean: DVector<f64>,
    pub p0: DMatrix<f64>,
}

/// Outcome of the structural checks (controllability, observability, diagonal noise).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub controllable: bool,
    pub observable: bool,
    pub r_diagonal: bool,
    pub messages: Vec<String>,
}

impl ValidationReport {
    /// All structural assumptions hold, so the stability theory applies.
    pub fn assumptions_hold(&self) -> bool {
        self.controllable && self.observable && self.r_diagonal
    }
}

// Rank decisions closer than this factor to the threshold are reported.
const RANK_DEGENERACY_FACTOR: f64 = 1e3;

impl LinearSystem {
    pub fn new(
        a: DMatrix<f64>,
        c: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        x0_mean: DVector<f64>,
        p0: DMatrix<f64>,
    ) -> Result<Self> {
        let sys = Self {
            a,
            c,
            q,
            r,
            x0_mean,
            p0,
        };
        sys.check()?;
        Ok(sys)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn meas_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Shape checks only.
    pub fn check_dimensions(&self) -> Result<()> {
        let n = self.a.nrows();
        linalg::check_shape(&self.a, "A", n, n)?;
        let m = self.c.nrows();
        linalg::check_shape(&self.c, "C", m, n)?;
        linalg::check_shape(&self.q, "Q", n, n)?;
        linalg::check_shape(&self.r, "R", m, m)?;
        if self.x0_mean.len() != n {
            return Err(Error::DimensionMismatch {
                what: "x0_mean",
                expected_rows: n,
                expected_cols: 1,
                rows: self.x0_mean.len(),
                cols: 1,
            });
        }
        linalg::check_shape(&self.p0, "P0", n, n)
    }

    /// Shapes plus `Q ⪰ 0`, `R ≻ 0`, `P0 ≻ 0` (all symmetric).
    pub fn check(&self) -> Result<()> {
        self.check_dimensions()?;
        check_symmetric(&self.q, "Q")?;
        check_symmetric(&self.r, "R")?;
        check_symmetric(&self.p0, "P0")?;
        if !linalg::is_psd(&self.q) {
            return Err(Error::NotPositiveSemidefinite {
                what: "Q",
                eigenvalue: linalg::min_eigenvalue(&self.q),
            });
        }
        for (m, what) in [(&self.r, "R"), (&self.p0, "P0")] {
            let lo = linalg::min_eigenvalue(m);
            if !(lo > 0.0) {
                return Err(Error::NotPositiveDefinite {
                    what,
                    eigenvalue: lo,
                });
            }
        }
        Ok(())
    }

    /// Row `i` of `C`.
    pub fn c_row(&self, i: usize) -> nalgebra::RowDVector<f64> {
        self.c.row(i).into_owned()
    }

    /// Diagonal entry `R_i`.
    pub fn r_diag(&self, i: usize) -> f64 {
        self.r[(i, i)]
    }

    pub fn r_is_diagonal(&self) -> bool {
        linalg::is_diagonal(&self.r, 0.0)
    }

    /// Rank tests for `(A, Q^{1/2})` controllability and `(C, A)`
    /// observability, plus the diagonal-noise check.
    ///
    /// The report is advisory: a dimension mismatch is the only hard error.
    pub fn validate(&self) -> Result<ValidationReport> {
        self.check_dimensions()?;
        let n = self.state_dim();
        let mut messages = Vec::new();

        let q_half = linalg::sym_sqrt(&self.q);
        let ctrb = controllability_matrix(&self.a, &q_half);
        let (c_rank, c_margin) = linalg::numerical_rank(&ctrb);
        let controllable = c_rank == n;
        if !controllable {
            messages.push(format!(
                "(A, Q^1/2) is not controllable: controllability rank {c_rank} < {n}"
            ));
        }
        if c_margin < RANK_DEGENERACY_FACTOR && c_rank > 0 {
            messages.push(format!(
                "controllability rank decision is numerically fragile (smallest kept singular value is {c_margin:.1}x the threshold)"
            ));
        }

        let obsv = controllability_matrix(&self.a.transpose(), &self.c.transpose());
        let (o_rank, o_margin) = linalg::numerical_rank(&obsv);
        let observable = o_rank == n;
        if !observable {
            messages.push(format!(
                "(C, A) is not observable: observability rank {o_rank} < {n}"
            ));
        }
        if o_margin < RANK_DEGENERACY_FACTOR && o_rank > 0 {
            messages.push(format!(
                "observability rank decision is numerically fragile (smallest kept singular value is {o_margin:.1}x the threshold)"
            ));
        }

        let r_diagonal = self.r_is_diagonal();
        if !r_diagonal {
            messages.push(String::from(
                "R is not diagonal; whiten the measurements before sequential processing",
            ));
        }

        Ok(ValidationReport {
            controllable,
            observable,
            r_diagonal,
            messages,
        })
    }

    /// Measurement whitening: `C̃ = R^{-1/2} C`, `R̃ = I`.
    ///
    /// For a diagonal `R` this is a per-row scaling by `1/sqrt(R_i)`;
    /// otherwise the symmetric inverse square root is used.
    pub fn whiten(&self) -> Result<Self> {
        self.check_dimensions()?;
        let m = self.meas_dim();
        let c_tilde = if self.r_is_diagonal() {
            let mut c = self.c.clone();
            for i in 0..m {
                let ri = self.r[(i, i)];
                if !(ri > 0.0) {
                    return Err(Error::NotPositiveDefinite {
                        what: "R",
                        eigenvalue: ri,
                    });
                }
                let scale = 1.0 / libm::sqrt(ri);
                c.row_mut(i).scale_mut(scale);
            }
            c
        } else {
            linalg::sym_inv_sqrt(&self.r, "R")? * &self.c
        };
        Ok(Self {
            a: self.a.clone(),
            c: c_tilde,
            q: self.q.clone(),
            r: DMatrix::identity(m, m),
            x0_mean: self.x0_mean.clone(),
            p0: self.p0.clone(),
        })
    }
}

fn check_symmetric(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    let asym = linalg::max_asymmetry(m);
    if asym > 1e-9 * (1.0 + linalg::max_abs(m)) {
        return Err(Error::NotSymmetric {
            what,
            asymmetry: asym,
        });
    }
    Ok(())
}

/// `[B, AB, A²B, …, A^{n-1}B]`.
fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let cols = b.ncols();
    let mut out = DMatrix::zeros(n, n * cols);
    let mut block = b.clone();
    for k in 0..n {
        out.columns_mut(k * cols, cols).copy_from(&block);
        block = a * block;
    }
    out
}
