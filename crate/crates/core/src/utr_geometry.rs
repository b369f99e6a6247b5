//! Quotient geometry of uniform tensor rings.
//!
//! A uniform ring shares one core across all modes and the gauge group
//! shrinks to a single `A in GL(r)` acting as `C(i) -> A C(i) A^{-1}`. The
//! vertical space is `{D C(i) - C(i) D : tr D = 0}` and the horizontal space is
//! cut out by the single residual `V_(1) C_(1)^T - C_(3) V_(3)^T = 0`.
//!
//! The projection system is the single-core case of the TR system: the ring
//! closes on itself, so the diagonal and coupling blocks add up into one
//! `r^2 x r^2` block.

use crate::error::{arg_err, Result};
use crate::geometry::{self, coupling_block, diagonal_block, TangentVector};
use crate::linalg::{solve_least_squares, Matrix};
use crate::tensor::{dot, DenseTensor};
use crate::tr::{core_injectivity, CoreInjectivity, UtrCore};

/// Tangent vector at a uTR core: a tensor shaped like the core.
#[derive(Debug, Clone, PartialEq)]
pub struct UtrTangent(pub DenseTensor);

impl UtrTangent {
    pub fn zeros_like(c: &UtrCore) -> Self {
        Self(DenseTensor::zeros(c.core().shape().clone()))
    }

    pub fn from_core(c: &UtrCore) -> Self {
        Self(c.core().clone())
    }

    pub fn tensor(&self) -> &DenseTensor {
        &self.0
    }

    pub fn sub(&self, other: &UtrTangent) -> UtrTangent {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    fn check_compatible(&self, c: &UtrCore) -> Result<()> {
        if self.0.shape() != c.core().shape() {
            return arg_err(format!("tangent shape {:?} does not match core {:?}", self.0.dims(), c.core().dims()));
        }
        Ok(())
    }
}

impl TangentVector for UtrTangent {
    fn inner(&self, other: &Self) -> f64 {
        dot(self.0.data(), other.0.data())
    }

    fn axpy(&mut self, alpha: f64, other: &Self) {
        self.0.axpy(alpha, &other.0).expect("tangent shapes agree");
    }

    fn scaled(&self, alpha: f64) -> Self {
        Self(self.0.scaled(alpha))
    }
}

/// `D C(i) - C(i) D` for every slice.
pub fn u_vertical_from_direction(c: &UtrCore, d: &Matrix) -> Result<UtrTangent> {
    let r = c.bond();
    if d.rows() != r || d.cols() != r {
        return arg_err(format!("direction is {}x{}, bond dimension is {r}", d.rows(), d.cols()));
    }
    if d.trace().abs() > 1e-12 * d.fro_norm() {
        return arg_err(format!("tr(D) = {} is not zero", d.trace()));
    }
    Ok(vertical_unchecked(c, d))
}

fn vertical_unchecked(c: &UtrCore, d: &Matrix) -> UtrTangent {
    let left = c.core().mode1_product(d).expect("square direction");
    let right = c.core().mode3_product(&d.transpose()).expect("square direction");
    UtrTangent(left.sub(&right).expect("same shapes"))
}

/// `V_(1) C_(1)^T - C_(3) V_(3)^T`.
pub fn u_horizontal_residual(c: &UtrCore, v: &UtrTangent) -> Result<Matrix> {
    v.check_compatible(c)?;
    let lhs = v.0.unfold(0)?.matmul_t(&c.core().unfold(0)?)?;
    let rhs = c.core().unfold(2)?.matmul_t(&v.0.unfold(2)?)?;
    lhs.sub(&rhs)
}

/// The `(r^2 + 1) x r^2` projection system: the symmetric block
/// `A + B + B^T` followed by the `tr(D) = 0` row. Its size does not depend on
/// the order of the ring.
pub fn u_projection_system(c: &UtrCore, v: &UtrTangent) -> Result<geometry::ProjectionSystem> {
    v.check_compatible(c)?;
    let r = c.bond();
    let b = coupling_block(c.core())?;
    let block = diagonal_block(c.core(), c.core())?.add(&b)?.add(&b.transpose())?;
    let n = r * r;
    let mut matrix = Matrix::zeros(n + 1, n);
    for j in 0..n {
        for i in 0..n {
            matrix.set(i, j, block.get(i, j));
        }
    }
    for i in 0..r {
        matrix.set(n, i + r * i, 1.0);
    }
    let mut rhs = u_horizontal_residual(c, v)?.into_vec();
    rhs.push(0.0);
    Ok(geometry::ProjectionSystem { matrix, rhs, ranks: vec![r] })
}

#[derive(Debug, Clone)]
pub struct UtrProjection {
    pub vertical: UtrTangent,
    pub horizontal: UtrTangent,
    pub direction: Matrix,
    pub rank_deficient: bool,
}

/// Orthogonal projections of `v` onto the vertical and horizontal spaces at `c`.
pub fn u_project(c: &UtrCore, v: &UtrTangent) -> Result<UtrProjection> {
    let sys = u_projection_system(c, v)?;
    let sol = solve_least_squares(&sys.matrix, &sys.rhs)?;
    let r = c.bond();
    let direction = Matrix::from_col_major(r, r, sol.x)?;
    let vertical = vertical_unchecked(c, &direction);
    let horizontal = v.sub(&vertical);
    Ok(UtrProjection { vertical, horizontal, direction, rank_deficient: sol.rank_deficient })
}

pub fn u_project_horizontal(c: &UtrCore, v: &UtrTangent) -> Result<UtrTangent> {
    Ok(u_project(c, v)?.horizontal)
}

pub fn u_project_vertical(c: &UtrCore, v: &UtrTangent) -> Result<UtrTangent> {
    Ok(u_project(c, v)?.vertical)
}

pub fn u_retract(c: &UtrCore, xi: &UtrTangent, s: f64) -> Result<UtrCore> {
    xi.check_compatible(c)?;
    let mut core = c.core().clone();
    core.axpy(s, &xi.0)?;
    UtrCore::new(core, c.order())
}

/// Full column rank of the core's mode-2 unfolding.
pub fn u_injectivity(c: &UtrCore, tol: f64) -> CoreInjectivity {
    core_injectivity(c.core(), tol)
}

/// Matrix of `D -> D C(i) - C(i) D` on `vec(D)` (no trace constraint).
pub fn u_vertical_map_matrix(c: &UtrCore) -> Matrix {
    let r = c.bond();
    let mut m = Matrix::zeros(c.core().data().len(), r * r);
    for col in 0..r * r {
        let mut e = Matrix::zeros(r, r);
        e.as_mut_slice()[col] = 1.0;
        for (row, &val) in vertical_unchecked(c, &e).0.data().iter().enumerate() {
            m.set(row, col, val);
        }
    }
    m
}
