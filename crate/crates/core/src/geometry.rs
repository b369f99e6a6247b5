//! Quotient geometry of injective tensor rings modulo the gauge group.
//!
//! The total space is the open set of cores whose mode-2 unfoldings have full
//! column rank, with the Euclidean metric. Vertical vectors are the tangents
//! to gauge orbits,
//!
//! ```text
//! eta_k = U_k x_1 D_k - U_k x_3 D_{k+1}^T,   tr(D_1) = 0,
//! ```
//!
//! and a vector `xi` is horizontal exactly when every coupling residual
//!
//! ```text
//! R_k = (xi_k)_(1) (U_k)_(1)^T - (U_{k-1})_(3) (xi_{k-1})_(3)^T
//! ```
//!
//! vanishes. Orthogonal projection onto the vertical space solves a
//! `(sum r_k^2 + 1) x sum r_k^2` linear system for the `D_k`; the extra row
//! pins the scalar gauge through `tr(D_1) = 0`.

use crate::error::{arg_err, Result};
use crate::linalg::{kron, solve_least_squares, Matrix};
use crate::tensor::{dot, DenseTensor};
use crate::tr::TrCores;

/// Vector-space operations shared by TR and uTR tangent vectors.
pub trait TangentVector: Clone + Send + Sync {
    /// Euclidean metric.
    fn inner(&self, other: &Self) -> f64;
    /// `self += alpha * other`.
    fn axpy(&mut self, alpha: f64, other: &Self);
    fn scaled(&self, alpha: f64) -> Self;

    fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }
}

/// One order-3 tensor per core, shaped like the reference cores.
#[derive(Debug, Clone, PartialEq)]
pub struct TrTangent {
    parts: Vec<DenseTensor>,
}

impl TrTangent {
    pub fn new(parts: Vec<DenseTensor>) -> Self {
        Self { parts }
    }

    pub fn zeros_like(u: &TrCores) -> Self {
        Self { parts: u.cores().iter().map(|c| DenseTensor::zeros(c.shape().clone())).collect() }
    }

    /// The cores themselves viewed as a tangent vector (the total space is a
    /// linear space).
    pub fn from_cores(u: &TrCores) -> Self {
        Self { parts: u.cores().to_vec() }
    }

    pub fn parts(&self) -> &[DenseTensor] {
        &self.parts
    }

    pub fn part(&self, k: usize) -> &DenseTensor {
        &self.parts[k]
    }

    pub fn parts_mut(&mut self) -> &mut [DenseTensor] {
        &mut self.parts
    }

    pub fn check_compatible(&self, u: &TrCores) -> Result<()> {
        if self.parts.len() != u.order() {
            return arg_err(format!("tangent has {} parts, ring has {} cores", self.parts.len(), u.order()));
        }
        for (k, (p, c)) in self.parts.iter().zip(u.cores()).enumerate() {
            if p.shape() != c.shape() {
                return arg_err(format!("tangent part {k} has shape {:?}, core is {:?}", p.dims(), c.dims()));
            }
        }
        Ok(())
    }

    pub fn sub(&self, other: &TrTangent) -> TrTangent {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }
}

impl TangentVector for TrTangent {
    fn inner(&self, other: &Self) -> f64 {
        self.parts.iter().zip(&other.parts).map(|(a, b)| dot(a.data(), b.data())).sum()
    }

    fn axpy(&mut self, alpha: f64, other: &Self) {
        for (a, b) in self.parts.iter_mut().zip(&other.parts) {
            a.axpy(alpha, b).expect("tangent parts share shapes");
        }
    }

    fn scaled(&self, alpha: f64) -> Self {
        Self { parts: self.parts.iter().map(|p| p.scaled(alpha)).collect() }
    }
}

/// `sum_k <x_k, y_k>`.
pub fn metric_inner(x: &TrTangent, y: &TrTangent) -> Result<f64> {
    if x.parts.len() != y.parts.len() {
        return arg_err("tangent vectors have different numbers of parts");
    }
    x.parts.iter().zip(&y.parts).map(|(a, b)| a.inner(b)).sum()
}

/// Translation retraction `u_k + s xi_k` on the open total space.
pub fn retract(u: &TrCores, xi: &TrTangent, s: f64) -> Result<TrCores> {
    xi.check_compatible(u)?;
    let cores = u
        .cores()
        .iter()
        .zip(&xi.parts)
        .map(|(c, x)| {
            let mut c = c.clone();
            c.axpy(s, x)?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    TrCores::new(cores)
}

/// Gauge direction `(D_1, ..., D_d)` with `tr(D_1) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeDirection {
    mats: Vec<Matrix>,
}

impl GaugeDirection {
    /// Fails unless `|tr(D_1)| <= 1e-12 ||D_1||_F`.
    pub fn new(mats: Vec<Matrix>) -> Result<Self> {
        Self::validate_square(&mats)?;
        let d1 = &mats[0];
        if d1.trace().abs() > 1e-12 * d1.fro_norm() {
            return arg_err(format!("tr(D_1) = {} is not zero", d1.trace()));
        }
        Ok(Self { mats })
    }

    /// Removes the trace of `D_1` by subtracting `tr(D_1)/r_1 I`.
    pub fn trace_free(mut mats: Vec<Matrix>) -> Result<Self> {
        Self::validate_square(&mats)?;
        let r = mats[0].rows();
        let t = mats[0].trace() / r as f64;
        for i in 0..r {
            let v = mats[0].get(i, i);
            mats[0].set(i, i, v - t);
        }
        Ok(Self { mats })
    }

    fn validate_square(mats: &[Matrix]) -> Result<()> {
        if mats.is_empty() {
            return arg_err("gauge direction needs at least one matrix");
        }
        if mats.iter().any(|m| m.rows() != m.cols()) {
            return arg_err("gauge direction matrices must be square");
        }
        Ok(())
    }

    pub fn mats(&self) -> &[Matrix] {
        &self.mats
    }

    /// Splits a stacked `[vec(D_1); ...; vec(D_d)]` vector.
    pub(crate) fn from_stacked(x: &[f64], ranks: &[usize]) -> Self {
        let mut off = 0;
        let mats = ranks
            .iter()
            .map(|&r| {
                let m = Matrix::from_col_major(r, r, x[off..off + r * r].to_vec()).unwrap();
                off += r * r;
                m
            })
            .collect();
        Self { mats }
    }
}

/// Vertical vector generated by a gauge direction:
/// `eta_k = U_k x_1 D_k - U_k x_3 D_{k+1}^T`, so each slice is
/// `D_k U_k(i) - U_k(i) D_{k+1}`.
pub fn vertical_from_direction(u: &TrCores, dir: &GaugeDirection) -> Result<TrTangent> {
    let d = u.order();
    if dir.mats.len() != d {
        return arg_err(format!("direction has {} matrices, ring has {d} cores", dir.mats.len()));
    }
    let rank = u.rank();
    for (k, m) in dir.mats.iter().enumerate() {
        if m.rows() != rank.get(k) {
            return arg_err(format!("D_{} is {1}x{1}, bond dimension is {2}", k + 1, m.rows(), rank.get(k)));
        }
    }
    let parts = (0..d)
        .map(|k| {
            let left = u.core(k).mode1_product(&dir.mats[k])?;
            let right = u.core(k).mode3_product(&dir.mats[(k + 1) % d].transpose())?;
            left.sub(&right)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrTangent { parts })
}

/// Coupling residuals `R_1, ..., R_d` (with `xi_0 = xi_d`, `U_0 = U_d`);
/// `xi` is horizontal iff all of them vanish.
pub fn horizontal_residual(u: &TrCores, xi: &TrTangent) -> Result<Vec<Matrix>> {
    xi.check_compatible(u)?;
    let d = u.order();
    (0..d)
        .map(|k| {
            let prev = (k + d - 1) % d;
            let lhs = xi.parts[k].unfold(0)?.matmul_t(&u.core(k).unfold(0)?)?;
            let rhs = u.core(prev).unfold(2)?.matmul_t(&xi.parts[prev].unfold(2)?)?;
            lhs.sub(&rhs)
        })
        .collect()
}

/// Frobenius norm of all residual blocks together.
pub fn residual_norm(res: &[Matrix]) -> f64 {
    res.iter().map(|m| m.fro_norm().powi(2)).sum::<f64>().sqrt()
}

/// Stacked linear system for the vertical component.
#[derive(Debug, Clone)]
pub struct ProjectionSystem {
    /// `(sum r_k^2 + 1) x sum r_k^2`: the block cyclic-tridiagonal operator
    /// followed by the `tr(D_1) = 0` row.
    pub matrix: Matrix,
    pub rhs: Vec<f64>,
    /// Bond dimensions, i.e. block sizes are `ranks[k]^2`.
    pub ranks: Vec<usize>,
}

impl ProjectionSystem {
    pub fn unknowns(&self) -> usize {
        self.matrix.cols()
    }

    fn block_offsets(&self) -> Vec<usize> {
        let mut offs = vec![0];
        for r in &self.ranks {
            offs.push(offs.last().unwrap() + r * r);
        }
        offs
    }

    /// Block `(k, l)` of the square part, a `r_k^2 x r_l^2` matrix.
    pub fn block(&self, k: usize, l: usize) -> Matrix {
        let offs = self.block_offsets();
        let (rk, rl) = (self.ranks[k] * self.ranks[k], self.ranks[l] * self.ranks[l]);
        let mut b = Matrix::zeros(rk, rl);
        for j in 0..rl {
            for i in 0..rk {
                b.set(i, j, self.matrix.get(offs[k] + i, offs[l] + j));
            }
        }
        b
    }
}

fn add_block(m: &mut Matrix, row: usize, col: usize, b: &Matrix) {
    for j in 0..b.cols() {
        for i in 0..b.rows() {
            let v = m.get(row + i, col + j) + b.get(i, j);
            m.set(row + i, col + j, v);
        }
    }
}

/// `A_k = I_{r_k} (x) (U_{k-1})_(3) (U_{k-1})_(3)^T + (U_k)_(1) (U_k)_(1)^T (x) I_{r_k}`.
pub(crate) fn diagonal_block(u_k: &DenseTensor, u_prev: &DenseTensor) -> Result<Matrix> {
    let r = u_k.dims()[0];
    let m3 = u_prev.unfold(2)?;
    let m1 = u_k.unfold(0)?;
    let h = m3.matmul_t(&m3)?;
    let g = m1.matmul_t(&m1)?;
    kron(&Matrix::identity(r), &h).add(&kron(&g, &Matrix::identity(r)))
}

/// `B_k = -((U_k)_(1) (x) I_{r_k}) (I_{r_{k+1}} (x) (U_k)_(3)^T)`.
pub(crate) fn coupling_block(u_k: &DenseTensor) -> Result<Matrix> {
    let (r, s) = (u_k.dims()[0], u_k.dims()[2]);
    let left = kron(&u_k.unfold(0)?, &Matrix::identity(r));
    let right = kron(&Matrix::identity(s), &u_k.unfold(2)?.transpose());
    Ok(left.matmul(&right)?.scale(-1.0))
}

/// Assembles the vertical-projection system for direction `v` at `u`.
///
/// Block row `k` reads `B_{k-1}^T vec(D_{k-1}) + A_k vec(D_k) + B_k vec(D_{k+1}) = b_k`
/// with `b_k = vec((V_k)_(1)(U_k)_(1)^T - (U_{k-1})_(3)(V_{k-1})_(3)^T)`; blocks
/// wrap around the ring (corner blocks `B_d`, `B_d^T`). Blocks that land on the
/// same position (`d <= 2`) are summed. The last row is `vec(I)^T vec(D_1) = 0`.
pub fn assemble_projection_system(u: &TrCores, v: &TrTangent) -> Result<ProjectionSystem> {
    v.check_compatible(u)?;
    let d = u.order();
    let ranks = u.rank().as_slice().to_vec();
    let mut offs = vec![0usize];
    for r in &ranks {
        offs.push(offs.last().unwrap() + r * r);
    }
    let n = offs[d];
    let mut matrix = Matrix::zeros(n + 1, n);
    for k in 0..d {
        let prev = (k + d - 1) % d;
        let next = (k + 1) % d;
        add_block(&mut matrix, offs[k], offs[k], &diagonal_block(u.core(k), u.core(prev))?);
        let b = coupling_block(u.core(k))?;
        add_block(&mut matrix, offs[k], offs[next], &b);
        add_block(&mut matrix, offs[next], offs[k], &b.transpose());
    }
    let r1 = ranks[0];
    for i in 0..r1 {
        matrix.set(n, i + r1 * i, 1.0);
    }

    let mut rhs = Vec::with_capacity(n + 1);
    for r in horizontal_residual(u, v)? {
        rhs.extend_from_slice(r.as_slice());
    }
    rhs.push(0.0);
    Ok(ProjectionSystem { matrix, rhs, ranks })
}

/// Vertical/horizontal split of a direction.
#[derive(Debug, Clone)]
pub struct TrProjection {
    pub vertical: TrTangent,
    pub horizontal: TrTangent,
    pub direction: GaugeDirection,
    /// The projection system was numerically rank deficient (non-injective
    /// cores); the minimum-norm gauge direction was used.
    pub rank_deficient: bool,
}

/// Orthogonal projections of `v` onto the vertical and horizontal spaces at `u`.
pub fn project(u: &TrCores, v: &TrTangent) -> Result<TrProjection> {
    let sys = assemble_projection_system(u, v)?;
    let sol = solve_least_squares(&sys.matrix, &sys.rhs)?;
    let direction = GaugeDirection::from_stacked(&sol.x, &sys.ranks);
    let vertical = vertical_from_direction(u, &direction)?;
    let horizontal = v.sub(&vertical);
    Ok(TrProjection { vertical, horizontal, direction, rank_deficient: sol.rank_deficient })
}

pub fn project_vertical(u: &TrCores, v: &TrTangent) -> Result<TrTangent> {
    Ok(project(u, v)?.vertical)
}

pub fn project_horizontal(u: &TrCores, v: &TrTangent) -> Result<TrTangent> {
    Ok(project(u, v)?.horizontal)
}

/// Matrix of the linear map `(D_1, ..., D_d) -> eta` (no trace constraint),
/// one column per entry of the stacked `vec(D_k)`.
pub fn vertical_map_matrix(u: &TrCores) -> Result<Matrix> {
    let ranks = u.rank().as_slice().to_vec();
    let n: usize = ranks.iter().map(|r| r * r).sum();
    let rows = u.num_params();
    let mut m = Matrix::zeros(rows, n);
    let mut e = vec![0.0; n];
    for col in 0..n {
        e[col] = 1.0;
        let eta = vertical_from_direction(u, &GaugeDirection::from_stacked(&e, &ranks))?;
        let mut row = 0;
        for p in eta.parts() {
            for &val in p.data() {
                m.set(row, col, val);
                row += 1;
            }
        }
        e[col] = 0.0;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tr::{CoreDistribution, TrRank};
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64) -> TrCores {
        let shape = Shape::new(vec![5, 6, 7]).unwrap();
        let rank = TrRank::new(vec![2, 2, 3]).unwrap();
        TrCores::random(&shape, &rank, seed, CoreDistribution::Uniform).unwrap()
    }

    fn random_tangent(u: &TrCores, seed: u64) -> TrTangent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = TrCores::random_with(&u.shape(), &u.rank(), &mut rng, CoreDistribution::Gaussian).unwrap();
        TrTangent::from_cores(&g)
    }

    fn random_direction(u: &TrCores, seed: u64) -> GaugeDirection {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mats = u
            .rank()
            .as_slice()
            .iter()
            .map(|&r| {
                let data = (0..r * r).map(|_| rand::Rng::random::<f64>(&mut rng) - 0.5).collect();
                Matrix::from_col_major(r, r, data).unwrap()
            })
            .collect();
        GaugeDirection::trace_free(mats).unwrap()
    }

    #[test]
    fn zero_direction_gives_zero_tangent() {
        let u = instance(1);
        let zero = GaugeDirection::new(u.rank().as_slice().iter().map(|&r| Matrix::zeros(r, r)).collect()).unwrap();
        assert_eq!(vertical_from_direction(&u, &zero).unwrap().norm(), 0.0);
    }

    #[test]
    fn trace_constraint_enforced() {
        assert!(GaugeDirection::new(vec![Matrix::identity(2)]).is_err());
        let d = GaugeDirection::trace_free(vec![Matrix::identity(2).scale(3.0)]).unwrap();
        assert!(d.mats()[0].trace().abs() < 1e-15);
    }

    #[test]
    fn diag_direction_touches_first_and_last_parts_only() {
        let u = instance(2);
        let mats = vec![Matrix::diag(&[1.0, -1.0]), Matrix::zeros(2, 2), Matrix::zeros(3, 3)];
        let eta = vertical_from_direction(&u, &GaugeDirection::new(mats).unwrap()).unwrap();
        assert!(eta.part(0).fro_norm() > 0.0);
        assert_eq!(eta.part(1).fro_norm(), 0.0);
        assert!(eta.part(2).fro_norm() > 0.0);
        // part 1: D_1 U_1(i); part 3: -U_3(i) D_1
        for i in 0..5 {
            for b in 0..2 {
                assert_eq!(eta.part(0).at3(0, i, b), u.core(0).at3(0, i, b));
                assert_eq!(eta.part(0).at3(1, i, b), -u.core(0).at3(1, i, b));
            }
        }
        for i in 0..7 {
            for a in 0..3 {
                assert_eq!(eta.part(2).at3(a, i, 0), -u.core(2).at3(a, i, 0));
                assert_eq!(eta.part(2).at3(a, i, 1), u.core(2).at3(a, i, 1));
            }
        }
    }

    #[test]
    fn residual_trace_sums_to_zero() {
        let u = instance(3);
        let xi = random_tangent(&u, 4);
        let res = horizontal_residual(&u, &xi).unwrap();
        let s: f64 = res.iter().map(Matrix::trace).sum();
        assert!(s.abs() <= 1e-12 * residual_norm(&res).max(1.0), "trace sum {s}");
        assert!(horizontal_residual(&u, &TrTangent::zeros_like(&u)).unwrap().iter().all(|m| m.fro_norm() == 0.0));
    }

    #[test]
    fn vertical_vectors_are_not_horizontal() {
        let u = instance(5);
        let eta = vertical_from_direction(&u, &random_direction(&u, 6)).unwrap();
        assert!(residual_norm(&horizontal_residual(&u, &eta).unwrap()) > 1e-3 * eta.norm());
    }

    #[test]
    fn system_dimensions_and_symmetry() {
        let shape = Shape::new(vec![4, 4, 4]).unwrap();
        let u = TrCores::random(&shape, &TrRank::uniform(2, 3).unwrap(), 7, CoreDistribution::Uniform).unwrap();
        let sys = assemble_projection_system(&u, &TrTangent::zeros_like(&u)).unwrap();
        assert_eq!((sys.matrix.rows(), sys.matrix.cols()), (13, 12));
        assert!(sys.rhs.iter().all(|&v| v == 0.0));
        for i in 0..12 {
            for j in 0..12 {
                assert!((sys.matrix.get(i, j) - sys.matrix.get(j, i)).abs() < 1e-12);
            }
        }
        assert_eq!(sys.matrix.numerical_rank(1e-10), 12);
        let sol = solve_least_squares(&sys.matrix, &sys.rhs).unwrap();
        assert!(sol.x.iter().all(|&v| v == 0.0));
    }

    /// Independent route: block column `l` is the residual of the vertical
    /// vector generated by unit directions in `D_l`.
    #[test]
    fn assembled_blocks_match_operator_columns() {
        let shape = Shape::new(vec![7, 9, 8, 9]).unwrap();
        let rank = TrRank::new(vec![2, 3, 2, 3]).unwrap();
        let u = TrCores::random(&shape, &rank, 0, CoreDistribution::Uniform).unwrap();
        let sys = assemble_projection_system(&u, &TrTangent::zeros_like(&u)).unwrap();
        let n = rank.gauge_dim();
        let mut e = vec![0.0; n];
        for col in 0..n {
            e[col] = 1.0;
            let eta = vertical_from_direction(&u, &GaugeDirection::from_stacked(&e, rank.as_slice())).unwrap();
            let stacked: Vec<f64> =
                horizontal_residual(&u, &eta).unwrap().iter().flat_map(|m| m.as_slice().to_vec()).collect();
            for (row, v) in stacked.iter().enumerate() {
                assert!((sys.matrix.get(row, col) - v).abs() < 1e-12 * (1.0 + v.abs()));
            }
            e[col] = 0.0;
        }
    }

    #[test]
    fn projections_of_constructed_vectors() {
        let u = instance(8);
        let eta = vertical_from_direction(&u, &random_direction(&u, 9)).unwrap();
        let p = project(&u, &eta).unwrap();
        assert!(p.vertical.sub(&eta).norm() <= 1e-9 * eta.norm());
        assert!(!p.rank_deficient);

        let h = project_horizontal(&u, &random_tangent(&u, 10)).unwrap();
        assert!(project_vertical(&u, &h).unwrap().norm() <= 1e-9 * h.norm());
    }

    #[test]
    fn horizontal_part_satisfies_coupling_equations() {
        let u = instance(11);
        let v = random_tangent(&u, 12);
        let p = project(&u, &v).unwrap();
        let unorm = TrTangent::from_cores(&u).norm();
        assert!(residual_norm(&horizontal_residual(&u, &p.horizontal).unwrap()) <= 1e-8 * v.norm() * unorm);
        assert!(p.vertical.inner(&p.horizontal).abs() <= 1e-9 * v.norm().powi(2));
        let sum = {
            let mut s = p.vertical.clone();
            s.axpy(1.0, &p.horizontal);
            s
        };
        assert!(sum.sub(&v).norm() <= 1e-15 * v.norm());
    }

    #[test]
    fn vertical_map_has_one_dimensional_kernel() {
        let shape = Shape::new(vec![4, 4, 4]).unwrap();
        let u = TrCores::random(&shape, &TrRank::uniform(2, 3).unwrap(), 13, CoreDistribution::Uniform).unwrap();
        let m = vertical_map_matrix(&u).unwrap();
        assert_eq!(m.numerical_rank(1e-10), 11);
    }

    #[test]
    fn retraction_at_zero_is_identity() {
        let u = instance(14);
        assert_eq!(retract(&u, &TrTangent::zeros_like(&u), 0.7).unwrap(), u);
        let x = random_tangent(&u, 15);
        assert!((metric_inner(&x, &x).unwrap() - x.parts().iter().map(|p| p.fro_norm().powi(2)).sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn non_injective_cores_flag_deficiency() {
        // identity slices make every gauge D_k = D act trivially: D U - U D = 0
        let u = crate::tr::identity_slices(&Shape::new(vec![4, 4, 4]).unwrap(), 2);
        let v = TrTangent::from_cores(&u);
        assert!(project(&u, &v).unwrap().rank_deficient);
    }
}
