//! Tensor ring (TR) and uniform tensor ring (uTR) representations.
//!
//! A TR tensor of order `d` is described by cores `U_k` of shape
//! `(r_k, n_k, r_{k+1})` with the cyclic convention `r_{d+1} = r_1`. Entry
//! `(i_1, ..., i_d)` is the trace of the product of the lateral slices
//! `U_1(i_1) U_2(i_2) ... U_d(i_d)`, each slice an `r_k x r_{k+1}` matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{arg_err, Error, Result};
use crate::linalg::{gemm, Matrix};
use crate::tensor::{DenseTensor, Shape};

/// Default cap on the number of entries [`tr_full`] is allowed to produce.
pub const DEFAULT_FULL_CAP: usize = 100_000_000;

/// Default relative singular-value tolerance of [`injectivity_check`].
pub const DEFAULT_INJECTIVITY_TOL: f64 = 1e-10;

/// Bond dimensions `(r_1, ..., r_d)`, read cyclically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrRank(Vec<usize>);

impl TrRank {
    pub fn new(ranks: Vec<usize>) -> Result<Self> {
        if ranks.is_empty() {
            return arg_err("TR rank must have at least one entry");
        }
        if ranks.iter().any(|&r| r == 0) {
            return arg_err(format!("TR rank {ranks:?} has a zero entry"));
        }
        Ok(Self(ranks))
    }

    pub fn uniform(r: usize, d: usize) -> Result<Self> {
        Self::new(vec![r; d])
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `r_k` with wrap-around, so `get(d) == get(0)`.
    #[inline]
    pub fn get(&self, k: usize) -> usize {
        self.0[k % self.0.len()]
    }

    /// `sum_k r_k^2`, the number of unknowns of the gauge projection system.
    pub fn gauge_dim(&self) -> usize {
        self.0.iter().map(|r| r * r).sum()
    }
}

/// Distribution of randomly generated core entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoreDistribution {
    /// i.i.d. uniform on `[0, 1]`.
    #[default]
    Uniform,
    /// i.i.d. standard normal.
    Gaussian,
}

fn random_buffer(len: usize, rng: &mut impl Rng, dist: CoreDistribution) -> Vec<f64> {
    match dist {
        CoreDistribution::Uniform => (0..len).map(|_| rng.random::<f64>()).collect(),
        CoreDistribution::Gaussian => (0..len).map(|_| rng.sample(StandardNormal)).collect(),
    }
}

/// The `d` cores of a tensor ring decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct TrCores {
    cores: Vec<DenseTensor>,
}

impl TrCores {
    /// Validates ring compatibility: every core is order 3 and the third
    /// dimension of core `k` equals the first dimension of core `k + 1`,
    /// wrapping around to core 1.
    pub fn new(cores: Vec<DenseTensor>) -> Result<Self> {
        if cores.is_empty() {
            return arg_err("a tensor ring needs at least one core");
        }
        for (k, c) in cores.iter().enumerate() {
            if c.order() != 3 {
                return arg_err(format!("core {k} has order {}, expected 3", c.order()));
            }
        }
        let d = cores.len();
        for k in 0..d {
            let right = cores[k].dims()[2];
            let left = cores[(k + 1) % d].dims()[0];
            if right != left {
                return arg_err(format!(
                    "core {k} has right rank {right} but core {} has left rank {left}",
                    (k + 1) % d
                ));
            }
        }
        Ok(Self { cores })
    }

    /// Cores drawn i.i.d. from `dist` with a seeded ChaCha generator.
    pub fn random(shape: &Shape, rank: &TrRank, seed: u64, dist: CoreDistribution) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::random_with(shape, rank, &mut rng, dist)
    }

    pub fn random_with(shape: &Shape, rank: &TrRank, rng: &mut impl Rng, dist: CoreDistribution) -> Result<Self> {
        if shape.order() != rank.len() {
            return arg_err(format!("shape has order {} but rank has {} entries", shape.order(), rank.len()));
        }
        let cores = (0..shape.order())
            .map(|k| {
                let (p, q, s) = (rank.get(k), shape.dim(k), rank.get(k + 1));
                DenseTensor::order3(p, q, s, random_buffer(p * q * s, rng, dist))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(cores)
    }

    /// All-zero cores of the given format.
    pub fn zeros(shape: &Shape, rank: &TrRank) -> Result<Self> {
        if shape.order() != rank.len() {
            return arg_err("shape and rank lengths differ");
        }
        let cores = (0..shape.order())
            .map(|k| DenseTensor::zeros(Shape::new(vec![rank.get(k), shape.dim(k), rank.get(k + 1)]).unwrap()))
            .collect();
        Self::new(cores)
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.cores.len()
    }

    #[inline]
    pub fn core(&self, k: usize) -> &DenseTensor {
        &self.cores[k]
    }

    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    pub fn cores_mut(&mut self) -> &mut [DenseTensor] {
        &mut self.cores
    }

    pub fn into_cores(self) -> Vec<DenseTensor> {
        self.cores
    }

    /// Dimensions `(n_1, ..., n_d)` of the represented tensor.
    pub fn shape(&self) -> Shape {
        Shape::new(self.cores.iter().map(|c| c.dims()[1]).collect()).expect("cores have valid dims")
    }

    pub fn rank(&self) -> TrRank {
        TrRank(self.cores.iter().map(|c| c.dims()[0]).collect())
    }

    /// Lateral slice `U_k(i)` as an `r_k x r_{k+1}` matrix.
    pub fn slice(&self, k: usize, i: usize) -> Matrix {
        let c = &self.cores[k];
        let [p, _, s] = [c.dims()[0], c.dims()[1], c.dims()[2]];
        let mut m = Matrix::zeros(p, s);
        for b in 0..s {
            for a in 0..p {
                m.set(a, b, c.at3(a, i, b));
            }
        }
        m
    }

    /// Total number of scalar parameters, `sum_k r_k n_k r_{k+1}`.
    pub fn num_params(&self) -> usize {
        self.cores.iter().map(|c| c.data().len()).sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.cores.iter().map(|c| c.fro_norm().powi(2)).sum()
    }

    /// Replaces every core by `alpha * core`.
    pub fn scale_cores(&mut self, alpha: f64) {
        for c in &mut self.cores {
            for v in c.data_mut() {
                *v *= alpha;
            }
        }
    }
}

/// Entry `(i_1, ..., i_d)` as the trace of the ordered slice product.
pub fn tr_entry(u: &TrCores, idx: &[usize]) -> Result<f64> {
    u.shape().check_index(idx)?;
    let r1 = u.core(0).dims()[0];
    let mut acc = Matrix::identity(r1);
    for (k, &i) in idx.iter().enumerate() {
        acc = acc.matmul(&u.slice(k, i))?;
    }
    Ok(acc.trace())
}

/// Chain product of the cores listed in `order`, starting from `I_{r}` where
/// `r` is the left rank of the first core.
///
/// Returns the buffer of a `(r, N, r')` tensor where `N` enumerates the
/// visited physical indices first-visited-fastest and `r'` is the right rank
/// of the last core. Each step is one GEMM on raw buffers: an `(r N) x r_k`
/// matrix times the mode-1 unfolding of the next core.
fn chain_contract(u: &TrCores, order: impl Iterator<Item = usize>, left: usize) -> (Vec<f64>, usize, usize) {
    let mut buf = Matrix::identity(left).into_vec();
    let mut n_acc = 1usize;
    let mut right = left;
    for k in order {
        let c = u.core(k);
        let (p, q, s) = (c.dims()[0], c.dims()[1], c.dims()[2]);
        debug_assert_eq!(p, right);
        let mut next = vec![0.0; left * n_acc * q * s];
        gemm(left * n_acc, p, q * s, &buf, c.data(), &mut next);
        buf = next;
        n_acc *= q;
        right = s;
    }
    (buf, n_acc, right)
}

/// Full reconstruction with the default size cap.
pub fn tr_full(u: &TrCores) -> Result<DenseTensor> {
    tr_full_capped(u, DEFAULT_FULL_CAP)
}

/// Full reconstruction by sequential contraction of the ring, refusing to
/// materialize more than `cap` entries.
pub fn tr_full_capped(u: &TrCores, cap: usize) -> Result<DenseTensor> {
    let shape = u.shape();
    if shape.numel() > cap {
        return Err(Error::Resource(format!(
            "full tensor has {} entries, cap is {cap}",
            shape.numel()
        )));
    }
    let r1 = u.core(0).dims()[0];
    let (buf, n, right) = chain_contract(u, 0..u.order(), r1);
    debug_assert_eq!(right, r1);
    let data = (0..n)
        .map(|j| (0..r1).map(|a| buf[a + r1 * (j + n * a)]).sum())
        .collect();
    DenseTensor::new(shape, data)
}

/// `W_k`: the mode-2 unfolding of core `k`, an `n_k x r_k r_{k+1}` matrix.
pub fn core_unfold2(u: &TrCores, k: usize) -> Result<Matrix> {
    if k >= u.order() {
        return arg_err(format!("mode {k} out of range for order {}", u.order()));
    }
    u.core(k).unfold(1)
}

/// `W_{!=k}`: the `prod_{j != k} n_j x r_k r_{k+1}` matrix whose row
/// `pi_k(i_1, ..., i_d)` holds the transposed slice product
/// `(U_{k+1}(i_{k+1}) ... U_d(i_d) U_1(i_1) ... U_{k-1}(i_{k-1}))^T`,
/// so that `X_(k) = W_k W_{!=k}^T`.
pub fn subchain(u: &TrCores, k: usize) -> Result<Matrix> {
    let d = u.order();
    if k >= d {
        return arg_err(format!("mode {k} out of range for order {d}"));
    }
    let rank = u.rank();
    let (rk, rk1) = (rank.get(k), rank.get(k + 1));
    let dims = u.shape();
    let n_low: usize = dims.dims()[..k].iter().product();
    let n_high: usize = dims.dims()[k + 1..].iter().product();

    // Contract k+1, ..., d, 1, ..., k-1: T(b, J_c, a) with J_c = J_high + n_high * J_low.
    let order = (k + 1..d).chain(0..k);
    let (buf, n_c, right) = chain_contract(u, order, rk1);
    debug_assert_eq!(right, rk);
    debug_assert_eq!(n_c, n_low * n_high);

    let rows = n_c;
    let mut w = Matrix::zeros(rows, rk * rk1);
    for j_low in 0..n_low {
        for j_high in 0..n_high {
            let jc = j_high + n_high * j_low;
            let row = j_low + n_low * j_high;
            for a in 0..rk {
                for b in 0..rk1 {
                    w.set(row, a + rk * b, buf[b + rk1 * (jc + n_c * a)]);
                }
            }
        }
    }
    Ok(w)
}

/// One invertible matrix per bond: `A_k` is `r_k x r_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeElement {
    mats: Vec<Matrix>,
}

impl GaugeElement {
    /// Rejects any matrix whose smallest singular value is at most `1e-12`
    /// times its largest.
    pub fn new(mats: Vec<Matrix>) -> Result<Self> {
        for (k, a) in mats.iter().enumerate() {
            if a.rows() != a.cols() {
                return arg_err(format!("gauge matrix {k} is not square"));
            }
            let s = a.singular_values();
            if !(s.last().copied().unwrap_or(0.0) > 1e-12 * s[0]) {
                return arg_err(format!("gauge matrix {k} is singular"));
            }
        }
        Ok(Self { mats })
    }

    /// Random gauge `I + 0.5 G` with Gaussian `G`, rejected until invertible.
    pub fn random(rank: &TrRank, rng: &mut impl Rng) -> Self {
        loop {
            let mats = rank
                .as_slice()
                .iter()
                .map(|&r| {
                    let g = random_buffer(r * r, rng, CoreDistribution::Gaussian);
                    let g = Matrix::from_col_major(r, r, g).unwrap().scale(0.5);
                    Matrix::identity(r).add(&g).unwrap()
                })
                .collect();
            if let Ok(ge) = Self::new(mats) {
                return ge;
            }
        }
    }

    pub fn mats(&self) -> &[Matrix] {
        &self.mats
    }

    pub fn inverse(&self) -> Result<Self> {
        Ok(Self { mats: self.mats.iter().map(Matrix::inverse).collect::<Result<_>>()? })
    }
}

/// Gauge action: core `k` becomes `U_k x_1 A_k x_3 A_{k+1}^{-T}`, i.e. every
/// slice `U_k(i)` becomes `A_k U_k(i) A_{k+1}^{-1}`.
pub fn gauge_apply(u: &TrCores, g: &GaugeElement) -> Result<TrCores> {
    let d = u.order();
    if g.mats.len() != d {
        return arg_err(format!("gauge has {} matrices, ring has {d} cores", g.mats.len()));
    }
    let rank = u.rank();
    for (k, a) in g.mats.iter().enumerate() {
        if a.rows() != rank.get(k) {
            return arg_err(format!("gauge matrix {k} is {0}x{0}, rank is {1}", a.rows(), rank.get(k)));
        }
    }
    let inv_t: Vec<Matrix> = g.mats.iter().map(|a| a.inverse().map(|i| i.transpose())).collect::<Result<_>>()?;
    let cores = (0..d)
        .map(|k| u.core(k).mode13_product(&g.mats[k], &inv_t[(k + 1) % d]))
        .collect::<Result<Vec<_>>>()?;
    TrCores::new(cores)
}

/// Per-core outcome of [`injectivity_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoreInjectivity {
    /// `r_k r_{k+1} <= n_k`.
    pub size_ok: bool,
    pub sigma_max: f64,
    pub sigma_min: f64,
    /// `sigma_min(W_k) > tol * sigma_max(W_k)` and `W_k` has at least as many
    /// rows as columns.
    pub full_rank: bool,
}

impl CoreInjectivity {
    pub fn injective(&self) -> bool {
        self.size_ok && self.full_rank
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectivityReport {
    pub cores: Vec<CoreInjectivity>,
}

impl InjectivityReport {
    pub fn injective(&self) -> bool {
        self.cores.iter().all(CoreInjectivity::injective)
    }
}

pub(crate) fn core_injectivity(core: &DenseTensor, tol: f64) -> CoreInjectivity {
    let (p, n, s) = (core.dims()[0], core.dims()[1], core.dims()[2]);
    let size_ok = p * s <= n;
    let w = core.unfold(1).expect("order-3 core");
    let sv = w.singular_values();
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    // Fewer rows than columns means some singular value is structurally zero.
    let sigma_min = if size_ok { sv.last().copied().unwrap_or(0.0) } else { 0.0 };
    CoreInjectivity { size_ok, sigma_max, sigma_min, full_rank: size_ok && sigma_min > tol * sigma_max }
}

/// Advisory injectivity report: every core's mode-2 unfolding must have full
/// column rank `r_k r_{k+1}`, which requires `r_k r_{k+1} <= n_k`.
pub fn injectivity_check(u: &TrCores, tol: f64) -> InjectivityReport {
    InjectivityReport { cores: u.cores().iter().map(|c| core_injectivity(c, tol)).collect() }
}

/// A uniform tensor ring: one `(r, n, r)` core repeated `order` times.
#[derive(Debug, Clone, PartialEq)]
pub struct UtrCore {
    core: DenseTensor,
    order: usize,
}

impl UtrCore {
    pub fn new(core: DenseTensor, order: usize) -> Result<Self> {
        if core.order() != 3 {
            return arg_err(format!("uTR core has order {}, expected 3", core.order()));
        }
        if core.dims()[0] != core.dims()[2] {
            return arg_err(format!("uTR core has unequal bond dims {:?}", core.dims()));
        }
        if order == 0 {
            return arg_err("uTR order must be positive");
        }
        Ok(Self { core, order })
    }

    pub fn random(r: usize, n: usize, order: usize, seed: u64, dist: CoreDistribution) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::random_with(r, n, order, &mut rng, dist)
    }

    pub fn random_with(r: usize, n: usize, order: usize, rng: &mut impl Rng, dist: CoreDistribution) -> Result<Self> {
        Self::new(DenseTensor::order3(r, n, r, random_buffer(r * n * r, rng, dist))?, order)
    }

    #[inline]
    pub fn core(&self) -> &DenseTensor {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut DenseTensor {
        &mut self.core
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn bond(&self) -> usize {
        self.core.dims()[0]
    }

    #[inline]
    pub fn mode_size(&self) -> usize {
        self.core.dims()[1]
    }

    pub fn shape(&self) -> Shape {
        Shape::cube(self.mode_size(), self.order).expect("valid uTR dims")
    }

    /// The equivalent TR with `order` copies of the core.
    pub fn replicate(&self) -> TrCores {
        TrCores::new(vec![self.core.clone(); self.order]).expect("uTR replication is ring-compatible")
    }
}

pub fn utr_full(c: &UtrCore) -> Result<DenseTensor> {
    tr_full(&c.replicate())
}

pub fn utr_entry(c: &UtrCore, idx: &[usize]) -> Result<f64> {
    c.shape().check_index(idx)?;
    let r = c.bond();
    let slice = |i: usize| {
        let mut m = Matrix::zeros(r, r);
        for b in 0..r {
            for a in 0..r {
                m.set(a, b, c.core.at3(a, i, b));
            }
        }
        m
    };
    let mut acc = Matrix::identity(r);
    for &i in idx {
        acc = acc.matmul(&slice(i))?;
    }
    Ok(acc.trace())
}

/// Builds cores whose every slice is the identity; handy for closed-form checks.
pub fn identity_slices(shape: &Shape, r: usize) -> TrCores {
    let cores = shape
        .dims()
        .iter()
        .map(|&n| {
            let mut c = DenseTensor::zeros(Shape::new(vec![r, n, r]).unwrap());
            for i in 0..n {
                for a in 0..r {
                    c.set(&[a, i, a], 1.0).unwrap();
                }
            }
            c
        })
        .collect();
    TrCores::new(cores).unwrap()
}
