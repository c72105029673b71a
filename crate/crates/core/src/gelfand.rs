//! Discrete Gelfand triple on a one-dimensional interval.
//!
//! The continuous picture is `V ⊂ H ⊂ V*` with `H = L²(a,b)` and
//! `‖v‖_V = ‖v'‖_{L^α}` under homogeneous Dirichlet conditions. Here the
//! interval is split into `n_cells` uniform cells; states live on the
//! `n_cells − 1` interior nodes (the boundary values are identically zero and
//! are never stored). Realized operations:
//!
//! * `⟨u, v⟩_H`: trapezoid quadrature restricted to interior nodes, where
//!   every trapezoid weight equals the cell width `h`;
//! * `‖u‖_V`: `(Σ_cells h · |Δu/h|^α)^{1/α}` with forward differences and
//!   ghost zeros at both boundaries;
//! * `‖f‖_{V*}`: the exact dual norm `sup{⟨f,w⟩_H : ‖w‖_V ≤ 1}`, reduced to a
//!   scalar convex minimization (see [`DiscreteTriple::v_dual_norm`]);
//! * spectral projection onto the first `n` discrete sine modes, which are
//!   exactly `H`-orthogonal on the uniform grid;
//! * the path metric
//!   `ρ(f,g) = sup_t ‖f_t − g_t‖_H + (∫₀ᵀ ‖f_t − g_t‖_V^α dt)^{1/α}`
//!   with trapezoid quadrature in time.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::{Error, Result};

/// Relative tolerance for "the same grid" comparisons on time axes.
const GRID_TOL: f64 = 1e-12;

/// Uniform Dirichlet discretization of the interval together with the
/// exponent `α` of the `V`-norm.
///
/// Construction goes through [`DiscreteTriple::build`], which returns an
/// [`Arc`]: states, paths and operators all hold the triple by reference, and
/// mixing objects from different triples is a shape error.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTriple {
    domain_left: f64,
    domain_right: f64,
    n_cells: usize,
    alpha: f64,
    dirichlet: bool,
    cell_width: f64,
    node_positions: Vec<f64>,
    quad_weights: Vec<f64>,
}

impl DiscreteTriple {
    /// Builds the triple over `(domain_left, domain_right)` with `n_cells`
    /// uniform cells and `V`-norm exponent `alpha`.
    ///
    /// Requires a nondegenerate interval, `n_cells >= 2` (at least one
    /// interior node) and `alpha > 1`. Only the homogeneous Dirichlet
    /// boundary is realized.
    pub fn build(
        domain_left: f64,
        domain_right: f64,
        n_cells: usize,
        alpha: f64,
    ) -> Result<Arc<Self>> {
        if !domain_left.is_finite() || !domain_right.is_finite() || domain_left >= domain_right {
            return Err(Error::InvalidConfig("domain must be a finite interval"));
        }
        if n_cells < 2 {
            return Err(Error::InvalidConfig("n_cells must be at least 2"));
        }
        if !alpha.is_finite() || alpha <= 1.0 {
            return Err(Error::InvalidConfig("alpha must satisfy alpha > 1"));
        }
        let h = (domain_right - domain_left) / n_cells as f64;
        let node_positions: Vec<f64> = (0..=n_cells)
            .map(|j| domain_left + h * j as f64)
            .collect();
        // Trapezoid weights over all nodes: h/2 at the boundary, h inside.
        let mut quad_weights = vec![h; n_cells + 1];
        quad_weights[0] = 0.5 * h;
        quad_weights[n_cells] = 0.5 * h;
        Ok(Arc::new(Self {
            domain_left,
            domain_right,
            n_cells,
            alpha,
            dirichlet: true,
            cell_width: h,
            node_positions,
            quad_weights,
        }))
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.domain_left, self.domain_right)
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Number of interior nodes; the dimension of a [`StateVector`].
    pub fn interior_dim(&self) -> usize {
        self.n_cells - 1
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dirichlet(&self) -> bool {
        self.dirichlet
    }

    pub fn cell_width(&self) -> f64 {
        self.cell_width
    }

    /// All node positions, boundary included (`n_cells + 1` entries).
    pub fn node_positions(&self) -> &[f64] {
        &self.node_positions
    }

    /// Trapezoid weights aligned with [`Self::node_positions`]; they sum to
    /// the interval length.
    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_weights
    }

    /// Position of interior node `j` (0-based among interior nodes).
    pub fn interior_position(&self, j: usize) -> f64 {
        self.node_positions[j + 1]
    }

    /// Trapezoid quadrature of `f` over all nodes of the closed interval.
    pub fn integrate_nodes(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.node_positions
            .iter()
            .zip(&self.quad_weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Eigenvalue `μ_k` of the negative discrete Dirichlet Laplacian
    /// (three-point stencil): `μ_k = (4/h²) sin²(kπ / 2 n_cells)`,
    /// `1 <= k <= interior_dim`.
    pub fn dirichlet_laplacian_eigenvalue(&self, k: usize) -> f64 {
        let h = self.cell_width;
        let s = (0.5 * core::f64::consts::PI * k as f64 / self.n_cells as f64).sin();
        4.0 / (h * h) * s * s
    }

    /// Structural compatibility: same interval, resolution and exponent.
    pub fn compatible(&self, other: &Self) -> bool {
        self.n_cells == other.n_cells
            && self.domain_left == other.domain_left
            && self.domain_right == other.domain_right
            && self.alpha == other.alpha
            && self.dirichlet == other.dirichlet
    }

    /// `⟨a, b⟩_H` on raw interior slices (no shape checks; crate-internal
    /// hot path).
    pub(crate) fn h_inner_slice(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), self.interior_dim());
        debug_assert_eq!(b.len(), self.interior_dim());
        let h = self.cell_width;
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b) {
            acc += x * y;
        }
        h * acc
    }

    pub(crate) fn h_norm_slice(&self, a: &[f64]) -> f64 {
        self.h_inner_slice(a, a).sqrt()
    }

    /// `‖a‖_V^α` on a raw interior slice (forward differences, ghost zeros).
    pub(crate) fn v_norm_pow_slice(&self, a: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), self.interior_dim());
        let h = self.cell_width;
        let alpha = self.alpha;
        let mut acc = 0.0;
        let mut prev = 0.0;
        for &x in a {
            acc += ((x - prev).abs() / h).powf(alpha);
            prev = x;
        }
        acc += (prev.abs() / h).powf(alpha);
        h * acc
    }

    pub(crate) fn v_norm_slice(&self, a: &[f64]) -> f64 {
        self.v_norm_pow_slice(a).powf(1.0 / self.alpha)
    }

    /// Exact discrete dual norm `‖f‖_{V*} = sup{⟨f,w⟩_H : ‖w‖_V ≤ 1}`.
    ///
    /// Writing `w` through its cell gradients `g` (with the zero-mean
    /// constraint that encodes the right Dirichlet ghost), the pairing is
    /// `Σ_i c_i g_i` with `c_i = h² Σ_{j>i} f_j`, and by Hölder duality the
    /// supremum equals `min_λ (Σ_i h |(c_i − λ)/h|^{α'})^{1/α'}` with
    /// `α' = α/(α−1)`. That scalar function is strictly convex; it is
    /// minimized by golden-section search on `[min c, max c]`.
    pub fn v_dual_norm(&self, f: &StateVector) -> Result<f64> {
        self.check_state(f, "v_dual_norm: state from a different triple")?;
        Ok(self.v_dual_norm_slice(f.values()))
    }

    pub(crate) fn v_dual_norm_slice(&self, f: &[f64]) -> f64 {
        let h = self.cell_width;
        let n = self.n_cells;
        // c_i = h^2 * sum_{j > i} f_j over interior nodes j = i+1 .. n-1.
        let mut c = vec![0.0; n];
        let mut tail = 0.0;
        for i in (0..n).rev() {
            c[i] = h * h * tail;
            if i >= 1 {
                tail += f[i - 1];
            }
        }
        let alpha_dual = self.alpha / (self.alpha - 1.0);
        let objective = |lambda: f64| -> f64 {
            let mut acc = 0.0;
            for &ci in &c {
                acc += h * ((ci - lambda).abs() / h).powf(alpha_dual);
            }
            acc
        };
        let (mut lo, mut hi) = c
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            });
        if lo == hi {
            return objective(lo).powf(1.0 / alpha_dual);
        }
        const INV_PHI: f64 = 0.618_033_988_749_894_9;
        let mut x1 = hi - INV_PHI * (hi - lo);
        let mut x2 = lo + INV_PHI * (hi - lo);
        let mut f1 = objective(x1);
        let mut f2 = objective(x2);
        for _ in 0..160 {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - INV_PHI * (hi - lo);
                f1 = objective(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + INV_PHI * (hi - lo);
                f2 = objective(x2);
            }
        }
        objective(0.5 * (lo + hi)).powf(1.0 / alpha_dual)
    }

    /// Value of the (non-normalized) `k`-th discrete sine mode at interior
    /// node `j`: `sin(kπ (j+1) / n_cells)`.
    #[inline]
    fn sine_value(&self, k: usize, j: usize) -> f64 {
        (core::f64::consts::PI * k as f64 * (j + 1) as f64 / self.n_cells as f64).sin()
    }

    /// `H`-norm of the non-normalized sine mode: exactly `√(L/2)` on the
    /// uniform grid by the discrete orthogonality identity.
    fn sine_mode_h_norm(&self) -> f64 {
        (0.5 * (self.domain_right - self.domain_left)).sqrt()
    }

    fn check_state(&self, s: &StateVector, what: &'static str) -> Result<()> {
        if s.values.len() != self.interior_dim() || !self.compatible(&s.triple) {
            return Err(Error::ShapeMismatch(what));
        }
        Ok(())
    }
}

/// Values at the interior nodes of a [`DiscreteTriple`].
#[derive(Debug, Clone)]
pub struct StateVector {
    triple: Arc<DiscreteTriple>,
    values: Vec<f64>,
}

impl StateVector {
    /// The zero element of `H`.
    pub fn zero(triple: &Arc<DiscreteTriple>) -> Self {
        Self {
            triple: Arc::clone(triple),
            values: vec![0.0; triple.interior_dim()],
        }
    }

    /// Wraps explicit interior values; rejects wrong length or non-finite
    /// entries.
    pub fn from_values(triple: &Arc<DiscreteTriple>, values: Vec<f64>) -> Result<Self> {
        if values.len() != triple.interior_dim() {
            return Err(Error::ShapeMismatch(
                "state length must equal the interior dimension",
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state value"));
        }
        Ok(Self {
            triple: Arc::clone(triple),
            values,
        })
    }

    /// Samples `f` at the interior node positions.
    pub fn from_fn(triple: &Arc<DiscreteTriple>, mut f: impl FnMut(f64) -> f64) -> Self {
        let values = (0..triple.interior_dim())
            .map(|j| f(triple.interior_position(j)))
            .collect();
        Self {
            triple: Arc::clone(triple),
            values,
        }
    }

    /// The `k`-th discrete sine mode normalized to unit `H`-norm
    /// (`1 <= k <= interior_dim`).
    pub fn sine_mode(triple: &Arc<DiscreteTriple>, k: usize) -> Result<Self> {
        if k == 0 || k > triple.interior_dim() {
            return Err(Error::InvalidConfig(
                "sine mode index must lie in 1..=interior_dim",
            ));
        }
        let norm = triple.sine_mode_h_norm();
        let values = (0..triple.interior_dim())
            .map(|j| triple.sine_value(k, j) / norm)
            .collect();
        Ok(Self {
            triple: Arc::clone(triple),
            values,
        })
    }

    pub fn triple(&self) -> &Arc<DiscreteTriple> {
        &self.triple
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn check_pair(&self, other: &Self, what: &'static str) -> Result<()> {
        if self.values.len() != other.values.len() || !self.triple.compatible(&other.triple) {
            return Err(Error::ShapeMismatch(what));
        }
        Ok(())
    }

    /// `⟨self, other⟩_H`.
    pub fn h_inner(&self, other: &Self) -> Result<f64> {
        self.check_pair(other, "h_inner: states from different triples")?;
        Ok(self.triple.h_inner_slice(&self.values, &other.values))
    }

    /// `‖self‖_H`.
    pub fn h_norm(&self) -> f64 {
        self.triple.h_norm_slice(&self.values)
    }

    /// `‖self‖_V` (forward differences against ghost zeros).
    pub fn v_norm(&self) -> f64 {
        self.triple.v_norm_slice(&self.values)
    }

    /// `self − other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_pair(other, "sub: states from different triples")?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            triple: Arc::clone(&self.triple),
            values,
        })
    }

    /// Coefficients against the `H`-orthonormal discrete sine basis, all
    /// `interior_dim` of them. Parseval holds exactly on the uniform grid:
    /// `‖u‖²_H = Σ_k c_k²` up to roundoff.
    pub fn sine_coefficients(&self) -> Vec<f64> {
        let dim = self.values.len();
        let norm = self.triple.sine_mode_h_norm();
        let h = self.triple.cell_width();
        (1..=dim)
            .map(|k| {
                let mut acc = 0.0;
                for (j, &v) in self.values.iter().enumerate() {
                    acc += self.triple.sine_value(k, j) * v;
                }
                h * acc / norm
            })
            .collect()
    }

    /// `H`-orthogonal projection onto the span of the first `n` sine modes
    /// (`1 <= n <= interior_dim`). Idempotent; `n = interior_dim` is the
    /// identity up to roundoff.
    pub fn project(&self, n: usize) -> Result<Self> {
        let dim = self.values.len();
        if n == 0 || n > dim {
            return Err(Error::InvalidConfig(
                "projection order must lie in 1..=interior_dim",
            ));
        }
        let mut out = vec![0.0; dim];
        self.triple.project_slice(&self.values, n, &mut out);
        Ok(Self {
            triple: Arc::clone(&self.triple),
            values: out,
        })
    }
}

impl DiscreteTriple {
    /// Projection onto the first `n` sine modes, raw-slice variant used by
    /// the Galerkin integrator (`out` may alias a scratch buffer, not `u`).
    pub(crate) fn project_slice(&self, u: &[f64], n: usize, out: &mut [f64]) {
        let dim = self.interior_dim();
        debug_assert!(n >= 1 && n <= dim);
        debug_assert_eq!(u.len(), dim);
        debug_assert_eq!(out.len(), dim);
        let h = self.cell_width;
        // ⟨s_k, s_k⟩_H = L/2 exactly for the non-normalized modes.
        let inv_norm2 = 1.0 / (0.5 * (self.domain_right - self.domain_left));
        out.iter_mut().for_each(|o| *o = 0.0);
        for k in 1..=n {
            let mut coeff = 0.0;
            for (j, &v) in u.iter().enumerate() {
                coeff += self.sine_value(k, j) * v;
            }
            coeff *= h * inv_norm2;
            for (j, o) in out.iter_mut().enumerate() {
                *o += coeff * self.sine_value(k, j);
            }
        }
    }
}

/// What a stored trajectory represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    /// A sample of the noisy dynamics.
    SdeSample,
    /// A deterministic controlled (skeleton) solve.
    Skeleton,
    /// A spectrally projected (Galerkin) sample.
    Galerkin,
}

impl PathKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PathKind::SdeSample => "sde_sample",
            PathKind::Skeleton => "skeleton",
            PathKind::Galerkin => "galerkin",
        }
    }
}

/// A trajectory on a uniform time grid over one triple.
///
/// Row `k` of `states` holds the interior node values at `time_grid[k]`.
#[derive(Debug, Clone)]
pub struct PathRecord {
    triple: Arc<DiscreteTriple>,
    kind: PathKind,
    time_grid: Vec<f64>,
    states: Vec<f64>,
}

impl PathRecord {
    /// Wraps a flat row-major state matrix (`time_grid.len()` rows of
    /// `interior_dim` values). The grid must be uniform and increasing.
    pub fn from_flat(
        triple: &Arc<DiscreteTriple>,
        time_grid: Vec<f64>,
        states: Vec<f64>,
        kind: PathKind,
    ) -> Result<Self> {
        let dim = triple.interior_dim();
        if time_grid.len() < 2 {
            return Err(Error::InvalidConfig("a path needs at least two times"));
        }
        if states.len() != time_grid.len() * dim {
            return Err(Error::ShapeMismatch(
                "state matrix size must be n_times * interior_dim",
            ));
        }
        let dt = time_grid[1] - time_grid[0];
        if !(dt > 0.0) {
            return Err(Error::InvalidConfig("time grid must be increasing"));
        }
        let span = time_grid[time_grid.len() - 1] - time_grid[0];
        let tol = GRID_TOL * span.abs().max(1.0);
        for w in time_grid.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > tol {
                return Err(Error::InvalidConfig("time grid must be uniform"));
            }
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("path state value"));
        }
        Ok(Self {
            triple: Arc::clone(triple),
            kind,
            time_grid,
            states,
        })
    }

    pub fn triple(&self) -> &Arc<DiscreteTriple> {
        &self.triple
    }

    pub fn kind(&self) -> PathKind {
        self.kind
    }

    pub fn time_grid(&self) -> &[f64] {
        &self.time_grid
    }

    pub fn n_times(&self) -> usize {
        self.time_grid.len()
    }

    pub fn dt(&self) -> f64 {
        self.time_grid[1] - self.time_grid[0]
    }

    /// Interior values at time index `k`.
    pub fn state_row(&self, k: usize) -> &[f64] {
        let dim = self.triple.interior_dim();
        &self.states[k * dim..(k + 1) * dim]
    }

    /// Flat row-major view of all states.
    pub fn states_flat(&self) -> &[f64] {
        &self.states
    }

    /// The state at time index `k` as an owned vector.
    pub fn state_at(&self, k: usize) -> StateVector {
        StateVector {
            triple: Arc::clone(&self.triple),
            values: self.state_row(k).to_vec(),
        }
    }

    pub fn terminal_state(&self) -> StateVector {
        self.state_at(self.n_times() - 1)
    }

    fn check_same_grid(&self, other: &Self) -> Result<()> {
        if !self.triple.compatible(&other.triple) {
            return Err(Error::ShapeMismatch("paths from different triples"));
        }
        if self.time_grid.len() != other.time_grid.len() {
            return Err(Error::ShapeMismatch("paths on different time grids"));
        }
        let span = self.time_grid[self.time_grid.len() - 1] - self.time_grid[0];
        let tol = GRID_TOL * span.abs().max(1.0);
        for (a, b) in self.time_grid.iter().zip(&other.time_grid) {
            if (a - b).abs() > tol {
                return Err(Error::ShapeMismatch("paths on different time grids"));
            }
        }
        Ok(())
    }

    /// The path metric
    /// `ρ(f,g) = sup_t ‖f_t − g_t‖_H + (∫₀ᵀ ‖f_t − g_t‖_V^α dt)^{1/α}`,
    /// time integral by trapezoid weights on the shared grid.
    pub fn metric(&self, other: &Self) -> Result<f64> {
        self.check_same_grid(other)?;
        let dim = self.triple.interior_dim();
        let alpha = self.triple.alpha();
        let dt = self.dt();
        let n = self.n_times();
        let mut sup_h = 0.0;
        let mut int_v = 0.0;
        let mut diff = vec![0.0; dim];
        for k in 0..n {
            let a = self.state_row(k);
            let b = other.state_row(k);
            for ((d, x), y) in diff.iter_mut().zip(a).zip(b) {
                *d = x - y;
            }
            sup_h = sup_h.max(self.triple.h_norm_slice(&diff));
            let w = if k == 0 || k == n - 1 { 0.5 * dt } else { dt };
            int_v += w * self.triple.v_norm_pow_slice(&diff);
        }
        Ok(sup_h + int_v.powf(1.0 / alpha))
    }
}
