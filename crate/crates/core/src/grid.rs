//! Uniform cell-centered discretization of the square box `[-L, L]^2`.
//!
//! Arrays are stored row-major with shape `(n, n)`: axis 0 is the x index,
//! axis 1 the y index. Quadrature is the midpoint rule on cell centers and
//! the boundary closure is zero-flux.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::scalar::{compensated_sum, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D<T> {
    half_width: T,
    cells_per_axis: usize,
    spacing: T,
    cell_area: T,
}

impl<T: Real> Grid2D<T> {
    pub fn new(half_width: T, cells_per_axis: usize) -> Result<Self> {
        if !(half_width > T::zero()) || !half_width.is_finite() {
            return Err(Error::invalid(format!("half_width must be positive, got {half_width}")));
        }
        if cells_per_axis < 2 {
            return Err(Error::invalid(format!("cells_per_axis must be >= 2, got {cells_per_axis}")));
        }
        let spacing = T::lit(2.0) * half_width / T::from_usize_lossy(cells_per_axis);
        Ok(Self { half_width, cells_per_axis, spacing, cell_area: spacing * spacing })
    }

    pub fn half_width(&self) -> T {
        self.half_width
    }

    pub fn n(&self) -> usize {
        self.cells_per_axis
    }

    pub fn spacing(&self) -> T {
        self.spacing
    }

    pub fn cell_area(&self) -> T {
        self.cell_area
    }

    pub fn cell_count(&self) -> usize {
        self.cells_per_axis * self.cells_per_axis
    }

    pub fn box_area(&self) -> T {
        let w = T::lit(2.0) * self.half_width;
        w * w
    }

    /// Cell-center coordinate along either axis.
    #[inline]
    pub fn center(&self, i: usize) -> T {
        -self.half_width + (T::from_usize_lossy(i) + T::lit(0.5)) * self.spacing
    }

    pub fn centers(&self) -> Vec<T> {
        (0..self.cells_per_axis).map(|i| self.center(i)).collect()
    }

    /// Index of the cell containing coordinate `x` (clamped to the box).
    pub fn locate(&self, x: T) -> usize {
        let s = ((x + self.half_width) / self.spacing).floor();
        let s = s.max(T::zero()).to_usize().unwrap_or(0);
        s.min(self.cells_per_axis - 1)
    }

    pub fn same_as(&self, other: &Self) -> bool {
        self.cells_per_axis == other.cells_per_axis && self.half_width == other.half_width
    }

    pub(crate) fn check_same(&self, other: &Self) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "grid mismatch: (L={}, n={}) vs (L={}, n={})",
                self.half_width, self.cells_per_axis, other.half_width, other.cells_per_axis
            )))
        }
    }
}

pub fn make_grid<T: Real>(half_width: T, cells_per_axis: usize) -> Result<Grid2D<T>> {
    Grid2D::new(half_width, cells_per_axis)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<T> {
    grid: Grid2D<T>,
    values: Array2<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn new(grid: Grid2D<T>, values: Array2<T>) -> Result<Self> {
        let n = grid.n();
        if values.dim() != (n, n) {
            return Err(Error::invalid(format!("field shape {:?} does not match grid n={n}", values.dim())));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("field contains non-finite value {bad}")));
        }
        Ok(Self { grid, values })
    }

    /// Skips the finiteness scan; for internal producers that cannot emit NaN.
    pub(crate) fn from_array_unchecked(grid: Grid2D<T>, values: Array2<T>) -> Self {
        debug_assert_eq!(values.dim(), (grid.n(), grid.n()));
        Self { grid, values }
    }

    pub fn from_vec(grid: Grid2D<T>, values: Vec<T>) -> Result<Self> {
        let n = grid.n();
        if values.len() != n * n {
            return Err(Error::invalid(format!("expected {} values, got {}", n * n, values.len())));
        }
        let arr = Array2::from_shape_vec((n, n), values).map_err(|e| Error::invalid(e.to_string()))?;
        Self::new(grid, arr)
    }

    pub fn constant(grid: Grid2D<T>, c: T) -> Self {
        Self { grid, values: Array2::from_elem((grid.n(), grid.n()), c) }
    }

    pub fn zeros(grid: Grid2D<T>) -> Self {
        Self::constant(grid, T::zero())
    }

    /// Samples `f(x, y)` at cell centers.
    pub fn from_fn(grid: Grid2D<T>, mut f: impl FnMut(T, T) -> T) -> Self {
        let xs = grid.centers();
        let values = Array2::from_shape_fn((grid.n(), grid.n()), |(i, j)| f(xs[i], xs[j]));
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid2D<T> {
        &self.grid
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<T> {
        &mut self.values
    }

    pub fn into_values(self) -> Array2<T> {
        self.values
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { grid: self.grid, values: self.values.mapv(f) }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        let mut out = self.values.clone();
        Zip::from(&mut out).and(&other.values).for_each(|a, &b| *a = f(*a, b));
        Self { grid: self.grid, values: out }
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn max_value(&self) -> T {
        self.values.iter().fold(T::neg_infinity(), |m, &v| m.max(v))
    }

    pub fn min_value(&self) -> T {
        self.values.iter().fold(T::infinity(), |m, &v| m.min(v))
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField<T> {
    grid: Grid2D<T>,
    pub x_values: Array2<T>,
    pub y_values: Array2<T>,
}

impl<T: Real> VectorField<T> {
    pub fn new(grid: Grid2D<T>, x_values: Array2<T>, y_values: Array2<T>) -> Result<Self> {
        let n = grid.n();
        if x_values.dim() != (n, n) || y_values.dim() != (n, n) {
            return Err(Error::invalid("vector field component shape mismatch"));
        }
        if x_values.iter().chain(y_values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("vector field contains non-finite values"));
        }
        Ok(Self { grid, x_values, y_values })
    }

    pub fn zeros(grid: Grid2D<T>) -> Self {
        let n = grid.n();
        Self { grid, x_values: Array2::zeros((n, n)), y_values: Array2::zeros((n, n)) }
    }

    /// Position field `x -> x` (cell centers).
    pub fn identity(grid: Grid2D<T>) -> Self {
        let xs = grid.centers();
        let n = grid.n();
        Self {
            grid,
            x_values: Array2::from_shape_fn((n, n), |(i, _)| xs[i]),
            y_values: Array2::from_shape_fn((n, n), |(_, j)| xs[j]),
        }
    }

    pub fn grid(&self) -> &Grid2D<T> {
        &self.grid
    }

    /// Pointwise squared norm as a scalar field.
    pub fn norm_sq(&self) -> ScalarField<T> {
        let mut out = self.x_values.mapv(|v| v * v);
        Zip::from(&mut out).and(&self.y_values).for_each(|o, &y| *o += y * y);
        ScalarField::from_array_unchecked(self.grid, out)
    }

    /// Pointwise dot product with another vector field.
    pub fn dot(&self, other: &Self) -> ScalarField<T> {
        let mut out = Array2::zeros(self.x_values.dim());
        Zip::from(&mut out)
            .and(&self.x_values)
            .and(&self.y_values)
            .and(&other.x_values)
            .and(&other.y_values)
            .for_each(|o, &ax, &ay, &bx, &by| *o = ax * bx + ay * by);
        ScalarField::from_array_unchecked(self.grid, out)
    }
}

/// Midpoint quadrature `cell_area * sum(values)`.
pub fn integrate<T: Real>(f: &ScalarField<T>) -> T {
    f.grid.cell_area() * compensated_sum(f.values.iter().copied())
}

/// `\int f g` by midpoint quadrature.
pub fn inner<T: Real>(f: &ScalarField<T>, g: &ScalarField<T>) -> T {
    f.grid.cell_area() * compensated_sum(f.values.iter().zip(g.values.iter()).map(|(&a, &b)| a * b))
}

/// Centered differences in the interior, first-order one-sided on the
/// outermost cell layer.
pub fn gradient<T: Real>(f: &ScalarField<T>) -> VectorField<T> {
    let n = f.grid.n();
    let dx = f.grid.spacing();
    let two_dx = dx + dx;
    let v = &f.values;
    let mut gx = Array2::zeros((n, n));
    let mut gy = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            gx[[i, j]] = if i == 0 {
                (v[[1, j]] - v[[0, j]]) / dx
            } else if i == n - 1 {
                (v[[n - 1, j]] - v[[n - 2, j]]) / dx
            } else {
                (v[[i + 1, j]] - v[[i - 1, j]]) / two_dx
            };
            gy[[i, j]] = if j == 0 {
                (v[[i, 1]] - v[[i, 0]]) / dx
            } else if j == n - 1 {
                (v[[i, n - 1]] - v[[i, n - 2]]) / dx
            } else {
                (v[[i, j + 1]] - v[[i, j - 1]]) / two_dx
            };
        }
    }
    VectorField { grid: f.grid, x_values: gx, y_values: gy }
}

/// Five-point Laplacian with mirrored ghost cells (zero normal flux).
pub fn laplacian<T: Real>(f: &ScalarField<T>) -> ScalarField<T> {
    let mut out = Array2::zeros(f.values.dim());
    laplacian_into(&f.grid, &f.values, &mut out);
    ScalarField::from_array_unchecked(f.grid, out)
}

pub(crate) fn laplacian_into<T: Real>(grid: &Grid2D<T>, v: &Array2<T>, out: &mut Array2<T>) {
    let n = grid.n();
    let inv_dx2 = T::one() / grid.cell_area();
    for i in 0..n {
        for j in 0..n {
            let c = v[[i, j]];
            let mut acc = T::zero();
            if i > 0 {
                acc += v[[i - 1, j]] - c;
            }
            if i + 1 < n {
                acc += v[[i + 1, j]] - c;
            }
            if j > 0 {
                acc += v[[i, j - 1]] - c;
            }
            if j + 1 < n {
                acc += v[[i, j + 1]] - c;
            }
            out[[i, j]] = acc * inv_dx2;
        }
    }
}

/// Face-difference pairing `sum_faces (df)(dg)`, the discrete `\int grad f . grad g`
/// that the five-point Laplacian is the exact adjoint of:
/// `inner(f, laplacian(g)) == -face_pairing(f, g)`.
pub fn face_pairing<T: Real>(f: &ScalarField<T>, g: &ScalarField<T>) -> T {
    let n = f.grid.n();
    let a = &f.values;
    let b = &g.values;
    let terms = (0..n).flat_map(move |i| {
        (0..n).flat_map(move |j| {
            let ex = if i + 1 < n { (a[[i + 1, j]] - a[[i, j]]) * (b[[i + 1, j]] - b[[i, j]]) } else { T::zero() };
            let ey = if j + 1 < n { (a[[i, j + 1]] - a[[i, j]]) * (b[[i, j + 1]] - b[[i, j]]) } else { T::zero() };
            [ex, ey]
        })
    });
    compensated_sum(terms)
}

/// Discrete Dirichlet energy `\int |grad f|^2` in face form.
pub fn dirichlet_energy<T: Real>(f: &ScalarField<T>) -> T {
    face_pairing(f, f)
}

/// Mass carried by the outermost `width` cell layers.
pub fn frame_integral<T: Real>(f: &ScalarField<T>, width: usize) -> T {
    let n = f.grid.n();
    let w = width.min(n / 2);
    let terms = f.values.indexed_iter().filter_map(|((i, j), &v)| {
        let edge = i < w || j < w || i >= n - w || j >= n - w;
        edge.then_some(v)
    });
    f.grid.cell_area() * compensated_sum(terms)
}

/// Integral over the cells whose centers lie outside `[-r, r]^2`.
pub fn integral_outside<T: Real>(f: &ScalarField<T>, r: T) -> T {
    let xs = f.grid.centers();
    let terms = f
        .values
        .indexed_iter()
        .filter_map(|((i, j), &v)| (xs[i].abs() > r || xs[j].abs() > r).then_some(v));
    f.grid.cell_area() * compensated_sum(terms)
}
