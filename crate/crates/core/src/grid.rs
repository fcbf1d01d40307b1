//! Nested dyadic hierarchy of uniform square meshes on `[0,1]^2`.
//!
//! Every level subdivides each square cell into two triangles by the diagonal
//! running from the cell's lower-left to its upper-right corner, so all levels
//! share one triangulation orientation and the P1 spaces nest. Only interior
//! vertices carry degrees of freedom; boundary values are implicitly zero.
//!
//! A coefficient vector on level `l` is an `m x m` array with `m = cells - 1`,
//! stored row-major. Array entry `(r, c)` belongs to the vertex at
//! `x = ((c+1)/n, (r+1)/n)` where `n` is the number of cells per side.
//! Coordinates are always computed as `index / n` so that a vertex shared by
//! two levels gets bit-identical coordinates on both.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::linalg::CsrMatrix;

/// Vertex offsets `(dr, dc)` of the six triangles adjacent to an interior
/// vertex, enumerated counterclockwise starting from the triangle
/// east-northeast of the vertex. The first offset of each triple is the
/// vertex itself. The same table is shared by every vertex and every level
/// (translation invariance), which is what makes stencils and convolution
/// kernels well defined.
pub const TRI_VERTEX_OFFSETS: [[(i32, i32); 3]; 6] = [
    [(0, 0), (0, 1), (1, 1)],
    [(0, 0), (1, 1), (1, 0)],
    [(0, 0), (1, 0), (0, -1)],
    [(0, 0), (0, -1), (-1, -1)],
    [(0, 0), (-1, -1), (-1, 0)],
    [(0, 0), (-1, 0), (0, 1)],
];

/// Value of the coarse nodal hat function at the fine vertex displaced by
/// `(dr, dc)` from the coarse-aligned fine vertex; indexed `[dr+1][dc+1]`.
/// Entries are exact: 1 at the node, 1/2 at edge midpoints of the coarse
/// triangulation (axes and the lower-left/upper-right diagonal), 0 across
/// the unused diagonal.
pub const PROLONG_WEIGHTS: [[f64; 3]; 3] = [
    [0.5, 0.5, 0.0],
    [0.5, 1.0, 0.5],
    [0.0, 0.5, 0.5],
];

#[derive(Debug, Clone, PartialEq)]
pub enum GridError {
    BadCoarseCells(usize),
    BadLevelCount(usize),
    LevelOutOfRange { level: usize, max: usize },
    DimensionMismatch { expected: usize, got: usize },
}

impl fmt::Display for GridError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridError::BadCoarseCells(n) => {
                write!(f, "coarsest mesh needs at least 2 cells per side, got {n}")
            }
            GridError::BadLevelCount(l) => write!(f, "level count must be >= 1, got {l}"),
            GridError::LevelOutOfRange { level, max } => {
                write!(f, "level {level} out of range 1..={max}")
            }
            GridError::DimensionMismatch { expected, got } => {
                write!(f, "coefficient vector length {got} does not match dof {expected}")
            }
        }
    }
}

/// One mesh level: `cells` squares per side, mesh size `1/cells`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLevel {
    level: usize,
    cells: usize,
}

impl GridLevel {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn cells_per_side(&self) -> usize {
        self.cells
    }

    pub fn mesh_size(&self) -> f64 {
        1.0 / self.cells as f64
    }

    /// Interior vertices per side.
    pub fn interior_per_side(&self) -> usize {
        self.cells - 1
    }

    pub fn dof(&self) -> usize {
        let m = self.interior_per_side();
        m * m
    }

    /// Coordinate of grid line `i` (0 = boundary, `cells` = boundary).
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        i as f64 / self.cells as f64
    }
}

/// Coefficient vector on the interior vertices of one level, viewed 2D.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    m: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(m: usize) -> Self {
        Field { m, data: vec![0.0; m * m] }
    }

    pub fn from_vec(m: usize, data: Vec<f64>) -> Result<Self, GridError> {
        if data.len() != m * m {
            return Err(GridError::DimensionMismatch { expected: m * m, got: data.len() });
        }
        Ok(Field { m, data })
    }

    pub fn from_fn(m: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(m * m);
        for r in 0..m {
            for c in 0..m {
                data.push(f(r, c));
            }
        }
        Field { m, data }
    }

    pub fn constant(m: usize, v: f64) -> Self {
        Field { m, data: vec![v; m * m] }
    }

    /// Interior vertices per side.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.m + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.m + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// How to fill the boundary ring when only interior values are known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtendPolicy {
    /// Boundary vertices get 0 (the FE-space reading of a coefficient vector).
    Zero,
    /// Boundary vertices copy their nearest interior neighbour.
    NearestInterior,
}

/// Nodal values on all `(n+1)^2` vertices of a level, boundary included.
///
/// Triangles adjacent to a boundary-near interior vertex reach vertices on
/// the boundary ring, so integrating a nodal coefficient needs these values.
/// Closed-form coefficient families fill the ring exactly; otherwise an
/// [`ExtendPolicy`] decides.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedField {
    n: usize,
    data: Vec<f64>,
}

impl ExtendedField {
    pub fn zeros(n: usize) -> Self {
        ExtendedField { n, data: vec![0.0; (n + 1) * (n + 1)] }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity((n + 1) * (n + 1));
        for r in 0..=n {
            for c in 0..=n {
                data.push(f(r, c));
            }
        }
        ExtendedField { n, data }
    }

    pub fn constant(n: usize, v: f64) -> Self {
        ExtendedField { n, data: vec![v; (n + 1) * (n + 1)] }
    }

    pub fn from_interior(interior: &Field, policy: ExtendPolicy) -> Self {
        let m = interior.m();
        let n = m + 1;
        ExtendedField::from_fn(n, |r, c| {
            match policy {
                ExtendPolicy::Zero => {
                    if r == 0 || c == 0 || r == n || c == n {
                        0.0
                    } else {
                        interior.at(r - 1, c - 1)
                    }
                }
                ExtendPolicy::NearestInterior => {
                    let rc = r.clamp(1, n - 1) - 1;
                    let cc = c.clamp(1, n - 1) - 1;
                    interior.at(rc, cc)
                }
            }
        })
    }

    /// Cells per side of the level this field lives on.
    pub fn cells(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * (self.n + 1) + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn interior(&self) -> Field {
        let m = self.n - 1;
        Field::from_fn(m, |r, c| self.at(r + 1, c + 1))
    }
}

/// Levels 1 (coarsest) through `L` (finest) with dyadic refinement.
#[derive(Debug, Clone)]
pub struct GridHierarchy {
    coarse_cells: usize,
    levels: Vec<GridLevel>,
}

impl GridHierarchy {
    /// Builds a hierarchy with `coarse_cells * 2^(l-1)` cells per side on
    /// level `l`, for `l = 1..=level_count`.
    pub fn build(coarse_cells: usize, level_count: usize) -> Result<Self, GridError> {
        if coarse_cells < 2 {
            return Err(GridError::BadCoarseCells(coarse_cells));
        }
        if level_count < 1 {
            return Err(GridError::BadLevelCount(level_count));
        }
        let mut levels = Vec::with_capacity(level_count);
        let mut cells = coarse_cells;
        for l in 1..=level_count {
            levels.push(GridLevel { level: l, cells });
            cells *= 2;
        }
        Ok(GridHierarchy { coarse_cells, levels })
    }

    pub fn coarse_cells(&self) -> usize {
        self.coarse_cells
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// 1-based level access.
    pub fn level(&self, l: usize) -> Result<&GridLevel, GridError> {
        self.levels
            .get(l.wrapping_sub(1))
            .ok_or(GridError::LevelOutOfRange { level: l, max: self.levels.len() })
    }

    pub fn finest(&self) -> &GridLevel {
        self.levels.last().unwrap()
    }

    pub fn levels(&self) -> &[GridLevel] {
        &self.levels
    }

    /// Matrix of the canonical embedding of level `l` into level `l + 1`,
    /// shape `dof(l+1) x dof(l)`. Each column expresses one coarse hat
    /// exactly in the fine basis; entries are 1 at the coarse node and 1/2 at
    /// the six midpoints of its coarse edges. This is the ground-truth oracle
    /// for the convolutional prolongation and (transposed) restriction.
    pub fn prolongation_matrix(&self, l: usize) -> Result<CsrMatrix, GridError> {
        if l + 1 > self.levels.len() || l < 1 {
            return Err(GridError::LevelOutOfRange { level: l, max: self.levels.len().saturating_sub(1) });
        }
        let mc = self.level(l)?.interior_per_side();
        let mf = self.level(l + 1)?.interior_per_side();
        let mut triplets = Vec::with_capacity(7 * mc * mc);
        for cr in 0..mc {
            for cc in 0..mc {
                let col = cr * mc + cc;
                // coarse vertex sits at fine array position (2*cr + 1, 2*cc + 1)
                let fr0 = 2 * cr + 1;
                let fc0 = 2 * cc + 1;
                for dr in -1i32..=1 {
                    for dc in -1i32..=1 {
                        let w = PROLONG_WEIGHTS[(dr + 1) as usize][(dc + 1) as usize];
                        if w == 0.0 {
                            continue;
                        }
                        let fr = fr0 as i32 + dr;
                        let fc = fc0 as i32 + dc;
                        if fr < 0 || fc < 0 || fr >= mf as i32 || fc >= mf as i32 {
                            continue;
                        }
                        triplets.push(((fr as usize) * mf + fc as usize, col, w));
                    }
                }
            }
        }
        Ok(CsrMatrix::from_triplets(mf * mf, mc * mc, &mut triplets))
    }

    /// Subsamples a fine coefficient vector at the vertices of a coarser
    /// level (nodal interpolation onto the coarse space).
    pub fn nodal_interpolate_to_coarse(
        &self,
        l_from: usize,
        l_to: usize,
        u_fine: &Field,
    ) -> Result<Field, GridError> {
        let from = self.level(l_from)?;
        let to = self.level(l_to)?;
        if l_to > l_from {
            return Err(GridError::LevelOutOfRange { level: l_to, max: l_from });
        }
        if u_fine.len() != from.dof() {
            return Err(GridError::DimensionMismatch { expected: from.dof(), got: u_fine.len() });
        }
        let stride = 1usize << (l_from - l_to);
        let mt = to.interior_per_side();
        Ok(Field::from_fn(mt, |r, c| {
            u_fine.at((r + 1) * stride - 1, (c + 1) * stride - 1)
        }))
    }
}
