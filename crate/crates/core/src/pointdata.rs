//! Point clouds, the two training augmentations, voxelization into the
//! sparse grid, and the classical occupancy-ratio baseline.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::numerics::rng::Rng;
use crate::numerics::tensor::Tensor;
use crate::Real;

#[derive(Debug, Clone, PartialEq)]
pub enum PointDataError {
    EmptyCloud,
    AllPointsOutside,
    ZeroVolumeGrid,
    NonFinitePoint { row: usize },
    BadArg(String),
}

impl fmt::Display for PointDataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PointDataError::EmptyCloud => write!(f, "point cloud is empty"),
            PointDataError::AllPointsOutside => {
                write!(f, "every point falls outside the voxel extent")
            }
            PointDataError::ZeroVolumeGrid => write!(f, "voxel grid has zero volume"),
            PointDataError::NonFinitePoint { row } => {
                write!(f, "non-finite coordinate in point row {row}")
            }
            PointDataError::BadArg(m) => write!(f, "invalid argument: {m}"),
        }
    }
}

impl core::error::Error for PointDataError {}

/// n points of xyz (meters) plus `feature_channels` extra columns, stored
/// row-major with stride 3 + f.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud<T> {
    data: Vec<T>,
    feature_channels: usize,
}

impl<T: Real> PointCloud<T> {
    pub fn new(data: Vec<T>, feature_channels: usize) -> Result<Self, PointDataError> {
        let stride = 3 + feature_channels;
        if data.len() % stride != 0 {
            return Err(PointDataError::BadArg(alloc::format!(
                "{} values do not divide into rows of {stride}",
                data.len()
            )));
        }
        let pc = PointCloud { data, feature_channels };
        for (i, row) in pc.rows().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(PointDataError::NonFinitePoint { row: i });
            }
        }
        Ok(pc)
    }

    pub fn empty(feature_channels: usize) -> Self {
        PointCloud { data: Vec::new(), feature_channels }
    }

    pub fn from_xyz(points: &[[T; 3]]) -> Self {
        let mut data = Vec::with_capacity(points.len() * 3);
        for p in points {
            data.extend_from_slice(p);
        }
        PointCloud { data, feature_channels: 0 }
    }

    pub fn stride(&self) -> usize {
        3 + self.feature_channels
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.stride()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn feature_channels(&self) -> usize {
        self.feature_channels
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.stride())
    }

    pub fn row(&self, i: usize) -> &[T] {
        let s = self.stride();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn xyz(&self, i: usize) -> [T; 3] {
        let r = self.row(i);
        [r[0], r[1], r[2]]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn push_row(&mut self, row: &[T]) {
        debug_assert_eq!(row.len(), self.stride());
        self.data.extend_from_slice(row);
    }

    pub fn centroid(&self) -> [T; 3] {
        let mut c = [T::zero(); 3];
        if self.is_empty() {
            return c;
        }
        for row in self.rows() {
            for (a, &v) in c.iter_mut().zip(row) {
                *a += v;
            }
        }
        let inv = T::one() / T::lit(self.len() as f64);
        for a in c.iter_mut() {
            *a *= inv;
        }
        c
    }
}

/// Coordinate-indexed active voxels. Active cells are kept sorted by their
/// integer coordinate so identical grids compare (and iterate) identically.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVoxelGrid<T: Real> {
    dims: [usize; 3],
    coords: Vec<[i32; 3]>,
    /// (n_active, channels) feature matrix, rows aligned with `coords`.
    feats: Tensor<T>,
}

impl<T: Real> SparseVoxelGrid<T> {
    pub fn from_sorted(
        dims: [usize; 3],
        coords: Vec<[i32; 3]>,
        feats: Tensor<T>,
    ) -> Result<Self, PointDataError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(PointDataError::ZeroVolumeGrid);
        }
        if coords.len() != feats.rows() {
            return Err(PointDataError::BadArg(alloc::format!(
                "{} coords vs {} feature rows",
                coords.len(),
                feats.rows()
            )));
        }
        for w in coords.windows(2) {
            if w[0] >= w[1] {
                return Err(PointDataError::BadArg(String::from(
                    "active coordinates must be sorted and unique",
                )));
            }
        }
        for c in &coords {
            if c.iter().any(|&v| v < 0)
                || c[0] as usize >= dims[0]
                || c[1] as usize >= dims[1]
                || c[2] as usize >= dims[2]
            {
                return Err(PointDataError::BadArg(alloc::format!(
                    "active coordinate {c:?} outside dims {dims:?}"
                )));
            }
        }
        Ok(SparseVoxelGrid { dims, coords, feats })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.feats.cols()
    }

    pub fn active_count(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[[i32; 3]] {
        &self.coords
    }

    pub fn features(&self) -> &Tensor<T> {
        &self.feats
    }

    pub fn features_mut(&mut self) -> &mut Tensor<T> {
        &mut self.feats
    }

    /// Same active set with different features (channel count may change).
    pub fn with_features(&self, feats: Tensor<T>) -> Self {
        assert_eq!(feats.rows(), self.coords.len());
        SparseVoxelGrid { dims: self.dims, coords: self.coords.clone(), feats }
    }
}

/// Fixed box in the plot frame that voxelization bins into.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelSpec<T> {
    pub origin: [T; 3],
    pub extent: [T; 3],
    pub resolution: [T; 3],
}

impl<T: Real> VoxelSpec<T> {
    pub fn new(extent: [T; 3], resolution: [T; 3]) -> Self {
        VoxelSpec { origin: [T::zero(); 3], extent, resolution }
    }

    /// ceil(extent / resolution), componentwise.
    pub fn dims(&self) -> [usize; 3] {
        let mut d = [0usize; 3];
        for i in 0..3 {
            d[i] = (self.extent[i] / self.resolution[i]).ceil().f64() as usize;
        }
        d
    }
}

/// Per-axis rotation limits (radians) and translation sigma (meters) for the
/// two augmentations. Ranges set to zero disable the corresponding draw.
#[derive(Clone, Copy, Debug)]
pub struct AugmentConfig<T> {
    pub rot_max: [T; 3],
    pub motion_std: T,
}

impl<T: Real> Default for AugmentConfig<T> {
    fn default() -> Self {
        AugmentConfig {
            // x and y within +-pi/18, z within +-pi/12
            rot_max: [
                T::lit(core::f64::consts::PI / 18.0),
                T::lit(core::f64::consts::PI / 18.0),
                T::lit(core::f64::consts::PI / 12.0),
            ],
            motion_std: T::one(),
        }
    }
}

/// Rotate xyz about the cloud centroid by the given per-axis angles,
/// composing x then y then z. Features pass through untouched.
pub fn rotate_xyz<T: Real>(pc: &PointCloud<T>, angles: [T; 3]) -> PointCloud<T> {
    if angles.iter().all(|&a| a == T::zero()) {
        // Keep the zero rotation bit-exact (the centroid round-trip rounds).
        return pc.clone();
    }
    let c = pc.centroid();
    let (sx, cx) = (angles[0].sin(), angles[0].cos());
    let (sy, cy) = (angles[1].sin(), angles[1].cos());
    let (sz, cz) = (angles[2].sin(), angles[2].cos());
    let mut out = PointCloud::empty(pc.feature_channels());
    let mut row_buf: Vec<T> = Vec::with_capacity(pc.stride());
    for row in pc.rows() {
        let mut x = row[0] - c[0];
        let mut y = row[1] - c[1];
        let mut z = row[2] - c[2];
        // about x
        let (y1, z1) = (cx * y - sx * z, sx * y + cx * z);
        y = y1;
        z = z1;
        // about y
        let (x1, z2) = (cy * x + sy * z, -sy * x + cy * z);
        x = x1;
        z = z2;
        // about z
        let (x2, y2) = (cz * x - sz * y, sz * x + cz * y);
        row_buf.clear();
        row_buf.push(x2 + c[0]);
        row_buf.push(y2 + c[1]);
        row_buf.push(z + c[2]);
        row_buf.extend_from_slice(&row[3..]);
        out.push_row(&row_buf);
    }
    out
}

/// Random small rotation about the centroid; angle ranges from `cfg`.
pub fn augment_rotate<T: Real>(
    pc: &PointCloud<T>,
    cfg: &AugmentConfig<T>,
    rng: &mut Rng,
) -> PointCloud<T> {
    let mut angles = [T::zero(); 3];
    for (a, &m) in angles.iter_mut().zip(&cfg.rot_max) {
        *a = if m == T::zero() { T::zero() } else { rng.range(-m, m) };
    }
    rotate_xyz(pc, angles)
}

/// One Gaussian offset per cloud, added to every point.
pub fn augment_motion<T: Real>(
    pc: &PointCloud<T>,
    cfg: &AugmentConfig<T>,
    rng: &mut Rng,
) -> PointCloud<T> {
    let offset = [
        cfg.motion_std * rng.normal::<T>(),
        cfg.motion_std * rng.normal::<T>(),
        cfg.motion_std * rng.normal::<T>(),
    ];
    translate(pc, offset)
}

pub fn translate<T: Real>(pc: &PointCloud<T>, offset: [T; 3]) -> PointCloud<T> {
    let mut out = PointCloud::empty(pc.feature_channels());
    let mut row_buf: Vec<T> = Vec::with_capacity(pc.stride());
    for row in pc.rows() {
        row_buf.clear();
        row_buf.push(row[0] + offset[0]);
        row_buf.push(row[1] + offset[1]);
        row_buf.push(row[2] + offset[2]);
        row_buf.extend_from_slice(&row[3..]);
        out.push_row(&row_buf);
    }
    out
}

/// Result of voxelization; `dropped` counts points outside the extent.
pub struct Voxelized<T: Real> {
    pub grid: SparseVoxelGrid<T>,
    pub dropped: usize,
}

/// Bin points into half-open cells `[lo, lo + res)` and average the full
/// (xyz + feature) rows per cell.
///
/// Rows inside each cell are summed in a sorted order so the result is
/// exactly permutation-invariant over input point order.
pub fn voxelize<T: Real>(
    pc: &PointCloud<T>,
    spec: &VoxelSpec<T>,
) -> Result<Voxelized<T>, PointDataError> {
    if pc.is_empty() {
        return Err(PointDataError::EmptyCloud);
    }
    if spec.resolution.iter().any(|&r| r <= T::zero()) {
        return Err(PointDataError::BadArg(String::from("resolution must be positive")));
    }
    let dims = spec.dims();
    if dims.iter().any(|&d| d == 0) {
        return Err(PointDataError::ZeroVolumeGrid);
    }
    let stride = pc.stride();
    let mut cells: BTreeMap<[i32; 3], Vec<usize>> = BTreeMap::new();
    let mut dropped = 0usize;
    for (i, row) in pc.rows().enumerate() {
        let mut key = [0i32; 3];
        let mut inside = true;
        for a in 0..3 {
            let rel = (row[a] - spec.origin[a]) / spec.resolution[a];
            let cell = rel.floor().f64() as i64;
            if cell < 0 || cell >= dims[a] as i64 {
                inside = false;
                break;
            }
            key[a] = cell as i32;
        }
        if inside {
            cells.entry(key).or_default().push(i);
        } else {
            dropped += 1;
        }
    }
    if cells.is_empty() {
        return Err(PointDataError::AllPointsOutside);
    }
    let mut coords = Vec::with_capacity(cells.len());
    let mut feats = Vec::with_capacity(cells.len() * stride);
    for (key, mut members) in cells {
        // Sort member rows by value so summation order is independent of
        // the input permutation (ties are identical rows).
        members.sort_by(|&a, &b| {
            let ra = pc.row(a);
            let rb = pc.row(b);
            for (va, vb) in ra.iter().zip(rb) {
                match va.partial_cmp(vb) {
                    Some(core::cmp::Ordering::Equal) | None => continue,
                    Some(o) => return o,
                }
            }
            core::cmp::Ordering::Equal
        });
        let inv = T::one() / T::lit(members.len() as f64);
        let mut acc = alloc::vec![T::zero(); stride];
        for &m in &members {
            for (a, &v) in acc.iter_mut().zip(pc.row(m)) {
                *a += v;
            }
        }
        for a in acc.iter_mut() {
            *a *= inv;
        }
        coords.push(key);
        feats.extend_from_slice(&acc);
    }
    let n = coords.len();
    let grid = SparseVoxelGrid::from_sorted(
        dims,
        coords,
        Tensor::new(&[n, stride], feats).expect("voxel feature matrix"),
    )?;
    Ok(Voxelized { grid, dropped })
}

/// Non-empty voxel ratio: |active| / (L * W * H).
pub fn compute_3dvi<T: Real>(grid: &SparseVoxelGrid<T>) -> Result<T, PointDataError> {
    let d = grid.dims();
    let total = d[0] * d[1] * d[2];
    if total == 0 {
        return Err(PointDataError::ZeroVolumeGrid);
    }
    Ok(T::lit(grid.active_count() as f64) / T::lit(total as f64))
}
