//! Sparse 3D convolution backbone: submanifold convolutions that preserve
//! the active set, strided sparse convolutions that shrink it, pre-activation
//! residual pairs, and the final height collapse into a dense 2D feature map.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::rng::Rng;
use crate::numerics::tensor::Tensor;
use crate::pointdata::SparseVoxelGrid;
use crate::Real;

pub const KERNEL_VOLUME: usize = 27;

#[derive(Debug, Clone, PartialEq)]
pub enum Sparse3dError {
    ChannelMismatch { expected: usize, got: usize },
    EmptyGrid,
    BadArg(String),
}

impl fmt::Display for Sparse3dError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sparse3dError::ChannelMismatch { expected, got } => {
                write!(f, "kernel expects {expected} input channels, grid has {got}")
            }
            Sparse3dError::EmptyGrid => write!(f, "cannot run inference on an empty grid"),
            Sparse3dError::BadArg(m) => write!(f, "invalid argument: {m}"),
        }
    }
}

impl core::error::Error for Sparse3dError {}

/// Offset enumeration order for the 3x3x3 kernel: x-major, then y, then z.
/// Kernel weight rows are laid out offset-major, input-channel minor:
/// row = offset_index * c_in + ci.
pub fn kernel_offsets() -> impl Iterator<Item = [i32; 3]> {
    (0..KERNEL_VOLUME).map(|i| {
        let dx = (i / 9) as i32 - 1;
        let dy = ((i / 3) % 3) as i32 - 1;
        let dz = (i % 3) as i32 - 1;
        [dx, dy, dz]
    })
}

/// One 3x3x3 convolution: weight is (27 * c_in, c_out), bias (c_out,).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn init(c_in: usize, c_out: usize, rng: &mut Rng) -> Self {
        // Kaiming-style scale over the 27 * c_in fan-in.
        let fan_in = KERNEL_VOLUME * c_in;
        let scale = T::lit((2.0 / fan_in as f64).sqrt());
        let weight = Tensor::from_fn(&[fan_in, c_out], |_| scale * rng.normal::<T>());
        ConvLayer { weight, bias: Tensor::zeros(&[c_out]) }
    }

    /// Kernel that copies the center voxel (requires c_in == c_out).
    pub fn identity(c: usize) -> Self {
        let mut weight = Tensor::zeros(&[KERNEL_VOLUME * c, c]);
        let center = KERNEL_VOLUME / 2;
        for ci in 0..c {
            weight.data_mut()[(center * c + ci) * c + ci] = T::one();
        }
        ConvLayer { weight, bias: Tensor::zeros(&[c]) }
    }

    pub fn c_in(&self) -> usize {
        self.weight.rows() / KERNEL_VOLUME
    }

    pub fn c_out(&self) -> usize {
        self.weight.cols()
    }
}

/// Neighbor table for one convolution: 27 input-row indices (or -1) per
/// output site, plus the output geometry.
pub struct ConvPlan {
    pub out_coords: Vec<[i32; 3]>,
    pub out_dims: [usize; 3],
    pub table: Rc<Vec<i64>>,
}

fn coord_index(coords: &[[i32; 3]]) -> BTreeMap<[i32; 3], usize> {
    coords.iter().enumerate().map(|(i, &c)| (c, i)).collect()
}

/// Submanifold plan: output sites equal input sites.
pub fn plan_submanifold<T: Real>(grid: &SparseVoxelGrid<T>) -> ConvPlan {
    let index = coord_index(grid.coords());
    let mut table = Vec::with_capacity(grid.active_count() * KERNEL_VOLUME);
    for &c in grid.coords() {
        for off in kernel_offsets() {
            let n = [c[0] + off[0], c[1] + off[1], c[2] + off[2]];
            table.push(index.get(&n).map_or(-1, |&r| r as i64));
        }
    }
    ConvPlan {
        out_coords: grid.coords().to_vec(),
        out_dims: grid.dims(),
        table: Rc::new(table),
    }
}

/// Strided plan: output sites are the strided cells whose 3x3x3 receptive
/// field (centered at `o * stride`) touches at least one active input.
pub fn plan_strided<T: Real>(grid: &SparseVoxelGrid<T>, stride: [usize; 3]) -> ConvPlan {
    let dims = grid.dims();
    let mut out_dims = [0usize; 3];
    for a in 0..3 {
        out_dims[a] = dims[a].div_ceil(stride[a]);
    }
    let mut sites: BTreeSet<[i32; 3]> = BTreeSet::new();
    for &p in grid.coords() {
        let mut ranges = [[0i32; 2]; 3];
        for a in 0..3 {
            let s = stride[a] as i32;
            let lo = (p[a] - 1 + s - 1).div_euclid(s); // ceil((p-1)/s)
            let hi = (p[a] + 1).div_euclid(s); // floor((p+1)/s)
            ranges[a] = [lo.max(0), hi.min(out_dims[a] as i32 - 1)];
        }
        for ox in ranges[0][0]..=ranges[0][1] {
            for oy in ranges[1][0]..=ranges[1][1] {
                for oz in ranges[2][0]..=ranges[2][1] {
                    sites.insert([ox, oy, oz]);
                }
            }
        }
    }
    let index = coord_index(grid.coords());
    let out_coords: Vec<[i32; 3]> = sites.into_iter().collect();
    let mut table = Vec::with_capacity(out_coords.len() * KERNEL_VOLUME);
    for &o in &out_coords {
        let center = [
            o[0] * stride[0] as i32,
            o[1] * stride[1] as i32,
            o[2] * stride[2] as i32,
        ];
        for off in kernel_offsets() {
            let n = [center[0] + off[0], center[1] + off[1], center[2] + off[2]];
            table.push(index.get(&n).map_or(-1, |&r| r as i64));
        }
    }
    ConvPlan { out_coords, out_dims, table: Rc::new(table) }
}

/// Tape building block shared by the plain wrappers and the backbone.
pub fn conv_trace<T: Real>(
    g: &Graph<T>,
    feats: NodeId,
    plan: &ConvPlan,
    weight: NodeId,
    bias: NodeId,
) -> NodeId {
    let gathered = g.gather_neighbors(feats, plan.table.clone(), KERNEL_VOLUME);
    let mixed = g.matmul(gathered, weight);
    g.add_bias_row(mixed, bias)
}

fn check_channels<T: Real>(grid: &SparseVoxelGrid<T>, layer: &ConvLayer<T>) -> Result<(), Sparse3dError> {
    if layer.c_in() != grid.channels() {
        return Err(Sparse3dError::ChannelMismatch {
            expected: layer.c_in(),
            got: grid.channels(),
        });
    }
    Ok(())
}

/// Dense 3x3x3 convolution evaluated only at, and emitting only at, the
/// already-active sites; missing neighbors contribute zero.
pub fn submanifold_conv3d<T: Real>(
    grid: &SparseVoxelGrid<T>,
    layer: &ConvLayer<T>,
) -> Result<SparseVoxelGrid<T>, Sparse3dError> {
    check_channels(grid, layer)?;
    if grid.active_count() == 0 {
        return Ok(grid.with_features(Tensor::zeros(&[0, layer.c_out()])));
    }
    let plan = plan_submanifold(grid);
    let g: Graph<T> = Graph::new();
    let feats = g.constant(grid.features().clone());
    let w = g.constant(layer.weight.clone());
    let b = g.constant(layer.bias.clone());
    let out = conv_trace(&g, feats, &plan, w, b);
    Ok(grid.with_features((*g.value(out)).clone()))
}

/// Strided sparse convolution; output dims are ceil(dims / stride).
pub fn sparse_downsample<T: Real>(
    grid: &SparseVoxelGrid<T>,
    layer: &ConvLayer<T>,
    stride: [usize; 3],
) -> Result<SparseVoxelGrid<T>, Sparse3dError> {
    check_channels(grid, layer)?;
    if stride.iter().any(|&s| s == 0) {
        return Err(Sparse3dError::BadArg(String::from("stride components must be >= 1")));
    }
    let plan = plan_strided(grid, stride);
    let g: Graph<T> = Graph::new();
    let feats = g.constant(grid.features().clone());
    let w = g.constant(layer.weight.clone());
    let b = g.constant(layer.bias.clone());
    let out = conv_trace(&g, feats, &plan, w, b);
    SparseVoxelGrid::from_sorted(plan.out_dims, plan.out_coords, (*g.value(out)).clone())
        .map_err(|e| Sparse3dError::BadArg(alloc::format!("{e}")))
}

/// Dense 2D feature map produced once the height axis has collapsed to one.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap2D<T: Real> {
    pub l: usize,
    pub w: usize,
    /// (l * w, channels), row-major with w minor.
    pub values: Tensor<T>,
}

impl<T: Real> FeatureMap2D<T> {
    pub fn channels(&self) -> usize {
        self.values.cols()
    }
}

/// Identity-skip pair of submanifold convolutions, pre-activation ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock<T: Real> {
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
}

impl<T: Real> ResBlock<T> {
    pub fn init(c: usize, rng: &mut Rng) -> Self {
        ResBlock { conv1: ConvLayer::init(c, c, rng), conv2: ConvLayer::init(c, c, rng) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelParams<T: Real> {
    pub block1: ResBlock<T>,
    pub block2: ResBlock<T>,
    pub down: ConvLayer<T>,
}

/// Backbone weights: a channel-lifting stem plus four pyramid levels, each
/// two ResNet blocks and a stride-2 downsample.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseConvParams<T: Real> {
    pub stem: ConvLayer<T>,
    pub levels: Vec<LevelParams<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub channel_plan: [usize; 4],
}

impl BackboneConfig {
    pub fn new(in_channels: usize) -> Self {
        BackboneConfig { in_channels, channel_plan: [16, 32, 64, 128] }
    }

    /// Narrow plan sized for single-core experiments.
    pub fn desk(in_channels: usize) -> Self {
        BackboneConfig { in_channels, channel_plan: [8, 16, 32, 64] }
    }

    pub fn out_channels(&self) -> usize {
        self.channel_plan[3]
    }
}

impl<T: Real> SparseConvParams<T> {
    pub fn init(cfg: &BackboneConfig, rng: &mut Rng) -> Self {
        let plan = cfg.channel_plan;
        let stem = ConvLayer::init(cfg.in_channels, plan[0], rng);
        let mut levels = Vec::with_capacity(4);
        for i in 0..4 {
            let c = plan[i];
            let c_next = plan[(i + 1).min(3)];
            levels.push(LevelParams {
                block1: ResBlock::init(c, rng),
                block2: ResBlock::init(c, rng),
                down: ConvLayer::init(c, c_next, rng),
            });
        }
        SparseConvParams { stem, levels }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        out.push((String::from("stem.w"), &self.stem.weight));
        out.push((String::from("stem.b"), &self.stem.bias));
        for (i, lv) in self.levels.iter().enumerate() {
            for (bn, block) in [(1usize, &lv.block1), (2, &lv.block2)] {
                out.push((alloc::format!("level{i}.block{bn}.conv1.w"), &block.conv1.weight));
                out.push((alloc::format!("level{i}.block{bn}.conv1.b"), &block.conv1.bias));
                out.push((alloc::format!("level{i}.block{bn}.conv2.w"), &block.conv2.weight));
                out.push((alloc::format!("level{i}.block{bn}.conv2.b"), &block.conv2.bias));
            }
            out.push((alloc::format!("level{i}.down.w"), &lv.down.weight));
            out.push((alloc::format!("level{i}.down.b"), &lv.down.bias));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        out.push((String::from("stem.w"), &mut self.stem.weight));
        out.push((String::from("stem.b"), &mut self.stem.bias));
        for (i, lv) in self.levels.iter_mut().enumerate() {
            for (bn, block) in [(1usize, &mut lv.block1), (2, &mut lv.block2)] {
                out.push((alloc::format!("level{i}.block{bn}.conv1.w"), &mut block.conv1.weight));
                out.push((alloc::format!("level{i}.block{bn}.conv1.b"), &mut block.conv1.bias));
                out.push((alloc::format!("level{i}.block{bn}.conv2.w"), &mut block.conv2.weight));
                out.push((alloc::format!("level{i}.block{bn}.conv2.b"), &mut block.conv2.bias));
            }
            out.push((alloc::format!("level{i}.down.w"), &mut lv.down.weight));
            out.push((alloc::format!("level{i}.down.b"), &mut lv.down.bias));
        }
        out
    }
}

/// Backbone parameters inserted into a tape; ids parallel `named_tensors`.
pub struct BackboneNodes {
    pub ids: Vec<NodeId>,
}

impl BackboneNodes {
    pub fn insert<T: Real>(g: &Graph<T>, params: &SparseConvParams<T>, trainable: bool) -> Self {
        let ids = params
            .named_tensors()
            .into_iter()
            .map(|(_, t)| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        BackboneNodes { ids }
    }
}

struct NodeCursor<'a> {
    ids: &'a [NodeId],
    pos: usize,
}

impl<'a> NodeCursor<'a> {
    fn next_pair(&mut self) -> (NodeId, NodeId) {
        let w = self.ids[self.pos];
        let b = self.ids[self.pos + 1];
        self.pos += 2;
        (w, b)
    }
}

/// Full backbone trace: stem, 4 levels of two pre-activation ResNet blocks
/// plus a stride-2 downsample, then max-pool any residual height and densify.
/// Returns the dense feature map node and its spatial dims.
pub fn backbone_trace<T: Real>(
    g: &Graph<T>,
    grid: &SparseVoxelGrid<T>,
    nodes: &BackboneNodes,
) -> Result<(NodeId, usize, usize), Sparse3dError> {
    if grid.active_count() == 0 {
        return Err(Sparse3dError::EmptyGrid);
    }
    let mut cursor = NodeCursor { ids: &nodes.ids, pos: 0 };
    let mut feats = g.constant(grid.features().clone());
    let mut coords = grid.coords().to_vec();
    let mut dims = grid.dims();

    let rebuild = |coords: &Vec<[i32; 3]>, dims: [usize; 3]| -> SparseVoxelGrid<T> {
        // Geometry-only grid used for planning; features are placeholders.
        SparseVoxelGrid::from_sorted(dims, coords.clone(), Tensor::zeros(&[coords.len(), 1]))
            .expect("planning grid")
    };

    // Stem lift.
    {
        let (w, b) = cursor.next_pair();
        let plan = plan_submanifold(&rebuild(&coords, dims));
        feats = conv_trace(g, feats, &plan, w, b);
    }

    for _level in 0..4 {
        let plan = plan_submanifold(&rebuild(&coords, dims));
        for _block in 0..2 {
            let (w1, b1) = cursor.next_pair();
            let (w2, b2) = cursor.next_pair();
            let a = g.relu(feats);
            let h = conv_trace(g, a, &plan, w1, b1);
            let h = g.relu(h);
            let h = conv_trace(g, h, &plan, w2, b2);
            feats = g.add(feats, h);
        }
        let (w, b) = cursor.next_pair();
        let down_plan = plan_strided(&rebuild(&coords, dims), [2, 2, 2]);
        feats = conv_trace(g, feats, &down_plan, w, b);
        coords = down_plan.out_coords;
        dims = down_plan.out_dims;
    }

    // Collapse any residual height by max-pooling per (l, w) column.
    if dims[2] > 1 {
        let mut groups: BTreeMap<(i32, i32), Vec<usize>> = BTreeMap::new();
        for (row, &c) in coords.iter().enumerate() {
            groups.entry((c[0], c[1])).or_default().push(row);
        }
        let mut new_coords = Vec::with_capacity(groups.len());
        let mut group_rows = Vec::with_capacity(groups.len());
        for ((l, w), rows) in groups {
            new_coords.push([l, w, 0]);
            group_rows.push(rows);
        }
        feats = g.group_max(feats, Rc::new(group_rows));
        coords = new_coords;
        dims[2] = 1;
    }

    // Densify: inactive sites become exact zeros.
    let (l, w) = (dims[0], dims[1]);
    let rows: Vec<usize> = coords.iter().map(|c| c[0] as usize * w + c[1] as usize).collect();
    let dense = g.scatter_rows(feats, Rc::new(rows), l * w);
    Ok((dense, l, w))
}

/// Convenience forward pass without gradients.
pub fn backbone_forward<T: Real>(
    grid: &SparseVoxelGrid<T>,
    params: &SparseConvParams<T>,
) -> Result<FeatureMap2D<T>, Sparse3dError> {
    let g: Graph<T> = Graph::new();
    let nodes = BackboneNodes::insert(&g, params, false);
    let (id, l, w) = backbone_trace(&g, grid, &nodes)?;
    Ok(FeatureMap2D { l, w, values: (*g.value(id)).clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointdata::PointDataError;

    fn grid_from_coords(
        dims: [usize; 3],
        coords: &[[i32; 3]],
        c: usize,
        rng: &mut Rng,
    ) -> SparseVoxelGrid<f64> {
        let mut sorted = coords.to_vec();
        sorted.sort();
        sorted.dedup();
        let feats = Tensor::from_fn(&[sorted.len(), c], |_| rng.range(-1.0, 1.0));
        SparseVoxelGrid::from_sorted(dims, sorted, feats).unwrap()
    }

    fn random_grid(dims: [usize; 3], c: usize, p: f64, rng: &mut Rng) -> SparseVoxelGrid<f64> {
        let mut coords = Vec::new();
        for x in 0..dims[0] as i32 {
            for y in 0..dims[1] as i32 {
                for z in 0..dims[2] as i32 {
                    if rng.uniform_f64() < p {
                        coords.push([x, y, z]);
                    }
                }
            }
        }
        if coords.is_empty() {
            coords.push([0, 0, 0]);
        }
        grid_from_coords(dims, &coords, c, rng)
    }

    /// Brute-force dense conv oracle over the zero-padded dense array.
    fn dense_conv_at(
        grid: &SparseVoxelGrid<f64>,
        layer: &ConvLayer<f64>,
        center: [i32; 3],
    ) -> Vec<f64> {
        let c_in = grid.channels();
        let c_out = layer.c_out();
        let index: BTreeMap<[i32; 3], usize> =
            grid.coords().iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let mut out = vec![0.0; c_out];
        for co in 0..c_out {
            let mut acc = 0.0;
            for (oi, off) in kernel_offsets().enumerate() {
                let n = [center[0] + off[0], center[1] + off[1], center[2] + off[2]];
                if let Some(&row) = index.get(&n) {
                    for ci in 0..c_in {
                        acc += grid.features().row(row)[ci]
                            * layer.weight.row(oi * c_in + ci)[co];
                    }
                }
            }
            out[co] = acc + layer.bias.data()[co];
        }
        out
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = Rng::new(1);
        let grid = random_grid([4, 4, 4], 3, 0.4, &mut rng);
        let out = submanifold_conv3d(&grid, &ConvLayer::identity(3)).unwrap();
        assert_eq!(out, grid);
    }

    #[test]
    fn submanifold_matches_dense_oracle() {
        for seed in 0..20u64 {
            let mut rng = Rng::new(seed);
            let grid = random_grid([6, 6, 6], 2, 0.3, &mut rng);
            let layer = ConvLayer::init(2, 3, &mut rng);
            let out = submanifold_conv3d(&grid, &layer).unwrap();
            assert_eq!(out.coords(), grid.coords(), "active set must be preserved");
            for (i, &c) in out.coords().iter().enumerate() {
                let want = dense_conv_at(&grid, &layer, c);
                for (a, b) in out.features().row(i).iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12, "seed {seed}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn strided_matches_dense_oracle() {
        for seed in 0..20u64 {
            let mut rng = Rng::new(100 + seed);
            let grid = random_grid([6, 6, 6], 2, 0.3, &mut rng);
            let layer = ConvLayer::init(2, 2, &mut rng);
            let out = sparse_downsample(&grid, &layer, [2, 2, 2]).unwrap();
            assert_eq!(out.dims(), [3, 3, 3]);
            for (i, &o) in out.coords().iter().enumerate() {
                let center = [o[0] * 2, o[1] * 2, o[2] * 2];
                let want = dense_conv_at(&grid, &layer, center);
                for (a, b) in out.features().row(i).iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12, "seed {seed}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn empty_grid_stays_empty() {
        let grid = SparseVoxelGrid::<f64>::from_sorted(
            [4, 4, 4],
            Vec::new(),
            Tensor::zeros(&[0, 2]),
        )
        .unwrap();
        let out = submanifold_conv3d(&grid, &ConvLayer::identity(2)).unwrap();
        assert_eq!(out.active_count(), 0);
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let mut rng = Rng::new(2);
        let grid = random_grid([4, 4, 4], 3, 0.3, &mut rng);
        let layer = ConvLayer::init(2, 2, &mut rng);
        assert!(matches!(
            submanifold_conv3d(&grid, &layer),
            Err(Sparse3dError::ChannelMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn single_voxel_strided_identity() {
        let mut rng = Rng::new(3);
        let grid = grid_from_coords([4, 4, 4], &[[0, 0, 0]], 1, &mut rng);
        let out = sparse_downsample(&grid, &ConvLayer::identity(1), [2, 2, 2]).unwrap();
        assert_eq!(out.dims(), [2, 2, 2]);
        assert_eq!(out.coords(), &[[0, 0, 0]]);
        assert!((out.features().row(0)[0] - grid.features().row(0)[0]).abs() < 1e-15);
    }

    #[test]
    fn stride_only_height() {
        let mut rng = Rng::new(4);
        let grid = random_grid([4, 4, 4], 1, 0.5, &mut rng);
        let out = sparse_downsample(&grid, &ConvLayer::identity(1), [1, 1, 2]).unwrap();
        assert_eq!(out.dims(), [4, 4, 2]);
    }

    #[test]
    fn submanifold_never_grows_active_set() {
        for seed in 0..10u64 {
            let mut rng = Rng::new(seed);
            let grid = random_grid([5, 5, 5], 2, 0.25, &mut rng);
            let layer = ConvLayer::init(2, 4, &mut rng);
            let out = submanifold_conv3d(&grid, &layer).unwrap();
            assert_eq!(out.active_count(), grid.active_count());
        }
    }

    #[test]
    fn backbone_shape_trace_published_grid() {
        // (200, 80, 20) -> four stride-2 levels -> (13, 5, 2) -> pool -> (13, 5)
        let mut dims = [200usize, 80, 20];
        for _ in 0..4 {
            dims = [dims[0].div_ceil(2), dims[1].div_ceil(2), dims[2].div_ceil(2)];
        }
        assert_eq!(dims, [13, 5, 2]);

        // Verify the real trace on a sparse occupancy of that grid.
        let mut rng = Rng::new(5);
        let coords: Vec<[i32; 3]> = (0..40)
            .map(|_| {
                [
                    rng.below(200) as i32,
                    rng.below(80) as i32,
                    rng.below(20) as i32,
                ]
            })
            .collect();
        let grid = grid_from_coords([200, 80, 20], &coords, 3, &mut rng);
        let cfg = BackboneConfig { in_channels: 3, channel_plan: [4, 4, 4, 4] };
        let params = SparseConvParams::init(&cfg, &mut rng);
        let fmap = backbone_forward(&grid, &params).unwrap();
        assert_eq!((fmap.l, fmap.w), (13, 5));
        assert_eq!(fmap.channels(), 4);
        assert_eq!(fmap.values.rows(), 13 * 5);
    }

    #[test]
    fn backbone_zero_features_zero_bias_gives_zero_map() {
        let mut rng = Rng::new(6);
        let coords: Vec<[i32; 3]> =
            (0..20).map(|_| [rng.below(16) as i32, rng.below(16) as i32, rng.below(8) as i32]).collect();
        let mut grid = grid_from_coords([16, 16, 8], &coords, 2, &mut rng);
        for v in grid.features_mut().data_mut() {
            *v = 0.0;
        }
        let cfg = BackboneConfig { in_channels: 2, channel_plan: [4, 4, 4, 4] };
        let params = SparseConvParams::init(&cfg, &mut rng); // biases init to zero
        let fmap = backbone_forward(&grid, &params).unwrap();
        assert!(fmap.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backbone_is_deterministic() {
        let mut rng = Rng::new(7);
        let grid = random_grid([16, 16, 8], 2, 0.1, &mut rng);
        let cfg = BackboneConfig { in_channels: 2, channel_plan: [4, 8, 8, 8] };
        let params = SparseConvParams::init(&cfg, &mut rng);
        let a = backbone_forward(&grid, &params).unwrap();
        let b = backbone_forward(&grid, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn backbone_rejects_empty_grid() {
        let grid = SparseVoxelGrid::<f64>::from_sorted(
            [8, 8, 8],
            Vec::new(),
            Tensor::zeros(&[0, 2]),
        )
        .unwrap();
        let cfg = BackboneConfig { in_channels: 2, channel_plan: [4, 4, 4, 4] };
        let params = SparseConvParams::init(&cfg, &mut Rng::new(8));
        assert!(matches!(backbone_forward(&grid, &params), Err(Sparse3dError::EmptyGrid)));
    }

    #[test]
    fn integer_translation_equivariance() {
        // Shifting input coordinates by the full stride product (16 per axis)
        // shifts the level-4 activations by one cell, away from boundaries.
        let mut rng = Rng::new(9);
        let base: Vec<[i32; 3]> = (0..30)
            .map(|_| {
                [
                    16 + rng.below(12) as i32,
                    16 + rng.below(12) as i32,
                    16 + rng.below(12) as i32,
                ]
            })
            .collect();
        let mut sorted = base.clone();
        sorted.sort();
        sorted.dedup();
        let feats = Tensor::from_fn(&[sorted.len(), 2], |_| rng.range(-1.0, 1.0));
        let dims = [64usize, 64, 64];
        let grid_a =
            SparseVoxelGrid::from_sorted(dims, sorted.clone(), feats.clone()).unwrap();
        let shifted: Vec<[i32; 3]> = sorted.iter().map(|c| [c[0] + 16, c[1] + 16, c[2] + 16]).collect();
        let grid_b = SparseVoxelGrid::from_sorted(dims, shifted, feats).unwrap();

        let cfg = BackboneConfig { in_channels: 2, channel_plan: [4, 4, 4, 4] };
        let params: SparseConvParams<f64> = SparseConvParams::init(&cfg, &mut rng);

        // The pooled dense map should shift by exactly one cell.
        let fa = backbone_forward(&grid_a, &params).unwrap();
        let fb = backbone_forward(&grid_b, &params).unwrap();
        assert_eq!((fa.l, fa.w), (fb.l, fb.w));
        let c = fa.channels();
        let (l, w) = (fa.l, fa.w);
        let mut checked = 0;
        for li in 0..l - 1 {
            for wi in 0..w - 1 {
                let src = fa.values.row(li * w + wi);
                let dst = fb.values.row((li + 1) * w + wi + 1);
                for j in 0..c {
                    assert!(
                        (src[j] - dst[j]).abs() < 1e-9,
                        "cell ({li},{wi}) channel {j}: {} vs {}",
                        src[j],
                        dst[j]
                    );
                }
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn grid_rejects_unsorted_coords() {
        let feats = Tensor::<f64>::zeros(&[2, 1]);
        let r = SparseVoxelGrid::from_sorted([4, 4, 4], vec![[1, 0, 0], [0, 0, 0]], feats);
        assert!(matches!(r, Err(PointDataError::BadArg(_))));
    }
}
