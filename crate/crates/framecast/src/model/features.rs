//! Assembly of network inputs from canonicalized frames.
//!
//! A "block" is one (scene, timestep) pair: N node rows and N·(N-1)
//! directed-edge rows. Blocks are stacked so the MLP stages run as single
//! large matrix products; index vectors wire edges to their target/source
//! node rows for aggregation and gathering.

use std::sync::Arc;

use crate::frames::{pair_index, CanonicalFrame, FrameKind};
use crate::geometry::{block_rot, normalize_angle, rotation_from_angles, SqMat};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorBuilder};

use super::{ModelConfig, ModelError, ModelResult};

/// Directed-edge enumeration for a fully connected graph without self loops.
#[derive(Clone, Copy, Debug)]
pub struct EdgeLayout {
    pub n: usize,
}

impl EdgeLayout {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    pub fn n_edges(&self) -> usize {
        self.n * (self.n - 1)
    }

    /// Edges in enumeration order: target-major, sources skipping the target.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |target| {
            (0..n)
                .filter(move |&source| source != target)
                .map(move |source| (target, source))
        })
    }

    pub fn edge_index(&self, target: usize, source: usize) -> usize {
        debug_assert_ne!(target, source);
        let offset = if source < target { source } else { source - 1 };
        target * (self.n - 1) + offset
    }
}

/// One (scene, timestep) block of inputs.
pub struct StepInput<'a, T> {
    pub canon: &'a CanonicalFrame<T>,
    /// Global (normalized) states `[N][2·dim]`.
    pub states: &'a [T],
    /// Global orientations `[N][A]`, radians.
    pub omegas: &'a [T],
}

/// Stacked network inputs for a list of blocks.
pub struct StepFeatures<T> {
    pub n_blocks: usize,
    pub n: usize,
    pub rows_edges: usize,
    pub rows_nodes: usize,
    /// `[rows_edges, edge_in_dim]`: `[v_{j|i}, s_{j,i}, v_{i|i}]`.
    pub edge_in: Tensor<T>,
    /// `[rows_edges, filter_in_dim]`: `[s_{j,i}, relative ω]`, angles
    /// normalized by π.
    pub delta_p: Tensor<T>,
    /// `[rows_nodes, v_dim]`: the self feature `v_{i|i}`.
    pub self_in: Tensor<T>,
    /// `[rows_nodes, 2·dim]`: current global states.
    pub x_nodes: Tensor<T>,
    /// `[rows_nodes, (2·dim)²]`: per-node inverse-rotation lift `Q ⊕ Q`
    /// (identity in the translated-only and global frame ablations).
    pub rot_blocks: Tensor<T>,
    /// Edge row → target node row.
    pub groups: Arc<Vec<usize>>,
    /// Edge row → target node row (same as groups, kept for gathering).
    pub gather_target: Arc<Vec<usize>>,
    /// Edge row → source node row.
    pub gather_source: Arc<Vec<usize>>,
}

/// Writes the `v_{j|i}` feature for one pair into `out`: relative position,
/// relative angle normalized by π, velocity.
fn write_v_feature<T: Scalar>(canon: &CanonicalFrame<T>, pair: usize, out: &mut Vec<T>) {
    let d = canon.dim;
    let a = canon.angular_dim();
    out.extend_from_slice(&canon.rel_pos[pair * d..(pair + 1) * d]);
    for c in 0..a {
        out.push(normalize_angle(canon.rel_ang[pair * a + c]));
    }
    out.extend_from_slice(&canon.vel[pair * d..(pair + 1) * d]);
}

/// Writes the spherical feature with angle channels normalized by π.
fn write_sph_feature<T: Scalar>(canon: &CanonicalFrame<T>, pair: usize, out: &mut Vec<T>) {
    let d = canon.dim;
    out.push(canon.sph[pair * d]);
    for c in 1..d {
        out.push(normalize_angle(canon.sph[pair * d + c]));
    }
}

/// Builds stacked features from blocks. Blocks must share `n`/`dim`; the
/// caller controls the stacking order (time-major for sequence models).
pub fn build_step_features<T: Scalar>(
    cfg: &ModelConfig,
    blocks: &[StepInput<'_, T>],
) -> ModelResult<StepFeatures<T>> {
    if blocks.is_empty() {
        return Err(ModelError::BadBatch("no blocks".into()));
    }
    let n = blocks[0].canon.n;
    let dim = cfg.dim;
    let adim = cfg.angular_dim();
    let state_dim = cfg.state_dim();
    let layout = EdgeLayout::new(n);
    let n_edges = layout.n_edges();
    let n_blocks = blocks.len();
    let rows_edges = n_blocks * n_edges;
    let rows_nodes = n_blocks * n;

    let mut edge_in = Vec::with_capacity(rows_edges * cfg.edge_in_dim());
    let mut delta_p = Vec::with_capacity(rows_edges * cfg.filter_in_dim());
    let mut self_in = Vec::with_capacity(rows_nodes * cfg.v_dim());
    let mut x_nodes = Vec::with_capacity(rows_nodes * state_dim);
    let mut rot_blocks = TensorBuilder::zeros(&[rows_nodes, state_dim * state_dim]);
    let mut groups = Vec::with_capacity(rows_edges);
    let mut gather_source = Vec::with_capacity(rows_edges);

    for (b, block) in blocks.iter().enumerate() {
        if block.canon.n != n || block.canon.dim != dim {
            return Err(ModelError::BadBatch(format!(
                "block {b} has n={}, dim={}, expected n={n}, dim={dim}",
                block.canon.n, block.canon.dim
            )));
        }
        let node_base = b * n;
        for (target, source) in layout.edges() {
            let pair = pair_index(target, source, n);
            let self_pair = pair_index(target, target, n);
            write_v_feature(block.canon, pair, &mut edge_in);
            write_sph_feature(block.canon, pair, &mut edge_in);
            write_v_feature(block.canon, self_pair, &mut edge_in);

            write_sph_feature(block.canon, pair, &mut delta_p);
            for c in 0..adim {
                delta_p.push(normalize_angle(block.canon.rel_ang[pair * adim + c]));
            }

            groups.push(node_base + target);
            gather_source.push(node_base + source);
        }
        for node in 0..n {
            let self_pair = pair_index(node, node, n);
            write_v_feature(block.canon, self_pair, &mut self_in);
            x_nodes.extend_from_slice(&block.states[node * state_dim..(node + 1) * state_dim]);

            let lift = match cfg.frame {
                FrameKind::RotoTranslated => {
                    let rot = rotation_from_angles(
                        dim,
                        &block.omegas[node * adim..(node + 1) * adim],
                    )
                    .map_err(|e| ModelError::BadBatch(e.to_string()))?;
                    block_rot(rot.matrix(), 2).expect("two blocks")
                }
                FrameKind::TranslatedOnly | FrameKind::Global => SqMat::identity(state_dim),
            };
            let row = (node_base + node) * state_dim * state_dim;
            for (offset, &v) in lift.data().iter().enumerate() {
                rot_blocks.set(row + offset, v);
            }
        }
    }

    let gather_target = Arc::new(groups.clone());
    Ok(StepFeatures {
        n_blocks,
        n,
        rows_edges,
        rows_nodes,
        edge_in: Tensor::new(vec![rows_edges, cfg.edge_in_dim()], edge_in)
            .expect("assembled to width"),
        delta_p: Tensor::new(vec![rows_edges, cfg.filter_in_dim()], delta_p)
            .expect("assembled to width"),
        self_in: Tensor::new(vec![rows_nodes, cfg.v_dim()], self_in).expect("assembled to width"),
        x_nodes: Tensor::new(vec![rows_nodes, state_dim], x_nodes).expect("assembled to width"),
        rot_blocks: rot_blocks.finish(),
        groups: Arc::new(groups),
        gather_target,
        gather_source: Arc::new(gather_source),
    })
}
