//! Transformer prediction head: the dense 2D feature map is flattened into
//! a token sequence, a learnable biomass token is prepended, learnable 1D
//! positional embeddings are added, N post-norm encoders mix the tokens and
//! a two-layer MLP reads the biomass estimate off token 0. Also home of the
//! log-regularized biomass loss.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::numerics::dense::Dense;
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::rng::Rng;
use crate::numerics::tensor::Tensor;
use crate::sparse3d::FeatureMap2D;
use crate::Real;

const LN_EPS: f64 = 1e-5;
/// Targets must exceed this many grams so ln(m) stays safely positive.
pub const MIN_TARGET_GRAMS: f64 = 1.0 + 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum BioheadError {
    DimMismatch { expected: usize, got: usize },
    NonFinite { layer: String },
    TargetTooSmall { index: usize },
    LengthMismatch { preds: usize, targets: usize },
    EmptyBatch,
}

impl fmt::Display for BioheadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BioheadError::DimMismatch { expected, got } => {
                write!(f, "feature map has {got} cells, head expects {expected}")
            }
            BioheadError::NonFinite { layer } => {
                write!(f, "non-finite activation in {layer}")
            }
            BioheadError::TargetTooSmall { index } => {
                write!(f, "target {index} must exceed {MIN_TARGET_GRAMS} grams")
            }
            BioheadError::LengthMismatch { preds, targets } => {
                write!(f, "{preds} predictions vs {targets} targets")
            }
            BioheadError::EmptyBatch => write!(f, "empty batch"),
        }
    }
}

impl core::error::Error for BioheadError {}

/// Ordered token embeddings; row 0 is the biomass token.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence<T: Real> {
    pub tokens: Tensor<T>,
}

impl<T: Real> TokenSequence<T> {
    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T: Real> {
    pub wq: Dense<T>,
    pub wk: Dense<T>,
    pub wv: Dense<T>,
    pub wo: Dense<T>,
    pub ff1: Dense<T>,
    pub ff2: Dense<T>,
    pub ln1_gain: Tensor<T>,
    pub ln1_bias: Tensor<T>,
    pub ln2_gain: Tensor<T>,
    pub ln2_bias: Tensor<T>,
}

impl<T: Real> EncoderParams<T> {
    fn init(c: usize, rng: &mut Rng) -> Self {
        EncoderParams {
            wq: Dense::init(c, c, rng),
            wk: Dense::init(c, c, rng),
            wv: Dense::init(c, c, rng),
            wo: Dense::init(c, c, rng),
            ff1: Dense::init(c, 4 * c, rng),
            ff2: Dense::init(4 * c, c, rng),
            ln1_gain: Tensor::full(&[c], T::one()),
            ln1_bias: Tensor::zeros(&[c]),
            ln2_gain: Tensor::full(&[c], T::one()),
            ln2_bias: Tensor::zeros(&[c]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadConfig {
    /// Spatial extents of the incoming feature map.
    pub l: usize,
    pub w: usize,
    /// Token width (backbone output channels).
    pub c_t: usize,
    pub n_encoders: usize,
    pub n_heads: usize,
    /// Hidden sizes of the prediction MLP.
    pub mlp_hidden: [usize; 2],
}

impl HeadConfig {
    pub fn new(l: usize, w: usize, c_t: usize) -> Self {
        HeadConfig { l, w, c_t, n_encoders: 5, n_heads: 4, mlp_hidden: [512, 256] }
    }

    pub fn token_count(&self) -> usize {
        1 + self.l * self.w
    }
}

/// All trainable weights of the prediction module.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T: Real> {
    pub cfg: HeadConfig,
    pub biomass_token: Tensor<T>,
    pub pos_table: Tensor<T>,
    pub encoders: Vec<EncoderParams<T>>,
    pub mlp1: Dense<T>,
    pub mlp2: Dense<T>,
    /// Final projection, zero-initialized so a fresh head predicts exactly 0.
    pub mlp_out: Dense<T>,
}

impl<T: Real> HeadParams<T> {
    pub fn init(cfg: HeadConfig, rng: &mut Rng) -> Self {
        let c = cfg.c_t;
        let small = T::lit(0.02);
        let biomass_token = Tensor::from_fn(&[1, c], |_| small * rng.normal::<T>());
        let pos_table =
            Tensor::from_fn(&[cfg.token_count(), c], |_| small * rng.normal::<T>());
        let encoders = (0..cfg.n_encoders).map(|_| EncoderParams::init(c, rng)).collect();
        let mlp1 = Dense::init(c, cfg.mlp_hidden[0], rng);
        let mlp2 = Dense::init(cfg.mlp_hidden[0], cfg.mlp_hidden[1], rng);
        let mlp_out = Dense::zeros(cfg.mlp_hidden[1], 1);
        HeadParams { cfg, biomass_token, pos_table, encoders, mlp1, mlp2, mlp_out }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = Vec::new();
        out.push((String::from("biomass_token"), &self.biomass_token));
        out.push((String::from("pos_table"), &self.pos_table));
        for (i, e) in self.encoders.iter().enumerate() {
            for (name, d) in [
                ("wq", &e.wq),
                ("wk", &e.wk),
                ("wv", &e.wv),
                ("wo", &e.wo),
                ("ff1", &e.ff1),
                ("ff2", &e.ff2),
            ] {
                out.push((alloc::format!("enc{i}.{name}.w"), &d.w));
                out.push((alloc::format!("enc{i}.{name}.b"), &d.b));
            }
            out.push((alloc::format!("enc{i}.ln1.gain"), &e.ln1_gain));
            out.push((alloc::format!("enc{i}.ln1.bias"), &e.ln1_bias));
            out.push((alloc::format!("enc{i}.ln2.gain"), &e.ln2_gain));
            out.push((alloc::format!("enc{i}.ln2.bias"), &e.ln2_bias));
        }
        for (name, d) in [("mlp1", &self.mlp1), ("mlp2", &self.mlp2), ("mlp_out", &self.mlp_out)] {
            out.push((alloc::format!("{name}.w"), &d.w));
            out.push((alloc::format!("{name}.b"), &d.b));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = Vec::new();
        out.push((String::from("biomass_token"), &mut self.biomass_token));
        out.push((String::from("pos_table"), &mut self.pos_table));
        for (i, e) in self.encoders.iter_mut().enumerate() {
            for (name, d) in [
                ("wq", &mut e.wq),
                ("wk", &mut e.wk),
                ("wv", &mut e.wv),
                ("wo", &mut e.wo),
                ("ff1", &mut e.ff1),
                ("ff2", &mut e.ff2),
            ] {
                out.push((alloc::format!("enc{i}.{name}.w"), &mut d.w));
                out.push((alloc::format!("enc{i}.{name}.b"), &mut d.b));
            }
            out.push((alloc::format!("enc{i}.ln1.gain"), &mut e.ln1_gain));
            out.push((alloc::format!("enc{i}.ln1.bias"), &mut e.ln1_bias));
            out.push((alloc::format!("enc{i}.ln2.gain"), &mut e.ln2_gain));
            out.push((alloc::format!("enc{i}.ln2.bias"), &mut e.ln2_bias));
        }
        for (name, d) in
            [("mlp1", &mut self.mlp1), ("mlp2", &mut self.mlp2), ("mlp_out", &mut self.mlp_out)]
        {
            out.push((alloc::format!("{name}.w"), &mut d.w));
            out.push((alloc::format!("{name}.b"), &mut d.b));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn per_encoder_param_count(&self) -> usize {
        let c = self.cfg.c_t;
        4 * (c * c + c) + (c * 4 * c + 4 * c) + (4 * c * c + c) + 4 * c
    }
}

pub struct HeadNodes {
    pub ids: Vec<NodeId>,
}

impl HeadNodes {
    pub fn insert<T: Real>(g: &Graph<T>, params: &HeadParams<T>, trainable: bool) -> Self {
        let ids = params
            .named_tensors()
            .into_iter()
            .map(|(_, t)| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        HeadNodes { ids }
    }
}

fn check_dims<T: Real>(fmap: &FeatureMap2D<T>, params: &HeadParams<T>) -> Result<(), BioheadError> {
    let expected = params.cfg.token_count() - 1;
    let got = fmap.l * fmap.w;
    if expected != got || fmap.channels() != params.cfg.c_t {
        return Err(BioheadError::DimMismatch { expected, got });
    }
    Ok(())
}

/// Row-major flatten, biomass token prepended, positional table added to
/// every token (slot 0 included).
pub fn flatten_tokens<T: Real>(
    fmap: &FeatureMap2D<T>,
    params: &HeadParams<T>,
) -> Result<TokenSequence<T>, BioheadError> {
    check_dims(fmap, params)?;
    let g: Graph<T> = Graph::new();
    let fm = g.constant(fmap.values.clone());
    let tok = g.constant(params.biomass_token.clone());
    let pos = g.constant(params.pos_table.clone());
    let id = flatten_trace(&g, fm, tok, pos);
    Ok(TokenSequence { tokens: (*g.value(id)).clone() })
}

pub fn flatten_trace<T: Real>(
    g: &Graph<T>,
    fmap: NodeId,
    biomass_token: NodeId,
    pos_table: NodeId,
) -> NodeId {
    let tokens = g.concat_rows(&[biomass_token, fmap]);
    g.add(tokens, pos_table)
}

struct HeadCursor<'a> {
    ids: &'a [NodeId],
    pos: usize,
}

impl<'a> HeadCursor<'a> {
    fn next(&mut self) -> NodeId {
        let id = self.ids[self.pos];
        self.pos += 1;
        id
    }
}

fn linear_trace<T: Real>(g: &Graph<T>, x: NodeId, cursor: &mut HeadCursor) -> NodeId {
    let w = cursor.next();
    let b = cursor.next();
    g.add_bias_row(g.matmul(x, w), b)
}

/// Full head trace from a dense feature-map node to the scalar prediction.
/// Node order must match `HeadParams::named_tensors`.
pub fn head_trace<T: Real>(
    g: &Graph<T>,
    fmap: NodeId,
    nodes: &HeadNodes,
    cfg: &HeadConfig,
) -> NodeId {
    let mut cursor = HeadCursor { ids: &nodes.ids, pos: 0 };
    let biomass_token = cursor.next();
    let pos_table = cursor.next();
    let mut x = flatten_trace(g, fmap, biomass_token, pos_table);

    let c = cfg.c_t;
    let heads = cfg.n_heads;
    let dh = c / heads;
    debug_assert_eq!(dh * heads, c, "token width must divide the head count");
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    for _ in 0..cfg.n_encoders {
        let q = linear_trace(g, x, &mut cursor);
        let k = linear_trace(g, x, &mut cursor);
        let v = linear_trace(g, x, &mut cursor);
        let mut ctx_heads = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let scores = g.affine(g.matmul_transb(qh, kh), scale, T::zero());
            let probs = g.softmax_rows(scores);
            ctx_heads.push(g.matmul(probs, vh));
        }
        let ctx = g.concat_cols(&ctx_heads);
        let attn = linear_trace(g, ctx, &mut cursor);
        // Cursor order per encoder: wq wk wv wo ff1 ff2 ln1 ln2.
        let ff1_w = cursor.next();
        let ff1_b = cursor.next();
        let ff2_w = cursor.next();
        let ff2_b = cursor.next();
        let ln1g = cursor.next();
        let ln1b = cursor.next();
        let ln2g = cursor.next();
        let ln2b = cursor.next();
        // Post-norm residual blocks.
        let x1 = g.layer_norm(g.add(x, attn), ln1g, ln1b, T::lit(LN_EPS));
        let h1 = g.relu(g.add_bias_row(g.matmul(x1, ff1_w), ff1_b));
        let ff = g.add_bias_row(g.matmul(h1, ff2_w), ff2_b);
        x = g.layer_norm(g.add(x1, ff), ln2g, ln2b, T::lit(LN_EPS));
    }

    // Biomass token readout through the two-hidden-layer MLP.
    let t0 = g.gather_rows(x, alloc::rc::Rc::new(alloc::vec![0usize]));
    let h1 = g.relu(linear_trace(g, t0, &mut cursor));
    let h2 = g.relu(linear_trace(g, h1, &mut cursor));
    let out = linear_trace(g, h2, &mut cursor);
    debug_assert_eq!(cursor.pos, nodes.ids.len(), "head trace must consume every tensor");
    out
}

/// Forward pass without gradients; checks activations stay finite.
pub fn predict_biomass<T: Real>(
    fmap: &FeatureMap2D<T>,
    params: &HeadParams<T>,
) -> Result<T, BioheadError> {
    check_dims(fmap, params)?;
    let g: Graph<T> = Graph::new();
    let nodes = HeadNodes::insert(&g, params, false);
    let fm = g.constant(fmap.values.clone());
    let out = head_trace(&g, fm, &nodes, &params.cfg);
    let v = g.value(out).item();
    if !v.is_finite() {
        return Err(BioheadError::NonFinite { layer: String::from("prediction head output") });
    }
    Ok(v)
}

/// Sum over the minibatch of smooth_l1((pred - target) / ln(target)).
pub fn biomass_loss<T: Real>(preds: &[T], targets: &[T]) -> Result<T, BioheadError> {
    validate_targets(preds.len(), targets)?;
    let mut acc = T::zero();
    for (&p, &m) in preds.iter().zip(targets) {
        acc += crate::numerics::smooth_l1((p - m) / m.ln());
    }
    Ok(acc)
}

pub fn validate_targets<T: Real>(n_preds: usize, targets: &[T]) -> Result<(), BioheadError> {
    if targets.is_empty() {
        return Err(BioheadError::EmptyBatch);
    }
    if n_preds != targets.len() {
        return Err(BioheadError::LengthMismatch { preds: n_preds, targets: targets.len() });
    }
    for (i, &m) in targets.iter().enumerate() {
        if m <= T::lit(MIN_TARGET_GRAMS) {
            return Err(BioheadError::TargetTooSmall { index: i });
        }
    }
    Ok(())
}

/// Tape version: preds is a (B, 1) node, targets pre-validated.
pub fn biomass_loss_trace<T: Real>(g: &Graph<T>, preds: NodeId, targets: &[T]) -> NodeId {
    let b = targets.len();
    let t = g.constant(Tensor::new(&[b, 1], targets.to_vec()).expect("targets"));
    let inv_log: Vec<T> = targets.iter().map(|&m| T::one() / m.ln()).collect();
    let inv = g.constant(Tensor::new(&[b, 1], inv_log).expect("inv log"));
    let scaled = g.mul(g.sub(preds, t), inv);
    g.sum(g.smooth_l1(scaled))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fmap(l: usize, w: usize, c: usize, rng: &mut Rng) -> FeatureMap2D<f64> {
        FeatureMap2D { l, w, values: Tensor::from_fn(&[l * w, c], |_| rng.range(-1.0, 1.0)) }
    }

    #[test]
    fn flatten_length() {
        let mut rng = Rng::new(1);
        let fm = fmap(2, 3, 8, &mut rng);
        let params = HeadParams::init(HeadConfig::new(2, 3, 8), &mut rng);
        let seq = flatten_tokens(&fm, &params).unwrap();
        assert_eq!(seq.len(), 7);
    }

    #[test]
    fn flatten_zero_map_keeps_biomass_token() {
        let mut rng = Rng::new(2);
        let fm = FeatureMap2D { l: 2, w: 2, values: Tensor::zeros(&[4, 8]) };
        let mut params = HeadParams::init(HeadConfig::new(2, 2, 8), &mut rng);
        for v in params.pos_table.data_mut() {
            *v = 0.0;
        }
        let seq = flatten_tokens(&fm, &params).unwrap();
        assert_eq!(seq.tokens.row(0), params.biomass_token.data());
        for r in 1..5 {
            assert!(seq.tokens.row(r).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn flatten_round_trips_spatial_tokens() {
        let mut rng = Rng::new(3);
        let fm = fmap(3, 2, 4, &mut rng);
        let mut params = HeadParams::init(HeadConfig::new(3, 2, 4), &mut rng);
        for v in params.pos_table.data_mut() {
            *v = 0.0;
        }
        let seq = flatten_tokens(&fm, &params).unwrap();
        for cell in 0..6 {
            assert_eq!(seq.tokens.row(cell + 1), fm.values.row(cell));
        }
    }

    #[test]
    fn dim_mismatch_rejected() {
        let mut rng = Rng::new(4);
        let fm = fmap(2, 2, 8, &mut rng);
        let params = HeadParams::init(HeadConfig::new(3, 3, 8), &mut rng);
        assert!(matches!(
            flatten_tokens(&fm, &params),
            Err(BioheadError::DimMismatch { .. })
        ));
    }

    #[test]
    fn zero_final_layer_predicts_zero() {
        let mut rng = Rng::new(5);
        let fm = fmap(2, 3, 8, &mut rng);
        let params = HeadParams::init(HeadConfig::new(2, 3, 8), &mut rng);
        // mlp_out is zero-initialized by default
        assert_eq!(predict_biomass(&fm, &params).unwrap(), 0.0);
    }

    #[test]
    fn spatial_token_permutation_invariance_with_zero_positions() {
        let mut rng = Rng::new(6);
        let cfg = HeadConfig { l: 2, w: 3, c_t: 8, n_encoders: 2, n_heads: 2, mlp_hidden: [16, 8] };
        let mut params = HeadParams::init(cfg, &mut rng);
        for v in params.pos_table.data_mut() {
            *v = 0.0;
        }
        // A non-zero readout is needed for the test to mean anything.
        params.mlp_out = Dense::init(8, 1, &mut rng);
        let fm = fmap(2, 3, 8, &mut rng);
        let base = predict_biomass(&fm, &params).unwrap();
        for _ in 0..10 {
            let mut order: Vec<usize> = (0..6).collect();
            rng.shuffle(&mut order);
            let mut data = Vec::new();
            for &cell in &order {
                data.extend_from_slice(fm.values.row(cell));
            }
            let permuted =
                FeatureMap2D { l: 2, w: 3, values: Tensor::new(&[6, 8], data).unwrap() };
            let out = predict_biomass(&permuted, &params).unwrap();
            assert!(
                (out - base).abs() <= 1e-6,
                "permutation changed prediction: {base} vs {out}"
            );
        }
    }

    #[test]
    fn encoder_count_scales_param_count_linearly() {
        let mut rng = Rng::new(7);
        let mut count = |n: usize| {
            let cfg =
                HeadConfig { l: 2, w: 2, c_t: 8, n_encoders: n, n_heads: 2, mlp_hidden: [16, 8] };
            HeadParams::<f64>::init(cfg, &mut rng).param_count()
        };
        let c0 = count(0);
        let c1 = count(1);
        let c5 = count(5);
        let per = HeadParams::<f64>::init(
            HeadConfig { l: 2, w: 2, c_t: 8, n_encoders: 1, n_heads: 2, mlp_hidden: [16, 8] },
            &mut rng,
        )
        .per_encoder_param_count();
        assert_eq!(c1 - c0, per);
        assert_eq!(c5 - c0, 5 * per);
    }

    #[test]
    fn biomass_loss_zero_at_exact_predictions() {
        let t = [10.0, 250.0, 1000.0];
        assert_eq!(biomass_loss(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn biomass_loss_analytic_single_sample() {
        let m = core::f64::consts::E * core::f64::consts::E; // ln(m) = 2
        let loss = biomass_loss(&[m + 1.0], &[m]).unwrap();
        assert!((loss - 0.125).abs() < 1e-12, "smooth_l1(0.5) = 0.125, got {loss}");
    }

    #[test]
    fn biomass_loss_penalizes_small_targets_more() {
        // Fixed absolute error of 50 g hurts more at 100 g than at 1000 g.
        let at_100 = biomass_loss(&[150.0], &[100.0]).unwrap();
        let at_1000 = biomass_loss(&[1050.0], &[1000.0]).unwrap();
        assert!(at_100 > at_1000, "{at_100} vs {at_1000}");
    }

    #[test]
    fn biomass_loss_strictly_decreasing_in_target() {
        for &e in &[10.0, 50.0, 200.0] {
            let mut last = f64::INFINITY;
            for &m in &[10.0, 100.0, 1000.0, 10_000.0] {
                let l = biomass_loss(&[m + e], &[m]).unwrap();
                assert!(l < last, "loss not decreasing at m={m} e={e}: {l} vs {last}");
                last = l;
            }
        }
    }

    #[test]
    fn biomass_loss_rejects_small_targets() {
        assert!(matches!(
            biomass_loss(&[1.0], &[1.0]),
            Err(BioheadError::TargetTooSmall { index: 0 })
        ));
        assert!(matches!(
            biomass_loss(&[1.0], &[0.5]),
            Err(BioheadError::TargetTooSmall { index: 0 })
        ));
    }

    #[test]
    fn biomass_loss_trace_matches_plain() {
        let preds = [120.0, 90.0, 410.0];
        let targets = [100.0, 95.0, 400.0];
        let plain = biomass_loss(&preds, &targets).unwrap();
        let g: Graph<f64> = Graph::new();
        let p = g.constant(Tensor::new(&[3, 1], preds.to_vec()).unwrap());
        let l = biomass_loss_trace(&g, p, &targets);
        assert!((g.value(l).item() - plain).abs() < 1e-12);
    }

    #[test]
    fn head_gradient_matches_finite_differences() {
        let mut rng = Rng::new(8);
        let cfg = HeadConfig { l: 1, w: 2, c_t: 4, n_encoders: 1, n_heads: 2, mlp_hidden: [6, 5] };
        let mut params = HeadParams::init(cfg.clone(), &mut rng);
        params.mlp_out = Dense::init(5, 1, &mut rng);
        let fm = fmap(1, 2, 4, &mut rng);
        let targets = [37.0f64];

        let loss_at = |p: &HeadParams<f64>| {
            let g: Graph<f64> = Graph::new();
            let nodes = HeadNodes::insert(&g, p, false);
            let fmn = g.constant(fm.values.clone());
            let out = head_trace(&g, fmn, &nodes, &cfg);
            let l = biomass_loss_trace(&g, out, &targets);
            g.value(l).item()
        };

        // Analytic gradients
        let g: Graph<f64> = Graph::new();
        let nodes = HeadNodes::insert(&g, &params, true);
        let fmn = g.constant(fm.values.clone());
        let out = head_trace(&g, fmn, &nodes, &cfg);
        let l = biomass_loss_trace(&g, out, &targets);
        let grads = g.backward(l);

        for (idx, (name, tensor)) in params.named_tensors().into_iter().enumerate() {
            let analytic = match grads.get(nodes.ids[idx]) {
                Some(t) => t.data().to_vec(),
                None => vec![0.0; tensor.len()],
            };
            // Probe a handful of coordinates per tensor.
            let probes = tensor.len().min(4);
            for c in 0..probes {
                let mut p = params.clone();
                let base = p.named_tensors_mut()[idx].1.data()[c];
                let h = 1e-5;
                p.named_tensors_mut()[idx].1.data_mut()[c] = base + h;
                let up = loss_at(&p);
                p.named_tensors_mut()[idx].1.data_mut()[c] = base - h;
                let dn = loss_at(&p);
                let numeric = (up - dn) / (2.0 * h);
                let denom = 1f64.max(numeric.abs()).max(analytic[c].abs());
                assert!(
                    (numeric - analytic[c]).abs() / denom < 1e-4,
                    "{name}[{c}]: analytic {} vs numeric {numeric}",
                    analytic[c]
                );
            }
        }
    }
}
