//! Dense towers over dense or sparse inputs.
//!
//! A tower is a stack of fully connected layers. The first layer is a pure
//! linear map (no bias, no activation) so it can cheaply project very wide
//! sparse inputs; the remaining layers carry a bias and tanh. Gradients are
//! accumulated into dense per-layer buffers and can be flattened to a single
//! vector for clipping, noising and transport.

mod checkpoint;
mod opt;

pub use checkpoint::{load_tower, save_tower, tower_from_bytes, tower_to_bytes};
pub use opt::{Adam, Optimizer, Sgd};

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if rows.iter().any(|x| x.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Matrix { rows: r, cols: c, data: rows.into_iter().flatten().collect() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }

    pub fn matvec_sparse(&self, x: &SparseVec) -> Vec<f64> {
        debug_assert_eq!(x.dim(), self.cols);
        let mut y = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = 0.0;
            for (&j, &v) in x.indices().iter().zip(x.values()) {
                acc += row[j as usize] * v;
            }
            y[i] = acc;
        }
        y
    }
}

/// Sparse vector with sorted, unique indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVec {
    dim: usize,
    idx: Vec<u32>,
    val: Vec<f64>,
}

impl SparseVec {
    pub fn new(dim: usize) -> Self {
        SparseVec { dim, idx: Vec::new(), val: Vec::new() }
    }

    pub fn from_pairs(dim: usize, mut pairs: Vec<(u32, f64)>) -> Result<Self> {
        pairs.sort_by_key(|&(i, _)| i);
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidArgument(format!("duplicate index {}", w[0].0)));
            }
        }
        if let Some(&(last, _)) = pairs.last() {
            if last as usize >= dim {
                return Err(Error::Shape(format!("index {last} out of range for dim {dim}")));
            }
        }
        let (idx, val) = pairs.into_iter().unzip();
        Ok(SparseVec { dim, idx, val })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.idx.len()
    }

    pub fn indices(&self) -> &[u32] {
        &self.idx
    }

    pub fn values(&self) -> &[f64] {
        &self.val
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim];
        for (&i, &v) in self.idx.iter().zip(&self.val) {
            d[i as usize] = v;
        }
        d
    }

    pub fn l2_norm(&self) -> f64 {
        self.val.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    fn apply(self, z: &mut [f64]) {
        if self == Activation::Tanh {
            for v in z {
                *v = v.tanh();
            }
        }
    }

    /// Derivative expressed through the activation output y = f(z).
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Tanh),
            _ => Err(Error::Checkpoint(format!("unknown activation code {c}"))),
        }
    }
}

/// Input to a tower: the wide first layer accepts either representation.
#[derive(Clone, Copy, Debug)]
pub enum Input<'a> {
    Dense(&'a [f64]),
    Sparse(&'a SparseVec),
}

impl<'a> Input<'a> {
    pub fn dim(&self) -> usize {
        match self {
            Input::Dense(x) => x.len(),
            Input::Sparse(x) => x.dim(),
        }
    }

    fn to_owned_input(self) -> OwnedInput {
        match self {
            Input::Dense(x) => OwnedInput::Dense(x.to_vec()),
            Input::Sparse(x) => OwnedInput::Sparse(x.clone()),
        }
    }
}

#[derive(Clone, Debug)]
enum OwnedInput {
    Dense(Vec<f64>),
    Sparse(SparseVec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Option<Vec<f64>>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    fn forward(&self, x: Input<'_>) -> Vec<f64> {
        let mut z = match x {
            Input::Dense(d) => self.weights.matvec(d),
            Input::Sparse(s) => self.weights.matvec_sparse(s),
        };
        if let Some(b) = &self.bias {
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += bi;
            }
        }
        self.activation.apply(&mut z);
        z
    }
}

/// Activations saved by `forward` for the matching `backward` call.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: OwnedInput,
    outputs: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("tower has at least one layer")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tower {
    pub layers: Vec<DenseLayer>,
}

impl Tower {
    /// Glorot-uniform initialized tower: `dims = [in, h1, ..., out]`.
    /// Layer 1 is linear without bias; later layers use bias + tanh.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument("tower needs at least one layer".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("zero layer width".into()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (k, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut rng = rng::rng_from(seed, &[rng::TAG_INIT, k as u64]);
            let mut weights = Matrix::zeros(fan_out, fan_in);
            for v in weights.as_mut_slice() {
                *v = rng.random_range(-bound..bound);
            }
            let first = k == 0;
            layers.push(DenseLayer {
                weights,
                bias: if first { None } else { Some(vec![0.0; fan_out]) },
                activation: if first { Activation::Identity } else { Activation::Tanh },
            });
        }
        Ok(Tower { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.out_dim()));
        d
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.rows() * l.weights.cols() + l.bias.as_ref().map_or(0, |b| b.len()))
            .sum()
    }

    pub fn forward(&self, x: Input<'_>) -> Result<(Vec<f64>, ForwardCache)> {
        if x.dim() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input dim {} does not match tower input dim {}",
                x.dim(),
                self.input_dim()
            )));
        }
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = self.layers[0].forward(x);
        outputs.push(cur.clone());
        for layer in &self.layers[1..] {
            cur = layer.forward(Input::Dense(&cur));
            outputs.push(cur.clone());
        }
        Ok((cur, ForwardCache { input: x.to_owned_input(), outputs }))
    }

    /// Backprop `d_out = dL/dy` through the cached forward pass, adding the
    /// parameter gradients into `grads`.
    pub fn backward_into(&self, cache: &ForwardCache, d_out: &[f64], grads: &mut TowerGrads) {
        debug_assert_eq!(d_out.len(), self.output_dim());
        debug_assert_eq!(grads.layers.len(), self.layers.len());
        let mut delta = d_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let y = &cache.outputs[k];
            for (d, &yi) in delta.iter_mut().zip(y) {
                *d *= layer.activation.derivative_from_output(yi);
            }
            let g = &mut grads.layers[k];
            if let Some(db) = &mut g.d_bias {
                for (b, &d) in db.iter_mut().zip(&delta) {
                    *b += d;
                }
            }
            if k == 0 {
                match &cache.input {
                    OwnedInput::Dense(x) => {
                        for (i, &d) in delta.iter().enumerate() {
                            let row = g.d_weights.row_mut(i);
                            for (r, &xj) in row.iter_mut().zip(x) {
                                *r += d * xj;
                            }
                        }
                    }
                    OwnedInput::Sparse(x) => {
                        for (i, &d) in delta.iter().enumerate() {
                            let row = g.d_weights.row_mut(i);
                            for (&j, &v) in x.indices().iter().zip(x.values()) {
                                row[j as usize] += d * v;
                            }
                        }
                    }
                }
            } else {
                let x = &cache.outputs[k - 1];
                for (i, &d) in delta.iter().enumerate() {
                    let row = g.d_weights.row_mut(i);
                    for (r, &xj) in row.iter_mut().zip(x) {
                        *r += d * xj;
                    }
                }
                let mut prev = vec![0.0; layer.in_dim()];
                for (i, &d) in delta.iter().enumerate() {
                    let row = layer.weights.row(i);
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p += w * d;
                    }
                }
                delta = prev;
            }
        }
    }

    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64]) -> TowerGrads {
        let mut grads = TowerGrads::zeros_like(self);
        self.backward_into(cache, d_out, &mut grads);
        grads
    }

    /// `w -= scale * g` across all parameters.
    pub fn apply_scaled(&mut self, grads: &TowerGrads, scale: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, &d) in layer.weights.as_mut_slice().iter_mut().zip(g.d_weights.as_slice()) {
                *w -= scale * d;
            }
            if let (Some(b), Some(db)) = (&mut layer.bias, &g.d_bias) {
                for (bi, &d) in b.iter_mut().zip(db) {
                    *bi -= scale * d;
                }
            }
        }
    }

    /// Parameters flattened layer by layer (weights row-major, then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.as_slice());
            if let Some(b) = &layer.bias {
                out.extend_from_slice(b);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub d_weights: Matrix,
    pub d_bias: Option<Vec<f64>>,
}

/// Parameter-shaped gradient (or update) buffer for a tower.
#[derive(Clone, Debug, PartialEq)]
pub struct TowerGrads {
    pub layers: Vec<LayerGrads>,
}

impl TowerGrads {
    pub fn zeros_like(tower: &Tower) -> Self {
        TowerGrads {
            layers: tower
                .layers
                .iter()
                .map(|l| LayerGrads {
                    d_weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    d_bias: l.bias.as_ref().map(|b| vec![0.0; b.len()]),
                })
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.d_weights.rows() * l.d_weights.cols() + l.d_bias.as_ref().map_or(0, |b| b.len()))
            .sum()
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            for v in l.d_weights.as_mut_slice() {
                *v *= s;
            }
            if let Some(b) = &mut l.d_bias {
                for v in b {
                    *v *= s;
                }
            }
        }
    }

    pub fn add_assign(&mut self, other: &TowerGrads) {
        debug_assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, &y) in a.d_weights.as_mut_slice().iter_mut().zip(b.d_weights.as_slice()) {
                *x += y;
            }
            if let (Some(xb), Some(yb)) = (&mut a.d_bias, &b.d_bias) {
                for (x, &y) in xb.iter_mut().zip(yb) {
                    *x += y;
                }
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.d_weights.as_slice());
            if let Some(b) = &l.d_bias {
                out.extend_from_slice(b);
            }
        }
        out
    }

    /// Inverse of `flatten` against a tower's shape.
    pub fn from_flat(tower: &Tower, flat: &[f64]) -> Result<Self> {
        let mut grads = TowerGrads::zeros_like(tower);
        if flat.len() != grads.param_count() {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, tower has {} parameters",
                flat.len(),
                grads.param_count()
            )));
        }
        let mut off = 0;
        for l in &mut grads.layers {
            let n = l.d_weights.rows() * l.d_weights.cols();
            l.d_weights.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
            if let Some(b) = &mut l.d_bias {
                let m = b.len();
                b.copy_from_slice(&flat[off..off + m]);
                off += m;
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_input(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng::rng_from(seed, &[99]);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Scalar-loop oracle for a whole tower forward pass.
    fn forward_oracle(tower: &Tower, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (k, layer) in tower.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.out_dim()];
            for i in 0..layer.out_dim() {
                let mut z = 0.0;
                for j in 0..layer.in_dim() {
                    z += layer.weights.get(i, j) * cur[j];
                }
                if let Some(b) = &layer.bias {
                    z += b[i];
                }
                next[i] = if k == 0 { z } else { z.tanh() };
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let tower = Tower::new(&[9, 7, 5, 3], 11).unwrap();
        let x = dense_input(9, 5);
        let (y, _) = tower.forward(Input::Dense(&x)).unwrap();
        let expect = forward_oracle(&tower, &x);
        for (a, b) in y.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn sparse_and_dense_inputs_agree() {
        let tower = Tower::new(&[40, 8, 4], 3).unwrap();
        let sv = SparseVec::from_pairs(40, vec![(3, 1.5), (17, -0.5), (39, 2.0)]).unwrap();
        let dense = sv.to_dense();
        let (ys, _) = tower.forward(Input::Sparse(&sv)).unwrap();
        let (yd, _) = tower.forward(Input::Dense(&dense)).unwrap();
        assert_eq!(ys, yd);
    }

    #[test]
    fn first_layer_is_linear_without_bias() {
        let tower = Tower::new(&[4, 3, 2], 0).unwrap();
        assert!(tower.layers[0].bias.is_none());
        assert_eq!(tower.layers[0].activation, Activation::Identity);
        assert!(tower.layers[1].bias.is_some());
        assert_eq!(tower.layers[1].activation, Activation::Tanh);
        // doubling the input doubles the first-layer output
        let x = dense_input(4, 2);
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let l1 = tower.layers[0].forward(Input::Dense(&x));
        let l1_2 = tower.layers[0].forward(Input::Dense(&x2));
        for (a, b) in l1.iter().zip(&l1_2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn glorot_bounds_hold() {
        let tower = Tower::new(&[100, 50], 1).unwrap();
        let bound = (6.0 / 150.0f64).sqrt();
        for &w in tower.layers[0].weights.as_slice() {
            assert!(w.abs() < bound);
        }
        // not all identical
        let s = tower.layers[0].weights.as_slice();
        assert!(s.iter().any(|&w| (w - s[0]).abs() > 1e-12));
    }

    #[test]
    fn input_dim_mismatch_is_an_error() {
        let tower = Tower::new(&[5, 3], 0).unwrap();
        let x = vec![0.0; 6];
        assert!(matches!(tower.forward(Input::Dense(&x)), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut tower = Tower::new(&[6, 5, 4, 3], 17).unwrap();
        let x = dense_input(6, 23);
        // scalar loss: L = sum_i c_i * y_i
        let c = [0.3, -1.1, 0.7];
        let (y, cache) = tower.forward(Input::Dense(&x)).unwrap();
        let loss = |y: &[f64]| -> f64 { y.iter().zip(&c).map(|(a, b)| a * b).sum() };
        let base = loss(&y);
        assert!(base.is_finite());
        let grads = tower.backward(&cache, &c);

        let eps = 1e-6;
        for k in 0..tower.layers.len() {
            for flat_idx in 0..tower.layers[k].weights.as_slice().len() {
                let orig = tower.layers[k].weights.as_slice()[flat_idx];
                tower.layers[k].weights.as_mut_slice()[flat_idx] = orig + eps;
                let (yp, _) = tower.forward(Input::Dense(&x)).unwrap();
                tower.layers[k].weights.as_mut_slice()[flat_idx] = orig - eps;
                let (ym, _) = tower.forward(Input::Dense(&x)).unwrap();
                tower.layers[k].weights.as_mut_slice()[flat_idx] = orig;
                let num = (loss(&yp) - loss(&ym)) / (2.0 * eps);
                let ana = grads.layers[k].d_weights.as_slice()[flat_idx];
                let denom = num.abs().max(ana.abs()).max(1e-8);
                assert!(
                    (num - ana).abs() / denom < 1e-5,
                    "layer {k} w[{flat_idx}]: fd {num} vs analytic {ana}"
                );
            }
            if tower.layers[k].bias.is_some() {
                for bi in 0..tower.layers[k].bias.as_ref().unwrap().len() {
                    let orig = tower.layers[k].bias.as_ref().unwrap()[bi];
                    tower.layers[k].bias.as_mut().unwrap()[bi] = orig + eps;
                    let (yp, _) = tower.forward(Input::Dense(&x)).unwrap();
                    tower.layers[k].bias.as_mut().unwrap()[bi] = orig - eps;
                    let (ym, _) = tower.forward(Input::Dense(&x)).unwrap();
                    tower.layers[k].bias.as_mut().unwrap()[bi] = orig;
                    let num = (loss(&yp) - loss(&ym)) / (2.0 * eps);
                    let ana = grads.layers[k].d_bias.as_ref().unwrap()[bi];
                    let denom = num.abs().max(ana.abs()).max(1e-8);
                    assert!((num - ana).abs() / denom < 1e-5);
                }
            }
        }
    }

    #[test]
    fn sparse_backward_touches_only_active_columns() {
        let tower = Tower::new(&[30, 4, 2], 5).unwrap();
        let sv = SparseVec::from_pairs(30, vec![(2, 1.0), (11, -2.0)]).unwrap();
        let (_, cache) = tower.forward(Input::Sparse(&sv)).unwrap();
        let grads = tower.backward(&cache, &[1.0, -1.0]);
        let g0 = &grads.layers[0].d_weights;
        for i in 0..g0.rows() {
            for j in 0..g0.cols() {
                if j != 2 && j != 11 {
                    assert_eq!(g0.get(i, j), 0.0, "untouched column {j} got gradient");
                }
            }
        }
        assert!(grads.layers[0].d_weights.get(0, 2) != 0.0 || grads.layers[0].d_weights.get(1, 2) != 0.0);
    }

    #[test]
    fn flatten_roundtrip() {
        let tower = Tower::new(&[7, 5, 3], 9).unwrap();
        let mut grads = TowerGrads::zeros_like(&tower);
        let mut rng = rng::rng_from(4, &[1]);
        for l in &mut grads.layers {
            for v in l.d_weights.as_mut_slice() {
                *v = rng.random_range(-2.0..2.0);
            }
            if let Some(b) = &mut l.d_bias {
                for v in b {
                    *v = rng.random_range(-2.0..2.0);
                }
            }
        }
        let flat = grads.flatten();
        assert_eq!(flat.len(), tower.param_count());
        let back = TowerGrads::from_flat(&tower, &flat).unwrap();
        assert_eq!(grads, back);
        assert!(TowerGrads::from_flat(&tower, &flat[1..]).is_err());
    }

    proptest! {
        #[test]
        fn outputs_stay_finite(seed in 0u64..1000, scale in 0.1f64..10.0) {
            let mut tower = Tower::new(&[8, 6, 4], seed).unwrap();
            for l in &mut tower.layers {
                for v in l.weights.as_mut_slice() {
                    *v *= scale / (6.0f64 / 14.0).sqrt();
                }
            }
            let mut r = rng::rng_from(seed, &[7]);
            let x: Vec<f64> = (0..8).map(|_| r.random_range(-10.0..10.0)).collect();
            let (y, _) = tower.forward(Input::Dense(&x)).unwrap();
            prop_assert!(y.iter().all(|v| v.is_finite()));
            // last layer is tanh, so outputs saturate instead of overflowing
            prop_assert!(y.iter().all(|v| v.abs() <= 1.0));
        }

        #[test]
        fn sparse_from_pairs_rejects_bad_input(dim in 1usize..50, i in 0u32..100) {
            let sv = SparseVec::from_pairs(dim, vec![(i, 1.0)]);
            if (i as usize) < dim {
                prop_assert!(sv.is_ok());
            } else {
                prop_assert!(sv.is_err());
            }
            prop_assert!(SparseVec::from_pairs(dim.max(2), vec![(0, 1.0), (0, 2.0)]).is_err());
        }
    }
}
