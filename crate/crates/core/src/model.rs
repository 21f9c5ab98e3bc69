//! Fully-connected classifiers in the NTK parameterization.
//!
//! Every weight and bias is drawn from a standard normal; the forward pass
//! multiplies each layer's weights by `weight_scale / sqrt(fan_in)` and its
//! biases by `bias_scale`. Parameters are stored flat, layer by layer, each
//! layer as its row-major `(fan_out, fan_in)` weight matrix followed by the bias.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Erf,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Erf => x.erf(),
        }
    }

    #[inline]
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Erf => T::of(std::f64::consts::FRAC_2_SQRT_PI) * (-x * x).exp(),
        }
    }
}

fn default_bias_scale() -> f64 {
    0.0
}

/// Architecture of a fully-connected classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_widths: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
    pub weight_scale: f64,
    #[serde(default = "default_bias_scale")]
    pub bias_scale: f64,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return invalid("input_dim must be positive");
        }
        if self.num_classes < 2 {
            return invalid("num_classes must be at least 2");
        }
        if self.hidden_widths.contains(&0) {
            return invalid("hidden widths must be positive");
        }
        if !(self.weight_scale > 0.0 && self.weight_scale.is_finite()) {
            return invalid("weight_scale must be positive");
        }
        if !(self.bias_scale >= 0.0 && self.bias_scale.is_finite()) {
            return invalid("bias_scale must be nonnegative");
        }
        Ok(())
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 2);
        dims.push(self.input_dim);
        dims.extend(&self.hidden_widths);
        dims.push(self.num_classes);
        dims
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_widths.len() + 1
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self)
    }

    pub fn num_params(&self) -> usize {
        self.layout().len()
    }
}

/// Where each layer lives inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSlot {
    pub weight_offset: usize,
    pub bias_offset: usize,
    pub fan_out: usize,
    pub fan_in: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    slots: Vec<LayerSlot>,
    len: usize,
}

impl ParamLayout {
    fn new(spec: &NetworkSpec) -> Self {
        let dims = spec.dims();
        let mut slots = Vec::with_capacity(dims.len() - 1);
        let mut offset = 0;
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            slots.push(LayerSlot {
                weight_offset: offset,
                bias_offset: offset + fan_in * fan_out,
                fan_out,
                fan_in,
            });
            offset += fan_in * fan_out + fan_out;
        }
        Self { slots, len: offset }
    }

    pub fn slots(&self) -> &[LayerSlot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Weights and bias of one layer in unpacked form.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

/// Flat parameter vector together with its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector<T> {
    values: Vec<T>,
    layout: ParamLayout,
}

impl<T: Scalar> ParamVector<T> {
    pub fn new(spec: &NetworkSpec, values: Vec<T>) -> Result<Self> {
        let layout = spec.layout();
        if values.len() != layout.len() {
            return shape_err(format!(
                "{} parameters for a network with {}",
                values.len(),
                layout.len()
            ));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        let layout = spec.layout();
        Self {
            values: vec![T::zero(); layout.len()],
            layout,
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn unpack(&self) -> Vec<LayerParams<T>> {
        self.layout
            .slots
            .iter()
            .map(|s| LayerParams {
                weights: Matrix::new(
                    s.fan_out,
                    s.fan_in,
                    self.values[s.weight_offset..s.bias_offset].to_vec(),
                )
                .expect("layout sizes"),
                bias: self.values[s.bias_offset..s.bias_offset + s.fan_out].to_vec(),
            })
            .collect()
    }

    pub fn pack(spec: &NetworkSpec, layers: &[LayerParams<T>]) -> Result<Self> {
        let layout = spec.layout();
        if layers.len() != layout.slots.len() {
            return shape_err(format!(
                "{} layers for a network with {}",
                layers.len(),
                layout.slots.len()
            ));
        }
        let mut values = Vec::with_capacity(layout.len());
        for (slot, layer) in layout.slots.iter().zip(layers) {
            if layer.weights.shape() != (slot.fan_out, slot.fan_in) || layer.bias.len() != slot.fan_out {
                return shape_err("layer shape does not match the network spec");
            }
            values.extend_from_slice(layer.weights.as_slice());
            values.extend_from_slice(&layer.bias);
        }
        Ok(Self { values, layout })
    }
}

/// Seeded ChaCha stream; `stream` separates independent draws made from one seed.
pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn standard_normals<T: Scalar>(rng: &mut ChaCha8Rng, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

/// `n` standard normals from random stream `stream` of `seed`.
pub fn gaussian_vector<T: Scalar>(seed: u64, stream: u64, n: usize) -> Vec<T> {
    standard_normals(&mut rng_for(seed, stream), n)
}

/// I.i.d. standard-normal parameters; identical for identical `(spec, seed)`.
pub fn init_params<T: Scalar>(spec: &NetworkSpec, seed: u64) -> ParamVector<T> {
    let layout = spec.layout();
    let mut rng = rng_for(seed, 0);
    ParamVector {
        values: standard_normals(&mut rng, layout.len()),
        layout,
    }
}

/// `Z = beta z` elementwise.
pub fn scale_logits<T: Scalar>(z: &Matrix<T>, beta: T) -> Result<Matrix<T>> {
    if !(beta > T::zero()) {
        return invalid("beta must be positive");
    }
    Ok(z.scale(beta))
}

/// A differentiable classifier with a flat trainable parameter vector.
pub trait Model<T: Scalar>: Send + Sync {
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn num_params(&self) -> usize;

    /// Logits `z` for every row of `x` (`M x K`).
    fn forward(&self, params: &[T], x: &Matrix<T>) -> Result<Matrix<T>>;

    /// `dz / dtheta` at a single input (`K x P`).
    fn jacobian(&self, params: &[T], x: &[T]) -> Result<Matrix<T>>;

    /// `sum_m J(x_m)^T c_m` for a cotangent matrix `c` (`M x K`).
    fn vjp(&self, params: &[T], x: &Matrix<T>, cotangent: &Matrix<T>) -> Result<Vec<T>>;
}

/// Stacked Jacobian over a batch, `(M K) x P` with row index `m * K + i`.
pub fn batch_jacobian<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    params: &[T],
    x: &Matrix<T>,
) -> Result<Matrix<T>> {
    let k = model.num_classes();
    let p = model.num_params();
    let blocks: Vec<Matrix<T>> = (0..x.rows())
        .into_par_iter()
        .map(|m| model.jacobian(params, x.row(m)))
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(x.rows() * k * p);
    for b in blocks {
        data.extend(b.into_vec());
    }
    Matrix::new(x.rows() * k, p, data)
}

/// Multilayer perceptron described by a [`NetworkSpec`].
#[derive(Clone, Debug)]
pub struct Mlp {
    spec: NetworkSpec,
    layout: ParamLayout,
}

struct Tape<T> {
    /// Post-activation inputs to each layer; `acts[0]` is the input itself.
    acts: Vec<Vec<T>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<T>>,
}

impl Mlp {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        Ok(Self { spec, layout })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    fn check_params<T>(&self, params: &[T]) -> Result<()> {
        if params.len() != self.layout.len() {
            return shape_err(format!(
                "{} parameters for a network with {}",
                params.len(),
                self.layout.len()
            ));
        }
        Ok(())
    }

    fn check_input<T>(&self, x: &[T]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return shape_err(format!(
                "input of length {} for input_dim {}",
                x.len(),
                self.spec.input_dim
            ));
        }
        Ok(())
    }

    fn run<T: Scalar>(&self, params: &[T], x: &[T], tape: Option<&mut Tape<T>>) -> Vec<T> {
        let sw = T::of(self.spec.weight_scale);
        let sb = T::of(self.spec.bias_scale);
        let last = self.layout.slots.len() - 1;
        let mut a = x.to_vec();
        let mut tape = tape;
        for (l, slot) in self.layout.slots.iter().enumerate() {
            let scale = sw / T::of_usize(slot.fan_in).sqrt();
            let w = &params[slot.weight_offset..slot.bias_offset];
            let b = &params[slot.bias_offset..slot.bias_offset + slot.fan_out];
            let h: Vec<T> = (0..slot.fan_out)
                .map(|r| {
                    let row = &w[r * slot.fan_in..(r + 1) * slot.fan_in];
                    scale * crate::linalg::dot(row, &a) + sb * b[r]
                })
                .collect();
            if let Some(t) = tape.as_deref_mut() {
                t.acts.push(std::mem::take(&mut a));
            }
            if l == last {
                return h;
            }
            a = h.iter().map(|&v| self.spec.activation.apply(v)).collect();
            if let Some(t) = tape.as_deref_mut() {
                t.pre.push(h);
            }
        }
        unreachable!("network has at least one layer")
    }

    /// Reverse pass for a batch of `rows` output cotangents at once.
    /// `seed` is `rows x K`; the gradient of each row is accumulated into `out`
    /// (`rows x P`, row-major).
    fn backward<T: Scalar>(&self, params: &[T], tape: &Tape<T>, seed: Matrix<T>, out: &mut [T]) {
        let sw = T::of(self.spec.weight_scale);
        let sb = T::of(self.spec.bias_scale);
        let p = self.layout.len();
        let rows = seed.rows();
        let mut g = seed;
        for l in (0..self.layout.slots.len()).rev() {
            let slot = self.layout.slots[l];
            let scale = sw / T::of_usize(slot.fan_in).sqrt();
            let a = &tape.acts[l];
            for i in 0..rows {
                let out_row = &mut out[i * p..(i + 1) * p];
                let gi = g.row(i);
                for r in 0..slot.fan_out {
                    let gr = gi[r];
                    if gr == T::zero() {
                        continue;
                    }
                    let coef = gr * scale;
                    let dst = &mut out_row
                        [slot.weight_offset + r * slot.fan_in..slot.weight_offset + (r + 1) * slot.fan_in];
                    for (d, &ac) in dst.iter_mut().zip(a) {
                        *d += coef * ac;
                    }
                    out_row[slot.bias_offset + r] += gr * sb;
                }
            }
            if l == 0 {
                break;
            }
            let w = &params[slot.weight_offset..slot.bias_offset];
            let pre = &tape.pre[l - 1];
            let mut next = Matrix::zeros(rows, slot.fan_in);
            for i in 0..rows {
                let gi = g.row(i);
                let ni = next.row_mut(i);
                for r in 0..slot.fan_out {
                    let gr = gi[r];
                    if gr == T::zero() {
                        continue;
                    }
                    let coef = gr * scale;
                    for (n, &wv) in ni.iter_mut().zip(&w[r * slot.fan_in..(r + 1) * slot.fan_in]) {
                        *n += coef * wv;
                    }
                }
                for (n, &h) in ni.iter_mut().zip(pre) {
                    *n *= self.spec.activation.derivative(h);
                }
            }
            g = next;
        }
    }
}

impl<T: Scalar> Model<T> for Mlp {
    fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn num_params(&self) -> usize {
        self.layout.len()
    }

    fn forward(&self, params: &[T], x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_params(params)?;
        if x.cols() != self.spec.input_dim {
            return shape_err(format!(
                "inputs with {} columns for input_dim {}",
                x.cols(),
                self.spec.input_dim
            ));
        }
        let k = self.spec.num_classes;
        let mut data = Vec::with_capacity(x.rows() * k);
        for m in 0..x.rows() {
            data.extend(self.run(params, x.row(m), None));
        }
        Matrix::new(x.rows(), k, data)
    }

    fn jacobian(&self, params: &[T], x: &[T]) -> Result<Matrix<T>> {
        self.check_params(params)?;
        self.check_input(x)?;
        let k = self.spec.num_classes;
        let mut tape = Tape {
            acts: Vec::new(),
            pre: Vec::new(),
        };
        self.run(params, x, Some(&mut tape));
        let mut out = vec![T::zero(); k * self.layout.len()];
        self.backward(params, &tape, Matrix::identity(k), &mut out);
        Matrix::new(k, self.layout.len(), out)
    }

    fn vjp(&self, params: &[T], x: &Matrix<T>, cotangent: &Matrix<T>) -> Result<Vec<T>> {
        self.check_params(params)?;
        if cotangent.shape() != (x.rows(), self.spec.num_classes) {
            return shape_err(format!(
                "cotangent {:?} for {} inputs",
                cotangent.shape(),
                x.rows()
            ));
        }
        let mut grad = vec![T::zero(); self.layout.len()];
        for m in 0..x.rows() {
            self.check_input(x.row(m))?;
            let mut tape = Tape {
                acts: Vec::new(),
                pre: Vec::new(),
            };
            self.run(params, x.row(m), Some(&mut tape));
            let seed = Matrix::new(1, self.spec.num_classes, cotangent.row(m).to_vec())?;
            self.backward(params, &tape, seed, &mut grad);
        }
        Ok(grad)
    }
}

/// Logits of an [`Mlp`] at a typed parameter vector.
pub fn forward<T: Scalar>(spec: &NetworkSpec, params: &ParamVector<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    Mlp::new(spec.clone())?.forward(params.as_slice(), x)
}

/// `dz/dtheta` of an [`Mlp`] at one input (`K x P`).
pub fn jacobian<T: Scalar>(spec: &NetworkSpec, params: &ParamVector<T>, x: &[T]) -> Result<Matrix<T>> {
    Mlp::new(spec.clone())?.jacobian(params.as_slice(), x)
}

/// Two-branch network `z_c = (W_1 h(x, theta_1) + W_2 h(x, theta_2)) / sqrt(2)`
/// whose output weights are correlated with coefficient `c`.
///
/// Both branches share the body at initialization. Only branch 1 is trainable,
/// so the tangent kernel does not depend on `c`, while the initial logit scale
/// obeys `E |z_c|^2 = (1 + c) |z_1|^2`.
#[derive(Clone, Debug)]
pub struct CorrelatedModel<T> {
    mlp: Mlp,
    trainable: ParamVector<T>,
    frozen: ParamVector<T>,
    correlation: f64,
}

impl<T: Scalar> CorrelatedModel<T> {
    pub fn spec(&self) -> &NetworkSpec {
        self.mlp.spec()
    }

    pub fn correlation(&self) -> f64 {
        self.correlation
    }

    /// Initial parameters of the trainable branch.
    pub fn trainable_init(&self) -> &ParamVector<T> {
        &self.trainable
    }

    pub fn frozen_params(&self) -> &ParamVector<T> {
        &self.frozen
    }

    /// Logits of the trainable branch alone at its initial parameters (`z^0`).
    pub fn base_logits(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.mlp.forward(self.trainable.as_slice(), x)
    }
}

/// Builds a [`CorrelatedModel`]; branch 1 is `init_params(spec, seed)`.
pub fn correlated_init<T: Scalar>(spec: &NetworkSpec, seed: u64, c: f64) -> Result<CorrelatedModel<T>> {
    if !(-1.0..=1.0).contains(&c) {
        return invalid(format!("correlation {c} outside [-1, 1]"));
    }
    let mlp = Mlp::new(spec.clone())?;
    let trainable = init_params::<T>(spec, seed);
    let mut frozen = trainable.clone();
    let out = *trainable.layout().slots().last().expect("at least one layer");
    let start = out.weight_offset;
    let end = out.bias_offset + out.fan_out;
    let mut rng = rng_for(seed, 1);
    let fresh: Vec<T> = standard_normals(&mut rng, end - start);
    let ct = T::of(c);
    let st = T::of((1.0 - c * c).max(0.0).sqrt());
    for (dst, (&w1, &wi)) in frozen.as_mut_slice()[start..end]
        .iter_mut()
        .zip(trainable.as_slice()[start..end].iter().zip(&fresh))
    {
        *dst = ct * w1 + st * wi;
    }
    Ok(CorrelatedModel {
        mlp,
        trainable,
        frozen,
        correlation: c,
    })
}

impl<T: Scalar> Model<T> for CorrelatedModel<T> {
    fn input_dim(&self) -> usize {
        self.mlp.spec().input_dim
    }

    fn num_classes(&self) -> usize {
        self.mlp.spec().num_classes
    }

    fn num_params(&self) -> usize {
        self.trainable.len()
    }

    fn forward(&self, params: &[T], x: &Matrix<T>) -> Result<Matrix<T>> {
        let a = self.mlp.forward(params, x)?;
        let b = self.mlp.forward(self.frozen.as_slice(), x)?;
        let inv = T::one() / (T::one() + T::one()).sqrt();
        a.zip_with(&b, |p, q| (p + q) * inv)
    }

    fn jacobian(&self, params: &[T], x: &[T]) -> Result<Matrix<T>> {
        let inv = T::one() / (T::one() + T::one()).sqrt();
        Ok(self.mlp.jacobian(params, x)?.scale(inv))
    }

    fn vjp(&self, params: &[T], x: &Matrix<T>, cotangent: &Matrix<T>) -> Result<Vec<T>> {
        let inv = T::one() / (T::one() + T::one()).sqrt();
        let g = self.mlp.vjp(params, x, cotangent)?;
        Ok(g.into_iter().map(|v| v * inv).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(hidden: Vec<usize>, act: Activation) -> NetworkSpec {
        NetworkSpec {
            input_dim: 3,
            hidden_widths: hidden,
            num_classes: 2,
            activation: act,
            weight_scale: 1.3,
            bias_scale: 0.2,
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = spec(vec![4], Activation::Relu);
        assert!(s.validate().is_ok());
        s.num_classes = 1;
        assert!(s.validate().is_err());
        let mut s = spec(vec![0], Activation::Relu);
        assert!(s.validate().is_err());
        s.hidden_widths = vec![2];
        s.weight_scale = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn spec_json_keys() {
        let json = r#"{"input_dim":4,"hidden_widths":[8],"num_classes":3,"activation":"erf","weight_scale":1.5}"#;
        let s: NetworkSpec = serde_json::from_str(json).unwrap();
        assert_eq!(s.bias_scale, 0.0);
        assert_eq!(s.activation, Activation::Erf);
        let bad = r#"{"input_dim":4,"num_classes":3,"activation":"erf","weight_scale":1.5,"depth":2}"#;
        assert!(serde_json::from_str::<NetworkSpec>(bad).is_err());
    }

    #[test]
    fn param_count_and_layout() {
        let s = spec(vec![4, 5], Activation::Relu);
        // (3*4 + 4) + (4*5 + 5) + (5*2 + 2)
        assert_eq!(s.num_params(), 16 + 25 + 12);
        let slots = s.layout().slots().to_vec();
        assert_eq!(slots[1].weight_offset, 16);
        assert_eq!(slots[2].bias_offset, 16 + 25 + 10);
    }

    #[test]
    fn init_is_deterministic() {
        let s = NetworkSpec {
            input_dim: 2,
            hidden_widths: vec![],
            num_classes: 2,
            activation: Activation::Relu,
            weight_scale: 1.0,
            bias_scale: 0.0,
        };
        assert_eq!(s.num_params(), 6);
        let a = init_params::<f64>(&s, 7);
        let b = init_params::<f64>(&s, 7);
        let c = init_params::<f64>(&s, 8);
        assert_eq!(a, b);
        assert_ne!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn init_moments() {
        let s = NetworkSpec {
            input_dim: 100,
            hidden_widths: vec![200],
            num_classes: 10,
            activation: Activation::Relu,
            weight_scale: 1.0,
            bias_scale: 0.0,
        };
        let p = init_params::<f64>(&s, 3);
        let n = p.len() as f64;
        let mean = p.as_slice().iter().sum::<f64>() / n;
        let var = p.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 4.0 / n.sqrt());
        assert!((var - 1.0).abs() < 0.03);
    }

    #[test]
    fn linear_layer_forward() {
        let s = NetworkSpec {
            input_dim: 3,
            hidden_widths: vec![],
            num_classes: 3,
            activation: Activation::Relu,
            weight_scale: 2.0,
            bias_scale: 0.0,
        };
        let layers = vec![LayerParams {
            weights: Matrix::identity(3),
            bias: vec![5.0; 3],
        }];
        let p = ParamVector::pack(&s, &layers).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap();
        let z = forward(&s, &p, &x).unwrap();
        let c = 2.0 / 3f64.sqrt();
        assert_eq!(z.row(0), &[c, -2.0 * c, 3.0 * c]);
    }

    #[test]
    fn zero_params_zero_logits() {
        let s = NetworkSpec {
            bias_scale: 0.0,
            ..spec(vec![4], Activation::Erf)
        };
        let p = ParamVector::<f64>::zeros(&s);
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(forward(&s, &p, &x).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn pack_unpack_roundtrip() {
        let s = spec(vec![4, 2], Activation::Erf);
        let p = init_params::<f64>(&s, 11);
        let q = ParamVector::pack(&s, &p.unpack()).unwrap();
        assert_eq!(p, q);
        assert!(ParamVector::<f64>::new(&s, vec![0.0; 3]).is_err());
    }

    #[test]
    fn forward_shape_errors() {
        let s = spec(vec![4], Activation::Relu);
        let p = init_params::<f64>(&s, 1);
        assert!(forward(&s, &p, &Matrix::zeros(2, 4)).is_err());
        assert!(jacobian(&s, &p, &[0.0; 2]).is_err());
    }

    #[test]
    fn linear_jacobian_rows_copy_inputs() {
        let s = NetworkSpec {
            input_dim: 2,
            hidden_widths: vec![],
            num_classes: 2,
            activation: Activation::Relu,
            weight_scale: 1.0,
            bias_scale: 0.0,
        };
        let p = init_params::<f64>(&s, 0);
        let x = [0.5, -1.5];
        let j = jacobian(&s, &p, &x).unwrap();
        let c = 1.0 / 2f64.sqrt();
        assert_eq!(j.row(0), &[0.5 * c, -1.5 * c, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(j.row(1), &[0.0, 0.0, 0.5 * c, -1.5 * c, 0.0, 0.0]);
    }

    #[test]
    fn zero_input_jacobian_first_layer() {
        let s = NetworkSpec {
            bias_scale: 0.0,
            ..spec(vec![5], Activation::Erf)
        };
        let p = init_params::<f64>(&s, 4);
        let j = jacobian(&s, &p, &[0.0; 3]).unwrap();
        let first = s.layout().slots()[0];
        for i in 0..2 {
            assert!(j.row(i)[..first.bias_offset].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn vjp_matches_jacobian_transpose() {
        let s = spec(vec![6, 4], Activation::Erf);
        let mlp = Mlp::new(s.clone()).unwrap();
        let p = init_params::<f64>(&s, 5);
        let x = Matrix::from_fn(3, 3, |r, c| (r as f64 - c as f64) * 0.3 + 0.1);
        let cot = Matrix::from_fn(3, 2, |r, c| (r + 2 * c) as f64 * 0.5 - 1.0);
        let g = mlp.vjp(p.as_slice(), &x, &cot).unwrap();
        let j = batch_jacobian(&mlp, p.as_slice(), &x).unwrap();
        let g2 = j.tmatvec(cot.as_slice()).unwrap();
        for (a, b) in g.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn correlated_extremes() {
        let s = spec(vec![16], Activation::Relu);
        let x = Matrix::from_fn(4, 3, |r, c| ((r * 3 + c) as f64).sin());
        let neg = correlated_init::<f64>(&s, 2, -1.0).unwrap();
        let z = neg.forward(neg.trainable_init().as_slice(), &x).unwrap();
        assert_eq!(z.max_abs(), 0.0);

        let pos = correlated_init::<f64>(&s, 2, 1.0).unwrap();
        let z = pos.forward(pos.trainable_init().as_slice(), &x).unwrap();
        let base = pos.base_logits(&x).unwrap();
        let ratio = z.frobenius_norm() / base.frobenius_norm();
        assert!((ratio - 2f64.sqrt()).abs() < 1e-12);

        assert!(correlated_init::<f64>(&s, 2, 1.5).is_err());
    }

    #[test]
    fn correlated_branches_share_body() {
        let s = spec(vec![8, 8], Activation::Erf);
        let m = correlated_init::<f64>(&s, 9, 0.3).unwrap();
        let out = *s.layout().slots().last().unwrap();
        assert_eq!(
            &m.trainable_init().as_slice()[..out.weight_offset],
            &m.frozen_params().as_slice()[..out.weight_offset]
        );
        assert_ne!(
            &m.trainable_init().as_slice()[out.weight_offset..],
            &m.frozen_params().as_slice()[out.weight_offset..]
        );
    }

    #[test]
    fn scale_logits_examples() {
        let z = Matrix::from_rows(&[vec![1.0f64, -2.0]]).unwrap();
        assert_eq!(scale_logits(&z, 1.0).unwrap(), z);
        let z2 = scale_logits(&z, 2.0).unwrap();
        assert!((z2.frobenius_norm() - 2.0 * z.frobenius_norm()).abs() < 1e-15);
        assert_eq!(scale_logits(&Matrix::<f64>::zeros(2, 2), 3.0).unwrap().max_abs(), 0.0);
        assert!(scale_logits(&z, 0.0).is_err());
        assert!(scale_logits(&z, -1.0).is_err());
    }
}
