//! Dense multi-layer perceptrons with exact reverse-mode gradients.
//!
//! The network is the shared model `f(x; c)`: the context vector is simply the
//! trailing slice of the input, which is why [`backward`] returns gradients
//! with respect to the input as well as the parameters.
//!
//! All arithmetic is `f64` and every dot product accumulates in a fixed
//! left-to-right order, so repeated evaluations are bitwise identical.

pub mod gradcheck;
mod io;
mod kernel;

pub use io::{read_params, read_params_file, write_params, write_params_file};
pub use kernel::{Network, PairBatch, SharedSuffixScratch, Tape};

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => silu(x),
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => silu_grad(x),
            Activation::Identity => 1.0,
        }
    }
}

/// Logistic function, using the `e^x` form below -20 so nothing overflows.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x < -20.0 {
        let e = x.exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// `x * sigmoid(x)`.
#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Architecture of a fully connected network.
///
/// `layer_sizes[0]` is the input width and the last entry the output width.
/// `activations` holds one entry per hidden layer; the output layer is always
/// linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
}

/// Shape of one affine layer: a `rows x cols` weight matrix (row-major,
/// `rows` = output width) followed by a bias of length `bias_len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub rows: usize,
    pub cols: usize,
    pub bias_len: usize,
}

impl LayerShape {
    pub fn len(&self) -> usize {
        self.rows * self.cols + self.bias_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl MlpSpec {
    /// Network with the same activation on every hidden layer.
    pub fn new(layer_sizes: Vec<usize>, hidden: Activation) -> Result<Self> {
        let hidden_layers = layer_sizes.len().saturating_sub(2);
        Self::with_activations(layer_sizes, vec![hidden; hidden_layers])
    }

    pub fn with_activations(layer_sizes: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        let spec = MlpSpec {
            layer_sizes,
            activations,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::invalid(format!(
                "an MLP needs at least an input and an output size, got {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::invalid(format!(
                "layer sizes must be positive, got {:?}",
                self.layer_sizes
            )));
        }
        ensure_len(
            "hidden activations",
            self.activations.len(),
            self.layer_sizes.len() - 2,
        )
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Activation applied after affine layer `layer`.
    pub fn activation(&self, layer: usize) -> Activation {
        self.activations
            .get(layer)
            .copied()
            .unwrap_or(Activation::Identity)
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        self.layer_sizes
            .windows(2)
            .map(|w| LayerShape {
                rows: w[1],
                cols: w[0],
                bias_len: w[1],
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(LayerShape::len).sum()
    }
}

/// Flat parameter vector plus the per-layer shapes it decomposes into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    values: Vec<f64>,
    shapes: Vec<LayerShape>,
}

impl ParameterSet {
    pub fn new(shapes: Vec<LayerShape>, values: Vec<f64>) -> Result<Self> {
        let want: usize = shapes.iter().map(LayerShape::len).sum();
        ensure_len("parameter values", values.len(), want)?;
        ensure_finite("parameter values", &values)?;
        Ok(ParameterSet { values, shapes })
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        ParameterSet {
            values: vec![0.0; spec.param_count()],
            shapes: spec.layer_shapes(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Offset of layer `i` inside [`values`](Self::values).
    pub fn layer_offset(&self, i: usize) -> usize {
        self.shapes[..i].iter().map(LayerShape::len).sum()
    }

    /// Weight matrix (row-major) and bias of layer `i`.
    pub fn layer(&self, i: usize) -> (&[f64], &[f64]) {
        let s = self.shapes[i];
        let off = self.layer_offset(i);
        let (w, rest) = self.values[off..off + s.len()].split_at(s.rows * s.cols);
        (w, rest)
    }

    pub fn same_shape(&self, other: &ParameterSet) -> bool {
        self.shapes == other.shapes
    }

    pub fn ensure_same_shape(&self, other: &ParameterSet) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "parameter sets have different layer shapes: {:?} vs {:?}",
                self.shapes, other.shapes
            )))
        }
    }

    pub fn ensure_matches(&self, spec: &MlpSpec) -> Result<()> {
        if self.shapes == spec.layer_shapes() {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "parameters {:?} do not match network layers {:?}",
                self.shapes, spec.layer_sizes
            )))
        }
    }
}

/// Gradients of `upstream . f(input)` with respect to parameters and input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub wrt_params: Vec<f64>,
    pub wrt_inputs: Vec<f64>,
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(spec: &MlpSpec, seed: u64) -> ParameterSet {
    let mut rng = rng::stream(seed, "diffnet.init");
    let shapes = spec.layer_shapes();
    let mut values = Vec::with_capacity(spec.param_count());
    for s in &shapes {
        let limit = (6.0 / (s.rows + s.cols) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        values.extend((0..s.rows * s.cols).map(|_| dist.sample(&mut rng)));
        values.extend(std::iter::repeat(0.0).take(s.bias_len));
    }
    ParameterSet { values, shapes }
}

pub fn forward(spec: &MlpSpec, params: &ParameterSet, input: &[f64]) -> Result<Vec<f64>> {
    let net = Network::new(spec, params)?;
    ensure_len("network input", input.len(), spec.input_dim())?;
    let mut tape = Tape::default();
    Ok(net.forward(input, &mut tape).to_vec())
}

pub fn backward(
    spec: &MlpSpec,
    params: &ParameterSet,
    input: &[f64],
    upstream: &[f64],
) -> Result<Gradients> {
    let net = Network::new(spec, params)?;
    ensure_len("network input", input.len(), spec.input_dim())?;
    ensure_len("upstream gradient", upstream.len(), spec.output_dim())?;
    let mut tape = Tape::default();
    net.forward(input, &mut tape);
    let mut wrt_params = vec![0.0; params.len()];
    let mut wrt_inputs = vec![0.0; input.len()];
    net.backward(
        &mut tape,
        upstream,
        Some(&mut wrt_params),
        Some(&mut wrt_inputs),
    );
    Ok(Gradients {
        wrt_params,
        wrt_inputs,
    })
}

/// `(1 - lambda) * p1 + lambda * p2`, element-wise.
pub fn interpolate_params(p1: &ParameterSet, p2: &ParameterSet, lambda: f64) -> Result<ParameterSet> {
    p1.ensure_same_shape(p2)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    // Endpoints are returned verbatim so lambda = 0 / 1 reproduce p1 / p2 bitwise.
    let values = if lambda == 0.0 {
        p1.values.clone()
    } else if lambda == 1.0 {
        p2.values.clone()
    } else {
        p1.values
            .iter()
            .zip(&p2.values)
            .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
            .collect()
    };
    Ok(ParameterSet {
        values,
        shapes: p1.shapes.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(sizes: &[usize]) -> MlpSpec {
        MlpSpec::new(sizes.to_vec(), Activation::Silu).unwrap()
    }

    #[test]
    fn silu_reference_values() {
        assert_eq!(silu(0.0), 0.0);
        assert!((silu(1.0) - 0.731_058_578_6).abs() < 1e-10);
        let v = silu(-30.0);
        assert!(v < 0.0 && v.abs() < 1e-11, "{v}");
        assert!((v - (-30.0f64 * (-30.0f64).exp())).abs() < 1e-20);
        assert!(silu(-800.0).is_finite());
        assert!(silu(800.0).is_finite());
    }

    #[test]
    fn silu_grad_matches_difference_quotient() {
        for &x in &[-25.0, -3.0, -0.5, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((silu_grad(x) - fd).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![3], Activation::Silu).is_err());
        assert!(MlpSpec::new(vec![3, 0, 1], Activation::Silu).is_err());
        assert!(MlpSpec::with_activations(vec![2, 3, 1], vec![]).is_err());
        assert_eq!(net(&[2, 3, 1]).param_count(), 13);
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let spec = net(&[2, 3, 1]);
        let a = init_params(&spec, 11);
        let b = init_params(&spec, 11);
        assert_eq!(a.len(), 13);
        assert_eq!(
            a.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        for i in 0..spec.num_layers() {
            let (w, bias) = a.layer(i);
            assert!(bias.iter().all(|&v| v == 0.0));
            let s = spec.layer_shapes()[i];
            let lim = (6.0 / (s.rows + s.cols) as f64).sqrt();
            assert!(w.iter().all(|v| v.abs() <= lim));
        }
        assert_ne!(a, init_params(&spec, 12));
    }

    #[test]
    fn forward_examples() {
        let spec = net(&[4, 5, 3]);
        let zero = ParameterSet::zeros(&spec);
        assert_eq!(forward(&spec, &zero, &[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0; 3]);

        let lin = MlpSpec::new(vec![2, 1], Activation::Silu).unwrap();
        let p = ParameterSet::new(lin.layer_shapes(), vec![1.0, 1.0, 0.0]).unwrap();
        assert_eq!(forward(&lin, &p, &[3.0, 4.0]).unwrap(), vec![7.0]);

        // 1 -> 1 (SiLU) -> 1 with identity weights: output is silu(1).
        let two = net(&[1, 1, 1]);
        let p = ParameterSet::new(two.layer_shapes(), vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let y = forward(&two, &p, &[1.0]).unwrap();
        assert!((y[0] - 0.731_058_578_6).abs() < 1e-10);
    }

    #[test]
    fn forward_rejects_bad_dims() {
        let spec = net(&[3, 2]);
        let p = init_params(&spec, 0);
        assert!(matches!(forward(&spec, &p, &[1.0]), Err(Error::Shape(_))));
        let other = init_params(&net(&[2, 2]), 0);
        assert!(matches!(forward(&spec, &other, &[1.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(
            backward(&spec, &p, &[1.0; 3], &[1.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn backward_linear_product_rule() {
        let lin = MlpSpec::new(vec![1, 1], Activation::Identity).unwrap();
        let p = ParameterSet::new(lin.layer_shapes(), vec![2.0, 0.0]).unwrap();
        let g = backward(&lin, &p, &[3.0], &[1.0]).unwrap();
        assert_eq!(g.wrt_inputs, vec![2.0]);
        assert_eq!(g.wrt_params, vec![3.0, 1.0]);
    }

    #[test]
    fn backward_zero_upstream_is_zero() {
        let spec = net(&[3, 4, 2]);
        let p = init_params(&spec, 3);
        let g = backward(&spec, &p, &[0.3, -0.2, 0.9], &[0.0, 0.0]).unwrap();
        assert!(g.wrt_params.iter().all(|&v| v == 0.0));
        assert!(g.wrt_inputs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let shapes = vec![LayerShape {
            rows: 1,
            cols: 1,
            bias_len: 0,
        }];
        let a = ParameterSet::new(shapes.clone(), vec![0.0]).unwrap();
        let b = ParameterSet::new(shapes, vec![2.0]).unwrap();
        assert_eq!(interpolate_params(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate_params(&a, &b, 1.0).unwrap(), b);
        assert_eq!(interpolate_params(&a, &b, 0.5).unwrap().values(), &[1.0]);
        assert!(interpolate_params(&a, &b, 1.5).is_err());
        let c = init_params(&net(&[2, 2]), 0);
        assert!(matches!(interpolate_params(&a, &c, 0.5), Err(Error::Shape(_))));
    }

    #[test]
    fn parameter_set_rejects_non_finite() {
        let shapes = vec![LayerShape {
            rows: 1,
            cols: 1,
            bias_len: 1,
        }];
        assert!(ParameterSet::new(shapes.clone(), vec![f64::NAN, 0.0]).is_err());
        assert!(ParameterSet::new(shapes, vec![0.0]).is_err());
    }
}
