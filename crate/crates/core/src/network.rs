//! Minimal deterministic feed-forward network: ReLU hidden layers, an
//! identity output layer, softmax cross-entropy loss, exact
//! backpropagation, and SGD with momentum and decoupled per-layer weight
//! decay.
//!
//! Everything runs in double precision and is bit-reproducible for a fixed
//! (seed, config) pair on a given build. The forward pass retains every
//! layer's preactivations so observers can compute activation masks without
//! touching the training path.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// Only permitted on the final layer (the logits).
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

/// Checks the chaining rules: non-empty, dims >= 1, shapes chain, and
/// identity appears at most once and only as the last layer.
pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::InvalidSpec("layer list is empty".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.input_dim == 0 || s.output_dim == 0 {
            return Err(Error::InvalidSpec(format!(
                "layer {i} has a zero dimension"
            )));
        }
        if s.activation == Activation::Identity && i != specs.len() - 1 {
            return Err(Error::InvalidSpec(format!(
                "identity activation on layer {i}, which is not the last layer"
            )));
        }
    }
    for (i, pair) in specs.windows(2).enumerate() {
        if pair[0].output_dim != pair[1].input_dim {
            return Err(Error::InvalidSpec(format!(
                "layer {i} outputs {} but layer {} expects {}",
                pair[0].output_dim,
                i + 1,
                pair[1].input_dim
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// out x in.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    seed: u64,
}

impl Network {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.nrows()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| LayerSpec {
                input_dim: l.weights.ncols(),
                output_dim: l.weights.nrows(),
                activation: l.activation,
            })
            .collect()
    }

    /// Indices of the layers whose activation patterns are observable
    /// (the ReLU layers).
    pub fn relu_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.activation == Activation::Relu)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Largest absolute elementwise difference across all parameters.
    /// Errors if the architectures differ.
    pub fn max_param_diff(&self, other: &Network) -> Result<f64> {
        if self.specs() != other.specs() {
            return Err(Error::ShapeMismatch(
                "networks have different architectures".into(),
            ));
        }
        let mut max = 0.0f64;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            for (x, y) in a.weights.iter().zip(b.weights.iter()) {
                max = max.max((x - y).abs());
            }
            for (x, y) in a.biases.iter().zip(b.biases.iter()) {
                max = max.max((x - y).abs());
            }
        }
        Ok(max)
    }
}

/// Initializes a network: weights drawn from a zero-mean Gaussian with
/// standard deviation sqrt(2 / input_dim), biases zero. Identical
/// (specs, seed) pairs produce bit-identical parameters.
pub fn init_network(specs: &[LayerSpec], seed: u64) -> Result<Network> {
    validate_specs(specs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(specs.len());
    for spec in specs {
        let std = (2.0 / spec.input_dim as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let n = spec.output_dim * spec.input_dim;
        let weights = Array2::from_shape_vec(
            (spec.output_dim, spec.input_dim),
            (0..n).map(|_| normal.sample(&mut rng)).collect(),
        )
        .expect("shape matches length");
        layers.push(Layer {
            weights,
            biases: Array1::zeros(spec.output_dim),
            activation: spec.activation,
        });
    }
    Ok(Network { layers, seed })
}

/// Builds a network directly from parameters (checkpoint loading, tests).
pub fn network_from_parts(layers: Vec<Layer>, seed: u64) -> Result<Network> {
    let net = Network { layers, seed };
    validate_specs(&net.specs())?;
    for (i, l) in net.layers.iter().enumerate() {
        if l.biases.len() != l.weights.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "layer {i}: {} biases for {} output units",
                l.biases.len(),
                l.weights.nrows()
            )));
        }
        if l.weights.iter().chain(l.biases.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "layer {i} contains non-finite parameters"
            )));
        }
    }
    Ok(net)
}

/// Everything the forward pass saw for one batch: per-layer preactivations
/// and post-activations, plus the input. The final post-activation is the
/// logits matrix.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Array2<f64>,
    pub preactivations: Vec<Array2<f64>>,
    pub postactivations: Vec<Array2<f64>>,
    pub activations: Vec<Activation>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Array2<f64> {
        self.postactivations
            .last()
            .expect("trace has at least one layer")
    }

    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }
}

/// Runs the batch through the network, retaining per-layer preactivations.
///
/// A non-finite preactivation is reported as divergence with the layer
/// index that produced it.
pub fn forward(net: &Network, batch: &Array2<f64>) -> Result<ForwardTrace> {
    if batch.ncols() != net.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "batch has {} features, network expects {}",
            batch.ncols(),
            net.input_dim()
        )));
    }
    for ((row, col), &v) in batch.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: "input batch",
                row,
                col,
            });
        }
    }
    let mut preactivations = Vec::with_capacity(net.num_layers());
    let mut postactivations = Vec::with_capacity(net.num_layers());
    let mut current = batch.clone();
    for (i, layer) in net.layers.iter().enumerate() {
        let pre = current.dot(&layer.weights.t()) + &layer.biases;
        if pre.iter().any(|v| !v.is_finite()) {
            return Err(Error::ForwardDiverged { layer: i });
        }
        let post = match layer.activation {
            Activation::Relu => pre.mapv(|v| v.max(0.0)),
            Activation::Identity => pre.clone(),
        };
        preactivations.push(pre);
        current = post.clone();
        postactivations.push(post);
    }
    Ok(ForwardTrace {
        input: batch.clone(),
        preactivations,
        postactivations,
        activations: net.layers.iter().map(|l| l.activation).collect(),
    })
}

/// Mean softmax cross-entropy with log-sum-exp stabilization (row max
/// subtracted before exponentiation). Also returns the per-row class
/// probabilities for reuse in the backward pass.
pub fn loss_softmax_ce(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (batch, classes) = logits.dim();
    if labels.len() != batch {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for a batch of {}",
            labels.len(),
            batch
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            num_classes: classes,
        });
    }
    let mut probs = Array2::zeros((batch, classes));
    let mut total = 0.0;
    for (b, row) in logits.axis_iter(Axis(0)).enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row.iter() {
            sum += (v - max).exp();
        }
        let lse = max + sum.ln();
        for (c, &v) in row.iter().enumerate() {
            probs[[b, c]] = (v - lse).exp();
        }
        total += lse - row[labels[b]];
    }
    Ok((total / batch as f64, probs))
}

/// Gradients of the mean loss with respect to every weight and bias,
/// shaped like the network's parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Exact backpropagation through the trace. The ReLU subgradient at zero
/// is taken as 0, consistent with the strict mask inequality.
pub fn backward(net: &Network, trace: &ForwardTrace, labels: &[usize]) -> Result<Gradients> {
    let n_layers = net.num_layers();
    if trace.preactivations.len() != n_layers {
        return Err(Error::ShapeMismatch(format!(
            "trace has {} layers, network has {n_layers}",
            trace.preactivations.len()
        )));
    }
    for (i, (pre, layer)) in trace.preactivations.iter().zip(net.layers()).enumerate() {
        if pre.ncols() != layer.weights.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "trace layer {i} has width {}, network layer has {} units",
                pre.ncols(),
                layer.weights.nrows()
            )));
        }
    }
    let batch = trace.batch_size();
    let (_, probs) = loss_softmax_ce(trace.logits(), labels)?;

    // dL/dlogits for the mean loss.
    let mut delta = probs;
    for (b, &label) in labels.iter().enumerate() {
        delta[[b, label]] -= 1.0;
    }
    delta.mapv_inplace(|v| v / batch as f64);

    let mut weights = vec![Array2::zeros((0, 0)); n_layers];
    let mut biases = vec![Array1::zeros(0); n_layers];
    for i in (0..n_layers).rev() {
        let input = if i == 0 {
            &trace.input
        } else {
            &trace.postactivations[i - 1]
        };
        weights[i] = delta.t().dot(input);
        biases[i] = delta.sum_axis(Axis(0));
        if i > 0 {
            let mut upstream = delta.dot(&net.layers[i].weights);
            // gate through the previous layer's ReLU
            upstream.zip_mut_with(&trace.preactivations[i - 1], |g, &pre| {
                if pre <= 0.0 {
                    *g = 0.0;
                }
            });
            delta = upstream;
        }
    }
    Ok(Gradients { weights, biases })
}

/// Optimizer state: learning rate, momentum, one weight-decay coefficient
/// per layer, and velocity buffers matching the parameter shapes.
///
/// The decay is decoupled: it shrinks the weights directly in the update
/// step instead of being added to the gradient, and it never touches
/// biases.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: Vec<f64>,
    vel_weights: Vec<Array2<f64>>,
    vel_biases: Vec<Array1<f64>>,
}

impl OptimizerState {
    /// `weight_decay` must hold one nonnegative coefficient per layer.
    pub fn new(
        net: &Network,
        learning_rate: f64,
        momentum: f64,
        weight_decay: Vec<f64>,
    ) -> Result<Self> {
        if !learning_rate.is_finite() || learning_rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be finite and nonnegative, got {learning_rate}"
            )));
        }
        if !momentum.is_finite() || !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        if weight_decay.len() != net.num_layers() {
            return Err(Error::InvalidConfig(format!(
                "{} weight-decay coefficients for {} layers",
                weight_decay.len(),
                net.num_layers()
            )));
        }
        if let Some(bad) = weight_decay.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weight decay must be finite and nonnegative, got {bad}"
            )));
        }
        Ok(OptimizerState {
            learning_rate,
            momentum,
            weight_decay,
            vel_weights: net
                .layers()
                .iter()
                .map(|l| Array2::zeros(l.weights.raw_dim()))
                .collect(),
            vel_biases: net
                .layers()
                .iter()
                .map(|l| Array1::zeros(l.biases.raw_dim()))
                .collect(),
        })
    }
}

/// One optimizer step:
///
/// ```text
/// v  <- momentum * v + grad
/// w  <- w - lr * v - lr * wd_l * w     (decay applies to weights only)
/// b  <- b - lr * v_b
/// ```
///
/// A non-finite updated parameter is reported as divergence.
pub fn sgd_step(net: &mut Network, grads: &Gradients, opt: &mut OptimizerState) -> Result<()> {
    if grads.weights.len() != net.num_layers() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradient layers for {} network layers",
            grads.weights.len(),
            net.num_layers()
        )));
    }
    let lr = opt.learning_rate;
    let momentum = opt.momentum;
    for (i, layer) in net.layers.iter_mut().enumerate() {
        if grads.weights[i].raw_dim() != layer.weights.raw_dim()
            || grads.biases[i].raw_dim() != layer.biases.raw_dim()
        {
            return Err(Error::ShapeMismatch(format!(
                "gradient shape differs from parameters in layer {i}"
            )));
        }
        let wd = opt.weight_decay[i];
        let vw = &mut opt.vel_weights[i];
        vw.zip_mut_with(&grads.weights[i], |v, &g| *v = momentum * *v + g);
        layer
            .weights
            .zip_mut_with(vw, |w, &v| *w = *w - lr * v - lr * wd * *w);
        let vb = &mut opt.vel_biases[i];
        vb.zip_mut_with(&grads.biases[i], |v, &g| *v = momentum * *v + g);
        layer.biases.zip_mut_with(vb, |b, &v| *b -= lr * v);
        if layer.weights.iter().any(|v| !v.is_finite())
            || layer.biases.iter().any(|v| !v.is_finite())
        {
            return Err(Error::UpdateDiverged { layer: i });
        }
    }
    Ok(())
}

/// Full-pass evaluation without parameter updates: mean loss and accuracy.
/// Argmax ties resolve to the lowest class index.
pub fn evaluate(net: &Network, dataset: &Dataset) -> Result<(f64, f64)> {
    let trace = forward(net, dataset.features())?;
    let (loss, _) = loss_softmax_ce(trace.logits(), dataset.labels())?;
    let logits = trace.logits();
    let mut correct = 0usize;
    for (b, &label) in dataset.labels().iter().enumerate() {
        let row = logits.row(b);
        let mut best = 0usize;
        let mut best_v = row[0];
        for (c, &v) in row.iter().enumerate().skip(1) {
            if v > best_v {
                best = c;
                best_v = v;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok((loss, correct as f64 / dataset.n() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use ndarray::array;

    fn specs(dims: &[usize]) -> Vec<LayerSpec> {
        dims.windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                input_dim: w[0],
                output_dim: w[1],
                activation: if i == dims.len() - 2 {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
            })
            .collect()
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let s = specs(&[4, 8, 3]);
        let a = init_network(&s, 17).unwrap();
        let b = init_network(&s, 17).unwrap();
        for (la, lb) in a.layers().iter().zip(b.layers()) {
            for (x, y) in la.weights.iter().zip(lb.weights.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let c = init_network(&s, 18).unwrap();
        assert!(a.max_param_diff(&c).unwrap() > 0.0);
    }

    #[test]
    fn param_count_example() {
        let net = init_network(&specs(&[4, 8, 3]), 0).unwrap();
        // 8*4 + 8 + 3*8 + 3
        assert_eq!(net.param_count(), 67);
    }

    #[test]
    fn empty_spec_list_is_rejected() {
        assert!(matches!(
            init_network(&[], 0),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn identity_must_be_last() {
        let bad = vec![
            LayerSpec {
                input_dim: 2,
                output_dim: 2,
                activation: Activation::Identity,
            },
            LayerSpec {
                input_dim: 2,
                output_dim: 2,
                activation: Activation::Relu,
            },
        ];
        assert!(init_network(&bad, 0).is_err());
    }

    #[test]
    fn chained_shape_mismatch_is_rejected() {
        let bad = vec![
            LayerSpec {
                input_dim: 2,
                output_dim: 3,
                activation: Activation::Relu,
            },
            LayerSpec {
                input_dim: 4,
                output_dim: 2,
                activation: Activation::Identity,
            },
        ];
        assert!(init_network(&bad, 0).is_err());
    }

    #[test]
    fn zero_network_forwards_zeros() {
        let mut net = init_network(&specs(&[3, 4, 2]), 1).unwrap();
        for l in net.layers_mut() {
            l.weights.fill(0.0);
            l.biases.fill(0.0);
        }
        let batch = array![[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]];
        let trace = forward(&net, &batch).unwrap();
        assert!(trace.preactivations.iter().all(|p| p.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn identity_like_single_layer_passes_input_through() {
        let mut net = init_network(
            &[LayerSpec {
                input_dim: 2,
                output_dim: 2,
                activation: Activation::Identity,
            }],
            0,
        )
        .unwrap();
        net.layers_mut()[0].weights = array![[1.0, 0.0], [0.0, 1.0]];
        net.layers_mut()[0].biases.fill(0.0);
        let batch = array![[3.0, -4.0], [0.25, 0.0]];
        let trace = forward(&net, &batch).unwrap();
        assert_eq!(trace.preactivations[0], batch);
    }

    #[test]
    fn trace_shapes_follow_layer_widths() {
        let net = init_network(&specs(&[3, 5, 7, 2]), 9).unwrap();
        let batch = Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64 * 0.1 - 0.2);
        let trace = forward(&net, &batch).unwrap();
        assert_eq!(
            trace.preactivations.iter().map(|p| p.dim()).collect::<Vec<_>>(),
            vec![(4, 5), (4, 7), (4, 2)]
        );
    }

    #[test]
    fn uniform_logits_loss_is_ln_c() {
        let logits = Array2::zeros((6, 4));
        let labels = vec![0, 1, 2, 3, 0, 1];
        let (loss, probs) = loss_softmax_ce(&logits, &labels).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
        assert!((probs[[0, 0]] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn loss_decreases_with_margin() {
        let labels = vec![0, 0];
        let mut prev = f64::INFINITY;
        for margin in [0.5, 1.0, 2.0, 4.0] {
            let logits = array![[margin, 0.0, 0.0], [margin, 0.0, 0.0]];
            let (loss, _) = loss_softmax_ce(&logits, &labels).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
    }

    #[test]
    fn huge_logit_stays_finite() {
        let logits = array![[1000.0, 0.0], [0.0, 1000.0]];
        let (loss, _) = loss_softmax_ce(&logits, &[0, 1]).unwrap();
        assert!(loss.is_finite());
        assert!(loss.abs() < 1e-9);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let logits = Array2::zeros((2, 3));
        assert!(matches!(
            loss_softmax_ce(&logits, &[0, 3]),
            Err(Error::LabelOutOfRange { label: 3, .. })
        ));
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_first_layer_weight_grads() {
        let net = init_network(&specs(&[3, 4, 2]), 5).unwrap();
        let batch = Array2::zeros((4, 3));
        let trace = forward(&net, &batch).unwrap();
        let grads = backward(&net, &trace, &[0, 1, 0, 1]).unwrap();
        assert!(grads.weights[0].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn dead_unit_gets_zero_incoming_weight_grads() {
        let mut net = init_network(&specs(&[2, 3, 2]), 3).unwrap();
        // force unit 1 of the hidden layer dead for any input in the batch
        net.layers_mut()[0].weights.row_mut(1).fill(0.0);
        net.layers_mut()[0].biases[1] = -10.0;
        let batch = array![[0.3, -0.2], [1.0, 0.7], [-0.4, 0.9], [0.1, 0.1]];
        let trace = forward(&net, &batch).unwrap();
        let grads = backward(&net, &trace, &[0, 1, 1, 0]).unwrap();
        assert!(grads.weights[0].row(1).iter().all(|&g| g == 0.0));
        assert_eq!(grads.biases[0][1], 0.0);
    }

    /// Central finite differences on the mean loss, parameter by parameter.
    ///
    /// Finite differences are only a valid derivative oracle away from the
    /// ReLU kink, so fixtures use randomized biases and are regenerated
    /// until every preactivation clears a margin much larger than the
    /// perturbation can shift it.
    fn finite_diff_check(dims: &[usize], seed: u64, batch_size: usize) -> f64 {
        use rand::Rng;
        let s = specs(dims);
        let mut attempt = 0u64;
        let (net, batch, labels) = loop {
            let fixture_seed = seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9));
            let mut net = init_network(&s, fixture_seed).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(fixture_seed ^ 0xABCD);
            for l in net.layers_mut() {
                l.biases.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            }
            let batch = Array2::from_shape_fn((batch_size, dims[0]), |_| {
                rng.random_range(-1.0..1.0)
            });
            let labels: Vec<usize> = (0..batch_size)
                .map(|_| rng.random_range(0..dims[dims.len() - 1]))
                .collect();
            let trace = forward(&net, &batch).unwrap();
            let min_margin = trace
                .preactivations
                .iter()
                .flat_map(|p| p.iter())
                .fold(f64::INFINITY, |m, &v| m.min(v.abs()));
            if min_margin > 1e-3 {
                break (net, batch, labels);
            }
            attempt += 1;
            assert!(attempt < 100, "no kink-free fixture found");
        };
        let trace = forward(&net, &batch).unwrap();
        let grads = backward(&net, &trace, &labels).unwrap();

        let h = 1e-5;
        let mut max_rel = 0.0f64;
        let loss_at = |n: &Network| {
            let t = forward(n, &batch).unwrap();
            loss_softmax_ce(t.logits(), &labels).unwrap().0
        };
        for li in 0..net.num_layers() {
            let (rows, cols) = net.layers()[li].weights.dim();
            for r in 0..rows {
                for c in 0..cols {
                    let mut plus = net.clone();
                    plus.layers_mut()[li].weights[[r, c]] += h;
                    let mut minus = net.clone();
                    minus.layers_mut()[li].weights[[r, c]] -= h;
                    let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                    let bp = grads.weights[li][[r, c]];
                    let rel = (fd - bp).abs() / fd.abs().max(bp.abs()).max(1e-6);
                    max_rel = max_rel.max(rel);
                }
            }
            for r in 0..rows {
                let mut plus = net.clone();
                plus.layers_mut()[li].biases[r] += h;
                let mut minus = net.clone();
                minus.layers_mut()[li].biases[r] -= h;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let bp = grads.biases[li][r];
                let rel = (fd - bp).abs() / fd.abs().max(bp.abs()).max(1e-6);
                max_rel = max_rel.max(rel);
            }
        }
        max_rel
    }

    #[test]
    fn gradients_match_finite_differences() {
        let max_rel = finite_diff_check(&[3, 6, 4, 2], 11, 8);
        assert!(max_rel <= 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn sgd_decoupled_decay_example() {
        let mut net = init_network(
            &[LayerSpec {
                input_dim: 1,
                output_dim: 1,
                activation: Activation::Identity,
            }],
            0,
        )
        .unwrap();
        net.layers_mut()[0].weights[[0, 0]] = 1.0;
        let mut opt = OptimizerState::new(&net, 0.1, 0.0, vec![0.1]).unwrap();
        let grads = Gradients {
            weights: vec![Array2::zeros((1, 1))],
            biases: vec![Array1::zeros(1)],
        };
        sgd_step(&mut net, &grads, &mut opt).unwrap();
        assert!((net.layers()[0].weights[[0, 0]] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn zero_decay_matches_plain_momentum_sgd() {
        let s = specs(&[2, 3, 2]);
        let mut net_a = init_network(&s, 7).unwrap();
        let mut net_b = net_a.clone();
        let mut opt_a = OptimizerState::new(&net_a, 0.05, 0.9, vec![0.0; 2]).unwrap();
        let batch = array![[0.2, -0.4], [0.9, 0.3], [-0.5, 0.8], [0.1, -0.1]];
        let labels = vec![0, 1, 1, 0];
        for _ in 0..5 {
            let trace = forward(&net_a, &batch).unwrap();
            let grads = backward(&net_a, &trace, &labels).unwrap();
            sgd_step(&mut net_a, &grads, &mut opt_a).unwrap();
        }
        // hand-rolled plain momentum loop
        let mut vel_w: Vec<Array2<f64>> = net_b
            .layers()
            .iter()
            .map(|l| Array2::zeros(l.weights.raw_dim()))
            .collect();
        let mut vel_b: Vec<Array1<f64>> = net_b
            .layers()
            .iter()
            .map(|l| Array1::zeros(l.biases.raw_dim()))
            .collect();
        for _ in 0..5 {
            let trace = forward(&net_b, &batch).unwrap();
            let grads = backward(&net_b, &trace, &labels).unwrap();
            for i in 0..2 {
                vel_w[i] = &vel_w[i] * 0.9 + &grads.weights[i];
                vel_b[i] = &vel_b[i] * 0.9 + &grads.biases[i];
                net_b.layers_mut()[i].weights.zip_mut_with(&vel_w[i], |w, &v| *w -= 0.05 * v);
                net_b.layers_mut()[i].biases.zip_mut_with(&vel_b[i], |b, &v| *b -= 0.05 * v);
            }
        }
        assert_eq!(net_a.max_param_diff(&net_b).unwrap(), 0.0);
    }

    #[test]
    fn pure_decay_shrinks_weights_geometrically() {
        // lr * wd = 0.125 and the start weight are dyadic, so every step is
        // exact and the comparison against the closed form is bit-exact.
        let mut net = init_network(
            &[LayerSpec {
                input_dim: 1,
                output_dim: 1,
                activation: Activation::Identity,
            }],
            0,
        )
        .unwrap();
        net.layers_mut()[0].weights[[0, 0]] = 1.0;
        let mut opt = OptimizerState::new(&net, 0.5, 0.0, vec![0.25]).unwrap();
        let grads = Gradients {
            weights: vec![Array2::zeros((1, 1))],
            biases: vec![Array1::zeros(1)],
        };
        for _ in 0..10 {
            sgd_step(&mut net, &grads, &mut opt).unwrap();
        }
        let expected = 0.875f64.powi(10);
        assert_eq!(net.layers()[0].weights[[0, 0]].to_bits(), expected.to_bits());
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let s = specs(&[2, 4, 2]);
        let run = || {
            let mut net = init_network(&s, 21).unwrap();
            let mut opt = OptimizerState::new(&net, 0.1, 0.9, vec![1e-3; 2]).unwrap();
            let batch = array![[0.2, -0.4], [0.9, 0.3], [-0.5, 0.8], [0.1, -0.1]];
            let labels = vec![0, 1, 1, 0];
            for _ in 0..20 {
                let trace = forward(&net, &batch).unwrap();
                let grads = backward(&net, &trace, &labels).unwrap();
                sgd_step(&mut net, &grads, &mut opt).unwrap();
            }
            net
        };
        assert_eq!(run().max_param_diff(&run()).unwrap(), 0.0);
    }

    #[test]
    fn relu_post_matches_mask_convention() {
        let net = init_network(&specs(&[2, 8, 2]), 13).unwrap();
        let batch = Array2::from_shape_fn((6, 2), |(i, j)| (i as f64 - 2.5) * (j as f64 + 0.5));
        let trace = forward(&net, &batch).unwrap();
        let mask = crate::metric::compute_masks(&trace.preactivations[0]).unwrap();
        for ((r, c), &post) in trace.postactivations[0].indexed_iter() {
            assert_eq!(mask.bit(r, c) == 1, post > 0.0);
        }
    }

    #[test]
    fn evaluate_perfect_classifier() {
        // one identity layer that copies the two features into logits
        let mut net = init_network(
            &[LayerSpec {
                input_dim: 2,
                output_dim: 2,
                activation: Activation::Identity,
            }],
            0,
        )
        .unwrap();
        net.layers_mut()[0].weights = array![[1.0, 0.0], [0.0, 1.0]];
        net.layers_mut()[0].biases.fill(0.0);
        let features = array![[2.0, -1.0], [-1.0, 2.0], [3.0, 0.0], [0.0, 3.0]];
        let ds = Dataset::new(features, vec![0, 1, 0, 1], 2).unwrap();
        let (_, acc) = evaluate(&net, &ds).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn evaluate_random_labels_near_chance() {
        use rand::Rng;
        let net = init_network(&specs(&[4, 16, 4]), 33).unwrap();
        let n = 4000;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let features = Array2::from_shape_fn((n, 4), |_| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let ds = Dataset::new(features, labels, 4).unwrap();
        let (_, acc) = evaluate(&net, &ds).unwrap();
        // p = 1/4, se = sqrt(p(1-p)/n) ~= 0.00685; allow 5 standard errors
        assert!((acc - 0.25).abs() <= 5.0 * (0.25f64 * 0.75 / n as f64).sqrt());
    }

    #[test]
    fn empty_dataset_is_rejected_at_construction() {
        let features = Array2::zeros((0, 2));
        assert!(matches!(
            Dataset::new(features, vec![], 2),
            Err(Error::EmptyDataset)
        ));
    }
}
