//! Fully connected networks with mixed-mode differentiation.
//!
//! The forward pass optionally carries second-order jets along one input
//! coordinate. The reverse pass runs over that jet-augmented graph, so any
//! loss built from values, first and second input derivatives can be
//! differentiated with respect to the parameters. This is what PDE residual
//! losses need.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::jet::Jet2;
use crate::error::{Error, Result};

/// Weights (`in × out`), biases and optional adaptive-activation slopes.
///
/// Flat layout, used by optimizers and checkpoints: for each layer the weight
/// matrix in row-major order followed by the bias, then all slopes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub slopes: Option<Vec<f64>>,
}

impl MlpParams {
    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
            + self.slopes.as_ref().map_or(0, |s| s.len())
    }

    pub fn zeros_like(&self) -> Self {
        MlpParams {
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            slopes: self.slopes.as_ref().map(|s| vec![0.0; s.len()]),
        }
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        if let Some(s) = &self.slopes {
            out.extend_from_slice(s);
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        self.flatten_into(&mut v);
        v
    }

    /// Overwrites parameters from the front of `flat`; returns the count consumed.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<usize> {
        let n = self.num_params();
        if flat.len() < n {
            return Err(Error::DimensionMismatch(format!("need {n} parameters, got {}", flat.len())));
        }
        let mut i = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for x in w.iter_mut() {
                *x = flat[i];
                i += 1;
            }
            for x in b.iter_mut() {
                *x = flat[i];
                i += 1;
            }
        }
        if let Some(s) = &mut self.slopes {
            for x in s.iter_mut() {
                *x = flat[i];
                i += 1;
            }
        }
        Ok(i)
    }

    /// Flat index range of layer `l`'s weights and bias.
    pub fn layer_range(&self, l: usize) -> Range<usize> {
        let start: usize = (0..l).map(|k| self.weights[k].len() + self.biases[k].len()).sum();
        start..start + self.weights[l].len() + self.biases[l].len()
    }

    /// Flat index of the slope attached to layer `l`, if that layer has one.
    pub fn slope_index(&self, l: usize) -> Option<usize> {
        let s = self.slopes.as_ref()?;
        if l >= s.len() {
            return None;
        }
        let base: usize = self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>();
        Some(base + l)
    }

    pub fn accumulate(&mut self, other: &MlpParams) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (&mut self.slopes, &other.slopes) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.weights.iter_mut().for_each(|w| *w *= c);
        self.biases.iter_mut().for_each(|b| *b *= c);
        if let Some(s) = &mut self.slopes {
            s.iter_mut().for_each(|x| *x *= c);
        }
    }
}

/// Stacked per-order arrays: `parts[0]` values, `parts[1]` first and
/// `parts[2]` second directional derivatives, each `batch × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchJets {
    pub parts: Vec<Array2<f64>>,
}

impl BatchJets {
    pub fn order(&self) -> usize {
        self.parts.len() - 1
    }

    pub fn value(&self) -> &Array2<f64> {
        &self.parts[0]
    }

    pub fn d1(&self) -> Option<&Array2<f64>> {
        self.parts.get(1)
    }

    pub fn d2(&self) -> Option<&Array2<f64>> {
        self.parts.get(2)
    }

    pub fn zeros(order: usize, rows: usize, cols: usize) -> Self {
        BatchJets { parts: (0..=order).map(|_| Array2::zeros((rows, cols))).collect() }
    }
}

#[derive(Clone, Debug)]
struct LayerTape {
    input: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    // σ', σ'', ... at the scaled pre-activation, as many as the order requires.
    sig: Vec<Array2<f64>>,
}

/// Intermediate values recorded by [`Mlp::forward_jet`] for the reverse pass.
#[derive(Clone, Debug)]
pub struct JetTape {
    order: usize,
    layers: Vec<LayerTape>,
}

impl JetTape {
    pub fn order(&self) -> usize {
        self.order
    }
}

/// A multilayer perceptron with one activation shared by its layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub params: MlpParams,
    pub activation: Activation,
    /// Whether the activation is also applied after the final layer.
    pub activate_output: bool,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases, slopes at `1/n` for adaptive activations.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, activate_output: bool, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least an input and an output size");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit)));
            biases.push(Array1::zeros(fan_out));
        }
        let layers = sizes.len() - 1;
        let activated = if activate_output { layers } else { layers - 1 };
        let slopes = activation.initial_slope().map(|a| vec![a; activated]);
        Mlp { params: MlpParams { weights, biases, slopes }, activation, activate_output }
    }

    pub fn num_layers(&self) -> usize {
        self.params.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.params.weights[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.params.weights[self.num_layers() - 1].ncols()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.params.weights.iter().map(|w| w.ncols()));
        s
    }

    fn is_activated(&self, l: usize) -> bool {
        l + 1 < self.num_layers() || self.activate_output
    }

    fn scale(&self, l: usize) -> f64 {
        match (self.activation.laaf_scale, &self.params.slopes) {
            (Some(n), Some(s)) => n * s[l],
            _ => 1.0,
        }
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Plain forward pass over a batch (`batch × in`).
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let kind = self.activation.kind;
        let mut h = x.to_owned();
        for l in 0..self.num_layers() {
            let mut z = h.dot(&self.params.weights[l]);
            z += &self.params.biases[l];
            if self.is_activated(l) {
                let s = self.scale(l);
                z.mapv_inplace(|v| kind.eval(s * v));
            }
            h = z;
        }
        Ok(h)
    }

    /// Forward pass carrying jets of order `order` (0, 1 or 2) along input coordinate `direction`.
    pub fn forward_jet(&self, x: ArrayView2<f64>, direction: usize, order: usize) -> Result<(BatchJets, JetTape)> {
        self.check_input(&x)?;
        if order > 2 {
            return Err(Error::InvalidArgument(format!("jet order {order} unsupported")));
        }
        if order > 0 && direction >= self.input_dim() {
            return Err(Error::DimensionMismatch(format!("direction {direction} out of range")));
        }
        self.activation.require_order(order)?;
        let kind = self.activation.kind;
        let batch = x.nrows();
        let mut h: Vec<Array2<f64>> = Vec::with_capacity(order + 1);
        h.push(x.to_owned());
        if order >= 1 {
            let mut seed = Array2::zeros((batch, self.input_dim()));
            seed.column_mut(direction).fill(1.0);
            h.push(seed);
        }
        if order >= 2 {
            h.push(Array2::zeros((batch, self.input_dim())));
        }
        let mut layers = Vec::with_capacity(self.num_layers());
        for l in 0..self.num_layers() {
            let w = &self.params.weights[l];
            let mut z: Vec<Array2<f64>> = h.iter().map(|hk| hk.dot(w)).collect();
            z[0] += &self.params.biases[l];
            if !self.is_activated(l) {
                layers.push(LayerTape { input: h, pre: z.clone(), sig: Vec::new() });
                h = z;
                continue;
            }
            let s = self.scale(l);
            let mut sig: Vec<Array2<f64>> = (0..=order).map(|_| Array2::zeros(z[0].raw_dim())).collect();
            let mut a0 = Array2::zeros(z[0].raw_dim());
            Zip::indexed(&z[0]).for_each(|idx, &v| {
                let d = kind.derivatives(s * v);
                a0[idx] = d[0];
                for k in 0..=order {
                    sig[k][idx] = d[k + 1];
                }
            });
            let mut out = vec![a0];
            if order >= 1 {
                out.push(&sig[0] * &z[1] * s);
            }
            if order >= 2 {
                let s1 = &z[1] * s;
                let s2 = &z[2] * s;
                out.push(&sig[1] * &s1 * &s1 + &sig[0] * &s2);
            }
            layers.push(LayerTape { input: h, pre: z, sig });
            h = out;
        }
        Ok((BatchJets { parts: h }, JetTape { order, layers }))
    }

    /// Reverse pass: parameter gradient of `Σ_k <grad.parts[k], output.parts[k]>`.
    ///
    /// `grad` may carry fewer orders than the tape; missing orders are treated as zero.
    pub fn backward(&self, tape: &JetTape, grad: &BatchJets) -> MlpParams {
        let order = tape.order;
        let mut out = self.params.zeros_like();
        let rows = grad.parts[0].nrows();
        let mut g: Vec<Array2<f64>> = (0..=order)
            .map(|k| grad.parts.get(k).cloned().unwrap_or_else(|| Array2::zeros((rows, self.output_dim()))))
            .collect();
        for l in (0..self.num_layers()).rev() {
            let lt = &tape.layers[l];
            let gz: Vec<Array2<f64>> = if self.is_activated(l) {
                let s = self.scale(l);
                let sig = &lt.sig;
                let mut gs0 = &g[0] * &sig[0];
                let mut gs = Vec::with_capacity(order + 1);
                if order >= 1 {
                    let s1 = &lt.pre[1] * s;
                    gs0 = gs0 + &g[1] * &sig[1] * &s1;
                    if order >= 2 {
                        let s2 = &lt.pre[2] * s;
                        gs0 = gs0 + &g[2] * &(&sig[2] * &s1 * &s1 + &sig[1] * &s2);
                        let gs1 = &g[1] * &sig[0] + &g[2] * &sig[1] * &s1 * 2.0;
                        let gs2 = &g[2] * &sig[0];
                        gs.push(gs0);
                        gs.push(gs1);
                        gs.push(gs2);
                    } else {
                        gs.push(gs0);
                        gs.push(&g[1] * &sig[0]);
                    }
                } else {
                    gs.push(gs0);
                }
                if let (Some(n), Some(_)) = (self.activation.laaf_scale, &self.params.slopes) {
                    let ga: f64 = gs.iter().zip(&lt.pre).map(|(a, b)| (a * b).sum()).sum();
                    out.slopes.as_mut().unwrap()[l] = n * ga;
                }
                gs.into_iter().map(|a| a * s).collect()
            } else {
                g
            };
            let mut gw = Array2::zeros(self.params.weights[l].raw_dim());
            for (hk, gk) in lt.input.iter().zip(&gz) {
                gw += &hk.t().dot(gk);
            }
            out.weights[l] = gw;
            out.biases[l] = gz[0].sum_axis(Axis(0));
            if l > 0 {
                let wt = self.params.weights[l].t();
                g = gz.iter().map(|gk| gk.dot(&wt)).collect();
            } else {
                g = Vec::new();
            }
        }
        out
    }
}

/// Feed-forward value at a single input.
pub fn mlp_eval(mlp: &Mlp, x: &[f64]) -> Result<Vec<f64>> {
    let xv = ArrayView2::from_shape((1, x.len()), x).expect("row view");
    Ok(mlp.forward(xv)?.row(0).to_vec())
}

/// Exact parameter gradient of `loss(outputs)` where `loss` returns the loss
/// value and its gradient with respect to the `batch × out` outputs.
pub fn mlp_param_grad<F>(mlp: &Mlp, x: ArrayView2<f64>, loss: F) -> Result<(f64, MlpParams)>
where
    F: FnOnce(&Array2<f64>) -> (f64, Array2<f64>),
{
    let (jets, tape) = mlp.forward_jet(x, 0, 0)?;
    let (value, g_out) = loss(&jets.parts[0]);
    if g_out.dim() != jets.parts[0].dim() {
        return Err(Error::DimensionMismatch("loss gradient shape differs from outputs".into()));
    }
    let grad = mlp.backward(&tape, &BatchJets { parts: vec![g_out] });
    if let Some(i) = grad.to_flat().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient(i));
    }
    Ok((value, grad))
}

/// Value and first two derivatives of every output along input coordinate `direction`.
pub fn mlp_input_jet(mlp: &Mlp, x: &[f64], direction: usize) -> Result<Vec<Jet2>> {
    let xv = ArrayView2::from_shape((1, x.len()), x).expect("row view");
    let (jets, _) = mlp.forward_jet(xv, direction, 2)?;
    Ok((0..mlp.output_dim())
        .map(|j| Jet2::new(jets.parts[0][[0, j]], jets.parts[1][[0, j]], jets.parts[2][[0, j]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nd::activation::ActivationKind;
    use crate::nd::rng::seeded;
    use ndarray::array;

    fn linear(w: f64, b: f64) -> Mlp {
        Mlp {
            params: MlpParams { weights: vec![array![[w]]], biases: vec![array![b]], slopes: None },
            activation: Activation::plain(ActivationKind::Identity),
            activate_output: false,
        }
    }

    #[test]
    fn affine_single_layer() {
        assert_eq!(mlp_eval(&linear(2.0, 1.0), &[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn zero_network_gives_zero() {
        let mut rng = seeded(1);
        for kind in [ActivationKind::Tanh, ActivationKind::Relu, ActivationKind::Silu, ActivationKind::Gelu] {
            let mut net = Mlp::new(&[3, 5, 2], Activation::plain(kind), true, &mut rng);
            let zeros = vec![0.0; net.params.num_params()];
            net.params.load_flat(&zeros).unwrap();
            assert_eq!(mlp_eval(&net, &[0.3, -1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = linear(1.0, 0.0);
        assert!(matches!(mlp_eval(&net, &[1.0, 2.0]), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn hand_chain_rule() {
        // y = w x, loss y^2 at x = 3, w = 1 -> dL/dw = 2 w x^2 = 18.
        let net = linear(1.0, 0.0);
        let x = array![[3.0]];
        let (l, g) = mlp_param_grad(&net, x.view(), |y| (y[[0, 0]].powi(2), y * 2.0)).unwrap();
        assert_eq!(l, 9.0);
        assert_eq!(g.weights[0][[0, 0]], 18.0);
    }

    #[test]
    fn zero_loss_gives_zero_gradient() {
        let mut rng = seeded(3);
        let net = Mlp::new(&[2, 4, 1], Activation::plain(ActivationKind::Tanh), false, &mut rng);
        let x = array![[0.1, 0.2], [0.3, -0.5]];
        let (_, g) = mlp_param_grad(&net, x.view(), |y| (0.0, Array2::zeros(y.raw_dim()))).unwrap();
        assert!(g.to_flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_jet_and_tanh_origin() {
        let j = mlp_input_jet(&linear(3.0, 0.5), &[2.0], 0).unwrap();
        assert_eq!((j[0].d1, j[0].d2), (3.0, 0.0));
        let t = Mlp {
            params: MlpParams { weights: vec![array![[1.0]]], biases: vec![array![0.0]], slopes: None },
            activation: Activation::plain(ActivationKind::Tanh),
            activate_output: true,
        };
        let j = mlp_input_jet(&t, &[0.0], 0).unwrap();
        assert_eq!((j[0].value, j[0].d1, j[0].d2), (0.0, 1.0, 0.0));
    }

    #[test]
    fn relu_rejected_for_second_order() {
        let mut rng = seeded(2);
        let net = Mlp::new(&[1, 4, 1], Activation::plain(ActivationKind::Relu), false, &mut rng);
        assert!(matches!(mlp_input_jet(&net, &[0.2], 0), Err(Error::UnsupportedActivationOrder(_))));
        let x = array![[0.2]];
        assert!(net.forward_jet(x.view(), 0, 1).is_ok());
    }

    #[test]
    fn flat_roundtrip_and_layout() {
        let mut rng = seeded(9);
        let net = Mlp::new(&[2, 3, 4], Activation::adaptive(ActivationKind::Tanh, 2.0), true, &mut rng);
        let flat = net.params.to_flat();
        assert_eq!(flat.len(), 2 * 3 + 3 + 3 * 4 + 4 + 2);
        let mut other = net.params.zeros_like();
        assert_eq!(other.load_flat(&flat).unwrap(), flat.len());
        assert_eq!(other, net.params);
        assert_eq!(net.params.layer_range(1), 9..25);
        assert_eq!(net.params.slope_index(0), Some(25));
        assert_eq!(net.params.slope_index(1), Some(26));
        assert_eq!(net.params.slopes, Some(vec![0.5, 0.5]));
    }
}
