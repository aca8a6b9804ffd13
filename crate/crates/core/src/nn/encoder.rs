use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::batch::normalize_embeddings;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            hidden_dims: vec![64, 64],
            embed_dim: 16,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::invalid("layer widths must be at least 1"));
        }
        if self.embed_dim < 2 {
            return Err(Error::invalid(format!("embedding dimension {} < 2", self.embed_dim)));
        }
        Ok(())
    }

    /// `input_dim, hidden…, embed_dim`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden_dims);
        w.push(self.embed_dim);
        w
    }
}

/// `y = x·W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }
}

/// Rectifier MLP: every layer but the last is followed by ReLU.
/// Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
}

impl MlpParams {
    /// He initialization `N(0, 2/fan_in)` for weights, zero biases.
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(format!("bad layer widths {widths:?}")));
        }
        let mut r = rng::substream(seed, &[0x1417]);
        let layers = widths
            .windows(2)
            .map(|w| {
                let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("positive sd");
                DenseLayer {
                    weight: Array2::from_shape_fn((w[0], w[1]), |_| normal.sample(&mut r)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn encoder(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Self::init(&config.widths(), seed)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.fan_in(), l.fan_out()))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").fan_out()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(DenseLayer::fan_out));
        w
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn global_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.iter().chain(l.bias.iter()).map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// 64-bit FNV-1a over the parameter bits; ties caches to parameters.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for l in &self.layers {
            for v in l.weight.iter().chain(l.bias.iter()) {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn add_scaled(&mut self, other: &MlpParams, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(scale, &b.weight);
            a.bias.scaled_add(scale, &b.bias);
        }
    }

    fn same_shape(&self, other: &MlpParams) -> bool {
        self.widths() == other.widths()
    }
}

/// Activations saved by [`mlp_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    /// Post-activation output of every layer; the last entry is the raw output.
    outputs: Vec<Array2<f64>>,
    fingerprint: u64,
}

impl ForwardCache {
    /// The network's raw (pre-normalization) output.
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("at least one layer")
    }

    /// Output of layer `l` (after its ReLU, if any).
    pub fn layer_output(&self, l: usize) -> &Array2<f64> {
        &self.outputs[l]
    }
}

fn check_input(params: &MlpParams, x: &Array2<f64>) -> Result<()> {
    if params.layers.is_empty() {
        return Err(Error::invalid("network has no layers"));
    }
    if x.ncols() != params.input_dim() {
        return Err(Error::invalid(format!(
            "input has {} columns, network expects {}",
            x.ncols(),
            params.input_dim()
        )));
    }
    Ok(())
}

/// Plain MLP forward pass (no normalization).
pub fn mlp_forward(params: &MlpParams, x: &Array2<f64>) -> Result<ForwardCache> {
    check_input(params, x)?;
    let last = params.layers.len() - 1;
    let mut outputs = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        let prev = if l == 0 { x } else { &outputs[l - 1] };
        let mut y = prev.dot(&layer.weight) + &layer.bias;
        if l < last {
            y.mapv_inplace(|v| v.max(0.0));
        }
        outputs.push(y);
    }
    Ok(ForwardCache {
        input: x.clone(),
        outputs,
        fingerprint: params.fingerprint(),
    })
}

/// Encoder forward pass: the cache (whose output is the pre-normalization
/// activation) and the unit-norm embeddings.
pub fn encoder_forward(params: &MlpParams, x: &Array2<f64>) -> Result<(ForwardCache, Array2<f64>)> {
    let cache = mlp_forward(params, x)?;
    let z = normalize_embeddings(cache.output())?;
    Ok((cache, z))
}

/// Reverse-mode pass from `dL/d(output)`; returns parameter gradients.
pub fn mlp_backward(params: &MlpParams, cache: &ForwardCache, grad_output: &Array2<f64>) -> Result<MlpParams> {
    if cache.fingerprint != params.fingerprint() || cache.outputs.len() != params.layers.len() {
        return Err(Error::Contract(
            "forward cache does not belong to these parameters".into(),
        ));
    }
    if grad_output.dim() != cache.output().dim() {
        return Err(Error::Contract(format!(
            "upstream gradient shape {:?} does not match output {:?}",
            grad_output.dim(),
            cache.output().dim()
        )));
    }
    let mut grads = params.zeros_like();
    let mut g = grad_output.clone();
    for l in (0..params.layers.len()).rev() {
        let prev = if l == 0 { &cache.input } else { &cache.outputs[l - 1] };
        grads.layers[l].weight = prev.t().dot(&g);
        grads.layers[l].bias = g.sum_axis(Axis(0));
        if l > 0 {
            let mut back = g.dot(&params.layers[l].weight.t());
            // ReLU derivative: positive outputs pass gradient.
            ndarray::Zip::from(&mut back).and(prev).for_each(|b, &a| {
                if a <= 0.0 {
                    *b = 0.0;
                }
            });
            g = back;
        }
    }
    Ok(grads)
}

/// Parameter gradients from `dL/dz_prenorm`, the gradient with respect to the
/// encoder's raw output (the loss chains through the normalization itself).
pub fn encoder_backward(params: &MlpParams, cache: &ForwardCache, grad_prenorm: &Array2<f64>) -> Result<MlpParams> {
    mlp_backward(params, cache, grad_prenorm)
}

pub(crate) fn check_same_shape(a: &MlpParams, b: &MlpParams) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "shape mismatch: {:?} vs {:?}",
            a.widths(),
            b.widths()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng as _;

    fn random_input(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::stream(seed);
        Array2::from_shape_fn((n, d), |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_network_is_degenerate() {
        let p = MlpParams::init(&[3, 4, 2], 0).unwrap().zeros_like();
        assert!(matches!(
            encoder_forward(&p, &random_input(5, 3, 1)),
            Err(Error::DegenerateEmbedding { row: 0, .. })
        ));
    }

    #[test]
    fn identity_layer_projects_to_sphere() {
        let p = MlpParams {
            layers: vec![DenseLayer {
                weight: Array2::eye(2),
                bias: Array1::zeros(2),
            }],
        };
        let (_, z) = encoder_forward(&p, &array![[3.0, 4.0]]).unwrap();
        assert!((z[[0, 0]] - 0.6).abs() < 1e-15 && (z[[0, 1]] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let p = MlpParams::encoder(
            &EncoderConfig {
                input_dim: 6,
                hidden_dims: vec![32],
                embed_dim: 4,
            },
            3,
        )
        .unwrap();
        let (_, z) = encoder_forward(&p, &random_input(50, 6, 2)).unwrap();
        for row in z.outer_iter() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-9);
        }
        assert!(mlp_forward(&p, &random_input(3, 5, 0)).is_err());
    }

    /// `L = Σ G ⊙ out` so that `dL/dout = G`.
    fn linear_functional(p: &MlpParams, x: &Array2<f64>, g: &Array2<f64>) -> f64 {
        (mlp_forward(p, x).unwrap().output() * g).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let p = MlpParams::init(&[5, 7, 3], 11).unwrap();
        let x = random_input(9, 5, 12);
        let g = random_input(9, 3, 13);
        let cache = mlp_forward(&p, &x).unwrap();
        let analytic = mlp_backward(&p, &cache, &g).unwrap();
        let h = 1e-6;
        let mut max_err = 0.0f64;
        let mut scale = 0.0f64;
        for l in 0..p.layers.len() {
            for idx in 0..p.layers[l].weight.len() {
                let (i, j) = (idx / p.layers[l].fan_out(), idx % p.layers[l].fan_out());
                let mut up = p.clone();
                let mut down = p.clone();
                up.layers[l].weight[[i, j]] += h;
                down.layers[l].weight[[i, j]] -= h;
                let num = (linear_functional(&up, &x, &g) - linear_functional(&down, &x, &g)) / (2.0 * h);
                let a = analytic.layers[l].weight[[i, j]];
                max_err = max_err.max((a - num).abs());
                scale = scale.max(a.abs());
            }
            for j in 0..p.layers[l].bias.len() {
                let mut up = p.clone();
                let mut down = p.clone();
                up.layers[l].bias[j] += h;
                down.layers[l].bias[j] -= h;
                let num = (linear_functional(&up, &x, &g) - linear_functional(&down, &x, &g)) / (2.0 * h);
                max_err = max_err.max((analytic.layers[l].bias[j] - num).abs());
            }
        }
        assert!(max_err / scale < 1e-4, "{}", max_err / scale);
    }

    #[test]
    fn backward_is_linear_and_zero_preserving() {
        let p = MlpParams::init(&[4, 6, 3], 1).unwrap();
        let x = random_input(7, 4, 2);
        let cache = mlp_forward(&p, &x).unwrap();
        let zero = mlp_backward(&p, &cache, &Array2::zeros((7, 3))).unwrap();
        assert_eq!(zero.global_norm(), 0.0);
        let g1 = random_input(7, 3, 3);
        let g2 = random_input(7, 3, 4);
        let mut sum = mlp_backward(&p, &cache, &g1).unwrap();
        sum.add_scaled(&mlp_backward(&p, &cache, &g2).unwrap(), 1.0);
        let mut diff = mlp_backward(&p, &cache, &(&g1 + &g2)).unwrap();
        diff.add_scaled(&sum, -1.0);
        assert!(diff.global_norm() < 1e-10);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut p = MlpParams::init(&[3, 4, 2], 0).unwrap();
        let x = random_input(4, 3, 1);
        let cache = mlp_forward(&p, &x).unwrap();
        p.layers[0].bias[0] += 1.0;
        assert!(matches!(
            mlp_backward(&p, &cache, &Array2::zeros((4, 2))),
            Err(Error::Contract(_))
        ));
    }
}
