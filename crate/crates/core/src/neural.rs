//! Small multilayer perceptrons with per-block input embeddings, a row-softmax
//! head, hand-written reverse-mode gradients and Adam.

use std::io::{Read, Write};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::DecisionRule;

const NET_MAGIC: &[u8; 8] = b"MFTGNET1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Linear => {}
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation) -> Self {
        Self { width, activation }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Identity,
    /// Reshape the output to `rows × cols` and softmax each row.
    RowSoftmax {
        rows: usize,
        cols: usize,
    },
}

/// Network topology. The input is `blocks` concatenated, followed by `passthrough`
/// raw entries; with `embed` set, each block first goes through its own dense layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub blocks: Vec<usize>,
    pub passthrough: usize,
    pub embed: Option<LayerSpec>,
    pub hidden: Vec<LayerSpec>,
    pub output: usize,
    pub output_activation: Activation,
    pub head: Head,
}

impl NetSpec {
    /// Plain chain without block embeddings.
    pub fn mlp(input: usize, hidden: &[LayerSpec], output: usize, output_activation: Activation, head: Head) -> Self {
        Self {
            blocks: vec![input],
            passthrough: 0,
            embed: None,
            hidden: hidden.to_vec(),
            output,
            output_activation,
            head,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.blocks.iter().sum::<usize>() + self.passthrough
    }

    pub fn validate(&self) -> Result<()> {
        let zero_width = self.embed.iter().chain(&self.hidden).any(|l| l.width == 0);
        if self.blocks.is_empty() || self.blocks.contains(&0) || zero_width || self.output == 0 {
            return Err(Error::InvalidArgument("network layers must be non-empty".into()));
        }
        if let Head::RowSoftmax { rows, cols } = self.head {
            if rows * cols != self.output {
                return Err(Error::DimensionMismatch {
                    what: "softmax head entries",
                    expected: self.output,
                    got: rows * cols,
                });
            }
        }
        Ok(())
    }

    fn chain_input(&self) -> usize {
        match self.embed {
            Some(e) => e.width * self.blocks.len() + self.passthrough,
            None => self.input_dim(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    Zero,
    /// Uniform in `±sqrt(1 / fan_in)`.
    FanIn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in × out`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    fn new<R: Rng + ?Sized>(
        fan_in: usize,
        out: usize,
        activation: Activation,
        scheme: InitScheme,
        rng: &mut R,
    ) -> Self {
        let w = match scheme {
            InitScheme::Zero => Array2::zeros((fan_in, out)),
            InitScheme::FanIn => {
                let bound = (1.0 / fan_in as f64).sqrt();
                Array2::from_shape_simple_fn((fan_in, out), || rng.random_range(-bound..=bound))
            }
        };
        Self { w, b: Array1::zeros(out), activation }
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.w) + &self.b;
        self.activation.apply(&mut z);
        z
    }

    /// Gradient w.r.t. the pre-activation, given the output and its upstream gradient.
    fn pre_gradient(&self, out: &Array2<f64>, d_out: &Array2<f64>) -> Array2<f64> {
        let act = self.activation;
        let mut d = d_out.clone();
        d.zip_mut_with(out, |g, &o| *g *= act.derivative_from_output(o));
        d
    }
}

/// Parameters of a network; also used for gradients of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    spec: NetSpec,
    embed: Vec<Dense>,
    /// Hidden layers followed by the output layer.
    layers: Vec<Dense>,
}

/// Batch forward pass intermediates needed by [`NetParams::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    embed_out: Vec<Array2<f64>>,
    /// `acts[0]` feeds `layers[0]`, `acts[l + 1]` is the output of `layers[l]`.
    acts: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn batch(&self) -> usize {
        self.input.nrows()
    }
}

fn softmax_rows_inplace(out: &mut Array2<f64>, rows: usize, cols: usize) {
    for mut sample in out.rows_mut() {
        for r in 0..rows {
            let mut seg = sample.slice_mut(s![r * cols..(r + 1) * cols]);
            let mx = seg.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            seg.mapv_inplace(|v| (v - mx).exp());
            let z = seg.sum();
            seg.mapv_inplace(|v| v / z);
        }
    }
}

impl NetParams {
    pub fn init<R: Rng + ?Sized>(spec: &NetSpec, scheme: InitScheme, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let embed = match spec.embed {
            Some(e) => spec.blocks.iter().map(|&n| Dense::new(n, e.width, e.activation, scheme, rng)).collect(),
            None => Vec::new(),
        };
        let mut layers = Vec::with_capacity(spec.hidden.len() + 1);
        let mut fan_in = spec.chain_input();
        for l in &spec.hidden {
            layers.push(Dense::new(fan_in, l.width, l.activation, scheme, rng));
            fan_in = l.width;
        }
        layers.push(Dense::new(fan_in, spec.output, spec.output_activation, scheme, rng));
        Ok(Self { spec: spec.clone(), embed, layers })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn embed_layers(&self) -> &[Dense] {
        &self.embed
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|v| *v = 0.0);
        z
    }

    pub fn param_count(&self) -> usize {
        self.embed.iter().chain(&self.layers).map(|d| d.w.len() + d.b.len()).sum()
    }

    fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for d in self.embed.iter_mut().chain(self.layers.iter_mut()) {
            d.w.iter_mut().for_each(&mut f);
            d.b.iter_mut().for_each(&mut f);
        }
    }

    /// All parameters in a fixed order: embeddings, then layers; weights before biases.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for d in self.embed.iter().chain(&self.layers) {
            out.extend(d.w.iter());
            out.extend(d.b.iter());
        }
        out
    }

    pub fn set_flat(&mut self, data: &[f64]) -> Result<()> {
        if data.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                what: "flat parameter vector",
                expected: self.param_count(),
                got: data.len(),
            });
        }
        let mut it = data.iter();
        self.for_each_mut(|v| *v = *it.next().expect("length checked"));
        Ok(())
    }

    /// Applies `f(self_entry, other_entry)` elementwise over matching shapes.
    pub fn zip_apply(&mut self, other: &NetParams, mut f: impl FnMut(&mut f64, f64)) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::DimensionMismatch {
                what: "network parameters",
                expected: self.param_count(),
                got: other.param_count(),
            });
        }
        for (a, b) in self.embed.iter_mut().chain(self.layers.iter_mut()).zip(other.embed.iter().chain(&other.layers)) {
            a.w.zip_mut_with(&b.w, |x, &y| f(x, y));
            a.b.zip_mut_with(&b.b, |x, &y| f(x, y));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.embed.iter().chain(&self.layers).all(|d| d.w.iter().chain(d.b.iter()).all(|v| v.is_finite()))
    }

    /// Forward pass over a batch (one sample per row).
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        let n_in = self.spec.input_dim();
        if x.ncols() != n_in {
            return Err(Error::DimensionMismatch { what: "network input", expected: n_in, got: x.ncols() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        let mut embed_out = Vec::with_capacity(self.embed.len());
        let h0 = if self.embed.is_empty() {
            x.to_owned()
        } else {
            let mut parts = Vec::with_capacity(self.embed.len() + 1);
            let mut off = 0;
            for (d, &n) in self.embed.iter().zip(&self.spec.blocks) {
                embed_out.push(d.forward(&x.slice(s![.., off..off + n])));
                off += n;
            }
            parts.extend(embed_out.iter().map(|e| e.view()));
            let pass = x.slice(s![.., off..]);
            if self.spec.passthrough > 0 {
                parts.push(pass);
            }
            concatenate(Axis(1), &parts).expect("matching batch sizes")
        };
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(h0);
        for d in &self.layers {
            let next = d.forward(&acts.last().expect("non-empty").view());
            acts.push(next);
        }
        let mut output = acts.last().expect("non-empty").clone();
        if let Head::RowSoftmax { rows, cols } = self.spec.head {
            softmax_rows_inplace(&mut output, rows, cols);
        }
        Ok(ForwardCache { input: x.to_owned(), embed_out, acts, output })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        Ok(self.forward_batch(view)?.output.into_raw_vec_and_offset().0)
    }

    /// Forward pass read as a decision rule; requires the softmax head.
    pub fn forward_rule(&self, x: &[f64]) -> Result<DecisionRule> {
        let Head::RowSoftmax { rows, cols } = self.spec.head else {
            return Err(Error::InvalidArgument("network has no softmax head".into()));
        };
        Ok(DecisionRule::from_drifted(rows, cols, self.forward(x)?))
    }

    /// Reverse pass from the gradient of a scalar loss w.r.t. the final outputs.
    /// Returns parameter gradients summed over the batch and the input gradient.
    pub fn backward(&self, cache: &ForwardCache, d_output: ArrayView2<f64>) -> Result<(NetParams, Array2<f64>)> {
        if cache.acts.len() != self.layers.len() + 1
            || cache.embed_out.len() != self.embed.len()
            || cache.output.dim() != d_output.dim()
        {
            return Err(Error::MissingCache);
        }
        let mut grads = self.zeros_like();
        let mut d = d_output.to_owned();
        if let Head::RowSoftmax { rows, cols } = self.spec.head {
            for (mut g, p) in d.rows_mut().into_iter().zip(cache.output.rows()) {
                for r in 0..rows {
                    let span = r * cols..(r + 1) * cols;
                    let ps = p.slice(s![span.clone()]);
                    let mut gs = g.slice_mut(s![span]);
                    let inner: f64 = gs.iter().zip(ps.iter()).map(|(a, b)| a * b).sum();
                    gs.zip_mut_with(&ps, |gv, &pv| *gv = pv * (*gv - inner));
                }
            }
        }
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let d_pre = layer.pre_gradient(&cache.acts[l + 1], &d);
            grads.layers[l].w = cache.acts[l].t().dot(&d_pre);
            grads.layers[l].b = d_pre.sum_axis(Axis(0));
            d = d_pre.dot(&layer.w.t());
        }
        if self.embed.is_empty() {
            return Ok((grads, d));
        }
        let batch = cache.input.nrows();
        let mut d_input = Array2::zeros((batch, self.spec.input_dim()));
        let width = self.spec.embed.expect("embedding present").width;
        let mut off = 0;
        for (b, (layer, &n)) in self.embed.iter().zip(&self.spec.blocks).enumerate() {
            let d_blk = d.slice(s![.., b * width..(b + 1) * width]).to_owned();
            let d_pre = layer.pre_gradient(&cache.embed_out[b], &d_blk);
            let x_blk = cache.input.slice(s![.., off..off + n]);
            grads.embed[b].w = x_blk.t().dot(&d_pre);
            grads.embed[b].b = d_pre.sum_axis(Axis(0));
            d_input.slice_mut(s![.., off..off + n]).assign(&d_pre.dot(&layer.w.t()));
            off += n;
        }
        if self.spec.passthrough > 0 {
            let start = width * self.embed.len();
            d_input.slice_mut(s![.., off..]).assign(&d.slice(s![.., start..]));
        }
        Ok((grads, d_input))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let manifest = serde_json::to_vec(&self.spec)?;
        w.write_all(NET_MAGIC)?;
        w.write_all(&(manifest.len() as u64).to_le_bytes())?;
        w.write_all(&manifest)?;
        for v in self.flat() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != NET_MAGIC {
            return Err(Error::Checkpoint("not a network checkpoint".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 24 {
            return Err(Error::Checkpoint("network manifest too large".into()));
        }
        let mut manifest = vec![0u8; len];
        r.read_exact(&mut manifest)?;
        let spec: NetSpec = serde_json::from_slice(&manifest)?;
        let mut net = NetParams::init(
            &spec,
            InitScheme::Zero,
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        )?;
        let mut data = vec![0.0; net.param_count()];
        let mut buf = [0u8; 8];
        for v in &mut data {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        net.set_flat(&data)?;
        if !net.is_finite() {
            return Err(Error::Checkpoint("non-finite network parameter".into()));
        }
        Ok(net)
    }
}

/// Adam with bias correction, over the flat parameter order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(params: &NetParams, learning_rate: f64) -> Self {
        let n = params.param_count();
        Self {
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            learning_rate,
        }
    }

    /// Descends along `grads`.
    pub fn step(&mut self, params: &mut NetParams, grads: &NetParams) -> Result<()> {
        let n = params.param_count();
        if self.first_moment.len() != n || grads.param_count() != n {
            return Err(Error::DimensionMismatch {
                what: "optimizer state",
                expected: n,
                got: self.first_moment.len(),
            });
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.learning_rate);
        let (m, v) = (&mut self.first_moment, &mut self.second_moment);
        let mut k = 0;
        params.zip_apply(grads, |p, g| {
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            *p -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            k += 1;
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(9)
    }

    #[test]
    fn init_schemes() {
        let spec = NetSpec::mlp(200, &[LayerSpec::new(200, Activation::Relu)], 3, Activation::Linear, Head::Identity);
        let z = NetParams::init(&spec, InitScheme::Zero, &mut rng()).unwrap();
        assert!(z.flat().iter().all(|&v| v == 0.0));
        let a = NetParams::init(&spec, InitScheme::FanIn, &mut rng()).unwrap();
        let b = NetParams::init(&spec, InitScheme::FanIn, &mut rng()).unwrap();
        assert_eq!(a, b);
        let bound = (1.0f64 / 200.0).sqrt();
        assert!(a.layers()[0].w.iter().all(|v| v.abs() <= bound));
        assert!(a.layers()[0].b.iter().all(|&v| v == 0.0));
        let mut bad = spec.clone();
        bad.head = Head::RowSoftmax { rows: 2, cols: 2 };
        assert!(NetParams::init(&bad, InitScheme::Zero, &mut rng()).is_err());
    }

    #[test]
    fn zero_softmax_is_uniform_and_identity_passes_through() {
        let spec = NetSpec::mlp(
            4,
            &[LayerSpec::new(3, Activation::Tanh)],
            6,
            Activation::Linear,
            Head::RowSoftmax { rows: 2, cols: 3 },
        );
        let z = NetParams::init(&spec, InitScheme::Zero, &mut rng()).unwrap();
        let rule = z.forward_rule(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(rule.as_slice().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));

        let spec = NetSpec::mlp(3, &[], 3, Activation::Linear, Head::Identity);
        let mut id = NetParams::init(&spec, InitScheme::Zero, &mut rng()).unwrap();
        id.layers_mut()[0].w = Array2::eye(3);
        assert_eq!(id.forward(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
        assert!(id.forward(&[f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn tiny_softmax_matches_hand_computation() {
        // one linear layer 2 -> 2, softmax over a single row
        let spec = NetSpec::mlp(2, &[], 2, Activation::Linear, Head::RowSoftmax { rows: 1, cols: 2 });
        let mut net = NetParams::init(&spec, InitScheme::Zero, &mut rng()).unwrap();
        net.layers_mut()[0].w = ndarray::arr2(&[[1.0, 0.0], [0.0, 2.0]]);
        net.layers_mut()[0].b = ndarray::arr1(&[0.5, 0.0]);
        let out = net.forward(&[1.0, 1.0]).unwrap();
        // logits (1.5, 2.0)
        let p0 = 1.0 / (1.0 + (0.5f64).exp());
        assert!((out[0] - p0).abs() < 1e-15);
        assert!((out[1] - (1.0 - p0)).abs() < 1e-15);
    }

    #[test]
    fn extreme_logits_stay_normalized() {
        let spec = NetSpec::mlp(1, &[], 4, Activation::Linear, Head::RowSoftmax { rows: 2, cols: 2 });
        let mut net = NetParams::init(&spec, InitScheme::Zero, &mut rng()).unwrap();
        net.layers_mut()[0].w = ndarray::arr2(&[[50.0, -50.0, -50.0, 50.0]]);
        let rule = net.forward_rule(&[1.0]).unwrap();
        for x in 0..2 {
            assert!((rule.row(x).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_quadratic_gradient_closed_form() {
        let spec = NetSpec::mlp(3, &[], 2, Activation::Linear, Head::Identity);
        let net = NetParams::init(&spec, InitScheme::FanIn, &mut rng()).unwrap();
        let x = [0.3, -1.0, 2.0];
        let y = [1.0, -0.5];
        let cache = net.forward_batch(ArrayView2::from_shape((1, 3), &x).unwrap()).unwrap();
        let out = cache.output().row(0).to_vec();
        let resid: Vec<f64> = out.iter().zip(&y).map(|(o, t)| o - t).collect();
        let d = Array2::from_shape_vec((1, 2), resid.iter().map(|r| 2.0 * r).collect()).unwrap();
        let (g, _) = net.backward(&cache, d.view()).unwrap();
        for a in 0..3 {
            for b in 0..2 {
                assert!((g.layers()[0].w[[a, b]] - 2.0 * resid[b] * x[a]).abs() < 1e-12);
            }
        }
        // at W x = y the gradient vanishes
        let mut exact = net.zeros_like();
        exact.layers_mut()[0].w = ndarray::arr2(&[[0.0, 0.0], [-1.0, 0.5], [0.0, 0.0]]);
        let cache = exact.forward_batch(ArrayView2::from_shape((1, 3), &x).unwrap()).unwrap();
        let resid = cache.output() - &ndarray::arr2(&[y]);
        let (g, _) = exact.backward(&cache, (resid * 2.0).view()).unwrap();
        assert!(g.flat().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn mismatched_cache_is_rejected() {
        let spec = NetSpec::mlp(2, &[LayerSpec::new(2, Activation::Relu)], 1, Activation::Linear, Head::Identity);
        let net = NetParams::init(&spec, InitScheme::FanIn, &mut rng()).unwrap();
        let cache = net.forward_batch(Array2::zeros((2, 2)).view()).unwrap();
        assert!(matches!(net.backward(&cache, Array2::zeros((3, 1)).view()), Err(Error::MissingCache)));
    }

    #[test]
    fn adam_first_step_and_scalar_trace() {
        let spec = NetSpec::mlp(1, &[], 1, Activation::Linear, Head::Identity);
        let mut net = NetParams::init(&spec, InitScheme::Zero, &mut rng()).unwrap();
        let mut grads = net.zeros_like();
        grads.set_flat(&[1.0, -3.0]).unwrap();
        let mut adam = AdamState::new(&net, 0.1);
        adam.step(&mut net, &grads).unwrap();
        let p = net.flat();
        assert!((p[0] + 0.1).abs() < 1e-8 && (p[1] - 0.1).abs() < 1e-8);

        // scalar oracle for three unit gradients
        let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        let mut net = NetParams::init(&spec, InitScheme::Zero, &mut rng()).unwrap();
        let mut adam = AdamState::new(&net, 0.1);
        grads.set_flat(&[1.0, 1.0]).unwrap();
        for t in 1..=3 {
            m = 0.9 * m + 0.1;
            v = 0.999 * v + 0.001;
            x -= 0.1 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            adam.step(&mut net, &grads).unwrap();
            assert!((net.flat()[0] - x).abs() < 1e-15);
        }

        let before = net.clone();
        let zero = net.zeros_like();
        let mut fresh = AdamState::new(&net, 0.1);
        for _ in 0..5 {
            fresh.step(&mut net, &zero).unwrap();
        }
        assert_eq!(net, before);
        let mut bad = zero.clone();
        bad.set_flat(&[f64::NAN, 0.0]).unwrap();
        assert!(fresh.step(&mut net, &bad).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let spec = NetSpec {
            blocks: vec![3, 2],
            passthrough: 2,
            embed: Some(LayerSpec::new(4, Activation::Tanh)),
            hidden: vec![LayerSpec::new(5, Activation::Relu)],
            output: 1,
            output_activation: Activation::Linear,
            head: Head::Identity,
        };
        let net = NetParams::init(&spec, InitScheme::FanIn, &mut rng()).unwrap();
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        assert_eq!(NetParams::read_from(buf.as_slice()).unwrap(), net);
        buf[0] = b'X';
        assert!(NetParams::read_from(buf.as_slice()).is_err());
    }
}
