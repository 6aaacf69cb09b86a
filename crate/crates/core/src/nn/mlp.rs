//! Dense feed-forward network with optional per-layer layer normalization.
//!
//! Hidden layer `l` computes `h = act(LN(W x + b))` (LN only where enabled),
//! the output layer computes `y = out_act(W h + b)`. Batches are row-major
//! `(batch, features)` matrices.

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamLayout, ParamVector};
use super::real::{Dual, Real};
use crate::error::{check_dim, Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone, Copy)]
enum Act {
    Relu,
    Tanh,
    Identity,
    Sigmoid,
}

impl Act {
    #[inline]
    fn apply<S: Real>(self, z: S) -> S {
        match self {
            Act::Relu => {
                if z.value() > 0.0 {
                    z
                } else {
                    S::zero()
                }
            }
            Act::Tanh => z.tanh(),
            Act::Identity => z,
            Act::Sigmoid => {
                if z.value() >= 0.0 {
                    S::one() / (S::one() + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (S::one() + e)
                }
            }
        }
    }

    /// Derivative given the activation input `z` and output `y`.
    #[inline]
    fn derivative<S: Real>(self, z: S, y: S) -> S {
        match self {
            Act::Relu => {
                if z.value() > 0.0 {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Act::Tanh => S::one() - y * y,
            Act::Identity => S::one(),
            Act::Sigmoid => y * (S::one() - y),
        }
    }
}

/// Architecture of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
    /// One flag per hidden layer.
    pub layer_norm: Vec<bool>,
}

impl MlpSpec {
    /// ReLU hidden layers, identity output, no layer norm.
    pub fn new(input_dim: usize, hidden_sizes: &[usize], output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_sizes: hidden_sizes.to_vec(),
            output_dim,
            hidden_activation: HiddenActivation::Relu,
            output_activation: OutputActivation::Identity,
            layer_norm: vec![false; hidden_sizes.len()],
        }
    }

    pub fn with_hidden_activation(mut self, a: HiddenActivation) -> Self {
        self.hidden_activation = a;
        self
    }

    pub fn with_output_activation(mut self, a: OutputActivation) -> Self {
        self.output_activation = a;
        self
    }

    /// Enables or disables layer norm on every hidden layer.
    pub fn with_layer_norm(mut self, on: bool) -> Self {
        self.layer_norm = vec![on; self.hidden_sizes.len()];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("network dims must be >= 1".into()));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::Config(
                "hidden_sizes must be non-empty with every width >= 1".into(),
            ));
        }
        check_dim("layer_norm flags", self.hidden_sizes.len(), self.layer_norm.len())
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn layout(&self) -> ParamLayout {
        let mut shapes = Vec::with_capacity(self.hidden_sizes.len() + 1);
        let mut fan_in = self.input_dim;
        for (&w, &ln) in self.hidden_sizes.iter().zip(&self.layer_norm) {
            shapes.push((fan_in, w, ln));
            fan_in = w;
        }
        shapes.push((fan_in, self.output_dim, false));
        ParamLayout::from_layers(&shapes)
    }

    pub fn param_count(&self) -> usize {
        self.layout().len()
    }

    fn activation(&self, layer: usize) -> Act {
        if layer < self.hidden_sizes.len() {
            match self.hidden_activation {
                HiddenActivation::Relu => Act::Relu,
                HiddenActivation::Tanh => Act::Tanh,
            }
        } else {
            match self.output_activation {
                OutputActivation::Identity => Act::Identity,
                OutputActivation::Tanh => Act::Tanh,
                OutputActivation::Sigmoid => Act::Sigmoid,
            }
        }
    }
}

#[derive(Debug, Clone)]
struct NormTrace<S> {
    xhat: Array2<S>,
    inv_std: Array1<S>,
}

#[derive(Debug, Clone)]
struct LayerTrace<S> {
    act_in: Array2<S>,
    norm: Option<NormTrace<S>>,
    output: Array2<S>,
}

#[derive(Debug, Clone)]
struct Trace<S> {
    input: Array2<S>,
    layers: Vec<LayerTrace<S>>,
}

impl<S> Trace<S> {
    fn output(&self) -> &Array2<S> {
        &self.layers.last().expect("at least one layer").output
    }
}

fn weight_view<'a, S>(params: &'a [S], slots: &super::params::LayerSlots) -> ArrayView2<'a, S> {
    ArrayView2::from_shape((slots.fan_out, slots.fan_in), &params[slots.weight.clone()])
        .expect("layout and parameter slice agree")
}

fn standard<S: Clone>(a: Array2<S>) -> Array2<S> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn layer_norm_forward<S: Real>(
    mut z: Array2<S>,
    gain: &[S],
    beta: &[S],
) -> (Array2<S>, NormTrace<S>) {
    let (rows, width) = z.dim();
    let n = S::from_f64(width as f64);
    let eps = S::from_f64(LAYER_NORM_EPS);
    let mut inv_std = Array1::zeros(rows);
    let mut y = Array2::zeros((rows, width));
    let zs = z.as_slice_mut().expect("standard layout");
    let ys = y.as_slice_mut().expect("fresh array is contiguous");
    for (r, (row, out)) in zs.chunks_exact_mut(width).zip(ys.chunks_exact_mut(width)).enumerate() {
        let mean = row.iter().fold(S::zero(), |a, &v| a + v) / n;
        let var = row.iter().fold(S::zero(), |a, &v| {
            let d = v - mean;
            a + d * d
        }) / n;
        let inv = S::one() / (var + eps).sqrt();
        for (((x, o), &g), &b) in row.iter_mut().zip(out.iter_mut()).zip(gain).zip(beta) {
            *x = (*x - mean) * inv;
            *o = g * *x + b;
        }
        inv_std[r] = inv;
    }
    (y, NormTrace { xhat: z, inv_std })
}

fn forward_generic<S: Real>(
    spec: &MlpSpec,
    layout: &ParamLayout,
    params: &[S],
    input: Array2<S>,
) -> Trace<S> {
    let mut layers: Vec<LayerTrace<S>> = Vec::with_capacity(layout.layers().len());
    for (l, slots) in layout.layers().iter().enumerate() {
        let x = if l == 0 { &input } else { &layers[l - 1].output };
        let mut z = standard(S::matmul(x.view(), weight_view(params, slots).t()));
        let b = &params[slots.bias.clone()];
        let width = b.len();
        for row in z.as_slice_mut().expect("standard layout").chunks_exact_mut(width) {
            for (v, &bb) in row.iter_mut().zip(b) {
                *v = *v + bb;
            }
        }
        let (act_in, norm) = match &slots.norm {
            Some((g, beta)) => {
                let (y, tr) = layer_norm_forward(z, &params[g.clone()], &params[beta.clone()]);
                (y, Some(tr))
            }
            None => (z, None),
        };
        let act = spec.activation(l);
        let output = act_in.mapv(|v| act.apply(v));
        layers.push(LayerTrace {
            act_in,
            norm,
            output,
        });
    }
    Trace { input, layers }
}

/// Reverse pass for `Σ_rows dy · output`. Returns parameter gradients (when
/// requested) and the gradient with respect to the input batch.
fn backward_generic<S: Real>(
    spec: &MlpSpec,
    layout: &ParamLayout,
    params: &[S],
    trace: &Trace<S>,
    dy: Array2<S>,
    want_params: bool,
) -> (Option<Vec<S>>, Array2<S>) {
    let mut grads = want_params.then(|| vec![S::zero(); layout.len()]);
    let mut delta = dy;
    for (l, slots) in layout.layers().iter().enumerate().rev() {
        let tr = &trace.layers[l];
        let act = spec.activation(l);
        Zip::from(&mut delta)
            .and(&tr.act_in)
            .and(&tr.output)
            .for_each(|d, &z, &y| *d = *d * act.derivative(z, y));

        let dz = match (&slots.norm, &tr.norm) {
            (Some((g_range, b_range)), Some(nt)) => {
                let gain = &params[g_range.clone()];
                let (rows, width) = delta.dim();
                let delta = delta.as_standard_layout();
                let ds = delta.as_slice().expect("standard layout");
                let xs = nt.xhat.as_slice().expect("standard layout");
                if let Some(gr) = grads.as_mut() {
                    for (drow, xrow) in ds.chunks_exact(width).zip(xs.chunks_exact(width)) {
                        for (j, (&d, &x)) in drow.iter().zip(xrow).enumerate() {
                            gr[g_range.start + j] = gr[g_range.start + j] + d * x;
                            gr[b_range.start + j] = gr[b_range.start + j] + d;
                        }
                    }
                }
                let n = S::from_f64(width as f64);
                let mut dz = Array2::zeros((rows, width));
                let out = dz.as_slice_mut().expect("fresh array is contiguous");
                for (((drow, xrow), orow), &inv) in ds
                    .chunks_exact(width)
                    .zip(xs.chunks_exact(width))
                    .zip(out.chunks_exact_mut(width))
                    .zip(nt.inv_std.iter())
                {
                    let mut m1 = S::zero();
                    let mut m2 = S::zero();
                    for ((&d, &x), &g) in drow.iter().zip(xrow).zip(gain) {
                        let dx = d * g;
                        m1 = m1 + dx;
                        m2 = m2 + dx * x;
                    }
                    m1 = m1 / n;
                    m2 = m2 / n;
                    for (((o, &d), &x), &g) in orow.iter_mut().zip(drow).zip(xrow).zip(gain) {
                        *o = inv * (d * g - m1 - x * m2);
                    }
                }
                dz
            }
            _ => delta,
        };

        let x = if l == 0 {
            &trace.input
        } else {
            &trace.layers[l - 1].output
        };
        if let Some(gr) = grads.as_mut() {
            let dw = S::matmul(dz.t(), x.view());
            for (g, &v) in gr[slots.weight.clone()].iter_mut().zip(dw.iter()) {
                *g = *g + v;
            }
            for row in dz.rows() {
                for (g, &v) in gr[slots.bias.clone()].iter_mut().zip(row.iter()) {
                    *g = *g + v;
                }
            }
        }
        delta = S::matmul(dz.view(), weight_view(params, slots));
    }
    (grads, delta)
}

/// Activation record of a forward pass, consumed by the matching backward.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stamp: u64,
    layout: Arc<ParamLayout>,
    trace: Trace<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.trace.output()
    }

    pub fn batch_size(&self) -> usize {
        self.trace.input.nrows()
    }
}

/// Serialized form of a network: architecture plus flat parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub spec: MlpSpec,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpNet {
    spec: MlpSpec,
    params: ParamVector,
}

impl MlpNet {
    /// Uniform fan-in initialization (`±1/√fan_in`) for every layer, except
    /// that the output layer is drawn from `±final_range` when given.
    /// Layer-norm gains start at 1 and biases at 0.
    pub fn init<R: Rng + ?Sized>(
        spec: MlpSpec,
        final_range: Option<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let layout = Arc::new(spec.layout());
        let mut params = ParamVector::zeros(layout.clone());
        let last = layout.layers().len() - 1;
        let values = params.values_mut();
        for (l, slots) in layout.layers().iter().enumerate() {
            let range = match final_range {
                Some(r) if l == last => r,
                _ => 1.0 / (slots.fan_in as f64).sqrt(),
            };
            for i in slots.weight.clone().chain(slots.bias.clone()) {
                values[i] = rng.random_range(-range..=range);
            }
            if let Some((g, _)) = &slots.norm {
                values[g.clone()].iter_mut().for_each(|v| *v = 1.0);
            }
        }
        Ok(Self { spec, params })
    }

    /// Every parameter zero, including layer-norm gains.
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layout = Arc::new(spec.layout());
        Ok(Self {
            spec,
            params: ParamVector::zeros(layout),
        })
    }

    pub fn from_values(spec: MlpSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let params = ParamVector::from_values(Arc::new(spec.layout()), values)?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        self.params.check_layout(&params)?;
        self.params = params;
        Ok(())
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        self.params.layout()
    }

    fn check_input(&self, inputs: &Array2<f64>) -> Result<()> {
        check_dim("network input", self.spec.input_dim, inputs.ncols())?;
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    pub fn forward_batch(&self, inputs: Array2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&inputs)?;
        let trace = forward_generic(&self.spec, self.layout(), self.params.values(), inputs);
        let out = trace.output().clone();
        Ok((
            out,
            ForwardCache {
                stamp: self.params.stamp(),
                layout: self.layout().clone(),
                trace,
            },
        ))
    }

    pub fn predict_batch(&self, inputs: Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(&inputs)?;
        let mut trace = forward_generic(&self.spec, self.layout(), self.params.values(), inputs);
        Ok(trace.layers.pop().expect("at least one layer").output)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .expect("row vector shape");
        let (out, cache) = self.forward_batch(x)?;
        Ok((out.into_raw_vec_and_offset().0, cache))
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.0)
    }

    fn check_cache(&self, cache: &ForwardCache, output_grads: &Array2<f64>) -> Result<()> {
        if !Arc::ptr_eq(&cache.layout, self.layout()) && *cache.layout != **self.layout() {
            return Err(Error::Contract("activation cache from a different architecture".into()));
        }
        if cache.stamp != self.params.stamp() {
            return Err(Error::Contract(
                "stale activation cache: parameters changed since forward".into(),
            ));
        }
        if output_grads.dim() != cache.output().dim() {
            return Err(Error::Contract(format!(
                "output gradient shape {:?} does not match output {:?}",
                output_grads.dim(),
                cache.output().dim()
            )));
        }
        Ok(())
    }

    /// Gradients of `Σ_rows output_grads · output` with respect to the
    /// parameters and to the input batch.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        output_grads: &Array2<f64>,
    ) -> Result<(ParamVector, Array2<f64>)> {
        self.check_cache(cache, output_grads)?;
        let (grads, dx) = backward_generic(
            &self.spec,
            self.layout(),
            self.params.values(),
            &cache.trace,
            output_grads.clone(),
            true,
        );
        let grads = ParamVector::from_values(self.layout().clone(), grads.expect("requested"))?;
        Ok((grads, dx))
    }

    /// Input gradient only; skips the parameter-gradient accumulation.
    pub fn input_grad_batch(
        &self,
        cache: &ForwardCache,
        output_grads: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        self.check_cache(cache, output_grads)?;
        let (_, dx) = backward_generic(
            &self.spec,
            self.layout(),
            self.params.values(),
            &cache.trace,
            output_grads.clone(),
            false,
        );
        Ok(dx)
    }

    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<(ParamVector, Vec<f64>)> {
        let dy = Array2::from_shape_vec((1, output_grad.len()), output_grad.to_vec())
            .expect("row vector shape");
        let (g, dx) = self.backward_batch(cache, &dy)?;
        Ok((g, dx.into_raw_vec_and_offset().0))
    }

    /// Directional second derivative along the inputs.
    ///
    /// Returns `(G, H)` with `G = Σ_b ∇_params (w_b · out(x_b))` and
    /// `H = Σ_b d/dε ∇_params (w_b · out(x_b + ε v_b))` at `ε = 0`, where `w_b`
    /// are the rows of `output_weights` and `v_b` the rows of `directions`.
    /// Computed exactly by running the reverse pass on dual numbers.
    pub fn input_directional_param_grad(
        &self,
        inputs: &Array2<f64>,
        directions: &Array2<f64>,
        output_weights: &Array2<f64>,
    ) -> Result<(ParamVector, ParamVector)> {
        self.check_input(inputs)?;
        if directions.dim() != inputs.dim() {
            return Err(Error::Contract("direction batch shape differs from inputs".into()));
        }
        check_dim("output weights", self.spec.output_dim, output_weights.ncols())?;
        check_dim("output weight rows", inputs.nrows(), output_weights.nrows())?;
        let params: Vec<Dual> = self.params.values().iter().map(|&v| Dual::constant(v)).collect();
        let mut x = Array2::zeros(inputs.dim());
        Zip::from(&mut x)
            .and(inputs)
            .and(directions)
            .for_each(|x, &v, &d| *x = Dual::new(v, d));
        let trace = forward_generic(&self.spec, self.layout(), &params, x);
        let dy = output_weights.mapv(Dual::constant);
        let (grads, _) = backward_generic(&self.spec, self.layout(), &params, &trace, dy, true);
        let grads = grads.expect("requested");
        let value = grads.iter().map(|d| d.re).collect();
        let tangent = grads.iter().map(|d| d.eps).collect();
        Ok((
            ParamVector::from_values(self.layout().clone(), value)?,
            ParamVector::from_values(self.layout().clone(), tangent)?,
        ))
    }

    pub fn to_checkpoint(&self) -> NetCheckpoint {
        NetCheckpoint {
            spec: self.spec.clone(),
            values: self.params.values().to_vec(),
        }
    }

    pub fn from_checkpoint(c: NetCheckpoint) -> Result<Self> {
        Self::from_values(c.spec, c.values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_checkpoint())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_checkpoint(serde_json::from_str(&text)?)
    }
}

/// Builds a `(rows, cols)` batch from row slices.
pub fn batch_from_rows<'a, I>(rows: I, cols: usize) -> Array2<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut flat = Vec::new();
    let mut n = 0;
    for r in rows {
        debug_assert_eq!(r.len(), cols);
        flat.extend_from_slice(r);
        n += 1;
    }
    Array2::from_shape_vec((n, cols), flat).expect("rows have equal width")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn parameter_count_formula() {
        let spec = MlpSpec::new(5, &[7, 3], 2).with_layer_norm(true);
        let expected = (5 + 1) * 7 + (7 + 1) * 3 + (3 + 1) * 2 + 2 * 7 + 2 * 3;
        assert_eq!(spec.param_count(), expected);
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(0, &[3], 1).validate().is_err());
        assert!(MlpSpec::new(2, &[], 1).validate().is_err());
        assert!(MlpSpec::new(2, &[3, 0], 1).validate().is_err());
        let mut s = MlpSpec::new(2, &[3], 1);
        s.layer_norm = vec![true, false];
        assert!(s.validate().is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = MlpNet::zeros(MlpSpec::new(3, &[4, 4], 2).with_layer_norm(true)).unwrap();
        let out = net.predict(&[1.0, -2.0, 3.5]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
        let (_, cache) = net.forward(&[1.0, -2.0, 3.5]).unwrap();
        let (_, dx) = net.backward(&cache, &[1.0, 1.0]).unwrap();
        assert_eq!(dx, vec![0.0; 3]);
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let z = Array2::from_elem((2, 5), 3.25);
        let (y, tr) = layer_norm_forward(z, &[1.0; 5], &[0.0; 5]);
        assert!(tr.xhat.iter().all(|v| *v == 0.0));
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_neuron_gradients() {
        // relu(1·x) feeding an identity output with weight w: for x > 0 the
        // network is y = w·x + b.
        let spec = MlpSpec::new(1, &[1], 1);
        let w = 0.7;
        let net = MlpNet::from_values(spec, vec![1.0, 0.0, w, 0.25]).unwrap();
        let (y, cache) = net.forward(&[3.0]).unwrap();
        assert!((y[0] - (w * 3.0 + 0.25)).abs() < 1e-15);
        let (g, dx) = net.backward(&cache, &[1.0]).unwrap();
        assert_eq!(g.values()[2], 3.0);
        assert_eq!(g.values()[3], 1.0);
        assert!((dx[0] - w).abs() < 1e-15);
    }

    #[test]
    fn mismatched_input_and_stale_cache_are_rejected() {
        let mut net = MlpNet::init(MlpSpec::new(2, &[3], 1), None, &mut rng(0)).unwrap();
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        let (_, cache) = net.forward(&[1.0, 2.0]).unwrap();
        net.params_mut().values_mut()[0] += 1.0;
        assert!(matches!(net.backward(&cache, &[1.0]), Err(Error::Contract(_))));
        let other = MlpNet::init(MlpSpec::new(2, &[4], 1), None, &mut rng(0)).unwrap();
        let (_, cache) = other.forward(&[1.0, 2.0]).unwrap();
        assert!(matches!(net.backward(&cache, &[1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn init_respects_ranges() {
        let spec = MlpSpec::new(4, &[16], 2).with_layer_norm(true);
        let net = MlpNet::init(spec, Some(3e-3), &mut rng(1)).unwrap();
        let layers = net.layout().layers().to_vec();
        let v = net.params().values();
        assert!(v[layers[0].weight.clone()].iter().all(|x| x.abs() <= 0.5));
        assert!(v[layers[1].weight.clone()].iter().all(|x| x.abs() <= 3e-3));
        let (g, b) = layers[0].norm.clone().unwrap();
        assert!(v[g].iter().all(|x| *x == 1.0));
        assert!(v[b].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn checkpoint_roundtrip_is_bitwise() {
        let spec = MlpSpec::new(3, &[5, 4], 2)
            .with_layer_norm(true)
            .with_output_activation(OutputActivation::Tanh);
        let net = MlpNet::init(spec, None, &mut rng(9)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        net.save(&path).unwrap();
        let back = MlpNet::load(&path).unwrap();
        assert_eq!(back.spec(), net.spec());
        let a: Vec<u64> = net.params().values().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.params().values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }
}
