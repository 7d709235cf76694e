use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;

use super::NetError;

/// Fully connected Q-network with rectified-linear hidden layers and a
/// linear output head. All weights and biases live in one flat vector;
/// layer `l` stores its `out × in` weight matrix (row-major) followed by
/// its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Activations retained by a batched forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input to layer `l`; the last entry is the output.
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds at least the input")
    }
}

impl QNetwork {
    pub const HIDDEN: [usize; 3] = [32, 32, 32];

    /// Network with the given layer widths and all parameters zero.
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2 && dims.iter().all(|&d| d > 0), "invalid layer dims {dims:?}");
        let count = param_count(dims);
        Self {
            dims: dims.to_vec(),
            params: vec![0.0; count],
        }
    }

    /// Uniform fan-in initialization, U(-1/√fan_in, 1/√fan_in), for
    /// weights and biases.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(dims);
        let mut offset = 0;
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_out * fan_in + fan_out] {
                *p = rng.gen_range(-bound..bound);
            }
            offset += fan_out * fan_in + fan_out;
        }
        net
    }

    /// `obs_dim → 32 → 32 → 32 → num_actions`.
    pub fn standard<R: Rng + ?Sized>(obs_dim: usize, num_actions: usize, rng: &mut R) -> Self {
        let mut dims = vec![obs_dim];
        dims.extend(Self::HIDDEN);
        dims.push(num_actions);
        Self::random(&dims, rng)
    }

    pub fn from_params(dims: &[usize], params: Vec<f64>) -> Result<Self, NetError> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(NetError::Architecture(format!("invalid layer dims {dims:?}")));
        }
        if params.len() != param_count(dims) {
            return Err(NetError::Architecture(format!(
                "{} parameters given for dims {dims:?} ({} expected)",
                params.len(),
                param_count(dims)
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            params,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn same_architecture(&self, other: &QNetwork) -> bool {
        self.dims == other.dims
    }

    fn layer_offset(&self, layer: usize) -> usize {
        (0..layer).map(|l| self.dims[l + 1] * self.dims[l] + self.dims[l + 1]).sum()
    }

    /// Weight matrix (`out × in`) and bias of a layer.
    pub fn layer(&self, layer: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (fan_in, fan_out) = (self.dims[layer], self.dims[layer + 1]);
        let off = self.layer_offset(layer);
        let w = ArrayView2::from_shape((fan_out, fan_in), &self.params[off..off + fan_out * fan_in])
            .expect("layer shape");
        let b = ArrayView1::from(&self.params[off + fan_out * fan_in..off + fan_out * fan_in + fan_out]);
        (w, b)
    }

    /// Mutable weight matrix and bias of a layer.
    pub fn layer_mut(&mut self, layer: usize) -> (ArrayViewMut2<'_, f64>, ArrayViewMut1<'_, f64>) {
        let (fan_in, fan_out) = (self.dims[layer], self.dims[layer + 1]);
        let off = self.layer_offset(layer);
        let (w, rest) = self.params[off..].split_at_mut(fan_out * fan_in);
        (
            ArrayViewMut2::from_shape((fan_out, fan_in), w).expect("layer shape"),
            ArrayViewMut1::from(&mut rest[..fan_out]),
        )
    }

    fn check_input(&self, cols: usize) -> Result<(), NetError> {
        if cols != self.input_dim() {
            Err(NetError::Dimension {
                expected: self.input_dim(),
                got: cols,
            })
        } else {
            Ok(())
        }
    }

    /// Action values for a single state.
    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>, NetError> {
        self.check_input(state.len())?;
        let mut x = state.to_vec();
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(l);
            let mut y = b.to_vec();
            for (o, row) in w.outer_iter().enumerate() {
                let mut acc = 0.0;
                for (wi, xi) in row.iter().zip(&x) {
                    acc += wi * xi;
                }
                y[o] += acc;
                if l < last && y[o] < 0.0 {
                    y[o] = 0.0;
                }
            }
            x = y;
        }
        Ok(x)
    }

    /// Action values for a batch of states (one per row).
    pub fn forward_batch(&self, states: &Array2<f64>) -> Result<Array2<f64>, NetError> {
        Ok(self.forward_cached(states)?.activations.pop().unwrap())
    }

    pub fn forward_cached(&self, states: &Array2<f64>) -> Result<ForwardCache, NetError> {
        self.check_input(states.ncols())?;
        let mut activations = Vec::with_capacity(self.dims.len());
        activations.push(states.to_owned());
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(l);
            let mut z = activations[l].dot(&w.t());
            z += &b;
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    /// Gradient of a loss with respect to all parameters, given the cache
    /// of the forward pass and the gradient of the loss with respect to
    /// the network outputs.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Array2<f64>) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = output_grad.to_owned();
        for l in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let off = self.layer_offset(l);
            let input = &cache.activations[l];
            {
                let (gw, gb) = grad[off..off + fan_out * fan_in + fan_out].split_at_mut(fan_out * fan_in);
                let mut gw = ArrayViewMut2::from_shape((fan_out, fan_in), gw).expect("layer shape");
                gw.assign(&delta.t().dot(input));
                let mut gb = ArrayViewMut1::from(gb);
                gb.assign(&delta.sum_axis(Axis(0)));
            }
            if l > 0 {
                let (w, _) = self.layer(l);
                let mut next = delta.dot(&w);
                ndarray::Zip::from(&mut next).and(input).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = next;
            }
        }
        grad
    }

    /// Hard copy of `source`'s parameters.
    pub fn copy_from(&mut self, source: &QNetwork) {
        assert!(self.same_architecture(source), "architecture mismatch");
        self.params.copy_from_slice(&source.params);
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

pub(crate) fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Copies the online network's parameters into the target network.
pub fn sync_target(net: &QNetwork, target: &mut QNetwork) {
    target.copy_from(net);
}
