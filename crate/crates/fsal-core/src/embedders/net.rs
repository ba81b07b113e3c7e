//! Minimal dense-network plumbing: affine layers with optional rectification,
//! per-sample backprop, and flat parameter views for the optimizer.

use crate::error::{Error, Result};
use crate::numkit::{Matrix, RngStream};

/// One affine layer, optionally followed by `max(0, .)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix, // out x in
    pub bias: Option<Vec<f64>>,
    pub relu: bool,
}

impl DenseLayer {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero bias.
    pub fn init(out_dim: usize, in_dim: usize, bias: bool, relu: bool, rng: &mut RngStream) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let data: Vec<f64> = (0..out_dim * in_dim)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        Self {
            weight: Matrix::new(out_dim, in_dim, data).expect("init shape"),
            bias: bias.then(|| vec![0.0; out_dim]),
            relu,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.matvec(x);
        if let Some(b) = &self.bias {
            for (v, bi) in y.iter_mut().zip(b) {
                *v += bi;
            }
        }
        y
    }
}

/// A stack of dense layers. An empty stack is the identity map.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Net {
    pub layers: Vec<DenseLayer>,
}

/// Per-sample forward cache: layer inputs and pre-activations.
pub struct NetCache {
    inputs: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
}

/// Accumulated parameter gradients, same shapes as the net.
#[derive(Clone, Debug)]
pub struct NetGrads {
    pub layers: Vec<(Matrix, Option<Vec<f64>>)>,
}

impl Net {
    pub fn identity() -> Self {
        Self { layers: Vec::new() }
    }

    /// Single affine map without bias or nonlinearity.
    pub fn linear(out_dim: usize, in_dim: usize, rng: &mut RngStream) -> Self {
        Self {
            layers: vec![DenseLayer::init(out_dim, in_dim, false, false, rng)],
        }
    }

    /// Rectified hidden layers with an affine output layer; all with bias.
    pub fn mlp(dims: &[usize], rng: &mut RngStream) -> Self {
        assert!(dims.len() >= 2, "mlp needs input and output dims");
        let mut layers = Vec::new();
        for w in dims.windows(2).enumerate() {
            let (i, pair) = w;
            let last = i + 2 == dims.len();
            layers.push(DenseLayer::init(pair[1], pair[0], true, !last, rng));
        }
        Self { layers }
    }

    pub fn is_identity(&self) -> bool {
        self.layers.is_empty()
    }

    /// True for a single plain affine map without bias or rectification.
    pub fn is_pure_linear(&self) -> bool {
        self.layers.len() == 1 && self.layers[0].bias.is_none() && !self.layers[0].relu
    }

    pub fn in_dim(&self) -> Option<usize> {
        self.layers.first().map(|l| l.in_dim())
    }

    pub fn out_dim(&self) -> Option<usize> {
        self.layers.last().map(|l| l.out_dim())
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if let Some(d) = self.in_dim() {
            if x.len() != d {
                return Err(Error::Dimension(format!(
                    "input has {} entries, net expects {d}",
                    x.len()
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = layer.affine(&h);
            if layer.relu {
                for v in &mut h {
                    *v = v.max(0.0);
                }
            }
        }
        h
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, NetCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for layer in &self.layers {
            inputs.push(h.clone());
            let pre = layer.affine(&h);
            preacts.push(pre.clone());
            h = pre;
            if layer.relu {
                for v in &mut h {
                    *v = v.max(0.0);
                }
            }
        }
        (h, NetCache { inputs, preacts })
    }

    pub fn zero_grads(&self) -> NetGrads {
        NetGrads {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (
                        Matrix::zeros(l.out_dim(), l.in_dim()),
                        l.bias.as_ref().map(|b| vec![0.0; b.len()]),
                    )
                })
                .collect(),
        }
    }

    /// Accumulate parameter gradients for one sample and return the gradient
    /// with respect to the input.
    pub fn backward(&self, cache: &NetCache, d_out: &[f64], grads: &mut NetGrads) -> Vec<f64> {
        let mut d = d_out.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            if layer.relu {
                for (dv, &pre) in d.iter_mut().zip(&cache.preacts[idx]) {
                    if pre <= 0.0 {
                        *dv = 0.0;
                    }
                }
            }
            let (gw, gb) = &mut grads.layers[idx];
            gw.add_scaled_outer(&d, &cache.inputs[idx], 1.0);
            if let Some(gb) = gb {
                for (g, dv) in gb.iter_mut().zip(&d) {
                    *g += dv;
                }
            }
            d = layer.weight.matvec_t(&d);
        }
        d
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.as_ref().map_or(0, Vec::len))
            .sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            if let Some(b) = &layer.bias {
                out.extend_from_slice(b);
            }
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "flat parameter length mismatch");
        let mut pos = 0;
        for layer in &mut self.layers {
            let wlen = layer.weight.data().len();
            layer.weight.data_mut().copy_from_slice(&flat[pos..pos + wlen]);
            pos += wlen;
            if let Some(b) = &mut layer.bias {
                let blen = b.len();
                b.copy_from_slice(&flat[pos..pos + blen]);
                pos += blen;
            }
        }
    }

    pub fn grads_flat(&self, grads: &NetGrads) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (gw, gb) in &grads.layers {
            out.extend_from_slice(gw.data());
            if let Some(gb) = gb {
                out.extend_from_slice(gb);
            }
        }
        out
    }
}

impl NetGrads {
    pub fn scale(&mut self, s: f64) {
        for (gw, gb) in &mut self.layers {
            for v in gw.data_mut() {
                *v *= s;
            }
            if let Some(gb) = gb {
                for v in gb {
                    *v *= s;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::rng_derive;

    #[test]
    fn identity_net_passes_through() {
        let net = Net::identity();
        assert_eq!(net.forward(&[1.0, -2.0]), vec![1.0, -2.0]);
    }

    #[test]
    fn mlp_shapes() {
        let mut rng = rng_derive(1, &[0]);
        let net = Net::mlp(&[5, 8, 3], &mut rng);
        assert_eq!(net.forward(&[0.1; 5]).len(), 3);
        assert_eq!(net.in_dim(), Some(5));
        assert_eq!(net.out_dim(), Some(3));
        assert!(!net.is_pure_linear());
        assert!(Net::linear(3, 5, &mut rng).is_pure_linear());
    }

    #[test]
    fn params_roundtrip() {
        let mut rng = rng_derive(2, &[0]);
        let mut net = Net::mlp(&[4, 6, 2], &mut rng);
        let flat = net.params_flat();
        assert_eq!(flat.len(), net.n_params());
        let mut tweaked = flat.clone();
        tweaked[3] += 0.5;
        net.set_params_flat(&tweaked);
        assert_eq!(net.params_flat(), tweaked);
    }

    #[test]
    fn backward_matches_finite_differences() {
        // Scalar objective: sum of outputs squared.
        let mut rng = rng_derive(3, &[0]);
        let net = Net::mlp(&[4, 5, 3], &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();

        let loss = |n: &Net| -> f64 { n.forward(&x).iter().map(|v| v * v).sum::<f64>() };

        let (out, cache) = net.forward_cached(&x);
        let d_out: Vec<f64> = out.iter().map(|v| 2.0 * v).collect();
        let mut grads = net.zero_grads();
        net.backward(&cache, &d_out, &mut grads);
        let analytic = net.grads_flat(&grads);

        let mut probe = net.clone();
        let base = probe.params_flat();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            probe.set_params_flat(&plus);
            let up = loss(&probe);
            let mut minus = base.clone();
            minus[i] -= h;
            probe.set_params_flat(&minus);
            let down = loss(&probe);
            let fd = (up - down) / (2.0 * h);
            assert!(
                (fd - analytic[i]).abs() <= 1e-5 * fd.abs().max(analytic[i].abs()).max(1.0),
                "param {i}: fd {fd} vs analytic {}",
                analytic[i]
            );
        }
    }
}
