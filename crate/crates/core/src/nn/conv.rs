use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

/// Shape of a square, stride-1, same-padded convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub kernel_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: Activation,
}

impl ConvShape {
    pub fn new(
        kernel_size: usize,
        in_channels: usize,
        out_channels: usize,
        activation: Activation,
    ) -> Self {
        Self {
            kernel_size,
            in_channels,
            out_channels,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel size {} is not odd",
                self.kernel_size
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("convolution with zero channels".into()));
        }
        Ok(())
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_size * self.kernel_size
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_size * self.kernel_size
    }
}

/// Same-padded 2-D convolution layer.
///
/// Weights are laid out `[out][in][ky][kx]`; zero padding of `(n - 1) / 2` on
/// every border keeps the output the same size as the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    shape: ConvShape,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

/// Parameter gradients of one [`ConvLayer`], same layout as the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl ConvLayer {
    pub fn new(shape: ConvShape, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if weights.len() != shape.weight_count() {
            return Err(Error::Shape(format!(
                "{} weights for shape {:?}",
                weights.len(),
                shape
            )));
        }
        if biases.len() != shape.out_channels {
            return Err(Error::Shape(format!(
                "{} biases for {} output channels",
                biases.len(),
                shape.out_channels
            )));
        }
        Ok(Self {
            shape,
            weights,
            biases,
        })
    }

    /// He-uniform weights in `±sqrt(6 / fan_in)`, zero biases.
    pub fn init(shape: ConvShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let bound = (6.0 / shape.fan_in() as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..shape.weight_count())
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self::new(shape, weights, vec![0.0; shape.out_channels])
    }

    pub fn shape(&self) -> ConvShape {
        self.shape
    }

    pub fn kernel_size(&self) -> usize {
        self.shape.kernel_size
    }

    pub fn in_channels(&self) -> usize {
        self.shape.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.shape.out_channels
    }

    pub fn activation(&self) -> Activation {
        self.shape.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    /// Mutable views of `[weights, biases]`, in checkpoint order.
    pub fn params_mut(&mut self) -> [&mut [f64]; 2] {
        [&mut self.weights, &mut self.biases]
    }

    #[inline]
    pub fn weight_index(&self, out: usize, inp: usize, ky: usize, kx: usize) -> usize {
        let n = self.shape.kernel_size;
        ((out * self.shape.in_channels + inp) * n + ky) * n + kx
    }

    /// Repacks weights as `[ky][kx][out][in]` so the innermost loop is a
    /// contiguous dot product with a pixel's channel vector.
    fn packed_weights(&self) -> Vec<f64> {
        let n = self.shape.kernel_size;
        let (cin, cout) = (self.shape.in_channels, self.shape.out_channels);
        let mut packed = vec![0.0; self.weights.len()];
        for o in 0..cout {
            for i in 0..cin {
                for ky in 0..n {
                    for kx in 0..n {
                        packed[((ky * n + kx) * cout + o) * cin + i] =
                            self.weights[self.weight_index(o, i, ky, kx)];
                    }
                }
            }
        }
        packed
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.channels() != self.shape.in_channels {
            return Err(Error::Shape(format!(
                "layer expects {} input channels, got {}",
                self.shape.in_channels,
                input.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let (h, w, _) = input.shape();
        let n = self.shape.kernel_size;
        let pad = n / 2;
        let (cin, cout) = (self.shape.in_channels, self.shape.out_channels);
        let packed = self.packed_weights();
        let relu = self.shape.activation == Activation::Relu;

        let mut out = Tensor::zeros(h, w, cout);
        out.values_mut()
            .par_chunks_mut(w * cout)
            .enumerate()
            .for_each(|(y, row)| {
                for x in 0..w {
                    let acc = &mut row[x * cout..(x + 1) * cout];
                    acc.copy_from_slice(&self.biases);
                    for ky in 0..n {
                        let Some(yy) = (y + ky).checked_sub(pad).filter(|&v| v < h) else {
                            continue;
                        };
                        for kx in 0..n {
                            let Some(xx) = (x + kx).checked_sub(pad).filter(|&v| v < w) else {
                                continue;
                            };
                            let px = input.pixel(yy * w + xx);
                            let block = &packed[(ky * n + kx) * cout * cin..][..cout * cin];
                            for (a, wrow) in acc.iter_mut().zip(block.chunks_exact(cin)) {
                                *a += dot(wrow, px);
                            }
                        }
                    }
                    if relu {
                        for a in acc.iter_mut() {
                            *a = a.max(0.0);
                        }
                    }
                }
            });
        Ok(out)
    }

    /// Exact gradients of the layer given its input, its activated output and
    /// the loss gradient with respect to that output.
    ///
    /// Returns `(grad_input, parameter grads)`. Reductions run in a fixed
    /// row order, so results do not depend on the thread schedule.
    pub fn backward(
        &self,
        input: &Tensor,
        output: &Tensor,
        grad_out: &Tensor,
    ) -> Result<(Tensor, ConvGrads)> {
        self.check_input(input)?;
        let (h, w, _) = input.shape();
        let n = self.shape.kernel_size;
        let pad = n / 2;
        let (cin, cout) = (self.shape.in_channels, self.shape.out_channels);
        let expected = (h, w, cout);
        if output.shape() != expected || grad_out.shape() != expected {
            return Err(Error::Shape(format!(
                "backward expects output/grad of shape {expected:?}, got {:?} / {:?}",
                output.shape(),
                grad_out.shape()
            )));
        }

        // Gradient with respect to the pre-activation.
        let grad_pre = match self.shape.activation {
            Activation::Linear => grad_out.clone(),
            Activation::Relu => {
                let mut g = grad_out.clone();
                for (gv, &ov) in g.values_mut().iter_mut().zip(output.values()) {
                    if ov <= 0.0 {
                        *gv = 0.0;
                    }
                }
                g
            }
        };

        let mut grad_biases = vec![0.0; cout];
        for p in 0..grad_pre.pixel_count() {
            for (b, g) in grad_biases.iter_mut().zip(grad_pre.pixel(p)) {
                *b += g;
            }
        }

        // Per-row partial weight gradients in packed layout, summed in row order.
        let block_len = n * n * cout * cin;
        let partials: Vec<Vec<f64>> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut acc = vec![0.0; block_len];
                for x in 0..w {
                    let g = grad_pre.pixel(y * w + x);
                    for ky in 0..n {
                        let Some(yy) = (y + ky).checked_sub(pad).filter(|&v| v < h) else {
                            continue;
                        };
                        for kx in 0..n {
                            let Some(xx) = (x + kx).checked_sub(pad).filter(|&v| v < w) else {
                                continue;
                            };
                            let px = input.pixel(yy * w + xx);
                            let block = &mut acc[(ky * n + kx) * cout * cin..][..cout * cin];
                            for (&go, wrow) in g.iter().zip(block.chunks_exact_mut(cin)) {
                                if go != 0.0 {
                                    for (a, &v) in wrow.iter_mut().zip(px) {
                                        *a += go * v;
                                    }
                                }
                            }
                        }
                    }
                }
                acc
            })
            .collect();
        let mut packed_grad = vec![0.0; block_len];
        for part in &partials {
            for (a, b) in packed_grad.iter_mut().zip(part) {
                *a += b;
            }
        }
        let mut grad_weights = vec![0.0; self.weights.len()];
        for o in 0..cout {
            for i in 0..cin {
                for ky in 0..n {
                    for kx in 0..n {
                        grad_weights[self.weight_index(o, i, ky, kx)] =
                            packed_grad[((ky * n + kx) * cout + o) * cin + i];
                    }
                }
            }
        }

        // grad_in[yy, xx, i] = sum over (ky, kx, o) of
        // grad_pre[yy - ky + pad, xx - kx + pad, o] * w[o, i, ky, kx].
        let packed = self.packed_weights();
        let mut grad_input = Tensor::zeros(h, w, cin);
        grad_input
            .values_mut()
            .par_chunks_mut(w * cin)
            .enumerate()
            .for_each(|(yy, row)| {
                for xx in 0..w {
                    let acc = &mut row[xx * cin..(xx + 1) * cin];
                    for ky in 0..n {
                        let Some(y) = (yy + pad).checked_sub(ky).filter(|&v| v < h) else {
                            continue;
                        };
                        for kx in 0..n {
                            let Some(x) = (xx + pad).checked_sub(kx).filter(|&v| v < w) else {
                                continue;
                            };
                            let g = grad_pre.pixel(y * w + x);
                            let block = &packed[(ky * n + kx) * cout * cin..][..cout * cin];
                            for (&go, wrow) in g.iter().zip(block.chunks_exact(cin)) {
                                if go != 0.0 {
                                    for (a, &wv) in acc.iter_mut().zip(wrow) {
                                        *a += go * wv;
                                    }
                                }
                            }
                        }
                    }
                }
            });

        Ok((
            grad_input,
            ConvGrads {
                weights: grad_weights,
                biases: grad_biases,
            },
        ))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
