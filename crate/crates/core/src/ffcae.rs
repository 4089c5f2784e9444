//! Feature-fusion convolutional autoencoder.
//!
//! Encoder: the input is convolved by two twin branches with different
//! kernel sizes (`n1`, `n2`); their concatenation (`low`) feeds a third
//! convolution (`hi`, kernel `n3`), and a skip connection concatenates `low`
//! with `hi` to form the code layer. The decoder mirrors this: twin branches
//! on the code, concatenation, and a final linear convolution back to the
//! input band count. Every convolution is stride 1 with same padding, so the
//! spatial size never changes.
//!
//! ```text
//! x ─┬─ enc_a (n1, relu) ─┐
//!    └─ enc_b (n2, relu) ─┴─ low ─┬──────────────────────┐
//!                                 └─ enc_hi (n3, relu) ─ hi ┴─ code
//! code ─┬─ dec_a (n1, relu) ─┐
//!       └─ dec_b (n2, relu) ─┴─ dec_out (n3, linear) ─ reconstruction
//! ```

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{normalize_bands, write_atomic, HyperCube};
use crate::nn::{concat_channels, mse_loss, Activation, AdamConfig, AdamState, ConvGrads, ConvLayer, ConvShape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"FFCAE1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FfcaeConfig {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub f1: usize,
    pub f2: usize,
    pub f3: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for FfcaeConfig {
    fn default() -> Self {
        Self {
            n1: 3,
            n2: 5,
            n3: 3,
            f1: 8,
            f2: 8,
            f3: 16,
            epochs: 50,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl FfcaeConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, n) in [("n1", self.n1), ("n2", self.n2), ("n3", self.n3)] {
            if n % 2 == 0 {
                return Err(Error::Config(format!("{name} = {n} must be odd")));
            }
        }
        for (name, f) in [("f1", self.f1), ("f2", self.f2), ("f3", self.f3)] {
            if f == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn code_channels(&self) -> usize {
        self.f1 + self.f2 + self.f3
    }

    fn low_channels(&self) -> usize {
        self.f1 + self.f2
    }

    /// Layer names and shapes in declaration (and checkpoint) order.
    pub fn layer_shapes(&self, bands: usize) -> [(&'static str, ConvShape); 6] {
        let code = self.code_channels();
        let low = self.low_channels();
        [
            ("enc_a", ConvShape::new(self.n1, bands, self.f1, Activation::Relu)),
            ("enc_b", ConvShape::new(self.n2, bands, self.f2, Activation::Relu)),
            ("enc_hi", ConvShape::new(self.n3, low, self.f3, Activation::Relu)),
            ("dec_a", ConvShape::new(self.n1, code, self.f1, Activation::Relu)),
            ("dec_b", ConvShape::new(self.n2, code, self.f2, Activation::Relu)),
            ("dec_out", ConvShape::new(self.n3, low, bands, Activation::Linear)),
        ]
    }

    /// Per-layer initialization seed derived from the model seed.
    pub fn layer_seed(&self, index: usize) -> u64 {
        self.seed
            .wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfcaeModel {
    config: FfcaeConfig,
    bands: usize,
    layers: [ConvLayer; 6],
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub input: Tensor,
    pub enc_a: Tensor,
    pub enc_b: Tensor,
    pub low: Tensor,
    pub hi: Tensor,
    pub code: Tensor,
    pub dec_a: Tensor,
    pub dec_b: Tensor,
    pub dec_cat: Tensor,
    pub reconstruction: Tensor,
}

/// Gradients for every layer plus the code and input gradients.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub layers: [ConvGrads; 6],
    pub code: Tensor,
    pub input: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub image1: f64,
    pub image2: f64,
}

impl EpochLoss {
    pub fn combined(&self) -> f64 {
        self.image1 + self.image2
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    pub epochs: Vec<EpochLoss>,
}

impl LossHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss_image1,loss_image2\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{}", e.epoch, e.image1, e.image2);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerRecord {
    name: String,
    kernel_size: usize,
    in_channels: usize,
    out_channels: usize,
    activation: Activation,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Topology {
    bands: usize,
    config: FfcaeConfig,
    layers: Vec<LayerRecord>,
}

impl FfcaeModel {
    pub fn new(config: FfcaeConfig, bands: usize) -> Result<Self> {
        config.validate()?;
        if bands == 0 {
            return Err(Error::Config("model needs at least one band".into()));
        }
        let shapes = config.layer_shapes(bands);
        let mut layers = Vec::with_capacity(6);
        for (i, (_, shape)) in shapes.iter().enumerate() {
            layers.push(ConvLayer::init(*shape, config.layer_seed(i))?);
        }
        let layers: [ConvLayer; 6] = layers.try_into().expect("six layers");
        Ok(Self {
            config,
            bands,
            layers,
        })
    }

    pub fn config(&self) -> &FfcaeConfig {
        &self.config
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn code_channels(&self) -> usize {
        self.config.code_channels()
    }

    /// Layers in order `enc_a, enc_b, enc_hi, dec_a, dec_b, dec_out`.
    pub fn layers(&self) -> &[ConvLayer; 6] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayer; 6] {
        &mut self.layers
    }

    fn check_bands(&self, image: &Tensor) -> Result<()> {
        if image.channels() != self.bands {
            return Err(Error::Shape(format!(
                "model was built for {} bands, image has {}",
                self.bands,
                image.channels()
            )));
        }
        Ok(())
    }

    /// Deep feature maps of the code layer, shape `(H, W, f1 + f2 + f3)`.
    pub fn encode(&self, image: &Tensor) -> Result<Tensor> {
        self.check_bands(image)?;
        let [enc_a, enc_b, enc_hi, ..] = &self.layers;
        let low = concat_channels(&enc_a.forward(image)?, &enc_b.forward(image)?)?;
        let hi = enc_hi.forward(&low)?;
        concat_channels(&low, &hi)
    }

    pub fn decode(&self, code: &Tensor) -> Result<Tensor> {
        if code.channels() != self.code_channels() {
            return Err(Error::Shape(format!(
                "code has {} channels, model expects {}",
                code.channels(),
                self.code_channels()
            )));
        }
        let [.., dec_a, dec_b, dec_out] = &self.layers;
        let cat = concat_channels(&dec_a.forward(code)?, &dec_b.forward(code)?)?;
        dec_out.forward(&cat)
    }

    pub fn forward(&self, image: &Tensor) -> Result<ForwardPass> {
        self.check_bands(image)?;
        let [enc_a, enc_b, enc_hi, dec_a, dec_b, dec_out] = &self.layers;
        let a = enc_a.forward(image)?;
        let b = enc_b.forward(image)?;
        let low = concat_channels(&a, &b)?;
        let hi = enc_hi.forward(&low)?;
        let code = concat_channels(&low, &hi)?;
        let da = dec_a.forward(&code)?;
        let db = dec_b.forward(&code)?;
        let dec_cat = concat_channels(&da, &db)?;
        let reconstruction = dec_out.forward(&dec_cat)?;
        Ok(ForwardPass {
            input: image.clone(),
            enc_a: a,
            enc_b: b,
            low,
            hi,
            code,
            dec_a: da,
            dec_b: db,
            dec_cat,
            reconstruction,
        })
    }

    /// Backpropagates `grad_reconstruction` through the whole network.
    pub fn backward(&self, pass: &ForwardPass, grad_reconstruction: &Tensor) -> Result<ModelGrads> {
        let [enc_a, enc_b, enc_hi, dec_a, dec_b, dec_out] = &self.layers;
        let (f1, low_ch, code_ch) = (self.config.f1, self.config.low_channels(), self.code_channels());

        let (g_cat, g_out) = dec_out.backward(&pass.dec_cat, &pass.reconstruction, grad_reconstruction)?;
        let (mut g_code, g_da) =
            dec_a.backward(&pass.code, &pass.dec_a, &g_cat.slice_channels(0..f1)?)?;
        let (g_code_b, g_db) =
            dec_b.backward(&pass.code, &pass.dec_b, &g_cat.slice_channels(f1..low_ch)?)?;
        g_code.add_assign(&g_code_b)?;

        // The skip connection routes part of the code gradient straight to `low`.
        let mut g_low = g_code.slice_channels(0..low_ch)?;
        let (g_low_hi, g_hi) =
            enc_hi.backward(&pass.low, &pass.hi, &g_code.slice_channels(low_ch..code_ch)?)?;
        g_low.add_assign(&g_low_hi)?;

        let (mut g_input, g_a) =
            enc_a.backward(&pass.input, &pass.enc_a, &g_low.slice_channels(0..f1)?)?;
        let (g_input_b, g_b) =
            enc_b.backward(&pass.input, &pass.enc_b, &g_low.slice_channels(f1..low_ch)?)?;
        g_input.add_assign(&g_input_b)?;

        Ok(ModelGrads {
            layers: [g_a, g_b, g_hi, g_da, g_db, g_out],
            code: g_code,
            input: g_input,
        })
    }

    /// Reconstruction MSE of `image` and the gradients of that loss.
    pub fn loss_and_gradients(&self, image: &Tensor) -> Result<(f64, ModelGrads)> {
        let pass = self.forward(image)?;
        let (loss, grad) = mse_loss(&pass.reconstruction, image)?;
        let grads = self.backward(&pass, &grad)?;
        Ok((loss, grads))
    }

    fn parameter_sizes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights().len(), l.biases().len()])
            .collect()
    }

    fn apply(&mut self, adam: &mut AdamState, grads: &ModelGrads) -> Result<()> {
        let mut params: Vec<&mut [f64]> = self.layers.iter_mut().flat_map(|l| l.params_mut()).collect();
        let grad_refs: Vec<&[f64]> = grads
            .layers
            .iter()
            .flat_map(|g| [g.weights.as_slice(), g.biases.as_slice()])
            .collect();
        adam.step(&mut params, &grad_refs)
    }

    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let shapes = self.config.layer_shapes(self.bands);
        let topology = Topology {
            bands: self.bands,
            config: self.config,
            layers: shapes
                .iter()
                .enumerate()
                .map(|(i, (name, s))| LayerRecord {
                    name: (*name).to_string(),
                    kernel_size: s.kernel_size,
                    in_channels: s.in_channels,
                    out_channels: s.out_channels,
                    activation: s.activation,
                    seed: self.config.layer_seed(i),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&topology)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for layer in &self.layers {
            for v in layer.weights().iter().chain(layer.biases()) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses a checkpoint; parameters come back rounded to `f32`.
    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 10 || &bytes[..6] != CHECKPOINT_MAGIC {
            return Err(bad("missing FFCAE1 magic"));
        }
        let json_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let json = bytes
            .get(10..10 + json_len)
            .ok_or_else(|| bad("truncated topology block"))?;
        let topology: Topology =
            serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("topology: {e}")))?;
        topology.config.validate()?;

        let shapes = topology.config.layer_shapes(topology.bands);
        if topology.layers.len() != shapes.len() {
            return Err(bad("layer count does not match the FFCAE topology"));
        }
        for (rec, (name, s)) in topology.layers.iter().zip(&shapes) {
            let matches = rec.name == *name
                && rec.kernel_size == s.kernel_size
                && rec.in_channels == s.in_channels
                && rec.out_channels == s.out_channels
                && rec.activation == s.activation;
            if !matches {
                return Err(Error::Checkpoint(format!(
                    "layer {} does not match the configured topology",
                    rec.name
                )));
            }
        }

        let payload = &bytes[10 + json_len..];
        let total: usize = shapes.iter().map(|(_, s)| s.weight_count() + s.out_channels).sum();
        if payload.len() != total * 4 {
            return Err(Error::Checkpoint(format!(
                "payload holds {} bytes, topology needs {}",
                payload.len(),
                total * 4
            )));
        }
        let mut values = payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())));
        let mut layers = Vec::with_capacity(6);
        for (_, shape) in shapes {
            let weights: Vec<f64> = values.by_ref().take(shape.weight_count()).collect();
            let biases: Vec<f64> = values.by_ref().take(shape.out_channels).collect();
            layers.push(ConvLayer::new(shape, weights, biases)?);
        }
        Ok(Self {
            config: topology.config,
            bands: topology.bands,
            layers: layers.try_into().expect("six layers"),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_checkpoint_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}

/// Trains a fresh model on the pair. Each epoch performs one full-image
/// forward / backward / Adam update on image 1, then one on image 2; the
/// recorded losses are those of the forward passes before each update.
///
/// Both images are min-max normalized per band first.
pub fn train(image1: &HyperCube, image2: &HyperCube, config: &FfcaeConfig) -> Result<(FfcaeModel, LossHistory)> {
    config.validate()?;
    if !image1.same_dimensions(image2) {
        return Err(Error::Dimensions(format!(
            "image pair differs: {}x{}x{} vs {}x{}x{}",
            image1.height(),
            image1.width(),
            image1.bands(),
            image2.height(),
            image2.width(),
            image2.bands()
        )));
    }
    let inputs = [
        normalize_bands(image1).to_tensor(),
        normalize_bands(image2).to_tensor(),
    ];
    let mut model = FfcaeModel::new(*config, image1.bands())?;
    let mut adam = AdamState::new(
        AdamConfig::with_learning_rate(config.learning_rate),
        &model.parameter_sizes(),
    );
    let mut history = LossHistory::default();
    for epoch in 1..=config.epochs {
        let mut losses = [0.0; 2];
        for (loss, input) in losses.iter_mut().zip(&inputs) {
            let (l, grads) = model.loss_and_gradients(input)?;
            model.apply(&mut adam, &grads)?;
            *loss = l;
        }
        history.epochs.push(EpochLoss {
            epoch,
            image1: losses[0],
            image2: losses[1],
        });
    }
    Ok((model, history))
}

/// Normalizes both images and encodes them with the trained model.
pub fn extract_dfm(model: &FfcaeModel, image1: &HyperCube, image2: &HyperCube) -> Result<(Tensor, Tensor)> {
    let dfm1 = model.encode(&normalize_bands(image1).to_tensor())?;
    let dfm2 = model.encode(&normalize_bands(image2).to_tensor())?;
    dfm1.ensure_same_shape(&dfm2, "deep feature maps")?;
    Ok((dfm1, dfm2))
}
