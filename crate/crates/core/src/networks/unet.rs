use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{Conv2dLayer, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

use super::{check_input, DownLayer, LayerKind, NetworkConfig};

/// Output activation of an image-to-image network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// Bounded intensities (diffuse maps).
    Sigmoid,
    /// Unbounded values (position maps).
    Linear,
}

/// Eleven-convolution encoder-decoder: a stride-1 stem, three stride-2
/// affine stages, two bottleneck convolutions, and a decoder of three
/// upsample + skip-concat stages followed by two convolutions and the head.
#[derive(Clone, Debug)]
pub struct AffUNet<T> {
    pub config: NetworkConfig,
    pub params: ParamSet<T>,
    pub out_channels: usize,
    pub head: Head,
    stem: Conv2dLayer,
    down: [DownLayer; 3],
    bottleneck: [Conv2dLayer; 2],
    decoder: [Conv2dLayer; 4],
    out: Conv2dLayer,
}

impl<T: Scalar> AffUNet<T> {
    pub fn new(config: &NetworkConfig, out_channels: usize, head: Head, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let [w1, w2, w3, w4] = config.widths();
        let k = config.kernel;
        let rng = &mut rng;
        let stem = Conv2dLayer::same(&mut p, "conv1", 3, w1, k, 1, rng);
        let down = [
            DownLayer::new(&mut p, "conv2", w1, w2, config, config.affine, rng),
            DownLayer::new(&mut p, "conv3", w2, w3, config, config.affine, rng),
            DownLayer::new(&mut p, "conv4", w3, w4, config, config.affine, rng),
        ];
        let bottleneck = [
            Conv2dLayer::same(&mut p, "conv5", w4, w4, k, 1, rng),
            Conv2dLayer::same(&mut p, "conv6", w4, w4, k, 1, rng),
        ];
        let decoder = [
            Conv2dLayer::same(&mut p, "conv7", w4 + w3, w3, k, 1, rng),
            Conv2dLayer::same(&mut p, "conv8", w3 + w2, w2, k, 1, rng),
            Conv2dLayer::same(&mut p, "conv9", w2 + w1, w1, k, 1, rng),
            Conv2dLayer::same(&mut p, "conv10", w1, w1, k, 1, rng),
        ];
        let out = Conv2dLayer::same(&mut p, "conv11", w1, out_channels, k, 1, rng);
        Ok(Self {
            config: config.clone(),
            params: p,
            out_channels,
            head,
            stem,
            down,
            bottleneck,
            decoder,
            out,
        })
    }

    /// Convolutions in order, then the three upsampling stages.
    pub fn layer_kinds(&self) -> Vec<LayerKind> {
        let mut kinds = vec![LayerKind::Vanilla];
        kinds.extend(self.down.iter().map(DownLayer::kind));
        kinds.extend([LayerKind::Vanilla; 7]);
        kinds.extend([LayerKind::Upsample; 3]);
        kinds
    }

    /// Parameters of the field predictors (zero for the vanilla variant).
    pub fn predictor_params(&self) -> usize {
        self.down.iter().map(|d| d.predictor_params(&self.params)).sum()
    }

    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        self.forward_impl(tape, vars, x, true).map(|f| f.output)
    }

    /// Forward pass that also returns the encoder features.
    pub fn forward_features(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<UNetFeatures> {
        self.forward_impl(tape, vars, x, true)
    }

    /// Forward pass with every skip feature replaced by zeros.
    pub fn forward_without_skips(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        self.forward_impl(tape, vars, x, false).map(|f| f.output)
    }

    fn forward_impl(&self, tape: &mut Tape<T>, vars: &[Var], x: Var, skips: bool) -> Result<UNetFeatures> {
        check_input("affunet", tape, x, 3, self.config.resolution)?;
        let slope = self.config.leaky_slope;
        let act = |tape: &mut Tape<T>, y: Result<Var>| y.and_then(|y| tape.leaky_relu(y, slope));
        let e1 = self.stem.forward(tape, vars, x);
        let e1 = act(tape, e1)?;
        let mut enc = vec![e1];
        for d in &self.down {
            let y = d.forward(tape, vars, *enc.last().unwrap());
            let y = act(tape, y)?;
            enc.push(y);
        }
        let mut h = enc[3];
        for c in &self.bottleneck {
            let y = c.forward(tape, vars, h);
            h = act(tape, y)?;
        }
        for (stage, conv) in self.decoder[..3].iter().enumerate() {
            let up = tape.upsample2x(h)?;
            let skip = enc[2 - stage];
            let skip = if skips {
                skip
            } else {
                let shape = tape.shape(skip).to_vec();
                tape.constant(Tensor::zeros(shape))
            };
            let cat = tape.concat_channels(&[up, skip])?;
            let y = conv.forward(tape, vars, cat);
            h = act(tape, y)?;
        }
        let y = self.decoder[3].forward(tape, vars, h);
        h = act(tape, y)?;
        let y = self.out.forward(tape, vars, h)?;
        let output = match self.head {
            Head::Sigmoid => tape.sigmoid(y)?,
            Head::Linear => y,
        };
        Ok(UNetFeatures { encoder: enc, output })
    }
}

/// Encoder features at resolutions `R, R/2, R/4, R/8` and the final output.
#[derive(Clone, Debug)]
pub struct UNetFeatures {
    pub encoder: Vec<Var>,
    pub output: Var,
}
