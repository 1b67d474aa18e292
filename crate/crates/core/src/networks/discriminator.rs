use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Conv2dLayer, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Scalar;

use super::NetworkConfig;

/// Downsampling factor of each discriminator's input.
pub const DISCRIMINATOR_SCALES: [usize; 3] = [1, 2, 4];

/// Patch classifier: four stride-2 convolutions and a stride-1 logit layer,
/// so an `r x r` input yields a `ceil(r/16)` square logit map.
#[derive(Clone, Debug)]
pub struct PatchDiscriminator<T> {
    pub params: ParamSet<T>,
    pub input_size: usize,
    slope: f64,
    layers: [Conv2dLayer; 4],
    logits: Conv2dLayer,
}

impl<T: Scalar> PatchDiscriminator<T> {
    pub fn new(config: &NetworkConfig, input_size: usize, seed: u64) -> Result<Self> {
        if input_size == 0 {
            return Err(Error::invalid("discriminator", "input size must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let mut p = ParamSet::new();
        let w = config.base_width;
        let widths = [3, w, 2 * w, 4 * w, 4 * w];
        let layers = std::array::from_fn(|i| {
            Conv2dLayer::new(
                &mut p,
                &format!("conv{}", i + 1),
                widths[i],
                widths[i + 1],
                3,
                2,
                1,
                crate::nn::WeightInit::He,
                rng,
            )
        });
        let logits = Conv2dLayer::same(&mut p, "conv5", 4 * w, 1, 3, 1, rng);
        Ok(Self {
            params: p,
            input_size,
            slope: config.leaky_slope,
            layers,
            logits,
        })
    }

    pub fn output_size(&self) -> usize {
        (0..4).fold(self.input_size, |r, _| r.div_ceil(2))
    }

    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for l in &self.layers {
            let y = l.forward(tape, vars, h)?;
            h = tape.leaky_relu(y, self.slope)?;
        }
        self.logits.forward(tape, vars, h)
    }
}

/// Discriminators on the image at full, half and quarter resolution.
#[derive(Clone, Debug)]
pub struct MultiScaleDiscriminators<T> {
    pub nets: [PatchDiscriminator<T>; 3],
}

impl<T: Scalar> MultiScaleDiscriminators<T> {
    pub fn new(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let make = |k: usize| {
            PatchDiscriminator::new(config, config.resolution / DISCRIMINATOR_SCALES[k], seed.wrapping_add(k as u64))
        };
        Ok(Self {
            nets: [make(0)?, make(1)?, make(2)?],
        })
    }

    pub fn input_sizes(&self) -> [usize; 3] {
        std::array::from_fn(|k| self.nets[k].input_size)
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> [Vec<Var>; 3] {
        std::array::from_fn(|k| self.nets[k].params.bind(tape, trainable))
    }

    /// Logit maps of the three discriminators, finest first.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Vec<Var>; 3], x: Var) -> Result<[Var; 3]> {
        let s1 = x;
        let s2 = tape.avgpool(s1, 2)?;
        let s4 = tape.avgpool(s2, 2)?;
        Ok([
            self.nets[0].forward(tape, &vars[0], s1)?,
            self.nets[1].forward(tape, &vars[1], s2)?,
            self.nets[2].forward(tape, &vars[2], s4)?,
        ])
    }
}
