use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Conv2dLayer, ParamSet, LEAKY_SLOPE};
use crate::tape::{Tape, Var};
use crate::tensor::Scalar;

/// One-based indices of the convolutions whose activations are compared.
pub const FEATURE_TAPS: [usize; 5] = [1, 3, 5, 9, 13];

/// Seed of the frozen feature weights.
pub const FEATURE_SEED: u64 = 0x5eed_f00d;

/// Convolutions per block; blocks are separated by 2x average pooling.
const BLOCKS: [usize; 5] = [2, 2, 4, 4, 1];
const WIDTHS: [usize; 5] = [8, 16, 32, 32, 32];

/// A frozen, seed-fixed stack of 13 convolutions in five blocks, tapped
/// after the 1st, 3rd, 5th, 9th and 13th activation.
#[derive(Clone, Debug)]
pub struct FeatureExtractor<T> {
    params: ParamSet<T>,
    layers: Vec<Conv2dLayer>,
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut layers = Vec::new();
        let mut cin = 3;
        for (block, (&n, &w)) in BLOCKS.iter().zip(&WIDTHS).enumerate() {
            for i in 0..n {
                let name = format!("block{}.conv{}", block + 1, i + 1);
                layers.push(Conv2dLayer::same(&mut params, &name, cin, w, 3, 1, &mut rng));
                cin = w;
            }
        }
        Self { params, layers }
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    /// Smallest accepted input side; the deepest tap sits after four poolings.
    pub fn min_resolution() -> usize {
        16
    }

    /// Activations at the five taps. Weights enter the tape as constants.
    pub fn features(&self, tape: &mut Tape<T>, x: Var) -> Result<Vec<Var>> {
        let (_, c, h, w) = tape.value(x).dims4("feature-extractor")?;
        let m = Self::min_resolution();
        if c != 3 || h < m || w < m || h % m != 0 || w % m != 0 {
            return Err(Error::invalid(
                "feature-extractor",
                format!("expects 3 channels and sides that are multiples of {m}, got {:?}", tape.shape(x)),
            ));
        }
        let vars = self.params.bind(tape, false);
        let mut taps = Vec::with_capacity(FEATURE_TAPS.len());
        let mut h = x;
        let mut index = 0;
        for (block, &n) in BLOCKS.iter().enumerate() {
            if block > 0 {
                h = tape.avgpool(h, 2)?;
            }
            for _ in 0..n {
                let y = self.layers[index].forward(tape, &vars, h)?;
                h = tape.leaky_relu(y, LEAKY_SLOPE)?;
                index += 1;
                if FEATURE_TAPS.contains(&index) {
                    taps.push(h);
                }
            }
        }
        Ok(taps)
    }
}
