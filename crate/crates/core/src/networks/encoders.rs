use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{Conv2dLayer, ParamSet, WeightInit};
use crate::tape::{Tape, Var};
use crate::tensor::Scalar;

use super::{check_input, DownLayer, NetworkConfig};

/// Stem plus three stride-2 stages shared by both encoders' layouts.
#[derive(Clone, Debug)]
struct Trunk {
    stem: Conv2dLayer,
    down: [DownLayer; 3],
}

impl Trunk {
    fn new<T: Scalar>(p: &mut ParamSet<T>, config: &NetworkConfig, affine: bool, rng: &mut ChaCha8Rng) -> Self {
        let [w1, w2, w3, w4] = config.widths();
        Self {
            stem: Conv2dLayer::same(p, "conv1", 3, w1, config.kernel, 1, rng),
            down: [
                DownLayer::new(p, "conv2", w1, w2, config, affine, rng),
                DownLayer::new(p, "conv3", w2, w3, config, affine, rng),
                DownLayer::new(p, "conv4", w3, w4, config, affine, rng),
            ],
        }
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, vars: &[Var], x: Var, slope: f64) -> Result<Var> {
        let y = self.stem.forward(tape, vars, x)?;
        let mut h = tape.leaky_relu(y, slope)?;
        for d in &self.down {
            let y = d.forward(tape, vars, h)?;
            h = tape.leaky_relu(y, slope)?;
        }
        Ok(h)
    }
}

/// Encoder-only light network: `[B,3,R,R] -> [B,1,R/8,R/8]` in `(0, 1)`.
#[derive(Clone, Debug)]
pub struct LightEncoder<T> {
    pub config: NetworkConfig,
    pub params: ParamSet<T>,
    trunk: Trunk,
    head: Conv2dLayer,
    tint: Option<Conv2dLayer>,
}

/// Light map plus the optional global RGB colour `[B,3,1,1]`.
#[derive(Clone, Copy, Debug)]
pub struct LightOutput {
    pub map: Var,
    pub tint: Option<Var>,
}

impl<T: Scalar> LightEncoder<T> {
    pub fn new(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let trunk = Trunk::new(&mut p, config, true, &mut rng);
        let w4 = config.widths()[3];
        let head = Conv2dLayer::same(&mut p, "conv5", w4, 1, config.kernel, 1, &mut rng);
        let tint = config.light_tint.then(|| {
            let k = config.resolution / 8;
            Conv2dLayer::new(&mut p, "tint", w4, 3, k, 1, 0, WeightInit::Zero, &mut rng)
        });
        Ok(Self {
            config: config.clone(),
            params: p,
            trunk,
            head,
            tint,
        })
    }

    pub fn output_size(&self) -> usize {
        self.config.resolution / 8
    }

    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<LightOutput> {
        check_input("light-encoder", tape, x, 3, self.config.resolution)?;
        let h = self.trunk.forward(tape, vars, x, self.config.leaky_slope)?;
        let y = self.head.forward(tape, vars, h)?;
        let map = tape.sigmoid(y)?;
        let tint = match &self.tint {
            Some(t) => {
                // 2 * sigmoid keeps the zero-initialised colour at exactly one
                let y = t.forward(tape, vars, h)?;
                let s = tape.sigmoid(y)?;
                Some(tape.scale(s, 2.0)?)
            }
            None => None,
        };
        Ok(LightOutput { map, tint })
    }
}

/// Pose regressor: `[B,3,R,R] -> [B,6,1,1]`, axis-angle rotation then
/// translation. The last layer's kernel covers the whole `R/8` feature map
/// and starts at zero, so a fresh encoder predicts the identity pose.
#[derive(Clone, Debug)]
pub struct PoseEncoder<T> {
    pub config: NetworkConfig,
    pub params: ParamSet<T>,
    trunk: Trunk,
    head: Conv2dLayer,
}

impl<T: Scalar> PoseEncoder<T> {
    pub fn new(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let trunk = Trunk::new(&mut p, config, false, &mut rng);
        let k = config.resolution / 8;
        let w4 = config.widths()[3];
        let head = Conv2dLayer::new(&mut p, "conv5", w4, 6, k, 1, 0, WeightInit::Zero, &mut rng);
        Ok(Self {
            config: config.clone(),
            params: p,
            trunk,
            head,
        })
    }

    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        check_input("pose-encoder", tape, x, 3, self.config.resolution)?;
        let h = self.trunk.forward(tape, vars, x, self.config.leaky_slope)?;
        self.head.forward(tape, vars, h)
    }
}
