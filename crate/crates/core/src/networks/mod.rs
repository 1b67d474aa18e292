//! The four reconstruction networks and the multi-scale discriminators.
//!
//! Every network owns a [`ParamSet`]; a forward pass takes the parameter
//! vars returned by [`ParamSet::bind`] so callers decide per step which
//! networks train and which stay frozen.

mod checkpoint;
mod discriminator;
mod encoders;
mod unet;

pub use checkpoint::{load_params, save_params};
pub use discriminator::{MultiScaleDiscriminators, PatchDiscriminator, DISCRIMINATOR_SCALES};
pub use encoders::{LightEncoder, LightOutput, PoseEncoder};
pub use unet::{AffUNet, Head, UNetFeatures};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affconv::AffineConvLayer;
use crate::error::{Error, Result};
use crate::nn::{Conv2dLayer, ParamSet, LEAKY_SLOPE};
use crate::tape::{Tape, Var};
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Square input resolution in pixels.
    pub resolution: usize,
    /// Width of the first stage; encoder widths are `w, 2w, 4w, 8w`.
    pub base_width: usize,
    pub kernel: usize,
    pub leaky_slope: f64,
    /// Use affine convolutions in the stride-2 stages. Turning this off gives
    /// the vanilla ablation variant with identical host weights.
    pub affine: bool,
    /// Extra global RGB illumination colour from the light encoder.
    pub light_tint: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            base_width: 16,
            kernel: 3,
            leaky_slope: LEAKY_SLOPE,
            affine: true,
            light_tint: false,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || !self.resolution.is_multiple_of(8) {
            return Err(Error::invalid(
                "network-config",
                format!("resolution {} is not divisible by 8", self.resolution),
            ));
        }
        if self.base_width == 0 {
            return Err(Error::invalid("network-config", "base width must be positive"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::invalid("network-config", "kernel size must be odd"));
        }
        Ok(())
    }

    pub fn widths(&self) -> [usize; 4] {
        let w = self.base_width;
        [w, 2 * w, 4 * w, 8 * w]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LayerKind {
    Vanilla,
    Affine,
    Upsample,
}

/// A stride-2 encoder stage, affine or plain.
#[derive(Clone, Debug)]
pub enum DownLayer {
    Affine(AffineConvLayer),
    Vanilla(Conv2dLayer),
}

impl DownLayer {
    pub(crate) fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        config: &NetworkConfig,
        affine: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let k = config.kernel;
        if affine {
            DownLayer::Affine(AffineConvLayer::new(params, name, cin, cout, k, 2, rng))
        } else {
            DownLayer::Vanilla(Conv2dLayer::same(params, name, cin, cout, k, 2, rng))
        }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            DownLayer::Affine(_) => LayerKind::Affine,
            DownLayer::Vanilla(_) => LayerKind::Vanilla,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        match self {
            DownLayer::Affine(l) => l.forward(tape, vars, x),
            DownLayer::Vanilla(l) => l.forward(tape, vars, x),
        }
    }

    pub fn predictor_params<T: Scalar>(&self, params: &ParamSet<T>) -> usize {
        match self {
            DownLayer::Affine(l) => l.predictor_params(params),
            DownLayer::Vanilla(_) => 0,
        }
    }
}

/// Check that `x` is `[B, 3, R, R]` for the configured resolution.
pub(crate) fn check_input<T: Scalar>(
    op: &'static str,
    tape: &Tape<T>,
    x: Var,
    channels: usize,
    resolution: usize,
) -> Result<usize> {
    let s = tape.shape(x);
    if s.len() != 4 || s[1] != channels || s[2] != resolution || s[3] != resolution {
        return Err(Error::shape(op, &[0, channels, resolution, resolution], s));
    }
    Ok(s[0])
}
