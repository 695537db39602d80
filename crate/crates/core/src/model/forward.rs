use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::layers::{embed_series, embed_spatial, encoder_layer, fuse, linear};
use super::params::HiformerParams;
use super::ModelError;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// One batch of normalized model inputs in the column-token layout of
/// [`super::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput<T> {
    /// `P × (B·N)` power history.
    pub history: Tensor<T>,
    /// `P × (M·B·N)` mode series.
    pub imfs: Tensor<T>,
    /// `P × (C·B·N)` weather series.
    pub weather: Tensor<T>,
    pub batch: usize,
}

impl<T: Scalar> ModelInput<T> {
    pub fn columns(&self) -> usize {
        self.history.cols()
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        let cols = self.batch * cfg.num_turbines;
        let expect = [
            ("history", &self.history, cols),
            ("imfs", &self.imfs, cfg.num_modes * cols),
            ("weather", &self.weather, cfg.num_weather * cols),
        ];
        for (name, t, width) in expect {
            if t.shape() != [cfg.history, width] {
                return Err(ModelError::Input(format!(
                    "{name} has shape {:?}, expected [{}, {width}]",
                    t.shape(),
                    cfg.history
                )));
            }
        }
        Ok(())
    }
}

/// Records the network on the tape of `node_embedding` and returns the
/// `Q × (B·N)` forecast.
pub fn forward<'t, T: Scalar, R: Rng + ?Sized>(
    params: &HiformerParams<Var<'t, T>>,
    node_embedding: Var<'t, T>,
    input: &ModelInput<T>,
    cfg: &ModelConfig,
    training: bool,
    rng: &mut R,
) -> Result<Var<'t, T>, ModelError> {
    cfg.validate()?;
    input.validate(cfg)?;
    if params.layers.len() != cfg.num_layers {
        return Err(ModelError::Input(format!(
            "parameters hold {} layers, config expects {}",
            params.layers.len(),
            cfg.num_layers
        )));
    }
    let tape = node_embedding.tape();
    let embed = || -> Result<_, crate::tensor::TensorError> {
        let spatial = embed_spatial(node_embedding, &params.spatial_embed)?;
        let h0 = fuse(spatial, embed_series(tape.constant(input.history.clone()), &params.input_embed)?)?;
        let freq = fuse(spatial, embed_series(tape.constant(input.imfs.clone()), &params.imf_embed)?)?;
        let feat = fuse(spatial, embed_series(tape.constant(input.weather.clone()), &params.weather_embed)?)?;
        Ok((h0, freq, feat))
    };
    let (mut h, freq, feat) = embed().map_err(ModelError::Embedding)?;
    for (index, layer) in params.layers.iter().enumerate() {
        h = encoder_layer(h, freq, feat, layer, cfg, training, rng)
            .map_err(|source| ModelError::Layer { index, source })?;
    }
    let project = || {
        let x = match &params.projection.hidden {
            Some(hidden) => linear(h, hidden)?.gelu(),
            None => h,
        };
        linear(x, &params.projection.out)
    };
    project().map_err(ModelError::Projection)
}

/// Binds stored parameters as tracked tape leaves.
pub fn bind<'t, T: Scalar>(tape: &'t Tape<T>, params: &HiformerParams<Tensor<T>>) -> HiformerParams<Var<'t, T>> {
    params.map(|_, t| tape.param(t.clone()))
}

/// Evaluation-mode forecast without gradient tracking.
pub fn predict<T: Scalar>(
    params: &HiformerParams<Tensor<T>>,
    node_embedding: &Tensor<T>,
    input: &ModelInput<T>,
    cfg: &ModelConfig,
) -> Result<Tensor<T>, ModelError> {
    let tape = Tape::new();
    let bound = params.map(|_, t| tape.constant(t.clone()));
    let node = tape.constant(node_embedding.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = forward(&bound, node, input, cfg, false, &mut rng)?;
    let value = out.value().clone();
    Ok(value)
}
