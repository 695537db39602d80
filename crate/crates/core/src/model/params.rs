//! Learnable weights, generic over the leaf so the same tree holds stored
//! tensors, tape handles, gradients or optimizer moments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Structure-preserving traversal over every leaf.
pub trait ParamTree<P>: Sized {
    type With<Q>;

    /// Rebuilds the tree with `f` applied to every leaf, in a fixed order.
    fn map_with<'a, Q>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a P) -> Q) -> Self::With<Q>;

    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut P));
}

fn join(path: &str, name: &str) -> String {
    if path.is_empty() {
        name.to_string()
    } else {
        format!("{path}.{name}")
    }
}

/// `out = weight·x + bias`, weight `out×in`, bias `out×1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<P> {
    pub weight: P,
    pub bias: P,
}

/// Two linear maps with GELU between.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<P> {
    pub hidden: Linear<P>,
    pub out: Linear<P>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormAffine<P> {
    pub gain: P,
    pub bias: P,
}

/// One attention path: nonlinear query/key maps over `[H; context]`, a value
/// map over `H`, and softmax logits weighting the context slices.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<P> {
    pub query: Linear<P>,
    pub key: Linear<P>,
    pub value: Linear<P>,
    pub mix_logits: P,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateParams<P> {
    /// `D×D`, applied to the frequency-path output.
    pub from_frequency: P,
    /// `D×D`, applied to the feature-path output.
    pub from_feature: P,
    /// `D×N`, one column per turbine.
    pub bias: P,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams<P> {
    pub frequency: AttentionParams<P>,
    pub feature: AttentionParams<P>,
    pub gate: GateParams<P>,
    pub norm_mix: NormAffine<P>,
    pub ffn: Mlp<P>,
    pub norm_ffn: NormAffine<P>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams<P> {
    pub hidden: Option<Linear<P>>,
    pub out: Linear<P>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiformerParams<P> {
    /// History window → token.
    pub input_embed: Mlp<P>,
    /// Mode series → token.
    pub imf_embed: Mlp<P>,
    /// Node embedding → token.
    pub spatial_embed: Linear<P>,
    /// Weather series → token.
    pub weather_embed: Mlp<P>,
    pub layers: Vec<EncoderLayerParams<P>>,
    pub projection: ProjectionParams<P>,
}

impl<P> ParamTree<P> for Linear<P> {
    type With<Q> = Linear<Q>;
    fn map_with<'a, Q>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a P) -> Q) -> Linear<Q> {
        Linear {
            weight: f(&join(path, "weight"), &self.weight),
            bias: f(&join(path, "bias"), &self.bias),
        }
    }
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut P)) {
        f(&join(path, "weight"), &mut self.weight);
        f(&join(path, "bias"), &mut self.bias);
    }
}

impl<P> ParamTree<P> for Mlp<P> {
    type With<Q> = Mlp<Q>;
    fn map_with<'a, Q>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a P) -> Q) -> Mlp<Q> {
        Mlp {
            hidden: self.hidden.map_with(&join(path, "hidden"), f),
            out: self.out.map_with(&join(path, "out"), f),
        }
    }
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut P)) {
        self.hidden.visit_mut(&join(path, "hidden"), f);
        self.out.visit_mut(&join(path, "out"), f);
    }
}

impl<P> ParamTree<P> for NormAffine<P> {
    type With<Q> = NormAffine<Q>;
    fn map_with<'a, Q>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a P) -> Q) -> NormAffine<Q> {
        NormAffine {
            gain: f(&join(path, "gain"), &self.gain),
            bias: f(&join(path, "bias"), &self.bias),
        }
    }
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut P)) {
        f(&join(path, "gain"), &mut self.gain);
        f(&join(path, "bias"), &mut self.bias);
    }
}

impl<P> ParamTree<P> for AttentionParams<P> {
    type With<Q> = AttentionParams<Q>;
    fn map_with<'a, Q>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a P) -> Q) -> AttentionParams<Q> {
        AttentionParams {
            query: self.query.map_with(&join(path, "query"), f),
            key: self.key.map_with(&join(path, "key"), f),
            value: self.value.map_with(&join(path, "value"), f),
            mix_logits: f(&join(path, "mix_logits"), &self.mix_logits),
        }
    }
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut P)) {
        self.query.visit_mut(&join(path, "query"), f);
        self.key.visit_mut(&join(path, "key"), f);
        self.value.visit_mut(&join(path, "value"), f);
        f(&join(path, "mix_logits"), &mut self.mix_logits);
    }
}

impl<P> ParamTree<P> for GateParams<P> {
    type With<Q> = GateParams<Q>;
    fn map_with<'a, Q>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a P) -> Q) -> GateParams<Q> {
        GateParams {
            from_frequency: f(&join(path, "from_frequency"), &self.from_frequency),
            from_feature: f(&join(path, "from_feature"), &self.from_feature),
            bias: f(&join(path, "bias"), &self.bias),
        }
    }
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut P)) {
        f(&join(path, "from_frequency"), &mut self.from_frequency);
        f(&join(path, "from_feature"), &mut self.from_feature);
        f(&join(path, "bias"), &mut self.bias);
    }
}

impl<P> ParamTree<P> for EncoderLayerParams<P> {
    type With<Q> = EncoderLayerParams<Q>;
    fn map_with<'a, Q>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a P) -> Q) -> EncoderLayerParams<Q> {
        EncoderLayerParams {
            frequency: self.frequency.map_with(&join(path, "frequency"), f),
            feature: self.feature.map_with(&join(path, "feature"), f),
            gate: self.gate.map_with(&join(path, "gate"), f),
            norm_mix: self.norm_mix.map_with(&join(path, "norm_mix"), f),
            ffn: self.ffn.map_with(&join(path, "ffn"), f),
            norm_ffn: self.norm_ffn.map_with(&join(path, "norm_ffn"), f),
        }
    }
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut P)) {
        self.frequency.visit_mut(&join(path, "frequency"), f);
        self.feature.visit_mut(&join(path, "feature"), f);
        self.gate.visit_mut(&join(path, "gate"), f);
        self.norm_mix.visit_mut(&join(path, "norm_mix"), f);
        self.ffn.visit_mut(&join(path, "ffn"), f);
        self.norm_ffn.visit_mut(&join(path, "norm_ffn"), f);
    }
}

impl<P> ParamTree<P> for ProjectionParams<P> {
    type With<Q> = ProjectionParams<Q>;
    fn map_with<'a, Q>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a P) -> Q) -> ProjectionParams<Q> {
        ProjectionParams {
            hidden: self.hidden.as_ref().map(|h| h.map_with(&join(path, "hidden"), f)),
            out: self.out.map_with(&join(path, "out"), f),
        }
    }
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut P)) {
        if let Some(h) = &mut self.hidden {
            h.visit_mut(&join(path, "hidden"), f);
        }
        self.out.visit_mut(&join(path, "out"), f);
    }
}

impl<P> ParamTree<P> for HiformerParams<P> {
    type With<Q> = HiformerParams<Q>;
    fn map_with<'a, Q>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a P) -> Q) -> HiformerParams<Q> {
        HiformerParams {
            input_embed: self.input_embed.map_with(&join(path, "input_embed"), f),
            imf_embed: self.imf_embed.map_with(&join(path, "imf_embed"), f),
            spatial_embed: self.spatial_embed.map_with(&join(path, "spatial_embed"), f),
            weather_embed: self.weather_embed.map_with(&join(path, "weather_embed"), f),
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.map_with(&join(path, &format!("layers.{i}")), f))
                .collect(),
            projection: self.projection.map_with(&join(path, "projection"), f),
        }
    }
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut P)) {
        self.input_embed.visit_mut(&join(path, "input_embed"), f);
        self.imf_embed.visit_mut(&join(path, "imf_embed"), f);
        self.spatial_embed.visit_mut(&join(path, "spatial_embed"), f);
        self.weather_embed.visit_mut(&join(path, "weather_embed"), f);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(path, &format!("layers.{i}")), f);
        }
        self.projection.visit_mut(&join(path, "projection"), f);
    }
}

impl<P> HiformerParams<P> {
    pub fn map<'a, Q>(&'a self, mut f: impl FnMut(&str, &'a P) -> Q) -> HiformerParams<Q> {
        self.map_with("", &mut f)
    }

    /// Every leaf with its dotted path, in traversal order.
    pub fn leaves(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        self.map_with("", &mut |name, p| out.push((name.to_string(), p)));
        out
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut P)) {
        self.visit_mut("", &mut f);
    }
}

impl<T: Scalar> HiformerParams<Tensor<T>> {
    /// Fan-in scaled uniform weights (bound `1/√fan_in`), zero biases, unit
    /// norm gains, uniform context weights and an unbiased gate.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut linear = |i: usize, o: usize| {
            let bound = 1.0 / (i as f64).sqrt();
            Linear {
                weight: Tensor::random_uniform(&[o, i], -bound, bound, &mut rng),
                bias: Tensor::zeros(&[o, 1]),
            }
        };
        let (p, d, f) = (cfg.history, cfg.model_dim, cfg.ffn_hidden);
        let input_embed = Mlp {
            hidden: linear(p, f),
            out: linear(f, d),
        };
        let imf_embed = Mlp {
            hidden: linear(p, f),
            out: linear(f, d),
        };
        let spatial_embed = linear(cfg.node_dims, d);
        let weather_embed = Mlp {
            hidden: linear(p, f),
            out: linear(f, d),
        };
        let norm = || NormAffine {
            gain: Tensor::ones(&[d]),
            bias: Tensor::zeros(&[d]),
        };
        let layers = (0..cfg.num_layers)
            .map(|_| {
                let frequency = AttentionParams {
                    query: linear(2 * d, d),
                    key: linear(2 * d, d),
                    value: linear(d, d),
                    mix_logits: Tensor::zeros(&[cfg.num_modes]),
                };
                let feature = AttentionParams {
                    query: linear(2 * d, d),
                    key: linear(2 * d, d),
                    value: linear(d, d),
                    mix_logits: Tensor::zeros(&[cfg.num_weather]),
                };
                let gate = GateParams {
                    from_frequency: linear(d, d).weight,
                    from_feature: linear(d, d).weight,
                    bias: Tensor::zeros(&[d, cfg.num_turbines]),
                };
                EncoderLayerParams {
                    frequency,
                    feature,
                    gate,
                    norm_mix: norm(),
                    ffn: Mlp {
                        hidden: linear(d, f),
                        out: linear(f, d),
                    },
                    norm_ffn: norm(),
                }
            })
            .collect();
        let projection = match cfg.projection_hidden {
            Some(h) => ProjectionParams {
                hidden: Some(linear(d, h)),
                out: linear(h, cfg.horizon),
            },
            None => ProjectionParams {
                hidden: None,
                out: linear(d, cfg.horizon),
            },
        };
        Self {
            input_embed,
            imf_embed,
            spatial_embed,
            weather_embed,
            layers,
            projection,
        }
    }

    pub fn count(&self) -> usize {
        self.leaves().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.leaves().iter().all(|(_, t)| t.is_finite())
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_, t| Tensor::zeros(t.shape()))
    }

    pub fn cast<U: Scalar>(&self) -> HiformerParams<Tensor<U>> {
        self.map(|_, t| t.cast())
    }

    /// Euclidean norm over all leaves.
    pub fn global_norm(&self) -> f64 {
        self.leaves()
            .iter()
            .map(|(_, t)| t.norm_sq().as_f64())
            .sum::<f64>()
            .sqrt()
    }
}
