//! Named parameter store for the full network and the composed forward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::NormStats;
use crate::diffcore::{Affine, LstmWeights, Tape, Tensor3, Var};
use crate::error::{Error, Result};
use crate::heads::{estimate_params, predict_causal, predict_neural, CausalRollout, ForecastBundle, Head, HeadParams, RateVars};
use crate::mobility::{build_dynamic_graph, MobilityParams, StaticGraph};
use crate::scsir::{CompartmentState, INITIAL_BETA, INITIAL_GAMMA};
use crate::sttemporal::{spatiotemporal_forward, SttParams};

/// Layer sizes. Input features are (S, I, R).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub regions: usize,
    pub t_pre: usize,
    pub embed_dim: usize,
    pub tcn_dim: usize,
    pub tcn_kernel: usize,
    pub tcn_dilation: usize,
    pub hidden: usize,
    pub gcn_layers: usize,
    pub window: usize,
}

pub const INPUT_FEATURES: usize = 3;

impl ModelConfig {
    pub fn new(regions: usize, t_pre: usize) -> Self {
        Self {
            regions,
            t_pre,
            embed_dim: 16,
            tcn_dim: 16,
            tcn_kernel: 3,
            tcn_dilation: 1,
            hidden: 32,
            gcn_layers: 3,
            window: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.regions,
            self.t_pre,
            self.embed_dim,
            self.tcn_dim,
            self.tcn_kernel,
            self.tcn_dilation,
            self.hidden,
        ];
        if positive.contains(&0) {
            return Err(Error::InvalidArgument(format!("model sizes must be positive: {self:?}")));
        }
        if self.window % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "moving-average window must be odd, got {}",
                self.window
            )));
        }
        Ok(())
    }

    /// Parameter names and shapes, in storage order.
    pub fn layout(&self) -> Vec<(String, [usize; 3])> {
        let (q, f, e, c, h, tp) = (
            self.regions,
            INPUT_FEATURES,
            self.embed_dim,
            self.tcn_dim,
            self.hidden,
            self.t_pre,
        );
        let mut out: Vec<(String, [usize; 3])> = Vec::new();
        fn affine(out: &mut Vec<(String, [usize; 3])>, name: &str, fin: usize, fout: usize) {
            out.push((format!("{name}.weight"), [1, fin, fout]));
            out.push((format!("{name}.bias"), [1, 1, fout]));
        }
        out.push(("mobility.a_static".into(), [1, q, q]));
        affine(&mut out, "mobility.fc_in", f, e);
        out.push(("mobility.tcn.kernel".into(), [self.tcn_kernel, e, c]));
        out.push(("mobility.tcn.bias".into(), [1, 1, c]));
        affine(&mut out, "mobility.fc_out", c, q);
        affine(&mut out, "st.fc_embed", f, e);
        affine(&mut out, "st.fc_trend", e, e);
        affine(&mut out, "st.fc_variation", e, e);
        for k in 0..self.gcn_layers {
            affine(&mut out, &format!("st.gcn{k}"), e, e);
        }
        for (head, width) in [("beta", tp), ("gamma", tp), ("contact", tp * q), ("pred", tp)] {
            affine(&mut out, &format!("heads.{head}.lstm"), e + h, 4 * h);
            affine(&mut out, &format!("heads.{head}.fc"), h, width);
        }
        out
    }

    /// Output-layer biases with a fixed starting point. The sigmoid heads
    /// start at the baseline fit's starting rates and a uniform `1/Q`
    /// contact share; the ReLU head starts mid-range so it is not dead.
    fn initial_bias(&self, name: &str) -> Option<f64> {
        let logit = |p: f64| (p / (1.0 - p)).ln();
        match name {
            "heads.beta.fc.bias" => Some(logit(INITIAL_BETA)),
            "heads.gamma.fc.bias" => Some(logit(INITIAL_GAMMA)),
            "heads.contact.fc.bias" if self.regions > 1 => Some(logit(1.0 / self.regions as f64)),
            "heads.pred.fc.bias" => Some(0.5),
            _ => None,
        }
    }

    fn init_bound(&self, name: &str, shape: [usize; 3]) -> f64 {
        let fan_in = if name.starts_with("mobility.tcn") {
            self.tcn_kernel * self.embed_dim
        } else if name.contains(".lstm.") {
            self.hidden
        } else {
            // Affine weight [1, fin, fout]; its bias shares the weight's fan-in.
            let weight = name.replace(".bias", ".weight");
            self.layout()
                .into_iter()
                .find(|(n, _)| *n == weight)
                .map_or(shape[1], |(_, s)| s[1])
        };
        let gain = if name.ends_with(".weight") && !name.contains(".lstm.") || name == "mobility.tcn.kernel" {
            6.0
        } else {
            1.0
        };
        (gain / fan_in as f64).sqrt()
    }
}

/// Diagonal of the initial static graph embedding.
const A_STATIC_DIAGONAL: f64 = 3.0;

/// All trainable arrays with their names, in [`ModelConfig::layout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: Vec<(String, Tensor3)>,
}

impl ModelState {
    /// Feed-forward and convolution weights are drawn from
    /// `U(±√(6/fan_in))`, recurrent weights and the remaining biases from
    /// `U(±1/√fan_in)`; head output biases start near fixed rates. The static
    /// graph embedding starts at a dominant diagonal plus small noise, so
    /// each region initially attends mostly to itself.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = config
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let value = if let Some(centre) = config.initial_bias(&name) {
                    Tensor3::from_fn(shape, |_, _, _| centre + rng.random_range(-0.1..0.1))
                } else if name == "mobility.a_static" {
                    Tensor3::from_fn(shape, |_, i, j| {
                        let noise = rng.random_range(-0.1..0.1);
                        if i == j {
                            A_STATIC_DIAGONAL + noise
                        } else {
                            noise
                        }
                    })
                } else {
                    let b = config.init_bound(&name, shape);
                    Tensor3::from_fn(shape, |_, _, _| rng.random_range(-b..b))
                };
                (name, value)
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Checks that names and shapes match the layout of `config`.
    pub fn from_parts(config: ModelConfig, params: Vec<(String, Tensor3)>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), (got_name, value)) in layout.iter().zip(&params) {
            if name != got_name || *shape != value.shape() {
                return Err(Error::InvalidArgument(format!(
                    "parameter {got_name} {:?} does not match expected {name} {shape:?}",
                    value.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor3> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor3> {
        self.params.iter_mut().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|(_, v)| v.len()).sum()
    }

    /// Places every parameter on `tape`: as a gradient leaf unless
    /// `frozen(name)` holds, in which case as a constant.
    pub fn bind<'t>(&self, tape: &'t Tape, frozen: impl Fn(&str) -> bool) -> Network<'t> {
        let vars: Vec<Var<'t>> = self
            .params
            .iter()
            .map(|(name, v)| {
                if frozen(name) {
                    tape.constant(v.clone())
                } else {
                    tape.leaf(v.clone())
                }
            })
            .collect();
        let names: Vec<&str> = self.params.iter().map(|(n, _)| n.as_str()).collect();
        let var = |name: &str| vars[names.iter().position(|n| *n == name).expect("layout name")];
        let affine = |name: &str| Affine {
            weight: var(&format!("{name}.weight")),
            bias: var(&format!("{name}.bias")),
        };
        let head = |name: &str| Head {
            lstm: LstmWeights {
                weight: var(&format!("heads.{name}.lstm.weight")),
                bias: var(&format!("heads.{name}.lstm.bias")),
            },
            fc: affine(&format!("heads.{name}.fc")),
        };
        Network {
            mobility: MobilityParams {
                a_static: var("mobility.a_static"),
                fc_in: affine("mobility.fc_in"),
                tcn_kernel: var("mobility.tcn.kernel"),
                tcn_bias: var("mobility.tcn.bias"),
                dilation: self.config.tcn_dilation,
                fc_out: affine("mobility.fc_out"),
            },
            st: SttParams {
                fc_embed: affine("st.fc_embed"),
                fc_trend: affine("st.fc_trend"),
                fc_variation: affine("st.fc_variation"),
                gcn: (0..self.config.gcn_layers).map(|k| affine(&format!("st.gcn{k}"))).collect(),
                window: self.config.window,
            },
            heads: HeadParams {
                beta: head("beta"),
                gamma: head("gamma"),
                contact: head("contact"),
                pred: head("pred"),
            },
            t_pre: self.config.t_pre,
            vars,
        }
    }

    /// Gradient-free forward pass over the full horizon.
    pub fn forecast(
        &self,
        x_obs: &Tensor3,
        seed: &CompartmentState,
        stats: &NormStats,
        graph: GraphSource<'_>,
    ) -> Result<ForecastBundle> {
        let tape = Tape::new();
        let net = self.bind(&tape, |_| true);
        let out = net.forward(x_obs, seed, stats, graph, self.config.t_pre, true)?;
        let causal = out.causal.expect("causal path requested");
        Ok(ForecastBundle {
            y_pre: out.y_pre.value(),
            y_cau: causal.y_cau.value(),
            params: out.rates.to_params()?,
            clamp_events: causal.clamp_events,
        })
    }
}

/// Where the region graph comes from.
#[derive(Clone, Copy, Debug)]
pub enum GraphSource<'a> {
    /// Learned from the input window.
    Dynamic,
    /// A fixed neighbour graph.
    Static(&'a StaticGraph),
}

/// Parameters of a [`ModelState`] on one tape.
#[derive(Clone, Debug)]
pub struct Network<'t> {
    pub mobility: MobilityParams<'t>,
    pub st: SttParams<'t>,
    pub heads: HeadParams<'t>,
    pub t_pre: usize,
    /// In [`ModelConfig::layout`] order.
    pub vars: Vec<Var<'t>>,
}

pub struct WindowOutput<'t> {
    /// `[h, Q, 1]`.
    pub y_pre: Var<'t>,
    /// Over the full `T_pre`.
    pub rates: RateVars<'t>,
    pub causal: Option<CausalRollout<'t>>,
    pub graph: Var<'t>,
}

impl<'t> Network<'t> {
    /// Runs one window `x_obs: [T_obs, Q, 3]` and keeps the first `horizon`
    /// forecast steps. The causal rollout is skipped unless `with_causal`.
    pub fn forward(
        &self,
        x_obs: &Tensor3,
        seed: &CompartmentState,
        stats: &NormStats,
        graph: GraphSource<'_>,
        horizon: usize,
        with_causal: bool,
    ) -> Result<WindowOutput<'t>> {
        if horizon == 0 || horizon > self.t_pre {
            return Err(Error::InvalidArgument(format!(
                "horizon {horizon} outside 1..={}",
                self.t_pre
            )));
        }
        let tape = self.mobility.a_static.tape();
        let x = tape.constant(x_obs.clone());
        let l_d = match graph {
            GraphSource::Dynamic => build_dynamic_graph(&x, &self.mobility)?,
            GraphSource::Static(g) => tape.constant(g.over(x_obs.shape()[0])),
        };
        let l_st = spatiotemporal_forward(&x, &l_d, &self.st)?;
        let y_pre = predict_neural(&l_st, &self.heads)?.slice(0, 0, horizon)?;
        let rates = estimate_params(&l_st, &self.heads, self.t_pre)?;
        let causal = if with_causal {
            Some(predict_causal(seed, &rates, stats, horizon)?)
        } else {
            None
        };
        Ok(WindowOutput {
            y_pre,
            rates,
            causal,
            graph: l_d,
        })
    }
}
