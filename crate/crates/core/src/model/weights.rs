use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Graph, Tensor, Var};

use super::config::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal(0, σ) resampled outside ±2σ.
    TruncNormal(f64),
    /// Uniform(±1/√fan_in).
    FanIn(usize),
    Zeros,
    Ones,
}

/// Declared parameter: path, shape and initialiser.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    fn new(name: String, shape: &[usize], init: Init) -> Self {
        ParamSpec { name, shape: shape.to_vec(), init }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

pub fn layer_prefix(block: usize, layer: usize) -> String {
    format!("b{}.l{}", block, layer)
}

fn conv(specs: &mut Vec<ParamSpec>, name: &str, cout: usize, cin: usize, k: usize) {
    specs.push(ParamSpec::new(format!("{name}.w"), &[cout, cin, k, k], Init::FanIn(cin * k * k)));
    specs.push(ParamSpec::new(format!("{name}.b"), &[cout], Init::Zeros));
}

fn linear(specs: &mut Vec<ParamSpec>, name: &str, din: usize, dout: usize, init: Init) {
    specs.push(ParamSpec::new(format!("{name}.w"), &[din, dout], init));
    specs.push(ParamSpec::new(format!("{name}.b"), &[dout], Init::Zeros));
}

fn norm(specs: &mut Vec<ParamSpec>, name: &str, d: usize) {
    specs.push(ParamSpec::new(format!("{name}.gain"), &[d], Init::Ones));
    specs.push(ParamSpec::new(format!("{name}.shift"), &[d], Init::Zeros));
}

/// Every parameter the configuration declares, in a fixed order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (d, dp, m) = (cfg.channels, cfg.expert_dim, cfg.n_experts);
    let proj = Init::TruncNormal(0.02);
    let mut s = Vec::new();
    conv(&mut s, "shallow", d, 3, 3);
    for b in 0..cfg.n_blocks {
        for l in 0..cfg.n_layers {
            let p = layer_prefix(b, l);
            if cfg.use_norm {
                norm(&mut s, &format!("{p}.norm1"), d);
                norm(&mut s, &format!("{p}.norm2"), d);
            }
            s.push(ParamSpec::new(format!("{p}.router.w"), &[d, m], proj));
            s.push(ParamSpec::new(format!("{p}.attn.wq"), &[m, d, dp], proj));
            s.push(ParamSpec::new(format!("{p}.attn.wk"), &[m, d, dp], proj));
            s.push(ParamSpec::new(format!("{p}.attn.wv"), &[m, d, dp], proj));
            s.push(ParamSpec::new(format!("{p}.attn.wo"), &[m, dp, d], proj));
            let (ch, se) = (cfg.cab_hidden(), cfg.se_hidden());
            conv(&mut s, &format!("{p}.cab.conv1"), ch, d, 3);
            conv(&mut s, &format!("{p}.cab.conv2"), d, ch, 3);
            linear(&mut s, &format!("{p}.cab.se1"), d, se, Init::FanIn(d));
            linear(&mut s, &format!("{p}.cab.se2"), se, d, Init::FanIn(se));
            let hid = cfg.glu_hidden();
            conv(&mut s, &format!("{p}.glu.value"), hid, d, 1);
            conv(&mut s, &format!("{p}.glu.gate"), hid, d, 1);
            s.push(ParamSpec::new(format!("{p}.glu.dw.w"), &[hid, 1, 3, 3], Init::FanIn(9)));
            s.push(ParamSpec::new(format!("{p}.glu.dw.b"), &[hid], Init::Zeros));
            conv(&mut s, &format!("{p}.glu.out"), d, hid, 1);
        }
        conv(&mut s, &format!("b{b}.conv"), d, d, 3);
    }
    conv(&mut s, "head", 3 * cfg.scale * cfg.scale, d, 3);
    s
}

/// Named parameter store for the whole network.
#[derive(Clone, Debug, PartialEq)]
pub struct HimosaWeights<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> HimosaWeights<T> {
    /// Seeded initialisation of every declared parameter.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for spec in param_specs(cfg) {
            let n = spec.numel();
            let data: Vec<T> = match spec.init {
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
                Init::FanIn(fan) => {
                    let bound = 1.0 / (fan as f64).sqrt();
                    (0..n).map(|_| T::from_f64c(rng.random_range(-bound..bound))).collect()
                }
                Init::TruncNormal(sigma) => {
                    let normal = Normal::new(0.0, sigma).expect("finite sigma");
                    (0..n)
                        .map(|_| loop {
                            let v: f64 = normal.sample(&mut rng);
                            if v.abs() <= 2.0 * sigma {
                                break T::from_f64c(v);
                            }
                        })
                        .collect()
                }
            };
            tensors.insert(spec.name.clone(), Tensor::new(&spec.shape, data)?.with_grad());
        }
        Ok(HimosaWeights { tensors })
    }

    /// All parameters zero (gains and shifts included).
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let tensors = param_specs(cfg)
            .into_iter()
            .map(|s| (s.name.clone(), Tensor::zeros(&s.shape).with_grad()))
            .collect();
        Ok(HimosaWeights { tensors })
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor<T>>) -> Self {
        HimosaWeights { tensors }
    }

    /// Checks names and shapes against `cfg`, reporting the first offender.
    pub fn check_against(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = param_specs(cfg);
        for spec in &specs {
            match self.tensors.get(&spec.name) {
                None => return Err(Error::Checkpoint(format!("missing parameter `{}`", spec.name))),
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    return Err(Error::Checkpoint(format!(
                        "parameter `{}` has shape {:?}, config expects {:?}",
                        spec.name,
                        t.shape(),
                        spec.shape
                    )))
                }
                _ => {}
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !specs.iter().any(|s| &s.name == *k)) {
            return Err(Error::Checkpoint(format!("unexpected parameter `{}`", extra)));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("no parameter `{}`", name)))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("no parameter `{}`", name)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    /// Records every parameter as a graph leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> BoundWeights {
        BoundWeights { vars: self.tensors.iter().map(|(k, t)| (k.clone(), g.param(t))).collect() }
    }

    /// Adds the graph's leaf gradients into each parameter's gradient slot.
    pub fn accumulate_grads(&mut self, g: &Graph<T>, bound: &BoundWeights) -> Result<()> {
        for (name, var) in &bound.vars {
            let t = self.get_mut(name)?;
            match g.grad(*var) {
                Some(grad) => t.accumulate_grad(grad)?,
                None => t.accumulate_grad(&vec![T::zero(); t.numel()])?,
            }
        }
        Ok(())
    }
}

/// Parameter name to graph leaf.
#[derive(Clone, Debug, Default)]
pub struct BoundWeights {
    vars: BTreeMap<String, Var>,
}

impl BoundWeights {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("no parameter `{}`", name)))
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.vars.values().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, Var)> {
        self.vars.iter().map(|(k, v)| (k, *v))
    }
}
