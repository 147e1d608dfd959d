use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, sample_patch, Dihedral, ImagePair};
use crate::error::{Error, Result};
use crate::model::{himosa_forward, mix_seed, ForwardOptions, HimosaWeights, ModelConfig};
use crate::par;
use crate::real::Real;
use crate::tensor::{Graph, Tensor};

use super::checkpoint::{Checkpoint, TensorEntry};
use super::config::{lr_at, RunConfig};
use super::optim::{clip_global_norm, Optimizer};

/// Weights, optimiser moments and the iteration counter.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub run: RunConfig,
    pub weights: HimosaWeights<T>,
    pub opt: Optimizer<T>,
    /// Completed iterations.
    pub iter: u64,
}

/// One `(lr, hr)` training sample as `[3, h, w]` / `[3, r·h, r·w]` tensors.
pub type Sample<T> = (Tensor<T>, Tensor<T>);

impl<T: Real> TrainState<T> {
    /// Fresh state with weights drawn from the training seed.
    pub fn new(run: RunConfig) -> Result<Self> {
        let weights = HimosaWeights::init(&run.model, run.train.seed)?;
        let opt = Optimizer::new(run.train.optimizer, &weights);
        Ok(TrainState { run, weights, opt, iter: 0 })
    }

    fn first_non_finite(&self) -> Option<String> {
        for (name, t) in self.weights.iter() {
            if !t.is_finite() {
                return Some(format!("parameter `{}` holds a non-finite value", name));
            }
            if t.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
                return Some(format!("parameter `{}` has a non-finite gradient", name));
            }
        }
        None
    }

    /// Forward, L1 loss, backward, clip and update for one batch. Returns the
    /// mean loss over the batch.
    pub fn train_step(&mut self, batch: &[Sample<T>]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::contract("train_step", "empty batch"));
        }
        self.weights.zero_grad();
        let cfg = &self.run.model;
        let weights = &self.weights;
        let (seed, t) = (self.run.train.seed, self.iter);
        let results = par::map(batch.len(), |i| -> Result<(f64, Vec<Vec<T>>)> {
            let mut g = Graph::new();
            let bound = weights.bind(&mut g);
            let lr = g.constant(batch[i].0.clone());
            let hr = g.constant(batch[i].1.clone());
            let opts = ForwardOptions { seed: mix_seed(&[seed, t, i as u64]), ..Default::default() };
            let out = himosa_forward(&mut g, cfg, &bound, lr, &opts)?;
            let loss = g.l1_loss(out.sr, hr)?;
            g.backward(loss)?;
            let grads = bound
                .iter()
                .map(|(_, v)| g.grad(v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); g.value(v).numel()]))
                .collect();
            Ok((g.value(loss).item().to_f64().unwrap_or(f64::NAN), grads))
        });
        let inv = T::from_f64c(1.0 / batch.len() as f64);
        let mut loss = 0.0;
        let mut total: Option<Vec<Vec<T>>> = None;
        for r in results {
            let (l, grads) = r?;
            loss += l;
            match total.as_mut() {
                None => total = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        a.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                    }
                }
            }
        }
        let loss = loss / batch.len() as f64;
        let names: Vec<String> = self.weights.names().cloned().collect();
        for (name, mut g) in names.iter().zip(total.unwrap_or_default()) {
            g.iter_mut().for_each(|v| *v *= inv);
            self.weights.get_mut(name)?.accumulate_grad(&g)?;
        }
        if !loss.is_finite() {
            let cause = self.first_non_finite().unwrap_or_else(|| "no parameter is non-finite".into());
            return Err(Error::NonFinite(format!("loss is {} at iteration {}; {}", loss, self.iter, cause)));
        }
        if self.run.train.clip_norm > 0.0 {
            clip_global_norm(&mut self.weights, self.run.train.clip_norm);
        }
        let lr = lr_at(&self.run.train, self.iter);
        self.opt.step(&mut self.weights, lr)?;
        self.iter += 1;
        Ok(loss)
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut tensors: Vec<TensorEntry> = self.weights.iter().map(|(n, t)| TensorEntry::from_tensor(n, t)).collect();
        for (n, t) in &self.opt.m {
            tensors.push(TensorEntry::from_tensor(format!("opt/m/{n}"), t));
        }
        for (n, t) in &self.opt.v {
            tensors.push(TensorEntry::from_tensor(format!("opt/v/{n}"), t));
        }
        tensors.push(TensorEntry::from_tensor("train/iter", &Tensor::<f64>::scalar(self.iter as f64)));
        Checkpoint { config_text: self.run.to_text(), tensors }
    }
}

/// Writes weights, optimiser moments, the iteration counter and the run
/// configuration.
pub fn save_state<T: Real>(state: &TrainState<T>, path: impl AsRef<Path>) -> Result<()> {
    state.checkpoint().save(path)
}

/// Reads a checkpoint. Weights must match `model` exactly (when given,
/// otherwise the stored configuration); optimiser state is restored when
/// present.
pub fn load_state<T: Real>(path: impl AsRef<Path>, model: Option<&ModelConfig>) -> Result<TrainState<T>> {
    let ckpt = Checkpoint::load(path.as_ref())?;
    let mut run = RunConfig::parse(&ckpt.config_text)?;
    if let Some(m) = model {
        run.model = m.clone();
    }
    let mut weights = std::collections::BTreeMap::new();
    let mut opt = Optimizer::new(run.train.optimizer, &HimosaWeights::<T>::zeros(&run.model)?);
    let mut iter = 0;
    let mut have_opt = false;
    for e in &ckpt.tensors {
        if let Some(n) = e.name.strip_prefix("opt/m/") {
            opt.m.insert(n.to_string(), e.to_tensor()?);
            have_opt = true;
        } else if let Some(n) = e.name.strip_prefix("opt/v/") {
            opt.v.insert(n.to_string(), e.to_tensor()?);
        } else if e.name == "train/iter" {
            iter = e.to_tensor::<f64>()?.item() as u64;
        } else {
            weights.insert(e.name.clone(), e.to_tensor()?);
        }
    }
    let weights = HimosaWeights::from_map(weights);
    weights.check_against(&run.model)?;
    opt.steps = if have_opt { iter } else { 0 };
    Ok(TrainState { run, weights, opt, iter })
}

/// Draws batches from a set of image pairs and drives the training loop.
pub struct Trainer<'a, T> {
    pub state: TrainState<T>,
    pairs: &'a [ImagePair],
}

impl<'a, T: Real> Trainer<'a, T> {
    pub fn new(state: TrainState<T>, pairs: &'a [ImagePair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Config("no training images".into()));
        }
        Ok(Trainer { state, pairs })
    }

    /// The batch for iteration `t`; depends only on the seed and `t`.
    pub fn batch(&self, t: u64) -> Result<Vec<Sample<T>>> {
        let tc = &self.state.run.train;
        let r = self.state.run.model.scale;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[tc.seed, t, 0xBA7C]));
        (0..tc.batch_size)
            .map(|_| {
                let pair = &self.pairs[rng.random_range(0..self.pairs.len())];
                let mut p = sample_patch(&pair.hr, &pair.lr, tc.patch, r, &mut rng)?;
                if tc.augment {
                    p = augment(&p, Dihedral::random(&mut rng))?;
                }
                Ok((p.lr.to_tensor(), p.hr.to_tensor()))
            })
            .collect()
    }

    pub fn step(&mut self) -> Result<f64> {
        let batch = self.batch(self.state.iter)?;
        self.state.train_step(&batch)
    }

    /// Trains until `total_iters`, writing `iter\tloss\tlr` per step and
    /// checkpoints to `out_dir` (every `checkpoint_every` steps and at the
    /// end, as `ckpt_<iter>.himo` and `last.himo`).
    pub fn run(&mut self, out_dir: Option<&Path>, log: &mut dyn Write) -> Result<()> {
        let total = self.state.run.train.total_iters;
        let every = self.state.run.train.checkpoint_every;
        while self.state.iter < total {
            let t = self.state.iter;
            let lr = lr_at(&self.state.run.train, t);
            let loss = self.step()?;
            writeln!(log, "{}\t{}\t{}", t, loss, lr).map_err(|e| Error::io("training log", e))?;
            if let Some(dir) = out_dir {
                let done = self.state.iter;
                if every > 0 && done % every == 0 && done < total {
                    save_state(&self.state, dir.join(format!("ckpt_{:08}.himo", done)))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            save_state(&self.state, dir.join("last.himo"))?;
        }
        log.flush().map_err(|e| Error::io("training log", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ImageBuffer;
    use crate::train::config::Precision;

    fn tiny_run(iters: u64) -> RunConfig {
        let mut run = RunConfig { precision: Precision::F64, ..RunConfig::default() };
        run.model = ModelConfig { n_layers: 2, ratios: vec![1.0, 2.0], sparsity: vec![1, 2], ..ModelConfig::tiny() };
        run.model.channels = 8;
        run.model.expert_dim = 8;
        run.train = super::super::config::TrainConfig {
            total_iters: iters,
            warmup_iters: 1,
            decay_points: vec![],
            batch_size: 2,
            patch: 8,
            base_lr: 1e-3,
            checkpoint_every: 0,
            ..Default::default()
        };
        run
    }

    fn pairs() -> Vec<ImagePair> {
        let hr = ImageBuffer::new(24, 24, (0..24 * 24 * 3).map(|i| ((i * 37) % 256) as u8).collect()).unwrap();
        let lr = crate::data::bicubic_downsample(&hr, 2).unwrap();
        vec![ImagePair { name: "a".into(), hr, lr }]
    }

    #[test]
    fn same_seed_same_losses_and_zero_lr_is_inert() {
        let p = pairs();
        let losses = |run: RunConfig| {
            let mut tr = Trainer::<f64>::new(TrainState::new(run).unwrap(), &p).unwrap();
            (0..3).map(|_| tr.step().unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(losses(tiny_run(3)), losses(tiny_run(3)));

        let mut run = tiny_run(3);
        run.train.base_lr = 0.0;
        let state = TrainState::<f64>::new(run).unwrap();
        let before = state.weights.clone();
        let mut tr = Trainer::new(state, &p).unwrap();
        tr.step().unwrap();
        for ((_, a), (_, b)) in before.iter().zip(tr.state.weights.iter()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn nan_reports_parameter() {
        let p = pairs();
        let mut state = TrainState::<f64>::new(tiny_run(2)).unwrap();
        state.weights.get_mut("head.b").unwrap().data_mut()[0] = f64::NAN;
        let mut tr = Trainer::new(state, &p).unwrap();
        let e = tr.step().unwrap_err().to_string();
        assert!(e.contains("head.b"), "{e}");
    }

    #[test]
    fn checkpoint_round_trip_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let p = pairs();
        let mut full = Trainer::<f64>::new(TrainState::new(tiny_run(4)).unwrap(), &p).unwrap();
        let mut log_full = Vec::new();
        full.run(None, &mut log_full).unwrap();

        let mut first = Trainer::<f64>::new(TrainState::new(tiny_run(4)).unwrap(), &p).unwrap();
        let mut log = Vec::new();
        for _ in 0..2 {
            let t = first.state.iter;
            let lr = lr_at(&first.state.run.train, t);
            let l = first.step().unwrap();
            writeln!(log, "{}\t{}\t{}", t, l, lr).unwrap();
        }
        let a = dir.path().join("a.himo");
        save_state(&first.state, &a).unwrap();
        let loaded = load_state::<f64>(&a, None).unwrap();
        assert_eq!(loaded.iter, first.state.iter);
        assert_eq!(loaded.opt, first.state.opt);
        for ((na, a), (nb, b)) in loaded.weights.iter().zip(first.state.weights.iter()) {
            assert_eq!((na, a.data()), (nb, b.data()));
        }
        let b = dir.path().join("b.himo");
        save_state(&loaded, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

        let mut resumed = Trainer::new(loaded, &p).unwrap();
        resumed.run(None, &mut log).unwrap();
        assert_eq!(String::from_utf8(log).unwrap(), String::from_utf8(log_full).unwrap());
    }
}
