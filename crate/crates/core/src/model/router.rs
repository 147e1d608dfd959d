use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::topk_select;
use crate::real::Real;
use crate::tensor::{Graph, Tensor, Var};

use super::config::SelectionStrategy;

/// Tokens one expert attends over, with their router scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertSelection<T> {
    pub indices: Vec<usize>,
    pub gates: Vec<T>,
}

/// Per-expert selections for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct RouterSelection<T> {
    pub experts: Vec<ExpertSelection<T>>,
}

impl<T: Real> RouterSelection<T> {
    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    /// Replaces every gate with 1.
    pub fn with_unit_gates(mut self) -> Self {
        for e in &mut self.experts {
            e.gates.iter_mut().for_each(|g| *g = T::one());
        }
        self
    }
}

/// `σ(X·W_r)`: per-token, per-expert selection scores in (0, 1).
pub fn route_scores<T: Real>(g: &mut Graph<T>, tokens: Var, router: Var) -> Result<Var> {
    let logits = g.matmul(tokens, router)?;
    Ok(g.sigmoid(logits))
}

/// Mixes seed components into one generator seed (splitmix64 finaliser).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

/// Picks `k` tokens per expert from scores `r[n×m]` (row-major slice).
///
/// Gates always read the router score at the chosen index, whatever the
/// strategy. `seed` only matters for [`SelectionStrategy::Random`].
pub fn select_from_scores<T: Real>(
    r: &[T],
    n: usize,
    m: usize,
    k: usize,
    strategy: SelectionStrategy,
    seed: u64,
) -> Result<RouterSelection<T>> {
    if k == 0 || k > n {
        return Err(Error::contract("select_tokens", format!("k={} outside 1..={}", k, n)));
    }
    if r.len() != n * m {
        return Err(Error::dim("select_tokens", format!("{} scores for {}x{}", r.len(), n, m)));
    }
    let mut experts = Vec::with_capacity(m);
    for h in 0..m {
        let column: Vec<T> = (0..n).map(|i| r[i * m + h]).collect();
        let indices = match strategy {
            SelectionStrategy::ContentAware => topk_select(&column, k)?,
            SelectionStrategy::Sequential => (0..k).collect(),
            SelectionStrategy::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, h as u64]));
                rand::seq::index::sample(&mut rng, n, k).into_vec()
            }
        };
        let gates = indices.iter().map(|&i| column[i]).collect();
        experts.push(ExpertSelection { indices, gates });
    }
    Ok(RouterSelection { experts })
}

/// Token selection from a score tensor `[n, m]`.
pub fn select_tokens<T: Real>(
    scores: &Tensor<T>,
    k: usize,
    strategy: SelectionStrategy,
    seed: u64,
) -> Result<RouterSelection<T>> {
    let [n, m] = scores.shape()[..] else {
        return Err(Error::dim("select_tokens", format!("expected [n, m], got {:?}", scores.shape())));
    };
    select_from_scores(scores.data(), n, m, k, strategy, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(v: &[f64]) -> Tensor<f64> {
        Tensor::new(&[v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn zero_router_gives_half() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[5, 3], |i| i as f64 - 4.0));
        let w = g.constant(Tensor::zeros(&[3, 2]));
        let r = route_scores(&mut g, x, w).unwrap();
        assert!(g.value(r).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn single_token_hand_value() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
        let w = g.constant(Tensor::new(&[2, 1], vec![0.5, -0.25]).unwrap());
        let r = route_scores(&mut g, x, w).unwrap();
        // logit = 0.5 - 0.5 = 0
        assert_eq!(g.value(r).data(), &[0.5]);
    }

    #[test]
    fn content_aware_example() {
        let sel = select_tokens(&column(&[0.9, 0.1, 0.8, 0.5]), 2, SelectionStrategy::ContentAware, 0).unwrap();
        assert_eq!(sel.experts[0].indices, vec![0, 2]);
        assert_eq!(sel.experts[0].gates, vec![0.9, 0.8]);
    }

    #[test]
    fn sequential_ignores_scores() {
        let sel = select_tokens(&column(&[0.1, 0.2, 0.9, 0.8, 0.7]), 3, SelectionStrategy::Sequential, 0).unwrap();
        assert_eq!(sel.experts[0].indices, vec![0, 1, 2]);
        assert_eq!(sel.experts[0].gates, vec![0.1, 0.2, 0.9]);
    }

    #[test]
    fn random_is_seeded_and_distinct() {
        let r = Tensor::from_fn(&[32, 2], |i| (i as f64 * 0.1).sin().abs());
        let a = select_tokens(&r, 8, SelectionStrategy::Random, 11).unwrap();
        let b = select_tokens(&r, 8, SelectionStrategy::Random, 11).unwrap();
        assert_eq!(a, b);
        for e in &a.experts {
            let mut s = e.indices.clone();
            s.sort();
            s.dedup();
            assert_eq!(s.len(), 8);
            assert!(s.iter().all(|&i| i < 32));
        }
    }

    #[test]
    fn full_selection_at_unit_sparsity() {
        let r = Tensor::from_fn(&[6, 3], |i| ((i * 5) % 7) as f64 / 7.0);
        let sel = select_tokens(&r, 6, SelectionStrategy::ContentAware, 0).unwrap();
        for e in sel.experts {
            let mut s = e.indices;
            s.sort();
            assert_eq!(s, (0..6).collect::<Vec<_>>());
        }
    }

    #[test]
    fn k_out_of_range() {
        assert!(select_tokens(&column(&[0.5, 0.5]), 3, SelectionStrategy::ContentAware, 0).is_err());
    }
}
