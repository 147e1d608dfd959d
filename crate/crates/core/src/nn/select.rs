use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::linalg::add_into;
use crate::tensor::{Function, Graph, Tensor, Var};

/// Indices of the `k` largest scores, ordered by descending score and then
/// ascending index.
pub fn topk_select<T: Real>(scores: &[T], k: usize) -> Result<Vec<usize>> {
    let n = scores.len();
    if k == 0 || k > n {
        return Err(Error::contract("topk_select", format!("k={} outside 1..={}", k, n)));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let order = |&a: &usize, &b: &usize| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    };
    if k < n {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_by(order);
    Ok(idx)
}

fn check_indices(op: &'static str, idx: &[usize], n: usize) -> Result<()> {
    if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
        return Err(Error::contract(op, format!("index {} out of range for {} rows", bad, n)));
    }
    Ok(())
}

fn rows(op: &'static str, s: &[usize]) -> Result<(usize, usize)> {
    match s {
        [n, d] => Ok((*n, *d)),
        _ => Err(Error::dim(op, format!("expected [n, d], got {:?}", s))),
    }
}

struct GatherRows {
    idx: Vec<usize>,
    n: usize,
    d: usize,
}

impl<T: Real> Function<T> for GatherRows {
    fn name(&self) -> &'static str {
        "gather_rows"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let d = self.d;
        let mut dx = vec![T::zero(); self.n * d];
        for (j, &i) in self.idx.iter().enumerate() {
            add_into(&mut dx[i * d..(i + 1) * d], &g[j * d..(j + 1) * d]);
        }
        vec![Some(dx)]
    }
}

struct ScatterAddRows {
    idx: Vec<usize>,
    d: usize,
}

impl<T: Real> Function<T> for ScatterAddRows {
    fn name(&self) -> &'static str {
        "scatter_add_rows"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let d = self.d;
        let mut drows = Vec::with_capacity(self.idx.len() * d);
        for &i in &self.idx {
            drows.extend_from_slice(&g[i * d..(i + 1) * d]);
        }
        vec![Some(g.to_vec()), Some(drows)]
    }
}

impl<T: Real> Graph<T> {
    /// `x[idx[j]]` for each j.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (n, d) = rows("gather_rows", self.shape(x))?;
        check_indices("gather_rows", idx, n)?;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let out = Tensor::new(&[idx.len(), d], data)?;
        Ok(self.record(Box::new(GatherRows { idx: idx.to_vec(), n, d }), &[x], out))
    }

    /// `acc` with `rows[j]` added at row `idx[j]`; repeated indices accumulate.
    pub fn scatter_add_rows(&mut self, acc: Var, idx: &[usize], rows_var: Var) -> Result<Var> {
        let (n, d) = rows("scatter_add_rows", self.shape(acc))?;
        let (k, d2) = rows("scatter_add_rows", self.shape(rows_var))?;
        if d != d2 || k != idx.len() {
            return Err(Error::dim(
                "scatter_add_rows",
                format!("acc {:?}, rows {:?}, {} indices", self.shape(acc), self.shape(rows_var), idx.len()),
            ));
        }
        check_indices("scatter_add_rows", idx, n)?;
        let mut data = self.value(acc).data().to_vec();
        let src = self.value(rows_var).data();
        for (j, &i) in idx.iter().enumerate() {
            add_into(&mut data[i * d..(i + 1) * d], &src[j * d..(j + 1) * d]);
        }
        let out = Tensor::new(&[n, d], data)?;
        Ok(self.record(Box::new(ScatterAddRows { idx: idx.to_vec(), d }), &[acc, rows_var], out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topk_hand_example() {
        assert_eq!(topk_select(&[0.9, 0.1, 0.8, 0.5], 2).unwrap(), vec![0, 2]);
    }

    #[test]
    fn topk_ties_take_lowest_index() {
        assert_eq!(topk_select(&[0.3f64; 5], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(topk_select(&[0.1, 0.5, 0.2, 0.5, 0.5], 2).unwrap(), vec![1, 3]);
    }

    #[test]
    fn topk_k_out_of_range() {
        assert!(topk_select(&[1.0, 2.0], 3).is_err());
        assert!(topk_select(&[1.0, 2.0], 0).is_err());
    }

    #[test]
    fn gather_identity_and_scatter_roundtrip() {
        let mut g = Graph::<f64>::new();
        let t = Tensor::from_fn(&[4, 3], |i| i as f64 + 1.0);
        let x = g.constant(t.clone());
        let all = g.gather_rows(x, &[0, 1, 2, 3]).unwrap();
        assert_eq!(g.value(all).data(), t.data());

        let idx = [2, 0];
        let picked = g.gather_rows(x, &idx).unwrap();
        let zeros = g.constant(Tensor::zeros(&[4, 3]));
        let back = g.scatter_add_rows(zeros, &idx, picked).unwrap();
        let v = g.value(back).data();
        assert_eq!(&v[0..3], &t.data()[0..3]);
        assert_eq!(&v[3..6], &[0.0; 3]);
        assert_eq!(&v[6..9], &t.data()[6..9]);
        assert_eq!(&v[9..12], &[0.0; 3]);
    }

    #[test]
    fn duplicate_scatter_indices_accumulate() {
        let mut g = Graph::<f64>::new();
        let acc = g.constant(Tensor::zeros(&[2, 1]));
        let r = g.constant(Tensor::new(&[2, 1], vec![1.5, 2.0]).unwrap());
        let y = g.scatter_add_rows(acc, &[1, 1], r).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 3.5]);
    }

    #[test]
    fn out_of_range_index() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.gather_rows(x, &[2]), Err(Error::Contract { .. })));
    }
}
