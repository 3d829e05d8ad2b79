//! Minimal dense tensors, a named parameter store shared by the trainable
//! models, and the handful of matrix kernels they need.
//!
//! Models are generic over [`Real`] so that training runs in `f32` while
//! gradient checks run the exact same code in `f64`. Reductions always
//! accumulate in `f64`.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::Rng;
use sha2::{Digest, Sha256};

pub trait Real:
    Float
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn widen(self) -> f64;
    fn narrow(v: f64) -> Self;
    /// Size tag written into checkpoints.
    const BYTES: usize;
}

impl Real for f32 {
    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }
    #[inline]
    fn narrow(v: f64) -> Self {
        v as f32
    }
    const BYTES: usize = 4;
}

impl Real for f64 {
    #[inline]
    fn widen(self) -> f64 {
        self
    }
    #[inline]
    fn narrow(v: f64) -> Self {
        v
    }
    const BYTES: usize = 8;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub trainable: bool,
}

impl<T: Real> Tensor<T> {
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// SHA-256 over the little-endian f64 image of every value.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.data {
            h.update(v.widen().to_bits().to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }
}

/// Owns every tensor of a model in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { tensors: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<T>, trainable: bool) -> ParamId {
        let name = name.into();
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "tensor `{name}` data does not match shape {shape:?}"
        );
        self.tensors.push(Tensor {
            name,
            shape: shape.to_vec(),
            data,
            trainable,
        });
        ParamId(self.tensors.len() - 1)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize], trainable: bool) -> ParamId {
        let n = shape.iter().product();
        self.add(name, shape, vec![T::zero(); n], trainable)
    }

    pub fn filled(&mut self, name: impl Into<String>, shape: &[usize], value: T, trainable: bool) -> ParamId {
        let n = shape.iter().product();
        self.add(name, shape, vec![value; n], trainable)
    }

    /// Uniform(-bound, bound) initialization.
    pub fn uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
        trainable: bool,
    ) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::narrow(rng.gen_range(-bound..bound))).collect();
        self.add(name, shape, data, trainable)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn data(&self, id: ParamId) -> &[T] {
        &self.tensors[id.0].data
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.tensors.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, t)| t.trainable).map(|(id, _)| id).collect()
    }

    pub fn into_tensors(self) -> Vec<Tensor<T>> {
        self.tensors
    }

    pub fn from_tensors(tensors: Vec<Tensor<T>>) -> Self {
        ParamStore { tensors }
    }
}

/// Gradient buffers aligned with a [`ParamStore`]; frozen tensors get none.
#[derive(Debug, Clone)]
pub struct Grads<T> {
    bufs: Vec<Vec<T>>,
}

impl<T: Real> Grads<T> {
    pub fn zeros(store: &ParamStore<T>) -> Self {
        Grads {
            bufs: store
                .iter()
                .map(|(_, t)| if t.trainable { vec![T::zero(); t.numel()] } else { Vec::new() })
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for b in &mut self.bufs {
            b.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Gradient buffer for `id`, empty when the tensor is frozen.
    pub fn get(&self, id: ParamId) -> &[T] {
        &self.bufs[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.bufs[id.0]
    }

    pub fn is_tracked(&self, id: ParamId) -> bool {
        !self.bufs[id.0].is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.bufs.iter().flatten().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0f64;
    for (&x, &y) in a.iter().zip(b) {
        acc += x.widen() * y.widen();
    }
    T::narrow(acc)
}

#[inline]
pub fn norm<T: Real>(a: &[T]) -> f64 {
    a.iter().map(|v| v.widen() * v.widen()).sum::<f64>().sqrt()
}

/// `out[j] = sum_k w[j][k] * x[k] + b[j]` for row-major `w` of shape `out x in`.
pub fn affine<T: Real>(w: &[T], b: &[T], x: &[T], out: &mut [T]) {
    let n_in = x.len();
    for (j, o) in out.iter_mut().enumerate() {
        *o = T::narrow(dot(&w[j * n_in..(j + 1) * n_in], x).widen() + b[j].widen());
    }
}

/// `c = a (n x k) . b (k x m)`, all row-major.
pub fn matmul<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    let mut out = vec![T::zero(); n * m];
    let mut acc = vec![0f64; m];
    for i in 0..n {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for kk in 0..k {
            let aik = a[i * k + kk].widen();
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * m..(kk + 1) * m];
            for (s, &bv) in acc.iter_mut().zip(brow) {
                *s += aik * bv.widen();
            }
        }
        for (o, &s) in out[i * m..(i + 1) * m].iter_mut().zip(&acc) {
            *o = T::narrow(s);
        }
    }
    out
}

/// `c = a (n x m) . b^T` where `b` is `k x m`; result `n x k`.
pub fn matmul_bt<T: Real>(a: &[T], b: &[T], n: usize, m: usize, k: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), n * m);
    debug_assert_eq!(b.len(), k * m);
    let mut out = vec![T::zero(); n * k];
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        for j in 0..k {
            out[i * k + j] = dot(arow, &b[j * m..(j + 1) * m]);
        }
    }
    out
}

/// `acc += a^T . g` where `a` is `n x k` and `g` is `n x m`; `acc` is `k x m`.
pub fn matmul_at_acc<T: Real>(a: &[T], g: &[T], n: usize, k: usize, m: usize, acc: &mut [T]) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(g.len(), n * m);
    debug_assert_eq!(acc.len(), k * m);
    let mut tmp = vec![0f64; k * m];
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for kk in 0..k {
            let aik = a[i * k + kk].widen();
            if aik == 0.0 {
                continue;
            }
            for (t, &gv) in tmp[kk * m..(kk + 1) * m].iter_mut().zip(grow) {
                *t += aik * gv.widen();
            }
        }
    }
    for (a, t) in acc.iter_mut().zip(tmp) {
        *a = T::narrow(a.widen() + t);
    }
}

pub fn to_real<T: Real>(xs: &[f32]) -> Vec<T> {
    xs.iter().map(|&v| T::narrow(v as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3x2
        assert_eq!(matmul(&a, &b, 2, 3, 2), vec![4.0, 5.0, 10.0, 11.0]);
        let bt = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0]; // b^T as 2x3
        assert_eq!(matmul_bt(&a, &bt, 2, 3, 2), vec![4.0, 5.0, 10.0, 11.0]);
    }

    #[test]
    fn at_acc_matches_explicit_transpose() {
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]; // 3x2
        let g = [1.0, -1.0, 0.5, 2.0, 0.0, 1.0]; // 3x2
        let mut acc = vec![0.0; 4];
        matmul_at_acc(&a, &g, 3, 2, 2, &mut acc);
        let at = [1.0, 3.0, 5.0, 2.0, 4.0, 6.0];
        assert_eq!(acc, matmul(&at, &g, 2, 3, 2));
    }

    #[test]
    fn frozen_tensors_have_no_grad() {
        let mut s = ParamStore::<f32>::new();
        let a = s.zeros("a", &[2, 2], true);
        let b = s.zeros("b", &[3], false);
        let g = Grads::zeros(&s);
        assert!(g.is_tracked(a));
        assert!(!g.is_tracked(b));
        assert_eq!(s.trainable_ids(), vec![a]);
    }

    #[test]
    fn checksum_sees_single_bit() {
        let mut s = ParamStore::<f32>::new();
        let a = s.filled("a", &[4], 1.0, false);
        let before = s.get(a).checksum();
        s.get_mut(a).data[3] = f32::from_bits(1.0f32.to_bits() + 1);
        assert_ne!(before, s.get(a).checksum());
    }
}
