//! Reverse-mode automatic differentiation over a tape of op records.
//!
//! A `Graph` owns every tensor produced during a forward pass. Ops append
//! nodes in topological order; `backward` replays the tape in reverse,
//! accumulating gradients for every node that requires them. Graphs are
//! single-threaded; independent graphs may live on separate threads.

use crate::dtype::Real;
use crate::error::TensorError;
use crate::linalg;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[&Tensor<T>], &Tensor<T>) -> Vec<Tensor<T>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    poisoned: Option<&'static str>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), poisoned: None }
    }

    /// First op that produced a non-finite output, if any. Callers turn this
    /// into an error instead of letting NaNs propagate silently.
    pub fn poisoned(&self) -> Option<&'static str> {
        self.poisoned
    }

    pub fn check_finite(&self) -> Result<(), TensorError> {
        match self.poisoned {
            Some(op) => Err(TensorError::NonFinite { op }),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, vec![], None, false)
    }

    /// Leaf parameter; `backward` will produce a gradient for it.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, vec![], None, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` call with respect to `v`, if any path
    /// reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn grad_or_zeros(&self, v: Var) -> Tensor<T> {
        match self.grads[v.0].as_ref() {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes[v.0].value.shape()),
        }
    }

    fn push(
        &mut self,
        value: Tensor<T>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
        requires_grad: bool,
    ) -> Var {
        // leaves may hold anything; op outputs must stay finite
        if self.poisoned.is_none() && !parents.is_empty() && !value.all_finite() {
            self.poisoned = Some("forward");
        }
        self.nodes.push(Node { value, parents, backward, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push_op(
        &mut self,
        value: Tensor<T>,
        parents: Vec<Var>,
        backward: BackwardFn<T>,
    ) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let parent_ids = parents.iter().map(|p| p.0).collect();
        self.push(value, parent_ids, Some(backward), requires_grad)
    }

    // ---- elementwise binary ops ------------------------------------------

    /// Valid operand pairing: identical shapes, or `b`'s shape equal to a
    /// trailing suffix of `a`'s (broadcast over the leading extents only).
    fn check_broadcast(
        op: &'static str,
        a: &[usize],
        b: &[usize],
    ) -> Result<(), TensorError> {
        if a.len() >= b.len() && a[a.len() - b.len()..] == *b {
            Ok(())
        } else {
            Err(TensorError::shape(op, format!("{:?} vs {:?}", a, b)))
        }
    }

    fn binary_elementwise(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        fwd: impl Fn(T, T) -> T,
        back: impl Fn(T, T, T) -> (T, T) + 'static,
    ) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        Self::check_broadcast(op, av.shape(), bv.shape())?;
        let bn = bv.numel();
        let data: Vec<T> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| fwd(x, bv.data()[i % bn]))
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let backward: BackwardFn<T> = Box::new(move |g, parents, _| {
            let (av, bv) = (parents[0], parents[1]);
            let bn = bv.numel();
            let mut ga = Tensor::zeros(av.shape());
            let mut gb = Tensor::zeros(bv.shape());
            for (i, &gi) in g.data().iter().enumerate() {
                let (da, db) = back(av.data()[i], bv.data()[i % bn], gi);
                ga.data_mut()[i] = da;
                gb.data_mut()[i % bn] = gb.data()[i % bn] + db;
            }
            vec![ga, gb]
        });
        Ok(self.push_op(out, vec![a, b], backward))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_elementwise("add", a, b, |x, y| x + y, |_, _, g| (g, g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, |_, _, g| (g, -g))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, |x, y, g| (g * y, g * x))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push_op(out, vec![a], Box::new(|g, _, _| vec![g.clone()]))
    }

    pub fn mul_scalar(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push_op(out, vec![a], Box::new(move |g, _, _| vec![g.map(|x| x * c)]))
    }

    // ---- matrix products --------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.value(a).rows_cols()?;
        let (k2, n) = self.value(b).rows_cols()?;
        if k != k2 {
            return Err(TensorError::shape(
                "matmul",
                format!("{:?} x {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut out = Tensor::zeros(&[m, n]);
        linalg::matmul_into(self.value(a).data(), self.value(b).data(), out.data_mut(), m, k, n);
        let backward: BackwardFn<T> = Box::new(move |g, parents, _| {
            let (av, bv) = (parents[0], parents[1]);
            let mut ga = Tensor::zeros(&[m, k]);
            linalg::matmul_tb_into(g.data(), bv.data(), ga.data_mut(), m, n, k);
            let mut gb = Tensor::zeros(&[k, n]);
            linalg::matmul_ta_into(av.data(), g.data(), gb.data_mut(), m, k, n);
            vec![ga, gb]
        });
        Ok(self.push_op(out, vec![a, b], backward))
    }

    /// out = a * b^T for a[m,k], b[n,k].
    pub fn matmul_tb(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.value(a).rows_cols()?;
        let (n, k2) = self.value(b).rows_cols()?;
        if k != k2 {
            return Err(TensorError::shape(
                "matmul_tb",
                format!("{:?} x {:?}^T", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut out = Tensor::zeros(&[m, n]);
        linalg::matmul_tb_into(self.value(a).data(), self.value(b).data(), out.data_mut(), m, k, n);
        let backward: BackwardFn<T> = Box::new(move |g, parents, _| {
            let (av, bv) = (parents[0], parents[1]);
            let mut ga = Tensor::zeros(&[m, k]);
            linalg::matmul_into(g.data(), bv.data(), ga.data_mut(), m, n, k);
            let mut gb = Tensor::zeros(&[n, k]);
            linalg::matmul_ta_into(g.data(), av.data(), gb.data_mut(), m, n, k);
            vec![ga, gb]
        });
        Ok(self.push_op(out, vec![a, b], backward))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let (m, n) = self.value(a).rows_cols()?;
        let av = self.value(a).data();
        let mut out = Tensor::zeros(&[n, m]);
        for i in 0..m {
            for j in 0..n {
                out.data_mut()[j * m + i] = av[i * n + j];
            }
        }
        let backward: BackwardFn<T> = Box::new(move |g, _, _| {
            let mut ga = Tensor::zeros(&[m, n]);
            for j in 0..n {
                for i in 0..m {
                    ga.data_mut()[i * n + j] = g.data()[j * m + i];
                }
            }
            vec![ga]
        });
        Ok(self.push_op(out, vec![a], backward))
    }

    // ---- row-wise softmax family ------------------------------------------

    fn softmax_row_into(row: &[T], out: &mut [T]) {
        let mut mx = row[0];
        for &x in row {
            if x > mx {
                mx = x;
            }
        }
        let mut z = T::zero();
        for (o, &x) in out.iter_mut().zip(row.iter()) {
            let e = (x - mx).exp();
            *o = e;
            z = z + e;
        }
        for o in out.iter_mut() {
            *o = *o / z;
        }
    }

    /// Row-stochastic softmax along the last axis; stabilized via max
    /// subtraction. Errors on non-finite input.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = self.value(a);
        if !v.all_finite() {
            return Err(TensorError::NonFinite { op: "softmax" });
        }
        let (m, n) = v.rows_cols()?;
        let mut out = Tensor::zeros(v.shape());
        for i in 0..m {
            Self::softmax_row_into(&v.data()[i * n..(i + 1) * n], &mut out.data_mut()[i * n..(i + 1) * n]);
        }
        let backward: BackwardFn<T> = Box::new(move |g, _, outv| {
            let mut ga = Tensor::zeros(outv.shape());
            for i in 0..m {
                let s = &outv.data()[i * n..(i + 1) * n];
                let gi = &g.data()[i * n..(i + 1) * n];
                let dot: T = s.iter().zip(gi.iter()).map(|(&si, &gg)| si * gg).sum();
                let row = &mut ga.data_mut()[i * n..(i + 1) * n];
                for ((o, &si), &gg) in row.iter_mut().zip(s.iter()).zip(gi.iter()) {
                    *o = si * (gg - dot);
                }
            }
            vec![ga]
        });
        Ok(self.push_op(out, vec![a], backward))
    }

    /// log(softmax(x)) along the last axis, computed as x - max - log(sum exp).
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = self.value(a);
        if !v.all_finite() {
            return Err(TensorError::NonFinite { op: "log_softmax" });
        }
        let (m, n) = v.rows_cols()?;
        let mut out = Tensor::zeros(v.shape());
        for i in 0..m {
            let row = &v.data()[i * n..(i + 1) * n];
            let mut mx = row[0];
            for &x in row {
                if x > mx {
                    mx = x;
                }
            }
            let z: T = row.iter().map(|&x| (x - mx).exp()).sum();
            let lz = z.ln() + mx;
            for (o, &x) in out.data_mut()[i * n..(i + 1) * n].iter_mut().zip(row.iter()) {
                *o = x - lz;
            }
        }
        let backward: BackwardFn<T> = Box::new(move |g, _, outv| {
            let mut ga = Tensor::zeros(outv.shape());
            for i in 0..m {
                let l = &outv.data()[i * n..(i + 1) * n];
                let gi = &g.data()[i * n..(i + 1) * n];
                let gsum: T = gi.iter().copied().sum();
                let row = &mut ga.data_mut()[i * n..(i + 1) * n];
                for ((o, &li), &gg) in row.iter_mut().zip(l.iter()).zip(gi.iter()) {
                    *o = gg - li.exp() * gsum;
                }
            }
            vec![ga]
        });
        Ok(self.push_op(out, vec![a], backward))
    }

    // ---- activations and normalization -------------------------------------

    /// GELU with the tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let c = T::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
        let k = T::from_f64(0.044715);
        let half = T::from_f64(0.5);
        let out = self.value(a).map(|x| {
            let u = c * (x + k * x * x * x);
            half * x * (T::one() + u.tanh())
        });
        let backward: BackwardFn<T> = Box::new(move |g, parents, _| {
            let xv = parents[0];
            let mut ga = Tensor::zeros(xv.shape());
            for (o, (&x, &gg)) in
                ga.data_mut().iter_mut().zip(xv.data().iter().zip(g.data().iter()))
            {
                let u = c * (x + k * x * x * x);
                let t = u.tanh();
                let du = c * (T::one() + T::from_f64(3.0) * k * x * x);
                let d = half * (T::one() + t) + half * x * (T::one() - t * t) * du;
                *o = gg * d;
            }
            vec![ga]
        });
        self.push_op(out, vec![a], backward)
    }

    /// Per-row layer normalization with affine parameters.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var, TensorError> {
        let (m, n) = self.value(x).rows_cols()?;
        if self.value(gamma).shape() != [n] || self.value(beta).shape() != [n] {
            return Err(TensorError::shape(
                "layer_norm",
                format!("affine params must be [{}]", n),
            ));
        }
        let epsn = T::from_f64(eps);
        let inv_n = T::one() / T::from_f64(n as f64);
        let xv = self.value(x).data();
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mean: T = row.iter().copied().sum::<T>() * inv_n;
            let var: T = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let inv_std = T::one() / (var + epsn).sqrt();
            for (j, o) in out.data_mut()[i * n..(i + 1) * n].iter_mut().enumerate() {
                *o = gv[j] * ((row[j] - mean) * inv_std) + bv[j];
            }
        }
        let backward: BackwardFn<T> = Box::new(move |g, parents, _| {
            let xv = parents[0];
            let gv = parents[1].data();
            let mut gx = Tensor::zeros(xv.shape());
            let mut ggamma = Tensor::zeros(&[n]);
            let mut gbeta = Tensor::zeros(&[n]);
            for i in 0..m {
                let row = &xv.data()[i * n..(i + 1) * n];
                let gi = &g.data()[i * n..(i + 1) * n];
                let mean: T = row.iter().copied().sum::<T>() * inv_n;
                let var: T = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
                let inv_std = T::one() / (var + epsn).sqrt();
                // xhat and the two row means needed by the chain rule
                let mut g_xhat = vec![T::zero(); n];
                let mut mean_g = T::zero();
                let mut mean_gx = T::zero();
                for j in 0..n {
                    let xh = (row[j] - mean) * inv_std;
                    let gh = gi[j] * gv[j];
                    g_xhat[j] = gh;
                    mean_g = mean_g + gh;
                    mean_gx = mean_gx + gh * xh;
                    ggamma.data_mut()[j] = ggamma.data()[j] + gi[j] * xh;
                    gbeta.data_mut()[j] = gbeta.data()[j] + gi[j];
                }
                mean_g = mean_g * inv_n;
                mean_gx = mean_gx * inv_n;
                for j in 0..n {
                    let xh = (row[j] - mean) * inv_std;
                    gx.data_mut()[i * n + j] = inv_std * (g_xhat[j] - mean_g - xh * mean_gx);
                }
            }
            vec![gx, ggamma, gbeta]
        });
        Ok(self.push_op(out, vec![x, gamma, beta], backward))
    }

    // ---- pointwise transcendental ops ---------------------------------------

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.exp());
        let backward: BackwardFn<T> = Box::new(|g, _, outv| {
            let mut ga = Tensor::zeros(outv.shape());
            for (o, (&e, &gg)) in ga.data_mut().iter_mut().zip(outv.data().iter().zip(g.data())) {
                *o = gg * e;
            }
            vec![ga]
        });
        self.push_op(out, vec![a], backward)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        if self.value(a).data().iter().any(|v| *v <= T::zero()) {
            return Err(TensorError::contract("log", "non-positive input"));
        }
        let out = self.value(a).map(|x| x.ln());
        let backward: BackwardFn<T> = Box::new(|g, parents, _| {
            let xv = parents[0];
            let mut ga = Tensor::zeros(xv.shape());
            for (o, (&x, &gg)) in ga.data_mut().iter_mut().zip(xv.data().iter().zip(g.data())) {
                *o = gg / x;
            }
            vec![ga]
        });
        Ok(self.push_op(out, vec![a], backward))
    }

    // ---- reductions ---------------------------------------------------------

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        let backward: BackwardFn<T> = Box::new(|g, parents, _| {
            let gs = g.data()[0];
            vec![Tensor::full(parents[0].shape(), gs)]
        });
        self.push_op(Tensor::scalar(s), vec![a], backward)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let numel = self.value(a).numel();
        let inv = T::one() / T::from_f64(numel as f64);
        let s: T = self.value(a).data().iter().copied().sum::<T>() * inv;
        let backward: BackwardFn<T> = Box::new(move |g, parents, _| {
            let gs = g.data()[0] * inv;
            vec![Tensor::full(parents[0].shape(), gs)]
        });
        self.push_op(Tensor::scalar(s), vec![a], backward)
    }

    /// Sum along the last axis: [m, n] -> [m].
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let (m, n) = self.value(a).rows_cols()?;
        let v = self.value(a).data();
        let out = Tensor::from_fn(&[m], |i| v[i * n..(i + 1) * n].iter().copied().sum());
        let backward: BackwardFn<T> = Box::new(move |g, parents, _| {
            let mut ga = Tensor::zeros(parents[0].shape());
            for i in 0..m {
                let gi = g.data()[i];
                for o in ga.data_mut()[i * n..(i + 1) * n].iter_mut() {
                    *o = gi;
                }
            }
            vec![ga]
        });
        Ok(self.push_op(out, vec![a], backward))
    }

    // ---- indexing and structure ops ------------------------------------------

    /// out[i] = a[i, idx[i]] for a [m, n] and idx of length m.
    pub fn gather_index(&mut self, a: Var, idx: Vec<usize>) -> Result<Var, TensorError> {
        let (m, n) = self.value(a).rows_cols()?;
        if idx.len() != m || idx.iter().any(|&j| j >= n) {
            return Err(TensorError::contract(
                "gather_index",
                format!("need {} indices below {}", m, n),
            ));
        }
        let v = self.value(a).data();
        let out = Tensor::from_fn(&[m], |i| v[i * n + idx[i]]);
        let backward: BackwardFn<T> = Box::new(move |g, parents, _| {
            let mut ga = Tensor::zeros(parents[0].shape());
            for (i, &j) in idx.iter().enumerate() {
                ga.data_mut()[i * n + j] = g.data()[i];
            }
            vec![ga]
        });
        Ok(self.push_op(out, vec![a], backward))
    }

    /// Select rows of a [m, n] matrix; duplicate indices are allowed.
    pub fn select_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var, TensorError> {
        let (m, n) = self.value(a).rows_cols()?;
        if idx.iter().any(|&i| i >= m) {
            return Err(TensorError::contract("select_rows", "row index out of range"));
        }
        let v = self.value(a).data();
        let k = idx.len();
        let mut out = Tensor::zeros(&[k, n]);
        for (r, &i) in idx.iter().enumerate() {
            out.data_mut()[r * n..(r + 1) * n].copy_from_slice(&v[i * n..(i + 1) * n]);
        }
        let backward: BackwardFn<T> = Box::new(move |g, parents, _| {
            let mut ga = Tensor::zeros(parents[0].shape());
            for (r, &i) in idx.iter().enumerate() {
                let grow = &g.data()[r * n..(r + 1) * n];
                let arow = &mut ga.data_mut()[i * n..(i + 1) * n];
                for (o, &gg) in arow.iter_mut().zip(grow.iter()) {
                    *o = *o + gg;
                }
            }
            vec![ga]
        });
        Ok(self.push_op(out, vec![a], backward))
    }

    /// Replace entries where the mask is true with `fill`; gradient is zero there.
    pub fn masked_fill(
        &mut self,
        a: Var,
        mask: Vec<bool>,
        fill: T,
    ) -> Result<Var, TensorError> {
        let v = self.value(a);
        if mask.len() != v.numel() {
            return Err(TensorError::shape(
                "masked_fill",
                format!("mask length {} vs {} elements", mask.len(), v.numel()),
            ));
        }
        let data: Vec<T> = v
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(&x, &m)| if m { fill } else { x })
            .collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        let backward: BackwardFn<T> = Box::new(move |g, parents, _| {
            let mut ga = Tensor::zeros(parents[0].shape());
            for ((o, &gg), &m) in ga.data_mut().iter_mut().zip(g.data()).zip(mask.iter()) {
                if !m {
                    *o = gg;
                }
            }
            vec![ga]
        });
        Ok(self.push_op(out, vec![a], backward))
    }

    pub fn slice_cols(&mut self, a: Var, from: usize, to: usize) -> Result<Var, TensorError> {
        let (m, n) = self.value(a).rows_cols()?;
        if from >= to || to > n {
            return Err(TensorError::contract(
                "slice_cols",
                format!("range {}..{} out of width {}", from, to, n),
            ));
        }
        let w = to - from;
        let v = self.value(a).data();
        let mut out = Tensor::zeros(&[m, w]);
        for i in 0..m {
            out.data_mut()[i * w..(i + 1) * w].copy_from_slice(&v[i * n + from..i * n + to]);
        }
        let backward: BackwardFn<T> = Box::new(move |g, parents, _| {
            let mut ga = Tensor::zeros(parents[0].shape());
            for i in 0..m {
                ga.data_mut()[i * n + from..i * n + to]
                    .copy_from_slice(&g.data()[i * w..(i + 1) * w]);
            }
            vec![ga]
        });
        Ok(self.push_op(out, vec![a], backward))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::contract("concat_cols", "no inputs"));
        }
        let m = self.value(parts[0]).rows_cols()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0usize;
        for &p in parts {
            let (mp, np) = self.value(p).rows_cols()?;
            if mp != m {
                return Err(TensorError::shape("concat_cols", "row counts differ"));
            }
            widths.push(np);
            total += np;
        }
        let mut out = Tensor::zeros(&[m, total]);
        let mut off = 0usize;
        for (&p, &w) in parts.iter().zip(widths.iter()) {
            let v = self.value(p).data();
            for i in 0..m {
                out.data_mut()[i * total + off..i * total + off + w]
                    .copy_from_slice(&v[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let widths_bk = widths.clone();
        let backward: BackwardFn<T> = Box::new(move |g, parents, _| {
            let mut grads = Vec::with_capacity(parents.len());
            let mut off = 0usize;
            for (p, &w) in parents.iter().zip(widths_bk.iter()) {
                let mut gp = Tensor::zeros(p.shape());
                for i in 0..m {
                    gp.data_mut()[i * w..(i + 1) * w]
                        .copy_from_slice(&g.data()[i * total + off..i * total + off + w]);
                }
                grads.push(gp);
                off += w;
            }
            grads
        });
        Ok(self.push_op(out, parts.to_vec(), backward))
    }

    /// Same storage viewed under new extents.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(a).clone().reshape(shape)?;
        let backward: BackwardFn<T> = Box::new(move |g, parents, _| {
            vec![g.clone().reshape(parents[0].shape()).expect("reshape grad")]
        });
        Ok(self.push_op(out, vec![a], backward))
    }

    /// out[i, :] = a[i, :] * s[i] for a [m, n] and s [m].
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var, TensorError> {
        let (m, n) = self.value(a).rows_cols()?;
        if self.value(s).shape() != [m] {
            return Err(TensorError::shape("scale_rows", format!("scale must be [{}]", m)));
        }
        let av = self.value(a).data();
        let sv = self.value(s).data();
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            let si = sv[i];
            for (o, &x) in out.data_mut()[i * n..(i + 1) * n].iter_mut().zip(&av[i * n..(i + 1) * n])
            {
                *o = x * si;
            }
        }
        let backward: BackwardFn<T> = Box::new(move |g, parents, _| {
            let (av, sv) = (parents[0], parents[1]);
            let mut ga = Tensor::zeros(av.shape());
            let mut gs = Tensor::zeros(sv.shape());
            for i in 0..m {
                let si = sv.data()[i];
                let mut acc = T::zero();
                for j in 0..n {
                    let gg = g.data()[i * n + j];
                    ga.data_mut()[i * n + j] = gg * si;
                    acc = acc + gg * av.data()[i * n + j];
                }
                gs.data_mut()[i] = acc;
            }
            vec![ga, gs]
        });
        Ok(self.push_op(out, vec![a, s], backward))
    }

    // ---- backward driver ------------------------------------------------------

    /// Reverse sweep from a scalar loss. Gradients accumulate into the graph
    /// and are queried with [`Graph::grad`]. Visits each node at most once,
    /// in reverse topological (creation) order.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.nodes[loss.0].value.shape()),
            ));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            if let Some(backward) = &self.nodes[i].backward {
                let parent_vals: Vec<&Tensor<T>> = self.nodes[i]
                    .parents
                    .iter()
                    .map(|&p| &self.nodes[p].value)
                    .collect();
                let parent_grads = backward(&g, &parent_vals, &self.nodes[i].value);
                debug_assert_eq!(parent_grads.len(), self.nodes[i].parents.len());
                let parents = self.nodes[i].parents.clone();
                for (p, pg) in parents.into_iter().zip(parent_grads) {
                    if !self.nodes[p].requires_grad {
                        continue;
                    }
                    if self.poisoned.is_none() && !pg.all_finite() {
                        self.poisoned = Some("backward");
                    }
                    match &mut self.grads[p] {
                        Some(acc) => {
                            for (a, &b) in acc.data_mut().iter_mut().zip(pg.data()) {
                                *a = *a + b;
                            }
                        }
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }
}
