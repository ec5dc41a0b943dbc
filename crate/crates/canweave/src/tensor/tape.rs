//! The operation tape and the differentiable op set.
//!
//! Ops compute eagerly and, when any input is gradient-tracked, push a
//! backward closure capturing value snapshots. `backward` drains the tape
//! in reverse, so every op is visited exactly once and parents always
//! receive gradients after all their consumers. Recording order is the
//! execution order, which makes the replay topological by construction.
//!
//! Discrete choices (pooling argmax, scalar clipping) return the branch
//! they took; the `*_pinned` variants recompute the same branch under
//! perturbed inputs, which keeps central finite differences on the smooth
//! piece selected at the base point.

use crate::error::{Error, Result};

use super::{ensure_finite, Tensor};

struct Entry {
    out: Tensor,
    back: Box<dyn FnOnce(&[f64])>,
}

/// Records executed ops for one forward pass.
pub struct Tape {
    entries: Vec<Entry>,
    active: bool,
}

/// The branch a pooling op took for one filter: selected window start and
/// whether the pre-activation cleared zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvChoice {
    pub window: usize,
    pub active: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A recording tape for training and gradient checks.
    pub fn new() -> Tape {
        Tape {
            entries: Vec::new(),
            active: true,
        }
    }

    /// A non-recording tape for inference; ops run but nothing is stored
    /// and outputs never track gradients.
    pub fn no_grad() -> Tape {
        Tape {
            entries: Vec::new(),
            active: false,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Builds the output tensor for an op and decides whether it tracks a
    /// gradient (it does when recording is on and any input does).
    fn result(
        &self,
        op: &'static str,
        shape: Vec<usize>,
        values: Vec<f64>,
        inputs: &[&Tensor],
    ) -> Result<Tensor> {
        ensure_finite(op, &values)?;
        let track = self.active && inputs.iter().any(|t| t.requires_grad());
        if track {
            Tensor::param(shape, values)
        } else {
            Tensor::constant(shape, values)
        }
    }

    fn record(&mut self, out: &Tensor, back: impl FnOnce(&[f64]) + 'static) {
        if out.requires_grad() {
            self.entries.push(Entry {
                out: out.clone(),
                back: Box::new(back),
            });
        }
    }

    /// Accumulates `d loss / d leaf` into every gradient-tracked tensor the
    /// loss depends on, then clears the tape.
    pub fn backward(&mut self, loss: &Tensor) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::Autodiff(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        if self.entries.is_empty() {
            return Err(Error::Autodiff(
                "backward on an empty tape (nothing was recorded)".into(),
            ));
        }
        if !loss.requires_grad() {
            return Err(Error::Autodiff(
                "loss does not depend on any gradient-tracked tensor".into(),
            ));
        }
        loss.accumulate_grad(&[1.0]);
        for entry in self.entries.drain(..).rev() {
            let g = entry
                .out
                .grad()
                .expect("recorded outputs track gradients");
            (entry.back)(&g);
        }
        Ok(())
    }

    // ── elementwise ──

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (av, bv) = same_shape("add", a, b)?;
        let vals = av.iter().zip(&bv).map(|(x, y)| x + y).collect();
        let out = self.result("add", a.shape(), vals, &[a, b])?;
        let (a, b) = (a.clone(), b.clone());
        self.record(&out, move |g| {
            a.accumulate_grad(g);
            b.accumulate_grad(g);
        });
        Ok(out)
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (av, bv) = same_shape("sub", a, b)?;
        let vals = av.iter().zip(&bv).map(|(x, y)| x - y).collect();
        let out = self.result("sub", a.shape(), vals, &[a, b])?;
        let (a, b) = (a.clone(), b.clone());
        self.record(&out, move |g| {
            a.accumulate_grad(g);
            b.accumulate_grad(&g.iter().map(|v| -v).collect::<Vec<_>>());
        });
        Ok(out)
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (av, bv) = same_shape("mul", a, b)?;
        let vals = av.iter().zip(&bv).map(|(x, y)| x * y).collect();
        let out = self.result("mul", a.shape(), vals, &[a, b])?;
        let (a, b) = (a.clone(), b.clone());
        self.record(&out, move |g| {
            let da: Vec<f64> = g.iter().zip(&bv).map(|(gi, y)| gi * y).collect();
            let db: Vec<f64> = g.iter().zip(&av).map(|(gi, x)| gi * x).collect();
            a.accumulate_grad(&da);
            b.accumulate_grad(&db);
        });
        Ok(out)
    }

    pub fn scale(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        let vals = a.with_values(|v| v.iter().map(|x| x * c).collect());
        let out = self.result("scale", a.shape(), vals, &[a])?;
        let a = a.clone();
        self.record(&out, move |g| {
            a.accumulate_grad(&g.iter().map(|v| v * c).collect::<Vec<_>>());
        });
        Ok(out)
    }

    pub fn add_scalar(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        let vals = a.with_values(|v| v.iter().map(|x| x + c).collect());
        let out = self.result("add_scalar", a.shape(), vals, &[a])?;
        let a = a.clone();
        self.record(&out, move |g| a.accumulate_grad(g));
        Ok(out)
    }

    pub fn neg(&mut self, a: &Tensor) -> Result<Tensor> {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: &Tensor) -> Result<Tensor> {
        let vals: Vec<f64> = a.with_values(|v| v.iter().map(|x| x.tanh()).collect());
        let out = self.result("tanh", a.shape(), vals.clone(), &[a])?;
        let a = a.clone();
        self.record(&out, move |g| {
            let da: Vec<f64> = g
                .iter()
                .zip(&vals)
                .map(|(gi, y)| gi * (1.0 - y * y))
                .collect();
            a.accumulate_grad(&da);
        });
        Ok(out)
    }

    /// Natural log. Non-positive inputs surface as a non-finite error;
    /// callers shift by an epsilon first where zeros are legitimate.
    pub fn log(&mut self, a: &Tensor) -> Result<Tensor> {
        let av = a.values();
        let vals: Vec<f64> = av.iter().map(|x| x.ln()).collect();
        let out = self.result("log", a.shape(), vals, &[a])?;
        let a = a.clone();
        self.record(&out, move |g| {
            let da: Vec<f64> = g.iter().zip(&av).map(|(gi, x)| gi / x).collect();
            a.accumulate_grad(&da);
        });
        Ok(out)
    }

    // ── linear algebra ──

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = rank2("matmul", a)?;
        let (k2, n) = rank2("matmul", b)?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dimensions differ: {m}x{k} vs {k2}x{n}"),
            ));
        }
        let av = a.values();
        let bv = b.values();
        let mut vals = vec![0.0; m * n];
        for i in 0..m {
            for t in 0..k {
                let x = av[i * k + t];
                for j in 0..n {
                    vals[i * n + j] += x * bv[t * n + j];
                }
            }
        }
        let out = self.result("matmul", vec![m, n], vals, &[a, b])?;
        let (a, b) = (a.clone(), b.clone());
        self.record(&out, move |g| {
            let mut da = vec![0.0; m * k];
            let mut db = vec![0.0; k * n];
            for i in 0..m {
                for t in 0..k {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += g[i * n + j] * bv[t * n + j];
                        db[t * n + j] += av[i * k + t] * g[i * n + j];
                    }
                    da[i * k + t] = acc;
                }
            }
            a.accumulate_grad(&da);
            b.accumulate_grad(&db);
        });
        Ok(out)
    }

    /// `a @ b^T` for `a: m x k`, `b: n x k`.
    pub fn matmul_bt(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = rank2("matmul_bt", a)?;
        let (n, k2) = rank2("matmul_bt", b)?;
        if k != k2 {
            return Err(Error::shape(
                "matmul_bt",
                format!("inner dimensions differ: {m}x{k} vs ({n}x{k2})^T"),
            ));
        }
        let av = a.values();
        let bv = b.values();
        let mut vals = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for t in 0..k {
                    acc += av[i * k + t] * bv[j * k + t];
                }
                vals[i * n + j] = acc;
            }
        }
        let out = self.result("matmul_bt", vec![m, n], vals, &[a, b])?;
        let (a, b) = (a.clone(), b.clone());
        self.record(&out, move |g| {
            let mut da = vec![0.0; m * k];
            let mut db = vec![0.0; n * k];
            for i in 0..m {
                for j in 0..n {
                    let gij = g[i * n + j];
                    for t in 0..k {
                        da[i * k + t] += gij * bv[j * k + t];
                        db[j * k + t] += gij * av[i * k + t];
                    }
                }
            }
            a.accumulate_grad(&da);
            b.accumulate_grad(&db);
        });
        Ok(out)
    }

    /// `m @ v` for `m: r x c`, `v: c`.
    pub fn matvec(&mut self, m: &Tensor, v: &Tensor) -> Result<Tensor> {
        let (r, c) = rank2("matvec", m)?;
        let vl = rank1("matvec", v)?;
        if c != vl {
            return Err(Error::shape(
                "matvec",
                format!("matrix {r}x{c} against vector of length {vl}"),
            ));
        }
        let mv = m.values();
        let vv = v.values();
        let vals: Vec<f64> = (0..r)
            .map(|i| (0..c).map(|j| mv[i * c + j] * vv[j]).sum())
            .collect();
        let out = self.result("matvec", vec![r], vals, &[m, v])?;
        let (m, v) = (m.clone(), v.clone());
        self.record(&out, move |g| {
            let mut dm = vec![0.0; r * c];
            let mut dv = vec![0.0; c];
            for i in 0..r {
                for j in 0..c {
                    dm[i * c + j] = g[i] * vv[j];
                    dv[j] += g[i] * mv[i * c + j];
                }
            }
            m.accumulate_grad(&dm);
            v.accumulate_grad(&dv);
        });
        Ok(out)
    }

    /// `m^T @ v` for `m: r x c`, `v: r`.
    pub fn matvec_t(&mut self, m: &Tensor, v: &Tensor) -> Result<Tensor> {
        let (r, c) = rank2("matvec_t", m)?;
        let vl = rank1("matvec_t", v)?;
        if r != vl {
            return Err(Error::shape(
                "matvec_t",
                format!("matrix ({r}x{c})^T against vector of length {vl}"),
            ));
        }
        let mv = m.values();
        let vv = v.values();
        let mut vals = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                vals[j] += mv[i * c + j] * vv[i];
            }
        }
        let out = self.result("matvec_t", vec![c], vals, &[m, v])?;
        let (m, v) = (m.clone(), v.clone());
        self.record(&out, move |g| {
            let mut dm = vec![0.0; r * c];
            let mut dv = vec![0.0; r];
            for i in 0..r {
                for j in 0..c {
                    dm[i * c + j] = g[j] * vv[i];
                    dv[i] += g[j] * mv[i * c + j];
                }
            }
            m.accumulate_grad(&dm);
            v.accumulate_grad(&dv);
        });
        Ok(out)
    }

    pub fn dot(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (av, bv) = same_shape("dot", a, b)?;
        let val: f64 = av.iter().zip(&bv).map(|(x, y)| x * y).sum();
        let out = self.result("dot", vec![1], vec![val], &[a, b])?;
        let (a, b) = (a.clone(), b.clone());
        self.record(&out, move |g| {
            let da: Vec<f64> = bv.iter().map(|y| g[0] * y).collect();
            let db: Vec<f64> = av.iter().map(|x| g[0] * x).collect();
            a.accumulate_grad(&da);
            b.accumulate_grad(&db);
        });
        Ok(out)
    }

    pub fn sum(&mut self, a: &Tensor) -> Result<Tensor> {
        let val = a.with_values(|v| v.iter().sum());
        let out = self.result("sum", vec![1], vec![val], &[a])?;
        let a = a.clone();
        let n = a.numel();
        self.record(&out, move |g| {
            a.accumulate_grad(&vec![g[0]; n]);
        });
        Ok(out)
    }

    // ── structural ──

    /// Concatenates rank-1 tensors in the given order.
    pub fn concat(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let mut vals = Vec::new();
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            lens.push(rank1("concat", p)?);
            p.with_values(|v| vals.extend_from_slice(v));
        }
        let total = vals.len();
        let out = self.result("concat", vec![total], vals, parts)?;
        let owned: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        self.record(&out, move |g| {
            let mut offset = 0;
            for (p, len) in owned.iter().zip(&lens) {
                p.accumulate_grad(&g[offset..offset + len]);
                offset += len;
            }
        });
        Ok(out)
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(&mut self, a: &Tensor, shape: Vec<usize>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != a.numel() || shape.iter().any(|d| *d == 0) {
            return Err(Error::shape(
                "reshape",
                format!("{:?} cannot be viewed as {shape:?}", a.shape()),
            ));
        }
        let out = self.result("reshape", shape, a.values(), &[a])?;
        let a = a.clone();
        self.record(&out, move |g| a.accumulate_grad(g));
        Ok(out)
    }

    /// Copies rows of `m` (shape `r x c`) selected by `ids`, in order.
    /// Gradients scatter-add back into the selected rows.
    pub fn gather_rows(&mut self, m: &Tensor, ids: &[usize]) -> Result<Tensor> {
        let (r, c) = rank2("gather_rows", m)?;
        if ids.is_empty() {
            return Err(Error::shape("gather_rows", "no row ids"));
        }
        if let Some(bad) = ids.iter().find(|i| **i >= r) {
            return Err(Error::InvalidInput(format!(
                "gather_rows: row id {bad} out of range for {r} rows"
            )));
        }
        let mut vals = Vec::with_capacity(ids.len() * c);
        m.with_values(|mv| {
            for &i in ids {
                vals.extend_from_slice(&mv[i * c..(i + 1) * c]);
            }
        });
        let out = self.result("gather_rows", vec![ids.len(), c], vals, &[m])?;
        let m = m.clone();
        let ids = ids.to_vec();
        self.record(&out, move |g| {
            m.accumulate_grad_rows(c, &ids, g);
        });
        Ok(out)
    }

    /// Adds vector `v` (length `c`) to every row of `m` (shape `r x c`).
    pub fn broadcast_add_row(&mut self, m: &Tensor, v: &Tensor) -> Result<Tensor> {
        let (r, c) = rank2("broadcast_add_row", m)?;
        let vl = rank1("broadcast_add_row", v)?;
        if c != vl {
            return Err(Error::shape(
                "broadcast_add_row",
                format!("rows of width {c} against vector of length {vl}"),
            ));
        }
        let vv = v.values();
        let vals = m.with_values(|mv| {
            let mut vals = mv.to_vec();
            for i in 0..r {
                for j in 0..c {
                    vals[i * c + j] += vv[j];
                }
            }
            vals
        });
        let out = self.result("broadcast_add_row", vec![r, c], vals, &[m, v])?;
        let (m, v) = (m.clone(), v.clone());
        self.record(&out, move |g| {
            m.accumulate_grad(g);
            let mut dv = vec![0.0; c];
            for i in 0..r {
                for j in 0..c {
                    dv[j] += g[i * c + j];
                }
            }
            v.accumulate_grad(&dv);
        });
        Ok(out)
    }

    // ── reductions and nonlinear heads ──

    /// Softmax over the first `valid` entries of a rank-1 tensor; the
    /// remaining positions are exactly zero and receive no gradient.
    pub fn masked_softmax(&mut self, x: &Tensor, valid: usize) -> Result<Tensor> {
        let n = rank1("masked_softmax", x)?;
        if valid == 0 || valid > n {
            return Err(Error::shape(
                "masked_softmax",
                format!("valid prefix {valid} outside 1..={n}"),
            ));
        }
        let xv = x.values();
        let max = xv[..valid]
            .iter()
            .fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let mut vals = vec![0.0; n];
        let mut denom = 0.0;
        for l in 0..valid {
            let e = (xv[l] - max).exp();
            vals[l] = e;
            denom += e;
        }
        for v in vals[..valid].iter_mut() {
            *v /= denom;
        }
        let out = self.result("masked_softmax", vec![n], vals.clone(), &[x])?;
        let x = x.clone();
        self.record(&out, move |g| {
            let inner: f64 = (0..valid).map(|l| g[l] * vals[l]).sum();
            let mut dx = vec![0.0; n];
            for l in 0..valid {
                dx[l] = vals[l] * (g[l] - inner);
            }
            x.accumulate_grad(&dx);
        });
        Ok(out)
    }

    /// Cosine similarity of two equal-length vectors, clamped to [-1, 1].
    /// A zero vector on either side yields exactly 0 with zero gradient.
    pub fn cosine(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (av, bv) = same_shape("cosine", a, b)?;
        let na = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = bv.iter().map(|x| x * x).sum::<f64>().sqrt();
        let val = if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            let d: f64 = av.iter().zip(&bv).map(|(x, y)| x * y).sum();
            (d / (na * nb)).clamp(-1.0, 1.0)
        };
        let out = self.result("cosine", vec![1], vec![val], &[a, b])?;
        let (a, b) = (a.clone(), b.clone());
        self.record(&out, move |g| {
            if na == 0.0 || nb == 0.0 {
                return;
            }
            let da: Vec<f64> = av
                .iter()
                .zip(&bv)
                .map(|(x, y)| g[0] * (y / (na * nb) - val * x / (na * na)))
                .collect();
            let db: Vec<f64> = av
                .iter()
                .zip(&bv)
                .map(|(x, y)| g[0] * (x / (na * nb) - val * y / (nb * nb)))
                .collect();
            a.accumulate_grad(&da);
            b.accumulate_grad(&db);
        });
        Ok(out)
    }

    /// Euclidean norm with subgradient 0 at the origin.
    pub fn norm2(&mut self, a: &Tensor) -> Result<Tensor> {
        let av = a.values();
        let n = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        let out = self.result("norm2", vec![1], vec![n], &[a])?;
        let a = a.clone();
        self.record(&out, move |g| {
            if n == 0.0 {
                return;
            }
            let da: Vec<f64> = av.iter().map(|x| g[0] * x / n).collect();
            a.accumulate_grad(&da);
        });
        Ok(out)
    }

    /// Maximum entry of a rank-1 tensor; ties go to the lowest index, and
    /// the gradient routes only to the selected entry.
    pub fn max_vec(&mut self, a: &Tensor) -> Result<(Tensor, usize)> {
        rank1("max_vec", a)?;
        let idx = a.with_values(|v| {
            let mut best = 0;
            for (i, x) in v.iter().enumerate().skip(1) {
                if *x > v[best] {
                    best = i;
                }
            }
            best
        });
        let out = self.max_vec_at(a, idx)?;
        Ok((out, idx))
    }

    /// Replays `max_vec` with a pinned selection.
    pub fn max_vec_at(&mut self, a: &Tensor, idx: usize) -> Result<Tensor> {
        let n = rank1("max_vec", a)?;
        if idx >= n {
            return Err(Error::InvalidInput(format!(
                "max_vec: pinned index {idx} out of range for length {n}"
            )));
        }
        let val = a.with_values(|v| v[idx]);
        let out = self.result("max_vec", vec![1], vec![val], &[a])?;
        let a = a.clone();
        self.record(&out, move |g| {
            let mut da = vec![0.0; n];
            da[idx] = g[0];
            a.accumulate_grad(&da);
        });
        Ok(out)
    }

    /// `min(x, cap)` on a scalar. Returns whether the value passed through;
    /// above the cap the output is constant and carries no gradient.
    pub fn clip_max(&mut self, x: &Tensor, cap: f64) -> Result<(Tensor, bool)> {
        scalar_only("clip_max", x)?;
        let pass = x.item() <= cap;
        let out = self.clip_max_pinned(x, cap, pass)?;
        Ok((out, pass))
    }

    /// Replays `clip_max` on a pinned branch.
    pub fn clip_max_pinned(&mut self, x: &Tensor, cap: f64, pass: bool) -> Result<Tensor> {
        scalar_only("clip_max", x)?;
        let val = if pass { x.item() } else { cap };
        let out = self.result("clip_max", vec![1], vec![val], &[x])?;
        let x = x.clone();
        self.record(&out, move |g| {
            if pass {
                x.accumulate_grad(g);
            }
        });
        Ok(out)
    }

    /// Sums rows of `emb` (shape `len x width`) weighted by the first
    /// `valid` entries of `w`; rows past the valid prefix are ignored, so
    /// padding never contributes even bitwise.
    pub fn attn_weighted_sum(
        &mut self,
        emb: &Tensor,
        w: &Tensor,
        valid: usize,
    ) -> Result<Tensor> {
        let (len, width) = rank2("attn_weighted_sum", emb)?;
        let wl = rank1("attn_weighted_sum", w)?;
        if wl != len {
            return Err(Error::shape(
                "attn_weighted_sum",
                format!("{len} rows against {wl} weights"),
            ));
        }
        if valid == 0 || valid > len {
            return Err(Error::shape(
                "attn_weighted_sum",
                format!("valid prefix {valid} outside 1..={len}"),
            ));
        }
        let ev = emb.values();
        let wv = w.values();
        let mut vals = vec![0.0; width];
        for l in 0..valid {
            for j in 0..width {
                vals[j] += wv[l] * ev[l * width + j];
            }
        }
        let out = self.result("attn_weighted_sum", vec![width], vals, &[emb, w])?;
        let (emb, w) = (emb.clone(), w.clone());
        self.record(&out, move |g| {
            let mut de = vec![0.0; len * width];
            let mut dw = vec![0.0; len];
            for l in 0..valid {
                let mut acc = 0.0;
                for j in 0..width {
                    de[l * width + j] = wv[l] * g[j];
                    acc += g[j] * ev[l * width + j];
                }
                dw[l] = acc;
            }
            emb.accumulate_grad(&de);
            w.accumulate_grad(&dw);
        });
        Ok(out)
    }

    /// Sliding-window convolution with ReLU and max-over-positions pooling.
    ///
    /// `emb` is `len x width`, `filters` is `count x (h * width)`, `bias` is
    /// `count`. Window starts run over `0..valid`; rows past `len` read as
    /// zero, so the window set (and the pooled output) depends only on the
    /// valid prefix, never on how much padding follows it. Ties select the
    /// lowest window start.
    pub fn text_conv_max(
        &mut self,
        emb: &Tensor,
        filters: &Tensor,
        bias: &Tensor,
        h: usize,
        valid: usize,
    ) -> Result<(Tensor, Vec<ConvChoice>)> {
        let (len, width) = rank2("text_conv_max", emb)?;
        let (count, fw) = rank2("text_conv_max", filters)?;
        let bl = rank1("text_conv_max", bias)?;
        if h == 0 || fw != h * width {
            return Err(Error::shape(
                "text_conv_max",
                format!("filters {count}x{fw} do not match window {h}x{width}"),
            ));
        }
        if bl != count {
            return Err(Error::shape(
                "text_conv_max",
                format!("{count} filters against {bl} biases"),
            ));
        }
        if valid == 0 || valid > len {
            return Err(Error::shape(
                "text_conv_max",
                format!("valid prefix {valid} outside 1..={len}"),
            ));
        }
        let ev = emb.values();
        let fv = filters.values();
        let bv = bias.values();
        let mut choices = Vec::with_capacity(count);
        for t in 0..count {
            let mut best_pre = f64::NEG_INFINITY;
            let mut best_relu = f64::NEG_INFINITY;
            let mut best_p = 0;
            for p in 0..valid {
                let mut pre = bv[t];
                for i in 0..h {
                    let row = p + i;
                    if row >= len {
                        break;
                    }
                    for j in 0..width {
                        pre += fv[t * fw + i * width + j] * ev[row * width + j];
                    }
                }
                let relu = pre.max(0.0);
                if relu > best_relu {
                    best_relu = relu;
                    best_pre = pre;
                    best_p = p;
                }
            }
            choices.push(ConvChoice {
                window: best_p,
                active: best_pre > 0.0,
            });
        }
        let out = self.text_conv_max_pinned(emb, filters, bias, h, valid, &choices)?;
        Ok((out, choices))
    }

    /// Replays `text_conv_max` with pinned window and activation choices.
    pub fn text_conv_max_pinned(
        &mut self,
        emb: &Tensor,
        filters: &Tensor,
        bias: &Tensor,
        h: usize,
        valid: usize,
        choices: &[ConvChoice],
    ) -> Result<Tensor> {
        let (len, width) = rank2("text_conv_max", emb)?;
        let (count, fw) = rank2("text_conv_max", filters)?;
        if choices.len() != count {
            return Err(Error::InvalidInput(format!(
                "text_conv_max: {} pinned choices for {count} filters",
                choices.len()
            )));
        }
        if choices.iter().any(|c| c.window >= valid) {
            return Err(Error::InvalidInput(
                "text_conv_max: pinned window outside the valid prefix".into(),
            ));
        }
        let ev = emb.values();
        let fv = filters.values();
        let bv = bias.values();
        let mut vals = vec![0.0; count];
        for (t, choice) in choices.iter().enumerate() {
            if !choice.active {
                continue;
            }
            let mut pre = bv[t];
            for i in 0..h {
                let row = choice.window + i;
                if row >= len {
                    break;
                }
                for j in 0..width {
                    pre += fv[t * fw + i * width + j] * ev[row * width + j];
                }
            }
            vals[t] = pre;
        }
        let out = self.result("text_conv_max", vec![count], vals, &[emb, filters, bias])?;
        let (emb, filters, bias) = (emb.clone(), filters.clone(), bias.clone());
        let choices = choices.to_vec();
        self.record(&out, move |g| {
            let mut de = vec![0.0; len * width];
            let mut df = vec![0.0; count * fw];
            let mut db = vec![0.0; count];
            for (t, choice) in choices.iter().enumerate() {
                if !choice.active || g[t] == 0.0 {
                    continue;
                }
                db[t] += g[t];
                for i in 0..h {
                    let row = choice.window + i;
                    if row >= len {
                        break;
                    }
                    for j in 0..width {
                        df[t * fw + i * width + j] += g[t] * ev[row * width + j];
                        de[row * width + j] += g[t] * fv[t * fw + i * width + j];
                    }
                }
            }
            emb.accumulate_grad(&de);
            filters.accumulate_grad(&df);
            bias.accumulate_grad(&db);
        });
        Ok(out)
    }
}

fn rank1(op: &'static str, t: &Tensor) -> Result<usize> {
    let shape = t.shape();
    if shape.len() != 1 {
        return Err(Error::shape(
            op,
            format!("expected a rank-1 tensor, got {shape:?}"),
        ));
    }
    Ok(shape[0])
}

fn rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    let shape = t.shape();
    if shape.len() != 2 {
        return Err(Error::shape(
            op,
            format!("expected a rank-2 tensor, got {shape:?}"),
        ));
    }
    Ok((shape[0], shape[1]))
}

fn scalar_only(op: &'static str, t: &Tensor) -> Result<()> {
    if t.numel() != 1 {
        return Err(Error::shape(
            op,
            format!("expected a scalar, got {:?}", t.shape()),
        ));
    }
    Ok(())
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok((a.values(), b.values()))
}
