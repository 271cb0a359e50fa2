//! Minimal reverse-mode differentiation for the gesture models.
//!
//! A [`Tape`] records a forward computation as an append-only list of nodes;
//! [`Tape::backward`] seeds one or more output variables with external
//! gradients and sweeps the tape in reverse. Loss functions therefore live
//! outside the tape as plain code that returns `(value, d value / d output)`
//! pairs, and everything differentiable inside the models (dense, conv,
//! pooling, resampling, GRU, activations, plumbing ops) is a tape node.
//!
//! Everything is float64: the models are small (~70k parameters), so the
//! clarity of clean gradient checks wins over speed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("{layer}: {message}")]
    Shape {
        layer: &'static str,
        message: String,
    },
    #[error("checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path}: {message}")]
    BadCheckpoint { path: String, message: String },
}

fn shape_err(layer: &'static str, message: String) -> DiffError {
    DiffError::Shape { layer, message }
}

// ── tensors and parameters ──────────────────────────────────────────────────

/// Dense row-major value: vectors (`shape = [n]`) or channel-major feature
/// maps (`shape = [channels, timesteps]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn vector(data: Vec<f64>) -> Tensor {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        assert_eq!(data.len(), rows * cols);
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` when 2-D.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }
}

/// Uniform fan-in initialization: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_uniform(rng: &mut impl Rng, fan_in: usize, shape: &[usize]) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..shape.iter().product())
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor {
        shape: shape.to_vec(),
        data,
    }
}

/// Handle into a [`Params`] store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Named persistent parameter blocks owned by a model.
#[derive(Debug, Clone, Default)]
pub struct Params {
    entries: Vec<(String, Tensor)>,
}

impl Params {
    pub fn new() -> Params {
        Params::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> ParamId {
        self.entries.push((name.to_string(), tensor));
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Total scalar parameter count.
    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }
}

// ── the tape ────────────────────────────────────────────────────────────────

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Zero-pad so the output keeps the input length (odd kernels center).
    Same,
    /// No padding; output shrinks by `kernel - 1`.
    Valid,
}

enum Op {
    Leaf,
    Dense {
        w: usize,
        b: usize,
        x: usize,
    },
    Conv1d {
        w: usize,
        b: usize,
        x: usize,
        padding: Padding,
    },
    MaxPool {
        x: usize,
        argmax: Vec<usize>,
    },
    Upsample {
        x: usize,
    },
    Gru {
        w: usize,
        u: usize,
        b: usize,
        x: usize,
        hidden: usize,
        // Saved forward state for backward-through-time: gates are
        // [hidden * timesteps], states include the initial zero row.
        r: Vec<f64>,
        z: Vec<f64>,
        n: Vec<f64>,
        h: Vec<f64>,
    },
    Relu {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    Tanh {
        x: usize,
    },
    Concat {
        xs: Vec<usize>,
    },
    Flatten {
        x: usize,
    },
    /// Contiguous slice of a vector.
    Slice {
        x: usize,
        start: usize,
    },
    /// One timestep column of a `[channels, timesteps]` map.
    Column {
        x: usize,
        t: usize,
    },
    /// `z = mu + exp(0.5 logvar) * eps` with `eps` a fixed sample.
    Reparam {
        mu: usize,
        logvar: usize,
        eps: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    grad: Vec<f64>,
    op: Op,
}

/// Append-only record of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> VarId {
        let grad = vec![0.0; value.len()];
        self.nodes.push(Node { value, grad, op });
        VarId(self.nodes.len() - 1)
    }

    /// Inserts a constant or parameter leaf.
    pub fn leaf(&mut self, value: Tensor) -> VarId {
        self.push(value, Op::Leaf)
    }

    /// Inserts every parameter block; index the result by [`ParamId`].
    pub fn bind(&mut self, params: &Params) -> Vec<VarId> {
        params
            .iter()
            .map(|(_, t)| self.leaf(t.clone()))
            .collect()
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: VarId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    fn data(&self, id: usize) -> &[f64] {
        &self.nodes[id].value.data
    }

    // ── layers ──────────────────────────────────────────────────────────

    /// `w x + b` with `w: [out, in]`, `x: [in]`.
    pub fn dense(&mut self, w: VarId, b: VarId, x: VarId) -> Result<VarId, DiffError> {
        let (out_dim, in_dim) = self.nodes[w.0]
            .value
            .dims2()
            .ok_or_else(|| shape_err("dense", "weight must be 2-D".into()))?;
        let xv = &self.nodes[x.0].value;
        if xv.len() != in_dim {
            return Err(shape_err(
                "dense",
                format!("input length {} != fan-in {}", xv.len(), in_dim),
            ));
        }
        if self.nodes[b.0].value.len() != out_dim {
            return Err(shape_err(
                "dense",
                format!("bias length {} != fan-out {}", self.nodes[b.0].value.len(), out_dim),
            ));
        }
        let wd = self.data(w.0);
        let xd = self.data(x.0);
        let bd = self.data(b.0);
        let mut out = vec![0.0; out_dim];
        for o in 0..out_dim {
            let row = &wd[o * in_dim..(o + 1) * in_dim];
            let mut acc = bd[o];
            for (wi, xi) in row.iter().zip(xd) {
                acc += wi * xi;
            }
            out[o] = acc;
        }
        Ok(self.push(
            Tensor::vector(out),
            Op::Dense {
                w: w.0,
                b: b.0,
                x: x.0,
            },
        ))
    }

    /// Cross-correlation over time with `w: [out_c, in_c, k]`, `x: [in_c, t]`;
    /// stride 1, zero padding per `padding`.
    pub fn conv1d(
        &mut self,
        w: VarId,
        b: VarId,
        x: VarId,
        kernel: usize,
        padding: Padding,
    ) -> Result<VarId, DiffError> {
        let (in_c, t) = self.nodes[x.0]
            .value
            .dims2()
            .ok_or_else(|| shape_err("conv1d", "input must be [channels, timesteps]".into()))?;
        let w_len = self.nodes[w.0].value.len();
        if w_len % (in_c * kernel) != 0 {
            return Err(shape_err(
                "conv1d",
                format!("weight length {w_len} not divisible by in_c*k = {}", in_c * kernel),
            ));
        }
        let out_c = w_len / (in_c * kernel);
        if self.nodes[b.0].value.len() != out_c {
            return Err(shape_err(
                "conv1d",
                format!("bias length {} != out channels {out_c}", self.nodes[b.0].value.len()),
            ));
        }
        let (t_out, pad) = match padding {
            Padding::Same => (t, (kernel - 1) / 2),
            Padding::Valid => {
                if t < kernel {
                    return Err(shape_err(
                        "conv1d",
                        format!("input length {t} shorter than kernel {kernel}"),
                    ));
                }
                (t - kernel + 1, 0)
            }
        };

        let wd = self.data(w.0);
        let bd = self.data(b.0);
        let xd = self.data(x.0);
        let mut out = vec![0.0; out_c * t_out];
        for o in 0..out_c {
            for i in 0..t_out {
                let mut acc = bd[o];
                for ic in 0..in_c {
                    let wrow = &wd[(o * in_c + ic) * kernel..(o * in_c + ic + 1) * kernel];
                    let xrow = &xd[ic * t..(ic + 1) * t];
                    for (kk, wv) in wrow.iter().enumerate() {
                        let j = i + kk;
                        if j >= pad && j - pad < t {
                            acc += wv * xrow[j - pad];
                        }
                    }
                }
                out[o * t_out + i] = acc;
            }
        }
        Ok(self.push(
            Tensor::matrix(out_c, t_out, out),
            Op::Conv1d {
                w: w.0,
                b: b.0,
                x: x.0,
                padding,
            },
        ))
    }

    /// Max pooling with window 2, stride 2, ceil semantics: an odd tail
    /// timestep forms its own window (200 -> 100 -> 50 -> 25 -> 13 -> 7).
    pub fn maxpool1d(&mut self, x: VarId) -> Result<VarId, DiffError> {
        let (c, t) = self.nodes[x.0]
            .value
            .dims2()
            .ok_or_else(|| shape_err("maxpool1d", "input must be [channels, timesteps]".into()))?;
        let t_out = t.div_ceil(2);
        let xd = self.data(x.0);
        let mut out = vec![0.0; c * t_out];
        let mut argmax = vec![0usize; c * t_out];
        for ch in 0..c {
            for i in 0..t_out {
                let first = ch * t + 2 * i;
                let mut best = first;
                if 2 * i + 1 < t && xd[first + 1] > xd[first] {
                    best = first + 1;
                }
                out[ch * t_out + i] = xd[best];
                argmax[ch * t_out + i] = best;
            }
        }
        Ok(self.push(Tensor::matrix(c, t_out, out), Op::MaxPool { x: x.0, argmax }))
    }

    /// Linear resize along time to `t_out` (endpoints map to endpoints).
    pub fn upsample1d(&mut self, x: VarId, t_out: usize) -> Result<VarId, DiffError> {
        let (c, t_in) = self.nodes[x.0]
            .value
            .dims2()
            .ok_or_else(|| shape_err("upsample1d", "input must be [channels, timesteps]".into()))?;
        if t_in == 0 || t_out == 0 {
            return Err(shape_err("upsample1d", "empty time axis".into()));
        }
        let xd = self.data(x.0);
        let mut out = vec![0.0; c * t_out];
        for ch in 0..c {
            for j in 0..t_out {
                let (lo, hi, frac) = resize_coords(t_in, t_out, j);
                out[ch * t_out + j] =
                    xd[ch * t_in + lo] * (1.0 - frac) + xd[ch * t_in + hi] * frac;
            }
        }
        Ok(self.push(Tensor::matrix(c, t_out, out), Op::Upsample { x: x.0 }))
    }

    /// Single GRU layer over a `[in_c, t]` sequence, returning all hidden
    /// states as `[hidden, t]`. Standard update/reset cell with one bias set:
    /// `w: [3 hidden, in_c]`, `u: [3 hidden, hidden]`, `b: [3 hidden]`, gate
    /// rows ordered reset, update, candidate.
    pub fn gru(
        &mut self,
        w: VarId,
        u: VarId,
        b: VarId,
        x: VarId,
    ) -> Result<VarId, DiffError> {
        let (in_c, t) = self.nodes[x.0]
            .value
            .dims2()
            .ok_or_else(|| shape_err("gru", "input must be [channels, timesteps]".into()))?;
        let (three_h, w_in) = self.nodes[w.0]
            .value
            .dims2()
            .ok_or_else(|| shape_err("gru", "w must be 2-D".into()))?;
        if three_h % 3 != 0 || w_in != in_c {
            return Err(shape_err(
                "gru",
                format!("w is [{three_h}, {w_in}], expected [3h, {in_c}]"),
            ));
        }
        let hidden = three_h / 3;
        if self.nodes[u.0].value.dims2() != Some((three_h, hidden)) {
            return Err(shape_err("gru", "u must be [3h, h]".into()));
        }
        if self.nodes[b.0].value.len() != three_h {
            return Err(shape_err("gru", "b must be [3h]".into()));
        }

        let wd = self.data(w.0).to_vec();
        let ud = self.data(u.0).to_vec();
        let bd = self.data(b.0).to_vec();
        let xd = self.data(x.0).to_vec();

        let mut r_all = vec![0.0; hidden * t];
        let mut z_all = vec![0.0; hidden * t];
        let mut n_all = vec![0.0; hidden * t];
        let mut h_all = vec![0.0; hidden * (t + 1)];
        let mut out = vec![0.0; hidden * t];

        let matvec_rows = |m: &[f64], cols: usize, row0: usize, v_at: &dyn Fn(usize) -> f64| {
            let mut res = vec![0.0; hidden];
            for (j, rj) in res.iter_mut().enumerate() {
                let row = &m[(row0 + j) * cols..(row0 + j + 1) * cols];
                let mut acc = 0.0;
                for (k, mv) in row.iter().enumerate() {
                    acc += mv * v_at(k);
                }
                *rj = acc;
            }
            res
        };

        for step in 0..t {
            let x_at = |k: usize| xd[k * t + step];
            let h_prev_off = step * hidden;
            let h_prev = h_all[h_prev_off..h_prev_off + hidden].to_vec();
            let h_at = |k: usize| h_prev[k];

            let wr = matvec_rows(&wd, in_c, 0, &x_at);
            let wz = matvec_rows(&wd, in_c, hidden, &x_at);
            let wn = matvec_rows(&wd, in_c, 2 * hidden, &x_at);
            let ur = matvec_rows(&ud, hidden, 0, &h_at);
            let uz = matvec_rows(&ud, hidden, hidden, &h_at);

            let mut r = vec![0.0; hidden];
            let mut z = vec![0.0; hidden];
            for j in 0..hidden {
                r[j] = sigmoid_scalar(wr[j] + ur[j] + bd[j]);
                z[j] = sigmoid_scalar(wz[j] + uz[j] + bd[hidden + j]);
            }
            let rh: Vec<f64> = (0..hidden).map(|j| r[j] * h_prev[j]).collect();
            let un = matvec_rows(&ud, hidden, 2 * hidden, &|k| rh[k]);
            for j in 0..hidden {
                let n = (wn[j] + un[j] + bd[2 * hidden + j]).tanh();
                let h = (1.0 - z[j]) * n + z[j] * h_prev[j];
                r_all[j * t + step] = r[j];
                z_all[j * t + step] = z[j];
                n_all[j * t + step] = n;
                h_all[(step + 1) * hidden + j] = h;
                out[j * t + step] = h;
            }
        }

        Ok(self.push(
            Tensor::matrix(hidden, t, out),
            Op::Gru {
                w: w.0,
                u: u.0,
                b: b.0,
                x: x.0,
                hidden,
                r: r_all,
                z: z_all,
                n: n_all,
                h: h_all,
            },
        ))
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        let value = Tensor {
            shape: self.nodes[x.0].value.shape.clone(),
            data: self.data(x.0).iter().map(|&v| v.max(0.0)).collect(),
        };
        self.push(value, Op::Relu { x: x.0 })
    }

    pub fn sigmoid(&mut self, x: VarId) -> VarId {
        let value = Tensor {
            shape: self.nodes[x.0].value.shape.clone(),
            data: self.data(x.0).iter().map(|&v| sigmoid_scalar(v)).collect(),
        };
        self.push(value, Op::Sigmoid { x: x.0 })
    }

    pub fn tanh(&mut self, x: VarId) -> VarId {
        let value = Tensor {
            shape: self.nodes[x.0].value.shape.clone(),
            data: self.data(x.0).iter().map(|&v| v.tanh()).collect(),
        };
        self.push(value, Op::Tanh { x: x.0 })
    }

    /// Concatenates along the channel axis (or plain vectors end to end).
    pub fn concat(&mut self, xs: &[VarId]) -> Result<VarId, DiffError> {
        if xs.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        let mut data = Vec::new();
        let first_shape = self.nodes[xs[0].0].value.shape.clone();
        let mut channels = 0usize;
        for &x in xs {
            let v = &self.nodes[x.0].value;
            match (first_shape.as_slice(), v.shape.as_slice()) {
                ([_, t0], [c, t]) if t == t0 => channels += c,
                ([_], [n]) => channels += n,
                _ => {
                    return Err(shape_err(
                        "concat",
                        format!("incompatible shapes {:?} and {:?}", first_shape, v.shape),
                    ))
                }
            }
            data.extend_from_slice(&v.data);
        }
        let value = match first_shape.as_slice() {
            [_, t] => Tensor::matrix(channels, *t, data),
            _ => Tensor::vector(data),
        };
        Ok(self.push(
            value,
            Op::Concat {
                xs: xs.iter().map(|v| v.0).collect(),
            },
        ))
    }

    /// `[c, t]` map to a flat `[c * t]` vector (channel-major, zero-copy).
    pub fn flatten(&mut self, x: VarId) -> VarId {
        let value = Tensor::vector(self.data(x.0).to_vec());
        self.push(value, Op::Flatten { x: x.0 })
    }

    /// Contiguous sub-vector `x[start .. start + len]`.
    pub fn slice(&mut self, x: VarId, start: usize, len: usize) -> Result<VarId, DiffError> {
        let n = self.nodes[x.0].value.len();
        if start + len > n {
            return Err(shape_err(
                "slice",
                format!("range {start}..{} out of length {n}", start + len),
            ));
        }
        let value = Tensor::vector(self.data(x.0)[start..start + len].to_vec());
        Ok(self.push(value, Op::Slice { x: x.0, start }))
    }

    /// One timestep of a `[c, t]` map as a `[c]` vector.
    pub fn column(&mut self, x: VarId, t: usize) -> Result<VarId, DiffError> {
        let (c, t_len) = self.nodes[x.0]
            .value
            .dims2()
            .ok_or_else(|| shape_err("column", "input must be [channels, timesteps]".into()))?;
        if t >= t_len {
            return Err(shape_err(
                "column",
                format!("timestep {t} out of length {t_len}"),
            ));
        }
        let xd = self.data(x.0);
        let value = Tensor::vector((0..c).map(|ch| xd[ch * t_len + t]).collect());
        Ok(self.push(value, Op::Column { x: x.0, t }))
    }

    /// Reshapes a flat vector into a `[c, t]` map (zero-copy; inverse of
    /// [`Tape::flatten`], and shares its backward).
    pub fn reshape2(&mut self, x: VarId, c: usize, t: usize) -> Result<VarId, DiffError> {
        let n = self.nodes[x.0].value.len();
        if c * t != n {
            return Err(shape_err(
                "reshape2",
                format!("cannot view length {n} as [{c}, {t}]"),
            ));
        }
        let value = Tensor::matrix(c, t, self.data(x.0).to_vec());
        Ok(self.push(value, Op::Flatten { x: x.0 }))
    }

    /// Gaussian reparametrization `z = mu + exp(0.5 logvar) * eps` with a
    /// fixed noise sample.
    pub fn reparam(&mut self, mu: VarId, logvar: VarId, eps: Vec<f64>) -> Result<VarId, DiffError> {
        let n = self.nodes[mu.0].value.len();
        if self.nodes[logvar.0].value.len() != n || eps.len() != n {
            return Err(shape_err("reparam", "mu/logvar/eps lengths differ".into()));
        }
        let mud = self.data(mu.0);
        let lvd = self.data(logvar.0);
        let data = (0..n)
            .map(|i| mud[i] + (0.5 * lvd[i]).exp() * eps[i])
            .collect();
        Ok(self.push(
            Tensor::vector(data),
            Op::Reparam {
                mu: mu.0,
                logvar: logvar.0,
                eps,
            },
        ))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Accumulates gradients from external seeds at one or more outputs.
    /// Seeds add into any gradient already present; a fresh tape starts at
    /// zero everywhere.
    pub fn backward(&mut self, seeds: &[(VarId, Vec<f64>)]) {
        for (id, seed) in seeds {
            assert_eq!(
                seed.len(),
                self.nodes[id.0].value.len(),
                "seed length must match output length"
            );
            for (g, s) in self.nodes[id.0].grad.iter_mut().zip(seed) {
                *g += s;
            }
        }
        for i in (0..self.nodes.len()).rev() {
            // Parents always precede children on the tape, so split at i.
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if node.grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            backward_node(node, before);
        }
    }
}

fn sigmoid_scalar(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Source/target index pair for linear resizing: output position `j` reads
/// input positions `lo`/`hi` with weight `1 - frac` / `frac`.
fn resize_coords(t_in: usize, t_out: usize, j: usize) -> (usize, usize, f64) {
    if t_out == 1 || t_in == 1 {
        return (0, 0, 0.0);
    }
    let p = j as f64 * (t_in - 1) as f64 / (t_out - 1) as f64;
    let lo = p.floor() as usize;
    let hi = p.ceil() as usize;
    (lo, hi.min(t_in - 1), p - lo as f64)
}

fn backward_node(node: &Node, before: &mut [Node]) {
    let g = &node.grad;
    match &node.op {
        Op::Leaf => {}
        Op::Dense { w, b, x } => {
            let (out_dim, in_dim) = before[*w].value.dims2().unwrap();
            let xd = before[*x].value.data.clone();
            let wd = before[*w].value.data.clone();
            for o in 0..out_dim {
                before[*b].grad[o] += g[o];
                for i in 0..in_dim {
                    before[*w].grad[o * in_dim + i] += g[o] * xd[i];
                    before[*x].grad[i] += wd[o * in_dim + i] * g[o];
                }
            }
        }
        Op::Conv1d { w, b, x, padding } => {
            let (in_c, t) = before[*x].value.dims2().unwrap();
            let (out_c, t_out) = node.value.dims2().unwrap();
            let kernel = before[*w].value.len() / (out_c * in_c);
            let pad = match padding {
                Padding::Same => (kernel - 1) / 2,
                Padding::Valid => 0,
            };
            let xd = before[*x].value.data.clone();
            let wd = before[*w].value.data.clone();
            for o in 0..out_c {
                for i in 0..t_out {
                    let gv = g[o * t_out + i];
                    if gv == 0.0 {
                        continue;
                    }
                    before[*b].grad[o] += gv;
                    for ic in 0..in_c {
                        for kk in 0..kernel {
                            let j = i + kk;
                            if j >= pad && j - pad < t {
                                let xi = ic * t + (j - pad);
                                let wi = (o * in_c + ic) * kernel + kk;
                                before[*w].grad[wi] += gv * xd[xi];
                                before[*x].grad[xi] += gv * wd[wi];
                            }
                        }
                    }
                }
            }
        }
        Op::MaxPool { x, argmax } => {
            for (out_i, &src) in argmax.iter().enumerate() {
                before[*x].grad[src] += g[out_i];
            }
        }
        Op::Upsample { x } => {
            let (c, t_in) = before[*x].value.dims2().unwrap();
            let (_, t_out) = node.value.dims2().unwrap();
            for ch in 0..c {
                for j in 0..t_out {
                    let (lo, hi, frac) = resize_coords(t_in, t_out, j);
                    let gv = g[ch * t_out + j];
                    before[*x].grad[ch * t_in + lo] += gv * (1.0 - frac);
                    if hi != lo {
                        before[*x].grad[ch * t_in + hi] += gv * frac;
                    }
                }
            }
        }
        Op::Gru {
            w,
            u,
            b,
            x,
            hidden,
            r,
            z,
            n,
            h,
        } => {
            let hdim = *hidden;
            let (in_c, t) = before[*x].value.dims2().unwrap();
            let wd = before[*w].value.data.clone();
            let ud = before[*u].value.data.clone();
            let xd = before[*x].value.data.clone();

            let mut dh_carry = vec![0.0; hdim];
            for step in (0..t).rev() {
                let h_prev = &h[step * hdim..(step + 1) * hdim];
                let gate = |all: &[f64], j: usize| all[j * t + step];

                let mut dh = vec![0.0; hdim];
                for j in 0..hdim {
                    dh[j] = g[j * t + step] + dh_carry[j];
                }

                let mut dpre_r = vec![0.0; hdim];
                let mut dpre_z = vec![0.0; hdim];
                let mut dpre_n = vec![0.0; hdim];
                let mut dh_new = vec![0.0; hdim];

                for j in 0..hdim {
                    let (zj, nj) = (gate(z, j), gate(n, j));
                    let dz = dh[j] * (h_prev[j] - nj);
                    let dn = dh[j] * (1.0 - zj);
                    dh_new[j] = dh[j] * zj;
                    dpre_n[j] = dn * (1.0 - nj * nj);
                    dpre_z[j] = dz * zj * (1.0 - zj);
                }
                // Candidate pre-activation: W_n x + U_n (r . h_prev) + b_n.
                let mut ds = vec![0.0; hdim];
                for j in 0..hdim {
                    for k in 0..hdim {
                        ds[k] += ud[(2 * hdim + j) * hdim + k] * dpre_n[j];
                    }
                }
                for j in 0..hdim {
                    let rj = gate(r, j);
                    let dr = ds[j] * h_prev[j];
                    dh_new[j] += ds[j] * rj;
                    dpre_r[j] = dr * rj * (1.0 - rj);
                }

                for (gate_idx, dpre) in [(0, &dpre_r), (1, &dpre_z), (2, &dpre_n)] {
                    let row0 = gate_idx * hdim;
                    for j in 0..hdim {
                        let dv = dpre[j];
                        if dv == 0.0 {
                            continue;
                        }
                        before[*b].grad[row0 + j] += dv;
                        for k in 0..in_c {
                            before[*w].grad[(row0 + j) * in_c + k] += dv * xd[k * t + step];
                            before[*x].grad[k * t + step] += dv * wd[(row0 + j) * in_c + k];
                        }
                        let hvec: &[f64] = if gate_idx == 2 {
                            // U_n multiplies r . h_prev.
                            &[]
                        } else {
                            h_prev
                        };
                        if gate_idx == 2 {
                            for k in 0..hdim {
                                let rh = gate(r, k) * h_prev[k];
                                before[*u].grad[(row0 + j) * hdim + k] += dv * rh;
                            }
                        } else {
                            for (k, hv) in hvec.iter().enumerate() {
                                before[*u].grad[(row0 + j) * hdim + k] += dv * hv;
                                dh_new[k] += dv * ud[(row0 + j) * hdim + k];
                            }
                        }
                    }
                }
                dh_carry = dh_new;
            }
        }
        Op::Relu { x } => {
            let xd = before[*x].value.data.clone();
            for (i, gv) in g.iter().enumerate() {
                if xd[i] > 0.0 {
                    before[*x].grad[i] += gv;
                }
            }
        }
        Op::Sigmoid { x } => {
            for (i, gv) in g.iter().enumerate() {
                let s = node.value.data[i];
                before[*x].grad[i] += gv * s * (1.0 - s);
            }
        }
        Op::Tanh { x } => {
            for (i, gv) in g.iter().enumerate() {
                let y = node.value.data[i];
                before[*x].grad[i] += gv * (1.0 - y * y);
            }
        }
        Op::Concat { xs } => {
            let mut offset = 0;
            for &x in xs {
                let len = before[x].value.len();
                for i in 0..len {
                    before[x].grad[i] += g[offset + i];
                }
                offset += len;
            }
        }
        Op::Flatten { x } => {
            for (i, gv) in g.iter().enumerate() {
                before[*x].grad[i] += gv;
            }
        }
        Op::Slice { x, start } => {
            for (i, gv) in g.iter().enumerate() {
                before[*x].grad[start + i] += gv;
            }
        }
        Op::Column { x, t } => {
            let (_, t_len) = before[*x].value.dims2().unwrap();
            for (ch, gv) in g.iter().enumerate() {
                before[*x].grad[ch * t_len + t] += gv;
            }
        }
        Op::Reparam { mu, logvar, eps } => {
            let lvd = before[*logvar].value.data.clone();
            for (i, gv) in g.iter().enumerate() {
                before[*mu].grad[i] += gv;
                before[*logvar].grad[i] += gv * 0.5 * (0.5 * lvd[i]).exp() * eps[i];
            }
        }
    }
}

// ── losses ──────────────────────────────────────────────────────────────────

/// Weighted binary cross-entropy, normalized by the sum of sample weights.
/// Positive samples weigh `pos_weight`, negatives 1. Scores are clamped to
/// `[1e-7, 1 - 1e-7]` before the logs. Returns the loss and its gradient with
/// respect to the (unclamped) scores.
pub fn weighted_bce(scores: &[f64], labels: &[bool], pos_weight: f64) -> (f64, Vec<f64>) {
    assert_eq!(scores.len(), labels.len());
    const EPS: f64 = 1e-7;
    let weight_sum: f64 = labels
        .iter()
        .map(|&y| if y { pos_weight } else { 1.0 })
        .sum();
    let mut loss = 0.0;
    let mut grads = vec![0.0; scores.len()];
    for (i, (&s, &y)) in scores.iter().zip(labels).enumerate() {
        let sc = s.clamp(EPS, 1.0 - EPS);
        if y {
            loss += -pos_weight * sc.ln();
            grads[i] = -pos_weight / sc / weight_sum;
        } else {
            loss += -(1.0 - sc).ln();
            grads[i] = 1.0 / (1.0 - sc) / weight_sum;
        }
    }
    (loss / weight_sum, grads)
}

// ── optimizer ───────────────────────────────────────────────────────────────

/// Adam with bias correction; defaults lr 1e-4, beta1 0.9, beta2 0.999,
/// eps 1e-8.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &Params, lr: f64) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
            v: params.iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
        }
    }

    /// One update over all parameter blocks; `grads[i]` matches block `i`.
    pub fn step(&mut self, params: &mut Params, grads: &[Vec<f64>]) {
        assert_eq!(grads.len(), params.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (block, grad) in grads.iter().enumerate() {
            let tensor = params.get_mut(ParamId(block));
            assert_eq!(grad.len(), tensor.len());
            for i in 0..grad.len() {
                let m = &mut self.m[block][i];
                let v = &mut self.v[block][i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * grad[i];
                *v = self.beta2 * *v + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                tensor.data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

// ── gradient checking ───────────────────────────────────────────────────────

#[derive(Debug)]
pub struct GradCheckReport {
    /// `(block name, max relative error)` per parameter block.
    pub blocks: Vec<(String, f64)>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Central-difference check of analytic gradients over every parameter
/// element. `loss` must return the scalar loss and one gradient vector per
/// parameter block. Relative error uses `max(|analytic|, |numeric|, 0.01)` as
/// the scale so near-zero gradients compare absolutely.
pub fn grad_check<F>(params: &mut Params, mut loss: F, fd_step: f64) -> GradCheckReport
where
    F: FnMut(&Params) -> (f64, Vec<Vec<f64>>),
{
    let (_, analytic) = loss(params);
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    let mut blocks = Vec::new();
    let mut overall = 0.0f64;
    for block in 0..params.len() {
        let mut worst = 0.0f64;
        for i in 0..params.get(ParamId(block)).len() {
            let orig = params.get(ParamId(block)).data[i];
            params.get_mut(ParamId(block)).data[i] = orig + fd_step;
            let plus = loss(params).0;
            params.get_mut(ParamId(block)).data[i] = orig - fd_step;
            let minus = loss(params).0;
            params.get_mut(ParamId(block)).data[i] = orig;

            let numeric = (plus - minus) / (2.0 * fd_step);
            let a = analytic[block][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(0.01);
            worst = worst.max(rel);
        }
        overall = overall.max(worst);
        blocks.push((names[block].clone(), worst));
    }
    GradCheckReport {
        blocks,
        max_rel_error: overall,
    }
}

// ── checkpoints ─────────────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    format: String,
    /// Caller-provided description: architecture, layer specs, seed.
    meta: Value,
    blob: String,
    params: Vec<CheckpointEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    shape: Vec<usize>,
    /// Element offset into the blob (not bytes).
    offset: usize,
}

const CHECKPOINT_FORMAT: &str = "gesture-params-v1";

/// Writes `<stem>.json` (manifest) and `<stem>.bin` (all parameter blocks
/// concatenated in manifest order as little-endian f64).
pub fn save_checkpoint(stem: &Path, meta: Value, params: &Params) -> Result<(), DiffError> {
    let json_path = stem.with_extension("json");
    let bin_path = stem.with_extension("bin");
    let io_err = |path: &PathBuf| {
        let p = path.display().to_string();
        move |source| DiffError::Io { path: p.clone(), source }
    };

    let mut entries = Vec::new();
    let mut offset = 0usize;
    for (name, tensor) in params.iter() {
        entries.push(CheckpointEntry {
            name: name.to_string(),
            shape: tensor.shape.clone(),
            offset,
        });
        offset += tensor.len();
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.to_string(),
        meta,
        blob: bin_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        params: entries,
    };

    let json_file = File::create(&json_path).map_err(io_err(&json_path))?;
    serde_json::to_writer_pretty(BufWriter::new(json_file), &manifest).map_err(|e| {
        DiffError::BadCheckpoint {
            path: json_path.display().to_string(),
            message: e.to_string(),
        }
    })?;

    let mut bin = BufWriter::new(File::create(&bin_path).map_err(io_err(&bin_path))?);
    for (_, tensor) in params.iter() {
        for v in &tensor.data {
            bin.write_all(&v.to_le_bytes()).map_err(io_err(&bin_path))?;
        }
    }
    bin.flush().map_err(io_err(&bin_path))?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`]; returns the caller
/// metadata and the reconstructed parameter blocks.
pub fn load_checkpoint(stem: &Path) -> Result<(Value, Params), DiffError> {
    let json_path = stem.with_extension("json");
    let file = File::open(&json_path).map_err(|source| DiffError::Io {
        path: json_path.display().to_string(),
        source,
    })?;
    let manifest: CheckpointManifest =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| DiffError::BadCheckpoint {
            path: json_path.display().to_string(),
            message: e.to_string(),
        })?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(DiffError::BadCheckpoint {
            path: json_path.display().to_string(),
            message: format!("unknown format {:?}", manifest.format),
        });
    }

    let bin_path = stem.with_extension("bin");
    let mut bytes = Vec::new();
    File::open(&bin_path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| DiffError::Io {
            path: bin_path.display().to_string(),
            source,
        })?;

    let mut params = Params::new();
    for entry in &manifest.params {
        let len: usize = entry.shape.iter().product();
        let start = entry.offset * 8;
        let end = start + len * 8;
        if end > bytes.len() {
            return Err(DiffError::BadCheckpoint {
                path: bin_path.display().to_string(),
                message: format!(
                    "blob too short for block {:?} ({} bytes, need {end})",
                    entry.name,
                    bytes.len()
                ),
            });
        }
        let data: Vec<f64> = bytes[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.add(
            &entry.name,
            Tensor {
                shape: entry.shape.clone(),
                data,
            },
        );
    }
    Ok((manifest.meta, params))
}
