use std::cmp::Ordering;

use super::{Activation, MlpSpec, ParameterSet};
use crate::error::{ensure_len, Error, Result};

struct Layer {
    rows: usize,
    cols: usize,
    w_off: usize,
    b_off: usize,
    /// Column-major copy of the weights (`cols x rows`), so the forward pass
    /// accumulates whole output rows per input coordinate.
    wt: Vec<f64>,
    act: Activation,
}

/// A network bound to one parameter vector, ready for repeated evaluation.
///
/// Building a `Network` transposes the weights once; hot loops (context
/// inference, planning) should build it once and reuse it.
pub struct Network<'a> {
    params: &'a [f64],
    layers: Vec<Layer>,
}

/// Activations recorded by a forward pass, consumed by [`Network::backward`].
#[derive(Default, Clone)]
pub struct Tape {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    pres: Vec<Vec<f64>>,
    /// Activation derivative at each pre-activation, saved by the forward
    /// pass so the reverse pass needs no further exponentials.
    dacts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_in: Vec<f64>,
}

impl Tape {
    fn prepare(&mut self, net: &Network<'_>) {
        let n = net.layers.len();
        if self.acts.len() != n + 1 {
            self.acts = vec![Vec::new(); n + 1];
            self.pres = vec![Vec::new(); n];
            self.dacts = vec![Vec::new(); n];
        }
        self.acts[0].resize(net.layers[0].cols, 0.0);
        for (l, layer) in net.layers.iter().enumerate() {
            self.pres[l].resize(layer.rows, 0.0);
            self.dacts[l].resize(layer.rows, 0.0);
            self.acts[l + 1].resize(layer.rows, 0.0);
        }
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// `out = bias + sum_k input[k] * wt[k, :]`, accumulated in `k` order.
#[inline]
fn affine_into(wt: &[f64], bias: &[f64], input: &[f64], out: &mut [f64]) {
    out.copy_from_slice(bias);
    accumulate_columns(wt, input, out);
}

#[inline]
fn accumulate_columns(wt: &[f64], input: &[f64], out: &mut [f64]) {
    let rows = out.len();
    for (&xk, col) in input.iter().zip(wt.chunks_exact(rows)) {
        for (o, &w) in out.iter_mut().zip(col) {
            *o += xk * w;
        }
    }
}

#[inline]
fn activate(act: Activation, pre: &[f64], post: &mut [f64], dact: &mut [f64]) {
    match act {
        Activation::Identity => {
            post.copy_from_slice(pre);
            dact.fill(1.0);
        }
        Activation::Silu => {
            for ((p, d), &z) in post.iter_mut().zip(dact.iter_mut()).zip(pre) {
                let s = super::sigmoid(z);
                *p = z * s;
                *d = s * (1.0 + z * (1.0 - s));
            }
        }
    }
}

impl<'a> Network<'a> {
    pub fn new(spec: &MlpSpec, params: &'a ParameterSet) -> Result<Self> {
        spec.validate()?;
        params.ensure_matches(spec)?;
        let values = params.values();
        let mut layers = Vec::with_capacity(spec.num_layers());
        let mut off = 0;
        for (l, s) in spec.layer_shapes().into_iter().enumerate() {
            let w = &values[off..off + s.rows * s.cols];
            let mut wt = vec![0.0; s.rows * s.cols];
            for j in 0..s.rows {
                for k in 0..s.cols {
                    wt[k * s.rows + j] = w[j * s.cols + k];
                }
            }
            layers.push(Layer {
                rows: s.rows,
                cols: s.cols,
                w_off: off,
                b_off: off + s.rows * s.cols,
                wt,
                act: spec.activation(l),
            });
            off += s.len();
        }
        Ok(Network {
            params: values,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.rows).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn bias(&self, layer: &Layer) -> &[f64] {
        &self.params[layer.b_off..layer.b_off + layer.rows]
    }

    fn weights(&self, layer: &Layer) -> &[f64] {
        &self.params[layer.w_off..layer.w_off + layer.rows * layer.cols]
    }

    /// Forward pass recording activations into `tape`. Panics if `input`
    /// has the wrong length; the free functions in the parent module check.
    pub fn forward<'t>(&self, input: &[f64], tape: &'t mut Tape) -> &'t [f64] {
        assert_eq!(input.len(), self.input_dim(), "network input width");
        tape.prepare(self);
        tape.acts[0].copy_from_slice(input);
        self.run_layers(tape, false);
        tape.output()
    }

    /// Runs every layer. With `first_affine_done` the caller has already
    /// written the first layer's pre-activation into `tape.pres[0]`.
    fn run_layers(&self, tape: &mut Tape, first_affine_done: bool) {
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = tape.acts.split_at_mut(l + 1);
            if l > 0 || !first_affine_done {
                affine_into(&layer.wt, self.bias(layer), &before[l], &mut tape.pres[l]);
            }
            activate(layer.act, &tape.pres[l], &mut after[0], &mut tape.dacts[l]);
        }
    }

    pub fn forward_vec(&self, input: &[f64]) -> Vec<f64> {
        let mut tape = Tape::default();
        self.forward(input, &mut tape).to_vec()
    }

    /// Reverse pass for `upstream . output`. Parameter gradients are added
    /// into `param_grad`; `input_grad` is overwritten.
    pub fn backward(
        &self,
        tape: &mut Tape,
        upstream: &[f64],
        param_grad: Option<&mut [f64]>,
        input_grad: Option<&mut [f64]>,
    ) {
        self.backward_to(tape, upstream, param_grad, 0);
        if let Some(g) = input_grad {
            // tape.delta now holds dL/d(pre-activation of layer 0).
            let layer = &self.layers[0];
            g.fill(0.0);
            for (&d, row) in tape.delta.iter().zip(self.weights(layer).chunks_exact(layer.cols)) {
                for (gi, &w) in g.iter_mut().zip(row) {
                    *gi += d * w;
                }
            }
        }
    }

    /// Propagates `upstream` down to `dL/d pre_{stop}`, left in `tape.delta`.
    fn backward_to(
        &self,
        tape: &mut Tape,
        upstream: &[f64],
        mut param_grad: Option<&mut [f64]>,
        stop: usize,
    ) {
        let last = self.layers.len() - 1;
        tape.delta.clear();
        tape.delta.extend(upstream.iter().zip(&tape.dacts[last]).map(|(&u, &d)| u * d));
        for l in (stop..=last).rev() {
            let layer = &self.layers[l];
            if let Some(g) = param_grad.as_deref_mut() {
                let input = &tape.acts[l];
                let gw = &mut g[layer.w_off..layer.w_off + layer.rows * layer.cols];
                for (&d, grow) in tape.delta.iter().zip(gw.chunks_exact_mut(layer.cols)) {
                    for (gv, &a) in grow.iter_mut().zip(input) {
                        *gv += d * a;
                    }
                }
                let gb = &mut g[layer.b_off..layer.b_off + layer.rows];
                for (gv, &d) in gb.iter_mut().zip(&tape.delta) {
                    *gv += d;
                }
            }
            if l == stop {
                break;
            }
            tape.delta_in.clear();
            tape.delta_in.resize(layer.cols, 0.0);
            for (&d, row) in tape.delta.iter().zip(self.weights(layer).chunks_exact(layer.cols)) {
                for (gi, &w) in tape.delta_in.iter_mut().zip(row) {
                    *gi += d * w;
                }
            }
            for (gi, &d) in tape.delta_in.iter_mut().zip(&tape.dacts[l - 1]) {
                *gi *= d;
            }
            std::mem::swap(&mut tape.delta, &mut tape.delta_in);
        }
    }

    /// Mean squared error over a batch whose inputs all end with the same
    /// `suffix`, i.e. `mean_n |f(concat(x_n, suffix)) - y_n|^2`.
    ///
    /// The first layer's suffix contribution is computed once for the whole
    /// batch and the gradient with respect to `suffix` is formed from the
    /// summed first-layer deltas, which is what makes per-task context
    /// inference cheap. When `grad` is given it is overwritten with
    /// `d loss / d suffix`.
    pub fn shared_suffix_mse(
        &self,
        batch: &PairBatch,
        suffix: &[f64],
        grad: Option<&mut [f64]>,
        scratch: &mut SharedSuffixScratch,
    ) -> Result<f64> {
        let mut prefix = std::mem::take(&mut scratch.prefix);
        self.prepare_prefix(batch, &mut prefix)?;
        let out = self.shared_suffix_mse_prepared(batch, &prefix, suffix, grad, scratch);
        scratch.prefix = prefix;
        out
    }

    /// First-layer contribution of every `x_n` (without bias), stored
    /// row-major in `out`. It does not depend on the suffix, so a solver that
    /// evaluates many suffixes on one batch computes it once.
    pub fn prepare_prefix(&self, batch: &PairBatch, out: &mut Vec<f64>) -> Result<()> {
        let first = &self.layers[0];
        if batch.x_dim > first.cols {
            return Err(Error::shape(format!(
                "input width {} exceeds network input {}",
                batch.x_dim, first.cols
            )));
        }
        let rows = first.rows;
        let dx = batch.x_dim;
        out.clear();
        out.resize(batch.len() * rows, 0.0);
        for (i, o) in out.chunks_exact_mut(rows).enumerate() {
            accumulate_columns(&first.wt[..dx * rows], batch.x(i), o);
        }
        Ok(())
    }

    /// [`shared_suffix_mse`](Self::shared_suffix_mse) with the prefix from
    /// [`prepare_prefix`](Self::prepare_prefix) on the same batch.
    pub fn shared_suffix_mse_prepared(
        &self,
        batch: &PairBatch,
        prefix: &[f64],
        suffix: &[f64],
        grad: Option<&mut [f64]>,
        scratch: &mut SharedSuffixScratch,
    ) -> Result<f64> {
        let first = &self.layers[0];
        ensure_len(
            "input width (x + suffix)",
            batch.x_dim + suffix.len(),
            first.cols,
        )?;
        ensure_len("target width", batch.y_dim, self.output_dim())?;
        let n = batch.len();
        if n == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let dx = batch.x_dim;
        let rows = first.rows;
        ensure_len("prepared prefix", prefix.len(), n * rows)?;
        let tape = &mut scratch.tape;
        tape.prepare(self);

        let shared = &mut scratch.shared;
        shared.clear();
        shared.extend_from_slice(self.bias(first));
        accumulate_columns(&first.wt[dx * rows..], suffix, shared);

        let want_grad = grad.is_some();
        let sum_delta = &mut scratch.sum_delta;
        sum_delta.clear();
        sum_delta.resize(rows, 0.0);
        let upstream = &mut scratch.upstream;
        upstream.resize(batch.y_dim, 0.0);

        let inv_n = 1.0 / n as f64;
        let mut loss = 0.0;
        for (i, px) in prefix.chunks_exact(rows).enumerate() {
            let y = batch.y(i);
            for ((p, &s), &v) in tape.pres[0].iter_mut().zip(shared.iter()).zip(px) {
                *p = s + v;
            }
            self.run_layers(tape, true);
            let out = tape.output();
            let mut point = 0.0;
            for ((u, &f), &t) in upstream.iter_mut().zip(out).zip(y) {
                let r = f - t;
                point += r * r;
                *u = 2.0 * r * inv_n;
            }
            loss += point;
            if want_grad {
                self.backward_to(tape, upstream, None, 0);
                for (s, &d) in sum_delta.iter_mut().zip(&tape.delta) {
                    *s += d;
                }
            }
        }
        if let Some(g) = grad {
            ensure_len("suffix gradient", g.len(), suffix.len())?;
            g.fill(0.0);
            let w = self.weights(first);
            for (&d, row) in sum_delta.iter().zip(w.chunks_exact(first.cols)) {
                for (gi, &wv) in g.iter_mut().zip(&row[dx..]) {
                    *gi += d * wv;
                }
            }
        }
        Ok(loss * inv_n)
    }
}

/// Reusable buffers for [`Network::shared_suffix_mse`].
#[derive(Default, Clone)]
pub struct SharedSuffixScratch {
    tape: Tape,
    prefix: Vec<f64>,
    shared: Vec<f64>,
    sum_delta: Vec<f64>,
    upstream: Vec<f64>,
}

/// Input/target pairs stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    x_dim: usize,
    y_dim: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl PairBatch {
    pub fn new(x_dim: usize, y_dim: usize) -> Self {
        PairBatch {
            x_dim,
            y_dim,
            xs: Vec::new(),
            ys: Vec::new(),
        }
    }

    pub fn from_pairs(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<Self> {
        ensure_len("paired targets", ys.len(), xs.len())?;
        let x_dim = xs.first().map_or(0, Vec::len);
        let y_dim = ys.first().map_or(0, Vec::len);
        let mut b = PairBatch::new(x_dim, y_dim);
        for (x, y) in xs.iter().zip(ys) {
            b.push(x, y)?;
        }
        Ok(b)
    }

    pub fn push(&mut self, x: &[f64], y: &[f64]) -> Result<()> {
        ensure_len("pair input", x.len(), self.x_dim)?;
        ensure_len("pair target", y.len(), self.y_dim)?;
        self.xs.extend_from_slice(x);
        self.ys.extend_from_slice(y);
        Ok(())
    }

    pub fn len(&self) -> usize {
        if self.x_dim > 0 {
            self.xs.len() / self.x_dim
        } else if self.y_dim > 0 {
            self.ys.len() / self.y_dim
        } else {
            0
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn y_dim(&self) -> usize {
        self.y_dim
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.x_dim..(i + 1) * self.x_dim]
    }

    pub fn y(&self, i: usize) -> &[f64] {
        &self.ys[i * self.y_dim..(i + 1) * self.y_dim]
    }

    /// The same pairs sorted into a canonical order (lexicographic on the
    /// input, then the target, by IEEE total order). Reductions over a
    /// canonical batch do not depend on the order pairs were supplied in.
    pub fn canonical(&self) -> PairBatch {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            lex(self.x(a), self.x(b)).then_with(|| lex(self.y(a), self.y(b)))
        });
        let mut out = PairBatch::new(self.x_dim, self.y_dim);
        for i in idx {
            out.xs.extend_from_slice(self.x(i));
            out.ys.extend_from_slice(self.y(i));
        }
        out
    }
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::gradcheck::{check_random_networks, random_case};
    use crate::diffnet::{backward, forward, init_params};
    use rand::distributions::{Distribution, Uniform};

    #[test]
    fn reverse_pass_matches_central_differences() {
        let report = check_random_networks(100, 11).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.coordinates > 1000);
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        for seed in 0..20 {
            let (spec, params, input, u) = random_case(seed);
            let v: Vec<f64> = u.iter().map(|x| 0.3 - x * 1.7).collect();
            let (a, b) = (0.75, -2.5);
            let mixed: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
            let gu = backward(&spec, &params, &input, &u).unwrap();
            let gv = backward(&spec, &params, &input, &v).unwrap();
            let gm = backward(&spec, &params, &input, &mixed).unwrap();
            let pairs = gm
                .wrt_params
                .iter()
                .zip(gu.wrt_params.iter().zip(&gv.wrt_params))
                .chain(gm.wrt_inputs.iter().zip(gu.wrt_inputs.iter().zip(&gv.wrt_inputs)));
            for (m, (x, y)) in pairs {
                assert!((m - (a * x + b * y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let (spec, params, input, u) = random_case(3);
        let g = backward(&spec, &params, &input, &vec![0.0; u.len()]).unwrap();
        assert!(g.wrt_params.iter().chain(&g.wrt_inputs).all(|&v| v == 0.0));
    }

    fn suffix_case(seed: u64) -> (MlpSpec, ParameterSet, PairBatch, Vec<f64>) {
        let spec = MlpSpec::new(vec![3 + 4, 9, 5, 2], Activation::Silu).unwrap();
        let params = init_params(&spec, seed);
        let mut r = crate::rng::stream(seed, "test.suffix");
        let u = Uniform::new_inclusive(-1.0, 1.0);
        let mut batch = PairBatch::new(3, 2);
        for _ in 0..7 {
            let x: Vec<f64> = (0..3).map(|_| u.sample(&mut r)).collect();
            let y: Vec<f64> = (0..2).map(|_| u.sample(&mut r)).collect();
            batch.push(&x, &y).unwrap();
        }
        let c = (0..4).map(|_| u.sample(&mut r)).collect();
        (spec, params, batch, c)
    }

    #[test]
    fn shared_suffix_matches_per_point_passes() {
        for seed in 0..10 {
            let (spec, params, batch, c) = suffix_case(seed);
            let net = Network::new(&spec, &params).unwrap();
            let mut g = vec![0.0; c.len()];
            let loss = net
                .shared_suffix_mse(&batch, &c, Some(&mut g), &mut SharedSuffixScratch::default())
                .unwrap();

            // Reference: full forward/backward on each concatenated input.
            let n = batch.len() as f64;
            let mut want_loss = 0.0;
            let mut want_g = vec![0.0; c.len()];
            for i in 0..batch.len() {
                let mut input = batch.x(i).to_vec();
                input.extend_from_slice(&c);
                let out = forward(&spec, &params, &input).unwrap();
                let up: Vec<f64> = out
                    .iter()
                    .zip(batch.y(i))
                    .map(|(f, t)| 2.0 * (f - t) / n)
                    .collect();
                want_loss += out
                    .iter()
                    .zip(batch.y(i))
                    .map(|(f, t)| (f - t) * (f - t))
                    .sum::<f64>()
                    / n;
                let gr = backward(&spec, &params, &input, &up).unwrap();
                for (w, v) in want_g.iter_mut().zip(&gr.wrt_inputs[3..]) {
                    *w += v;
                }
            }
            assert!((loss - want_loss).abs() < 1e-12 * want_loss.max(1.0));
            for (a, b) in g.iter().zip(&want_g) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn shared_suffix_rejects_bad_shapes() {
        let (spec, params, batch, c) = suffix_case(0);
        let net = Network::new(&spec, &params).unwrap();
        let mut s = SharedSuffixScratch::default();
        assert!(net.shared_suffix_mse(&batch, &c[..3], None, &mut s).is_err());
        assert!(net
            .shared_suffix_mse(&PairBatch::new(3, 2), &c, None, &mut s)
            .is_err());
    }

    #[test]
    fn forward_is_bitwise_repeatable() {
        let (spec, params, input, _) = random_case(5);
        let net = Network::new(&spec, &params).unwrap();
        let mut tape = Tape::default();
        let a: Vec<u64> = net.forward(&input, &mut tape).iter().map(|v| v.to_bits()).collect();
        for _ in 0..5 {
            let b: Vec<u64> = net.forward_vec(&input).iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn canonical_order_is_permutation_invariant() {
        let (_, _, batch, _) = suffix_case(2);
        let mut rev = PairBatch::new(3, 2);
        for i in (0..batch.len()).rev() {
            rev.push(batch.x(i), batch.y(i)).unwrap();
        }
        assert_eq!(batch.canonical(), rev.canonical());
    }
}
