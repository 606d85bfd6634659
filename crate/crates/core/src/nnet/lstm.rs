//! LSTM cells, bidirectional layers, and the stacked sequence regressor.
//!
//! One direction processes a [T, in] sequence into [T, H]; a bidirectional
//! layer concatenates a forward and a time-reversed run into [T, 2H].
//! Backward passes are full backpropagation through time.

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::init;
use super::layers::{Dropout, Linear, TanhLayer};
use super::scalar::Scalar;
use super::tensor::{matmul, matvec, matvec_t, Tensor};
use super::Mode;

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmConfig {
    pub in_dim: usize,
    pub n_layers: usize,
    pub hidden_per_direction: usize,
    pub dropout: f64,
    pub out_dim: usize,
}

impl BiLstmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.hidden_per_direction == 0 || self.out_dim == 0 || self.in_dim == 0 {
            return Err(Error::Config("Bi-LSTM dims must all be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

impl Default for BiLstmConfig {
    fn default() -> Self {
        BiLstmConfig {
            in_dim: 64,
            n_layers: 2,
            hidden_per_direction: 256,
            dropout: 0.6,
            out_dim: 1,
        }
    }
}

#[inline]
fn sigmoid<S: Scalar>(z: S) -> S {
    S::ONE / (S::ONE + (-z).exp())
}

struct LstmCache<S: Scalar> {
    input: Tensor<S>,
    gates: Vec<S>,  // [T, 4H] post-activation (i, f, g, o)
    cells: Vec<S>,  // [T, H] cell state after update
    h_prev: Vec<S>, // [T, H] hidden state fed into step t
    c_prev: Vec<S>, // [T, H] cell state fed into step t
}

/// One LSTM direction. Gate order in the stacked weight matrices is
/// input, forget, cell candidate, output.
pub struct LstmDirection<S: Scalar> {
    pub w_ih: Tensor<S>, // [4H, in]
    pub w_hh: Tensor<S>, // [4H, H]
    pub bias: Tensor<S>, // [4H]
    in_dim: usize,
    hidden: usize,
    reverse: bool,
    cache: Option<LstmCache<S>>,
}

impl<S: Scalar> LstmDirection<S> {
    pub fn new(in_dim: usize, hidden: usize, reverse: bool, rng: &mut Rng) -> Self {
        let w_ih = init::he_uniform(&[4 * hidden, in_dim], in_dim, rng);
        // orthogonal block per gate
        let mut hh = vec![S::ZERO; 4 * hidden * hidden];
        for gate in 0..4 {
            let block = init::orthogonal(hidden, rng);
            for r in 0..hidden {
                for cidx in 0..hidden {
                    hh[(gate * hidden + r) * hidden + cidx] = S::from_f64(block[r * hidden + cidx]);
                }
            }
        }
        let w_hh = Tensor::param(&[4 * hidden, hidden], hh).unwrap();
        // forget-gate bias starts at one to keep early memory open
        let mut b = vec![S::ZERO; 4 * hidden];
        for v in &mut b[hidden..2 * hidden] {
            *v = S::ONE;
        }
        let bias = Tensor::param(&[4 * hidden], b).unwrap();
        LstmDirection {
            w_ih,
            w_hh,
            bias,
            in_dim,
            hidden,
            reverse,
            cache: None,
        }
    }

    fn time_order(&self, t_len: usize) -> Box<dyn Iterator<Item = usize>> {
        if self.reverse {
            Box::new((0..t_len).rev())
        } else {
            Box::new(0..t_len)
        }
    }

    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.in_dim {
            return Err(Error::shape(
                "lstm",
                format!("[T, {}]", self.in_dim),
                format!("{shape:?}"),
            ));
        }
        let t_len = shape[0];
        let h = self.hidden;
        let g4 = 4 * h;

        // input projections for every frame in one product
        let mut xp = vec![S::ZERO; t_len * g4];
        matmul(t_len, self.in_dim, g4, x.data(), false, self.w_ih.data(), true, false, &mut xp);
        for t in 0..t_len {
            for j in 0..g4 {
                xp[t * g4 + j] += self.bias.data()[j];
            }
        }

        let mut gates = vec![S::ZERO; t_len * g4];
        let mut cells = vec![S::ZERO; t_len * h];
        let mut h_prev_cache = vec![S::ZERO; t_len * h];
        let mut c_prev_cache = vec![S::ZERO; t_len * h];
        let mut hidden_seq = vec![S::ZERO; t_len * h];

        let mut h_state = vec![S::ZERO; h];
        let mut c_state = vec![S::ZERO; h];
        let mut z = vec![S::ZERO; g4];
        for t in self.time_order(t_len) {
            z.copy_from_slice(&xp[t * g4..(t + 1) * g4]);
            matvec(g4, h, self.w_hh.data(), &h_state, true, &mut z);
            h_prev_cache[t * h..(t + 1) * h].copy_from_slice(&h_state);
            c_prev_cache[t * h..(t + 1) * h].copy_from_slice(&c_state);
            for j in 0..h {
                let gi = sigmoid(z[j]);
                let gf = sigmoid(z[h + j]);
                let gg = z[2 * h + j].tanh();
                let go = sigmoid(z[3 * h + j]);
                let c_new = gf * c_state[j] + gi * gg;
                gates[t * g4 + j] = gi;
                gates[t * g4 + h + j] = gf;
                gates[t * g4 + 2 * h + j] = gg;
                gates[t * g4 + 3 * h + j] = go;
                cells[t * h + j] = c_new;
                c_state[j] = c_new;
                h_state[j] = go * c_new.tanh();
                hidden_seq[t * h + j] = h_state[j];
            }
        }

        let out = Tensor::from_vec(&[t_len, h], hidden_seq)?;
        self.cache = Some(LstmCache {
            input: x.clone(),
            gates,
            cells,
            h_prev: h_prev_cache,
            c_prev: c_prev_cache,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad_h: &Tensor<S>) -> Result<Tensor<S>> {
        let cache = self.cache.as_ref().ok_or_else(|| {
            Error::Integrity("lstm: backward called without a preceding forward".into())
        })?;
        let t_len = cache.input.shape()[0];
        let h = self.hidden;
        let g4 = 4 * h;

        let mut dz_all = vec![S::ZERO; t_len * g4];
        let mut dh_next = vec![S::ZERO; h];
        let mut dc_next = vec![S::ZERO; h];
        let mut dh_vec = vec![S::ZERO; h];

        // visit steps in the reverse of the forward order
        let order: Vec<usize> = self.time_order(t_len).collect();
        for &t in order.iter().rev() {
            for j in 0..h {
                let gi = cache.gates[t * g4 + j];
                let gf = cache.gates[t * g4 + h + j];
                let gg = cache.gates[t * g4 + 2 * h + j];
                let go = cache.gates[t * g4 + 3 * h + j];
                let c_t = cache.cells[t * h + j];
                let tanh_c = c_t.tanh();

                let dh = grad_h.data()[t * h + j] + dh_next[j];
                let d_o = dh * tanh_c;
                let dc = dh * go * (S::ONE - tanh_c * tanh_c) + dc_next[j];
                let d_i = dc * gg;
                let d_g = dc * gi;
                let d_f = dc * cache.c_prev[t * h + j];
                dc_next[j] = dc * gf;

                dz_all[t * g4 + j] = d_i * gi * (S::ONE - gi);
                dz_all[t * g4 + h + j] = d_f * gf * (S::ONE - gf);
                dz_all[t * g4 + 2 * h + j] = d_g * (S::ONE - gg * gg);
                dz_all[t * g4 + 3 * h + j] = d_o * go * (S::ONE - go);
            }
            // dh for the step processed next (earlier in forward order)
            matvec_t(g4, h, self.w_hh.data(), &dz_all[t * g4..(t + 1) * g4], &mut dh_vec);
            dh_next.copy_from_slice(&dh_vec);
        }

        // parameter gradients in bulk
        matmul(g4, t_len, self.in_dim, &dz_all, true, cache.input.data(), false, true, self.w_ih.grad_mut());
        matmul(g4, t_len, h, &dz_all, true, &cache.h_prev, false, true, self.w_hh.grad_mut());
        for t in 0..t_len {
            for j in 0..g4 {
                self.bias.grad_mut()[j] += dz_all[t * g4 + j];
            }
        }
        let mut dx = Tensor::zeros(cache.input.shape());
        matmul(t_len, g4, self.in_dim, &dz_all, false, self.w_ih.data(), false, false, dx.data_mut());
        Ok(dx)
    }

    pub fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(String, bool, &mut Tensor<S>)) {
        f(format!("{prefix}.w_ih"), true, &mut self.w_ih);
        f(format!("{prefix}.w_hh"), true, &mut self.w_hh);
        f(format!("{prefix}.bias"), true, &mut self.bias);
    }
}

/// Forward and reverse directions over the same input, outputs concatenated.
pub struct BiLstmLayer<S: Scalar> {
    fwd: LstmDirection<S>,
    rev: LstmDirection<S>,
    hidden: usize,
}

impl<S: Scalar> BiLstmLayer<S> {
    pub fn new(in_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        BiLstmLayer {
            fwd: LstmDirection::new(in_dim, hidden, false, rng),
            rev: LstmDirection::new(in_dim, hidden, true, rng),
            hidden,
        }
    }

    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let hf = self.fwd.forward(x)?;
        let hr = self.rev.forward(x)?;
        let t_len = x.shape()[0];
        let h = self.hidden;
        let mut out = Tensor::zeros(&[t_len, 2 * h]);
        for t in 0..t_len {
            out.data_mut()[t * 2 * h..t * 2 * h + h].copy_from_slice(&hf.data()[t * h..(t + 1) * h]);
            out.data_mut()[t * 2 * h + h..(t + 1) * 2 * h]
                .copy_from_slice(&hr.data()[t * h..(t + 1) * h]);
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor<S>) -> Result<Tensor<S>> {
        let t_len = grad.shape()[0];
        let h = self.hidden;
        let mut gf = Tensor::zeros(&[t_len, h]);
        let mut gr = Tensor::zeros(&[t_len, h]);
        for t in 0..t_len {
            gf.data_mut()[t * h..(t + 1) * h]
                .copy_from_slice(&grad.data()[t * 2 * h..t * 2 * h + h]);
            gr.data_mut()[t * h..(t + 1) * h]
                .copy_from_slice(&grad.data()[t * 2 * h + h..(t + 1) * 2 * h]);
        }
        let dxf = self.fwd.backward(&gf)?;
        let dxr = self.rev.backward(&gr)?;
        let mut dx = dxf;
        for (a, b) in dx.data_mut().iter_mut().zip(dxr.data().iter()) {
            *a += *b;
        }
        Ok(dx)
    }

    pub fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(String, bool, &mut Tensor<S>)) {
        self.fwd.visit_state(&format!("{prefix}.fwd"), f);
        self.rev.visit_state(&format!("{prefix}.rev"), f);
    }
}

/// Stacked Bi-LSTM with inter-layer dropout, a per-frame linear head and a
/// tanh output squashing predictions into (-1, 1).
pub struct BiLstmRegressor<S: Scalar> {
    cfg: BiLstmConfig,
    layers: Vec<BiLstmLayer<S>>,
    dropouts: Vec<Dropout<S>>,
    head: Linear<S>,
    out_act: TanhLayer<S>,
}

impl<S: Scalar> BiLstmRegressor<S> {
    pub fn new(cfg: &BiLstmConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::with_capacity(cfg.n_layers);
        let mut dropouts = Vec::new();
        let mut in_dim = cfg.in_dim;
        for _ in 0..cfg.n_layers {
            layers.push(BiLstmLayer::new(in_dim, cfg.hidden_per_direction, rng));
            in_dim = 2 * cfg.hidden_per_direction;
        }
        for _ in 1..cfg.n_layers {
            dropouts.push(Dropout::new(cfg.dropout));
        }
        let head = Linear::new(2 * cfg.hidden_per_direction, cfg.out_dim, rng);
        Ok(BiLstmRegressor {
            cfg: cfg.clone(),
            layers,
            dropouts,
            head,
            out_act: TanhLayer::new(),
        })
    }

    pub fn config(&self) -> &BiLstmConfig {
        &self.cfg
    }

    /// Per-frame predictions [T, out_dim], each strictly inside (-1, 1).
    /// Dropout applies between stacked layers in train mode only.
    pub fn forward(&mut self, seq: &Tensor<S>, mode: Mode, rng: &mut Rng) -> Result<Tensor<S>> {
        if seq.shape().len() != 2 || seq.shape()[0] == 0 {
            return Err(Error::shape("bilstm", "[T >= 1, in]", format!("{:?}", seq.shape())));
        }
        let width = 2 * self.cfg.hidden_per_direction;
        let mut x = self.layers[0].forward(seq)?;
        x.check_finite("bilstm.layer0", Some(width))?;
        for idx in 1..self.layers.len() {
            let dropped = self.dropouts[idx - 1].forward(&x, mode, rng)?;
            x = self.layers[idx].forward(&dropped)?;
            x.check_finite(&format!("bilstm.layer{idx}"), Some(width))?;
        }
        let y = self.head.forward(&x)?;
        let out = self.out_act.forward(&y)?;
        out.check_finite("bilstm.head", Some(self.cfg.out_dim))?;
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<S>) -> Result<()> {
        let g = self.out_act.backward(grad_out)?;
        let mut g = self.head.backward(&g)?;
        for idx in (1..self.layers.len()).rev() {
            let gl = self.layers[idx].backward(&g)?;
            g = self.dropouts[idx - 1].backward(&gl)?;
        }
        self.layers[0].backward(&g)?;
        Ok(())
    }

    pub fn visit_state(&mut self, f: &mut dyn FnMut(String, bool, &mut Tensor<S>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_state(&format!("lstm{i}"), f);
        }
        self.head.visit_state("head", f);
    }

    pub fn zero_grad(&mut self) {
        self.visit_state(&mut |_, trainable, t| {
            if trainable {
                t.zero_grad();
            }
        });
    }
}
