use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use super::{Head, LayerParams, Model, ModelConfig, Params};
use crate::error::{Error, Result};
use crate::strategies::OptionInput;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Per-position highlight selector: `Some(bit)` at document positions.
pub fn highlight_slots(input: &OptionInput) -> Vec<Option<bool>> {
    input.seq.doc_index.iter().map(|di| di.map(|j| input.mask.get(j))).collect()
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let n = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / n;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let rs = *r;
        row.mapv_inplace(|v| v * rs);
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward(dy: &Array2<f64>, cache: &LnCache, g: &Array1<f64>, dg: &mut Array1<f64>, db: &mut Array1<f64>) -> Array2<f64> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let n = dy.ncols() as f64;
    let mut dx = dy * g;
    for ((mut row, xhat), &rstd) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.rstd) {
        let mean_d = row.sum() / n;
        let mean_dx = row.dot(&xhat) / n;
        row.zip_mut_with(&xhat, |d, &xh| *d = rstd * (*d - mean_d - xh * mean_dx));
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn dropout_mask<R: Rng>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn((rows, cols), || if rng.random::<f64>() < p { 0.0 } else { keep })
}

struct LayerTrace {
    ln1: LnCache,
    a: Array2<f64>,
    qkv: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    drop1: Option<Array2<f64>>,
    ln2: LnCache,
    m: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
    drop2: Option<Array2<f64>>,
}

/// Activations kept from a forward pass for backpropagation.
pub struct Trace {
    ids: Vec<u32>,
    slots: Vec<Option<bool>>,
    drop0: Option<Array2<f64>>,
    layers: Vec<LayerTrace>,
    lnf: LnCache,
    /// Final layer-normed activations, `len x d_model`.
    pub hidden: Array2<f64>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// `classification + lambda * lm`
    pub loss: f64,
    pub classification: f64,
    /// Mean next-token cross-entropy over the option sequences.
    pub lm: f64,
    pub scores: Vec<f64>,
}

fn causal_softmax(scores: &mut Array2<f64>) {
    for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
        let max = row.iter().take(i + 1).fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            if j <= i {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = 0.0;
            }
        }
        row.mapv_inplace(|v| v / sum);
    }
}

fn log_sum_exp(xs: ArrayView1<f64>) -> f64 {
    let max = xs.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    max + xs.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Model {
    fn check_input(&self, ids: &[u32], slots: &[Option<bool>]) -> Result<()> {
        if ids.is_empty() || ids.len() > self.config.max_len {
            return Err(Error::invalid(format!(
                "sequence length {} outside 1..={}",
                ids.len(),
                self.config.max_len
            )));
        }
        if slots.len() != ids.len() {
            return Err(Error::invalid("highlight slots do not match sequence length"));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(Error::invalid(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Token + position + highlight embedding for every position.
    pub fn embed(&self, ids: &[u32], slots: &[Option<bool>]) -> Result<Array2<f64>> {
        self.check_input(ids, slots)?;
        let p = &self.params;
        let mut x = Array2::zeros((ids.len(), self.config.d_model));
        for (pos, (mut row, &id)) in x.rows_mut().into_iter().zip(ids).enumerate() {
            row.assign(&p.tok_emb.row(id as usize));
            row += &p.pos_emb.row(pos);
            if self.config.highlight {
                match slots[pos] {
                    Some(true) => row += &p.hl_pos,
                    Some(false) => row += &p.hl_neg,
                    None => {}
                }
            }
        }
        Ok(x)
    }

    pub fn forward<R: Rng>(&self, ids: &[u32], slots: &[Option<bool>], mut rng: Option<&mut R>) -> Result<Trace> {
        let cfg = &self.config;
        let (len, d) = (ids.len(), cfg.d_model);
        let mut x = self.embed(ids, slots)?;
        let dropout = |rng: &mut Option<&mut R>| -> Option<Array2<f64>> {
            match rng {
                Some(r) if cfg.dropout > 0.0 => Some(dropout_mask(len, d, cfg.dropout, &mut **r)),
                _ => None,
            }
        };
        let drop0 = dropout(&mut rng);
        if let Some(mask) = &drop0 {
            x *= mask;
        }
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut layers = Vec::with_capacity(cfg.layers);
        for lp in &self.params.layers {
            let (a, ln1) = layer_norm(&x, &lp.ln1_g, &lp.ln1_b);
            let qkv = a.dot(&lp.w_qkv) + &lp.b_qkv;
            let mut ctx = Array2::zeros((len, d));
            let mut probs = Vec::with_capacity(cfg.heads);
            for h in 0..cfg.heads {
                let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
                let k = qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
                let v = qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
                let mut att = q.dot(&k.t()) * scale;
                causal_softmax(&mut att);
                ctx.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&att.dot(&v));
                probs.push(att);
            }
            let mut proj = ctx.dot(&lp.w_out) + &lp.b_out;
            let drop1 = dropout(&mut rng);
            if let Some(mask) = &drop1 {
                proj *= mask;
            }
            x += &proj;

            let (m, ln2) = layer_norm(&x, &lp.ln2_g, &lp.ln2_b);
            let pre = m.dot(&lp.w_fc) + &lp.b_fc;
            let act = pre.mapv(gelu);
            let mut out = act.dot(&lp.w_proj) + &lp.b_proj;
            let drop2 = dropout(&mut rng);
            if let Some(mask) = &drop2 {
                out *= mask;
            }
            x += &out;
            layers.push(LayerTrace {
                ln1,
                a,
                qkv,
                probs,
                ctx,
                drop1,
                ln2,
                m,
                pre,
                act,
                drop2,
            });
        }
        let (hidden, lnf) = layer_norm(&x, &self.params.lnf_g, &self.params.lnf_b);
        Ok(Trace {
            ids: ids.to_vec(),
            slots: slots.to_vec(),
            drop0,
            layers,
            lnf,
            hidden,
        })
    }

    /// Next-token logits for a plain token sequence (no highlighting). The
    /// output projection is the transposed token embedding.
    pub fn forward_lm(&self, ids: &[u32]) -> Result<Array2<f64>> {
        let slots = vec![None; ids.len()];
        let trace = self.forward::<rand_chacha::ChaCha8Rng>(ids, &slots, None)?;
        Ok(trace.hidden.dot(&self.params.tok_emb.t()))
    }

    fn score_trace(&self, trace: &Trace) -> f64 {
        trace.hidden.row(trace.len() - 1).dot(&self.params.clf_w)
    }

    pub fn score_option(&self, input: &OptionInput) -> Result<f64> {
        let slots = highlight_slots(input);
        let trace = self.forward::<rand_chacha::ChaCha8Rng>(&input.seq.ids, &slots, None)?;
        Ok(self.score_trace(&trace))
    }

    /// One score per option: the classification vector dotted with the
    /// END-token activation of that option's sequence.
    pub fn forward_choice(&self, inputs: &[OptionInput]) -> Result<Vec<f64>> {
        inputs.iter().map(|i| self.score_option(i)).collect()
    }

    /// Mean next-token cross-entropy of one trace. With `grads`, adds
    /// `coef` times its gradient and returns the gradient w.r.t. `hidden`.
    fn lm_term(&self, trace: &Trace, coef: f64, grads: Option<&mut Params>) -> (f64, Option<Array2<f64>>) {
        let n = trace.len();
        if n < 2 {
            return (0.0, None);
        }
        let inputs = trace.hidden.slice(s![..n - 1, ..]);
        let mut logits = inputs.dot(&self.params.tok_emb.t());
        let targets = &trace.ids[1..];
        let mut loss = 0.0;
        for (mut row, &t) in logits.rows_mut().into_iter().zip(targets) {
            let lse = log_sum_exp(row.view());
            loss += lse - row[t as usize];
            if grads.is_some() {
                row.mapv_inplace(|v| (v - lse).exp());
                row[t as usize] -= 1.0;
            }
        }
        let count = (n - 1) as f64;
        loss /= count;
        let grads = match grads {
            Some(g) => g,
            None => return (loss, None),
        };
        logits *= coef / count;
        let mut dhidden = Array2::zeros(trace.hidden.raw_dim());
        dhidden.slice_mut(s![..n - 1, ..]).assign(&logits.dot(&self.params.tok_emb));
        grads.tok_emb += &logits.t().dot(&inputs);
        (loss, Some(dhidden))
    }

    fn backward(&self, trace: &Trace, dhidden: Array2<f64>, grads: &mut Params) {
        let cfg = &self.config;
        let p = &self.params;
        let d = cfg.d_model;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dx = layer_norm_backward(&dhidden, &trace.lnf, &p.lnf_g, &mut grads.lnf_g, &mut grads.lnf_b);

        for ((lp, lt), lg) in p.layers.iter().zip(&trace.layers).zip(grads.layers.iter_mut()).rev() {
            let lg: &mut LayerParams = lg;
            // feed-forward block
            let mut dout = dx.clone();
            if let Some(mask) = &lt.drop2 {
                dout *= mask;
            }
            lg.w_proj += &lt.act.t().dot(&dout);
            lg.b_proj += &dout.sum_axis(Axis(0));
            let mut dpre = dout.dot(&lp.w_proj.t());
            dpre.zip_mut_with(&lt.pre, |g, &x| *g *= gelu_grad(x));
            lg.w_fc += &lt.m.t().dot(&dpre);
            lg.b_fc += &dpre.sum_axis(Axis(0));
            let dm = dpre.dot(&lp.w_fc.t());
            dx += &layer_norm_backward(&dm, &lt.ln2, &lp.ln2_g, &mut lg.ln2_g, &mut lg.ln2_b);

            // attention block
            let mut dproj = dx.clone();
            if let Some(mask) = &lt.drop1 {
                dproj *= mask;
            }
            lg.w_out += &lt.ctx.t().dot(&dproj);
            lg.b_out += &dproj.sum_axis(Axis(0));
            let dctx = dproj.dot(&lp.w_out.t());
            let mut dqkv = Array2::zeros(lt.qkv.raw_dim());
            for h in 0..cfg.heads {
                let (qs, ks, vs) = (h * dh, d + h * dh, 2 * d + h * dh);
                let q = lt.qkv.slice(s![.., qs..qs + dh]);
                let k = lt.qkv.slice(s![.., ks..ks + dh]);
                let v = lt.qkv.slice(s![.., vs..vs + dh]);
                let att = &lt.probs[h];
                let dctx_h = dctx.slice(s![.., qs..qs + dh]);
                let mut datt = dctx_h.dot(&v.t());
                dqkv.slice_mut(s![.., vs..vs + dh]).assign(&att.t().dot(&dctx_h));
                for (mut drow, prow) in datt.rows_mut().into_iter().zip(att.rows()) {
                    let inner = drow.dot(&prow);
                    drow.zip_mut_with(&prow, |g, &pv| *g = pv * (*g - inner) * scale);
                }
                dqkv.slice_mut(s![.., qs..qs + dh]).assign(&datt.dot(&k));
                dqkv.slice_mut(s![.., ks..ks + dh]).assign(&datt.t().dot(&q));
            }
            lg.w_qkv += &lt.a.t().dot(&dqkv);
            lg.b_qkv += &dqkv.sum_axis(Axis(0));
            let da = dqkv.dot(&lp.w_qkv.t());
            dx += &layer_norm_backward(&da, &lt.ln1, &lp.ln1_g, &mut lg.ln1_g, &mut lg.ln1_b);
        }

        if let Some(mask) = &trace.drop0 {
            dx *= mask;
        }
        for (pos, (row, &id)) in dx.rows().into_iter().zip(&trace.ids).enumerate() {
            let mut t = grads.tok_emb.row_mut(id as usize);
            t += &row;
            let mut pe = grads.pos_emb.row_mut(pos);
            pe += &row;
            if cfg.highlight {
                match trace.slots[pos] {
                    Some(true) => grads.hl_pos += &row,
                    Some(false) => grads.hl_neg += &row,
                    None => {}
                }
            }
        }
    }

    /// Joint objective for one instance:
    /// `classification(scores, gold) + lambda * mean_i lm(sequence_i)`.
    ///
    /// With `grads`, adds `weight` times the gradient of that objective.
    /// `rng` enables dropout.
    pub fn objective<R: Rng>(
        &self,
        inputs: &[OptionInput],
        gold: &[usize],
        lambda: f64,
        head: Head,
        mut rng: Option<&mut R>,
        mut grads: Option<(&mut Params, f64)>,
    ) -> Result<LossOutput> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("language-model weight must be non-negative, got {lambda}")));
        }
        let m = inputs.len();
        if m == 0 {
            return Err(Error::invalid("instance has no options"));
        }
        if let Some(&g) = gold.iter().find(|&&g| g >= m) {
            return Err(Error::invalid(format!("gold index {g} out of range for {m} options")));
        }
        if head == Head::Softmax && gold.len() != 1 {
            return Err(Error::invalid(format!(
                "softmax head needs exactly one gold option, got {}",
                gold.len()
            )));
        }

        let weight = grads.as_ref().map_or(0.0, |g| g.1);
        let lm_coef = weight * lambda / m as f64;
        let mut traces = Vec::with_capacity(m);
        let mut lm_grads = Vec::with_capacity(m);
        let mut lm_total = 0.0;
        for input in inputs {
            let slots = highlight_slots(input);
            let trace = self.forward(&input.seq.ids, &slots, rng.as_deref_mut())?;
            let (lm, dh) = self.lm_term(&trace, lm_coef, grads.as_mut().map(|g| &mut *g.0));
            lm_total += lm;
            lm_grads.push(dh);
            traces.push(trace);
        }
        let lm = lm_total / m as f64;
        let scores: Vec<f64> = traces.iter().map(|t| self.score_trace(t)).collect();

        let (classification, dscores) = match head {
            Head::Softmax => {
                let s = ArrayView1::from(&scores[..]);
                let lse = log_sum_exp(s);
                let g = gold[0];
                let ds: Vec<f64> = scores
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| (v - lse).exp() - (i == g) as u8 as f64)
                    .collect();
                (lse - scores[g], ds)
            }
            Head::Sigmoid => {
                let mut loss = 0.0;
                let ds = scores
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let y = gold.contains(&i) as u8 as f64;
                        loss += softplus(v) - y * v;
                        sigmoid(v) - y
                    })
                    .collect();
                (loss, ds)
            }
        };
        let loss = classification + lambda * lm;

        if let Some((grads, weight)) = grads {
            for ((trace, dlm), ds) in traces.iter().zip(lm_grads).zip(dscores) {
                let n = trace.len();
                let mut dhidden = dlm.unwrap_or_else(|| Array2::zeros(trace.hidden.raw_dim()));
                let coef = weight * ds;
                let mut last = dhidden.row_mut(n - 1);
                last.scaled_add(coef, &self.params.clf_w);
                grads.clf_w.scaled_add(coef, &trace.hidden.row(n - 1));
                self.backward(trace, dhidden, grads);
            }
        }
        Ok(LossOutput {
            loss,
            classification,
            lm,
            scores,
        })
    }

    /// Objective value without dropout or gradients.
    pub fn loss(&self, inputs: &[OptionInput], gold: &[usize], lambda: f64, head: Head) -> Result<LossOutput> {
        self.objective::<rand_chacha::ChaCha8Rng>(inputs, gold, lambda, head, None, None)
    }

    /// Objective value and its gradient (added into a fresh buffer).
    pub fn loss_and_grad(&self, inputs: &[OptionInput], gold: &[usize], lambda: f64, head: Head) -> Result<(LossOutput, Params)> {
        let mut grads = Params::zeros(&self.config);
        let out = self.objective::<rand_chacha::ChaCha8Rng>(inputs, gold, lambda, head, None, Some((&mut grads, 1.0)))?;
        Ok((out, grads))
    }
}

impl ModelConfig {
    pub(crate) fn check_compatible(&self, other: &ModelConfig) -> Result<()> {
        if self != other {
            return Err(Error::invalid(format!(
                "model configuration mismatch: {} vs {}",
                serde_json::to_string(self).unwrap_or_default(),
                serde_json::to_string(other).unwrap_or_default()
            )));
        }
        Ok(())
    }
}
