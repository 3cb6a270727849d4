#![allow(dead_code)]

pub mod oracles;
pub mod tasks;

use mrc::model::{Head, Model, ModelConfig};
use mrc::strategies::{build_sequence, HighlightMask, OptionInput, OrderScheme};
use mrc::text::{Token, RESERVED};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tiny_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        layers: 1,
        heads: 2,
        d_model: 8,
        d_ff: 16,
        max_len: 24,
        vocab_size,
        dropout: 0.0,
        init_std: 0.3,
        highlight: true,
    }
}

fn random_tokens(rng: &mut ChaCha8Rng, len: usize, vocab: usize) -> Vec<Token> {
    (0..len)
        .map(|_| {
            let id = rng.random_range(RESERVED as u32..vocab as u32);
            Token {
                surface: format!("t{id}"),
                id,
            }
        })
        .collect()
}

/// Random option inputs with random highlight bits, at least one set bit
/// and one clear bit per option.
pub fn random_inputs(rng: &mut ChaCha8Rng, m: usize, vocab: usize, scheme: &OrderScheme, max_len: usize) -> Vec<OptionInput> {
    let doc = random_tokens(rng, 6, vocab);
    let q = random_tokens(rng, 2, vocab);
    (0..m)
        .map(|_| {
            let o = random_tokens(rng, 2, vocab);
            let seq = build_sequence(&doc, &q, &o, scheme, max_len).unwrap();
            let mut bits: Vec<bool> = (0..seq.doc_len).map(|_| rng.random_bool(0.4)).collect();
            bits[0] = true;
            bits[1] = false;
            OptionInput {
                seq,
                mask: HighlightMask(bits),
            }
        })
        .collect()
}

pub struct GroupCheck {
    pub name: String,
    pub rel_err: f64,
    pub abs_err: f64,
    pub analytic_norm: f64,
}

/// Central finite differences over every parameter value, compared per
/// tensor by `|a - n| / max(|a|, |n|, 1e-6)` in the 2-norm.
pub fn finite_difference_check(model: &Model, inputs: &[OptionInput], gold: &[usize], lambda: f64, head: Head) -> Vec<GroupCheck> {
    let (_, grads) = model.loss_and_grad(inputs, gold, lambda, head).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|(n, _, v)| (n, v.to_vec())).collect();
    let h = 1e-5;
    let mut probe = model.clone();
    let mut out = Vec::new();
    for (ti, (name, a)) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = probe.params.tensors_mut()[ti][k];
            probe.params.tensors_mut()[ti][k] = orig + h;
            let up = probe.loss(inputs, gold, lambda, head).unwrap().loss;
            probe.params.tensors_mut()[ti][k] = orig - h;
            let down = probe.loss(inputs, gold, lambda, head).unwrap().loss;
            probe.params.tensors_mut()[ti][k] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let diff: f64 = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        // groups whose true gradient vanishes are compared on absolute error
        let rel_err = diff / na.max(nn).max(1e-6);
        out.push(GroupCheck {
            name: name.clone(),
            rel_err,
            abs_err: diff,
            analytic_norm: na,
        });
    }
    out
}
