//! Token vocabulary and the two transformer stacks: the text encoder that
//! stands in for the pretrained language model, and the fusion encoder.

use std::collections::HashMap;

use rand_distr::{Distribution, Normal};
use tqr_tensor::{Graph, NodeId, ParamId, ParamSet, Tensor};

use crate::seed::rng_for;
use crate::{Result, TqrError};

pub const CLS: &str = "[CLS]";
pub const UNK: &str = "[UNK]";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// `[CLS]` and `[UNK]` take ids 0 and 1; `words` follow in order.
    pub fn new(words: impl IntoIterator<Item = String>) -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for w in [CLS.to_string(), UNK.to_string()].into_iter().chain(words) {
            if !v.index.contains_key(&w) {
                v.index.insert(w.clone(), v.tokens.len());
                v.tokens.push(w);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(1)
    }

    /// Ids with the leading `[CLS]`.
    pub fn encode(&self, tokens: &[String]) -> Result<Vec<usize>> {
        if tokens.is_empty() {
            return Err(TqrError::invalid("cannot encode an empty question"));
        }
        Ok(std::iter::once(0).chain(tokens.iter().map(|t| self.id(t))).collect())
    }
}

/// Standard sinusoidal position table `[n, d]`.
pub fn sinusoidal(n: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(vec![n, d]);
    for p in 0..n {
        let row = t.row_slice_mut(p);
        for i in 0..d {
            let k = (i / 2) as f64;
            let angle = p as f64 / 10000f64.powf(2.0 * k / d as f64);
            row[i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}

/// Seeded Gaussian parameter with the given standard deviation; each name
/// draws from its own stream.
pub(crate) fn init_param(params: &mut ParamSet, seed: u64, name: &str, rows: usize, cols: usize, std: f64) -> ParamId {
    let normal = Normal::new(0.0, std).expect("positive std");
    let mut rng = rng_for(seed, name);
    let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
    params.add(name, Tensor::new(vec![rows, cols], data).expect("shape"))
}

pub(crate) fn linear(params: &mut ParamSet, seed: u64, name: &str, fan_in: usize, fan_out: usize) -> ParamId {
    init_param(params, seed, name, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt())
}

fn const_param(params: &mut ParamSet, name: &str, cols: usize, v: f64) -> ParamId {
    params.add(name, Tensor::filled(vec![1, cols], v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    fn new(params: &mut ParamSet, name: &str, d: usize) -> Self {
        Norm {
            gain: const_param(params, &format!("{name}.g"), d, 1.0),
            bias: const_param(params, &format!("{name}.b"), d, 0.0),
        }
    }

    fn apply(&self, g: &mut Graph, params: &ParamSet, x: NodeId) -> Result<NodeId> {
        let gain = g.param(params, self.gain);
        let bias = g.param(params, self.bias);
        Ok(g.layer_norm(x, gain, bias)?)
    }
}

/// Pre-norm transformer block.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Block {
    heads: usize,
    ln1: Norm,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ln2: Norm,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl Block {
    fn new(params: &mut ParamSet, seed: u64, name: &str, d: usize, heads: usize) -> Self {
        let ff = 2 * d;
        Block {
            heads,
            ln1: Norm::new(params, &format!("{name}.ln1"), d),
            wq: linear(params, seed, &format!("{name}.wq"), d, d),
            wk: linear(params, seed, &format!("{name}.wk"), d, d),
            wv: linear(params, seed, &format!("{name}.wv"), d, d),
            wo: linear(params, seed, &format!("{name}.wo"), d, d),
            ln2: Norm::new(params, &format!("{name}.ln2"), d),
            w1: linear(params, seed, &format!("{name}.w1"), d, ff),
            b1: const_param(params, &format!("{name}.b1"), ff, 0.0),
            w2: linear(params, seed, &format!("{name}.w2"), ff, d),
            b2: const_param(params, &format!("{name}.b2"), d, 0.0),
        }
    }

    fn forward(&self, g: &mut Graph, params: &ParamSet, x: NodeId) -> Result<NodeId> {
        let d = g.shape(x)[1];
        let dh = d / self.heads;
        let h = self.ln1.apply(g, params, x)?;
        let (wq, wk, wv, wo) = (
            g.param(params, self.wq),
            g.param(params, self.wk),
            g.param(params, self.wv),
            g.param(params, self.wo),
        );
        let q = g.matmul(h, wq)?;
        let k = g.matmul(h, wk)?;
        let v = g.matmul(h, wv)?;
        let mut outs = Vec::with_capacity(self.heads);
        for i in 0..self.heads {
            let (lo, hi) = (i * dh, (i + 1) * dh);
            let qi = if self.heads == 1 { q } else { g.slice_cols(q, lo, hi)? };
            let ki = if self.heads == 1 { k } else { g.slice_cols(k, lo, hi)? };
            let vi = if self.heads == 1 { v } else { g.slice_cols(v, lo, hi)? };
            outs.push(g.attention(qi, ki, vi)?);
        }
        let att = if self.heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
        let att = g.matmul(att, wo)?;
        let x = g.add(x, att)?;
        let h = self.ln2.apply(g, params, x)?;
        let (w1, b1, w2, b2) = (
            g.param(params, self.w1),
            g.param(params, self.b1),
            g.param(params, self.w2),
            g.param(params, self.b2),
        );
        let f = g.matmul(h, w1)?;
        let f = g.add_row(f, b1)?;
        let f = g.gelu(f)?;
        let f = g.matmul(f, w2)?;
        let f = g.add_row(f, b2)?;
        Ok(g.add(x, f)?)
    }
}

/// `l` blocks plus a closing norm; `l = 0` is the identity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stack {
    blocks: Vec<Block>,
    out: Option<Norm>,
}

impl Stack {
    pub fn new(params: &mut ParamSet, seed: u64, name: &str, d: usize, layers: usize, heads: usize) -> Result<Self> {
        if layers > 0 && (heads == 0 || d % heads != 0) {
            return Err(TqrError::invalid(format!("width {d} is not divisible into {heads} heads")));
        }
        let blocks = (0..layers).map(|i| Block::new(params, seed, &format!("{name}.l{i}"), d, heads)).collect();
        let out = (layers > 0).then(|| Norm::new(params, &format!("{name}.out"), d));
        Ok(Stack { blocks, out })
    }

    pub fn layers(&self) -> usize {
        self.blocks.len()
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamSet, mut x: NodeId) -> Result<NodeId> {
        for b in &self.blocks {
            x = b.forward(g, params, x)?;
        }
        match &self.out {
            Some(n) => n.apply(g, params, x),
            None => Ok(x),
        }
    }
}

/// Token embeddings, fixed sinusoidal positions and a transformer stack.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoder {
    pub vocab: Vocab,
    emb: ParamId,
    stack: Stack,
    width: usize,
}

impl TextEncoder {
    pub fn new(params: &mut ParamSet, seed: u64, vocab: Vocab, width: usize, layers: usize, heads: usize) -> Result<Self> {
        let emb = init_param(params, seed, "text.emb", vocab.len(), width, 1.0);
        let stack = Stack::new(params, seed, "text", width, layers, heads)?;
        Ok(TextEncoder { vocab, emb, stack, width })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn layers(&self) -> usize {
        self.stack.layers()
    }

    /// `[N+1, width]` contextual token states.
    pub fn forward(&self, g: &mut Graph, params: &ParamSet, ids: &[usize], positions: NodeId) -> Result<NodeId> {
        let table = g.param(params, self.emb);
        let x = g.gather_rows(table, ids)?;
        let pos = if g.shape(positions)[0] == ids.len() {
            positions
        } else {
            g.slice_rows(positions, 0, ids.len())?
        };
        let x = g.add(x, pos)?;
        self.stack.forward(g, params, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_ids() {
        let v = Vocab::new(["who".to_string(), "held".to_string(), "who".to_string()]);
        assert_eq!(v.len(), 4);
        assert_eq!(v.encode(&["who".into(), "zzz".into()]).unwrap(), vec![0, 2, 1]);
        assert!(v.encode(&[]).is_err());
    }

    #[test]
    fn stack_preserves_shape() {
        let mut p = ParamSet::new();
        let s = Stack::new(&mut p, 0, "f", 8, 2, 2).unwrap();
        let mut g = Graph::new();
        let x = g.input(sinusoidal(5, 8));
        let y = s.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.shape(y), &[5, 8]);
        assert!(Stack::new(&mut p, 0, "bad", 8, 1, 3).is_err());
    }

    #[test]
    fn identity_stack() {
        let mut p = ParamSet::new();
        let s = Stack::new(&mut p, 0, "f", 4, 0, 2).unwrap();
        let mut g = Graph::new();
        let x = g.input(sinusoidal(3, 4));
        assert_eq!(s.forward(&mut g, &p, x).unwrap(), x);
    }
}
