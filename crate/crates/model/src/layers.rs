//! Parameter containers and their on-tape forms: LSTM cell, embedding
//! table, bilinear attention, and the bidirectional encoder.

use treenmt_tensor::rng::SplitRng;
use treenmt_tensor::{Scalar, Tape, Tensor, TensorError, Var};

use crate::error::{ModelError, Result};

const INIT_RANGE: f64 = 0.1;

pub fn uniform_init<F: Scalar>(shape: &[usize], rng: &mut SplitRng) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| F::from_f64(rng.uniform(-INIT_RANGE, INIT_RANGE)))
        .collect();
    Tensor::from_vec(shape.to_vec(), data).expect("matching length")
}

/// Single LSTM cell. Gate blocks are ordered input, forget, cell, output;
/// the forget-gate bias starts at one.
#[derive(Debug, Clone)]
pub struct LstmParams<F: Scalar> {
    pub w_ih: Tensor<F>,
    pub w_hh: Tensor<F>,
    pub bias: Tensor<F>,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl<F: Scalar> LstmParams<F> {
    pub fn new(input_size: usize, hidden_size: usize, rng: &mut SplitRng) -> Self {
        let mut bias = Tensor::zeros(&[4 * hidden_size]);
        for i in hidden_size..2 * hidden_size {
            bias.data_mut()[i] = F::ONE;
        }
        LstmParams {
            w_ih: uniform_init(&[4 * hidden_size, input_size], rng),
            w_hh: uniform_init(&[4 * hidden_size, hidden_size], rng),
            bias,
            input_size,
            hidden_size,
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<F>)) {
        f(format!("{prefix}.w_ih"), &self.w_ih);
        f(format!("{prefix}.w_hh"), &self.w_hh);
        f(format!("{prefix}.bias"), &self.bias);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<F>)) {
        f(format!("{prefix}.w_ih"), &mut self.w_ih);
        f(format!("{prefix}.w_hh"), &mut self.w_hh);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

#[derive(Clone, Copy)]
pub struct LstmVars<'t, F: Scalar> {
    w_ih: Var<'t, F>,
    w_hh: Var<'t, F>,
    bias: Var<'t, F>,
    hidden_size: usize,
}

impl<'t, F: Scalar> LstmVars<'t, F> {
    pub fn mount(params: &LstmParams<F>, tape: &'t Tape<F>) -> Self {
        LstmVars {
            w_ih: tape.leaf(params.w_ih.clone()),
            w_hh: tape.leaf(params.w_hh.clone()),
            bias: tape.leaf(params.bias.clone()),
            hidden_size: params.hidden_size,
        }
    }

    pub fn vars(&self) -> [Var<'t, F>; 3] {
        [self.w_ih, self.w_hh, self.bias]
    }

    /// One step of the standard gate arithmetic.
    pub fn step(
        &self,
        input: Var<'t, F>,
        h: Var<'t, F>,
        c: Var<'t, F>,
    ) -> Result<(Var<'t, F>, Var<'t, F>), TensorError> {
        let hs = self.hidden_size;
        let gates = self
            .w_ih
            .matmul(input)?
            .add(self.w_hh.matmul(h)?)?
            .add(self.bias)?;
        let i = gates.slice(0, hs)?.sigmoid()?;
        let f = gates.slice(hs, hs)?.sigmoid()?;
        let g = gates.slice(2 * hs, hs)?.tanh()?;
        let o = gates.slice(3 * hs, hs)?.sigmoid()?;
        let c_next = f.mul(c)?.add(i.mul(g)?)?;
        let h_next = o.mul(c_next.tanh()?)?;
        Ok((h_next, c_next))
    }
}

/// Bilinear ("general") attention over encoder states.
#[derive(Debug, Clone)]
pub struct AttentionParams<F: Scalar> {
    /// `[2H, H]` scoring matrix: `score_i = e_i . (W q)`.
    pub w: Tensor<F>,
}

impl<F: Scalar> AttentionParams<F> {
    pub fn new(hidden_size: usize, rng: &mut SplitRng) -> Self {
        AttentionParams {
            w: uniform_init(&[2 * hidden_size, hidden_size], rng),
        }
    }
}

#[derive(Clone, Copy)]
pub struct AttentionVars<'t, F: Scalar> {
    w: Var<'t, F>,
}

impl<'t, F: Scalar> AttentionVars<'t, F> {
    pub fn mount(params: &AttentionParams<F>, tape: &'t Tape<F>) -> Self {
        AttentionVars {
            w: tape.leaf(params.w.clone()),
        }
    }

    pub fn var(&self) -> Var<'t, F> {
        self.w
    }

    /// Context vector and attention weights for a decoder-state query.
    pub fn attend(
        &self,
        query: Var<'t, F>,
        states: Var<'t, F>,
    ) -> Result<(Var<'t, F>, Var<'t, F>), TensorError> {
        let scores = states.matmul(self.w.matmul(query)?)?;
        let len = scores.shape()[0];
        let weights = scores.softmax_masked(&vec![true; len])?;
        let ctx = states.t()?.matmul(weights)?;
        Ok((ctx, weights))
    }
}

/// Bidirectional LSTM encoder with a tanh-affine projection of the two
/// final directional states; the projection initializes both decoder RNNs.
#[derive(Debug, Clone)]
pub struct EncoderParams<F: Scalar> {
    pub emb: Tensor<F>,
    pub fwd: LstmParams<F>,
    pub bwd: LstmParams<F>,
    pub init_w: Tensor<F>,
    pub init_b: Tensor<F>,
    pub hidden_size: usize,
}

impl<F: Scalar> EncoderParams<F> {
    pub fn new(vocab_size: usize, embed_size: usize, hidden_size: usize, rng: &mut SplitRng) -> Self {
        EncoderParams {
            emb: uniform_init(&[vocab_size, embed_size], &mut rng.stream("emb")),
            fwd: LstmParams::new(embed_size, hidden_size, &mut rng.stream("fwd")),
            bwd: LstmParams::new(embed_size, hidden_size, &mut rng.stream("bwd")),
            init_w: uniform_init(&[hidden_size, 2 * hidden_size], &mut rng.stream("init")),
            init_b: Tensor::zeros(&[hidden_size]),
            hidden_size,
        }
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor<F>)) {
        f("encoder.emb".into(), &self.emb);
        self.fwd.visit("encoder.fwd", f);
        self.bwd.visit("encoder.bwd", f);
        f("encoder.init.w".into(), &self.init_w);
        f("encoder.init.b".into(), &self.init_b);
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Tensor<F>)) {
        f("encoder.emb".into(), &mut self.emb);
        self.fwd.visit_mut("encoder.fwd", f);
        self.bwd.visit_mut("encoder.bwd", f);
        f("encoder.init.w".into(), &mut self.init_w);
        f("encoder.init.b".into(), &mut self.init_b);
    }
}

#[derive(Clone, Copy)]
pub struct EncoderVars<'t, F: Scalar> {
    emb: Var<'t, F>,
    fwd: LstmVars<'t, F>,
    bwd: LstmVars<'t, F>,
    init_w: Var<'t, F>,
    init_b: Var<'t, F>,
    hidden_size: usize,
}

/// Per-position states (`[len, 2H]`) plus the decoder-initialization vector.
#[derive(Clone, Copy)]
pub struct Encoded<'t, F: Scalar> {
    pub states: Var<'t, F>,
    pub init: Var<'t, F>,
    pub len: usize,
}

impl<'t, F: Scalar> EncoderVars<'t, F> {
    pub fn emb_var(&self) -> Var<'t, F> {
        self.emb
    }

    pub fn fwd_vars(&self) -> [Var<'t, F>; 3] {
        self.fwd.vars()
    }

    pub fn bwd_vars(&self) -> [Var<'t, F>; 3] {
        self.bwd.vars()
    }

    pub fn init_w_var(&self) -> Var<'t, F> {
        self.init_w
    }

    pub fn init_b_var(&self) -> Var<'t, F> {
        self.init_b
    }

    pub fn mount(params: &EncoderParams<F>, tape: &'t Tape<F>) -> Self {
        EncoderVars {
            emb: tape.leaf(params.emb.clone()),
            fwd: LstmVars::mount(&params.fwd, tape),
            bwd: LstmVars::mount(&params.bwd, tape),
            init_w: tape.leaf(params.init_w.clone()),
            init_b: tape.leaf(params.init_b.clone()),
            hidden_size: params.hidden_size,
        }
    }

    pub fn encode(&self, tape: &'t Tape<F>, ids: &[usize]) -> Result<Encoded<'t, F>> {
        if ids.is_empty() {
            return Err(ModelError::EmptySource);
        }
        let hs = self.hidden_size;
        let zero = tape.leaf(Tensor::zeros(&[hs]));

        let embs: Vec<Var<'t, F>> = ids
            .iter()
            .map(|&id| self.emb.row(id))
            .collect::<Result<_, _>>()?;

        let (mut h, mut c) = (zero, zero);
        let mut fwd_states = Vec::with_capacity(ids.len());
        for &x in &embs {
            let (h2, c2) = self.fwd.step(x, h, c)?;
            h = h2;
            c = c2;
            fwd_states.push(h);
        }
        let fwd_last = h;

        let (mut h, mut c) = (zero, zero);
        let mut bwd_states = vec![zero; ids.len()];
        for (i, &x) in embs.iter().enumerate().rev() {
            let (h2, c2) = self.bwd.step(x, h, c)?;
            h = h2;
            c = c2;
            bwd_states[i] = h;
        }
        let bwd_last = h;

        let rows: Vec<Var<'t, F>> = fwd_states
            .iter()
            .zip(&bwd_states)
            .map(|(&f, &b)| tape.concat(&[f, b]))
            .collect::<Result<_, _>>()?;
        let states = tape.stack_rows(&rows)?;

        let finals = tape.concat(&[fwd_last, bwd_last])?;
        let init = self.init_w.matmul(finals)?.add(self.init_b)?.tanh()?;
        Ok(Encoded {
            states,
            init,
            len: ids.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tape_and_rng() -> (Tape<f64>, SplitRng) {
        (Tape::new(), SplitRng::new(3))
    }

    #[test]
    fn zero_weight_lstm_maps_everything_to_zero() {
        let (tape, _) = tape_and_rng();
        let params = LstmParams::<f64> {
            w_ih: Tensor::zeros(&[8, 3]),
            w_hh: Tensor::zeros(&[8, 2]),
            bias: Tensor::zeros(&[8]),
            input_size: 3,
            hidden_size: 2,
        };
        let cell = LstmVars::mount(&params, &tape);
        let x = tape.leaf(Tensor::vector(vec![0.7, -1.0, 2.0]));
        let z = tape.leaf(Tensor::zeros(&[2]));
        let (h, _) = cell.step(x, z, z).unwrap();
        assert_eq!(h.value().data(), &[0.0, 0.0]);
    }

    #[test]
    fn lstm_hidden_state_stays_inside_unit_box() {
        let (tape, mut rng) = tape_and_rng();
        let params = LstmParams::<f64>::new(4, 3, &mut rng);
        let cell = LstmVars::mount(&params, &tape);
        let mut h = tape.leaf(Tensor::zeros(&[3]));
        let mut c = tape.leaf(Tensor::zeros(&[3]));
        for i in 0..20 {
            let x = tape.leaf(Tensor::vector(
                (0..4).map(|j| ((i * 7 + j * 3) as f64).sin() * 3.0).collect(),
            ));
            let (h2, c2) = cell.step(x, h, c).unwrap();
            h = h2;
            c = c2;
            for &v in h.value().data() {
                assert!(v.abs() < 1.0);
            }
        }
    }

    #[test]
    fn encoder_output_length_matches_input() {
        let (tape, mut rng) = tape_and_rng();
        let params = EncoderParams::<f64>::new(10, 4, 3, &mut rng);
        let enc = EncoderVars::mount(&params, &tape);
        for len in [1usize, 2, 5, 9] {
            let ids: Vec<usize> = (0..len).map(|i| i % 10).collect();
            let out = enc.encode(&tape, &ids).unwrap();
            assert_eq!(out.states.shape(), vec![len, 6]);
            assert_eq!(out.init.shape(), vec![3]);
        }
    }

    #[test]
    fn encoder_rejects_empty_input() {
        let (tape, mut rng) = tape_and_rng();
        let params = EncoderParams::<f64>::new(10, 4, 3, &mut rng);
        let enc = EncoderVars::mount(&params, &tape);
        assert!(matches!(
            enc.encode(&tape, &[]),
            Err(ModelError::EmptySource)
        ));
    }

    #[test]
    fn tied_directions_mirror_under_input_reversal() {
        // With fwd and bwd sharing weights, encoding the reversed sentence
        // gives the same state matrix with rows reversed and the two
        // direction halves swapped.
        let (tape, mut rng) = tape_and_rng();
        let mut params = EncoderParams::<f64>::new(10, 4, 3, &mut rng);
        params.bwd = params.fwd.clone();
        let enc = EncoderVars::mount(&params, &tape);

        let ids = [1usize, 4, 2, 7];
        let rev: Vec<usize> = ids.iter().rev().copied().collect();
        let a = enc.encode(&tape, &ids).unwrap().states.value();
        let b = enc.encode(&tape, &rev).unwrap().states.value();

        let (n, h) = (ids.len(), 3usize);
        for i in 0..n {
            for k in 0..h {
                let fwd_a = a.at2(i, k);
                let bwd_b = b.at2(n - 1 - i, h + k);
                assert!((fwd_a - bwd_b).abs() < 1e-12);
                let bwd_a = a.at2(i, h + k);
                let fwd_b = b.at2(n - 1 - i, k);
                assert!((bwd_a - fwd_b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_on_single_position_is_the_identity() {
        let (tape, mut rng) = tape_and_rng();
        let params = AttentionParams::<f64>::new(2, &mut rng);
        let att = AttentionVars::mount(&params, &tape);
        let state = Tensor::vector(vec![0.3, -0.5, 0.9, 0.1]);
        let states = tape.stack_rows(&[tape.leaf(state.clone())]).unwrap();
        let q = tape.leaf(Tensor::vector(vec![1.0, -2.0]));
        let (ctx, weights) = att.attend(q, states).unwrap();
        assert_eq!(weights.value().data(), &[1.0]);
        assert_eq!(ctx.value(), state);
    }

    #[test]
    fn identical_states_get_uniform_attention() {
        let (tape, mut rng) = tape_and_rng();
        let params = AttentionParams::<f64>::new(2, &mut rng);
        let att = AttentionVars::mount(&params, &tape);
        let row = tape.leaf(Tensor::vector(vec![0.2, 0.4, -0.6, 0.8]));
        let states = tape.stack_rows(&[row, row, row, row]).unwrap();
        let q = tape.leaf(Tensor::vector(vec![0.5, 0.5]));
        let (_, weights) = att.attend(q, states).unwrap();
        for &w in weights.value().data() {
            assert!((w - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_weights_sum_to_one_and_context_is_convex() {
        let (tape, mut rng) = tape_and_rng();
        let params = AttentionParams::<f64>::new(3, &mut rng);
        let att = AttentionVars::mount(&params, &tape);
        for trial in 0..20 {
            let len = 1 + rng.below(6);
            let rows: Vec<_> = (0..len)
                .map(|_| tape.leaf(uniform_init::<f64>(&[6], &mut rng)))
                .collect();
            let states = tape.stack_rows(&rows).unwrap();
            let q = tape.leaf(uniform_init::<f64>(&[3], &mut rng));
            let (ctx, weights) = att.attend(q, states).unwrap();
            let total: f64 = weights.value().data().iter().sum();
            assert!((total - 1.0).abs() < 1e-6, "trial {trial}");

            let sv = states.value();
            let cv = ctx.value();
            for k in 0..6 {
                let col: Vec<f64> = (0..len).map(|i| sv.at2(i, k)).collect();
                let (lo, hi) = col
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                        (lo.min(x), hi.max(x))
                    });
                assert!(cv.data()[k] >= lo - 1e-9 && cv.data()[k] <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        // Loss = sum(h') after one step; checks the cell end to end.
        let mut rng = SplitRng::new(5);
        let params = LstmParams::<f64>::new(3, 2, &mut rng);
        let x0 = uniform_init::<f64>(&[3], &mut rng);
        let h0 = uniform_init::<f64>(&[2], &mut rng);
        let c0 = uniform_init::<f64>(&[2], &mut rng);

        let eval = |p: &LstmParams<f64>| -> f64 {
            let tape = Tape::new();
            let cell = LstmVars::mount(p, &tape);
            let x = tape.leaf(x0.clone());
            let h = tape.leaf(h0.clone());
            let c = tape.leaf(c0.clone());
            let (h2, _) = cell.step(x, h, c).unwrap();
            h2.sum().unwrap().item().unwrap()
        };

        let tape = Tape::new();
        let cell = LstmVars::mount(&params, &tape);
        let x = tape.leaf(x0.clone());
        let h = tape.leaf(h0.clone());
        let c = tape.leaf(c0.clone());
        let (h2, _) = cell.step(x, h, c).unwrap();
        let loss = h2.sum().unwrap();
        let grads = tape.backward(loss).unwrap();

        let analytic = [
            grads.get(cell.w_ih),
            grads.get(cell.w_hh),
            grads.get(cell.bias),
        ];
        let eps = 1e-4;
        for (which, a) in analytic.iter().enumerate() {
            for k in 0..a.numel() {
                fn field(p: &mut LstmParams<f64>, which: usize) -> &mut Tensor<f64> {
                    match which {
                        0 => &mut p.w_ih,
                        1 => &mut p.w_hh,
                        _ => &mut p.bias,
                    }
                }
                let mut plus = params.clone();
                let mut minus = params.clone();
                field(&mut plus, which).data_mut()[k] += eps;
                field(&mut minus, which).data_mut()[k] -= eps;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                let got = a.data()[k];
                let denom = got.abs().max(numeric.abs());
                if denom < 1e-9 {
                    continue;
                }
                assert!(
                    (got - numeric).abs() / denom < 1e-6,
                    "param {which} elem {k}: {got} vs {numeric}"
                );
            }
        }
    }
}
