//! Attention-based encoder–decoder.
//!
//! * Encoder: stacked bidirectional LSTM over shared embeddings. Layer `k+1`
//!   reads the concatenated forward/backward outputs of layer `k`.
//! * Decoder init: `h_d = tanh(W_e [h_fwd; h_bwd] + W_img h_img + b)`, cell
//!   state zero. The image term only exists when `image_feature_dim > 0`.
//! * Decoder step: one LSTM layer whose input is the previous token embedding
//!   concatenated with the previous attention context (input feeding),
//!   additive attention over the top-layer annotations, then
//!   `tanh(W_c [h; ctx] + b_c)` and the output projection.
//!
//! Every operation exists twice: `*_on` variants record onto a caller-owned
//! [`Graph`] for training, and plain variants return owned values for
//! inference.

mod checkpoint;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, Regime,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamId, ParamSet, Tensor, Var};

/// Uniform init half-width for every parameter.
pub const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub attention_dim: usize,
    /// 0 disables the image term of the decoder init.
    pub image_feature_dim: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
}

impl ModelConfig {
    /// Embedding 500, two encoder layers, dropout 0.1.
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 500,
            hidden_dim: 500,
            encoder_layers: 2,
            attention_dim: 500,
            image_feature_dim: 0,
            dropout_rate: 0.1,
            seed: 1,
            max_src_len: 100,
            max_tgt_len: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("encoder_layers", self.encoder_layers),
            ("attention_dim", self.attention_dim),
            ("max_src_len", self.max_src_len),
            ("max_tgt_len", self.max_tgt_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.vocab_size < 5 {
            return Err(Error::Config(
                "vocab_size must cover the four specials plus one token".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn is_multimodal(&self) -> bool {
        self.image_feature_dim > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Where each named weight lives in the parameter set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub embedding: ParamId,
    /// `[layer][0 = forward, 1 = backward]`
    pub encoder: Vec<[LstmIds; 2]>,
    pub decoder: LstmIds,
    pub attn_query: ParamId,
    pub attn_key: ParamId,
    pub attn_score: ParamId,
    pub init_enc: ParamId,
    pub init_bias: ParamId,
    pub init_img: Option<ParamId>,
    pub combine_weight: ParamId,
    pub combine_bias: ParamId,
    pub out_weight: ParamId,
    pub out_bias: ParamId,
}

/// Names and shapes of every parameter, in creation order.
pub fn param_shapes(c: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (v, e, h, a) = (c.vocab_size, c.embed_dim, c.hidden_dim, c.attention_dim);
    let mut shapes = vec![("embedding".to_string(), vec![v, e])];
    for layer in 0..c.encoder_layers {
        let input = if layer == 0 { e } else { 2 * h };
        for dir in ["fwd", "bwd"] {
            shapes.push((format!("enc.l{layer}.{dir}.w"), vec![4 * h, input + h]));
            shapes.push((format!("enc.l{layer}.{dir}.b"), vec![4 * h, 1]));
        }
    }
    shapes.extend([
        ("dec.lstm.w".to_string(), vec![4 * h, e + 2 * h + h]),
        ("dec.lstm.b".to_string(), vec![4 * h, 1]),
        ("attn.query".to_string(), vec![a, h]),
        ("attn.key".to_string(), vec![2 * h, a]),
        ("attn.score".to_string(), vec![a, 1]),
        ("init.w_e".to_string(), vec![h, 2 * h]),
        ("init.b".to_string(), vec![h, 1]),
        ("out.combine.w".to_string(), vec![h, 3 * h]),
        ("out.combine.b".to_string(), vec![h, 1]),
        ("out.w".to_string(), vec![v, h]),
        ("out.b".to_string(), vec![v, 1]),
    ]);
    // Last, so a multimodal model shares every other initial weight with the
    // text-only model built from the same seed.
    if c.image_feature_dim > 0 {
        shapes.push(("init.w_img".to_string(), vec![h, c.image_feature_dim]));
    }
    shapes
}

impl ParamLayout {
    /// Resolves and shape-checks every parameter the config calls for.
    pub fn resolve<S: Scalar>(params: &ParamSet<S>, config: &ModelConfig) -> Result<Self> {
        let expected = param_shapes(config);
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            let id = params
                .id_of(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if params.get(id).shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, config implies {shape:?}",
                    params.get(id).shape()
                )));
            }
        }
        let id = |n: &str| params.id_of(n).expect("checked above");
        let lstm = |prefix: &str| LstmIds {
            weight: id(&format!("{prefix}.w")),
            bias: id(&format!("{prefix}.b")),
        };
        Ok(Self {
            embedding: id("embedding"),
            encoder: (0..config.encoder_layers)
                .map(|l| {
                    [
                        lstm(&format!("enc.l{l}.fwd")),
                        lstm(&format!("enc.l{l}.bwd")),
                    ]
                })
                .collect(),
            decoder: lstm("dec.lstm"),
            attn_query: id("attn.query"),
            attn_key: id("attn.key"),
            attn_score: id("attn.score"),
            init_enc: id("init.w_e"),
            init_bias: id("init.b"),
            init_img: params.id_of("init.w_img"),
            combine_weight: id("out.combine.w"),
            combine_bias: id("out.combine.b"),
            out_weight: id("out.w"),
            out_bias: id("out.b"),
        })
    }
}

/// Inverted dropout applied to embeddings and between encoder layers.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn apply<'p, S: Scalar>(&mut self, g: &mut Graph<'p, S>, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = S::of(1.0 / (1.0 - self.rate));
        let n = g.value(x).len();
        let mask = (0..n)
            .map(|_| {
                if self.rng.gen::<f64>() < self.rate {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        let m = g.constant(g.shape(x).to_vec(), mask)?;
        Ok(g.mul(x, m)?)
    }
}

fn maybe_dropout<'p, S: Scalar>(
    g: &mut Graph<'p, S>,
    x: Var,
    d: &mut Option<&mut Dropout<'_>>,
) -> Result<Var> {
    match d {
        Some(d) => d.apply(g, x),
        None => Ok(x),
    }
}

/// Encoder results recorded on a graph.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    /// `[src_len × 2·hidden]`
    pub annotations: Var,
    /// Annotations projected into attention space, `[src_len × attention_dim]`.
    pub keys: Var,
    pub forward_final: Var,
    pub backward_final: Var,
    pub src_len: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct StateVars {
    pub hidden: Var,
    pub cell: Var,
    /// Previous attention context, fed into the next step's input.
    pub context: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    pub logits: Var,
    pub attention: Var,
    pub state: StateVars,
}

/// Owned encoder output for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<S> {
    pub annotations: Tensor<S>,
    pub keys: Tensor<S>,
    pub forward_final: Vec<S>,
    pub backward_final: Vec<S>,
}

impl<S: Scalar> EncoderOutput<S> {
    pub fn src_len(&self) -> usize {
        self.annotations.shape()[0]
    }

    /// Places the output on a graph as constants.
    pub fn on_graph<'p>(&self, g: &mut Graph<'p, S>) -> EncoderVars {
        EncoderVars {
            annotations: g.input(self.annotations.clone()),
            keys: g.input(self.keys.clone()),
            forward_final: g.input(Tensor::column(self.forward_final.clone()).expect("finite")),
            backward_final: g.input(Tensor::column(self.backward_final.clone()).expect("finite")),
            src_len: self.src_len(),
        }
    }
}

/// Owned decoder recurrent state.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState<S> {
    pub hidden: Vec<S>,
    pub cell: Vec<S>,
    pub context: Vec<S>,
    pub step: usize,
}

impl<S: Scalar> DecoderState<S> {
    pub fn on_graph<'p>(&self, g: &mut Graph<'p, S>) -> StateVars {
        let col = |v: &Vec<S>| Tensor::column(v.clone()).expect("finite");
        StateVars {
            hidden: g.input(col(&self.hidden)),
            cell: g.input(col(&self.cell)),
            context: g.input(col(&self.context)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<S> {
    pub logits: Vec<S>,
    pub attention: Vec<S>,
    pub state: DecoderState<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq<S> {
    config: ModelConfig,
    params: ParamSet<S>,
    layout: ParamLayout,
}

impl<S: Scalar> Seq2Seq<S> {
    /// Fresh model with parameters drawn from `U(-0.1, 0.1)` seeded by `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        for (name, shape) in param_shapes(&config) {
            params.add_uniform(name, shape, INIT_SCALE, &mut rng);
        }
        let layout = ParamLayout::resolve(&params, &config)?;
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn from_params(config: ModelConfig, params: ParamSet<S>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::resolve(&params, &config)?;
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    /// The text-only model holding every parameter except `W_img`.
    pub fn text_only(&self) -> Self {
        let mut config = self.config.clone();
        config.image_feature_dim = 0;
        let mut params = ParamSet::new();
        for (id, name, t) in self.params.iter() {
            if Some(id) != self.layout.init_img {
                params.add(name, t.clone());
            }
        }
        Self::from_params(config, params).expect("subset of a valid layout")
    }

    /// Graph-level view over this model's own parameters.
    pub fn view(&self) -> ModelRef<'_, '_, S> {
        self.view_with(&self.params)
    }

    /// Graph-level view reading weights from `params`, which must have this
    /// model's layout (e.g. a perturbed copy during gradient checks).
    pub fn view_with<'m, 'p>(&'m self, params: &'p ParamSet<S>) -> ModelRef<'m, 'p, S> {
        debug_assert_eq!(params.len(), self.params.len());
        ModelRef {
            config: &self.config,
            layout: &self.layout,
            params,
        }
    }

    pub fn encode_on<'p>(
        &'p self,
        g: &mut Graph<'p, S>,
        src: &[usize],
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<EncoderVars> {
        self.view().encode_on(g, src, dropout)
    }

    pub fn init_decoder_on<'p>(
        &'p self,
        g: &mut Graph<'p, S>,
        enc: &EncoderVars,
        img: Option<&[S]>,
    ) -> Result<StateVars> {
        self.view().init_decoder_on(g, enc, img)
    }

    pub fn decode_step_on<'p>(
        &'p self,
        g: &mut Graph<'p, S>,
        state: &StateVars,
        prev_token: usize,
        enc: &EncoderVars,
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<StepVars> {
        self.view()
            .decode_step_on(g, state, prev_token, enc, dropout)
    }
}

/// Model architecture paired with a borrowed parameter set; records the
/// forward pass onto graphs.
#[derive(Clone, Copy)]
pub struct ModelRef<'m, 'p, S> {
    pub config: &'m ModelConfig,
    pub layout: &'m ParamLayout,
    pub params: &'p ParamSet<S>,
}

impl<'m, 'p, S: Scalar> ModelRef<'m, 'p, S> {
    fn check_source(&self, src: &[usize]) -> Result<()> {
        if src.is_empty() {
            return Err(Error::Invalid("empty source sentence".into()));
        }
        if src.len() > self.config.max_src_len {
            return Err(Error::Invalid(format!(
                "source length {} exceeds max_src_len {}",
                src.len(),
                self.config.max_src_len
            )));
        }
        Ok(())
    }

    fn lstm_cell(
        &self,
        g: &mut Graph<'p, S>,
        ids: LstmIds,
        x: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var)> {
        let hd = self.config.hidden_dim;
        let w = g.param(self.params, ids.weight)?;
        let b = g.param(self.params, ids.bias)?;
        let xh = g.concat(&[x, h])?;
        let z = g.matmul(w, xh)?;
        let z = g.add(z, b)?;
        let zi = g.slice(z, 0, hd)?;
        let zf = g.slice(z, hd, hd)?;
        let zg = g.slice(z, 2 * hd, hd)?;
        let zo = g.slice(z, 3 * hd, hd)?;
        let i = g.sigmoid(zi)?;
        let f = g.sigmoid(zf)?;
        let cand = g.tanh(zg)?;
        let o = g.sigmoid(zo)?;
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next)?;
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }

    fn embed(
        &self,
        g: &mut Graph<'p, S>,
        token: usize,
        dropout: &mut Option<&mut Dropout<'_>>,
    ) -> Result<Var> {
        let table = g.param(self.params, self.layout.embedding)?;
        let row = g.gather_rows(table, &[token])?;
        let col = g.reshape(row, vec![self.config.embed_dim, 1])?;
        maybe_dropout(g, col, dropout)
    }

    /// Runs the bidirectional encoder stack on `g`.
    pub fn encode_on(
        &self,
        g: &mut Graph<'p, S>,
        src: &[usize],
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<EncoderVars> {
        self.check_source(src)?;
        let hd = self.config.hidden_dim;
        let n = src.len();
        let mut inputs = src
            .iter()
            .map(|&t| self.embed(g, t, &mut dropout))
            .collect::<Result<Vec<_>>>()?;
        let mut fwd = Vec::with_capacity(n);
        let mut bwd = vec![None; n];
        for (layer, dirs) in self.layout.encoder.iter().enumerate() {
            fwd.clear();
            let (mut h, mut c) = (g.zeros(vec![hd, 1])?, g.zeros(vec![hd, 1])?);
            for &x in &inputs {
                (h, c) = self.lstm_cell(g, dirs[0], x, h, c)?;
                fwd.push(h);
            }
            let (mut h, mut c) = (g.zeros(vec![hd, 1])?, g.zeros(vec![hd, 1])?);
            for t in (0..n).rev() {
                (h, c) = self.lstm_cell(g, dirs[1], inputs[t], h, c)?;
                bwd[t] = Some(h);
            }
            let last = layer + 1 == self.layout.encoder.len();
            inputs = (0..n)
                .map(|t| {
                    let both = g.concat(&[fwd[t], bwd[t].expect("filled")])?;
                    if last {
                        Ok(both)
                    } else {
                        maybe_dropout(g, both, &mut dropout)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
        }
        let annotations = g.stack_rows(&inputs)?;
        let wk = g.param(self.params, self.layout.attn_key)?;
        let keys = g.matmul(annotations, wk)?;
        Ok(EncoderVars {
            annotations,
            keys,
            forward_final: fwd[n - 1],
            backward_final: bwd[0].expect("filled"),
            src_len: n,
        })
    }

    /// Decoder initial state on `g`; `img` must be present exactly when the
    /// model is multimodal.
    pub fn init_decoder_on(
        &self,
        g: &mut Graph<'p, S>,
        enc: &EncoderVars,
        img: Option<&[S]>,
    ) -> Result<StateVars> {
        let hd = self.config.hidden_dim;
        let we = g.param(self.params, self.layout.init_enc)?;
        let b = g.param(self.params, self.layout.init_bias)?;
        let both = g.concat(&[enc.forward_final, enc.backward_final])?;
        let mut pre = g.matmul(we, both)?;
        match (self.layout.init_img, img) {
            (Some(wid), Some(img)) => {
                if img.len() != self.config.image_feature_dim {
                    return Err(Error::Invalid(format!(
                        "image feature has {} dims, model expects {}",
                        img.len(),
                        self.config.image_feature_dim
                    )));
                }
                let wi = g.param(self.params, wid)?;
                let x = g.constant(vec![img.len(), 1], img.to_vec())?;
                let proj = g.matmul(wi, x)?;
                pre = g.add(pre, proj)?;
            }
            (None, None) => {}
            (Some(_), None) => {
                return Err(Error::Invalid(
                    "multimodal model needs an image feature vector".into(),
                ))
            }
            (None, Some(_)) => {
                return Err(Error::Invalid(
                    "text-only model was given an image feature vector".into(),
                ))
            }
        }
        let pre = g.add(pre, b)?;
        let hidden = g.tanh(pre)?;
        Ok(StateVars {
            hidden,
            cell: g.zeros(vec![hd, 1])?,
            context: g.zeros(vec![2 * hd, 1])?,
        })
    }

    /// One decoder step on `g`.
    pub fn decode_step_on(
        &self,
        g: &mut Graph<'p, S>,
        state: &StateVars,
        prev_token: usize,
        enc: &EncoderVars,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<StepVars> {
        let emb = self.embed(g, prev_token, &mut dropout)?;
        let x = g.concat(&[emb, state.context])?;
        let (h, c) = self.lstm_cell(g, self.layout.decoder, x, state.hidden, state.cell)?;

        let wq = g.param(self.params, self.layout.attn_query)?;
        let v = g.param(self.params, self.layout.attn_score)?;
        let q = g.matmul(wq, h)?;
        let q = g.repeat_rows(q, enc.src_len)?;
        let e = g.add(q, enc.keys)?;
        let e = g.tanh(e)?;
        let scores = g.matmul(e, v)?;
        let attention = g.softmax(scores)?;
        let row = g.reshape(attention, vec![1, enc.src_len])?;
        let ctx = g.matmul(row, enc.annotations)?;
        let ctx = g.reshape(ctx, vec![2 * self.config.hidden_dim, 1])?;

        let wc = g.param(self.params, self.layout.combine_weight)?;
        let bc = g.param(self.params, self.layout.combine_bias)?;
        let hc = g.concat(&[h, ctx])?;
        let att_h = g.matmul(wc, hc)?;
        let att_h = g.add(att_h, bc)?;
        let att_h = g.tanh(att_h)?;

        let wo = g.param(self.params, self.layout.out_weight)?;
        let bo = g.param(self.params, self.layout.out_bias)?;
        let logits = g.matmul(wo, att_h)?;
        let logits = g.add(logits, bo)?;
        Ok(StepVars {
            logits,
            attention,
            state: StateVars {
                hidden: h,
                cell: c,
                context: ctx,
            },
        })
    }
}

impl<S: Scalar> Seq2Seq<S> {
    pub fn encode(&self, src: &[usize]) -> Result<EncoderOutput<S>> {
        let mut g = Graph::new();
        let enc = self.encode_on(&mut g, src, None)?;
        Ok(EncoderOutput {
            annotations: g.to_tensor(enc.annotations),
            keys: g.to_tensor(enc.keys),
            forward_final: g.value(enc.forward_final).to_vec(),
            backward_final: g.value(enc.backward_final).to_vec(),
        })
    }

    pub fn init_decoder(
        &self,
        enc: &EncoderOutput<S>,
        img: Option<&[S]>,
    ) -> Result<DecoderState<S>> {
        let mut g = Graph::new();
        let vars = enc.on_graph(&mut g);
        let s = self.init_decoder_on(&mut g, &vars, img)?;
        Ok(DecoderState {
            hidden: g.value(s.hidden).to_vec(),
            cell: g.value(s.cell).to_vec(),
            context: g.value(s.context).to_vec(),
            step: 0,
        })
    }

    pub fn decode_step(
        &self,
        state: &DecoderState<S>,
        prev_token: usize,
        enc: &EncoderOutput<S>,
    ) -> Result<StepOutput<S>> {
        let mut g = Graph::new();
        let ev = enc.on_graph(&mut g);
        let sv = state.on_graph(&mut g);
        let out = self.decode_step_on(&mut g, &sv, prev_token, &ev, None)?;
        Ok(StepOutput {
            logits: g.value(out.logits).to_vec(),
            attention: g.value(out.attention).to_vec(),
            state: DecoderState {
                hidden: g.value(out.state.hidden).to_vec(),
                cell: g.value(out.state.cell).to_vec(),
                context: g.value(out.state.context).to_vec(),
                step: state.step + 1,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            embed_dim: 6,
            hidden_dim: 8,
            encoder_layers: 2,
            attention_dim: 8,
            image_feature_dim: 0,
            dropout_rate: 0.0,
            seed: 3,
            max_src_len: 20,
            max_tgt_len: 20,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = toy_config();
        c.hidden_dim = 0;
        assert!(c.validate().is_err());
        let mut c = toy_config();
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
        assert!(toy_config().validate().is_ok());
    }

    #[test]
    fn single_token_annotation_shape() {
        let m = Seq2Seq::<f64>::new(toy_config()).unwrap();
        let enc = m.encode(&[5]).unwrap();
        assert_eq!(enc.annotations.shape(), &[1, 16]);
        assert_eq!(enc.forward_final.len(), 8);
    }

    #[test]
    fn empty_and_overlong_sources_rejected() {
        let m = Seq2Seq::<f64>::new(toy_config()).unwrap();
        assert!(matches!(m.encode(&[]), Err(Error::Invalid(_))));
        assert!(m.encode(&[4; 21]).is_err());
        assert!(m.encode(&[4, 12]).is_err());
    }

    #[test]
    fn singleton_source_attends_fully() {
        let m = Seq2Seq::<f64>::new(toy_config()).unwrap();
        let enc = m.encode(&[7]).unwrap();
        let s = m.init_decoder(&enc, None).unwrap();
        let out = m.decode_step(&s, 2, &enc).unwrap();
        assert_eq!(out.attention, vec![1.0]);
        assert_eq!(out.logits.len(), 12);
        assert_eq!(out.state.step, 1);
    }

    #[test]
    fn image_presence_must_match_config() {
        let m = Seq2Seq::<f64>::new(toy_config()).unwrap();
        let enc = m.encode(&[4, 5]).unwrap();
        assert!(m.init_decoder(&enc, Some(&[1.0])).is_err());
        let mut c = toy_config();
        c.image_feature_dim = 3;
        let mm = Seq2Seq::<f64>::new(c).unwrap();
        let enc = mm.encode(&[4, 5]).unwrap();
        assert!(mm.init_decoder(&enc, None).is_err());
        assert!(mm.init_decoder(&enc, Some(&[1.0, 2.0])).is_err());
        let s = mm.init_decoder(&enc, Some(&[1.0, 2.0, 3.0])).unwrap();
        assert!(s.hidden.iter().all(|v| v.abs() < 1.0));
        assert!(s.cell.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn multimodal_shares_initial_weights_with_text_model() {
        let text = Seq2Seq::<f64>::new(toy_config()).unwrap();
        let mut c = toy_config();
        c.image_feature_dim = 4;
        let mm = Seq2Seq::<f64>::new(c).unwrap();
        assert_eq!(mm.text_only(), text);
    }

    #[test]
    fn resolve_rejects_wrong_shapes() {
        let m = Seq2Seq::<f64>::new(toy_config()).unwrap();
        let mut c = toy_config();
        c.hidden_dim = 9;
        assert!(ParamLayout::resolve(m.params(), &c).is_err());
    }
}
