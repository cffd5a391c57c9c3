use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rope::{default_theta_schedule, DEFAULT_ROPE_BASE};

use super::graph::{Graph, NodeId, ParamId, ParamStore};
use super::probe::{AttentionProbe, ProbeRow};
use super::tensor::{Scalar, Tensor};

/// Standard deviation of token and position embeddings at initialisation.
pub const EMBEDDING_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub use_rope: bool,
    pub rope_base: f64,
    pub mlp_mult: usize,
    pub seed: u64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            d_model: 128,
            n_heads: 4,
            vocab_size: 20,
            seq_len: 3,
            use_rope: false,
            rope_base: DEFAULT_ROPE_BASE,
            mlp_mult: 4,
            seed: 0,
        }
    }
}

impl TransformerConfig {
    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("vocab_size", self.vocab_size),
            ("seq_len", self.seq_len),
            ("mlp_mult", self.mlp_mult),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::invalid(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.use_rope && !self.d_k().is_multiple_of(2) {
            return Err(Error::invalid("rotary embeddings need an even head dimension"));
        }
        if !(self.rope_base > 1.0 && self.rope_base.is_finite()) {
            return Err(Error::invalid("rope_base must exceed 1"));
        }
        Ok(())
    }
}

/// Which parameter matrices enter `‖W‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    /// Query and key projections of every layer.
    #[default]
    QkProjections,
    /// Query, key, value and output projections of every layer.
    AllAttention,
    AllParameters,
}

impl FromStr for NormScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qk_projections" | "qk" => Ok(Self::QkProjections),
            "all_attention" => Ok(Self::AllAttention),
            "all_parameters" | "all" => Ok(Self::AllParameters),
            other => Err(Error::invalid(format!("unknown norm scope `{other}`"))),
        }
    }
}

/// Positions whose logits are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogitRows {
    All,
    /// Only the final position of each sequence.
    Last,
}

/// Which attention rows are copied out of the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeMode {
    None,
    All,
    /// Only the final query of each sequence.
    LastQuery,
}

#[derive(Debug, Clone)]
struct LayerParams {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Pre-norm decoder-only Transformer with causal attention and GELU MLPs.
#[derive(Debug, Clone)]
pub struct Transformer<F = f64> {
    config: TransformerConfig,
    params: ParamStore<F>,
    tok_emb: ParamId,
    pos_emb: Option<ParamId>,
    layers: Vec<LayerParams>,
    lnf_g: ParamId,
    lnf_b: ParamId,
    unembed: ParamId,
    rope_freqs: Vec<f64>,
}

/// A recorded forward pass.
#[derive(Debug)]
pub struct ForwardPass<F = f64> {
    pub graph: Graph<F>,
    /// `[rows, vocab]`; one row per sequence with [`LogitRows::Last`],
    /// `batch·seq` rows otherwise.
    pub logits: NodeId,
    pub probes: Vec<AttentionProbe>,
}

impl<F: Scalar> Transformer<F> {
    pub fn new(config: TransformerConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let hidden = d * config.mlp_mult;
        let proj_std = 1.0 / (d as f64).sqrt();
        let mut params = ParamStore::new();
        let normal = |shape: &[usize], std: f64, rng: &mut ChaCha8Rng| {
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    F::from_f64(std * z)
                })
                .collect();
            Tensor::new(shape.to_vec(), data).expect("shape matches data")
        };

        let tok_emb = params.add("tok_emb", normal(&[config.vocab_size, d], EMBEDDING_INIT_STD, &mut rng));
        let pos_emb = (!config.use_rope)
            .then(|| params.add("pos_emb", normal(&[config.seq_len, d], EMBEDDING_INIT_STD, &mut rng)));
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let name = |s: &str| format!("layers.{l}.{s}");
            layers.push(LayerParams {
                ln1_g: params.add(name("ln1.gamma"), Tensor::filled(&[d], F::one())),
                ln1_b: params.add(name("ln1.beta"), Tensor::zeros(&[d])),
                wq: params.add(name("attn.wq"), normal(&[d, d], proj_std, &mut rng)),
                wk: params.add(name("attn.wk"), normal(&[d, d], proj_std, &mut rng)),
                wv: params.add(name("attn.wv"), normal(&[d, d], proj_std, &mut rng)),
                wo: params.add(name("attn.wo"), normal(&[d, d], proj_std, &mut rng)),
                ln2_g: params.add(name("ln2.gamma"), Tensor::filled(&[d], F::one())),
                ln2_b: params.add(name("ln2.beta"), Tensor::zeros(&[d])),
                w1: params.add(name("mlp.w1"), normal(&[d, hidden], proj_std, &mut rng)),
                b1: params.add(name("mlp.b1"), Tensor::zeros(&[hidden])),
                w2: params.add(name("mlp.w2"), normal(&[hidden, d], proj_std, &mut rng)),
                b2: params.add(name("mlp.b2"), Tensor::zeros(&[d])),
            });
        }
        let lnf_g = params.add("ln_f.gamma", Tensor::filled(&[d], F::one()));
        let lnf_b = params.add("ln_f.beta", Tensor::zeros(&[d]));
        let unembed = params.add("unembed", normal(&[d, config.vocab_size], proj_std, &mut rng));
        let rope_freqs =
            if config.use_rope { default_theta_schedule(config.d_k(), config.rope_base)? } else { Vec::new() };
        Ok(Self { config, params, tok_emb, pos_emb, layers, lnf_g, lnf_b, unembed, rope_freqs })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Ids of the parameters inside `scope`.
    pub fn scope_params(&self, scope: NormScope) -> Vec<ParamId> {
        match scope {
            NormScope::QkProjections => self.layers.iter().flat_map(|l| [l.wq, l.wk]).collect(),
            NormScope::AllAttention => self.layers.iter().flat_map(|l| [l.wq, l.wk, l.wv, l.wo]).collect(),
            NormScope::AllParameters => self.params.ids().collect(),
        }
    }

    /// Sum of squared entries of the parameters in `scope`.
    pub fn weight_norm_sq(&self, scope: NormScope) -> f64 {
        self.scope_params(scope).into_iter().map(|id| self.params.get(id).sum_squares()).sum()
    }

    /// Full forward pass over a rectangular batch of token sequences,
    /// returning `[batch, seq, vocab]` logits and every attention row.
    pub fn forward(&self, tokens: &[Vec<usize>]) -> Result<(Tensor<F>, Vec<AttentionProbe>)> {
        let batch = tokens.len();
        let seq = tokens.first().map_or(0, Vec::len);
        if batch == 0 || seq == 0 || tokens.iter().any(|t| t.len() != seq) {
            return Err(Error::Shape("token batch must be a nonempty rectangle".into()));
        }
        let flat: Vec<usize> = tokens.iter().flatten().copied().collect();
        let pass = self.forward_graph(&flat, batch, seq, LogitRows::All, ProbeMode::All)?;
        let logits = pass.graph.value(pass.logits).clone().reshaped(&[batch, seq, self.config.vocab_size])?;
        Ok((logits, pass.probes))
    }

    /// Records a forward pass on a flattened `[batch, seq]` token array.
    pub fn forward_graph(
        &self,
        tokens: &[usize],
        batch: usize,
        seq: usize,
        rows: LogitRows,
        probes: ProbeMode,
    ) -> Result<ForwardPass<F>> {
        let cfg = &self.config;
        if batch == 0 || seq == 0 || tokens.len() != batch * seq {
            return Err(Error::Shape(format!("{} tokens for batch {batch} × seq {seq}", tokens.len())));
        }
        if seq > cfg.seq_len {
            return Err(Error::Shape(format!("sequence length {seq} exceeds configured {}", cfg.seq_len)));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
            return Err(Error::invalid(format!("token {bad} out of range for vocabulary {}", cfg.vocab_size)));
        }

        let p = &self.params;
        let mut g = Graph::new();
        let table = g.param(p, self.tok_emb);
        let mut x = g.embedding(table, tokens)?;
        if let Some(pos) = self.pos_emb {
            let pos_table = g.param(p, pos);
            let positions: Vec<usize> = (0..batch).flat_map(|_| 0..seq).collect();
            let pe = g.embedding(pos_table, &positions)?;
            x = g.add(x, pe)?;
        }

        // With only final-position logits and no need for every attention row,
        // the last layer computes queries, MLP and residual for the final
        // position alone (keys and values still cover the whole sequence).
        let prune_last = rows == LogitRows::Last && probes != ProbeMode::All;
        let last_rows: Vec<usize> = (0..batch).map(|b| b * seq + seq - 1).collect();
        let mut attn_nodes = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let tail = prune_last && l + 1 == self.layers.len();
            let (g1, b1) = (g.param(p, layer.ln1_g), g.param(p, layer.ln1_b));
            let h = g.layer_norm(x, g1, b1)?;
            let (wq, wk, wv, wo) =
                (g.param(p, layer.wq), g.param(p, layer.wk), g.param(p, layer.wv), g.param(p, layer.wo));
            let mut k = g.matmul(h, wk)?;
            let v = g.matmul(h, wv)?;
            let q = if cfg.use_rope {
                k = g.rope(k, seq, cfg.d_k(), &self.rope_freqs)?;
                let q = g.matmul(h, wq)?;
                let q = g.rope(q, seq, cfg.d_k(), &self.rope_freqs)?;
                if tail {
                    g.select_rows(q, &last_rows)?
                } else {
                    q
                }
            } else if tail {
                let h_last = g.select_rows(h, &last_rows)?;
                g.matmul(h_last, wq)?
            } else {
                g.matmul(h, wq)?
            };
            let n_queries = if tail { 1 } else { seq };
            let a = g.attention_tail(q, k, v, batch, seq, cfg.n_heads, true, n_queries)?;
            attn_nodes.push(a);
            let o = g.matmul(a, wo)?;
            if tail {
                x = g.select_rows(x, &last_rows)?;
            }
            x = g.add(x, o)?;

            let (g2, b2) = (g.param(p, layer.ln2_g), g.param(p, layer.ln2_b));
            let h = g.layer_norm(x, g2, b2)?;
            let (w1, bias1, w2, bias2) =
                (g.param(p, layer.w1), g.param(p, layer.b1), g.param(p, layer.w2), g.param(p, layer.b2));
            let u = g.matmul(h, w1)?;
            let u = g.add_bias(u, bias1)?;
            let u = g.gelu(u);
            let u = g.matmul(u, w2)?;
            let u = g.add_bias(u, bias2)?;
            x = g.add(x, u)?;
        }

        if rows == LogitRows::Last && !prune_last {
            x = g.select_rows(x, &last_rows)?;
        }
        let (gf, bf) = (g.param(p, self.lnf_g), g.param(p, self.lnf_b));
        let h = g.layer_norm(x, gf, bf)?;
        let w = g.param(p, self.unembed);
        let logits = g.matmul(h, w)?;

        let probes = match probes {
            ProbeMode::None => Vec::new(),
            mode => collect_probes(&g, &attn_nodes, cfg.n_heads, mode == ProbeMode::LastQuery),
        };
        Ok(ForwardPass { graph: g, logits, probes })
    }
}

fn collect_probes<F: Scalar>(g: &Graph<F>, nodes: &[NodeId], heads: usize, last_only: bool) -> Vec<AttentionProbe> {
    let mut out = Vec::with_capacity(nodes.len() * heads);
    for (layer_index, &node) in nodes.iter().enumerate() {
        let c = g.attention_cache(node).expect("attention node");
        let first = c.first_query();
        let locals = if last_only { c.n_queries - 1..c.n_queries } else { 0..c.n_queries };
        for head_index in 0..heads {
            let mut rows = Vec::with_capacity(c.batch * locals.len());
            for b in 0..c.batch {
                for local in locals.clone() {
                    let keys = c.visible_keys(first + local);
                    let base = c.row_offset(b, head_index, local);
                    rows.push(ProbeRow {
                        batch_index: b,
                        query_index: first + local,
                        scaled_logits: c.scores[base..base + keys].iter().map(|v| v.as_f64()).collect(),
                        probs: c.probs[base..base + keys].iter().map(|v| v.as_f64()).collect(),
                    });
                }
            }
            out.push(AttentionProbe { layer_index, head_index, rows });
        }
    }
    out
}
