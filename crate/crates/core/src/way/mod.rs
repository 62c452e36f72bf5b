//! The destination estimation network: a four-channel representation layer
//! (spatial encoding, local GRU summary, departure and ship-type embeddings)
//! followed by stacked channel-aggregative blocks.

mod checkpoint;

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, Tensor, Var};
use crate::represent::{spatial_encode, time_encode, NestedSequence, FEATURE_DIM};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};

/// Representation channels: spatial encoding, local GRU, departure, ship type.
pub const CHANNELS: usize = 4;
/// Channel replaced by the aggregated sequence in every block.
pub const DESIGNATED_CHANNEL: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Base,
    Small,
    Tiny,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(Preset::Base),
            "small" => Ok(Preset::Small),
            "tiny" => Ok(Preset::Tiny),
            _ => Err(Error::Config(format!("unknown model preset '{s}' (base, small, tiny)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WayConfig {
    /// Number of blocks; the local GRU has `layers / 2` layers.
    pub layers: usize,
    pub d: usize,
    pub heads: usize,
    pub d_k: usize,
    pub d_f: usize,
    /// Squeeze ratio of the channel attention bottleneck.
    pub gamma: usize,
    pub ports: usize,
    pub ship_types: usize,
    pub dropout: f64,
}

impl WayConfig {
    pub fn preset(p: Preset, ports: usize, ship_types: usize) -> Self {
        let (layers, d, heads, d_k, d_f) = match p {
            Preset::Base => (4, 128, 4, 64, 256),
            Preset::Small => (2, 64, 2, 32, 128),
            Preset::Tiny => (2, 32, 2, 16, 128),
        };
        Self {
            layers,
            d,
            heads,
            d_k,
            d_f,
            gamma: 2,
            ports,
            ship_types,
            dropout: 0.3,
        }
    }

    pub fn gru_layers(&self) -> usize {
        self.layers / 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.layers == 0 || self.layers % 2 != 0 {
            return bad("layer count must be even and positive");
        }
        if self.d == 0 || self.d % 4 != 0 {
            return bad("hidden size must be a positive multiple of 4");
        }
        if self.heads == 0 || self.d_k == 0 || self.d_f == 0 {
            return bad("heads, head size and feed-forward size must be positive");
        }
        if self.gamma == 0 || CHANNELS % self.gamma != 0 {
            return bad("squeeze ratio must divide the channel count");
        }
        if self.ports == 0 || self.ship_types == 0 {
            return bad("port and ship-type vocabularies must be non-empty");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct GruIdx {
    w_u: usize,
    u_u: usize,
    b_u: usize,
    w_r: usize,
    u_r: usize,
    b_r: usize,
    w_h: usize,
    u_h: usize,
    b_h: usize,
}

#[derive(Debug, Clone, Copy)]
struct NormIdx {
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone, Copy)]
struct BlockIdx {
    mca_tr: usize,
    mca_sq: usize,
    mca_ex: usize,
    mca_out: usize,
    msa_q: usize,
    msa_k: usize,
    msa_v: usize,
    msa_out: usize,
    sff_w1: usize,
    sff_b1: usize,
    sff_w2: usize,
    sff_b2: usize,
    norm_a: NormIdx,
    norm_b: NormIdx,
    norm_out: NormIdx,
}

#[derive(Debug, Clone)]
struct Layout {
    gru: Vec<GruIdx>,
    emb_departure: usize,
    emb_ship: usize,
    blocks: Vec<BlockIdx>,
    out: usize,
}

enum Init {
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

struct Builder<'a, R: Rng> {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        let t = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::full(shape, 1.0),
            Init::Xavier { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
                let data = (0..shape.iter().product::<usize>())
                    .map(|_| dist.sample(self.rng))
                    .collect();
                Tensor::new(shape.to_vec(), data).expect("consistent shape")
            }
        };
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    fn matrix(&mut self, name: String, rows: usize, cols: usize) -> usize {
        self.add(name, &[rows, cols], Init::Xavier { fan_in: rows, fan_out: cols })
    }

    fn bias(&mut self, name: String, n: usize) -> usize {
        self.add(name, &[n], Init::Zeros)
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIdx {
        NormIdx {
            gamma: self.add(format!("{prefix}.gamma"), &[d], Init::Ones),
            beta: self.add(format!("{prefix}.beta"), &[d], Init::Zeros),
        }
    }
}

fn build_layout<R: Rng>(config: &WayConfig, rng: &mut R) -> (Layout, Vec<String>, Vec<Tensor>) {
    let WayConfig { d, heads, d_k, d_f, .. } = *config;
    let hk = heads * d_k;
    let squeezed = CHANNELS / config.gamma;
    let mut b = Builder {
        names: Vec::new(),
        tensors: Vec::new(),
        rng,
    };
    let mut gru = Vec::new();
    for l in 0..config.gru_layers() {
        let input = if l == 0 { FEATURE_DIM } else { d };
        let p = format!("gru.{l}");
        gru.push(GruIdx {
            w_u: b.matrix(format!("{p}.w_u"), input, d),
            u_u: b.matrix(format!("{p}.u_u"), d, d),
            b_u: b.bias(format!("{p}.b_u"), d),
            w_r: b.matrix(format!("{p}.w_r"), input, d),
            u_r: b.matrix(format!("{p}.u_r"), d, d),
            b_r: b.bias(format!("{p}.b_r"), d),
            w_h: b.matrix(format!("{p}.w_h"), input, d),
            u_h: b.matrix(format!("{p}.u_h"), d, d),
            b_h: b.bias(format!("{p}.b_h"), d),
        });
    }
    let emb_departure = b.matrix("embed.departure".into(), config.ports, d);
    let emb_ship = b.matrix("embed.ship_type".into(), config.ship_types, d);
    let mut blocks = Vec::new();
    for k in 0..config.layers {
        let p = format!("block.{k}");
        let per_head = |b: &mut Builder<R>, name: String, rows, cols| {
            b.add(name, &[heads, rows, cols], Init::Xavier { fan_in: rows, fan_out: cols })
        };
        blocks.push(BlockIdx {
            mca_tr: b.matrix(format!("{p}.mca.w_tr"), d, hk),
            mca_sq: per_head(&mut b, format!("{p}.mca.w_sq"), CHANNELS, squeezed),
            mca_ex: per_head(&mut b, format!("{p}.mca.w_ex"), squeezed, CHANNELS),
            mca_out: b.matrix(format!("{p}.mca.w_out"), hk, d),
            msa_q: b.matrix(format!("{p}.msa.w_q"), d, hk),
            msa_k: b.matrix(format!("{p}.msa.w_k"), d, hk),
            msa_v: b.matrix(format!("{p}.msa.w_v"), d, hk),
            msa_out: b.matrix(format!("{p}.msa.w_out"), hk, d),
            sff_w1: b.matrix(format!("{p}.sff.w1"), d, d_f),
            sff_b1: b.bias(format!("{p}.sff.b1"), d_f),
            sff_w2: b.matrix(format!("{p}.sff.w2"), d_f, d),
            sff_b2: b.bias(format!("{p}.sff.b2"), d),
            norm_a: b.norm(&format!("{p}.norm_a"), d),
            norm_b: b.norm(&format!("{p}.norm_b"), d),
            norm_out: b.norm(&format!("{p}.norm_out"), d),
        });
    }
    let out = b.matrix("out.w".into(), d, config.ports);
    let layout = Layout {
        gru,
        emb_departure,
        emb_ship,
        blocks,
        out,
    };
    (layout, b.names, b.tensors)
}

/// Parameters of the network plus its architecture.
#[derive(Debug, Clone)]
pub struct WayModel {
    config: WayConfig,
    layout: Layout,
    names: Vec<String>,
    params: Vec<Tensor>,
}

/// Dropout source for a forward pass; `None` disables dropout.
pub type DropoutRng<'a> = Option<&'a mut dyn RngCore>;

impl WayModel {
    /// Xavier-uniform matrices, zero biases, unit layer-norm gains.
    pub fn new<R: Rng>(config: WayConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (layout, names, params) = build_layout(&config, rng);
        Ok(Self {
            config,
            layout,
            names,
            params,
        })
    }

    /// Rebuilds a model from named tensors; every expected name must be
    /// present with the expected shape.
    pub fn from_named(config: WayConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut model = Self::new(config, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
        let mut lookup: std::collections::HashMap<String, Tensor> = named.into_iter().collect();
        for (name, slot) in model.names.iter().zip(model.params.iter_mut()) {
            let t = lookup
                .remove(name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter '{name}'")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Shape {
                    op: "load_parameter",
                    lhs: slot.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            *slot = t;
        }
        if let Some(extra) = lookup.keys().next() {
            return Err(Error::Config(format!("checkpoint has unknown parameter '{extra}'")));
        }
        Ok(model)
    }

    pub fn config(&self) -> &WayConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.params[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Places every parameter on the graph, as trainable leaves or as
    /// constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect()
    }

    fn check_vocab(&self, seq: &NestedSequence) -> Result<()> {
        if seq.departure >= self.config.ports {
            return Err(Error::Vocabulary {
                kind: "departure port",
                index: seq.departure,
                size: self.config.ports,
            });
        }
        if seq.ship_type >= self.config.ship_types {
            return Err(Error::Vocabulary {
                kind: "ship type",
                index: seq.ship_type,
                size: self.config.ship_types,
            });
        }
        Ok(())
    }

    /// Final hidden state of the stacked GRU for every element (`N x d`).
    /// Elements are processed together; rows past an element's end keep
    /// their state.
    pub fn gru_local(&self, g: &mut Graph, vars: &[Var], seq: &NestedSequence) -> Result<Var> {
        let n = seq.len();
        let d = self.config.d;
        if n == 0 {
            return Err(Error::Empty("sequence"));
        }
        if let Some(k) = seq.elements.iter().position(|e| e.samples.is_empty()) {
            return Err(Error::Numeric(format!("element {k} has no samples")));
        }
        let steps = seq.elements.iter().map(|e| e.samples.len()).max().unwrap_or(0);
        let mut inputs = Vec::with_capacity(steps);
        let mut masks = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut x = vec![0.0; n * FEATURE_DIM];
            let mut m = vec![0.0; n];
            for (k, e) in seq.elements.iter().enumerate() {
                if let Some(row) = e.samples.get(t) {
                    x[k * FEATURE_DIM..(k + 1) * FEATURE_DIM].copy_from_slice(&row.to_vector());
                    m[k] = 1.0;
                }
            }
            inputs.push(g.constant(Tensor::new(vec![n, FEATURE_DIM], x)?));
            let full = m.iter().all(|&v| v == 1.0);
            masks.push((!full).then(|| g.constant(Tensor::new(vec![n, 1], m).expect("n rows"))));
        }
        let mut h = g.constant(Tensor::zeros(&[n, d]));
        for p in &self.layout.gru {
            let gate = |g: &mut Graph, x: Var, h: Var, w: usize, u: usize, b: usize| -> Result<Var> {
                let xw = g.matmul(x, vars[w])?;
                let hu = g.matmul(h, vars[u])?;
                let s = g.add(xw, hu)?;
                g.add(s, vars[b])
            };
            h = g.constant(Tensor::zeros(&[n, d]));
            let mut outputs = Vec::with_capacity(steps);
            for t in 0..steps {
                let x = inputs[t];
                let u = gate(g, x, h, p.w_u, p.u_u, p.b_u)?;
                let u = g.sigmoid(u);
                let r = gate(g, x, h, p.w_r, p.u_r, p.b_r)?;
                let r = g.sigmoid(r);
                let rh = g.mul(r, h)?;
                let cand = gate(g, x, rh, p.w_h, p.u_h, p.b_h)?;
                let cand = g.tanh(cand);
                let diff = g.sub(cand, h)?;
                let mut step = g.mul(u, diff)?;
                if let Some(m) = masks[t] {
                    step = g.mul(step, m)?;
                }
                h = g.add(h, step)?;
                outputs.push(h);
            }
            inputs = outputs;
        }
        Ok(h)
    }

    /// The `C x N x d` block input: the four channels with the time encoding
    /// added to each.
    pub fn assemble_channels(&self, g: &mut Graph, vars: &[Var], seq: &NestedSequence) -> Result<Var> {
        self.check_vocab(seq)?;
        let n = seq.len();
        let d = self.config.d;
        let se = g.constant(spatial_encode(&seq.centers(), d)?);
        let local = self.gru_local(g, vars, seq)?;
        let dep = g.embedding(vars[self.layout.emb_departure], &vec![seq.departure; n])?;
        let ship = g.embedding(vars[self.layout.emb_ship], &vec![seq.ship_type; n])?;
        let stacked = g.concat(&[se, local, dep, ship], 0)?;
        let stacked = g.reshape(stacked, &[CHANNELS, n, d])?;
        let te = g.constant(time_encode(&seq.time_distances(), d)?);
        g.add(stacked, te)
    }

    fn dropout(&self, g: &mut Graph, x: Var, rng: &mut DropoutRng<'_>) -> Result<Var> {
        match rng {
            Some(r) => g.dropout(x, self.config.dropout, &mut **r),
            None => Ok(x),
        }
    }

    fn norm_affine(&self, g: &mut Graph, vars: &[Var], x: Var, p: NormIdx) -> Result<Var> {
        let axis = g.shape(x).len() - 1;
        let y = g.layer_norm(x, axis)?;
        let y = g.mul(y, vars[p.gamma])?;
        g.add(y, vars[p.beta])
    }

    /// Projection `C x N x h x d_k` and channel intensities `C x N x h x 1`.
    fn mca_parts(&self, g: &mut Graph, vars: &[Var], block: usize, x: Var) -> Result<(Var, Var)> {
        let p = self.layout.blocks[block];
        let WayConfig { d, heads, d_k, .. } = self.config;
        let n = g.shape(x)[1];
        let flat = g.reshape(x, &[CHANNELS * n, d])?;
        let proj = g.matmul(flat, vars[p.mca_tr])?;
        let proj = g.reshape(proj, &[CHANNELS, n, heads, d_k])?;
        let z_avg = g.mean_pool(proj, 3)?;
        let z_max = g.max_pool(proj, 3)?;
        let mut alphas = Vec::with_capacity(heads);
        for i in 0..heads {
            let w_sq = g.select(vars[p.mca_sq], i)?;
            let w_ex = g.select(vars[p.mca_ex], i)?;
            let mut squeezed = Vec::with_capacity(2);
            for z in [z_avg, z_max] {
                let zi = g.slice(z, 2, i, 1)?;
                let zi = g.reshape(zi, &[CHANNELS, n])?;
                squeezed.push(g.transpose(zi)?);
            }
            // both squeeze paths share the bottleneck
            let both = g.concat(&squeezed, 0)?;
            let hidden = g.matmul(both, w_sq)?;
            let hidden = g.relu(hidden);
            let excited = g.matmul(hidden, w_ex)?;
            let e_avg = g.slice(excited, 0, 0, n)?;
            let e_max = g.slice(excited, 0, n, n)?;
            let logit = g.add(e_avg, e_max)?;
            let alpha = g.sigmoid(logit);
            let alpha = g.transpose(alpha)?;
            alphas.push(g.reshape(alpha, &[CHANNELS, n, 1])?);
        }
        let alpha = g.concat(&alphas, 2)?;
        let alpha = g.reshape(alpha, &[CHANNELS, n, heads, 1])?;
        Ok((proj, alpha))
    }

    /// Multi-head channel attention over a `C x N x d` input, giving `N x d`.
    pub fn mca(&self, g: &mut Graph, vars: &[Var], block: usize, x: Var) -> Result<Var> {
        let p = self.layout.blocks[block];
        let WayConfig { heads, d_k, .. } = self.config;
        let n = g.shape(x)[1];
        let (proj, alpha) = self.mca_parts(g, vars, block, x)?;
        let emphasized = g.mul(proj, alpha)?;
        let emphasized = g.reshape(emphasized, &[CHANNELS, n, heads * d_k])?;
        let pooled = g.max_pool(emphasized, 0)?;
        g.matmul(pooled, vars[p.mca_out])
    }

    /// Channel intensities of every head, `C x N x h`.
    pub fn mca_intensities(&self, g: &mut Graph, vars: &[Var], block: usize, x: Var) -> Result<Tensor> {
        let (_, alpha) = self.mca_parts(g, vars, block, x)?;
        let t = g.value(alpha).clone();
        let s = t.shape()[..3].to_vec();
        t.reshape(&s)
    }

    /// Causal multi-head self-attention over `N x d`.
    pub fn msa(&self, g: &mut Graph, vars: &[Var], block: usize, x: Var) -> Result<Var> {
        let p = self.layout.blocks[block];
        let WayConfig { heads, d_k, .. } = self.config;
        let q = g.matmul(x, vars[p.msa_q])?;
        let k = g.matmul(x, vars[p.msa_k])?;
        let v = g.matmul(x, vars[p.msa_v])?;
        let scale = 1.0 / (d_k as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for i in 0..heads {
            let qi = g.slice(q, 1, i * d_k, d_k)?;
            let ki = g.slice(k, 1, i * d_k, d_k)?;
            let vi = g.slice(v, 1, i * d_k, d_k)?;
            let kt = g.transpose(ki)?;
            let scores = g.matmul(qi, kt)?;
            let scores = g.scale(scores, scale);
            let masked = g.causal_mask_fill(scores)?;
            let attn = g.softmax(masked, 1)?;
            outs.push(g.matmul(attn, vi)?);
        }
        let cat = g.concat(&outs, 1)?;
        g.matmul(cat, vars[p.msa_out])
    }

    /// One channel-aggregative block, `C x N x d` to `C x N x d`.
    pub fn casp_block(
        &self,
        g: &mut Graph,
        vars: &[Var],
        block: usize,
        x: Var,
        rng: &mut DropoutRng<'_>,
    ) -> Result<Var> {
        let p = self.layout.blocks[block];
        let WayConfig { d, .. } = self.config;
        let n = g.shape(x)[1];
        let ch0 = g.select(x, DESIGNATED_CHANNEL)?;
        let agg = self.mca(g, vars, block, x)?;
        let agg = self.dropout(g, agg, rng)?;
        let a = g.add(ch0, agg)?;
        let a = self.norm_affine(g, vars, a, p.norm_a)?;
        let att = self.msa(g, vars, block, a)?;
        let att = self.dropout(g, att, rng)?;
        let b = g.add(a, att)?;
        let b = self.norm_affine(g, vars, b, p.norm_b)?;
        let b = g.reshape(b, &[1, n, d])?;
        let rest = g.slice(x, 0, 1, CHANNELS - 1)?;
        let replaced = g.concat(&[b, rest], 0)?;
        let flat = g.reshape(replaced, &[CHANNELS * n, d])?;
        let hidden = g.matmul(flat, vars[p.sff_w1])?;
        let hidden = g.add(hidden, vars[p.sff_b1])?;
        let hidden = g.relu(hidden);
        let hidden = self.dropout(g, hidden, rng)?;
        let ff = g.matmul(hidden, vars[p.sff_w2])?;
        let ff = g.add(ff, vars[p.sff_b2])?;
        let sum = g.add(flat, ff)?;
        let out = self.norm_affine(g, vars, sum, p.norm_out)?;
        g.reshape(out, &[CHANNELS, n, d])
    }

    /// Per-step destination logits, `N x Y`.
    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &[Var],
        seq: &NestedSequence,
        mut rng: DropoutRng<'_>,
    ) -> Result<Var> {
        let mut x = self.assemble_channels(g, vars, seq)?;
        for b in 0..self.layout.blocks.len() {
            x = self.casp_block(g, vars, b, x, &mut rng)?;
        }
        let ch0 = g.select(x, DESIGNATED_CHANNEL)?;
        g.matmul(ch0, vars[self.layout.out])
    }

    /// Logits without building gradients or applying dropout.
    pub fn logits(&self, seq: &NestedSequence) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let out = self.forward(&mut g, &vars, seq, None)?;
        Ok(g.value(out).clone())
    }
}
