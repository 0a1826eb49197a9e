//! The FHRFormer network: patchification, patch-level mask sampling,
//! linear embedding with sinusoidal positional encoding, a pre-norm
//! bidirectional encoder over visible patches, a mask-token decoder with
//! cross-attention over the encoder latents, and a linear output
//! projection composed with the visible-passthrough rule.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, TensorId};
use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input length L in samples.
    pub input_len: usize,
    /// Patch size p_s.
    pub patch_size: usize,
    /// Signal dimensionality d (kept symbolic; 1 for FHR).
    pub input_dim: usize,
    pub d_model: usize,
    pub ffn_dim: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub dropout: f64,
    /// Target masking ratio gamma.
    pub mask_ratio: f64,
}

impl ModelConfig {
    /// Full-scale profile.
    pub fn paper() -> Self {
        Self {
            input_len: 7200,
            patch_size: 30,
            input_dim: 1,
            d_model: 512,
            ffn_dim: 1024,
            n_heads: 16,
            n_enc_layers: 5,
            n_dec_layers: 5,
            dropout: 0.1,
            mask_ratio: 0.15,
        }
    }

    /// Desk-scale profile: small enough to train in a test run.
    pub fn desk() -> Self {
        Self {
            input_len: 720,
            patch_size: 30,
            input_dim: 1,
            d_model: 64,
            ffn_dim: 128,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            dropout: 0.1,
            mask_ratio: 0.15,
        }
    }

    pub fn n_patches(&self) -> usize {
        self.input_len / self.patch_size
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.input_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.input_len % self.patch_size != 0 {
            return Err(Error::Data(format!(
                "input_len {} not divisible by patch_size {}",
                self.input_len, self.patch_size
            )));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Data(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::Data(format!(
                "mask_ratio {} outside (0, 1)",
                self.mask_ratio
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Data(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Patch-level binary mask: `visible[i]` is true when patch i is kept.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    visible: Vec<bool>,
}

impl MaskSpec {
    pub fn new(visible: Vec<bool>) -> Result<Self> {
        let n_vis = visible.iter().filter(|&&v| v).count();
        if n_vis == 0 || n_vis == visible.len() {
            return Err(Error::Data(
                "mask must keep at least one visible and one masked patch".into(),
            ));
        }
        Ok(Self { visible })
    }

    pub fn n(&self) -> usize {
        self.visible.len()
    }

    pub fn is_visible(&self, i: usize) -> bool {
        self.visible[i]
    }

    pub fn visible_bits(&self) -> &[bool] {
        &self.visible
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.visible[i]).collect()
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.visible[i]).collect()
    }

    pub fn n_masked(&self) -> usize {
        self.visible.iter().filter(|&&v| !v).count()
    }
}

/// Draw |M| = clamp(round(gamma*N), 1, N-1) masked patches uniformly
/// without replacement.
pub fn sample_mask<R: Rng>(n: usize, gamma: f64, rng: &mut R) -> Result<MaskSpec> {
    if n < 2 {
        return Err(Error::Data(format!(
            "need at least 2 patches to mask, got {n}"
        )));
    }
    let m = ((gamma * n as f64).round() as usize).clamp(1, n - 1);
    let chosen = rand::seq::index::sample(rng, n, m);
    let mut visible = vec![true; n];
    for i in chosen {
        visible[i] = false;
    }
    MaskSpec::new(visible)
}

/// Split a length-L signal into N = L/p_s non-overlapping patches
/// (row-major `[N, p_s]` buffer).
pub fn patchify(values: &[f64], patch_size: usize) -> Result<Vec<f64>> {
    if patch_size == 0 || values.len() % patch_size != 0 {
        return Err(Error::Data(format!(
            "length {} not divisible by patch size {}",
            values.len(),
            patch_size
        )));
    }
    Ok(values.to_vec())
}

/// Inverse of [`patchify`]: concatenation of patches in order.
pub fn unpatchify(patches: &[f64]) -> Vec<f64> {
    patches.to_vec()
}

/// Sinusoidal positional table for `n` positions (row-major
/// `[n, d_model]`): sin on even dims, cos on odd dims, geometric
/// frequency ladder with base 10000. Computable for any `n`, which is
/// what makes variable-length forecasting windows possible.
pub fn positional_encoding(n: usize, d_model: usize) -> Vec<f64> {
    let mut table = vec![0.0; n * d_model];
    for pos in 0..n {
        for j in 0..d_model {
            let pair = (j / 2 * 2) as f64;
            let angle = pos as f64 / 10000f64.powf(pair / d_model as f64);
            table[pos * d_model + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    table
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// Every learnable parameter, addressable by name.
#[derive(Debug, Clone)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub params: Vec<Param>,
    index: HashMap<String, usize>,
}

/// Parameter layout derived from a config: (name, rows, cols, kind).
#[derive(Debug, Clone, Copy, PartialEq)]
enum InitKind {
    FanIn(usize),
    Zero,
    One,
    MaskToken,
}

fn layout(cfg: &ModelConfig) -> Vec<(String, usize, usize, InitKind)> {
    let d = cfg.d_model;
    let pd = cfg.patch_dim();
    let ffn = cfg.ffn_dim;
    let mut out: Vec<(String, usize, usize, InitKind)> = vec![
        ("w_in".into(), d, pd, InitKind::FanIn(pd)),
        ("b_in".into(), 1, d, InitKind::Zero),
        ("e_mask".into(), 1, d, InitKind::MaskToken),
    ];
    let attn = |prefix: &str, out: &mut Vec<(String, usize, usize, InitKind)>| {
        for p in ["wq", "wk", "wv", "wo"] {
            out.push((format!("{prefix}.{p}"), d, d, InitKind::FanIn(d)));
            out.push((format!("{prefix}.{}", p.replace('w', "b")), 1, d, InitKind::Zero));
        }
    };
    let ffn_block = |prefix: &str, out: &mut Vec<(String, usize, usize, InitKind)>| {
        out.push((format!("{prefix}.w1"), ffn, d, InitKind::FanIn(d)));
        out.push((format!("{prefix}.b1"), 1, ffn, InitKind::Zero));
        out.push((format!("{prefix}.w2"), d, ffn, InitKind::FanIn(ffn)));
        out.push((format!("{prefix}.b2"), 1, d, InitKind::Zero));
    };
    let ln = |name: String, out: &mut Vec<(String, usize, usize, InitKind)>| {
        out.push((format!("{name}.g"), 1, d, InitKind::One));
        out.push((format!("{name}.b"), 1, d, InitKind::Zero));
    };
    for l in 0..cfg.n_enc_layers {
        attn(&format!("enc{l}.sa"), &mut out);
        ffn_block(&format!("enc{l}.ffn"), &mut out);
        ln(format!("enc{l}.ln1"), &mut out);
        ln(format!("enc{l}.ln2"), &mut out);
    }
    for l in 0..cfg.n_dec_layers {
        attn(&format!("dec{l}.sa"), &mut out);
        attn(&format!("dec{l}.ca"), &mut out);
        ffn_block(&format!("dec{l}.ffn"), &mut out);
        ln(format!("dec{l}.ln1"), &mut out);
        ln(format!("dec{l}.ln2"), &mut out);
        ln(format!("dec{l}.ln3"), &mut out);
    }
    out.push(("w_out".into(), pd, d, InitKind::FanIn(d)));
    out.push(("b_out".into(), 1, pd, InitKind::Zero));
    out
}

/// Closed-form parameter count for a config.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let d = cfg.d_model;
    let pd = cfg.patch_dim();
    let ffn = cfg.ffn_dim;
    let attn = 4 * (d * d + d);
    let ffn_params = ffn * d + ffn + d * ffn + d;
    let ln = 2 * d;
    let enc = cfg.n_enc_layers * (attn + ffn_params + 2 * ln);
    let dec = cfg.n_dec_layers * (2 * attn + ffn_params + 3 * ln);
    (d * pd + d) + d + enc + dec + (pd * d + pd)
}

impl ModelWeights {
    /// Scaled-uniform fan-in initialization for projections, zeros for
    /// biases, ones for LN gains, small-normal for the mask token.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<Param> = layout(&config)
            .into_iter()
            .map(|(name, rows, cols, kind)| {
                let values = match kind {
                    InitKind::FanIn(fan_in) => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        (0..rows * cols)
                            .map(|_| rng.gen_range(-bound..bound))
                            .collect()
                    }
                    InitKind::Zero => vec![0.0; rows * cols],
                    InitKind::One => vec![1.0; rows * cols],
                    InitKind::MaskToken => (0..rows * cols)
                        .map(|_| {
                            // Box-Muller, sigma = 0.02
                            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                            let u2: f64 = rng.gen_range(0.0..1.0);
                            0.02 * (-2.0 * u1.ln()).sqrt()
                                * (std::f64::consts::TAU * u2).cos()
                        })
                        .collect(),
                };
                Param {
                    name,
                    rows,
                    cols,
                    values,
                }
            })
            .collect();
        let index = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        let w = Self {
            config,
            params,
            index,
        };
        debug_assert_eq!(w.n_params(), param_count(&w.config));
        Ok(w)
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    pub fn param_idx(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter block {name}"))
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.values.iter().all(|v| v.is_finite()))
    }

    fn rebuild_index(params: &[Param]) -> HashMap<String, usize> {
        params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect()
    }

    /// Insert every parameter as a gradient-accumulating leaf.
    pub fn insert_leaves(&self, g: &mut Graph) -> Result<Vec<TensorId>> {
        self.params
            .iter()
            .map(|p| Ok(g.leaf(p.values.clone(), p.rows, p.cols)?))
            .collect()
    }
}

/// Forward execution mode. Training requires an explicit dropout seed so
/// runs are reproducible; evaluation disables dropout entirely.
#[derive(Debug, Clone, Copy)]
pub enum Mode {
    Train { dropout_seed: u64 },
    Eval,
}

/// Tensor ids of the inserted parameter leaves, resolvable by name.
pub struct ParamIds<'w> {
    weights: &'w ModelWeights,
    pub ids: Vec<TensorId>,
}

impl<'w> ParamIds<'w> {
    pub fn get(&self, name: &str) -> TensorId {
        self.ids[self.weights.param_idx(name)]
    }
}

pub struct DropoutCtx {
    p: f64,
    seed: Option<u64>,
    counter: u64,
}

impl DropoutCtx {
    pub fn new(cfg: &ModelConfig, mode: Mode) -> Self {
        Self {
            p: cfg.dropout,
            seed: match mode {
                Mode::Train { dropout_seed } => Some(dropout_seed),
                Mode::Eval => None,
            },
            counter: 0,
        }
    }

    fn apply(&mut self, g: &mut Graph, x: TensorId) -> TensorId {
        match self.seed {
            Some(seed) if self.p > 0.0 => {
                self.counter += 1;
                g.dropout(x, self.p, seed.wrapping_add(self.counter))
            }
            _ => x,
        }
    }
}

fn linear(
    g: &mut Graph,
    x: TensorId,
    w: TensorId,
    b: TensorId,
) -> Result<TensorId> {
    let wt = g.transpose(w);
    let xw = g.matmul(x, wt)?;
    Ok(g.add_row(xw, b)?)
}

/// Multi-head attention with queries from `q_src` and keys/values from
/// `kv_src`; bidirectional (no causal mask), scaled by 1/sqrt(d_head).
fn multi_head_attention(
    g: &mut Graph,
    q_src: TensorId,
    kv_src: TensorId,
    pids: &ParamIds,
    prefix: &str,
    n_heads: usize,
) -> Result<TensorId> {
    let d_model = g.shape(q_src).1;
    let d_head = d_model / n_heads;
    let q = linear(g, q_src, pids.get(&format!("{prefix}.wq")), pids.get(&format!("{prefix}.bq")))?;
    let k = linear(g, kv_src, pids.get(&format!("{prefix}.wk")), pids.get(&format!("{prefix}.bk")))?;
    let v = linear(g, kv_src, pids.get(&format!("{prefix}.wv")), pids.get(&format!("{prefix}.bv")))?;
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice_cols(q, h * d_head, d_head)?;
        let kh = g.slice_cols(k, h * d_head, d_head)?;
        let vh = g.slice_cols(v, h * d_head, d_head)?;
        let kt = g.transpose(kh);
        let scores = g.matmul(qh, kt)?;
        let scaled = g.scale(scores, 1.0 / (d_head as f64).sqrt());
        let attn = g.softmax_rows(scaled)?;
        heads.push(g.matmul(attn, vh)?);
    }
    let cat = g.concat_cols(&heads)?;
    linear(g, cat, pids.get(&format!("{prefix}.wo")), pids.get(&format!("{prefix}.bo")))
}

fn feed_forward(
    g: &mut Graph,
    x: TensorId,
    pids: &ParamIds,
    prefix: &str,
) -> Result<TensorId> {
    let h = linear(g, x, pids.get(&format!("{prefix}.w1")), pids.get(&format!("{prefix}.b1")))?;
    let a = g.gelu(h);
    linear(g, a, pids.get(&format!("{prefix}.w2")), pids.get(&format!("{prefix}.b2")))
}

fn layer_norm(
    g: &mut Graph,
    x: TensorId,
    pids: &ParamIds,
    name: &str,
) -> Result<TensorId> {
    Ok(g.layer_norm_rows(
        x,
        pids.get(&format!("{name}.g")),
        pids.get(&format!("{name}.b")),
        LAYER_NORM_EPS,
    )?)
}

/// Linear patch embedding: e_i = W_in vec(x_i) + b_in.
pub fn embed(g: &mut Graph, patches: TensorId, pids: &ParamIds) -> Result<TensorId> {
    linear(g, patches, pids.get("w_in"), pids.get("b_in"))
}

/// The pre-norm encoder stack over visible embeddings (already carrying
/// their positional terms).
pub fn encode(
    g: &mut Graph,
    mut x: TensorId,
    pids: &ParamIds,
    cfg: &ModelConfig,
    drop: &mut DropoutCtx,
) -> Result<TensorId> {
    for l in 0..cfg.n_enc_layers {
        let normed = layer_norm(g, x, pids, &format!("enc{l}.ln1"))?;
        let attn = multi_head_attention(g, normed, normed, pids, &format!("enc{l}.sa"), cfg.n_heads)?;
        let attn = drop.apply(g, attn);
        let z = g.add(x, attn)?;
        let normed = layer_norm(g, z, pids, &format!("enc{l}.ln2"))?;
        let ffn = feed_forward(g, normed, pids, &format!("enc{l}.ffn"))?;
        let ffn = drop.apply(g, ffn);
        x = g.add(z, ffn)?;
    }
    Ok(x)
}

/// Decoder input: visible encoder outputs at visible slots, the shared mask
/// token plus positional term at masked slots.
pub fn assemble_decoder_input(
    g: &mut Graph,
    z: TensorId,
    mask: &MaskSpec,
    pids: &ParamIds,
    cfg: &ModelConfig,
) -> Result<TensorId> {
    let (z_rows, _) = g.shape(z);
    let n_vis = mask.visible_indices().len();
    if z_rows != n_vis {
        return Err(Error::Data(format!(
            "encoder output has {z_rows} rows but mask has {n_vis} visible patches"
        )));
    }
    let assembled = g.assemble_rows(z, pids.get("e_mask"), mask.visible_bits())?;
    // positional term only at masked slots; visible slots carry h_i as-is
    let d = cfg.d_model;
    let pos = positional_encoding(mask.n(), d);
    let mut masked_pos = vec![0.0; mask.n() * d];
    for i in mask.masked_indices() {
        masked_pos[i * d..(i + 1) * d].copy_from_slice(&pos[i * d..(i + 1) * d]);
    }
    let pos_const = g.constant(masked_pos, mask.n(), d)?;
    Ok(g.add(assembled, pos_const)?)
}

/// The pre-norm decoder stack: MHSA over all slots, MHCA with
/// keys/values from the visible encoder latents Z, then the FFN.
pub fn decode(
    g: &mut Graph,
    d0: TensorId,
    z: TensorId,
    pids: &ParamIds,
    cfg: &ModelConfig,
    drop: &mut DropoutCtx,
) -> Result<TensorId> {
    let mut x = d0;
    for l in 0..cfg.n_dec_layers {
        let normed = layer_norm(g, x, pids, &format!("dec{l}.ln1"))?;
        let attn = multi_head_attention(g, normed, normed, pids, &format!("dec{l}.sa"), cfg.n_heads)?;
        let attn = drop.apply(g, attn);
        let t = g.add(x, attn)?;
        let normed = layer_norm(g, t, pids, &format!("dec{l}.ln2"))?;
        let cross = multi_head_attention(g, normed, z, pids, &format!("dec{l}.ca"), cfg.n_heads)?;
        let cross = drop.apply(g, cross);
        let c = g.add(t, cross)?;
        let normed = layer_norm(g, c, pids, &format!("dec{l}.ln3"))?;
        let ffn = feed_forward(g, normed, pids, &format!("dec{l}.ffn"))?;
        let ffn = drop.apply(g, ffn);
        x = g.add(c, ffn)?;
    }
    Ok(x)
}

/// Output projection: x_hat_i = W_out d_i + b_out for every patch.
pub fn project(g: &mut Graph, d: TensorId, pids: &ParamIds) -> Result<TensorId> {
    linear(g, d, pids.get("w_out"), pids.get("b_out"))
}

/// Result of one forward pass. The graph is returned so the caller can
/// attach a loss and run backward against `param_ids`.
pub struct ForwardPass {
    pub graph: Graph,
    /// Full prediction, one row per patch (`[N, p_s]`).
    pub prediction: TensorId,
    /// Tensor ids of the parameter leaves, aligned with `weights.params`.
    pub param_ids: Vec<TensorId>,
    /// Composed output: original values at visible patches, predicted
    /// values at masked patches.
    pub recomposed: Vec<f64>,
}

impl ModelWeights {
    /// Run the full network on a normalized signal. `values.len()` must
    /// be a patch multiple matching `mask.n()` patches; any N >= 2 works
    /// with the same weights (the positional table is computed on
    /// demand), which is what recursive forecasting relies on.
    pub fn forward(&self, values: &[f64], mask: &MaskSpec, mode: Mode) -> Result<ForwardPass> {
        let ps = self.config.patch_size;
        if values.len() % ps != 0 {
            return Err(Error::Data(format!(
                "signal length {} not divisible by patch size {ps}",
                values.len()
            )));
        }
        let n = values.len() / ps;
        if n != mask.n() {
            return Err(Error::Data(format!(
                "signal has {n} patches but mask covers {}",
                mask.n()
            )));
        }
        let mut g = Graph::new();
        let param_ids = self.insert_leaves(&mut g)?;
        let pids = ParamIds {
            weights: self,
            ids: param_ids.clone(),
        };
        let mut drop = DropoutCtx::new(&self.config, mode);

        let patches = patchify(values, ps)?;
        let vis_idx = mask.visible_indices();
        let mut vis_patches = Vec::with_capacity(vis_idx.len() * ps);
        for &i in &vis_idx {
            vis_patches.extend_from_slice(&patches[i * ps..(i + 1) * ps]);
        }
        let vis = g.constant(vis_patches, vis_idx.len(), ps)?;
        let e = embed(&mut g, vis, &pids)?;
        let pos = positional_encoding(n, self.config.d_model);
        let mut vis_pos = Vec::with_capacity(vis_idx.len() * self.config.d_model);
        for &i in &vis_idx {
            vis_pos.extend_from_slice(&pos[i * self.config.d_model..(i + 1) * self.config.d_model]);
        }
        let pos_const = g.constant(vis_pos, vis_idx.len(), self.config.d_model)?;
        let e_tilde = g.add(e, pos_const)?;

        let z = encode(&mut g, e_tilde, &pids, &self.config, &mut drop)?;
        let d0 = assemble_decoder_input(&mut g, z, mask, &pids, &self.config)?;
        let d = decode(&mut g, d0, z, &pids, &self.config, &mut drop)?;
        let prediction = project(&mut g, d, &pids)?;

        // keep the original at visible patches
        let pred_values = g.values(prediction).to_vec();
        let mut recomposed = values.to_vec();
        for i in mask.masked_indices() {
            recomposed[i * ps..(i + 1) * ps].copy_from_slice(&pred_values[i * ps..(i + 1) * ps]);
        }
        Ok(ForwardPass {
            graph: g,
            prediction,
            param_ids,
            recomposed,
        })
    }

    /// Frozen-encoder feature for FID: run the encoder with every patch
    /// visible (no masking, eval mode) and mean-pool the latents.
    pub fn encode_mean_latent(&self, values: &[f64]) -> Result<Vec<f64>> {
        let ps = self.config.patch_size;
        if values.len() % ps != 0 || values.len() / ps < 1 {
            return Err(Error::Data(format!(
                "signal length {} not divisible by patch size {ps}",
                values.len()
            )));
        }
        let n = values.len() / ps;
        let mut g = Graph::new();
        let param_ids = self.insert_leaves(&mut g)?;
        let pids = ParamIds {
            weights: self,
            ids: param_ids,
        };
        let mut drop = DropoutCtx::new(&self.config, Mode::Eval);
        let patches = g.constant(values.to_vec(), n, ps)?;
        let e = embed(&mut g, patches, &pids)?;
        let pos = g.constant(positional_encoding(n, self.config.d_model), n, self.config.d_model)?;
        let e_tilde = g.add(e, pos)?;
        let z = encode(&mut g, e_tilde, &pids, &self.config, &mut drop)?;
        let d = self.config.d_model;
        let zv = g.values(z);
        let mut pooled = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                pooled[j] += zv[i * d + j];
            }
        }
        for v in pooled.iter_mut() {
            *v /= n as f64;
        }
        Ok(pooled)
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic, version, config JSON, named parameter blocks.
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"FHRFCKPT";
const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(weights: &ModelWeights, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let cfg = serde_json::to_vec(&weights.config)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(&cfg)?;
        w.write_all(&(weights.params.len() as u32).to_le_bytes())?;
        for p in &weights.params {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(p.rows as u32).to_le_bytes())?;
            w.write_all(&(p.cols as u32).to_le_bytes())?;
            for v in &p.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint(format!("truncated file while reading {what}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelWeights> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic string".into()));
    }
    let version = read_u32(&mut r, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let cfg_len = read_u32(&mut r, "config length")? as usize;
    let mut cfg_buf = vec![0u8; cfg_len];
    read_exact_or(&mut r, &mut cfg_buf, "config")?;
    let config: ModelConfig = serde_json::from_slice(&cfg_buf)
        .map_err(|e| Error::Checkpoint(format!("bad config: {e}")))?;
    config.validate()?;

    let expected = layout(&config);
    let n_params = read_u32(&mut r, "parameter count")? as usize;
    if n_params != expected.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {n_params} parameter blocks, config wants {}",
            expected.len()
        )));
    }
    let mut params = Vec::with_capacity(n_params);
    for (name, rows, cols, _) in expected {
        let name_len = read_u32(&mut r, "name length")? as usize;
        let mut name_buf = vec![0u8; name_len];
        read_exact_or(&mut r, &mut name_buf, "name")?;
        let got_name = String::from_utf8(name_buf)
            .map_err(|_| Error::Checkpoint("non-utf8 parameter name".into()))?;
        if got_name != name {
            return Err(Error::Checkpoint(format!(
                "parameter block {got_name} where {name} was expected"
            )));
        }
        let got_rows = read_u32(&mut r, "rows")? as usize;
        let got_cols = read_u32(&mut r, "cols")? as usize;
        if (got_rows, got_cols) != (rows, cols) {
            return Err(Error::Checkpoint(format!(
                "shape mismatch in block {name}: file has {got_rows}x{got_cols}, config wants {rows}x{cols}"
            )));
        }
        let mut values = Vec::with_capacity(rows * cols);
        let mut b = [0u8; 8];
        for _ in 0..rows * cols {
            read_exact_or(&mut r, &mut b, &name)?;
            values.push(f64::from_le_bytes(b));
        }
        params.push(Param {
            name,
            rows,
            cols,
            values,
        });
    }
    let index = ModelWeights::rebuild_index(&params);
    Ok(ModelWeights {
        config,
        params,
        index,
    })
}
