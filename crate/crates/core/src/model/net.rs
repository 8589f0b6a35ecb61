//! Forward pass and reverse-mode gradients of the network.

use std::cmp::Ordering;

use super::{Context, Dense, ModelParams, ModelSpec, Net, NOISE_VAR_FLOOR};
use crate::error::{Error, Result};

/// Network outputs at one query.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub latent_logits: Vec<f64>,
    /// `None` for the tuned variant.
    pub log_noise_var: Option<f64>,
    /// Unit-norm decoder activation.
    pub representation: Vec<f64>,
}

fn affine(p: &[f64], d: &Dense, x: &[f64]) -> Vec<f64> {
    let w = &p[d.w..d.w + d.rows * d.cols];
    let mut y: Vec<f64> = w.chunks_exact(d.cols).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect();
    if let Some(b) = d.b {
        y.iter_mut().zip(&p[b..b + d.rows]).for_each(|(v, bi)| *v += bi);
    }
    y
}

/// Accumulates `∂W += dy xᵀ`, `∂b += dy` and returns `Wᵀ dy`.
fn affine_back(p: &[f64], d: &Dense, x: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
    let mut dx = vec![0.0; d.cols];
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let off = d.w + r * d.cols;
        let row = &p[off..off + d.cols];
        for ((gw, xi), (dxi, wi)) in grad[off..off + d.cols].iter_mut().zip(x).zip(dx.iter_mut().zip(row)) {
            *gw += g * xi;
            *dxi += g * wi;
        }
    }
    if let Some(b) = d.b {
        grad[b..b + d.rows].iter_mut().zip(dy).for_each(|(gb, g)| *gb += g);
    }
    dx
}

fn tanh_vec(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(f64::tanh).collect()
}

/// Multiplies `dy` by the tanh derivative given the tanh output `t`.
fn tanh_back(t: &[f64], dy: &[f64]) -> Vec<f64> {
    t.iter().zip(dy).map(|(t, g)| g * (1.0 - t * t)).collect()
}

fn add_into(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

pub(crate) fn token(spec: &ModelSpec, x: &[f64], y: f64, is_query: bool) -> Result<Vec<f64>> {
    let dm = spec.input_dim_max;
    if x.len() > dm {
        return Err(Error::domain(format!("input has {} features, model accepts at most {dm}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) || !y.is_finite() {
        return Err(Error::domain("non-finite model input"));
    }
    let mut t = vec![0.0; spec.token_dim()];
    t[..x.len()].copy_from_slice(x);
    t[dm..dm + x.len()].fill(1.0);
    t[2 * dm] = y;
    t[2 * dm + 1] = if is_query { 1.0 } else { 0.0 };
    Ok(t)
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(a.len().cmp(&b.len()))
}

/// Context embeddings and per-block keys/values, in canonical point order.
#[derive(Clone, Debug)]
pub(crate) struct ContextState {
    tokens: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
    embed: Vec<Vec<f64>>,
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
}

impl ContextState {
    fn len(&self) -> usize {
        self.tokens.len()
    }
}

pub(crate) fn encode_context(params: &ModelParams, ctx: Context<'_>) -> Result<ContextState> {
    if ctx.x.is_empty() || ctx.x.len() != ctx.y.len() {
        return Err(Error::domain(format!(
            "context needs matching non-empty inputs and targets, got {} and {}",
            ctx.x.len(),
            ctx.y.len()
        )));
    }
    let spec = &params.spec;
    let net = params.net();
    let p = &params.values;
    // Sorting makes every floating-point reduction independent of input order.
    let mut order: Vec<usize> = (0..ctx.x.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(&ctx.x[a], &ctx.x[b]).then(ctx.y[a].total_cmp(&ctx.y[b])));
    let tokens = order.iter().map(|&i| token(spec, &ctx.x[i], ctx.y[i], false)).collect::<Result<Vec<_>>>()?;
    let hidden: Vec<Vec<f64>> = tokens.iter().map(|t| tanh_vec(affine(p, &net.ctx1, t))).collect();
    let embed: Vec<Vec<f64>> = hidden.iter().map(|h| affine(p, &net.ctx2, h)).collect();
    let keys = net.blocks.iter().map(|b| embed.iter().map(|c| affine(p, &b.k, c)).collect()).collect();
    let values = net.blocks.iter().map(|b| embed.iter().map(|c| affine(p, &b.v, c)).collect()).collect();
    Ok(ContextState { tokens, hidden, embed, keys, values })
}

struct BlockCache {
    z_in: Vec<f64>,
    q: Vec<f64>,
    /// Attention weights per head over context points.
    attn: Vec<Vec<f64>>,
    o: Vec<f64>,
    z1: Vec<f64>,
    m: Vec<f64>,
}

pub(crate) struct QueryCache {
    u: Vec<f64>,
    h: Vec<f64>,
    blocks: Vec<BlockCache>,
    z: Vec<f64>,
    g: Vec<f64>,
    pub(crate) logits: Vec<f64>,
    pub(crate) log_var: Option<f64>,
    log_var_floored: bool,
}

pub(crate) fn query_forward(params: &ModelParams, net: &Net, state: &ContextState, x: &[f64]) -> Result<QueryCache> {
    let spec = &params.spec;
    let p = &params.values;
    let e = spec.embed_dim;
    let nh = spec.n_heads;
    let dh = e / nh;
    let scale = 1.0 / (dh as f64).sqrt();
    let u = token(spec, x, 0.0, true)?;
    let h = tanh_vec(affine(p, &net.qry1, &u));
    let mut z = affine(p, &net.qry2, &h);
    let mut blocks = Vec::with_capacity(net.blocks.len());
    for (l, b) in net.blocks.iter().enumerate() {
        let q = affine(p, &b.q, &z);
        let keys = &state.keys[l];
        let vals = &state.values[l];
        let mut o = vec![0.0; e];
        let mut attn = Vec::with_capacity(nh);
        for hd in 0..nh {
            let s = hd * dh..(hd + 1) * dh;
            let scores: Vec<f64> =
                keys.iter().map(|k| q[s.clone()].iter().zip(&k[s.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale).collect();
            let a = crate::bins::softmax(&scores);
            for (ai, v) in a.iter().zip(vals) {
                o[s.clone()].iter_mut().zip(&v[s.clone()]).for_each(|(oo, vv)| *oo += ai * vv);
            }
            attn.push(a);
        }
        let mut z1 = z.clone();
        add_into(&mut z1, &affine(p, &b.o, &o));
        let m = tanh_vec(affine(p, &b.m1, &z1));
        let mut z2 = z1.clone();
        add_into(&mut z2, &affine(p, &b.m2, &m));
        blocks.push(BlockCache { z_in: z, q, attn, o, z1, m });
        z = z2;
    }
    let g = tanh_vec(affine(p, &net.dec, &z));
    let logits = affine(p, &net.head, &g);
    let (log_var, log_var_floored) = match &net.noise {
        Some(d) => {
            let raw = affine(p, d, &g)[0];
            let floor = NOISE_VAR_FLOOR.ln();
            (Some(raw.max(floor)), raw < floor)
        }
        None => (None, false),
    };
    Ok(QueryCache { u, h, blocks, z, g, logits, log_var, log_var_floored })
}

fn output(cache: QueryCache) -> ForwardOutput {
    let norm = cache.g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let representation = if norm > 0.0 {
        cache.g.iter().map(|v| v / norm).collect()
    } else {
        let mut r = vec![0.0; cache.g.len()];
        r[0] = 1.0;
        r
    };
    ForwardOutput { latent_logits: cache.logits, log_noise_var: cache.log_var, representation }
}

pub(crate) fn forward_query(params: &ModelParams, state: &ContextState, x: &[f64]) -> Result<ForwardOutput> {
    let net = params.net();
    Ok(output(query_forward(params, &net, state, x)?))
}

/// Outputs at every query given a context. Context order does not matter.
pub fn forward(params: &ModelParams, context: Context<'_>, queries: &[Vec<f64>]) -> Result<Vec<ForwardOutput>> {
    let state = encode_context(params, context)?;
    let net = params.net();
    queries.iter().map(|q| Ok(output(query_forward(params, &net, &state, q)?))).collect()
}

/// Gradient accumulators for context keys and values.
pub(crate) struct ContextGrad {
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
}

impl ContextGrad {
    pub(crate) fn new(params: &ModelParams, state: &ContextState) -> Self {
        let zeros = || vec![vec![vec![0.0; params.spec.embed_dim]; state.len()]; params.spec.depth];
        Self { keys: zeros(), values: zeros() }
    }
}

/// Backpropagates `∂L/∂logits` and `∂L/∂log σ²` through one query.
pub(crate) fn query_backward(
    params: &ModelParams,
    net: &Net,
    state: &ContextState,
    cache: &QueryCache,
    d_logits: &[f64],
    d_log_var: f64,
    ctx_grad: &mut ContextGrad,
    grad: &mut [f64],
) {
    let p = &params.values;
    let e = params.spec.embed_dim;
    let nh = params.spec.n_heads;
    let dh = e / nh;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut dg = affine_back(p, &net.head, &cache.g, d_logits, grad);
    if let Some(d) = &net.noise {
        let dl = if cache.log_var_floored { 0.0 } else { d_log_var };
        add_into(&mut dg, &affine_back(p, d, &cache.g, &[dl], grad));
    }
    let mut dz = affine_back(p, &net.dec, &cache.z, &tanh_back(&cache.g, &dg), grad);

    for (l, (b, bc)) in net.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        // z2 = z1 + W_m2 m + b_m2, m = tanh(W_m1 z1 + b_m1)
        let dm = affine_back(p, &b.m2, &bc.m, &dz, grad);
        let mut dz1 = dz;
        add_into(&mut dz1, &affine_back(p, &b.m1, &bc.z1, &tanh_back(&bc.m, &dm), grad));
        // z1 = z_in + W_o o + b_o
        let d_o = affine_back(p, &b.o, &bc.o, &dz1, grad);
        let mut dq = vec![0.0; e];
        let keys = &state.keys[l];
        let vals = &state.values[l];
        for hd in 0..nh {
            let s = hd * dh..(hd + 1) * dh;
            let a = &bc.attn[hd];
            let da: Vec<f64> = vals.iter().map(|v| d_o[s.clone()].iter().zip(&v[s.clone()]).map(|(x, y)| x * y).sum()).collect();
            let mean: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
            for (i, (ai, dai)) in a.iter().zip(&da).enumerate() {
                ctx_grad.values[l][i][s.clone()].iter_mut().zip(&d_o[s.clone()]).for_each(|(g, d)| *g += ai * d);
                let ds = ai * (dai - mean) * scale;
                if ds != 0.0 {
                    dq[s.clone()].iter_mut().zip(&keys[i][s.clone()]).for_each(|(g, k)| *g += ds * k);
                    ctx_grad.keys[l][i][s.clone()].iter_mut().zip(&bc.q[s.clone()]).for_each(|(g, q)| *g += ds * q);
                }
            }
        }
        let mut dz_in = dz1;
        add_into(&mut dz_in, &affine_back(p, &b.q, &bc.z_in, &dq, grad));
        dz = dz_in;
    }
    let dh_q = affine_back(p, &net.qry2, &cache.h, &dz, grad);
    affine_back(p, &net.qry1, &cache.u, &tanh_back(&cache.h, &dh_q), grad);
}

/// Pushes accumulated key/value gradients back through the context encoder.
pub(crate) fn context_backward(params: &ModelParams, net: &Net, state: &ContextState, ctx_grad: &ContextGrad, grad: &mut [f64]) {
    let p = &params.values;
    for i in 0..state.len() {
        let mut dc = vec![0.0; params.spec.embed_dim];
        for (l, b) in net.blocks.iter().enumerate() {
            add_into(&mut dc, &affine_back(p, &b.k, &state.embed[i], &ctx_grad.keys[l][i], grad));
            add_into(&mut dc, &affine_back(p, &b.v, &state.embed[i], &ctx_grad.values[l][i], grad));
        }
        let dh = affine_back(p, &net.ctx2, &state.hidden[i], &dc, grad);
        affine_back(p, &net.ctx1, &state.tokens[i], &tanh_back(&state.hidden[i], &dh), grad);
    }
}
