//! Cross-attention in-context regressor with decoupled latent and noise heads.

mod net;
mod train;

pub use net::{forward, ForwardOutput};
pub use train::{clip_grad_norm, loss_and_grad, train, train_from, AdamW, TaskSource, TrainConfig, TrainLog};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::bins::{softmax, BinGrid, BinPmf};
use crate::error::{Error, Result};
use crate::predict::{DecoupledPrediction, Posterior, Prediction};
use crate::rng;

/// Floor on the predicted noise variance.
pub const NOISE_VAR_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Latent logits plus a noise head; the observation PMF is their convolution.
    Decoupled,
    /// Observation logits only, trained with the bar loss.
    Tuned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub input_dim_max: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub depth: usize,
    /// Number of target bins.
    pub k: usize,
    /// Range of the uniform target grid.
    pub y_range: (f64, f64),
    pub variant: Variant,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { input_dim_max: 16, embed_dim: 64, n_heads: 4, depth: 2, k: 64, y_range: (-3.0, 3.0), variant: Variant::Decoupled }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim_max == 0 || self.embed_dim == 0 || self.n_heads == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        if self.embed_dim % self.n_heads != 0 {
            return Err(Error::config(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.n_heads
            )));
        }
        if self.k < 2 {
            return Err(Error::config("at least two bins are required"));
        }
        BinGrid::uniform(self.y_range.0, self.y_range.1, self.k).map(|_| ())
    }

    pub fn grid(&self) -> Result<BinGrid> {
        BinGrid::uniform(self.y_range.0, self.y_range.1, self.k)
    }

    /// Per-point token width: padded inputs, validity mask, target, query flag.
    pub(crate) fn token_dim(&self) -> usize {
        2 * self.input_dim_max + 2
    }
}

/// Named slice of the flat parameter vector holding a `rows × cols` matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Affine map `W x + b` stored in the flat vector.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Dense {
    pub w: usize,
    pub b: Option<usize>,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Block {
    pub q: Dense,
    pub k: Dense,
    pub v: Dense,
    pub o: Dense,
    pub m1: Dense,
    pub m2: Dense,
}

#[derive(Clone, Debug)]
pub(crate) struct Net {
    pub ctx1: Dense,
    pub ctx2: Dense,
    pub qry1: Dense,
    pub qry2: Dense,
    pub blocks: Vec<Block>,
    pub dec: Dense,
    pub head: Dense,
    pub noise: Option<Dense>,
}

struct LayoutBuilder {
    entries: Vec<LayoutEntry>,
    len: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, rows: usize, cols: usize) -> usize {
        let offset = self.len;
        self.entries.push(LayoutEntry { name, offset, rows, cols });
        self.len += rows * cols;
        offset
    }

    fn dense(&mut self, name: &str, rows: usize, cols: usize, bias: bool) -> Dense {
        let w = self.push(format!("{name}.weight"), rows, cols);
        let b = bias.then(|| self.push(format!("{name}.bias"), rows, 1));
        Dense { w, b, rows, cols }
    }
}

pub(crate) fn build_net(spec: &ModelSpec) -> (Net, Vec<LayoutEntry>, usize) {
    let e = spec.embed_dim;
    let t = spec.token_dim();
    let mut lb = LayoutBuilder { entries: Vec::new(), len: 0 };
    let ctx1 = lb.dense("context_encoder.0", e, t, true);
    let ctx2 = lb.dense("context_encoder.1", e, e, true);
    let qry1 = lb.dense("query_encoder.0", e, t, true);
    let qry2 = lb.dense("query_encoder.1", e, e, true);
    let blocks = (0..spec.depth)
        .map(|l| Block {
            q: lb.dense(&format!("block{l}.attn.query"), e, e, false),
            k: lb.dense(&format!("block{l}.attn.key"), e, e, false),
            v: lb.dense(&format!("block{l}.attn.value"), e, e, false),
            o: lb.dense(&format!("block{l}.attn.out"), e, e, true),
            m1: lb.dense(&format!("block{l}.mlp.0"), e, e, true),
            m2: lb.dense(&format!("block{l}.mlp.1"), e, e, true),
        })
        .collect();
    let dec = lb.dense("decoder", e, e, true);
    let head = lb.dense("latent_head", spec.k, e, true);
    let noise = (spec.variant == Variant::Decoupled).then(|| lb.dense("noise_head", 1, e, true));
    let net = Net { ctx1, ctx2, qry1, qry2, blocks, dec, head, noise };
    (net, lb.entries, lb.len)
}

/// Flat parameter vector with its layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub layout: Vec<LayoutEntry>,
    pub values: Vec<f64>,
}

impl ModelParams {
    /// Gaussian fan-in initialization with zero biases.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let (_, layout, len) = build_net(spec);
        let mut values = vec![0.0; len];
        let mut r = rng::stream(seed, 0, rng::tag::MODEL_INIT);
        for entry in &layout {
            if entry.name.ends_with(".bias") {
                continue;
            }
            let mut scale = 1.0 / (entry.cols as f64).sqrt();
            if entry.name.starts_with("latent_head") || entry.name.starts_with("noise_head") {
                scale *= 0.1;
            }
            let normal = Normal::new(0.0, scale).expect("positive scale");
            for v in &mut values[entry.range()] {
                *v = normal.sample(&mut r);
            }
        }
        Ok(Self { spec: spec.clone(), layout, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn entry(&self, name: &str) -> Option<&LayoutEntry> {
        self.layout.iter().find(|e| e.name == name)
    }

    /// Checks that the layout tiles the vector exactly and all values are finite.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let (_, layout, len) = build_net(&self.spec);
        if layout != self.layout || len != self.values.len() {
            return Err(Error::config("parameter layout does not match the model spec"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite parameter"));
        }
        Ok(())
    }

    pub(crate) fn net(&self) -> Net {
        build_net(&self.spec).0
    }
}

/// Input rows and targets the model conditions on.
#[derive(Clone, Copy, Debug)]
pub struct Context<'a> {
    pub x: &'a [Vec<f64>],
    pub y: &'a [f64],
}

/// Binned prediction at each query.
pub fn predict(params: &ModelParams, context: Context<'_>, queries: &[Vec<f64>], grid: &BinGrid) -> Result<Vec<DecoupledPrediction>> {
    if grid.len() != params.spec.k {
        return Err(Error::domain(format!("grid has {} bins, model has {}", grid.len(), params.spec.k)));
    }
    let out = forward(params, context, queries)?;
    out.into_iter().map(|o| to_prediction(&params.spec, grid, o)).collect()
}

fn to_prediction(spec: &ModelSpec, grid: &BinGrid, o: ForwardOutput) -> Result<DecoupledPrediction> {
    let pmf = BinPmf::new(softmax(&o.latent_logits))?;
    match (spec.variant, o.log_noise_var) {
        (Variant::Decoupled, Some(lv)) => DecoupledPrediction::decoupled(grid, pmf, lv.exp(), Some(o.representation)),
        _ => DecoupledPrediction::tuned(grid, pmf, Some(o.representation)),
    }
}

/// A model conditioned on a fixed context, usable by acquisition routines.
pub struct IclPosterior {
    params: ModelParams,
    grid: BinGrid,
    context_x: Vec<Vec<f64>>,
    context_y: Vec<f64>,
    state: net::ContextState,
}

impl IclPosterior {
    pub fn new(params: ModelParams, context_x: Vec<Vec<f64>>, context_y: Vec<f64>) -> Result<Self> {
        let grid = params.spec.grid()?;
        let state = net::encode_context(&params, Context { x: &context_x, y: &context_y })?;
        Ok(Self { params, grid, context_x, context_y, state })
    }

    pub fn context_len(&self) -> usize {
        self.context_x.len().min(self.context_y.len())
    }
}

impl Posterior for IclPosterior {
    fn predict(&self, queries: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        let outs = crate::par::map(queries, |q| net::forward_query(&self.params, &self.state, q));
        outs.into_iter()
            .map(|o| Ok(Prediction::Binned(to_prediction(&self.params.spec, &self.grid, o?)?)))
            .collect()
    }

    fn is_decoupled(&self) -> bool {
        self.params.spec.variant == Variant::Decoupled
    }

    fn grid(&self) -> Option<&BinGrid> {
        Some(&self.grid)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub layout: Vec<LayoutEntry>,
    pub params: Vec<f64>,
    pub train_config: TrainConfig,
    pub seed: u64,
    pub step: usize,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, train_config: &TrainConfig, seed: u64, step: usize) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            spec: params.spec.clone(),
            layout: params.layout.clone(),
            params: params.values.clone(),
            train_config: train_config.clone(),
            seed,
            step,
        }
    }

    pub fn model(&self) -> Result<ModelParams> {
        let p = ModelParams { spec: self.spec.clone(), layout: self.layout.clone(), values: self.params.clone() };
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let c: Self = serde_json::from_reader(file)?;
        if c.format_version != CHECKPOINT_VERSION {
            return Err(Error::config(format!("unsupported checkpoint version {}", c.format_version)));
        }
        c.model()?;
        Ok(c)
    }
}
