//! Task identification from a handful of embeddings.
//!
//! [`TaskMapperModel`] is the few-shot class-incremental mapper: a frozen
//! trunk `relu(W e)`, a frozen attention module that refines class
//! prototypes in the context of each other, and a growable list of unit-norm
//! class vectors scored by temperature-scaled cosine similarity. Only the
//! class vectors change after pretraining.
//!
//! [`MetaBaseline`] is the fixed-N prototypical network it is compared
//! against: one trunk trained for exactly N-way K-shot episodes, scored by
//! negative squared Euclidean distance.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader, Writer};
use crate::buffer::SupportBuffer;
use crate::encoder::EncoderModel;
use crate::optim::{Adam, ScalarAdam};
use crate::suite::PretrainDataset;
use crate::{rng, Error, Result};

pub const FEATURE_DIM: usize = 64;
pub const MAPPER_VERSION: u32 = 1;
const MAPPER_MAGIC: &[u8; 4] = b"DMAP";
const BASELINE_MAGIC: &[u8; 4] = b"DMET";
/// Fewest pretrain classes the incremental mapper is trained on.
pub const MIN_PRETRAIN_CLASSES: usize = 5;

/// Embeddings grouped by class: one matrix of rows per class.
pub type ClassEmbeddings = Vec<Array2<f32>>;

/// Encode every game of a pretrain dataset, one class per game.
pub fn class_embeddings(dataset: &PretrainDataset, encoder: &EncoderModel) -> Result<ClassEmbeddings> {
    dataset
        .games
        .iter()
        .map(|g| encoder.encode_batch(g.frames.mapv(|v| f32::from(v) / 255.0).view()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapperConfig {
    pub episodes: usize,
    /// Shots of a pseudo-new class.
    pub k_shot: usize,
    /// Shots behind a base-class prototype.
    pub base_shots: usize,
    pub queries_per_class: usize,
    pub min_way: usize,
    pub max_way: usize,
    /// Most pseudo-new classes in one episode.
    pub max_new: usize,
    pub learning_rate: f64,
    pub init_temperature: f64,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            k_shot: 5,
            base_shots: 10,
            queries_per_class: 5,
            min_way: 5,
            max_way: 20,
            max_new: 5,
            learning_rate: 1e-3,
            init_temperature: 10.0,
        }
    }
}

// ---------------------------------------------------------------------------
// dense helpers (f64)

fn to64(a: ArrayView2<f32>) -> Array2<f64> {
    a.mapv(f64::from)
}

fn to32(a: &Array2<f64>) -> Array2<f32> {
    a.mapv(|v| v as f32)
}

fn gaussian(rows: usize, cols: usize, std: f64, r: &mut rng::Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(r);
        z * std
    })
}

/// Row-wise L2 normalisation; zero rows stay zero.
fn normalize_rows(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let mut y = x.clone();
    for (mut row, &n) in y.rows_mut().into_iter().zip(&norms) {
        if n > 0.0 {
            row /= n;
        }
    }
    (y, norms)
}

fn normalize_rows_backward(y: &Array2<f64>, norms: &Array1<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    for ((mut dxr, yr), &n) in dx.rows_mut().into_iter().zip(y.rows()).zip(norms) {
        if n > 0.0 {
            let proj = yr.dot(&dxr);
            dxr.scaled_add(-proj, &yr);
            dxr /= n;
        } else {
            dxr.fill(0.0);
        }
    }
    dx
}

fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    y
}

fn first_argmax(xs: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in xs.into_iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Mean of each class's rows in a stacked matrix.
fn segment_means(x: &Array2<f64>, sizes: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((sizes.len(), x.ncols()));
    let mut start = 0;
    for (c, &n) in sizes.iter().enumerate() {
        let mean = x.slice(s![start..start + n, ..]).mean_axis(Axis(0)).expect("non-empty class");
        out.row_mut(c).assign(&mean);
        start += n;
    }
    out
}

// ---------------------------------------------------------------------------
// incremental mapper

/// Trainable parameters of the incremental mapper, in f64 for optimisation.
#[derive(Debug, Clone, PartialEq)]
struct Params {
    /// `feature_dim x input_dim`.
    trunk: Array2<f64>,
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    log_temperature: f64,
}

#[derive(Debug, Clone)]
struct Grads {
    trunk: Array2<f64>,
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    log_temperature: f64,
}

struct AdaptCache {
    u: Array2<f64>,
    u_norms: Array1<f64>,
    k: Array2<f64>,
    q: Array2<f64>,
    v: Array2<f64>,
    attn: Array2<f64>,
    c: Array2<f64>,
    h_norms: Array1<f64>,
}

impl Params {
    fn init(input_dim: usize, feature_dim: usize, temperature: f64, r: &mut rng::Rng) -> Self {
        let eye = Array2::<f64>::eye(feature_dim);
        let f = feature_dim as f64;
        Self {
            trunk: gaussian(feature_dim, input_dim, (2.0 / input_dim as f64).sqrt(), r),
            wq: &eye + &gaussian(feature_dim, feature_dim, 0.01 / f.sqrt(), r),
            wk: &eye + &gaussian(feature_dim, feature_dim, 0.01 / f.sqrt(), r),
            wv: gaussian(feature_dim, feature_dim, 0.01 / f.sqrt(), r),
            log_temperature: temperature.ln(),
        }
    }

    fn feature_dim(&self) -> usize {
        self.trunk.nrows()
    }

    /// Pre-activations and features of each row of `x`.
    fn features(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let pre = x.dot(&self.trunk.t());
        let post = pre.mapv(|v| v.max(0.0));
        (pre, post)
    }

    /// Refine raw prototypes into unit-norm class vectors.
    fn adapt(&self, prototypes: &Array2<f64>) -> AdaptCache {
        let (u, u_norms) = normalize_rows(prototypes);
        let q = u.dot(&self.wq.t());
        let k = u.dot(&self.wk.t());
        let v = u.dot(&self.wv.t());
        let scale = 1.0 / (self.feature_dim() as f64).sqrt();
        let attn = softmax_rows(&(q.dot(&k.t()) * scale));
        let h = &u + &attn.dot(&v);
        let (c, h_norms) = normalize_rows(&h);
        AdaptCache { u, u_norms, k, q, v, attn, c, h_norms }
    }

    /// Backpropagate `dc` (gradient on class vectors) through [`Self::adapt`],
    /// accumulating attention gradients into `g` and returning the gradient
    /// on the raw prototypes.
    fn adapt_backward(&self, cache: &AdaptCache, dc: &Array2<f64>, g: &mut Grads) -> Array2<f64> {
        let scale = 1.0 / (self.feature_dim() as f64).sqrt();
        let dh = normalize_rows_backward(&cache.c, &cache.h_norms, dc);
        let mut du = dh.clone();
        let d_attn = dh.dot(&cache.v.t());
        let dv = cache.attn.t().dot(&dh);
        g.wv += &dv.t().dot(&cache.u);
        du += &dv.dot(&self.wv);
        // softmax backward, row by row
        let row_dot = (&d_attn * &cache.attn).sum_axis(Axis(1)).insert_axis(Axis(1));
        let d_scores = &cache.attn * &(&d_attn - &row_dot) * scale;
        let dq = d_scores.dot(&cache.k);
        let dk = d_scores.t().dot(&cache.q);
        g.wq += &dq.t().dot(&cache.u);
        g.wk += &dk.t().dot(&cache.u);
        du += &dq.dot(&self.wq);
        du += &dk.dot(&self.wk);
        normalize_rows_backward(&cache.u, &cache.u_norms, &du)
    }

    fn zero_grads(&self) -> Grads {
        Grads {
            trunk: Array2::zeros(self.trunk.raw_dim()),
            wq: Array2::zeros(self.wq.raw_dim()),
            wk: Array2::zeros(self.wk.raw_dim()),
            wv: Array2::zeros(self.wv.raw_dim()),
            log_temperature: 0.0,
        }
    }

    /// Cross-entropy of one episode and its gradient.
    fn episode_loss(&self, ep: &Episode) -> (f64, Grads) {
        let mut g = self.zero_grads();
        let (s_pre, s_feat) = self.features(&ep.support);
        let protos = segment_means(&s_feat, &ep.shots);
        let cache = self.adapt(&protos);

        let (q_pre, q_feat) = self.features(&ep.queries);
        let (q_hat, q_norms) = normalize_rows(&q_feat);
        let tau = self.log_temperature.exp();
        let cos = q_hat.dot(&cache.c.t());
        let probs = softmax_rows(&(&cos * tau));
        let m = ep.labels.len() as f64;
        let mut loss = 0.0;
        let mut d_logits = probs.clone();
        for (i, &y) in ep.labels.iter().enumerate() {
            loss -= probs[[i, y]].max(1e-300).ln();
            d_logits[[i, y]] -= 1.0;
        }
        loss /= m;
        d_logits /= m;

        g.log_temperature = (&d_logits * &cos).sum() * tau;
        let d_cos = &d_logits * tau;
        let dq_hat = d_cos.dot(&cache.c);
        let dc = d_cos.t().dot(&q_hat);

        let dq_feat = normalize_rows_backward(&q_hat, &q_norms, &dq_hat);
        let dq_pre = &dq_feat * &q_pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        g.trunk += &dq_pre.t().dot(&ep.queries);

        let d_protos = self.adapt_backward(&cache, &dc, &mut g);
        let mut ds_feat = Array2::zeros(s_feat.raw_dim());
        let mut start = 0;
        for (c, &n) in ep.shots.iter().enumerate() {
            let row = &d_protos.row(c) / n as f64;
            for mut r in ds_feat.slice_mut(s![start..start + n, ..]).rows_mut() {
                r.assign(&row);
            }
            start += n;
        }
        let ds_pre = &ds_feat * &s_pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        g.trunk += &ds_pre.t().dot(&ep.support);
        (loss, g)
    }
}

/// One training or evaluation episode over stacked embeddings.
#[derive(Debug, Clone)]
struct Episode {
    /// Support rows, grouped by class in order.
    support: Array2<f64>,
    /// Support rows per class.
    shots: Vec<usize>,
    queries: Array2<f64>,
    labels: Vec<usize>,
}

fn check_classes(classes: &[Array2<f32>], need_rows: usize, need_classes: usize) -> Result<usize> {
    if classes.len() < need_classes {
        return Err(Error::Insufficient(format!(
            "{} classes available, {need_classes} required",
            classes.len()
        )));
    }
    let dim = classes[0].ncols();
    for (i, c) in classes.iter().enumerate() {
        if c.ncols() != dim {
            return Err(Error::Shape(format!("class {i} has dimension {}, expected {dim}", c.ncols())));
        }
        if c.nrows() < need_rows {
            return Err(Error::Insufficient(format!(
                "class {i} has {} embeddings, {need_rows} required",
                c.nrows()
            )));
        }
    }
    Ok(dim)
}

/// Draw an episode over `chosen` classes with `shots[i]` support and
/// `queries` query rows each, sampled without replacement.
fn sample_episode(
    classes: &[Array2<f32>],
    chosen: &[usize],
    shots: &[usize],
    queries: usize,
    r: &mut rng::Rng,
) -> Episode {
    let dim = classes[chosen[0]].ncols();
    let total_support: usize = shots.iter().sum();
    let mut support = Array2::zeros((total_support, dim));
    let mut q = Array2::zeros((queries * chosen.len(), dim));
    let mut labels = Vec::with_capacity(queries * chosen.len());
    let mut row = 0;
    for (label, (&c, &k)) in chosen.iter().zip(shots).enumerate() {
        let data = &classes[c];
        let picked = index::sample(r, data.nrows(), k + queries).into_vec();
        for (j, &p) in picked.iter().enumerate() {
            let src = data.row(p).mapv(f64::from);
            if j < k {
                support.row_mut(row).assign(&src);
                row += 1;
            } else {
                let qi = label * queries + (j - k);
                q.row_mut(qi).assign(&src);
            }
        }
        labels.extend(std::iter::repeat(label).take(queries));
    }
    Episode { support, shots: shots.to_vec(), queries: q, labels }
}

/// The incremental task-mapper.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMapperModel {
    trunk: Array2<f32>,
    wq: Array2<f32>,
    wk: Array2<f32>,
    wv: Array2<f32>,
    temperature: f32,
    episodes_trained: u32,
    /// `N x feature_dim`, unit-norm rows.
    class_vectors: Array2<f32>,
}

impl TaskMapperModel {
    fn from_params(p: &Params, episodes_trained: u32) -> Self {
        Self {
            trunk: to32(&p.trunk),
            wq: to32(&p.wq),
            wk: to32(&p.wk),
            wv: to32(&p.wv),
            temperature: p.log_temperature.exp() as f32,
            episodes_trained,
            class_vectors: Array2::zeros((0, p.feature_dim())),
        }
    }

    fn params(&self) -> Params {
        Params {
            trunk: to64(self.trunk.view()),
            wq: to64(self.wq.view()),
            wk: to64(self.wk.view()),
            wv: to64(self.wv.view()),
            log_temperature: f64::from(self.temperature).ln(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_vectors.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.trunk.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.ncols()
    }

    pub fn temperature(&self) -> f32 {
        self.temperature
    }

    pub fn class_vectors(&self) -> ArrayView2<'_, f32> {
        self.class_vectors.view()
    }

    pub fn is_untrained(&self) -> bool {
        self.episodes_trained == 0
    }

    /// True when every parameter other than the class vectors matches.
    pub fn same_frozen_parameters(&self, other: &Self) -> bool {
        self.trunk == other.trunk
            && self.wq == other.wq
            && self.wk == other.wk
            && self.wv == other.wv
            && self.temperature.to_bits() == other.temperature.to_bits()
    }

    fn check_input(&self, x: ArrayView2<f32>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "embeddings have {} columns, mapper expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Trunk features of each row.
    pub fn features(&self, x: ArrayView2<f32>) -> Result<Array2<f32>> {
        self.check_input(x)?;
        Ok(x.dot(&self.trunk.t()).mapv(|v| v.max(0.0)))
    }

    /// Class vectors for an arbitrary set of per-class support matrices.
    pub fn adapt_supports(&self, supports: &[ArrayView2<f32>]) -> Result<Array2<f32>> {
        if supports.is_empty() {
            return Ok(Array2::zeros((0, self.feature_dim())));
        }
        let mut protos = Array2::zeros((supports.len(), self.feature_dim()));
        for (c, sup) in supports.iter().enumerate() {
            if sup.nrows() == 0 {
                return Err(Error::Shape(format!("class {c} has no support rows")));
            }
            let f = to64(self.features(*sup)?.view());
            protos.row_mut(c).assign(&f.mean_axis(Axis(0)).expect("non-empty"));
        }
        Ok(to32(&self.params().adapt(&protos).c))
    }

    /// Scores of a probe's mean feature against `class_vectors`: returns the
    /// winning class (lowest id on ties) and its softmax confidence.
    fn score(&self, class_vectors: ArrayView2<f32>, probe: ArrayView2<f32>) -> Result<(usize, f64)> {
        if class_vectors.nrows() == 0 {
            return Err(Error::NoClasses);
        }
        if probe.nrows() == 0 {
            return Err(Error::Insufficient("empty probe".into()));
        }
        let mean = to64(self.features(probe)?.view()).mean_axis(Axis(0)).expect("non-empty");
        let norm = mean.dot(&mean).sqrt();
        let tau = f64::from(self.temperature);
        let logits: Vec<f64> = class_vectors
            .rows()
            .into_iter()
            .map(|c| if norm > 0.0 { tau * c.mapv(f64::from).dot(&mean) / norm } else { 0.0 })
            .collect();
        let best = first_argmax(logits.iter().copied());
        let denom: f64 = logits.iter().map(|l| (l - logits[best]).exp()).sum();
        Ok((best, 1.0 / denom))
    }

    /// Identify which learnt class a probe of embeddings belongs to.
    pub fn infer_task(&self, probe: ArrayView2<f32>) -> Result<(usize, f64)> {
        self.score(self.class_vectors.view(), probe)
    }

    /// Classify every query row against freshly adapted supports.
    pub fn classify_episode(&self, supports: &[ArrayView2<f32>], queries: ArrayView2<f32>) -> Result<Vec<usize>> {
        let cv = self.adapt_supports(supports)?;
        queries
            .rows()
            .into_iter()
            .map(|q| Ok(self.score(cv.view(), q.insert_axis(Axis(0)))?.0))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(MAPPER_MAGIC)
            .u32(MAPPER_VERSION)
            .u32(self.n_classes() as u32)
            .u32(self.feature_dim() as u32)
            .f32(self.temperature)
            .u32(self.input_dim() as u32)
            .u32(self.episodes_trained);
        w.f32s(self.trunk.iter());
        w.f32s(self.wq.iter()).f32s(self.wk.iter()).f32s(self.wv.iter());
        w.f32s(self.class_vectors.iter());
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(MAPPER_MAGIC)?;
        binio::check_version(MAPPER_VERSION, r.u32()?)?;
        let n = r.u32()? as usize;
        let f = r.u32()? as usize;
        let temperature = r.f32()?;
        let d = r.u32()? as usize;
        let episodes_trained = r.u32()?;
        let mut block = |rows: usize, cols: usize| -> Result<Array2<f32>> {
            Ok(Array2::from_shape_vec((rows, cols), r.f32s(rows * cols)?).expect("sized"))
        };
        let trunk = block(f, d)?;
        let wq = block(f, f)?;
        let wk = block(f, f)?;
        let wv = block(f, f)?;
        let class_vectors = block(n, f)?;
        r.finish()?;
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::Parse(format!("invalid temperature {temperature}")));
        }
        Ok(Self { trunk, wq, wk, wv, temperature, episodes_trained, class_vectors })
    }

    pub fn size_bytes(&self) -> usize {
        4 + 4 * 6 + 4 * (self.trunk.len() + 3 * self.wq.len() + self.class_vectors.len())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?)
    }
}

/// Pretrain the incremental mapper on per-class embeddings.
///
/// Each episode picks a random number of classes; most act as base classes
/// (prototypes from `base_shots` rows), the rest as pseudo-new classes
/// (prototypes from `k_shot` rows). All prototypes go through the attention
/// pass and queries from every class are scored against the adapted class
/// vectors.
pub fn pretrain_taskmapper(classes: &[Array2<f32>], cfg: &MapperConfig, seed: u64) -> Result<TaskMapperModel> {
    let need_rows = cfg.base_shots.max(cfg.k_shot) + cfg.queries_per_class;
    let dim = check_classes(classes, need_rows, MIN_PRETRAIN_CLASSES)?;
    let mut r = rng::stream(seed, "mapper-pretrain");
    let mut p = Params::init(dim, FEATURE_DIM, cfg.init_temperature, &mut r);
    let max_way = cfg.max_way.min(classes.len()).max(2);
    let min_way = cfg.min_way.clamp(2, max_way);

    let mut opt_trunk = Adam::new(&p.trunk);
    let mut opt_q = Adam::new(&p.wq);
    let mut opt_k = Adam::new(&p.wk);
    let mut opt_v = Adam::new(&p.wv);
    let mut opt_t = ScalarAdam::default();
    let mut ids: Vec<usize> = (0..classes.len()).collect();
    for t in 1..=cfg.episodes {
        let way = r.gen_range(min_way..=max_way);
        let new = r.gen_range(1..=cfg.max_new.clamp(1, way - 1));
        ids.shuffle(&mut r);
        let shots: Vec<usize> =
            (0..way).map(|i| if i < way - new { cfg.base_shots } else { cfg.k_shot }).collect();
        let ep = sample_episode(classes, &ids[..way], &shots, cfg.queries_per_class, &mut r);
        let (loss, g) = p.episode_loss(&ep);
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("mapper loss is {loss} at episode {t}")));
        }
        let lr = cfg.learning_rate;
        let step = t as i32;
        opt_trunk.step(&mut p.trunk, &g.trunk, lr, step);
        opt_q.step(&mut p.wq, &g.wq, lr, step);
        opt_k.step(&mut p.wk, &g.wk, lr, step);
        opt_v.step(&mut p.wv, &g.wv, lr, step);
        opt_t.step(&mut p.log_temperature, g.log_temperature, lr, step);
    }
    Ok(TaskMapperModel::from_params(&p, cfg.episodes as u32))
}

/// A new model whose class vectors are adapted from every class in `buffer`.
pub fn extend_and_adapt(model: &TaskMapperModel, buffer: &SupportBuffer) -> Result<TaskMapperModel> {
    if buffer.dim() != model.input_dim() {
        return Err(Error::Shape(format!(
            "buffer dimension {} does not match mapper input {}",
            buffer.dim(),
            model.input_dim()
        )));
    }
    if buffer.len() != buffer.n_classes() * buffer.k() {
        return Err(Error::Shape("buffer does not hold exactly K entries per class".into()));
    }
    let supports: Vec<_> = (0..buffer.n_classes()).map(|c| buffer.class(c)).collect();
    let mut next = model.clone();
    next.class_vectors = model.adapt_supports(&supports)?;
    Ok(next)
}

// ---------------------------------------------------------------------------
// fixed-N baseline

/// Prototypical network trained for exactly `n_way`-way `k_shot`-shot
/// episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaBaseline {
    n_way: usize,
    k_shot: usize,
    /// `feature_dim x input_dim`.
    trunk: Array2<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub episodes: usize,
    pub queries_per_class: usize,
    pub learning_rate: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { episodes: 2000, queries_per_class: 5, learning_rate: 1e-3 }
    }
}

fn baseline_loss(trunk: &Array2<f64>, ep: &Episode) -> (f64, Array2<f64>) {
    let s_pre = ep.support.dot(&trunk.t());
    let s_feat = s_pre.mapv(|v| v.max(0.0));
    let protos = segment_means(&s_feat, &ep.shots);
    let q_pre = ep.queries.dot(&trunk.t());
    let q_feat = q_pre.mapv(|v| v.max(0.0));
    let n = protos.nrows();
    let m = q_feat.nrows();
    // logits = -|q - p|^2
    let mut logits = Array2::zeros((m, n));
    for (i, q) in q_feat.rows().into_iter().enumerate() {
        for (c, p) in protos.rows().into_iter().enumerate() {
            let d = &q - &p;
            logits[[i, c]] = -d.dot(&d);
        }
    }
    let probs = softmax_rows(&logits);
    let mut d_logits = probs.clone();
    let mut loss = 0.0;
    for (i, &y) in ep.labels.iter().enumerate() {
        loss -= probs[[i, y]].max(1e-300).ln();
        d_logits[[i, y]] -= 1.0;
    }
    loss /= m as f64;
    d_logits /= m as f64;
    // d logit / dq = -2 (q - p), d logit / dp = 2 (q - p)
    let row_sums = d_logits.sum_axis(Axis(1)).insert_axis(Axis(1));
    let dq = (&q_feat * &row_sums - d_logits.dot(&protos)) * -2.0;
    let col_sums = d_logits.sum_axis(Axis(0)).insert_axis(Axis(1));
    let dp = (d_logits.t().dot(&q_feat) - &protos * &col_sums) * 2.0;
    let mut grad = (&dq * &q_pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })).t().dot(&ep.queries);
    let mut ds = Array2::zeros(s_feat.raw_dim());
    let mut start = 0;
    for (c, &k) in ep.shots.iter().enumerate() {
        let row = &dp.row(c) / k as f64;
        for mut r in ds.slice_mut(s![start..start + k, ..]).rows_mut() {
            r.assign(&row);
        }
        start += k;
    }
    grad += &(&ds * &s_pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })).t().dot(&ep.support);
    (loss, grad)
}

/// Train the fixed-N baseline on per-class embeddings.
pub fn meta_baseline(
    classes: &[Array2<f32>],
    n_way: usize,
    k_shot: usize,
    cfg: &BaselineConfig,
    seed: u64,
) -> Result<MetaBaseline> {
    if n_way == 0 || k_shot == 0 {
        return Err(Error::validation("n_way and k_shot must be positive"));
    }
    let dim = check_classes(classes, k_shot + cfg.queries_per_class, n_way.max(MIN_PRETRAIN_CLASSES))?;
    let mut r = rng::stream_indexed(seed, "meta-baseline", n_way as u64);
    let mut trunk = gaussian(FEATURE_DIM, dim, (2.0 / dim as f64).sqrt(), &mut r);
    if n_way > 1 {
        let mut opt = Adam::new(&trunk);
        let mut ids: Vec<usize> = (0..classes.len()).collect();
        let shots = vec![k_shot; n_way];
        for t in 1..=cfg.episodes {
            ids.shuffle(&mut r);
            let ep = sample_episode(classes, &ids[..n_way], &shots, cfg.queries_per_class, &mut r);
            let (loss, g) = baseline_loss(&trunk, &ep);
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("baseline loss is {loss} at episode {t}")));
            }
            opt.step(&mut trunk, &g, cfg.learning_rate, t as i32);
        }
    }
    Ok(MetaBaseline { n_way, k_shot, trunk: to32(&trunk) })
}

impl MetaBaseline {
    pub fn n_way(&self) -> usize {
        self.n_way
    }

    pub fn k_shot(&self) -> usize {
        self.k_shot
    }

    fn features(&self, x: ArrayView2<f32>) -> Result<Array2<f32>> {
        if x.ncols() != self.trunk.ncols() {
            return Err(Error::Shape(format!(
                "embeddings have {} columns, baseline expects {}",
                x.ncols(),
                self.trunk.ncols()
            )));
        }
        Ok(x.dot(&self.trunk.t()).mapv(|v| v.max(0.0)))
    }

    /// Prototypes (the N-way head) from exactly `n_way` support sets.
    pub fn head(&self, supports: &[ArrayView2<f32>]) -> Result<Array2<f32>> {
        if supports.len() != self.n_way {
            return Err(Error::Shape(format!(
                "baseline is fixed at {}-way, got {} classes",
                self.n_way,
                supports.len()
            )));
        }
        let mut head = Array2::zeros((self.n_way, self.trunk.nrows()));
        for (c, sup) in supports.iter().enumerate() {
            if sup.nrows() == 0 {
                return Err(Error::Shape(format!("class {c} has no support rows")));
            }
            head.row_mut(c).assign(&self.features(*sup)?.mean_axis(Axis(0)).expect("non-empty"));
        }
        Ok(head)
    }

    /// Nearest prototype to a probe's mean feature (lowest id on ties).
    pub fn predict(&self, head: ArrayView2<f32>, probe: ArrayView2<f32>) -> Result<(usize, f64)> {
        if head.nrows() == 0 {
            return Err(Error::NoClasses);
        }
        if probe.nrows() == 0 {
            return Err(Error::Insufficient("empty probe".into()));
        }
        let g = self.features(probe)?.mean_axis(Axis(0)).expect("non-empty").mapv(f64::from);
        let logits: Vec<f64> = head
            .rows()
            .into_iter()
            .map(|p| {
                let d = &g - &p.mapv(f64::from);
                -d.dot(&d)
            })
            .collect();
        let best = first_argmax(logits.iter().copied());
        let denom: f64 = logits.iter().map(|l| (l - logits[best]).exp()).sum();
        Ok((best, 1.0 / denom))
    }

    pub fn classify_episode(&self, supports: &[ArrayView2<f32>], queries: ArrayView2<f32>) -> Result<Vec<usize>> {
        let head = self.head(supports)?;
        queries
            .rows()
            .into_iter()
            .map(|q| Ok(self.predict(head.view(), q.insert_axis(Axis(0)))?.0))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(BASELINE_MAGIC)
            .u32(MAPPER_VERSION)
            .u32(self.n_way as u32)
            .u32(self.k_shot as u32)
            .u32(self.trunk.nrows() as u32)
            .u32(self.trunk.ncols() as u32);
        w.f32s(self.trunk.iter());
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(BASELINE_MAGIC)?;
        binio::check_version(MAPPER_VERSION, r.u32()?)?;
        let n_way = r.u32()? as usize;
        let k_shot = r.u32()? as usize;
        let f = r.u32()? as usize;
        let d = r.u32()? as usize;
        let trunk = Array2::from_shape_vec((f, d), r.f32s(f * d)?).expect("sized");
        r.finish()?;
        Ok(Self { n_way, k_shot, trunk })
    }

    /// Stored size of the trunk alone.
    pub fn trunk_bytes(&self) -> usize {
        24 + 4 * self.trunk.len()
    }

    /// Stored size of an N-way head.
    pub fn head_bytes(&self) -> usize {
        8 + 4 * self.n_way * self.trunk.nrows()
    }
}

// ---------------------------------------------------------------------------
// evaluation

/// Anything that classifies queries given one support set per class.
pub trait FewShotClassifier {
    fn classify_episode(&self, supports: &[ArrayView2<f32>], queries: ArrayView2<f32>) -> Result<Vec<usize>>;
}

impl FewShotClassifier for TaskMapperModel {
    fn classify_episode(&self, supports: &[ArrayView2<f32>], queries: ArrayView2<f32>) -> Result<Vec<usize>> {
        TaskMapperModel::classify_episode(self, supports, queries)
    }
}

impl FewShotClassifier for MetaBaseline {
    fn classify_episode(&self, supports: &[ArrayView2<f32>], queries: ArrayView2<f32>) -> Result<Vec<usize>> {
        MetaBaseline::classify_episode(self, supports, queries)
    }
}

/// Mean query accuracy over seeded `way`-way `shot`-shot episodes drawn from
/// `classes`, with `queries` single-embedding queries per class.
pub fn episode_accuracy(
    model: &dyn FewShotClassifier,
    classes: &[Array2<f32>],
    way: usize,
    shot: usize,
    queries: usize,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    check_classes(classes, shot + queries, way)?;
    let mut r = rng::stream(seed, "episode-accuracy");
    let mut ids: Vec<usize> = (0..classes.len()).collect();
    let (mut hits, mut total) = (0usize, 0usize);
    for _ in 0..episodes {
        ids.shuffle(&mut r);
        let ep = sample_episode(classes, &ids[..way], &vec![shot; way], queries, &mut r);
        let support = ep.support.mapv(|v| v as f32);
        let supports: Vec<_> = (0..way).map(|c| support.slice(s![c * shot..(c + 1) * shot, ..])).collect();
        let preds = model.classify_episode(&supports, ep.queries.mapv(|v| v as f32).view())?;
        hits += preds.iter().zip(&ep.labels).filter(|(p, y)| p == y).count();
        total += preds.len();
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Well-separated synthetic classes: a shared positive offset plus a
    /// class-specific direction, with a random positive gain per row.
    fn toy_classes(n: usize, rows: usize, dim: usize, seed: u64) -> ClassEmbeddings {
        let mut r = rng::rng(seed);
        let centers = gaussian(n, dim, 1.0, &mut r);
        let mut out = Vec::with_capacity(n);
        for c in 0..n {
            let mut m = Array2::from_shape_fn((rows, dim), |(_, j)| centers[[c, j]] as f32)
                + gaussian(rows, dim, 0.3, &mut r).mapv(|v| v as f32);
            for mut row in m.rows_mut() {
                let gain: f32 = r.gen_range(0.5..1.5);
                row *= gain;
            }
            out.push(m);
        }
        out
    }

    fn small_params(r: &mut rng::Rng) -> Params {
        let mut p = Params::init(6, 4, 3.0, r);
        p.wv = gaussian(4, 4, 0.5, r);
        p.wq = gaussian(4, 4, 0.7, r);
        p.wk = gaussian(4, 4, 0.7, r);
        p
    }

    #[test]
    fn mapper_gradient_matches_finite_differences() {
        let mut r = rng::rng(3);
        let p = small_params(&mut r);
        let classes = toy_classes(4, 12, 6, 1);
        let ep = sample_episode(&classes, &[0, 1, 2, 3], &[3, 3, 2, 2], 2, &mut r);
        let (_, g) = p.episode_loss(&ep);
        let h = 1e-6;
        let check = |name: &str, get: &dyn Fn(&mut Params) -> &mut Array2<f64>, grad: &Array2<f64>| {
            for idx in [(0, 0), (1, 2), (3, 3)] {
                let (mut a, mut b) = (p.clone(), p.clone());
                get(&mut a)[idx] += h;
                get(&mut b)[idx] -= h;
                let fd = (a.episode_loss(&ep).0 - b.episode_loss(&ep).0) / (2.0 * h);
                let an = grad[idx];
                assert!((fd - an).abs() <= 1e-5 + 1e-4 * fd.abs(), "{name}{idx:?}: fd {fd} vs {an}");
            }
        };
        check("trunk", &|p| &mut p.trunk, &g.trunk);
        check("wq", &|p| &mut p.wq, &g.wq);
        check("wk", &|p| &mut p.wk, &g.wk);
        check("wv", &|p| &mut p.wv, &g.wv);
        let (mut a, mut b) = (p.clone(), p.clone());
        a.log_temperature += h;
        b.log_temperature -= h;
        let fd = (a.episode_loss(&ep).0 - b.episode_loss(&ep).0) / (2.0 * h);
        assert!((fd - g.log_temperature).abs() < 1e-5, "tau: {fd} vs {}", g.log_temperature);
    }

    #[test]
    fn baseline_gradient_matches_finite_differences() {
        let mut r = rng::rng(4);
        let trunk = gaussian(4, 6, 0.5, &mut r);
        let classes = toy_classes(3, 10, 6, 2);
        let ep = sample_episode(&classes, &[0, 1, 2], &[3, 3, 3], 2, &mut r);
        let (_, g) = baseline_loss(&trunk, &ep);
        let h = 1e-6;
        for idx in [(0, 0), (2, 3), (3, 5)] {
            let (mut a, mut b) = (trunk.clone(), trunk.clone());
            a[idx] += h;
            b[idx] -= h;
            let fd = (baseline_loss(&a, &ep).0 - baseline_loss(&b, &ep).0) / (2.0 * h);
            assert!((fd - g[idx]).abs() <= 1e-5 + 1e-4 * fd.abs(), "{idx:?}: fd {fd} vs {}", g[idx]);
        }
    }

    fn trained(classes: &ClassEmbeddings, episodes: usize) -> TaskMapperModel {
        let cfg = MapperConfig { episodes, max_way: 8, ..Default::default() };
        pretrain_taskmapper(classes, &cfg, 9).unwrap()
    }

    fn buffer_from(classes: &ClassEmbeddings, k: usize) -> SupportBuffer {
        let mut buf = SupportBuffer::new(k, classes[0].ncols());
        for (c, m) in classes.iter().enumerate() {
            buf = buf.merge(c, m.slice(s![..k, ..])).unwrap();
        }
        buf
    }

    #[test]
    fn zero_episodes_is_untrained_and_deterministic() {
        let classes = toy_classes(6, 20, 16, 0);
        let a = trained(&classes, 0);
        assert!(a.is_untrained());
        assert_eq!(a.n_classes(), 0);
        let b = trained(&classes, 30);
        assert_eq!(b, trained(&classes, 30));
        assert!(!b.is_untrained());
    }

    #[test]
    fn too_few_classes() {
        let classes = toy_classes(4, 20, 16, 0);
        let err = pretrain_taskmapper(&classes, &MapperConfig::default(), 0).unwrap_err();
        assert!(matches!(err, Error::Insufficient(_)));
        let classes = toy_classes(6, 20, 16, 0);
        assert!(matches!(
            meta_baseline(&classes, 7, 5, &BaselineConfig::default(), 0),
            Err(Error::Insufficient(_))
        ));
    }

    #[test]
    fn one_class_always_wins_with_full_confidence() {
        let classes = toy_classes(6, 20, 16, 0);
        let m = extend_and_adapt(&trained(&classes, 20), &buffer_from(&classes[..1].to_vec(), 5)).unwrap();
        assert_eq!(m.n_classes(), 1);
        for c in &classes {
            let (id, conf) = m.infer_task(c.slice(s![..8, ..])).unwrap();
            assert_eq!((id, conf), (0, 1.0));
        }
    }

    #[test]
    fn infer_without_classes_fails() {
        let classes = toy_classes(6, 20, 16, 0);
        let m = trained(&classes, 0);
        assert!(matches!(m.infer_task(classes[0].view()), Err(Error::NoClasses)));
    }

    #[test]
    fn adaptation_is_pure_and_local() {
        let classes = toy_classes(6, 20, 16, 0);
        let base = trained(&classes, 50);
        let a = extend_and_adapt(&base, &buffer_from(&classes[..3].to_vec(), 5)).unwrap();
        let b = extend_and_adapt(&base, &buffer_from(&classes[..3].to_vec(), 5)).unwrap();
        assert_eq!(a, b);
        let c = extend_and_adapt(&a, &buffer_from(&classes[..4].to_vec(), 5)).unwrap();
        assert_eq!(c.n_classes(), 4);
        assert!(c.same_frozen_parameters(&base));
        for row in c.class_vectors().rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn two_separated_classes_are_recognised() {
        // Monte Carlo over 200 single-embedding queries.
        let classes = toy_classes(6, 120, 16, 5);
        let m = extend_and_adapt(&trained(&classes, 200), &buffer_from(&classes[..2].to_vec(), 5)).unwrap();
        let mut hits = 0;
        for i in 0..200 {
            let c = i % 2;
            let q = classes[c].slice(s![20 + i / 2..21 + i / 2, ..]);
            hits += usize::from(m.infer_task(q).unwrap().0 == c);
        }
        assert!(hits >= 198, "{hits}/200");
    }

    #[test]
    fn prototype_probe_has_maximal_confidence() {
        let classes = toy_classes(6, 40, 16, 6);
        let m = extend_and_adapt(&trained(&classes, 100), &buffer_from(&classes[..3].to_vec(), 5)).unwrap();
        let proto_probe = classes[0].slice(s![..5, ..]);
        let (id, best) = m.infer_task(proto_probe).unwrap();
        assert_eq!(id, 0);
        // class vector 0 is adapted, so compare against other class-0 probes
        // drawn from the same support
        for i in 0..5 {
            let (_, conf) = m.infer_task(classes[0].slice(s![i..i + 1, ..])).unwrap();
            assert!(best >= conf - 0.05, "{best} < {conf}");
        }
    }

    #[test]
    fn ties_break_to_lowest_id() {
        let classes = toy_classes(6, 20, 16, 0);
        let base = trained(&classes, 0);
        let mut buf = SupportBuffer::new(2, 16);
        let same = classes[0].slice(s![..2, ..]);
        buf = buf.merge(0, same).unwrap().merge(1, same).unwrap();
        let m = extend_and_adapt(&base, &buf).unwrap();
        assert_eq!(m.infer_task(classes[0].slice(s![..4, ..])).unwrap().0, 0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let classes = toy_classes(6, 20, 16, 0);
        let m = extend_and_adapt(&trained(&classes, 10), &buffer_from(&classes[..2].to_vec(), 5)).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), m.size_bytes());
        assert_eq!(TaskMapperModel::from_bytes(&bytes).unwrap(), m);
        let b = meta_baseline(&classes, 5, 5, &BaselineConfig { episodes: 5, ..Default::default() }, 0).unwrap();
        assert_eq!(MetaBaseline::from_bytes(&b.to_bytes()).unwrap(), b);
        assert_eq!(b.to_bytes().len(), b.trunk_bytes());
    }

    #[test]
    fn baseline_one_way_is_perfect_and_fixed() {
        let classes = toy_classes(6, 20, 16, 0);
        let b = meta_baseline(&classes, 1, 5, &BaselineConfig::default(), 0).unwrap();
        assert_eq!(episode_accuracy(&b, &classes, 1, 5, 5, 20, 0).unwrap(), 1.0);
        let supports: Vec<_> = classes[..2].iter().map(|c| c.slice(s![..5, ..])).collect();
        assert!(b.classify_episode(&supports, classes[0].view()).is_err());
    }

    #[test]
    fn baseline_learns_separable_classes() {
        let classes = toy_classes(8, 40, 16, 2);
        let b = meta_baseline(&classes, 5, 5, &BaselineConfig { episodes: 300, ..Default::default() }, 1).unwrap();
        let acc = episode_accuracy(&b, &classes, 5, 5, 5, 50, 3).unwrap();
        assert!(acc >= 0.85, "{acc}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn argmax_is_scale_invariant(scale in 0.01f32..100.0, c in 0usize..6, row in 0usize..20) {
                let classes = toy_classes(6, 20, 16, 11);
                let m = extend_and_adapt(&trained(&classes, 20), &buffer_from(&classes, 5)).unwrap();
                let probe = classes[c].slice(s![row..row + 1, ..]).to_owned();
                let a = m.infer_task(probe.view()).unwrap().0;
                let b = m.infer_task((&probe * scale).view()).unwrap().0;
                prop_assert_eq!(a, b);
            }

            #[test]
            fn growth_is_one_class_per_merge(n in 1usize..6) {
                let classes = toy_classes(6, 20, 16, 12);
                let base = trained(&classes, 0);
                let mut buf = SupportBuffer::new(3, 16);
                let mut m = base.clone();
                for c in 0..n {
                    buf = buf.merge(c, classes[c].slice(s![..3, ..])).unwrap();
                    m = extend_and_adapt(&m, &buf).unwrap();
                    prop_assert_eq!(m.n_classes(), c + 1);
                    prop_assert!(m.same_frozen_parameters(&base));
                }
            }
        }
    }
}
