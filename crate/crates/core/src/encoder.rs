//! Frozen 512-d observation encoders.
//!
//! Both encoders are a single bias-free linear map from the flattened frame
//! to the latent, so a frame's embedding direction does not depend on its
//! overall brightness. The random encoder is a seeded Gaussian projection;
//! the trained one is the encode half of a linear autoencoder fitted to the
//! pretrain frames.

use std::path::Path;

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader, Writer};
use crate::optim::Adam;
use crate::{rng, Error, Result, FRAME_PIXELS, LATENT_DIM};

const MAGIC: &[u8; 4] = b"DENC";
pub const ENCODER_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Random,
    Trained,
}

/// A frozen encoder. There is no way to change the weights of a constructed
/// model, so `encode` is pure.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    kind: EncoderKind,
    seed: u64,
    epochs_trained: u32,
    /// `input_dim x latent_dim`.
    weights: Array2<f32>,
    /// `latent_dim x input_dim`; present iff the encoder was trained.
    decoder: Option<Array2<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    /// Scale of the initial weights relative to a unit-variance projection.
    pub init_scale: f32,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self { epochs: 20, learning_rate: 1e-3, batch_size: 64, init_scale: 0.1 }
    }
}

fn gaussian(rows: usize, cols: usize, std: f32, r: &mut rng::Rng) -> Array2<f32> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f32 = StandardNormal.sample(r);
        z * std
    })
}

pub fn random_encoder(seed: u64) -> EncoderModel {
    random_encoder_with_dims(seed, FRAME_PIXELS, LATENT_DIM)
}

pub fn random_encoder_with_dims(seed: u64, input_dim: usize, latent_dim: usize) -> EncoderModel {
    let mut r = rng::stream(seed, "random-encoder");
    EncoderModel {
        kind: EncoderKind::Random,
        seed,
        epochs_trained: 0,
        weights: gaussian(input_dim, latent_dim, 1.0 / (input_dim as f32).sqrt(), &mut r),
        decoder: None,
    }
}

/// Fit a linear autoencoder to the rows of `frames` (values in `[0, 1]`).
///
/// Minimises the batch mean of the squared reconstruction error with Adam on
/// seeded shuffled minibatches.
pub fn train_autoencoder(
    frames: ArrayView2<f32>,
    cfg: &AutoencoderConfig,
    seed: u64,
) -> Result<EncoderModel> {
    train_autoencoder_with_latent(frames, LATENT_DIM, cfg, seed)
}

pub fn train_autoencoder_with_latent(
    frames: ArrayView2<f32>,
    latent_dim: usize,
    cfg: &AutoencoderConfig,
    seed: u64,
) -> Result<EncoderModel> {
    let (n, input_dim) = frames.dim();
    if n == 0 {
        return Err(Error::Insufficient("autoencoder needs at least one frame".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::validation("batch size must be positive"));
    }
    let mut r = rng::stream(seed, "autoencoder");
    let mut enc = gaussian(input_dim, latent_dim, cfg.init_scale / (input_dim as f32).sqrt(), &mut r);
    let mut dec = gaussian(latent_dim, input_dim, cfg.init_scale / (latent_dim as f32).sqrt(), &mut r);
    let mut enc_opt = Adam::new(&enc);
    let mut dec_opt = Adam::new(&dec);
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut r);
        for batch in order.chunks(cfg.batch_size) {
            let x = frames.select(Axis(0), batch);
            let scale = 2.0 / batch.len() as f32;
            let z = x.dot(&enc);
            let mut err = z.dot(&dec);
            err -= &x;
            let loss = err.iter().map(|e| e * e).sum::<f32>() / batch.len() as f32;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("autoencoder loss is {loss} in epoch {epoch}")));
            }
            let g_dec = z.t().dot(&err) * scale;
            let g_z = err.dot(&dec.t()) * scale;
            let g_enc = x.t().dot(&g_z);
            t += 1;
            dec_opt.step(&mut dec, &g_dec, cfg.learning_rate, t);
            enc_opt.step(&mut enc, &g_enc, cfg.learning_rate, t);
        }
    }
    Ok(EncoderModel {
        kind: EncoderKind::Trained,
        seed,
        epochs_trained: cfg.epochs as u32,
        weights: enc,
        decoder: Some(dec),
    })
}

impl EncoderModel {
    pub fn kind(&self) -> EncoderKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn latent_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Always true: encoders are immutable once built.
    pub fn is_frozen(&self) -> bool {
        true
    }

    /// True for an autoencoder returned without any training epochs.
    pub fn is_untrained(&self) -> bool {
        self.kind == EncoderKind::Trained && self.epochs_trained == 0
    }

    pub fn epochs_trained(&self) -> u32 {
        self.epochs_trained
    }

    pub fn weights(&self) -> ArrayView2<'_, f32> {
        self.weights.view()
    }

    pub fn decoder(&self) -> Option<ArrayView2<'_, f32>> {
        self.decoder.as_ref().map(|d| d.view())
    }

    pub fn encode(&self, frame: ArrayView1<f32>) -> Result<Vec<f32>> {
        let row = frame.insert_axis(Axis(0));
        Ok(self.encode_batch(row)?.into_raw_vec_and_offset().0)
    }

    /// Embed every row of `frames`.
    pub fn encode_batch(&self, frames: ArrayView2<f32>) -> Result<Array2<f32>> {
        if frames.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "frame has {} pixels, encoder expects {}",
                frames.ncols(),
                self.input_dim()
            )));
        }
        Ok(frames.dot(&self.weights))
    }

    /// Mean squared per-pixel reconstruction error through `decoder`.
    pub fn reconstruction_mse_with(&self, decoder: ArrayView2<f32>, frames: ArrayView2<f32>) -> Result<f64> {
        let recon = self.encode_batch(frames)?.dot(&decoder);
        let sse: f64 = recon.iter().zip(frames.iter()).map(|(a, b)| f64::from(a - b).powi(2)).sum();
        Ok(sse / frames.len().max(1) as f64)
    }

    /// Reconstruction error through the trained decoder, if there is one.
    pub fn reconstruction_mse(&self, frames: ArrayView2<f32>) -> Option<Result<f64>> {
        self.decoder.as_ref().map(|d| self.reconstruction_mse_with(d.view(), frames))
    }

    /// The decoder minimising squared reconstruction error on `frames` for
    /// this encoder (ridge-regularised least squares).
    pub fn least_squares_decoder(&self, frames: ArrayView2<f32>, ridge: f64) -> Result<Array2<f32>> {
        let z = self.encode_batch(frames)?.mapv(f64::from);
        let x = frames.mapv(f64::from);
        let mut gram = z.t().dot(&z);
        let l = gram.nrows();
        let trace = gram.diag().sum() / l as f64;
        for i in 0..l {
            gram[[i, i]] += ridge * trace.max(1e-12);
        }
        let rhs = z.t().dot(&x);
        let chol = cholesky(gram)?;
        Ok(cholesky_solve(&chol, rhs).mapv(|v| v as f32))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(MAGIC)
            .u32(ENCODER_VERSION)
            .u8(match self.kind {
                EncoderKind::Random => 0,
                EncoderKind::Trained => 1,
            })
            .u32(self.latent_dim() as u32)
            .u32(self.input_dim() as u32)
            .u64(self.seed)
            .u32(self.epochs_trained)
            .u8(u8::from(self.decoder.is_some()));
        w.f32s(self.weights.iter());
        if let Some(d) = &self.decoder {
            w.f32s(d.iter());
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(MAGIC)?;
        binio::check_version(ENCODER_VERSION, r.u32()?)?;
        let kind = match r.u8()? {
            0 => EncoderKind::Random,
            1 => EncoderKind::Trained,
            k => return Err(Error::Parse(format!("unknown encoder kind {k}"))),
        };
        let latent = r.u32()? as usize;
        let input = r.u32()? as usize;
        let seed = r.u64()?;
        let epochs_trained = r.u32()?;
        let has_decoder = r.u8()? != 0;
        if has_decoder != (kind == EncoderKind::Trained) {
            return Err(Error::Parse("decoder block must be present exactly for trained encoders".into()));
        }
        let weights = Array2::from_shape_vec((input, latent), r.f32s(input * latent)?).expect("sized");
        let decoder = if has_decoder {
            Some(Array2::from_shape_vec((latent, input), r.f32s(input * latent)?).expect("sized"))
        } else {
            None
        };
        r.finish()?;
        Ok(Self { kind, seed, epochs_trained, weights, decoder })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?)
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
fn cholesky(mut a: Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    for j in 0..n {
        let d = a[[j, j]] - (0..j).map(|k| a[[j, k]] * a[[j, k]]).sum::<f64>();
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::Divergence("matrix is not positive definite".into()));
        }
        let d = d.sqrt();
        a[[j, j]] = d;
        for i in j + 1..n {
            let s = a[[i, j]] - (0..j).map(|k| a[[i, k]] * a[[j, k]]).sum::<f64>();
            a[[i, j]] = s / d;
        }
    }
    for i in 0..n {
        a.slice_mut(s![i, i + 1..]).fill(0.0);
    }
    Ok(a)
}

/// Solve `L L^T X = B` for `X`.
fn cholesky_solve(l: &Array2<f64>, mut b: Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    for i in 0..n {
        for k in 0..i {
            let f = l[[i, k]];
            let (head, mut tail) = b.view_mut().split_at(Axis(0), i);
            tail.row_mut(0).scaled_add(-f, &head.row(k));
        }
        let d = l[[i, i]];
        b.row_mut(i).mapv_inplace(|v| v / d);
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            let f = l[[k, i]];
            let (mut head, tail) = b.view_mut().split_at(Axis(0), i + 1);
            head.row_mut(i).scaled_add(-f, &tail.row(k - i - 1));
        }
        let d = l[[i, i]];
        b.row_mut(i).mapv_inplace(|v| v / d);
    }
    b
}

/// Cosine similarity of two vectors (0 if either is zero).
pub fn cosine(a: ArrayView1<f32>, b: ArrayView1<f32>) -> f64 {
    let dot = f64::from(a.dot(&b));
    let na = f64::from(a.dot(&a)).sqrt();
    let nb = f64::from(b.dot(&b)).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
