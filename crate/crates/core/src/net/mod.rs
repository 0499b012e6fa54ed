//! 3D convolutional utility regressor with an exact backward pass.
//!
//! Architecture: `n_blocks` blocks of `units_per_block` units of
//! conv3d(3×3×3, same padding) → batch-norm → ReLU, each block followed by a
//! 2×2×2 max-pool, then FC(hidden1) → ReLU → dropout, FC(hidden2) → ReLU →
//! dropout, and a final linear unit.

mod io;
mod real;
mod train;
mod vol;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::seed;

pub use io::{load_net, save_net};
pub use real::Real;
pub use train::{mse, train, SampleView, TrainReport};
pub use vol::Vol;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub n_blocks: usize,
    pub units_per_block: usize,
    pub filters_increment: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub input_dims: [usize; 3],
    pub input_channels: usize,
    pub lambda: f64,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Apply the weight penalty to every parameter, including biases and
    /// batch-norm scale/shift.
    pub regularize_all: bool,
    pub max_epochs: usize,
    /// Fit an affine map of the training targets to zero mean, unit variance.
    pub normalize_targets: bool,
    /// Train on `ln(1 + y)` and map predictions back with `exp(f) - 1`.
    /// Requires nonnegative targets.
    pub log_targets: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            n_blocks: 2,
            units_per_block: 4,
            filters_increment: 8,
            hidden1: 128,
            hidden2: 32,
            input_dims: [16, 16, 8],
            input_channels: 6,
            lambda: 1e-4,
            dropout_rate: 0.5,
            learning_rate: 1e-4,
            batch_size: 128,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 1,
            bn_momentum: 0.99,
            bn_eps: 1e-5,
            regularize_all: false,
            max_epochs: 200,
            normalize_targets: false,
            log_targets: false,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.n_blocks == 0 || self.units_per_block == 0 {
            return bad("n_blocks and units_per_block must be >= 1");
        }
        if self.filters_increment == 0 || self.hidden1 == 0 || self.hidden2 == 0 {
            return bad("layer widths must be >= 1");
        }
        if self.input_channels == 0 {
            return bad("input_channels must be >= 1");
        }
        let div = 1usize.checked_shl(self.n_blocks as u32).unwrap_or(0);
        if div == 0 || self.input_dims.iter().any(|&d| d == 0 || d % div != 0) {
            return bad("input dims must be positive multiples of 2^n_blocks");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if !(self.lambda >= 0.0) || !(self.learning_rate > 0.0) || !(self.adam_eps > 0.0) || !(self.bn_eps > 0.0) {
            return bad("lambda >= 0, learning_rate > 0, eps > 0 required");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("momentum terms must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input_dims.iter().product::<usize>() * self.input_channels
    }

    /// Spatial dims after the last pooling layer.
    pub fn final_dims(&self) -> [usize; 3] {
        self.input_dims.map(|d| d >> self.n_blocks)
    }

    pub fn final_channels(&self) -> usize {
        self.input_channels + self.n_blocks * self.units_per_block * self.filters_increment
    }

    pub fn matches_features(&self, f: &FeatureConfig) -> bool {
        self.input_dims == f.dims && self.input_channels == f.channels()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and dropout.
    Train,
    /// Running statistics and dropout.
    TrainFrozenStats,
    /// Running statistics, no dropout.
    Eval,
}

impl Mode {
    fn batch_stats(self) -> bool {
        self == Mode::Train
    }
    fn dropout(self) -> bool {
        self != Mode::Eval
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    BnScale,
    BnShift,
    FcWeight,
    FcBias,
}

impl ParamKind {
    pub fn is_weight(self) -> bool {
        matches!(self, ParamKind::ConvWeight | ParamKind::FcWeight)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSegment {
    pub kind: ParamKind,
    pub layer: usize,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
struct ConvUnit {
    cin: usize,
    cout: usize,
    w: usize,
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone)]
struct Dense {
    nin: usize,
    nout: usize,
    w: usize,
    b: usize,
}

/// Per-unit batch mean and biased variance from a train-mode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<Vec<T>>,
    pub var: Vec<Vec<T>>,
    /// Values per channel the statistics were computed over.
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct LossGrad<T> {
    pub loss: f64,
    pub data_loss: f64,
    pub outputs: Vec<T>,
    pub grads: Vec<T>,
    pub stats: Option<BatchStats<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

#[derive(Debug, Clone)]
pub struct UtilityNet<T: Real = f32> {
    cfg: NetConfig,
    vols: Vec<Vol>,
    units: Vec<ConvUnit>,
    dense: Vec<Dense>,
    params: Vec<T>,
    segments: Vec<ParamSegment>,
    running_mean: Vec<Vec<T>>,
    running_var: Vec<Vec<T>>,
    adam: AdamState<T>,
    target_shift: f64,
    target_scale: f64,
}

struct Cache<T> {
    batch: usize,
    acts: Vec<Vec<T>>,
    xhat: Vec<Vec<T>>,
    inv_std: Vec<Vec<T>>,
    pool_arg: Vec<Vec<u32>>,
    dense_in: Vec<Vec<T>>,
    dense_relu: Vec<Vec<T>>,
    masks: Vec<Vec<T>>,
}

impl<T: Real> UtilityNet<T> {
    /// Builds the network with He-scaled normal weights, zero biases, unit
    /// batch-norm scale and zero shift.
    pub fn new(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut vols = Vec::with_capacity(cfg.n_blocks + 1);
        let mut dims = cfg.input_dims;
        for _ in 0..=cfg.n_blocks {
            vols.push(Vol::new(dims));
            dims = dims.map(|d| d / 2);
        }
        let mut segments = Vec::new();
        let mut offset = 0;
        let mut push = |kind, layer, len| {
            segments.push(ParamSegment { kind, layer, offset, len });
            offset += len;
            offset - len
        };
        let mut units = Vec::new();
        let mut c = cfg.input_channels;
        for _ in 0..cfg.n_blocks {
            for _ in 0..cfg.units_per_block {
                let layer = units.len();
                let cout = c + cfg.filters_increment;
                let w = push(ParamKind::ConvWeight, layer, cout * c * 27);
                let gamma = push(ParamKind::BnScale, layer, cout);
                let beta = push(ParamKind::BnShift, layer, cout);
                units.push(ConvUnit { cin: c, cout, w, gamma, beta });
                c = cout;
            }
        }
        let flat = c * vols[cfg.n_blocks].voxels();
        let mut dense = Vec::new();
        for (layer, (nin, nout)) in [(flat, cfg.hidden1), (cfg.hidden1, cfg.hidden2), (cfg.hidden2, 1)].into_iter().enumerate() {
            let w = push(ParamKind::FcWeight, layer, nin * nout);
            let b = push(ParamKind::FcBias, layer, nout);
            dense.push(Dense { nin, nout, w, b });
        }
        let total = offset;
        let mut params = vec![T::ZERO; total];
        let mut rng = seed::rng(seed::substream(cfg.seed, "net"));
        for s in &segments {
            let fan_in = match s.kind {
                ParamKind::ConvWeight => units[s.layer].cin * 27,
                ParamKind::FcWeight => dense[s.layer].nin,
                ParamKind::BnScale => {
                    params[s.offset..s.offset + s.len].fill(T::ONE);
                    continue;
                }
                _ => continue,
            };
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            for p in &mut params[s.offset..s.offset + s.len] {
                *p = T::from_f64(normal.sample(&mut rng));
            }
        }
        let running_mean = units.iter().map(|u| vec![T::ZERO; u.cout]).collect();
        let running_var = units.iter().map(|u| vec![T::ONE; u.cout]).collect();
        Ok(Self {
            cfg,
            vols,
            units,
            dense,
            adam: AdamState { m: vec![T::ZERO; total], v: vec![T::ZERO; total], step: 0 },
            params,
            segments,
            running_mean,
            running_var,
            target_shift: 0.0,
            target_scale: 1.0,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn segments(&self) -> &[ParamSegment] {
        &self.segments
    }

    pub fn running_mean(&self) -> &[Vec<T>] {
        &self.running_mean
    }

    pub fn running_var(&self) -> &[Vec<T>] {
        &self.running_var
    }

    pub fn set_running_stats(&mut self, mean: Vec<Vec<T>>, var: Vec<Vec<T>>) -> Result<()> {
        let ok = |v: &Vec<Vec<T>>| v.len() == self.units.len() && v.iter().zip(&self.units).all(|(c, u)| c.len() == u.cout);
        if !ok(&mean) || !ok(&var) {
            return Err(Error::DimensionMismatch("running statistics shape".into()));
        }
        self.running_mean = mean;
        self.running_var = var;
        Ok(())
    }

    pub fn adam_state(&self) -> &AdamState<T> {
        &self.adam
    }

    /// Spatial dims of every stage: the input volume followed by the output
    /// of each pooling layer.
    pub fn stage_dims(&self) -> Vec<[usize; 3]> {
        self.vols.iter().map(|v| v.dims).collect()
    }

    pub fn flatten_len(&self) -> usize {
        self.dense[0].nin
    }

    pub fn target_normalization(&self) -> (f64, f64) {
        (self.target_shift, self.target_scale)
    }

    pub fn set_target_normalization(&mut self, shift: f64, scale: f64) -> Result<()> {
        if !shift.is_finite() || !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidParameter("target normalization must be finite with scale > 0".into()));
        }
        self.target_shift = shift;
        self.target_scale = scale;
        Ok(())
    }

    /// Converts parameters and running statistics to another scalar type.
    pub fn cast<U: Real>(&self) -> UtilityNet<U> {
        let c = |v: &[T]| v.iter().map(|x| U::from_f64(x.to_f64())).collect::<Vec<U>>();
        let cc = |v: &[Vec<T>]| v.iter().map(|x| c(x)).collect::<Vec<_>>();
        UtilityNet {
            cfg: self.cfg.clone(),
            vols: self.vols.clone(),
            units: self.units.clone(),
            dense: self.dense.clone(),
            params: c(&self.params),
            segments: self.segments.clone(),
            running_mean: cc(&self.running_mean),
            running_var: cc(&self.running_var),
            adam: AdamState { m: c(&self.adam.m), v: c(&self.adam.v), step: self.adam.step },
            target_shift: self.target_shift,
            target_scale: self.target_scale,
        }
    }

    fn check_inputs(&self, inputs: &[f32]) -> Result<usize> {
        let len = self.cfg.input_len();
        if inputs.is_empty() || !inputs.len().is_multiple_of(len) {
            return Err(Error::DimensionMismatch(format!(
                "input length {} is not a positive multiple of {}",
                inputs.len(),
                len
            )));
        }
        Ok(inputs.len() / len)
    }

    /// Raw network outputs (normalized target units) for a batch laid out as
    /// consecutive samples in feature order.
    pub fn forward<R: Rng + ?Sized>(&self, inputs: &[f32], mode: Mode, rng: &mut R) -> Result<Vec<T>> {
        self.check_inputs(inputs)?;
        Ok(self.run(inputs, mode, rng).0)
    }

    /// Eval-mode outputs mapped back to target units.
    pub fn predict(&self, inputs: &[f32]) -> Result<Vec<f64>> {
        self.check_inputs(inputs)?;
        let out = self.run(inputs, Mode::Eval, &mut seed::rng(0)).0;
        let log = self.cfg.log_targets;
        Ok(out
            .into_iter()
            .map(|y| {
                let v = y.to_f64() * self.target_scale + self.target_shift;
                if log {
                    v.exp_m1()
                } else {
                    v
                }
            })
            .collect())
    }

    /// Loss value only; same definition as [`Self::loss_and_grad`].
    pub fn loss<R: Rng + ?Sized>(&self, inputs: &[f32], targets: &[f64], mode: Mode, rng: &mut R) -> Result<f64> {
        let batch = self.check_inputs(inputs)?;
        if targets.len() != batch {
            return Err(Error::LengthMismatch(batch, targets.len()));
        }
        let (outputs, _, _) = self.run(inputs, mode, rng);
        let data: f64 = outputs.iter().zip(targets).map(|(f, y)| (f.to_f64() - y).powi(2)).sum();
        Ok(data + self.cfg.lambda * self.penalty_norm())
    }

    fn penalized(&self) -> impl Iterator<Item = &ParamSegment> {
        self.segments.iter().filter(|s| self.cfg.regularize_all || s.kind.is_weight())
    }

    /// `‖W‖²` over the penalized parameters.
    pub fn penalty_norm(&self) -> f64 {
        self.penalized().flat_map(|s| &self.params[s.offset..s.offset + s.len]).map(|p| p.to_f64() * p.to_f64()).sum()
    }

    /// Loss `Σ (f(x_i) - y_i)² + λ‖W‖²` over the batch and its exact gradient.
    /// Targets are in normalized units.
    pub fn loss_and_grad<R: Rng + ?Sized>(&self, inputs: &[f32], targets: &[f64], mode: Mode, rng: &mut R) -> Result<LossGrad<T>> {
        let batch = self.check_inputs(inputs)?;
        if targets.len() != batch {
            return Err(Error::LengthMismatch(batch, targets.len()));
        }
        let (outputs, cache, stats) = self.run(inputs, mode, rng);
        let mut data_loss = 0.0;
        let mut dout = vec![T::ZERO; batch];
        for (b, (&f, &y)) in outputs.iter().zip(targets).enumerate() {
            let e = f.to_f64() - y;
            data_loss += e * e;
            dout[b] = T::from_f64(2.0 * e);
        }
        let mut grads = vec![T::ZERO; self.params.len()];
        self.backward(&cache, mode, &dout, &mut grads);
        let lambda = self.cfg.lambda;
        if lambda > 0.0 {
            let two_l = T::from_f64(2.0 * lambda);
            for s in self.penalized() {
                let r = s.offset..s.offset + s.len;
                for (g, &p) in grads[r.clone()].iter_mut().zip(&self.params[r]) {
                    *g += two_l * p;
                }
            }
        }
        let reg = self.penalty_norm();
        Ok(LossGrad { loss: data_loss + lambda * reg, data_loss, outputs, grads, stats })
    }

    /// Folds batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &BatchStats<T>) {
        let m = T::from_f64(self.cfg.bn_momentum);
        let one_m = T::from_f64(1.0 - self.cfg.bn_momentum);
        let n = stats.count as f64;
        let unbias = T::from_f64(if n > 1.0 { n / (n - 1.0) } else { 1.0 });
        for u in 0..self.units.len() {
            for c in 0..self.units[u].cout {
                let rm = &mut self.running_mean[u][c];
                *rm = m * *rm + one_m * stats.mean[u][c];
                let rv = &mut self.running_var[u][c];
                *rv = m * *rv + one_m * stats.var[u][c] * unbias;
            }
        }
    }

    /// One bias-corrected ADAM update.
    pub fn adam_step(&mut self, grads: &[T]) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::LengthMismatch(self.params.len(), grads.len()));
        }
        let c = &self.cfg;
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let (b1, b2) = (c.adam_beta1, c.adam_beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let (tb1, tb1c, tb2, tb2c) = (T::from_f64(b1), T::from_f64(1.0 - b1), T::from_f64(b2), T::from_f64(1.0 - b2));
        let lr = c.learning_rate;
        let eps = c.adam_eps;
        for i in 0..grads.len() {
            let g = grads[i];
            let m = tb1 * self.adam.m[i] + tb1c * g;
            let v = tb2 * self.adam.v[i] + tb2c * g * g;
            self.adam.m[i] = m;
            self.adam.v[i] = v;
            let mh = m.to_f64() / bc1;
            let vh = v.to_f64() / bc2;
            self.params[i] -= T::from_f64(lr * mh / (vh.sqrt() + eps));
        }
        Ok(())
    }

    pub fn reset_optimizer(&mut self) {
        self.adam.m.fill(T::ZERO);
        self.adam.v.fill(T::ZERO);
        self.adam.step = 0;
    }

    fn run<R: Rng + ?Sized>(&self, inputs: &[f32], mode: Mode, rng: &mut R) -> (Vec<T>, Cache<T>, Option<BatchStats<T>>) {
        let cfg = &self.cfg;
        let batch = inputs.len() / cfg.input_len();
        let nu = cfg.units_per_block;
        let mut cache = Cache {
            batch,
            acts: Vec::with_capacity(cfg.n_blocks * (nu + 1)),
            xhat: Vec::with_capacity(self.units.len()),
            inv_std: Vec::with_capacity(self.units.len()),
            pool_arg: Vec::with_capacity(cfg.n_blocks),
            dense_in: Vec::with_capacity(3),
            dense_relu: Vec::with_capacity(2),
            masks: Vec::with_capacity(2),
        };
        let mut stats = mode.batch_stats().then(|| BatchStats { mean: Vec::new(), var: Vec::new(), count: 0 });

        let v0 = &self.vols[0];
        let c0 = cfg.input_channels;
        let mut act = vec![T::ZERO; batch * c0 * v0.plen];
        let [dx, dy, dz] = v0.dims;
        let in_len = cfg.input_len();
        for b in 0..batch {
            let s = &inputs[b * in_len..(b + 1) * in_len];
            let a = &mut act[b * c0 * v0.plen..(b + 1) * c0 * v0.plen];
            for z in 0..dz {
                for y in 0..dy {
                    for x in 0..dx {
                        let src = ((z * dy + y) * dx + x) * c0;
                        let dst = v0.at(x, y, z);
                        for c in 0..c0 {
                            a[c * v0.plen + dst] = T::from_f64(s[src + c] as f64);
                        }
                    }
                }
            }
        }

        for block in 0..cfg.n_blocks {
            let vol = &self.vols[block];
            let plen = vol.plen;
            for k in 0..nu {
                let ui = block * nu + k;
                let u = &self.units[ui];
                let w = &self.params[u.w..u.w + u.cout * u.cin * 27];
                let mut x = vec![T::ZERO; batch * u.cout * plen];
                for b in 0..batch {
                    conv_forward(vol, u.cin, u.cout, w, &act[b * u.cin * plen..(b + 1) * u.cin * plen], &mut x[b * u.cout * plen..(b + 1) * u.cout * plen]);
                }
                let (mean, var) = if mode.batch_stats() {
                    let (m, v) = channel_moments(vol, u.cout, batch, &x);
                    let s = stats.as_mut().expect("train mode");
                    s.mean.push(m.iter().map(|&a| T::from_f64(a)).collect());
                    s.var.push(v.iter().map(|&a| T::from_f64(a)).collect());
                    s.count = batch * vol.voxels();
                    (m, v)
                } else {
                    (
                        self.running_mean[ui].iter().map(|a| a.to_f64()).collect(),
                        self.running_var[ui].iter().map(|a| a.to_f64()).collect(),
                    )
                };
                let inv: Vec<T> = var.iter().map(|&v| T::from_f64(1.0 / (v + cfg.bn_eps).sqrt())).collect();
                let mean: Vec<T> = mean.into_iter().map(T::from_f64).collect();
                let gamma = &self.params[u.gamma..u.gamma + u.cout];
                let beta = &self.params[u.beta..u.beta + u.cout];
                let mut out = vec![T::ZERO; batch * u.cout * plen];
                for b in 0..batch {
                    for c in 0..u.cout {
                        let o = (b * u.cout + c) * plen;
                        for &r in &vol.rows {
                            for i in o + r..o + r + vol.dims[0] {
                                let xh = (x[i] - mean[c]) * inv[c];
                                x[i] = xh;
                                let y = gamma[c] * xh + beta[c];
                                out[i] = if y > T::ZERO { y } else { T::ZERO };
                            }
                        }
                    }
                }
                cache.acts.push(std::mem::replace(&mut act, out));
                cache.xhat.push(x);
                cache.inv_std.push(inv);
            }
            let c = self.units[block * nu + nu - 1].cout;
            let vo = &self.vols[block + 1];
            let mut pooled = vec![T::ZERO; batch * c * vo.plen];
            let mut arg = vec![0u32; batch * c * vo.voxels()];
            let mut ai = 0;
            for bc in 0..batch * c {
                let src = &act[bc * plen..(bc + 1) * plen];
                let dst = &mut pooled[bc * vo.plen..(bc + 1) * vo.plen];
                for z in 0..vo.dims[2] {
                    for y in 0..vo.dims[1] {
                        for x in 0..vo.dims[0] {
                            let mut best = vol.at(2 * x, 2 * y, 2 * z);
                            for (ox, oy, oz) in POOL_OFFSETS {
                                let j = vol.at(2 * x + ox, 2 * y + oy, 2 * z + oz);
                                if src[j] > src[best] {
                                    best = j;
                                }
                            }
                            dst[vo.at(x, y, z)] = src[best];
                            arg[ai] = best as u32;
                            ai += 1;
                        }
                    }
                }
            }
            cache.acts.push(std::mem::replace(&mut act, pooled));
            cache.pool_arg.push(arg);
        }

        let vf = &self.vols[cfg.n_blocks];
        let cf = cfg.final_channels();
        let nflat = cf * vf.voxels();
        let mut h = vec![T::ZERO; batch * nflat];
        for b in 0..batch {
            let mut k = 0;
            for c in 0..cf {
                let a = &act[(b * cf + c) * vf.plen..];
                for &r in &vf.rows {
                    h[b * nflat + k..b * nflat + k + vf.dims[0]].copy_from_slice(&a[r..r + vf.dims[0]]);
                    k += vf.dims[0];
                }
            }
        }

        let drop = mode.dropout() && cfg.dropout_rate > 0.0;
        let keep_scale = T::from_f64(1.0 / (1.0 - cfg.dropout_rate));
        for (li, d) in self.dense.iter().enumerate() {
            let w = &self.params[d.w..d.w + d.nin * d.nout];
            let bias = &self.params[d.b..d.b + d.nout];
            let mut y = vec![T::ZERO; batch * d.nout];
            for b in 0..batch {
                let x = &h[b * d.nin..(b + 1) * d.nin];
                for o in 0..d.nout {
                    y[b * d.nout + o] = bias[o] + dot(&w[o * d.nin..(o + 1) * d.nin], x);
                }
            }
            if li + 1 < self.dense.len() {
                for v in &mut y {
                    if !(*v > T::ZERO) {
                        *v = T::ZERO;
                    }
                }
                let mut next = y.clone();
                let mut mask = Vec::new();
                if drop {
                    mask = (0..y.len())
                        .map(|_| if rng.random::<f64>() < cfg.dropout_rate { T::ZERO } else { keep_scale })
                        .collect();
                    for (v, m) in next.iter_mut().zip(&mask) {
                        *v *= *m;
                    }
                }
                cache.dense_relu.push(y);
                cache.masks.push(mask);
                cache.dense_in.push(std::mem::replace(&mut h, next));
            } else {
                cache.dense_in.push(std::mem::replace(&mut h, y));
            }
        }
        (h, cache, stats)
    }

    fn backward(&self, cache: &Cache<T>, mode: Mode, dout: &[T], grads: &mut [T]) {
        let cfg = &self.cfg;
        let batch = cache.batch;
        let mut g: Vec<T> = dout.to_vec();
        for li in (0..self.dense.len()).rev() {
            let d = &self.dense[li];
            if li + 1 < self.dense.len() {
                let relu = &cache.dense_relu[li];
                let mask = &cache.masks[li];
                for i in 0..g.len() {
                    if !mask.is_empty() {
                        g[i] *= mask[i];
                    }
                    if !(relu[i] > T::ZERO) {
                        g[i] = T::ZERO;
                    }
                }
            }
            let x = &cache.dense_in[li];
            let w = &self.params[d.w..d.w + d.nin * d.nout];
            let (gw, rest) = grads[d.w..].split_at_mut(d.nin * d.nout);
            let gb = &mut rest[d.b - d.w - d.nin * d.nout..][..d.nout];
            let mut gx = vec![T::ZERO; batch * d.nin];
            for b in 0..batch {
                let xb = &x[b * d.nin..(b + 1) * d.nin];
                let gxb = &mut gx[b * d.nin..(b + 1) * d.nin];
                for o in 0..d.nout {
                    let go = g[b * d.nout + o];
                    if go == T::ZERO {
                        continue;
                    }
                    gb[o] += go;
                    axpy(go, xb, &mut gw[o * d.nin..(o + 1) * d.nin]);
                    axpy(go, &w[o * d.nin..(o + 1) * d.nin], gxb);
                }
            }
            g = gx;
        }

        let vf = &self.vols[cfg.n_blocks];
        let cf = cfg.final_channels();
        let nflat = cf * vf.voxels();
        let mut ga = vec![T::ZERO; batch * cf * vf.plen];
        for b in 0..batch {
            let mut k = 0;
            for c in 0..cf {
                let a = &mut ga[(b * cf + c) * vf.plen..];
                for &r in &vf.rows {
                    a[r..r + vf.dims[0]].copy_from_slice(&g[b * nflat + k..b * nflat + k + vf.dims[0]]);
                    k += vf.dims[0];
                }
            }
        }

        let nu = cfg.units_per_block;
        for block in (0..cfg.n_blocks).rev() {
            let vol = &self.vols[block];
            let vo = &self.vols[block + 1];
            let plen = vol.plen;
            let c = self.units[block * nu + nu - 1].cout;
            let arg = &cache.pool_arg[block];
            let mut gin = vec![T::ZERO; batch * c * plen];
            let mut ai = 0;
            for bc in 0..batch * c {
                let src = &ga[bc * vo.plen..(bc + 1) * vo.plen];
                let dst = &mut gin[bc * plen..(bc + 1) * plen];
                for &r in &vo.rows {
                    for i in r..r + vo.dims[0] {
                        dst[arg[ai] as usize] += src[i];
                        ai += 1;
                    }
                }
            }
            ga = gin;
            for k in (0..nu).rev() {
                let ui = block * nu + k;
                let u = &self.units[ui];
                let out = &cache.acts[block * (nu + 1) + k + 1];
                let input = &cache.acts[block * (nu + 1) + k];
                let xhat = &cache.xhat[ui];
                let inv = &cache.inv_std[ui];
                let mut dy = ga;
                for i in 0..dy.len() {
                    if !(out[i] > T::ZERO) {
                        dy[i] = T::ZERO;
                    }
                }
                let (gpart, rest) = grads.split_at_mut(u.gamma);
                let (ggamma, rest) = rest.split_at_mut(u.cout);
                let gbeta = &mut rest[..u.cout];
                let gamma = &self.params[u.gamma..u.gamma + u.cout];
                let n = (batch * vol.voxels()) as f64;
                for c in 0..u.cout {
                    let mut sdy = 0.0f64;
                    let mut sdyx = 0.0f64;
                    for b in 0..batch {
                        let o = (b * u.cout + c) * plen;
                        for &r in &vol.rows {
                            for i in o + r..o + r + vol.dims[0] {
                                sdy += dy[i].to_f64();
                                sdyx += (dy[i] * xhat[i]).to_f64();
                            }
                        }
                    }
                    ggamma[c] += T::from_f64(sdyx);
                    gbeta[c] += T::from_f64(sdy);
                    let scale = gamma[c] * inv[c];
                    let (mdy, mdyx) = (T::from_f64(sdy / n), T::from_f64(sdyx / n));
                    for b in 0..batch {
                        let o = (b * u.cout + c) * plen;
                        for &r in &vol.rows {
                            for i in o + r..o + r + vol.dims[0] {
                                dy[i] = if mode.batch_stats() { scale * (dy[i] - mdy - xhat[i] * mdyx) } else { scale * dy[i] };
                            }
                        }
                    }
                }
                let gw = &mut gpart[u.w..u.w + u.cout * u.cin * 27];
                let w = &self.params[u.w..u.w + u.cout * u.cin * 27];
                let need_input_grad = ui > 0;
                let mut gprev = if need_input_grad { vec![T::ZERO; batch * u.cin * plen] } else { Vec::new() };
                for b in 0..batch {
                    let gx = &dy[b * u.cout * plen..(b + 1) * u.cout * plen];
                    let inp = &input[b * u.cin * plen..(b + 1) * u.cin * plen];
                    conv_weight_grad(vol, u.cin, u.cout, gx, inp, gw);
                    if need_input_grad {
                        conv_input_grad(vol, u.cin, u.cout, w, gx, &mut gprev[b * u.cin * plen..(b + 1) * u.cin * plen]);
                    }
                }
                ga = gprev;
            }
        }
    }
}

const POOL_OFFSETS: [(usize, usize, usize); 7] = [(1, 0, 0), (0, 1, 0), (1, 1, 0), (0, 0, 1), (1, 0, 1), (0, 1, 1), (1, 1, 1)];

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::ZERO; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        for j in 0..4 {
            acc[j] += a[4 * i + j] * b[4 * i + j];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..n {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

fn channel_moments<T: Real>(vol: &Vol, channels: usize, batch: usize, x: &[T]) -> (Vec<f64>, Vec<f64>) {
    let plen = vol.plen;
    let n = (batch * vol.voxels()) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for c in 0..channels {
        let mut s = 0.0;
        for b in 0..batch {
            let o = (b * channels + c) * plen;
            for &r in &vol.rows {
                for v in &x[o + r..o + r + vol.dims[0]] {
                    s += v.to_f64();
                }
            }
        }
        let m = s / n;
        let mut q = 0.0;
        for b in 0..batch {
            let o = (b * channels + c) * plen;
            for &r in &vol.rows {
                for v in &x[o + r..o + r + vol.dims[0]] {
                    let d = v.to_f64() - m;
                    q += d * d;
                }
            }
        }
        mean[c] = m;
        var[c] = q / n;
    }
    (mean, var)
}

fn conv_forward<T: Real>(vol: &Vol, cin: usize, cout: usize, w: &[T], input: &[T], out: &mut [T]) {
    let plen = vol.plen;
    let (s, e) = (vol.start, vol.end);
    let n = e - s;
    for co in 0..cout {
        let o = &mut out[co * plen..(co + 1) * plen];
        let dst = &mut o[s..e];
        for ci in 0..cin {
            let inp = &input[ci * plen..(ci + 1) * plen];
            let wk = &w[(co * cin + ci) * 27..(co * cin + ci + 1) * 27];
            for dz in -1..=1isize {
                for dy in -1..=1isize {
                    let kb = ((dz + 1) * 9 + (dy + 1) * 3) as usize;
                    let (w0, w1, w2) = (wk[kb], wk[kb + 1], wk[kb + 2]);
                    let base = (s as isize + vol.row_offset(dy, dz)) as usize;
                    let src = &inp[base - 1..base + n + 1];
                    let (s0, s1, s2) = (&src[..n], &src[1..n + 1], &src[2..n + 2]);
                    for i in 0..n {
                        dst[i] += w0 * s0[i] + w1 * s1[i] + w2 * s2[i];
                    }
                }
            }
        }
        for &p in &vol.pads {
            o[p] = T::ZERO;
        }
    }
}

fn conv_weight_grad<T: Real>(vol: &Vol, cin: usize, cout: usize, gout: &[T], input: &[T], gw: &mut [T]) {
    let plen = vol.plen;
    let (s, e) = (vol.start, vol.end);
    let n = e - s;
    for co in 0..cout {
        let g = &gout[co * plen + s..co * plen + e];
        for ci in 0..cin {
            let inp = &input[ci * plen..(ci + 1) * plen];
            let gk = &mut gw[(co * cin + ci) * 27..(co * cin + ci + 1) * 27];
            for dz in -1..=1isize {
                for dy in -1..=1isize {
                    let kb = ((dz + 1) * 9 + (dy + 1) * 3) as usize;
                    let base = (s as isize + vol.row_offset(dy, dz)) as usize;
                    let src = &inp[base - 1..base + n + 1];
                    let (s0, s1, s2) = (&src[..n], &src[1..n + 1], &src[2..n + 2]);
                    let (mut a0, mut a1, mut a2) = (T::ZERO, T::ZERO, T::ZERO);
                    for i in 0..n {
                        a0 += g[i] * s0[i];
                        a1 += g[i] * s1[i];
                        a2 += g[i] * s2[i];
                    }
                    gk[kb] += a0;
                    gk[kb + 1] += a1;
                    gk[kb + 2] += a2;
                }
            }
        }
    }
}

fn conv_input_grad<T: Real>(vol: &Vol, cin: usize, cout: usize, w: &[T], gout: &[T], gin: &mut [T]) {
    let plen = vol.plen;
    let (s, e) = (vol.start, vol.end);
    let n = e - s;
    for ci in 0..cin {
        let gi = &mut gin[ci * plen..(ci + 1) * plen];
        let dst = &mut gi[s..e];
        for co in 0..cout {
            let g = &gout[co * plen..(co + 1) * plen];
            let wk = &w[(co * cin + ci) * 27..(co * cin + ci + 1) * 27];
            for dz in -1..=1isize {
                for dy in -1..=1isize {
                    let kb = ((dz + 1) * 9 + (dy + 1) * 3) as usize;
                    let (wm, w0, wp) = (wk[kb], wk[kb + 1], wk[kb + 2]);
                    let base = (s as isize - vol.row_offset(dy, dz)) as usize;
                    let src = &g[base - 1..base + n + 1];
                    let (t0, t1, t2) = (&src[..n], &src[1..n + 1], &src[2..n + 2]);
                    for i in 0..n {
                        dst[i] += wp * t0[i] + w0 * t1[i] + wm * t2[i];
                    }
                }
            }
        }
        for &p in &vol.pads {
            gi[p] = T::ZERO;
        }
    }
}
