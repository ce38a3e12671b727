//! Stage three: bilinear relational scoring of candidates, the response
//! distribution, MSE training with SGD and the final pick.
//!
//! For a query vector `q` (dim `d_q`) and a reply vector `r` (dim `d_r`):
//!
//! ```text
//! f_j = act(q^T W_j r + b_j)      j = 0..m
//! g   = act(f . s + c)
//! p   = softmax(g over the candidate set)
//! ```
//!
//! Arithmetic is done in f64; parameters are stored as f32 on disk.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::matching::CandidateSet;
use crate::persist::{self, ByteReader, PersistError};

pub const RANKER_MAGIC: &[u8; 4] = b"RNKR";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RankerError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty candidate set")]
    Empty,
    #[error("non-finite score")]
    NonFinite,
    #[error("one_hot targets need a true reply index")]
    MissingTrueReply,
    #[error("invalid targets: {0}")]
    InvalidTargets(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite in epoch {epoch}; lower the learning rate or set gradient_clip")]
    Diverged { epoch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Softplus,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
        }
    }

    /// Derivative; ReLU takes subgradient 0 at the kink.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => 1.0 / (1.0 + (-x).exp()),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Softplus => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Softplus),
            _ => None,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "softplus" => Ok(Activation::Softplus),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankerShape {
    /// Number of relational features.
    pub m: usize,
    pub d_q: usize,
    pub d_r: usize,
    pub activation: Activation,
}

impl Default for RankerShape {
    fn default() -> Self {
        RankerShape {
            m: 8,
            d_q: 256,
            d_r: 128,
            activation: Activation::Relu,
        }
    }
}

/// Trainable parameters. `w` holds the `m` matrices `W_j` back to back,
/// each `d_q x d_r` row-major. The same type carries gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct RankerParams {
    pub shape: RankerShape,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub s: Vec<f64>,
    pub c: f64,
}

impl RankerParams {
    pub fn zeros(shape: RankerShape) -> Self {
        RankerParams {
            shape,
            w: vec![0.0; shape.m * shape.d_q * shape.d_r],
            b: vec![0.0; shape.m],
            s: vec![0.0; shape.m],
            c: 0.0,
        }
    }

    /// `W` and `s` uniform in (-0.05, 0.05), biases zero.
    pub fn init(shape: RankerShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(shape);
        for v in p.w.iter_mut().chain(p.s.iter_mut()) {
            *v = rng.gen_range(-0.05..0.05);
        }
        p
    }

    pub fn validate(&self) -> Result<(), RankerError> {
        let RankerShape { m, d_q, d_r, .. } = self.shape;
        if m == 0 || d_q == 0 || d_r == 0 {
            return Err(RankerError::Shape("m, d_q and d_r must be positive".into()));
        }
        if self.w.len() != m * d_q * d_r || self.b.len() != m || self.s.len() != m {
            return Err(RankerError::Shape("parameter lengths do not match shape".into()));
        }
        if !self.values().all(f64::is_finite) {
            return Err(RankerError::NonFinite);
        }
        Ok(())
    }

    /// `W_j` as a row-major `d_q x d_r` slice.
    pub fn w_j(&self, j: usize) -> &[f64] {
        let n = self.shape.d_q * self.shape.d_r;
        &self.w[j * n..(j + 1) * n]
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.w
            .iter()
            .chain(&self.b)
            .chain(&self.s)
            .copied()
            .chain(std::iter::once(self.c))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.w
            .iter_mut()
            .chain(self.b.iter_mut())
            .chain(self.s.iter_mut())
            .chain(std::iter::once(&mut self.c))
    }

    pub fn num_params(&self) -> usize {
        self.w.len() + self.b.len() + self.s.len() + 1
    }

    /// Flat view in the order w, b, s, c.
    pub fn to_flat(&self) -> Vec<f64> {
        self.values().collect()
    }

    pub fn set_flat(&mut self, i: usize, v: f64) {
        if let Some(slot) = self.values_mut().nth(i) {
            *slot = v;
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Rounds every value to f32, matching what `ranker.bin` stores.
    pub fn to_storage_precision(&self) -> Self {
        let mut p = self.clone();
        for v in p.values_mut() {
            *v = *v as f32 as f64;
        }
        p
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let RankerShape {
            m,
            d_q,
            d_r,
            activation,
        } = self.shape;
        let mut out = Vec::with_capacity(17 + self.num_params() * 4);
        out.extend_from_slice(RANKER_MAGIC);
        for n in [m, d_q, d_r] {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        out.push(activation.code());
        for v in self.values() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], file: &str) -> Result<Self, PersistError> {
        let mut r = ByteReader::new(bytes, file);
        r.magic(RANKER_MAGIC)?;
        let m = r.u32()? as usize;
        let d_q = r.u32()? as usize;
        let d_r = r.u32()? as usize;
        let activation =
            Activation::from_code(r.u8()?).ok_or_else(|| PersistError::corrupt(file, "unknown activation code"))?;
        let shape = RankerShape {
            m,
            d_q,
            d_r,
            activation,
        };
        let widen = |v: Vec<f32>| v.into_iter().map(f64::from).collect::<Vec<_>>();
        let w = widen(r.f32s(m * d_q * d_r)?);
        let b = widen(r.f32s(m)?);
        let s = widen(r.f32s(m)?);
        let c = r.f32s(1)?[0] as f64;
        r.finish()?;
        let p = RankerParams { shape, w, b, s, c };
        p.validate().map_err(|e| PersistError::corrupt(file, e.to_string()))?;
        Ok(p)
    }

    pub fn save(&self, dir: &Path) -> Result<(), PersistError> {
        persist::write_file(dir, "ranker.bin", &self.to_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self, PersistError> {
        Self::from_bytes(&persist::read_file(dir, "ranker.bin")?, "ranker.bin")
    }
}

fn check_dims(params: &RankerParams, q: &[f32], r: &[f32]) -> Result<(), RankerError> {
    if q.len() != params.shape.d_q || r.len() != params.shape.d_r {
        return Err(RankerError::Shape(format!(
            "expected q of {} and r of {}, got {} and {}",
            params.shape.d_q,
            params.shape.d_r,
            q.len(),
            r.len()
        )));
    }
    Ok(())
}

/// `u_j = W_j^T q` for every j; each is a `d_r` vector.
fn project_query(params: &RankerParams, q: &[f32]) -> Vec<Vec<f64>> {
    let d_r = params.shape.d_r;
    (0..params.shape.m)
        .map(|j| {
            let w = params.w_j(j);
            let mut u = vec![0.0; d_r];
            for (a, &qa) in q.iter().enumerate() {
                let qa = qa as f64;
                if qa == 0.0 {
                    continue;
                }
                for (uk, wk) in u.iter_mut().zip(&w[a * d_r..(a + 1) * d_r]) {
                    *uk += qa * wk;
                }
            }
            u
        })
        .collect()
}

fn dot(u: &[f64], r: &[f32]) -> f64 {
    u.iter().zip(r).map(|(a, &b)| a * b as f64).sum()
}

/// Pre-activations `q^T W_j r + b_j`.
fn feature_inputs(params: &RankerParams, proj: &[Vec<f64>], r: &[f32]) -> Vec<f64> {
    proj.iter().zip(&params.b).map(|(u, b)| dot(u, r) + b).collect()
}

/// `f_j = act(q^T W_j r + b_j)` for j in `0..m`.
pub fn relational_features(q: &[f32], r: &[f32], params: &RankerParams) -> Result<Vec<f64>, RankerError> {
    check_dims(params, q, r)?;
    let act = params.shape.activation;
    let proj = project_query(params, q);
    Ok(feature_inputs(params, &proj, r)
        .into_iter()
        .map(|a| act.apply(a))
        .collect())
}

/// Candidate scores `g_i = act(f_i . s + c)`.
pub fn candidate_scores<R: AsRef<[f32]>>(
    q: &[f32],
    candidates: &[R],
    params: &RankerParams,
) -> Result<Vec<f64>, RankerError> {
    if candidates.is_empty() {
        return Err(RankerError::Empty);
    }
    let act = params.shape.activation;
    let proj = project_query(params, q);
    candidates
        .iter()
        .map(|r| {
            check_dims(params, q, r.as_ref())?;
            let z = feature_inputs(params, &proj, r.as_ref())
                .into_iter()
                .zip(&params.s)
                .map(|(a, s)| act.apply(a) * s)
                .sum::<f64>()
                + params.c;
            Ok(act.apply(z))
        })
        .collect()
}

/// Max-shifted softmax. The normalizer is summed in ascending order, so
/// permuting `g` permutes the output exactly.
pub fn response_distribution(g: &[f64]) -> Result<Vec<f64>, RankerError> {
    if g.is_empty() {
        return Err(RankerError::Empty);
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(RankerError::NonFinite);
    }
    let max = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = g.iter().map(|v| (v - max).exp()).collect();
    let mut sorted = exps.clone();
    sorted.sort_by(f64::total_cmp);
    let sum: f64 = sorted.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Normalized, zero-clamped likes minus dislikes.
    #[default]
    Likes,
    /// All mass on the known-good reply.
    OneHot,
}

impl std::str::FromStr for TargetMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "likes" => Ok(TargetMode::Likes),
            "one_hot" => Ok(TargetMode::OneHot),
            other => Err(format!("unknown target mode `{other}`")),
        }
    }
}

/// `max(net_i, 0) / sum_k max(net_k, 0)`, uniform when nothing is positive.
pub fn likes_targets(net_scores: &[i64]) -> Vec<f64> {
    let clamped: Vec<f64> = net_scores.iter().map(|&n| n.max(0) as f64).collect();
    let total: f64 = clamped.iter().sum();
    if total == 0.0 {
        let n = net_scores.len() as f64;
        return vec![1.0 / n; net_scores.len()];
    }
    clamped.into_iter().map(|c| c / total).collect()
}

pub fn one_hot_targets(len: usize, index: usize) -> Result<Vec<f64>, RankerError> {
    if index >= len {
        return Err(RankerError::InvalidTargets(format!("true index {index} out of {len}")));
    }
    let mut t = vec![0.0; len];
    t[index] = 1.0;
    Ok(t)
}

pub fn target_distribution(set: &CandidateSet, mode: TargetMode) -> Result<Vec<f64>, RankerError> {
    if set.candidates.is_empty() {
        return Err(RankerError::Empty);
    }
    match mode {
        TargetMode::Likes => Ok(likes_targets(
            &set.candidates.iter().map(|c| c.net_score).collect::<Vec<_>>(),
        )),
        TargetMode::OneHot => {
            let idx = set.true_reply_index.ok_or(RankerError::MissingTrueReply)?;
            one_hot_targets(set.candidates.len(), idx)
        }
    }
}

/// A query, its candidate reply vectors and the distribution the ranker
/// should reproduce.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingEpisode {
    pub query_vec: Vec<f32>,
    pub reply_vecs: Vec<Vec<f32>>,
    pub targets: Vec<f64>,
}

impl TrainingEpisode {
    pub fn new(query_vec: Vec<f32>, reply_vecs: Vec<Vec<f32>>, targets: Vec<f64>) -> Result<Self, RankerError> {
        if reply_vecs.is_empty() {
            return Err(RankerError::Empty);
        }
        if targets.len() != reply_vecs.len() {
            return Err(RankerError::InvalidTargets(format!(
                "{} targets for {} candidates",
                targets.len(),
                reply_vecs.len()
            )));
        }
        if targets.iter().any(|t| !(*t >= 0.0)) || (targets.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(RankerError::InvalidTargets(
                "targets must be a probability vector".into(),
            ));
        }
        Ok(TrainingEpisode {
            query_vec,
            reply_vecs,
            targets,
        })
    }

    pub fn from_candidates(set: &CandidateSet, mode: TargetMode) -> Result<Self, RankerError> {
        let targets = target_distribution(set, mode)?;
        Self::new(
            set.query_vec.clone(),
            set.candidates.iter().map(|c| c.reply_vec.clone()).collect(),
            targets,
        )
    }
}

/// Mean squared error between the response distribution and the targets.
pub fn mse_loss(episode: &TrainingEpisode, params: &RankerParams) -> Result<f64, RankerError> {
    let g = candidate_scores(&episode.query_vec, &episode.reply_vecs, params)?;
    let p = response_distribution(&g)?;
    let n = p.len() as f64;
    Ok(p.iter()
        .zip(&episode.targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Gradient with each `dL/dW_j` kept as the rank-one product `q v_j^T`.
struct FactoredGrad {
    q: Vec<f64>,
    v: Vec<Vec<f64>>,
    b: Vec<f64>,
    s: Vec<f64>,
    c: f64,
}

impl FactoredGrad {
    fn l2_norm(&self) -> f64 {
        let q2: f64 = self.q.iter().map(|x| x * x).sum();
        let v2: f64 = self.v.iter().flatten().map(|x| x * x).sum();
        let rest: f64 = self.b.iter().chain(&self.s).map(|x| x * x).sum::<f64>() + self.c * self.c;
        (q2 * v2 + rest).sqrt()
    }

    /// `params += alpha * self`.
    fn apply(&self, params: &mut RankerParams, alpha: f64) {
        let d_r = params.shape.d_r;
        let block = params.shape.d_q * d_r;
        for (j, vj) in self.v.iter().enumerate() {
            if vj.iter().all(|&x| x == 0.0) {
                continue;
            }
            let wj = &mut params.w[j * block..(j + 1) * block];
            for (a, &qa) in self.q.iter().enumerate() {
                let k = alpha * qa;
                if k == 0.0 {
                    continue;
                }
                for (w, vk) in wj[a * d_r..(a + 1) * d_r].iter_mut().zip(vj) {
                    *w += k * vk;
                }
            }
        }
        for (p, g) in params.b.iter_mut().zip(&self.b) {
            *p += alpha * g;
        }
        for (p, g) in params.s.iter_mut().zip(&self.s) {
            *p += alpha * g;
        }
        params.c += alpha * self.c;
    }
}

fn loss_and_factored_grad(
    episode: &TrainingEpisode,
    params: &RankerParams,
) -> Result<(f64, FactoredGrad), RankerError> {
    let q = &episode.query_vec;
    let rs = &episode.reply_vecs;
    if rs.is_empty() {
        return Err(RankerError::Empty);
    }
    let act = params.shape.activation;
    let (m, d_r) = (params.shape.m, params.shape.d_r);
    let proj = project_query(params, q);

    // forward
    let mut pre_f = Vec::with_capacity(rs.len());
    let mut feats = Vec::with_capacity(rs.len());
    let mut pre_g = Vec::with_capacity(rs.len());
    let mut g = Vec::with_capacity(rs.len());
    for r in rs {
        check_dims(params, q, r)?;
        let a = feature_inputs(params, &proj, r);
        let f: Vec<f64> = a.iter().map(|&x| act.apply(x)).collect();
        let z = f.iter().zip(&params.s).map(|(f, s)| f * s).sum::<f64>() + params.c;
        g.push(act.apply(z));
        pre_g.push(z);
        feats.push(f);
        pre_f.push(a);
    }
    let p = response_distribution(&g)?;
    let n = p.len() as f64;
    let loss = p
        .iter()
        .zip(&episode.targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n;

    // backward: dL/dp -> softmax -> g -> f -> W, b
    let dp: Vec<f64> = p.iter().zip(&episode.targets).map(|(p, t)| 2.0 * (p - t) / n).collect();
    let weighted: f64 = p.iter().zip(&dp).map(|(p, d)| p * d).sum();
    let mut grad = FactoredGrad {
        q: q.iter().map(|&x| x as f64).collect(),
        v: vec![vec![0.0; d_r]; m],
        b: vec![0.0; m],
        s: vec![0.0; m],
        c: 0.0,
    };
    for i in 0..rs.len() {
        let dg = p[i] * (dp[i] - weighted);
        let dz = dg * act.derivative(pre_g[i]);
        if dz == 0.0 {
            continue;
        }
        grad.c += dz;
        for j in 0..m {
            grad.s[j] += dz * feats[i][j];
            let da = dz * params.s[j] * act.derivative(pre_f[i][j]);
            if da == 0.0 {
                continue;
            }
            grad.b[j] += da;
            for (vk, &rk) in grad.v[j].iter_mut().zip(&rs[i]) {
                *vk += da * rk as f64;
            }
        }
    }
    Ok((loss, grad))
}

/// Loss and its exact gradient with respect to every parameter.
pub fn mse_loss_and_grad(episode: &TrainingEpisode, params: &RankerParams) -> Result<(f64, RankerParams), RankerError> {
    let (loss, factored) = loss_and_factored_grad(episode, params)?;
    let mut grad = RankerParams::zeros(params.shape);
    factored.apply(&mut grad, 1.0);
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub target_mode: TargetMode,
    /// Rescale each gradient to at most this L2 norm.
    pub gradient_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 30,
            seed: 1,
            target_mode: TargetMode::Likes,
            gradient_clip: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedRanker {
    pub params: RankerParams,
    /// Mean per-episode loss of each epoch, measured before each update.
    pub loss_history: Vec<f64>,
}

/// Plain per-episode SGD. Episode order is reshuffled every epoch from the
/// seed, so the result is fully determined by the inputs.
pub fn train_ranker(
    episodes: &[TrainingEpisode],
    shape: RankerShape,
    config: &TrainConfig,
) -> Result<TrainedRanker, RankerError> {
    if episodes.is_empty() {
        return Err(RankerError::Empty);
    }
    if !(config.learning_rate > 0.0) || config.epochs == 0 {
        return Err(RankerError::InvalidConfig(
            "learning_rate must be > 0 and epochs >= 1".into(),
        ));
    }
    if matches!(config.gradient_clip, Some(c) if !(c > 0.0)) {
        return Err(RankerError::InvalidConfig("gradient_clip must be > 0".into()));
    }
    let mut params = RankerParams::init(shape, config.seed);
    params.validate()?;
    let mut order: Vec<usize> = (0..episodes.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005E_ED0F_5EED);
    let mut loss_history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &e in &order {
            let (loss, grad) = loss_and_factored_grad(&episodes[e], &params)?;
            if !loss.is_finite() {
                return Err(RankerError::Diverged { epoch });
            }
            let mut step = config.learning_rate;
            if let Some(clip) = config.gradient_clip {
                let norm = grad.l2_norm();
                if norm > clip {
                    step *= clip / norm;
                }
            }
            grad.apply(&mut params, -step);
            total += loss;
        }
        if params.values().any(|v| !v.is_finite()) {
            return Err(RankerError::Diverged { epoch });
        }
        let mean = total / episodes.len() as f64;
        log::debug!("ranker epoch {epoch}: mean loss {mean:.6}");
        loss_history.push(mean);
    }
    Ok(TrainedRanker { params, loss_history })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    Argmax,
    #[default]
    Sample,
}

impl SelectionPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionPolicy::Argmax => "argmax",
            SelectionPolicy::Sample => "sample",
        }
    }
}

impl std::str::FromStr for SelectionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "argmax" => Ok(SelectionPolicy::Argmax),
            "sample" => Ok(SelectionPolicy::Sample),
            other => Err(format!("unknown policy `{other}`")),
        }
    }
}

/// Picks a candidate index. `Argmax` returns the lowest index with the
/// highest probability; `Sample` draws from `p^(1/temperature)`
/// renormalized, using a generator seeded with `seed`.
pub fn select_response(p: &[f64], policy: SelectionPolicy, temperature: f64, seed: u64) -> Result<usize, RankerError> {
    if p.is_empty() {
        return Err(RankerError::Empty);
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(RankerError::NonFinite);
    }
    match policy {
        SelectionPolicy::Argmax => {
            let mut best = 0;
            for (i, &v) in p.iter().enumerate() {
                if v > p[best] {
                    best = i;
                }
            }
            Ok(best)
        }
        SelectionPolicy::Sample => {
            if !(temperature > 0.0) || !temperature.is_finite() {
                return Err(RankerError::InvalidConfig("temperature must be > 0".into()));
            }
            let logits: Vec<f64> = p.iter().map(|&v| v.ln() / temperature).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(RankerError::InvalidTargets("all probabilities are zero".into()));
            }
            let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut u = ChaCha8Rng::seed_from_u64(seed).gen::<f64>() * total;
            let mut last_positive = 0;
            for (i, w) in weights.iter().enumerate() {
                if *w > 0.0 {
                    last_positive = i;
                    if u < *w {
                        return Ok(i);
                    }
                    u -= w;
                }
            }
            Ok(last_positive)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(m: usize, d_q: usize, d_r: usize, activation: Activation) -> RankerShape {
        RankerShape {
            m,
            d_q,
            d_r,
            activation,
        }
    }

    #[test]
    fn features_hand_values() {
        let mut p = RankerParams::zeros(shape(1, 2, 2, Activation::Relu));
        p.w = vec![0.0, 1.0, 0.0, 0.0];
        assert_eq!(relational_features(&[1.0, 0.0], &[0.0, 1.0], &p).unwrap(), vec![1.0]);

        let mut p = RankerParams::zeros(shape(1, 2, 2, Activation::Relu));
        p.b = vec![-1.0];
        assert_eq!(relational_features(&[1.0, 0.0], &[0.0, 1.0], &p).unwrap(), vec![0.0]);

        p.shape.activation = Activation::Softplus;
        let f = relational_features(&[1.0, 0.0], &[0.0, 1.0], &p).unwrap();
        assert!((f[0] - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert!((f[0] - 0.3133).abs() < 1e-4);

        assert!(relational_features(&[1.0], &[0.0, 1.0], &p).is_err());
    }

    #[test]
    fn scores_hand_values() {
        // choose W, b so that f = [1, 0]: W_0 picks q0*r1, W_1 is zero with b_1 = -1
        let mut p = RankerParams::zeros(shape(2, 2, 2, Activation::Relu));
        p.w = vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        p.b = vec![0.0, -1.0];
        p.s = vec![0.5, 2.0];
        p.c = 0.5;
        let g = candidate_scores(&[1.0, 0.0], &[vec![0.0, 1.0]], &p).unwrap();
        assert_eq!(g, vec![1.0]);

        let zero = RankerParams::zeros(shape(2, 2, 2, Activation::Relu));
        let g = candidate_scores(&[1.0, 0.5], &[vec![0.3, 1.0], vec![2.0, 1.0], vec![0.0, 0.0]], &zero).unwrap();
        assert_eq!(g, vec![0.0; 3]);
        assert!(candidate_scores::<Vec<f32>>(&[1.0, 0.5], &[], &zero).is_err());
    }

    #[test]
    fn softmax_values() {
        assert_eq!(response_distribution(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = response_distribution(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12 && (p[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(response_distribution(&[42.0]).unwrap(), vec![1.0]);
        assert!(response_distribution(&[f64::NAN]).is_err());
        assert!(response_distribution(&[]).is_err());
    }

    #[test]
    fn targets() {
        assert_eq!(likes_targets(&[3, 1, 0]), vec![0.75, 0.25, 0.0]);
        assert_eq!(likes_targets(&[-2, -5]), vec![0.5, 0.5]);
        assert_eq!(one_hot_targets(4, 2).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
        assert!(one_hot_targets(4, 4).is_err());
    }

    #[test]
    fn loss_values() {
        // p = [1, 0] is reachable in the limit only; check the formula on the
        // loss of a perfect one-candidate episode and a hand-built mismatch.
        let p = RankerParams::zeros(shape(1, 1, 1, Activation::Relu));
        let ep = TrainingEpisode::new(vec![1.0], vec![vec![1.0]], vec![1.0]).unwrap();
        let (loss, grad) = mse_loss_and_grad(&ep, &p).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.to_flat().iter().all(|&g| g == 0.0));

        let ep = TrainingEpisode::new(vec![1.0], vec![vec![1.0], vec![1.0]], vec![0.0, 1.0]).unwrap();
        // uniform p = [0.5, 0.5] against [0, 1]: (0.25 + 0.25) / 2
        assert_eq!(mse_loss(&ep, &p).unwrap(), 0.25);
    }

    #[test]
    fn episode_validation() {
        assert!(TrainingEpisode::new(vec![1.0], vec![vec![1.0]], vec![0.5]).is_err());
        assert!(TrainingEpisode::new(vec![1.0], vec![vec![1.0]], vec![0.5, 0.5]).is_err());
        assert!(TrainingEpisode::new(vec![1.0], vec![], vec![]).is_err());
    }

    #[test]
    fn argmax_lowest_index() {
        assert_eq!(
            select_response(&[0.1, 0.7, 0.2], SelectionPolicy::Argmax, 1.0, 0).unwrap(),
            1
        );
        assert_eq!(
            select_response(&[0.5, 0.5], SelectionPolicy::Argmax, 1.0, 0).unwrap(),
            0
        );
        assert!(select_response(&[], SelectionPolicy::Argmax, 1.0, 0).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let p = [0.3, 0.7];
        let a = select_response(&p, SelectionPolicy::Sample, 1.0, 42).unwrap();
        for _ in 0..5 {
            assert_eq!(select_response(&p, SelectionPolicy::Sample, 1.0, 42).unwrap(), a);
        }
        assert!(select_response(&p, SelectionPolicy::Sample, 0.0, 42).is_err());
        // zero-probability candidates are never drawn
        for seed in 0..200 {
            assert_ne!(
                select_response(&[0.0, 1.0], SelectionPolicy::Sample, 0.5, seed).unwrap(),
                0
            );
        }
    }

    fn frequencies(p: &[f64], temperature: f64, draws: u64) -> Vec<f64> {
        let mut counts = vec![0usize; p.len()];
        for seed in 0..draws {
            counts[select_response(p, SelectionPolicy::Sample, temperature, seed).unwrap()] += 1;
        }
        counts.iter().map(|&c| c as f64 / draws as f64).collect()
    }

    #[test]
    fn sampling_matches_distribution() {
        let p = [0.2, 0.5, 0.3];
        for (f, e) in frequencies(&p, 1.0, 10_000).iter().zip(p) {
            assert!((f - e).abs() < 0.02, "{f} vs {e}");
        }
    }

    #[test]
    fn temperature_sharpens_and_flattens() {
        let p = [0.2, 0.5, 0.3];
        // T = 0.5 samples from p^2 renormalized
        let total: f64 = p.iter().map(|x| x * x).sum();
        for (f, x) in frequencies(&p, 0.5, 10_000).iter().zip(p) {
            assert!((f - x * x / total).abs() < 0.02);
        }
        // a very high temperature is close to uniform
        for f in frequencies(&p, 1e6, 10_000) {
            assert!((f - 1.0 / 3.0).abs() < 0.02);
        }
    }

    #[test]
    fn softmax_permutation_is_exact() {
        let g = [0.3, -1.2, 4.0, 0.3000001, 2.5];
        let p = response_distribution(&g).unwrap();
        let perm = [4, 2, 0, 3, 1];
        let permuted: Vec<f64> = perm.iter().map(|&i| g[i]).collect();
        let q = response_distribution(&permuted).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(q[k], p[i]);
        }
    }

    #[test]
    fn ranker_bin_layout() {
        let p = RankerParams::init(shape(2, 3, 2, Activation::Softplus), 5);
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..4], b"RNKR");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(bytes[16], 1);
        assert_eq!(bytes.len(), 17 + (12 + 2 + 2 + 1) * 4);
        let back = RankerParams::from_bytes(&bytes, "ranker.bin").unwrap();
        assert_eq!(back, p.to_storage_precision());
        assert!(RankerParams::from_bytes(&bytes[..20], "ranker.bin").is_err());
    }

    #[test]
    fn init_ranges() {
        let p = RankerParams::init(shape(3, 4, 5, Activation::Relu), 9);
        assert!(p.w.iter().chain(&p.s).all(|v| v.abs() < 0.05));
        assert!(p.b.iter().all(|&v| v == 0.0) && p.c == 0.0);
        assert_eq!(p, RankerParams::init(shape(3, 4, 5, Activation::Relu), 9));
    }
}
