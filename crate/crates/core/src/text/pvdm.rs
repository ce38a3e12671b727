//! Distributed-memory paragraph vectors trained with negative sampling.
//!
//! Every position of a document is a training example: the hidden vector is
//! the document vector plus the mean of the surrounding context word vectors,
//! and it has to score the centre word above `negative` noise words drawn
//! from the unigram distribution raised to 0.75. The document vector receives
//! the full hidden-layer gradient, each context word `1 / |context|` of it.

use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::vocab::Vocabulary;
use super::TextError;
use crate::persist::{self, Matrix, PersistError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// One thread, bit-reproducible for a fixed seed.
    #[default]
    Deterministic,
    /// Lock-free updates from all rayon workers. Faster, not reproducible.
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvdmConfig {
    pub dim: usize,
    /// Word vector size. Word and document vectors are summed in the hidden
    /// layer, so this must equal `dim`.
    pub word_dim: usize,
    /// Context words taken on each side of the centre word.
    pub window: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub min_learning_rate: f32,
    pub negative: usize,
    pub min_count: u64,
    pub seed: u64,
    /// Gradient passes used when inferring a vector for unseen text.
    pub infer_steps: usize,
    #[serde(default)]
    pub mode: TrainMode,
}

impl Default for PvdmConfig {
    fn default() -> Self {
        PvdmConfig {
            dim: 256,
            word_dim: 256,
            window: 5,
            epochs: 20,
            learning_rate: 0.025,
            min_learning_rate: 0.0001,
            negative: 5,
            min_count: 1,
            seed: 1,
            infer_steps: 50,
            mode: TrainMode::Deterministic,
        }
    }
}

impl PvdmConfig {
    /// Defaults for the 256-d title model.
    pub fn titles() -> Self {
        Self::default().with_dim(256)
    }

    /// Defaults for the 128-d reply model.
    pub fn replies() -> Self {
        Self::default().with_dim(128)
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self.word_dim = dim;
        self
    }

    pub fn validate(&self) -> Result<(), TextError> {
        let bad = |m: &str| Err(TextError::InvalidConfig(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        if self.word_dim != self.dim {
            return bad("word_dim must equal dim (context and document vectors share the hidden layer)");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !(self.min_learning_rate >= 0.0) {
            return bad("learning rates must be positive");
        }
        if self.min_count == 0 {
            return bad("min_count must be at least 1");
        }
        Ok(())
    }
}

/// Cumulative unigram^0.75 distribution for drawing noise words.
#[derive(Debug, Clone, PartialEq, Default)]
struct NoiseTable {
    cdf: Vec<f64>,
}

impl NoiseTable {
    fn new(freqs: &[u64]) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = freqs
            .iter()
            .map(|&f| {
                acc += (f as f64).powf(0.75);
                acc
            })
            .collect();
        if acc > 0.0 {
            for c in &mut cdf {
                *c /= acc;
            }
        }
        NoiseTable { cdf }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.gen();
        (self.cdf.partition_point(|&c| c <= u)).min(self.cdf.len() - 1) as u32
    }
}

/// Matrix of f32 stored as atomics so that parallel workers can update it
/// without locks. Relaxed loads and stores compile to plain moves.
struct SharedMatrix {
    cols: usize,
    data: Vec<AtomicU32>,
}

impl SharedMatrix {
    fn from_matrix(m: &Matrix) -> Self {
        SharedMatrix {
            cols: m.cols(),
            data: m.as_slice().iter().map(|v| AtomicU32::new(v.to_bits())).collect(),
        }
    }

    fn into_matrix(self) -> Matrix {
        let rows = self.data.len().checked_div(self.cols).unwrap_or(0);
        Matrix::from_vec(
            rows,
            self.cols,
            self.data.into_iter().map(|a| f32::from_bits(a.into_inner())).collect(),
        )
    }

    fn cell(&self, row: usize, col: usize) -> &AtomicU32 {
        &self.data[row * self.cols + col]
    }

    fn load_row(&self, row: usize, out: &mut [f32]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = f32::from_bits(self.cell(row, j).load(Ordering::Relaxed));
        }
    }

    fn add_row(&self, row: usize, out: &mut [f32]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o += f32::from_bits(self.cell(row, j).load(Ordering::Relaxed));
        }
    }

    fn axpy(&self, row: usize, alpha: f32, v: &[f32]) {
        for (j, x) in v.iter().enumerate() {
            let c = self.cell(row, j);
            let cur = f32::from_bits(c.load(Ordering::Relaxed));
            c.store((cur + alpha * x).to_bits(), Ordering::Relaxed);
        }
    }
}

/// Read-only or updatable view of the word and output layers.
enum Layers<'a> {
    Shared {
        words: &'a SharedMatrix,
        output: &'a SharedMatrix,
    },
    Frozen {
        words: &'a Matrix,
        output: &'a Matrix,
    },
}

impl Layers<'_> {
    fn add_word(&self, id: u32, out: &mut [f32]) {
        match self {
            Layers::Shared { words, .. } => words.add_row(id as usize, out),
            Layers::Frozen { words, .. } => {
                for (o, w) in out.iter_mut().zip(words.row(id as usize)) {
                    *o += w;
                }
            }
        }
    }

    fn load_output(&self, id: u32, out: &mut [f32]) {
        match self {
            Layers::Shared { output, .. } => output.load_row(id as usize, out),
            Layers::Frozen { output, .. } => out.copy_from_slice(output.row(id as usize)),
        }
    }
}

struct Scratch {
    hidden: Vec<f32>,
    grad: Vec<f32>,
    out: Vec<f32>,
    context: Vec<u32>,
}

impl Scratch {
    fn new(dim: usize) -> Self {
        Scratch {
            hidden: vec![0.0; dim],
            grad: vec![0.0; dim],
            out: vec![0.0; dim],
            context: Vec::new(),
        }
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `-ln(sigmoid(x))`, stable for large |x|.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

struct Kernel<'a> {
    layers: Layers<'a>,
    noise: &'a NoiseTable,
    window: usize,
    negative: usize,
}

impl Kernel<'_> {
    /// One pass over every position of `ids`, updating `doc_vec` in place.
    /// Returns the summed loss and the number of positions.
    fn train_doc<R: Rng>(
        &self,
        doc_vec: &mut [f32],
        ids: &[u32],
        lr: f32,
        rng: &mut R,
        s: &mut Scratch,
    ) -> (f64, usize) {
        let mut loss = 0.0;
        for pos in 0..ids.len() {
            loss += self.step(doc_vec, ids, pos, lr, rng, s);
        }
        (loss, ids.len())
    }

    fn step<R: Rng>(&self, doc_vec: &mut [f32], ids: &[u32], pos: usize, lr: f32, rng: &mut R, s: &mut Scratch) -> f64 {
        let lo = pos.saturating_sub(self.window);
        let hi = (pos + self.window + 1).min(ids.len());
        s.context.clear();
        s.context.extend((lo..hi).filter(|&i| i != pos).map(|i| ids[i]));

        s.hidden.iter_mut().for_each(|h| *h = 0.0);
        for &c in &s.context {
            self.layers.add_word(c, &mut s.hidden);
        }
        let inv = if s.context.is_empty() {
            0.0
        } else {
            1.0 / s.context.len() as f32
        };
        for (h, d) in s.hidden.iter_mut().zip(doc_vec.iter()) {
            *h = *h * inv + d;
        }
        s.grad.iter_mut().for_each(|g| *g = 0.0);

        let center = ids[pos];
        let mut loss = 0.0;
        for k in 0..=self.negative {
            let (target, label) = if k == 0 {
                (center, 1.0f32)
            } else {
                let t = self.noise.sample(rng);
                if t == center {
                    continue;
                }
                (t, 0.0)
            };
            self.layers.load_output(target, &mut s.out);
            let score = dot(&s.hidden, &s.out);
            loss += if label > 0.0 {
                neg_log_sigmoid(score as f64)
            } else {
                neg_log_sigmoid(-score as f64)
            };
            let g = (label - sigmoid(score)) * lr;
            for (gr, o) in s.grad.iter_mut().zip(&s.out) {
                *gr += g * o;
            }
            if let Layers::Shared { output, .. } = &self.layers {
                output.axpy(target as usize, g, &s.hidden);
            }
        }

        for (d, g) in doc_vec.iter_mut().zip(&s.grad) {
            *d += g;
        }
        if let Layers::Shared { words, .. } = &self.layers {
            for &c in &s.context {
                words.axpy(c as usize, inv, &s.grad);
            }
        }
        loss
    }
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let scale = 1.0 / cols as f32;
    let data = (0..rows * cols).map(|_| (rng.gen::<f32>() - 0.5) * scale).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Trained paragraph-vector model.
#[derive(Debug, Clone, PartialEq)]
pub struct PvdmModel {
    config: PvdmConfig,
    vocab: Vocabulary,
    word_vectors: Matrix,
    output_vectors: Matrix,
    doc_vectors: Matrix,
    doc_ids: Vec<String>,
    epoch_losses: Vec<f64>,
    noise: NoiseTable,
}

/// Trains document vectors for `docs`, given as `(doc_id, tokens)`.
///
/// A document with fewer than `window + 1` in-vocabulary tokens yields no
/// training windows; it keeps its random initial vector and a warning is
/// logged.
pub fn train_pvdm<S: AsRef<str>>(docs: &[(String, Vec<S>)], config: &PvdmConfig) -> Result<PvdmModel, TextError> {
    config.validate()?;
    if docs.is_empty() {
        return Err(TextError::EmptyCorpus);
    }
    let mut seen = std::collections::HashSet::new();
    for (id, _) in docs {
        if !seen.insert(id.as_str()) {
            return Err(TextError::DuplicateDocId(id.clone()));
        }
    }

    let vocab = Vocabulary::build(
        docs.iter().flat_map(|(_, toks)| toks.iter().map(|t| t.as_ref())),
        config.min_count,
    )?;
    let encoded: Vec<Vec<u32>> = docs.iter().map(|(_, toks)| vocab.encode(toks)).collect();
    let trainable: Vec<usize> = encoded
        .iter()
        .enumerate()
        .filter(|(_, ids)| ids.len() > config.window)
        .map(|(i, _)| i)
        .collect();
    let skipped = docs.len() - trainable.len();
    if trainable.is_empty() {
        return Err(TextError::NoTrainingWindows);
    }
    if skipped > 0 {
        log::warn!(
            "{skipped} of {} documents have fewer than {} known tokens and keep random vectors",
            docs.len(),
            config.window + 1
        );
    }

    let dim = config.dim;
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let doc_init = random_matrix(docs.len(), dim, &mut init_rng);
    let word_init = random_matrix(vocab.len(), dim, &mut init_rng);
    let words = SharedMatrix::from_matrix(&word_init);
    let output = SharedMatrix::from_matrix(&Matrix::zeros(vocab.len(), dim));
    let doc_store = SharedMatrix::from_matrix(&doc_init);
    let noise = NoiseTable::new(vocab.frequencies());

    let kernel = Kernel {
        layers: Layers::Shared {
            words: &words,
            output: &output,
        },
        noise: &noise,
        window: config.window,
        negative: config.negative,
    };

    let words_per_epoch: u64 = trainable.iter().map(|&i| encoded[i].len() as u64).sum();
    let total_words = (words_per_epoch * config.epochs as u64).max(1);
    let processed = AtomicU64::new(0);
    let lr_at = |done: u64| -> f32 {
        let progress = done as f32 / total_words as f32;
        (config.learning_rate * (1.0 - progress)).max(config.min_learning_rate)
    };

    let run_chunk = |chunk: &[usize], rng: &mut ChaCha8Rng| -> (f64, usize) {
        let mut s = Scratch::new(dim);
        let mut doc_vec = vec![0.0f32; dim];
        let (mut loss, mut n) = (0.0, 0);
        for &d in chunk {
            let lr = lr_at(processed.load(Ordering::Relaxed));
            doc_store.load_row(d, &mut doc_vec);
            let (l, c) = kernel.train_doc(&mut doc_vec, &encoded[d], lr, rng, &mut s);
            for (j, v) in doc_vec.iter().enumerate() {
                doc_store.cell(d, j).store(v.to_bits(), Ordering::Relaxed);
            }
            processed.fetch_add(c as u64, Ordering::Relaxed);
            loss += l;
            n += c;
        }
        (loss, n)
    };

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut order = trainable.clone();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, epoch as u64 + 1, 0));
        order.shuffle(&mut rng);
        let (loss, n) = match config.mode {
            TrainMode::Deterministic => run_chunk(&order, &mut rng),
            TrainMode::Parallel => {
                let chunk_len = (order.len() / (rayon::current_num_threads() * 4)).max(1);
                order
                    .par_chunks(chunk_len)
                    .enumerate()
                    .map(|(ci, chunk)| {
                        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, epoch as u64 + 1, ci as u64 + 1));
                        run_chunk(chunk, &mut rng)
                    })
                    .reduce(|| (0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
            }
        };
        let mean = loss / n.max(1) as f64;
        if !mean.is_finite() {
            return Err(TextError::Diverged { epoch });
        }
        log::debug!("pvdm epoch {epoch}: mean loss {mean:.5}");
        epoch_losses.push(mean);
    }

    Ok(PvdmModel {
        config: config.clone(),
        vocab,
        word_vectors: words.into_matrix(),
        output_vectors: output.into_matrix(),
        doc_vectors: doc_store.into_matrix(),
        doc_ids: docs.iter().map(|(id, _)| id.clone()).collect(),
        epoch_losses,
        noise,
    })
}

#[derive(Serialize, Deserialize)]
struct PvdmManifest {
    dim: usize,
    word_dim: usize,
    seed: u64,
    vocab_size: usize,
    documents: usize,
    config: PvdmConfig,
    epoch_losses: Vec<f64>,
}

impl PvdmModel {
    pub const FILES: [&'static str; 6] = [
        "vocab.txt",
        "vectors.bin",
        "words.bin",
        "output.bin",
        "doc_ids.txt",
        "manifest",
    ];

    pub fn config(&self) -> &PvdmConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_vectors(&self) -> &Matrix {
        &self.doc_vectors
    }

    pub fn word_vectors(&self) -> &Matrix {
        &self.word_vectors
    }

    pub fn doc_vector(&self, row: usize) -> &[f32] {
        self.doc_vectors.row(row)
    }

    /// Mean training loss of each epoch, in order.
    pub fn epoch_losses(&self) -> &[f64] {
        &self.epoch_losses
    }

    /// Fits a fresh document vector for `tokens` with the word and output
    /// layers frozen, using `steps` passes over the text. The starting
    /// vector and the noise draws come from `seed`.
    pub fn infer_vector<S: AsRef<str>>(&self, tokens: &[S], steps: usize, seed: u64) -> Result<Vec<f32>, TextError> {
        if tokens.is_empty() {
            return Err(TextError::EmptyQuery);
        }
        let ids = self.vocab.encode(tokens);
        if ids.is_empty() {
            return Err(TextError::NoKnownTokens);
        }
        let dim = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vec = random_matrix(1, dim, &mut rng).row(0).to_vec();
        let kernel = Kernel {
            layers: Layers::Frozen {
                words: &self.word_vectors,
                output: &self.output_vectors,
            },
            noise: &self.noise,
            window: self.config.window,
            negative: self.config.negative,
        };
        let mut s = Scratch::new(dim);
        let steps = steps.max(1);
        let (lr0, lr_min) = (self.config.learning_rate, self.config.min_learning_rate);
        for step in 0..steps {
            let lr = (lr0 - (lr0 - lr_min) * step as f32 / steps as f32).max(lr_min);
            kernel.train_doc(&mut vec, &ids, lr, &mut rng, &mut s);
        }
        Ok(vec)
    }

    /// [`PvdmModel::infer_vector`] with the configured step count and seed.
    pub fn infer<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<f32>, TextError> {
        self.infer_vector(tokens, self.config.infer_steps, self.config.seed)
    }

    pub fn save(&self, dir: &Path) -> Result<(), PersistError> {
        persist::write_file(dir, "vocab.txt", self.vocab.to_text().as_bytes())?;
        persist::write_file(dir, "vectors.bin", &self.doc_vectors.to_bytes())?;
        persist::write_file(dir, "words.bin", &self.word_vectors.to_bytes())?;
        persist::write_file(dir, "output.bin", &self.output_vectors.to_bytes())?;
        persist::write_file(dir, "doc_ids.txt", persist::lines_to_text(&self.doc_ids).as_bytes())?;
        let manifest = PvdmManifest {
            dim: self.config.dim,
            word_dim: self.config.word_dim,
            seed: self.config.seed,
            vocab_size: self.vocab.len(),
            documents: self.doc_ids.len(),
            config: self.config.clone(),
            epoch_losses: self.epoch_losses.clone(),
        };
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        persist::write_file(dir, "manifest", &json)
    }

    pub fn load(dir: &Path) -> Result<Self, PersistError> {
        let manifest: PvdmManifest = serde_json::from_slice(&persist::read_file(dir, "manifest")?)
            .map_err(|e| PersistError::corrupt("manifest", e.to_string()))?;
        let config = manifest.config;
        config
            .validate()
            .map_err(|e| PersistError::corrupt("manifest", e.to_string()))?;
        let vocab = Vocabulary::from_text(&persist::read_text(dir, "vocab.txt")?, config.min_count)
            .map_err(|e| PersistError::corrupt("vocab.txt", e.to_string()))?;
        let doc_vectors = Matrix::from_bytes(&persist::read_file(dir, "vectors.bin")?, "vectors.bin")?;
        let word_vectors = Matrix::from_bytes(&persist::read_file(dir, "words.bin")?, "words.bin")?;
        let output_vectors = Matrix::from_bytes(&persist::read_file(dir, "output.bin")?, "output.bin")?;
        let doc_ids = persist::text_to_lines(&persist::read_text(dir, "doc_ids.txt")?);

        let dim = config.dim;
        if doc_vectors.cols() != dim || doc_vectors.rows() != doc_ids.len() {
            return Err(PersistError::corrupt(
                "vectors.bin",
                format!(
                    "shape {}x{} does not match {} doc ids of dim {dim}",
                    doc_vectors.rows(),
                    doc_vectors.cols(),
                    doc_ids.len()
                ),
            ));
        }
        for (m, name) in [(&word_vectors, "words.bin"), (&output_vectors, "output.bin")] {
            if m.cols() != dim || m.rows() != vocab.len() {
                return Err(PersistError::corrupt(name, "shape does not match vocabulary"));
            }
        }
        let noise = NoiseTable::new(vocab.frequencies());
        Ok(PvdmModel {
            config,
            vocab,
            word_vectors,
            output_vectors,
            doc_vectors,
            doc_ids,
            epoch_losses: manifest.epoch_losses,
            noise,
        })
    }
}
