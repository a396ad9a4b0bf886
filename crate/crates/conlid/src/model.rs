//! Model parameters, the forward pass, and the binary model file format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::LabelIndex;
use crate::encoder::{self, EncoderConfig, Vocabulary};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Magic bytes at the start of every model file.
pub const MODEL_MAGIC: [u8; 4] = *b"CLID";
/// Format version this build reads and writes.
pub const MODEL_VERSION: u32 = 1;

/// Trainable parameters: one embedding table shared by words and hashed
/// n-grams, plus a single affine classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `(vocab_size + bucket) x dim` embedding rows.
    pub embeddings: Matrix,
    /// `num_classes x dim` head weights.
    pub head_weights: Matrix,
    /// `num_classes` bias terms.
    pub head_bias: Vec<f32>,
}

impl ModelParams {
    /// Seeded initialization: embeddings uniform in `[-1/dim, 1/dim]`, head
    /// weights and bias zero (so the first forward pass is uniform over
    /// classes).
    pub fn init(
        vocab_size: usize,
        bucket: usize,
        dim: usize,
        num_classes: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / dim as f32;
        let rows = vocab_size + bucket;
        let mut data = vec![0.0f32; rows * dim];
        for x in &mut data {
            *x = rng.random_range(-bound..=bound);
        }
        ModelParams {
            embeddings: Matrix::from_vec(rows, dim, data),
            head_weights: Matrix::zeros(num_classes, dim),
            head_bias: vec![0.0; num_classes],
        }
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.head_weights.rows()
    }
}

/// Numerically stable softmax: subtracts the maximum logit before
/// exponentiating, so shifting all logits by a constant leaves the output
/// unchanged.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Result of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Mean-pooled document embedding (unnormalized).
    pub embedding: Vec<f64>,
    /// Pre-softmax class scores.
    pub logits: Vec<f64>,
    /// Softmax distribution over classes.
    pub probs: Vec<f64>,
    /// Fraction of character n-grams unseen during training.
    pub unk_ngram_ratio: f64,
}

/// A trained classifier bundled with everything needed to featurize input.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: EncoderConfig,
    pub labels: LabelIndex,
    pub vocab: Vocabulary,
    pub params: ModelParams,
}

impl Model {
    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    /// Embeds `text` and scores it against every class. Dot products
    /// accumulate in double precision; the head consumes the unnormalized
    /// embedding.
    pub fn forward(&self, text: &str) -> Forward {
        let (embedding, unk_ngram_ratio) =
            encoder::encode(&self.params.embeddings, &self.vocab, &self.config, text);
        let logits = affine(&self.params, &embedding);
        let probs = softmax(&logits);
        Forward {
            embedding,
            logits,
            probs,
            unk_ngram_ratio,
        }
    }

    /// Serializes the model; the format round-trips bit-exactly through
    /// [`Model::load`].
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&MODEL_MAGIC)?;
        write_u32(w, MODEL_VERSION)?;

        let header = [
            self.config.dim,
            self.config.bucket,
            self.config.minn,
            self.config.maxn,
            self.num_classes(),
            self.vocab.len(),
            self.vocab.seen_ngram_count(),
        ];
        for v in header {
            write_u32(w, v as u32)?;
        }

        for label in self.labels.labels() {
            write_string(w, label)?;
        }
        for word in self.vocab.words() {
            write_string(w, word)?;
        }
        for gram in self.vocab.sorted_ngrams() {
            write_string(w, gram)?;
        }

        write_f32s(w, self.params.embeddings.data())?;
        write_f32s(w, self.params.head_weights.data())?;
        write_f32s(w, &self.params.head_bias)?;
        w.flush()
    }

    /// Reads a model written by [`Model::save`], validating the magic
    /// number, version, and section lengths.
    pub fn load(path: &Path) -> Result<Model> {
        let file = File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut r = BufReader::new(file);

        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if magic != MODEL_MAGIC {
            return Err(Error::ModelFormat {
                section: "magic".into(),
                detail: format!("expected {:?}, found {:?}", MODEL_MAGIC, magic),
            });
        }
        let version = read_u32(&mut r, "version")?;
        if version != MODEL_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: MODEL_VERSION,
            });
        }

        let dim = read_u32(&mut r, "header")? as usize;
        let bucket = read_u32(&mut r, "header")? as usize;
        let minn = read_u32(&mut r, "header")? as usize;
        let maxn = read_u32(&mut r, "header")? as usize;
        let num_classes = read_u32(&mut r, "header")? as usize;
        let vocab_size = read_u32(&mut r, "header")? as usize;
        let ngram_count = read_u32(&mut r, "header")? as usize;

        let mut labels = Vec::with_capacity(num_classes);
        for _ in 0..num_classes {
            labels.push(read_string(&mut r, "labels")?);
        }
        let mut words = Vec::with_capacity(vocab_size);
        for _ in 0..vocab_size {
            words.push(read_string(&mut r, "vocabulary")?);
        }
        let mut ngrams = std::collections::HashSet::with_capacity(ngram_count);
        for _ in 0..ngram_count {
            ngrams.insert(read_string(&mut r, "ngrams")?);
        }

        let emb = read_f32s(&mut r, (vocab_size + bucket) * dim, "embeddings")?;
        let head = read_f32s(&mut r, num_classes * dim, "head weights")?;
        let bias = read_f32s(&mut r, num_classes, "head bias")?;

        let label_index = LabelIndex::from_labels(labels.iter().cloned());
        if label_index.len() != num_classes
            || labels
                .iter()
                .enumerate()
                .any(|(i, l)| label_index.id(l) != Some(i))
        {
            return Err(Error::ModelFormat {
                section: "labels".into(),
                detail: "labels are not distinct and sorted".into(),
            });
        }

        Ok(Model {
            config: EncoderConfig {
                dim,
                minn,
                maxn,
                bucket,
                // Frequency filtering already happened when the stored
                // vocabulary was built, so the threshold is not persisted.
                min_count: 0,
                word_ngrams: 1,
            },
            labels: label_index,
            vocab: Vocabulary::from_parts(words, ngrams),
            params: ModelParams {
                embeddings: Matrix::from_vec(vocab_size + bucket, dim, emb),
                head_weights: Matrix::from_vec(num_classes, dim, head),
                head_bias: bias,
            },
        })
    }
}

/// Head scores for an embedding: `W e + b`, accumulated in `f64`.
pub fn affine(params: &ModelParams, embedding: &[f64]) -> Vec<f64> {
    let c = params.num_classes();
    let mut logits = Vec::with_capacity(c);
    for class in 0..c {
        let row = params.head_weights.row(class);
        let mut z = f64::from(params.head_bias[class]);
        for (&w, &e) in row.iter().zip(embedding) {
            z += f64::from(w) * e;
        }
        logits.push(z);
    }
    logits
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_string<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn write_f32s<W: Write>(w: &mut W, xs: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(xs.len().min(1 << 16) * 4);
    for chunk in xs.chunks(1 << 14) {
        buf.clear();
        for x in chunk {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], section: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::ModelFormat {
        section: section.into(),
        detail: e.to_string(),
    })
}

fn read_u32<R: Read>(r: &mut R, section: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, section)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_string<R: Read>(r: &mut R, section: &str) -> Result<String> {
    let len = read_u32(r, section)? as usize;
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf, section)?;
    String::from_utf8(buf).map_err(|e| Error::ModelFormat {
        section: section.into(),
        detail: e.to_string(),
    })
}

fn read_f32s<R: Read>(r: &mut R, n: usize, section: &str) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    read_exact(r, &mut bytes, section)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}
