use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{check_context, LanguageModel};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, RngStream};
use crate::TokenId;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Invariant(format!(
                "matrix data length {} != {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    fn random(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// New matrix holding the listed rows in order.
    pub fn select_rows(&self, rows: &[TokenId]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            if r as usize >= self.rows {
                return Err(Error::IdOutOfRange {
                    id: r,
                    vocab_size: self.rows,
                });
            }
            data.extend_from_slice(self.row(r as usize));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols: self.cols,
            data,
        })
    }

    /// `self · v`, one dot product per row.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Everything below the LM head: token embeddings and per-position mixing
/// weights over the last `window` context tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Trunk {
    embedding: Matrix,
    mixing: Matrix,
}

impl Trunk {
    pub fn new(embedding: Matrix, mixing: Matrix) -> Result<Self> {
        if embedding.cols() != mixing.cols() {
            return Err(Error::Invariant("embedding and mixing widths differ".into()));
        }
        Ok(Trunk { embedding, mixing })
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn window(&self) -> usize {
        self.mixing.rows()
    }

    pub fn embedding(&self) -> &Matrix {
        &self.embedding
    }

    pub fn mixing(&self) -> &Matrix {
        &self.mixing
    }

    pub fn param_count(&self) -> u64 {
        (self.embedding.len() + self.mixing.len()) as u64
    }

    /// `h = Σ_j mixing[j] ⊙ E[context[len-1-j]]` over the available positions.
    pub fn hidden(&self, context: &[TokenId]) -> Vec<f64> {
        let mut h = vec![0.0; self.dim()];
        for (j, &tok) in context.iter().rev().take(self.window()).enumerate() {
            let e = self.embedding.row(tok as usize);
            for ((hk, &mk), &ek) in h.iter_mut().zip(self.mixing.row(j)).zip(e) {
                *hk += mk * ek;
            }
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Ridge term added to the normal equations.
    pub ridge: f64,
    /// Multiplier applied to the fitted head.
    pub logit_scale: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            ridge: 1e-3,
            logit_scale: 10.0,
        }
    }
}

/// Linear next-token model: `logits = W · h(context)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHeadModel {
    trunk: Arc<Trunk>,
    head: Matrix,
}

impl LinearHeadModel {
    pub fn new(trunk: Trunk, head: Matrix) -> Result<Self> {
        if head.rows() != trunk.vocab_size() || head.cols() != trunk.dim() {
            return Err(Error::Invariant(format!(
                "head is {}x{}, expected {}x{}",
                head.rows(),
                head.cols(),
                trunk.vocab_size(),
                trunk.dim()
            )));
        }
        Ok(LinearHeadModel {
            trunk: Arc::new(trunk),
            head,
        })
    }

    fn random_trunk(vocab_size: usize, dim: usize, window: usize, rng: &mut ChaCha8Rng) -> Result<Trunk> {
        if vocab_size == 0 || dim == 0 || window == 0 {
            return Err(Error::Config(
                "linear model needs vocab_size, dim and window of at least 1".into(),
            ));
        }
        let embedding = Matrix::random(vocab_size, dim, 1.0, rng);
        let mut mixing = Matrix::random(window, dim, 1.0, rng);
        for j in 0..window {
            let decay = 1.0 / (j + 1) as f64;
            for m in mixing.row_mut(j) {
                *m = decay * (0.5 + 0.5 * m.abs());
            }
        }
        Trunk::new(embedding, mixing)
    }

    /// Seeded random weights; the frozen default drafter.
    pub fn random(vocab_size: usize, dim: usize, window: usize, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, RngStream::DraftWeights);
        let trunk = Self::random_trunk(vocab_size, dim, window, &mut rng)?;
        let head = Matrix::random(vocab_size, dim, 1.0 / (dim as f64).sqrt(), &mut rng);
        LinearHeadModel::new(trunk, head)
    }

    /// Seeded random trunk, then one weighted least-squares solve for the head
    /// against one-hot next-token targets over every position of `streams`.
    /// Positions are weighted by how often their (context, next) pair occurs,
    /// so frequent bigrams dominate the fit.
    pub fn fit<I, S>(
        streams: I,
        vocab_size: usize,
        dim: usize,
        window: usize,
        seed: u64,
        opts: FitOptions,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[TokenId]>,
    {
        let mut rng = stream_rng(seed, RngStream::DraftWeights);
        let trunk = Self::random_trunk(vocab_size, dim, window, &mut rng)?;
        let mut gram = DMatrix::<f64>::zeros(dim, dim);
        let mut cross = Matrix::zeros(vocab_size, dim);
        let mut positions = 0usize;
        for stream in streams {
            let s = stream.as_ref();
            check_context(s, vocab_size)?;
            for pos in 1..s.len() {
                let h = trunk.hidden(&s[..pos]);
                for a in 0..dim {
                    for b in 0..dim {
                        gram[(a, b)] += h[a] * h[b];
                    }
                }
                for (c, x) in cross.row_mut(s[pos] as usize).iter_mut().zip(&h) {
                    *c += x;
                }
                positions += 1;
            }
        }
        if positions == 0 {
            return Err(Error::EmptyCorpus);
        }
        let scale = opts.ridge * positions as f64 / dim as f64;
        for a in 0..dim {
            gram[(a, a)] += scale.max(f64::MIN_POSITIVE);
        }
        let inverse = gram
            .cholesky()
            .ok_or_else(|| Error::Invariant("normal equations not positive definite".into()))?
            .inverse();
        let mut head = Matrix::zeros(vocab_size, dim);
        for t in 0..vocab_size {
            let rhs = cross.row(t);
            let out = head.row_mut(t);
            for (a, o) in out.iter_mut().enumerate() {
                *o = opts.logit_scale * (0..dim).map(|b| inverse[(a, b)] * rhs[b]).sum::<f64>();
            }
        }
        LinearHeadModel::new(trunk, head)
    }

    pub fn trunk(&self) -> &Trunk {
        &self.trunk
    }

    pub(crate) fn shared_trunk(&self) -> Arc<Trunk> {
        Arc::clone(&self.trunk)
    }

    pub fn head(&self) -> &Matrix {
        &self.head
    }

    pub fn dim(&self) -> usize {
        self.trunk.dim()
    }

    pub fn hidden(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        check_context(context, self.trunk.vocab_size())?;
        Ok(self.trunk.hidden(context))
    }
}

impl LanguageModel for LinearHeadModel {
    fn vocab_size(&self) -> usize {
        self.trunk.vocab_size()
    }

    fn param_count(&self) -> u64 {
        self.trunk.param_count() + self.head.len() as u64
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        Ok(self.head.mul_vec(&self.hidden(context)?))
    }

    fn head_params(&self) -> u64 {
        self.head.len() as u64
    }
}
