//! Top-K sparse autoencoder.
//!
//! Forward pass for a token activation `h`:
//!
//! ```text
//! a = W_enc (h - b_dec) + b_enc        pre-activations, length m
//! z = relu(topk_k(a))                  keep the k largest a_j, zero the rest
//! ĥ = W_dec z + b_dec                  reconstruction, length d
//! ```
//!
//! Top-k ties go to the lowest feature index. ReLU is applied after the
//! selection, so a token can end up with fewer than `k` nonzeros.

mod io;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matrix::{axpy, TokenMatrix};

pub use io::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use train::{
    gradients, loss, lr_at, train, train_on_tokens, train_with, LossParts, SaeGradients, StepLog,
    TrainConfig, TrainLog,
};

/// Sparse code of one token: `(feature, value)` pairs, feature ascending,
/// values strictly positive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseCode(pub Vec<(u32, f32)>);

impl SparseCode {
    pub fn nnz(&self) -> usize {
        self.0.len()
    }

    pub fn to_dense(&self, m: usize) -> Vec<f32> {
        let mut out = vec![0.0; m];
        for &(j, v) in &self.0 {
            out[j as usize] = v;
        }
        out
    }

    pub fn l1(&self) -> f32 {
        self.0.iter().map(|e| e.1).sum()
    }
}

/// Raw parameter blocks in their mathematical orientation, row-major:
/// `w_enc` is m×d, `w_dec` is d×m.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeParts {
    pub w_enc: Vec<f32>,
    pub b_enc: Vec<f32>,
    pub w_dec: Vec<f32>,
    pub b_dec: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    d: usize,
    m: usize,
    k: usize,
    /// W_enc transposed: d rows of length m.
    enc_t: Vec<f32>,
    b_enc: Vec<f32>,
    /// W_dec transposed: m decoder atoms of length d.
    atoms: Vec<f32>,
    b_dec: Vec<f32>,
    init_bound: f32,
}

fn check_shape(d: usize, m: usize, k: usize) -> Result<()> {
    if d == 0 || m <= d {
        return Err(Error::InvalidShape(format!(
            "latent dimension m={m} must exceed input dimension d={d} > 0"
        )));
    }
    if k == 0 || k > m {
        return Err(Error::InvalidShape(format!("k={k} must lie in 1..={m}")));
    }
    if d > u32::MAX as usize || m > u32::MAX as usize {
        return Err(Error::InvalidShape("dimensions exceed u32".into()));
    }
    Ok(())
}

/// Kaiming-uniform bound with fan-in `m` and ReLU gain √2: `sqrt(6 / m)`.
pub fn kaiming_uniform_bound(m: usize) -> f32 {
    (6.0 / m as f64).sqrt() as f32
}

fn transpose(src: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

impl SaeModel {
    /// Decoder drawn Kaiming-uniform, encoder set to its transpose, zero biases.
    pub fn init(d: usize, m: usize, k: usize, seed: u64) -> Result<Self> {
        check_shape(d, m, k)?;
        let bound = kaiming_uniform_bound(m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // W_dec row-major d×m, which is also the layout of W_enc transposed.
        let w_dec: Vec<f32> = (0..d * m)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let atoms = transpose(&w_dec, d, m);
        Ok(Self {
            d,
            m,
            k,
            enc_t: w_dec,
            b_enc: vec![0.0; m],
            atoms,
            b_dec: vec![0.0; d],
            init_bound: bound,
        })
    }

    pub fn from_parts(d: usize, m: usize, k: usize, parts: SaeParts) -> Result<Self> {
        Self::from_parts_with_bound(d, m, k, parts, 0.0)
    }

    pub(crate) fn from_parts_with_bound(
        d: usize,
        m: usize,
        k: usize,
        parts: SaeParts,
        init_bound: f32,
    ) -> Result<Self> {
        check_shape(d, m, k)?;
        let SaeParts {
            w_enc,
            b_enc,
            w_dec,
            b_dec,
        } = parts;
        if w_enc.len() != m * d || w_dec.len() != d * m || b_enc.len() != m || b_dec.len() != d {
            return Err(Error::InvalidShape(
                "parameter block sizes disagree with d, m".into(),
            ));
        }
        let all = w_enc.iter().chain(&b_enc).chain(&w_dec).chain(&b_dec);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self {
            d,
            m,
            k,
            enc_t: transpose(&w_enc, m, d),
            b_enc,
            atoms: transpose(&w_dec, d, m),
            b_dec,
            init_bound,
        })
    }

    pub fn to_parts(&self) -> SaeParts {
        SaeParts {
            w_enc: transpose(&self.enc_t, self.d, self.m),
            b_enc: self.b_enc.clone(),
            w_dec: transpose(&self.atoms, self.m, self.d),
            b_dec: self.b_dec.clone(),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Kaiming bound used at initialization; 0 for hand-built models.
    pub fn init_bound(&self) -> f32 {
        self.init_bound
    }

    /// `W_enc[j][i]`
    pub fn w_enc(&self, j: usize, i: usize) -> f32 {
        self.enc_t[i * self.m + j]
    }

    /// `W_dec[i][j]`
    pub fn w_dec(&self, i: usize, j: usize) -> f32 {
        self.atoms[j * self.d + i]
    }

    pub fn b_enc(&self) -> &[f32] {
        &self.b_enc
    }

    pub fn b_dec(&self) -> &[f32] {
        &self.b_dec
    }

    /// Column `j` of W_dec.
    pub fn decoder_atom(&self, j: usize) -> &[f32] {
        &self.atoms[j * self.d..(j + 1) * self.d]
    }

    pub fn is_finite(&self) -> bool {
        self.enc_t
            .iter()
            .chain(&self.b_enc)
            .chain(&self.atoms)
            .chain(&self.b_dec)
            .all(|v| v.is_finite())
    }

    fn check_input(&self, h: &[f32]) -> Result<()> {
        if h.len() != self.d {
            return Err(Error::InvalidShape(format!(
                "input has {} values, model expects d={}",
                h.len(),
                self.d
            )));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(())
    }

    /// `a = W_enc (h - b_dec) + b_enc`
    pub fn pre_activations(&self, h: &[f32]) -> Result<Vec<f32>> {
        self.check_input(h)?;
        let mut a = vec![0.0; self.m];
        self.pre_activations_into(h, &mut a);
        Ok(a)
    }

    pub(crate) fn pre_activations_into(&self, h: &[f32], a: &mut [f32]) {
        a.copy_from_slice(&self.b_enc);
        for (i, (&hi, &bi)) in h.iter().zip(&self.b_dec).enumerate() {
            let x = hi - bi;
            if x != 0.0 {
                axpy(x, &self.enc_t[i * self.m..(i + 1) * self.m], a);
            }
        }
    }

    pub fn encode(&self, h: &[f32]) -> Result<SparseCode> {
        self.check_input(h)?;
        let mut a = vec![0.0; self.m];
        self.pre_activations_into(h, &mut a);
        Ok(self.activate(&a))
    }

    pub(crate) fn activate(&self, a: &[f32]) -> SparseCode {
        let mut selected = top_k(a, self.k);
        selected.retain(|&(_, v)| v > 0.0);
        selected.sort_unstable_by_key(|e| e.0);
        SparseCode(selected)
    }

    /// Encodes every row of `tokens`.
    pub fn encode_rows(&self, tokens: &TokenMatrix, exec: Execution) -> Result<Vec<SparseCode>> {
        if tokens.cols() != self.d {
            return Err(Error::InvalidShape(format!(
                "token matrix has {} columns, model expects d={}",
                tokens.cols(),
                self.d
            )));
        }
        exec.map_range(tokens.rows(), |t| self.encode(tokens.row(t)))
            .into_iter()
            .collect()
    }

    /// `ĥ = W_dec z + b_dec` for a dense code of length m.
    pub fn decode(&self, z: &[f32]) -> Result<Vec<f32>> {
        if z.len() != self.m {
            return Err(Error::InvalidShape(format!(
                "code has {} values, model expects m={}",
                z.len(),
                self.m
            )));
        }
        let mut out = self.b_dec.clone();
        for (j, &zj) in z.iter().enumerate() {
            if zj != 0.0 {
                axpy(zj, self.decoder_atom(j), &mut out);
            }
        }
        Ok(out)
    }

    pub fn decode_sparse(&self, z: &SparseCode) -> Result<Vec<f32>> {
        let mut out = self.b_dec.clone();
        for &(j, v) in &z.0 {
            if j as usize >= self.m {
                return Err(Error::InvalidFeature {
                    feature: j,
                    m: self.m,
                });
            }
            axpy(v, self.decoder_atom(j as usize), &mut out);
        }
        Ok(out)
    }

    pub(crate) fn raw_mut(&mut self) -> [&mut [f32]; 4] {
        [
            &mut self.enc_t,
            &mut self.b_enc,
            &mut self.atoms,
            &mut self.b_dec,
        ]
    }

    pub(crate) fn normalize_atoms(&mut self) {
        for atom in self.atoms.chunks_exact_mut(self.d) {
            let norm = atom.iter().map(|v| v * v).sum::<f32>().sqrt();
            if norm > 0.0 {
                atom.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
}

/// The `k` largest values of `a` with their indices; equal values prefer the
/// lower index. Output order is unspecified.
pub(crate) fn top_k(a: &[f32], k: usize) -> Vec<(u32, f32)> {
    let k = k.min(a.len());
    let mut best: Vec<(u32, f32)> = Vec::with_capacity(k);
    if k == 0 {
        return best;
    }
    let mut worst = 0usize;
    for (j, &v) in a.iter().enumerate() {
        if best.len() < k {
            best.push((j as u32, v));
            if best.len() == k {
                worst = worst_slot(&best);
            }
        } else if v > best[worst].1 {
            // scanning in ascending index, so an equal value never displaces
            best[worst] = (j as u32, v);
            worst = worst_slot(&best);
        }
    }
    best
}

fn worst_slot(best: &[(u32, f32)]) -> usize {
    let mut w = 0;
    for (i, e) in best.iter().enumerate().skip(1) {
        let cur = best[w];
        if e.1 < cur.1 || (e.1 == cur.1 && e.0 > cur.0) {
            w = i;
        }
    }
    w
}
