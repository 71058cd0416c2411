//! Seeded synthetic activation data: random dictionaries, sparse
//! nonnegative mixtures of their atoms, and a planted-relevance retrieval
//! corpus with known judgments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Zipf};

use crate::activation_io::DumpRecord;
use crate::eval::QrelSet;
use crate::matrix::{axpy, TokenMatrix};

/// Unit-norm atoms in `ℝ^d`.
#[derive(Debug, Clone)]
pub struct Dictionary {
    d: usize,
    atoms: Vec<Vec<f32>>,
}

impl Dictionary {
    /// Gaussian directions normalized to unit length.
    pub fn random(n_atoms: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, 1.0).expect("valid normal");
        let atoms = (0..n_atoms)
            .map(|_| {
                let mut v: Vec<f32> = (0..d).map(|_| normal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
                v.iter_mut().for_each(|x| *x /= norm);
                v
            })
            .collect();
        Self { d, atoms }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atom(&self, i: usize) -> &[f32] {
        &self.atoms[i]
    }
}

/// Tokens that are each a nonnegative combination of `active` distinct
/// atoms with coefficients drawn uniformly from `[0.5, 1.5)`.
pub fn sparse_mixtures(
    dict: &Dictionary,
    n_tokens: usize,
    active: usize,
    seed: u64,
) -> TokenMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..dict.len()).collect();
    let mut data = vec![0.0f32; n_tokens * dict.d];
    for row in data.chunks_exact_mut(dict.d) {
        let (chosen, _) = ids.partial_shuffle(&mut rng, active);
        for &a in chosen.iter() {
            let coef = rng.random_range(0.5f32..1.5);
            axpy(coef, dict.atom(a), row);
        }
    }
    TokenMatrix::new(n_tokens, dict.d, data).expect("shape is consistent")
}

/// Input variance `mean ‖h − mean(h)‖²`, the scale against which
/// reconstruction error is judged.
pub fn total_variance(tokens: &TokenMatrix) -> f64 {
    let n = tokens.rows() as f64;
    let mut mean = vec![0.0f64; tokens.cols()];
    for row in tokens.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += *v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    tokens
        .iter_rows()
        .map(|row| {
            row.iter()
                .zip(&mean)
                .map(|(v, m)| (*v as f64 - m).powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n
}

#[derive(Debug, Clone)]
pub struct PlantedConfig {
    pub d: usize,
    /// One topic atom per query.
    pub n_topics: usize,
    /// Documents containing each topic; must be even.
    pub docs_per_topic: usize,
    pub tokens_per_doc: usize,
    pub tokens_per_query: usize,
    /// Shared atoms added to documents and queries with Zipf-distributed
    /// frequency. Zero disables the background.
    pub n_background: usize,
    pub background_tokens_per_doc: usize,
    pub background_tokens_per_query: usize,
    pub background_scale: f32,
    /// Unlabeled tokens for SAE training.
    pub train_tokens: usize,
    pub noise: f32,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            d: 32,
            n_topics: 50,
            docs_per_topic: 10,
            tokens_per_doc: 8,
            tokens_per_query: 3,
            n_background: 0,
            background_tokens_per_doc: 0,
            background_tokens_per_query: 0,
            background_scale: 2.0,
            train_tokens: 16_384,
            noise: 0.02,
            seed: 0,
        }
    }
}

impl PlantedConfig {
    /// A 20-document corpus: 10 topics, each planted in 4 documents.
    pub fn small() -> Self {
        Self {
            n_topics: 10,
            docs_per_topic: 4,
            tokens_per_doc: 6,
            train_tokens: 8_192,
            ..Self::default()
        }
    }
}

/// Documents built from two planted topic atoms each. Query `q<t>` is built
/// from topic `t` and is relevant (grade 1) to exactly the documents
/// planted with it.
#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub dictionary: Dictionary,
    pub docs: Vec<DumpRecord>,
    pub queries: Vec<DumpRecord>,
    pub qrels: QrelSet,
    pub train: TokenMatrix,
}

impl PlantedCorpus {
    pub fn generate(cfg: &PlantedConfig) -> Self {
        assert!(
            cfg.docs_per_topic.is_multiple_of(2),
            "docs_per_topic must be even"
        );
        assert!(
            cfg.docs_per_topic / 2 < cfg.n_topics.div_ceil(2),
            "too many documents per topic for distinct topic pairs"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n_atoms = cfg.n_topics + cfg.n_background;
        let dictionary = Dictionary::random(n_atoms, cfg.d, rng.random());
        let noise = Normal::new(0.0f32, cfg.noise.max(0.0)).expect("valid noise");
        let zipf = (cfg.n_background > 0)
            .then(|| Zipf::new(cfg.n_background as f64, 1.0).expect("valid zipf"));

        let sample_background = |rng: &mut ChaCha8Rng| -> usize {
            let z = zipf.as_ref().expect("background enabled");
            cfg.n_topics + z.sample(rng) as usize - 1
        };
        let token = |rng: &mut ChaCha8Rng, atom: usize, coef: f32| -> Vec<f32> {
            dictionary
                .atom(atom)
                .iter()
                .map(|a| coef * a + noise.sample(rng))
                .collect()
        };

        // topic pairs (t, t + s) for shifts s = 1..=R/2 place each topic in
        // exactly R documents
        let mut pairs: Vec<(usize, usize)> = (1..=cfg.docs_per_topic / 2)
            .flat_map(|s| (0..cfg.n_topics).map(move |t| (t, (t + s) % cfg.n_topics)))
            .collect();
        pairs.shuffle(&mut rng);

        let mut qrels = QrelSet::default();
        let width = (pairs.len().max(1) as f64).log10() as usize + 1;
        let mut docs = Vec::with_capacity(pairs.len());
        for (i, &(a, b)) in pairs.iter().enumerate() {
            let id = format!("d{i:0width$}");
            let mut rows = Vec::new();
            for t in 0..cfg.tokens_per_doc {
                let atom = if t % 2 == 0 { a } else { b };
                let coef = rng.random_range(0.5f32..1.5);
                rows.push(token(&mut rng, atom, coef));
            }
            for _ in 0..cfg.background_tokens_per_doc {
                let atom = sample_background(&mut rng);
                rows.push(token(&mut rng, atom, cfg.background_scale));
            }
            qrels.insert(&format!("q{a}"), &id, 1);
            qrels.insert(&format!("q{b}"), &id, 1);
            docs.push((id, TokenMatrix::from_rows(&rows).expect("uniform rows")));
        }

        let queries = (0..cfg.n_topics)
            .map(|t| {
                let mut rows = Vec::new();
                for _ in 0..cfg.tokens_per_query {
                    let coef = rng.random_range(0.5f32..1.5);
                    rows.push(token(&mut rng, t, coef));
                }
                for _ in 0..cfg.background_tokens_per_query {
                    let atom = sample_background(&mut rng);
                    rows.push(token(&mut rng, atom, cfg.background_scale));
                }
                (
                    format!("q{t}"),
                    TokenMatrix::from_rows(&rows).expect("uniform rows"),
                )
            })
            .collect();

        // unlabeled training tokens: one or two atoms each, background atoms
        // at their Zipf frequency alongside uniformly drawn topics
        let mut train = Vec::with_capacity(cfg.train_tokens * cfg.d);
        for _ in 0..cfg.train_tokens {
            let parts = rng.random_range(1..=2);
            let mut row = vec![0.0f32; cfg.d];
            for _ in 0..parts {
                let (atom, coef) = if cfg.n_background > 0 && rng.random_bool(0.5) {
                    (sample_background(&mut rng), cfg.background_scale)
                } else {
                    (
                        rng.random_range(0..cfg.n_topics),
                        rng.random_range(0.5f32..1.5),
                    )
                };
                let t = token(&mut rng, atom, coef);
                row.iter_mut().zip(&t).for_each(|(r, v)| *r += v);
            }
            train.extend(row);
        }
        let train = TokenMatrix::new(cfg.train_tokens, cfg.d, train).expect("shape is consistent");

        Self {
            dictionary,
            docs,
            queries,
            qrels,
            train,
        }
    }
}
