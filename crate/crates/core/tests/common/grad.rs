use latent_terms::sae::{gradients, SaeParts};
use latent_terms::{SaeModel, TokenMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// f64 loss with the active set and ReLU mask frozen per example.
struct FrozenLoss {
    d: usize,
    m: usize,
    batch: Vec<Vec<f64>>,
    masks: Vec<Vec<bool>>,
    lambda: f64,
}

impl FrozenLoss {
    fn new(model: &SaeModel, batch: &TokenMatrix, lambda: f64) -> Self {
        let masks = batch
            .iter_rows()
            .map(|h| {
                let z = model.encode(h).unwrap().to_dense(model.m());
                z.iter().map(|&v| v > 0.0).collect()
            })
            .collect();
        Self {
            d: model.d(),
            m: model.m(),
            batch: batch
                .iter_rows()
                .map(|r| r.iter().map(|&v| v as f64).collect())
                .collect(),
            masks,
            lambda,
        }
    }

    /// Parameters in `SaeParts` order: W_enc (m×d), b_enc, W_dec (d×m), b_dec.
    fn eval(&self, p: &[f64]) -> f64 {
        let (d, m) = (self.d, self.m);
        let w_enc = &p[..m * d];
        let b_enc = &p[m * d..m * d + m];
        let w_dec = &p[m * d + m..2 * m * d + m];
        let b_dec = &p[2 * m * d + m..];
        let mut total = 0.0;
        for (h, mask) in self.batch.iter().zip(&self.masks) {
            let mut z = vec![0.0; m];
            for j in 0..m {
                if mask[j] {
                    z[j] = b_enc[j]
                        + (0..d)
                            .map(|i| w_enc[j * d + i] * (h[i] - b_dec[i]))
                            .sum::<f64>();
                }
            }
            for i in 0..d {
                let rec = b_dec[i] + (0..m).map(|j| w_dec[i * m + j] * z[j]).sum::<f64>();
                total += (h[i] - rec).powi(2);
            }
            total += self.lambda * z.iter().map(|v| v.abs()).sum::<f64>();
        }
        total / self.batch.len() as f64
    }
}

fn flatten(p: &SaeParts) -> Vec<f64> {
    [&p.w_enc, &p.b_enc, &p.w_dec, &p.b_dec]
        .iter()
        .flat_map(|b| b.iter().map(|&v| v as f64))
        .collect()
}

/// Worst relative gap between analytic and central-difference gradients.
pub fn gradient_check(seed: u64) -> f64 {
    let (d, m, k) = (3, 6, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = SaeModel::init(d, m, k, seed).unwrap().to_parts();
    for v in parts.b_enc.iter_mut().chain(parts.b_dec.iter_mut()) {
        *v = rng.random_range(-0.2..0.2);
    }
    let model = SaeModel::from_parts(d, m, k, parts).unwrap();
    let batch = TokenMatrix::new(
        5,
        d,
        (0..5 * d).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
    )
    .unwrap();
    let lambda = 0.1;
    let (_, grads) = gradients(&model, &batch, lambda).unwrap();
    let analytic = flatten(&grads.to_parts());
    let oracle = FrozenLoss::new(&model, &batch, lambda);
    let theta = flatten(&model.to_parts());
    let scale = analytic.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (idx, &ga) in analytic.iter().enumerate() {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[idx] += h;
        minus[idx] -= h;
        let numeric = (oracle.eval(&plus) - oracle.eval(&minus)) / (2.0 * h);
        // relative to the entry, floored at 1e-3 of the largest gradient so
        // exact zeros do not divide by zero
        let denom = numeric.abs().max(1e-3 * scale);
        worst = worst.max((ga - numeric).abs() / denom);
    }
    worst
}
