//! Central finite-difference gradient verification.
//!
//! The caller supplies the point, the analytic gradient, and an evaluation
//! closure returning the loss plus a kink signature: a hash of every
//! data-dependent branch taken during the forward pass (ReLU masks, pool
//! argmaxes, norm floors). A coordinate whose +eps and -eps evaluations
//! disagree on the signature sits on a non-differentiable edge and is skipped
//! and replaced by a fresh coordinate.

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a accumulator for kink signatures.
#[derive(Debug, Clone, Copy)]
pub struct KinkHasher(u64);

impl Default for KinkHasher {
    fn default() -> Self {
        KinkHasher(0xcbf2_9ce4_8422_2325)
    }
}

impl KinkHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write_u64(&mut self, v: u64) {
        for byte in v.to_le_bytes() {
            self.0 ^= byte as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn write_bool(&mut self, v: bool) {
        self.write_u64(v as u64);
    }

    /// Packs a sign mask (one bit per element) into the hash.
    pub fn write_mask<T: num_traits::Float>(&mut self, values: &[T]) {
        let mut acc = 0u64;
        let mut bits = 0;
        for v in values {
            acc = (acc << 1) | (*v > T::zero()) as u64;
            bits += 1;
            if bits == 64 {
                self.write_u64(acc);
                acc = 0;
                bits = 0;
            }
        }
        if bits > 0 {
            self.write_u64(acc << (64 - bits));
        }
    }

    pub fn write_indices(&mut self, idx: &[u32]) {
        for i in idx {
            self.write_u64(*i as u64);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub probes: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            probes: 120,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub dims: usize,
    pub probed: usize,
    pub skipped_kinks: usize,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.probed > 0 && self.max_rel_err < tol
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: max rel err {:.3e} over {} probes ({} kink skips, {} dims)",
            self.name, self.max_rel_err, self.probed, self.skipped_kinks, self.dims
        )
    }
}

/// Relative error with a floor so near-zero gradient pairs compare cleanly.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Verifies `analytic` against central differences of `eval` at `x0`.
/// `eval` must be deterministic. Coordinates are probed without replacement.
pub fn check_gradient<F>(
    name: &str,
    cfg: &GradCheckConfig,
    x0: &[f64],
    analytic: &[f64],
    mut eval: F,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, u64),
{
    assert_eq!(x0.len(), analytic.len(), "gradient length mismatch");
    let dim = x0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // With ample head room for kink resampling; small problems check all dims.
    let candidates: Vec<usize> = if dim <= cfg.probes.saturating_mul(4) {
        (0..dim).collect()
    } else {
        let budget = cfg.probes * 4;
        let mut seen = HashSet::with_capacity(budget);
        let mut out = Vec::with_capacity(budget);
        while out.len() < budget {
            let i = rng.random_range(0..dim);
            if seen.insert(i) {
                out.push(i);
            }
        }
        out
    };

    let mut x = x0.to_vec();
    let mut probed = 0;
    let mut skipped = 0;
    let mut max_rel = 0.0f64;
    for &i in &candidates {
        if probed >= cfg.probes {
            break;
        }
        let orig = x[i];
        x[i] = orig + cfg.eps;
        let (f_plus, sig_plus) = eval(&x);
        x[i] = orig - cfg.eps;
        let (f_minus, sig_minus) = eval(&x);
        x[i] = orig;
        if sig_plus != sig_minus {
            skipped += 1;
            continue;
        }
        let numeric = (f_plus - f_minus) / (2.0 * cfg.eps);
        max_rel = max_rel.max(rel_err(analytic[i], numeric));
        probed += 1;
    }

    GradCheckReport {
        name: name.to_string(),
        dims: dim,
        probed,
        skipped_kinks: skipped,
        max_rel_err: max_rel,
    }
}
