use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::ConstraintPotential;
use crate::numerics::Rng;

/// Sampler for training data concentrated on low-potential regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampler {
    /// Uniform box proposals accepted with probability `exp(-phi / kt)`.
    Rejection { kt: f64 },
    /// Random-walk Metropolis targeting `exp(-phi / kt)` on the box.
    Metropolis {
        kt: f64,
        /// Proposal standard deviation as a fraction of each box side.
        step_fraction: f64,
        burn_in: usize,
        thin: usize,
    },
}

impl Sampler {
    pub fn metropolis(kt: f64) -> Self {
        Sampler::Metropolis {
            kt,
            step_fraction: 0.03,
            burn_in: 2000,
            thin: 10,
        }
    }
}

/// Acceptance below this rate over the stall window aborts sampling.
pub const MIN_ACCEPTANCE: f64 = 1e-3;
pub const STALL_WINDOW: usize = 100_000;

pub fn sample_manifold_dataset(
    pot: &dyn ConstraintPotential,
    lo: &[f64],
    hi: &[f64],
    n: usize,
    sampler: Sampler,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
        return Err(Error::InvalidConfig("sampling region must be a non-empty box".into()));
    }
    if n == 0 {
        return Err(Error::InvalidConfig("sample count must be at least 1".into()));
    }
    let mut rng = Rng::new(seed).fork("manifold-sampler");
    let uniform = |rng: &mut Rng| -> Vec<f64> { lo.iter().zip(hi).map(|(a, b)| rng.uniform_range(*a, *b)).collect() };
    let mut out = Vec::with_capacity(n);
    let (mut proposals, mut accepted) = (0usize, 0usize);
    let check_stall = |proposals: usize, accepted: usize| -> Result<()> {
        if proposals == STALL_WINDOW && (accepted as f64) < MIN_ACCEPTANCE * proposals as f64 {
            return Err(Error::SamplerStalled {
                rate: accepted as f64 / proposals as f64,
                proposals,
            });
        }
        Ok(())
    };
    match sampler {
        Sampler::Rejection { kt } => {
            while out.len() < n {
                let p = uniform(&mut rng);
                proposals += 1;
                if rng.uniform() < (-pot.value(&p) / kt).exp() {
                    accepted += 1;
                    out.push(p);
                }
                check_stall(proposals, accepted)?;
            }
        }
        Sampler::Metropolis {
            kt,
            step_fraction,
            burn_in,
            thin,
        } => {
            // Start from the best of a batch of uniform draws.
            let mut x = (0..1000)
                .map(|_| uniform(&mut rng))
                .min_by(|a, b| pot.value(a).total_cmp(&pot.value(b)))
                .unwrap();
            let mut phi = pot.value(&x);
            let thin = thin.max(1);
            let mut iter = 0usize;
            while out.len() < n {
                let y: Vec<f64> = x
                    .iter()
                    .enumerate()
                    .map(|(k, v)| v + step_fraction * (hi[k] - lo[k]) * rng.normal())
                    .collect();
                proposals += 1;
                let inside = y.iter().enumerate().all(|(k, v)| *v >= lo[k] && *v <= hi[k]);
                let u = rng.uniform();
                if inside {
                    let phi_y = pot.value(&y);
                    if u < (-(phi_y - phi) / kt).exp() {
                        x = y;
                        phi = phi_y;
                        accepted += 1;
                    }
                }
                check_stall(proposals, accepted)?;
                iter += 1;
                if iter > burn_in && (iter - burn_in) % thin == 0 {
                    out.push(x.clone());
                }
            }
        }
    }
    Ok(out)
}
