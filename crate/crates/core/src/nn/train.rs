use serde::{Deserialize, Serialize};

use super::FeedForwardNet;
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Training objective. All losses are averaged over the minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// Mean over output coordinates of the squared error.
    Mse,
    /// Same objective as `Mse`, with noise draws as targets.
    EpsPrediction,
    /// `Mse + lambda * phi(y_hat)^2`, with `phi` supplied by a [`PhysicsPenalty`].
    Pinn { lambda: f64 },
    /// Logistic loss on a single logit, targets in {0, 1}.
    BinaryCrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from the base rate to `final_fraction` of it.
    Cosine { final_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub lr_schedule: LrSchedule,
    /// Gradient shards per batch. Results are reproducible for a fixed count.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            loss: LossKind::Mse,
            lr_schedule: LrSchedule::Constant,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        if let LossKind::Pinn { lambda } = self.loss {
            if !(lambda >= 0.0) {
                return Err(Error::InvalidConfig("physics weight must be non-negative".into()));
            }
        }
        Ok(())
    }

    fn rate_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine { final_fraction } => {
                let p = if self.epochs > 1 {
                    epoch as f64 / (self.epochs - 1) as f64
                } else {
                    1.0
                };
                let f = final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos());
                self.learning_rate * f
            }
        }
    }
}

/// One training example, already in the network's (normalized) coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub t: Option<usize>,
    pub c: Option<Vec<f64>>,
    pub target: Vec<f64>,
    /// Index handed to the physics penalty to look up per-sample context.
    pub context: usize,
}

/// Source of examples. Sources that draw randomness per epoch (noise
/// prediction) use the supplied generator; static datasets ignore it.
pub trait ExampleSource: Sync {
    fn len(&self) -> usize;
    fn example(&self, index: usize, rng: &mut Rng) -> Example;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Constraint residual used by the physics-penalized loss.
pub trait PhysicsPenalty: Sync {
    /// `phi` at the network output together with its gradient in the same
    /// (normalized) output coordinates.
    fn penalty(&self, context: usize, output: &[f64]) -> (f64, Vec<f64>);
}

/// Fixed list of examples.
#[derive(Debug, Clone, Default)]
pub struct StaticExamples(pub Vec<Example>);

impl ExampleSource for StaticExamples {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn example(&self, index: usize, _rng: &mut Rng) -> Example {
        self.0[index].clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Loss value and output gradient for one example.
fn example_loss(
    loss: LossKind,
    output: &[f64],
    ex: &Example,
    physics: Option<&dyn PhysicsPenalty>,
) -> (f64, Vec<f64>) {
    match loss {
        LossKind::Mse | LossKind::EpsPrediction | LossKind::Pinn { .. } => {
            let m = output.len() as f64;
            let mut value = 0.0;
            let mut d: Vec<f64> = output
                .iter()
                .zip(&ex.target)
                .map(|(y, t)| {
                    let e = y - t;
                    value += e * e;
                    2.0 * e / m
                })
                .collect();
            value /= m;
            if let (LossKind::Pinn { lambda }, Some(phys)) = (loss, physics) {
                if lambda != 0.0 {
                    let (phi, grad) = phys.penalty(ex.context, output);
                    value += lambda * phi * phi;
                    for (di, gi) in d.iter_mut().zip(&grad) {
                        *di += 2.0 * lambda * phi * gi;
                    }
                }
            }
            (value, d)
        }
        LossKind::BinaryCrossEntropy => {
            let z = output[0];
            let y = ex.target[0];
            // softplus(z) - y z, evaluated stably
            let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
            let s = 1.0 / (1.0 + (-z).exp());
            (softplus - y * z, vec![s - y])
        }
    }
}

/// Mean loss and exact parameter gradient over a batch.
///
/// With `workers > 1` the batch is cut into contiguous shards whose partial
/// sums are reduced in shard order, so results depend on the worker count but
/// are otherwise reproducible.
pub fn batch_gradient(
    net: &FeedForwardNet,
    batch: &[Example],
    loss: LossKind,
    physics: Option<&dyn PhysicsPenalty>,
    workers: usize,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    if matches!(loss, LossKind::Pinn { lambda } if lambda != 0.0) && physics.is_none() {
        return Err(Error::InvalidConfig("physics-penalized loss needs a constraint potential".into()));
    }
    let shard = |examples: &[Example]| -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; net.parameter_count()];
        let mut total = 0.0;
        for ex in examples {
            let input = net.assemble_input(&ex.x, ex.t, ex.c.as_deref())?;
            let cache = net.forward_cached(input);
            let (value, d_out) = example_loss(loss, cache.output(), ex, physics);
            total += value;
            net.backward(&cache, &d_out, Some(&mut grad));
        }
        Ok((total, grad))
    };
    let (total, mut grad) = if workers <= 1 || batch.len() < 2 {
        shard(batch)?
    } else {
        let chunk = batch.len().div_ceil(workers);
        let parts: Vec<Result<(f64, Vec<f64>)>> = std::thread::scope(|s| {
            let handles: Vec<_> = batch.chunks(chunk).map(|c| s.spawn(move || shard(c))).collect();
            handles.into_iter().map(|h| h.join().expect("gradient worker panicked")).collect()
        });
        let mut total = 0.0;
        let mut grad = vec![0.0; net.parameter_count()];
        for part in parts {
            let (t, g) = part?;
            total += t;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        (total, grad)
    };
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, grad))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
}

/// Minibatch Adam training. Example order is reshuffled every epoch from the
/// configured seed; per-epoch randomness of the source uses the same stream.
pub fn train(
    net: &mut FeedForwardNet,
    source: &dyn ExampleSource,
    cfg: &TrainConfig,
    physics: Option<&dyn PhysicsPenalty>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut rng = Rng::new(cfg.seed).fork("train");
    let mut adam = Adam::new(net.parameter_count());
    let mut order: Vec<usize> = (0..source.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let lr = cfg.rate_at(epoch);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = idx.iter().map(|&i| source.example(i, &mut rng)).collect();
            let (loss, grad) = batch_gradient(net, &batch, cfg.loss, physics, cfg.workers)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            adam.update(net.params_mut(), &grad, lr, cfg);
        }
        history.push(epoch_loss / source.len() as f64);
    }
    Ok(TrainReport {
        loss_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Architecture};
    use crate::numerics::finite_diff_grad;

    fn quadratic_physics() -> impl PhysicsPenalty {
        struct SumSquares;
        impl PhysicsPenalty for SumSquares {
            fn penalty(&self, context: usize, y: &[f64]) -> (f64, Vec<f64>) {
                let shift = context as f64 * 0.1;
                let phi = y.iter().map(|v| (v - shift) * (v - shift)).sum();
                (phi, y.iter().map(|v| 2.0 * (v - shift)).collect())
            }
        }
        SumSquares
    }

    fn random_batch(rng: &mut Rng, arch: &Architecture, n: usize, classify: bool) -> Vec<Example> {
        (0..n)
            .map(|i| Example {
                x: (0..arch.input_dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
                t: (arch.time_embed_dim > 0).then(|| 1 + rng.below(50)),
                c: (arch.cond_dim > 0).then(|| (0..arch.cond_dim).map(|_| rng.normal()).collect()),
                target: if classify {
                    vec![(rng.uniform() < 0.5) as u8 as f64]
                } else {
                    (0..arch.output_dim).map(|_| rng.normal()).collect()
                },
                context: i,
            })
            .collect()
    }

    #[test]
    fn zero_loss_has_zero_gradient() {
        let net = FeedForwardNet::new(Architecture::mlp(2, vec![5], 2), 1).unwrap();
        let x = vec![0.3, -0.2];
        let y = net.forward(&x, None, None).unwrap();
        let batch = vec![Example { x, t: None, c: None, target: y, context: 0 }];
        let (loss, grad) = batch_gradient(&net, &batch, LossKind::Mse, None, 1).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn one_parameter_quadratic_gradient() {
        let mut arch = Architecture::mlp(1, vec![], 1);
        arch.activation = Activation::Identity;
        let (w, x, y) = (1.5, 2.0, 1.0);
        let net = FeedForwardNet::from_params(arch, vec![w, 0.0]).unwrap();
        let batch = vec![Example { x: vec![x], t: None, c: None, target: vec![y], context: 0 }];
        let (_, grad) = batch_gradient(&net, &batch, LossKind::Mse, None, 1).unwrap();
        assert!((grad[0] - 2.0 * (w * x - y) * x).abs() < 1e-12);
    }

    /// Backprop against central differences for seeded architectures and
    /// every loss kind, parameters drawn in [-1, 1].
    #[test]
    fn gradient_check_all_losses() {
        let physics = quadratic_physics();
        let mut rng = Rng::new(77);
        for case in 0..20 {
            let skip = case % 2 == 0;
            let width = 3 + case % 4;
            let mut arch = Architecture {
                input_dim: 1 + case % 3,
                time_embed_dim: if case % 3 == 0 { 4 } else { 0 },
                cond_dim: case % 2,
                hidden: vec![width, width + 1, width + 1, width],
                output_dim: 1 + case % 3,
                activation: Activation::Silu,
                skip_connections: skip,
            };
            for loss in [
                LossKind::Mse,
                LossKind::EpsPrediction,
                LossKind::Pinn { lambda: 0.7 },
                LossKind::BinaryCrossEntropy,
            ] {
                let classify = loss == LossKind::BinaryCrossEntropy;
                if classify {
                    arch.output_dim = 1;
                }
                let mut net = FeedForwardNet::zeros(arch.clone()).unwrap();
                for p in net.params_mut() {
                    *p = rng.uniform_range(-1.0, 1.0);
                }
                let batch = random_batch(&mut rng, &arch, 4, classify);
                let phys: Option<&dyn PhysicsPenalty> = Some(&physics);
                let (_, analytic) = batch_gradient(&net, &batch, loss, phys, 1).unwrap();
                let base = net.params().to_vec();
                let numeric = finite_diff_grad(
                    |p| {
                        let probe = FeedForwardNet::from_params(arch.clone(), p.to_vec()).unwrap();
                        batch_gradient(&probe, &batch, loss, phys, 1).unwrap().0
                    },
                    &base,
                    Some(1e-5),
                )
                .unwrap();
                for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
                    let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
                    assert!(rel < 1e-4, "case {case} {loss:?} param {i}: {a} vs {n}");
                }
            }
        }
    }

    #[test]
    fn sharded_gradient_matches_sequential() {
        let arch = Architecture::mlp(3, vec![8, 8], 2);
        let net = FeedForwardNet::new(arch.clone(), 9).unwrap();
        let mut rng = Rng::new(4);
        let batch = random_batch(&mut rng, &arch, 10, false);
        let (l1, g1) = batch_gradient(&net, &batch, LossKind::Mse, None, 1).unwrap();
        let (l3, g3) = batch_gradient(&net, &batch, LossKind::Mse, None, 3).unwrap();
        assert!((l1 - l3).abs() < 1e-12);
        assert!(g1.iter().zip(&g3).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn linear_regression_recovers_slope() {
        let mut arch = Architecture::mlp(1, vec![], 1);
        arch.activation = Activation::Identity;
        let mut net = FeedForwardNet::new(arch, 3).unwrap();
        let data = StaticExamples(
            (0..64)
                .map(|i| {
                    let x = -1.0 + 2.0 * i as f64 / 63.0;
                    Example { x: vec![x], t: None, c: None, target: vec![2.0 * x], context: i }
                })
                .collect(),
        );
        let cfg = TrainConfig {
            epochs: 400,
            batch_size: 16,
            learning_rate: 2e-2,
            lr_schedule: LrSchedule::Cosine { final_fraction: 0.01 },
            ..TrainConfig::default()
        };
        train(&mut net, &data, &cfg, None).unwrap();
        // Closed-form least squares on noiseless data gives w = 2, b = 0.
        assert!((net.params()[0] - 2.0).abs() < 1e-3, "w = {}", net.params()[0]);
        assert!(net.params()[1].abs() < 1e-3);
    }

    #[test]
    fn pinn_with_zero_weight_matches_mse_bitwise() {
        let physics = quadratic_physics();
        let arch = Architecture::mlp(2, vec![6], 2);
        let mut rng = Rng::new(8);
        let data = StaticExamples(random_batch(&mut rng, &arch, 40, false));
        let mut a = FeedForwardNet::new(arch.clone(), 2).unwrap();
        let mut b = a.clone();
        let base = TrainConfig { epochs: 15, batch_size: 8, seed: 5, ..TrainConfig::default() };
        let ra = train(&mut a, &data, &base, None).unwrap();
        let pinn = TrainConfig { loss: LossKind::Pinn { lambda: 0.0 }, ..base };
        let rb = train(&mut b, &data, &pinn, Some(&physics)).unwrap();
        assert!(a.params().iter().zip(b.params()).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert_eq!(ra, rb);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let arch = Architecture::mlp(2, vec![6], 1);
        let mut rng = Rng::new(1);
        let data = StaticExamples(random_batch(&mut rng, &arch, 30, false));
        let cfg = TrainConfig { epochs: 10, batch_size: 7, seed: 12, ..TrainConfig::default() };
        let mut a = FeedForwardNet::new(arch.clone(), 3).unwrap();
        let mut b = FeedForwardNet::new(arch, 3).unwrap();
        train(&mut a, &data, &cfg, None).unwrap();
        train(&mut b, &data, &cfg, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_loss_reports_epoch() {
        let arch = Architecture::mlp(1, vec![], 1);
        let mut net = FeedForwardNet::new(arch, 3).unwrap();
        let data = StaticExamples(vec![Example {
            x: vec![1.0],
            t: None,
            c: None,
            target: vec![f64::NAN],
            context: 0,
        }]);
        let err = train(&mut net, &data, &TrainConfig::default(), None).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 0 }));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
    }
}
