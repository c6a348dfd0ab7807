//! MLP encoder/decoder pair with learnable class priors.
//!
//! Conditional families append a one-hot label to both the encoder input
//! and the latent code fed to the decoder.

use rand::Rng;

use super::losses::{loss_graph, LossBreakdown, LossTerms};
use super::{ClassPriors, EncoderOutput, ModelConfig};
use crate::error::{ensure, Result};
use crate::special::{sample_chi_squared, sample_standard_normal};
use crate::tensor::{Activation, BoundMlp, MlpParams, Parameters, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    /// Hidden widths, shared by encoder trunk and decoder.
    pub hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self { hidden: vec![64] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Standardized reparameterization noise: z = μ_φ + √(σ²_φ) ⊙ noise.
#[derive(Clone, Debug, PartialEq)]
pub struct Noise {
    pub values: Tensor,
}

impl Noise {
    /// Gaussian families draw ε ~ N(0, I). Student-t families draw
    /// ε·√((ν+n)/V)/√(1+n/ν) with V ~ χ²(ν+n), a standardized draw from
    /// t_m(0, I/(1+n/ν), ν+n).
    pub fn draw<R: Rng + ?Sized>(config: &ModelConfig, batch: usize, rng: &mut R) -> Self {
        let m = config.m;
        let mut data = vec![0.0; batch * m];
        for row in data.chunks_mut(m) {
            for v in row.iter_mut() {
                *v = sample_standard_normal(rng);
            }
            if config.family.is_student_t() {
                let dof = config.nu + config.n as f64;
                let w = (dof / sample_chi_squared(dof, rng)).sqrt()
                    / (1.0 + config.n as f64 / config.nu).sqrt();
                row.iter_mut().for_each(|v| *v *= w);
            }
        }
        Self {
            values: Tensor::matrix(batch, m, data).expect("shape matches"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    MeanHead,
    LogVarianceHead,
    Decoder,
    ClassPriors,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Encoder,
        ParamGroup::MeanHead,
        ParamGroup::LogVarianceHead,
        ParamGroup::Decoder,
        ParamGroup::ClassPriors,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::MeanHead => "mean_head",
            ParamGroup::LogVarianceHead => "logvar_head",
            ParamGroup::Decoder => "decoder",
            ParamGroup::ClassPriors => "class_priors",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: MlpParams,
    pub mean_head: MlpParams,
    pub logvar_head: MlpParams,
    pub decoder: MlpParams,
    pub priors: ClassPriors,
}

struct BoundModel<'t> {
    encoder: BoundMlp<'t>,
    mean_head: BoundMlp<'t>,
    logvar_head: BoundMlp<'t>,
    decoder: BoundMlp<'t>,
    priors: Var<'t>,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(
        config: ModelConfig,
        arch: &Architecture,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        ensure!(
            !arch.hidden.is_empty(),
            Config,
            "at least one hidden layer is required"
        );
        let cond = if config.family.is_conditional() {
            config.k
        } else {
            0
        };
        let h = &arch.hidden;
        let last = h[h.len() - 1];

        let mut enc_widths = vec![config.n + cond];
        enc_widths.extend(h);
        let encoder = MlpParams::init(&enc_widths, &vec![Activation::Relu; h.len()], rng)?;
        let mean_head = MlpParams::init(&[last, config.m], &[Activation::Identity], rng)?;
        let logvar_head = MlpParams::init(&[last, config.m], &[Activation::Identity], rng)?;

        let mut dec_widths = vec![config.m + cond];
        dec_widths.extend(h);
        dec_widths.push(config.n);
        let mut dec_act = vec![Activation::Relu; h.len()];
        dec_act.push(Activation::Sigmoid);
        let decoder = MlpParams::init(&dec_widths, &dec_act, rng)?;

        let priors = if config.family.is_conditional() {
            ClassPriors::init(config.k, config.m, rng)
        } else {
            ClassPriors::new(Tensor::zeros(&[1, config.m]))?
        };
        Ok(Self {
            config,
            encoder,
            mean_head,
            logvar_head,
            decoder,
            priors,
        })
    }

    fn bind<'t>(&self, tape: &'t Tape) -> BoundModel<'t> {
        BoundModel {
            encoder: self.encoder.bind(tape),
            mean_head: self.mean_head.bind(tape),
            logvar_head: self.logvar_head.bind(tape),
            decoder: self.decoder.bind(tape),
            priors: tape.param(&self.priors.mu_y),
        }
    }

    fn one_hot(&self, labels: &[usize]) -> Result<Tensor> {
        let k = self.config.k;
        let mut data = vec![0.0; labels.len() * k];
        for (i, &y) in labels.iter().enumerate() {
            ensure!(y < k, Contract, "label {y} outside 0..{k}");
            data[i * k + y] = 1.0;
        }
        Tensor::matrix(labels.len(), k, data)
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        ensure!(
            batch.x.cols() == self.config.n,
            Dimension,
            "data has {} features, model expects {}",
            batch.x.cols(),
            self.config.n
        );
        if self.config.family.is_conditional() {
            ensure!(
                batch.labels.len() == batch.len(),
                Dimension,
                "{} labels for {} samples",
                batch.labels.len(),
                batch.len()
            );
        }
        Ok(())
    }

    fn terms<'t>(
        &self,
        tape: &'t Tape,
        bound: &BoundModel<'t>,
        batch: &Batch,
        noise: &Noise,
    ) -> Result<LossTerms<'t>> {
        self.check_batch(batch)?;
        ensure!(
            noise.values.shape() == [batch.len(), self.config.m],
            Dimension,
            "noise must be {}x{}",
            batch.len(),
            self.config.m
        );
        let x = tape.constant(&batch.x);
        let cond = self.config.family.is_conditional();
        let onehot = if cond {
            Some(tape.constant(&self.one_hot(&batch.labels)?))
        } else {
            None
        };
        let enc_in = match onehot {
            Some(h) => x.concat_cols(h)?,
            None => x,
        };
        let trunk = bound.encoder.forward(enc_in)?;
        let mu = bound.mean_head.forward(trunk)?;
        let logvar = bound.logvar_head.forward(trunk)?;
        let std = logvar.scale(0.5).exp();
        let z = mu.add(std.mul(tape.constant(&noise.values))?)?;
        let dec_in = match onehot {
            Some(h) => z.concat_cols(h)?,
            None => z,
        };
        let recon = bound.decoder.forward(dec_in)?;
        let labels = if cond {
            Some(batch.labels.as_slice())
        } else {
            None
        };
        loss_graph(
            &self.config,
            mu,
            logvar,
            recon,
            x,
            Some(bound.priors),
            labels,
        )
    }

    /// Loss value without touching gradients.
    pub fn loss(&self, batch: &Batch, noise: &Noise) -> Result<LossBreakdown> {
        let tape = Tape::new();
        let bound = self.bind(&tape);
        Ok(self.terms(&tape, &bound, batch, noise)?.breakdown())
    }

    /// Loss value; gradients are added into every parameter's `grad`.
    pub fn loss_and_grad(&mut self, batch: &Batch, noise: &Noise) -> Result<LossBreakdown> {
        let tape = Tape::new();
        let bound = self.bind(&tape);
        let terms = self.terms(&tape, &bound, batch, noise)?;
        let grads = tape.backward(terms.total)?;
        self.encoder.absorb_grads(&bound.encoder, &grads);
        self.mean_head.absorb_grads(&bound.mean_head, &grads);
        self.logvar_head.absorb_grads(&bound.logvar_head, &grads);
        self.decoder.absorb_grads(&bound.decoder, &grads);
        if self.config.family.is_conditional() {
            crate::tensor::add_grad(&mut self.priors.mu_y, &grads.get(bound.priors));
        }
        Ok(terms.breakdown())
    }

    /// Posterior means and variances, no graph.
    pub fn encode(&self, x: &Tensor, labels: &[usize]) -> Result<EncoderOutput> {
        let input = if self.config.family.is_conditional() {
            ensure!(
                labels.len() == x.rows(),
                Dimension,
                "{} labels for {} samples",
                labels.len(),
                x.rows()
            );
            concat(x, &self.one_hot(labels)?)
        } else {
            x.clone()
        };
        let trunk = self.encoder.evaluate(&input)?;
        let mu = self.mean_head.evaluate(&trunk)?;
        let lv = self.logvar_head.evaluate(&trunk)?;
        let var = Tensor::matrix(
            lv.rows(),
            lv.cols(),
            lv.data().iter().map(|v| v.exp()).collect(),
        )?;
        EncoderOutput::new(mu, var)
    }

    /// Decoder means μ_θ(z), no graph.
    pub fn decode(&self, z: &Tensor, labels: &[usize]) -> Result<Tensor> {
        ensure!(
            z.cols() == self.config.m,
            Dimension,
            "latents have {} columns, m = {}",
            z.cols(),
            self.config.m
        );
        if self.config.family.is_conditional() {
            ensure!(
                labels.len() == z.rows(),
                Dimension,
                "{} labels for {} latents",
                labels.len(),
                z.rows()
            );
            self.decoder.evaluate(&concat(z, &self.one_hot(labels)?))
        } else {
            self.decoder.evaluate(z)
        }
    }

    fn visit_group(&mut self, group: ParamGroup, f: &mut dyn FnMut(&mut Tensor)) {
        match group {
            ParamGroup::Encoder => self.encoder.visit_mut(f),
            ParamGroup::MeanHead => self.mean_head.visit_mut(f),
            ParamGroup::LogVarianceHead => self.logvar_head.visit_mut(f),
            ParamGroup::Decoder => self.decoder.visit_mut(f),
            ParamGroup::ClassPriors => self.priors.visit_mut(f),
        }
    }

    /// Groups that influence the loss for this family.
    pub fn active_groups(&self) -> Vec<ParamGroup> {
        ParamGroup::ALL
            .into_iter()
            .filter(|g| *g != ParamGroup::ClassPriors || self.config.family.is_conditional())
            .collect()
    }

    /// Per-group max of |analytic − central difference| / max(1, |analytic|)
    /// at fixed noise.
    pub fn gradient_check(
        &self,
        batch: &Batch,
        noise: &Noise,
        step: f64,
    ) -> Result<Vec<(ParamGroup, f64)>> {
        let mut analytic = self.clone();
        crate::tensor::zero_grads(&mut analytic);
        analytic.loss_and_grad(batch, noise)?;

        let mut out = Vec::new();
        for group in self.active_groups() {
            let mut grads: Vec<Vec<f64>> = Vec::new();
            analytic.visit_group(group, &mut |t| {
                grads.push(t.grad.clone().unwrap_or_else(|| vec![0.0; t.numel()]))
            });
            let mut worst = 0.0f64;
            for (ti, g) in grads.iter().enumerate() {
                for (ci, &a) in g.iter().enumerate() {
                    let eval_at = |delta: f64| -> Result<f64> {
                        let mut probe = self.clone();
                        let mut idx = 0;
                        probe.visit_group(group, &mut |t| {
                            if idx == ti {
                                t.data_mut()[ci] += delta;
                            }
                            idx += 1;
                        });
                        Ok(probe.loss(batch, noise)?.total)
                    };
                    let numeric = (eval_at(step)? - eval_at(-step)?) / (2.0 * step);
                    worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
                }
            }
            out.push((group, worst));
        }
        Ok(out)
    }

    /// Stable (name, tensor) list for serialization.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, mlp) in [
            ("encoder", &self.encoder),
            ("mean_head", &self.mean_head),
            ("logvar_head", &self.logvar_head),
            ("decoder", &self.decoder),
        ] {
            for (i, l) in mlp.layers.iter().enumerate() {
                out.push((format!("{name}.{i}.weight"), &l.weight));
                out.push((format!("{name}.{i}.bias"), &l.bias));
            }
        }
        out.push(("class_priors".to_string(), &self.priors.mu_y));
        out
    }
}

fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    let (r, ca, cb) = (a.rows(), a.cols(), b.cols());
    let mut data = Vec::with_capacity(r * (ca + cb));
    for i in 0..r {
        data.extend_from_slice(a.row(i));
        data.extend_from_slice(b.row(i));
    }
    Tensor::matrix(r, ca + cb, data).expect("shape matches")
}

impl Parameters for Model {
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.encoder.visit_mut(f);
        self.mean_head.visit_mut(f);
        self.logvar_head.visit_mut(f);
        self.decoder.visit_mut(f);
        self.priors.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Family;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture(family: Family, seed: u64) -> (Model, Batch, Noise) {
        let cfg = ModelConfig::new(6, 3, 3, 10.0, 0.5, 0.8, family).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::new(cfg, &Architecture { hidden: vec![5] }, &mut rng).unwrap();
        let x =
            Tensor::matrix(4, 6, (0..24).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let batch = Batch {
            x,
            labels: vec![0, 2, 1, 2],
        };
        let noise = Noise::draw(&cfg, 4, &mut rng);
        (model, batch, noise)
    }

    #[test]
    fn graph_encode_matches_straight_line() {
        let (model, batch, _) = fixture(Family::Ct3vae, 1);
        let enc = model.encode(&batch.x, &batch.labels).unwrap();
        assert_eq!(enc.mu_phi.shape(), &[4, 3]);
        let z = enc.mu_phi.clone();
        let recon = model.decode(&z, &batch.labels).unwrap();
        assert!(recon.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn gradients_match_finite_differences_for_every_family() {
        for family in Family::ALL {
            let (model, batch, noise) = fixture(family, 2);
            for (group, err) in model.gradient_check(&batch, &noise, 1e-5).unwrap() {
                assert!(err < 1e-4, "{family} {}: {err}", group.as_str());
            }
        }
    }

    #[test]
    fn loss_is_deterministic_and_graph_free() {
        let (model, batch, noise) = fixture(Family::T3vae, 3);
        let a = model.loss(&batch, &noise).unwrap();
        let b = model.loss(&batch, &noise).unwrap();
        assert_eq!(a, b);
        let mut m2 = model.clone();
        let c = m2.loss_and_grad(&batch, &noise).unwrap();
        assert_eq!(a, c);
    }
}
