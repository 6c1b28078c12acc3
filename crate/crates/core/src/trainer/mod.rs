//! Alternating discriminator and generator+siamese updates, batch sampling,
//! logging hooks and checkpoints.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chunker::{random_crop, split_crop, Chunk, ChunkConfig, TrainingCrop};
use crate::config::{apply, key_value_struct, parse_lines, parse_value, render, KeyValue};
use crate::dsp::{DspConfig, MelSpectrogram, NormalizationStats};
use crate::error::{Error, Result};
use crate::losses::{
    d_hinge_grad, d_hinge_loss, g_adv_grad, g_adv_loss, identity_grad, identity_loss, margin_grad, total_g_loss,
    total_s_loss, travel_grad, LossWeights,
};
use crate::models::{matrices_to_tensor, Discriminator, Generator, ModelConfig, Siamese};
use crate::nn::{Adam, AdamConfig, Mode, Tensor};

const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_d: f64,
    pub lr_gs: f64,
    /// Discriminator updates before each generator+siamese update.
    pub d_updates_per_gs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Generator+siamese updates in a full run.
    pub total_steps: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub seed: u64,
}

key_value_struct!(TrainConfig {
    batch_size,
    lr_d,
    lr_gs,
    d_updates_per_gs,
    adam_beta1,
    adam_beta2,
    total_steps,
    checkpoint_every,
    log_every,
    seed,
});

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr_d: 0.0004,
            lr_gs: 0.0001,
            d_updates_per_gs: 2,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            total_steps: 10_000,
            checkpoint_every: 1_000,
            log_every: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2");
        }
        if !(self.lr_d > 0.0 && self.lr_gs > 0.0) {
            return fail("learning rates must be positive");
        }
        if self.d_updates_per_gs == 0 {
            return fail("d_updates_per_gs must be at least 1");
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return fail("adam betas must lie in [0, 1)");
        }
        if self.checkpoint_every == 0 || self.log_every == 0 {
            return fail("checkpoint_every and log_every must be at least 1");
        }
        Ok(())
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: ADAM_EPS,
        }
    }
}

/// Every configuration section of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dsp: DspConfig,
    pub chunk: ChunkConfig,
    pub model: ModelConfig,
    pub losses: LossWeights,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_hop(192)
    }
}

impl RunConfig {
    /// Defaults with every hop-derived size following `hop_size`.
    pub fn for_hop(hop_size: usize) -> Self {
        Self {
            dsp: DspConfig::with_hop(hop_size),
            chunk: ChunkConfig::for_hop(hop_size),
            model: ModelConfig::default(),
            losses: LossWeights::default(),
            train: TrainConfig::default(),
        }
    }

    /// Parse `key = value` text. Unlisted hop-derived sizes follow
    /// `hop_size`; unknown keys are an error.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_lines(text)?)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let hop = match pairs.iter().find(|(k, _)| k == "hop_size") {
            Some((k, v)) => parse_value(k, v)?,
            None => DspConfig::default().hop_size,
        };
        let mut cfg = Self::for_hop(hop);
        cfg.apply(pairs)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        apply(
            pairs,
            &mut [
                &mut self.dsp,
                &mut self.chunk,
                &mut self.model,
                &mut self.losses,
                &mut self.train,
            ],
        )
    }

    pub fn to_text(&self) -> String {
        render(&[
            &self.dsp as &dyn KeyValue,
            &self.chunk,
            &self.model,
            &self.losses,
            &self.train,
        ])
    }

    pub fn validate(&self) -> Result<()> {
        self.dsp.validate()?;
        self.chunk.validate()?;
        self.losses.validate()?;
        self.train.validate()?;
        self.model.validate_chunk(self.dsp.mel_channels, self.chunk.half())
    }
}

/// Both domains under one normalization range.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub domain_a: Vec<MelSpectrogram>,
    pub domain_b: Vec<MelSpectrogram>,
    pub stats: NormalizationStats,
}

impl Dataset {
    /// Re-express both domains under the widest shared range and check that
    /// every spectrogram can be cropped.
    pub fn new(domain_a: Vec<MelSpectrogram>, domain_b: Vec<MelSpectrogram>, chunk: &ChunkConfig) -> Result<Self> {
        for (name, domain) in [("A", &domain_a), ("B", &domain_b)] {
            if domain.is_empty() {
                return Err(Error::Config(format!("domain {name} has no spectrograms")));
            }
        }
        let all = || domain_a.iter().chain(&domain_b);
        let first = &domain_a[0];
        for s in all() {
            if s.channels() != first.channels() {
                return Err(Error::shape(
                    format!("{} mel channels", first.channels()),
                    format!("{} mel channels", s.channels()),
                ));
            }
            if s.config_digest != first.config_digest {
                return Err(Error::ConfigMismatch(format!(
                    "spectrograms from frontend configs {} and {}",
                    first.config_digest, s.config_digest
                )));
            }
            if s.frames() < chunk.crop_frames {
                return Err(Error::TooShort {
                    found: s.frames(),
                    need: chunk.crop_frames,
                    unit: "frames",
                });
            }
        }
        let min_db = all().map(|s| s.stats.min_db).fold(f64::INFINITY, f64::min);
        let ref_db = all().map(|s| s.stats.ref_db).fold(f64::NEG_INFINITY, f64::max);
        let stats = NormalizationStats::new(min_db, ref_db)?;
        let shared = |d: Vec<MelSpectrogram>| -> Vec<MelSpectrogram> {
            d.into_iter()
                .map(|s| if s.stats == stats { s } else { s.renormalize(stats) })
                .collect()
        };
        Ok(Self {
            domain_a: shared(domain_a),
            domain_b: shared(domain_b),
            stats,
        })
    }

    pub fn mel_channels(&self) -> usize {
        self.domain_a[0].channels()
    }
}

/// One minibatch: source crops, target crops and identity chunks.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub crops_a: Vec<TrainingCrop>,
    pub crops_b: Vec<TrainingCrop>,
    pub id_chunks: Vec<Chunk>,
}

fn draw_crops<R: Rng + ?Sized>(
    domain: &[MelSpectrogram],
    count: usize,
    cfg: &ChunkConfig,
    rng: &mut R,
) -> Result<Vec<TrainingCrop>> {
    (0..count)
        .map(|_| {
            let id = rng.gen_range(0..domain.len());
            random_crop(&domain[id], id, cfg, rng)
        })
        .collect()
}

/// Uniform spectrogram choice then a uniform crop, `batch_size` times per
/// domain; identity chunks are independent half-width slices of domain B.
pub fn sample_training_batch<R: Rng + ?Sized>(
    ds: &Dataset,
    cfg: &TrainConfig,
    chunk: &ChunkConfig,
    rng: &mut R,
) -> Result<Batch> {
    let crops_a = draw_crops(&ds.domain_a, cfg.batch_size, chunk, rng)?;
    let crops_b = draw_crops(&ds.domain_b, cfg.batch_size, chunk, rng)?;
    let half = ChunkConfig {
        crop_frames: chunk.half(),
    };
    let id_chunks = draw_crops(&ds.domain_b, cfg.batch_size, &half, rng)?
        .into_iter()
        .map(|c| Chunk { values: c.values })
        .collect();
    Ok(Batch {
        crops_a,
        crops_b,
        id_chunks,
    })
}

/// Losses of one generator+siamese update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GsLosses {
    pub g_total: f64,
    pub s_total: f64,
    pub adv: f64,
    pub identity: f64,
    pub travel: f64,
    pub margin: f64,
}

/// Everything computed during one outer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub d_losses: Vec<f64>,
    pub gs: GsLosses,
}

impl StepReport {
    /// Named scalars written to the log.
    pub fn scalars(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("d_loss", *self.d_losses.last().unwrap_or(&f64::NAN)),
            ("g_loss", self.gs.g_total),
            ("s_loss", self.gs.s_total),
            ("g_adv", self.gs.adv),
            ("identity", self.gs.identity),
            ("travel", self.gs.travel),
            ("margin", self.gs.margin),
        ]
    }
}

/// One scalar log line: `step<TAB>name<TAB>value`.
pub fn log_line(step: u64, name: &str, value: f64) -> String {
    format!("{step}\t{name}\t{value}\n")
}

/// Networks, optimizer moments, step counter and sampling RNG.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: RunConfig,
    pub stats: NormalizationStats,
    pub g: Generator<f32>,
    pub d: Discriminator<f32>,
    pub s: Siamese<f32>,
    pub adam_g: Adam<f32>,
    pub adam_d: Adam<f32>,
    pub adam_s: Adam<f32>,
    /// Completed generator+siamese updates.
    pub step: u64,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    /// Fresh networks initialized from the configured seed; the same RNG
    /// stream then drives batch sampling.
    pub fn new(config: RunConfig, stats: NormalizationStats) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        let g = Generator::new(&config.model, &mut rng)?;
        let d = Discriminator::new(&config.model, &mut rng)?;
        let s = Siamese::new(&config.model, &mut rng)?;
        let t = &config.train;
        Ok(Self {
            adam_g: Adam::new(t.adam(t.lr_gs), &g.store),
            adam_d: Adam::new(t.adam(t.lr_d), &d.store),
            adam_s: Adam::new(t.adam(t.lr_gs), &s.store),
            g,
            d,
            s,
            config,
            stats,
            step: 0,
            rng,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.g.store.is_finite() && self.d.store.is_finite() && self.s.store.is_finite()
    }
}

fn crops_tensor(crops: &[TrainingCrop]) -> Result<Tensor<f32>> {
    matrices_to_tensor(&crops.iter().map(|c| &c.values).collect::<Vec<_>>())
}

/// `[left_0, right_0, left_1, right_1, ...]` as one batch.
fn halves_tensor(crops: &[TrainingCrop]) -> Result<Tensor<f32>> {
    let mut halves = Vec::with_capacity(2 * crops.len());
    for c in crops {
        let (l, r) = split_crop(c)?;
        halves.push(l.values);
        halves.push(r.values);
    }
    matrices_to_tensor(&halves.iter().collect::<Vec<_>>())
}

/// Inverse pairing of [`halves_tensor`]: adjacent items joined along time.
fn join_halves(halves: &Tensor<f32>) -> Tensor<f32> {
    let items: Vec<Tensor<f32>> = (0..halves.batch() / 2)
        .map(|b| {
            let l = halves.slice_batch(2 * b, 1);
            let r = halves.slice_batch(2 * b + 1, 1);
            Tensor::cat_width(&[&l, &r])
        })
        .collect();
    Tensor::stack(&items)
}

fn split_halves(crops: &Tensor<f32>) -> Tensor<f32> {
    let half = crops.width() / 2;
    let items: Vec<Tensor<f32>> = (0..crops.batch())
        .flat_map(|b| {
            let item = crops.slice_batch(b, 1);
            [item.slice_width(0, half), item.slice_width(half, half)]
        })
        .collect();
    Tensor::stack(&items)
}

fn finite(value: f32, what: &str, step: u64) -> Result<f64> {
    if value.is_finite() {
        Ok(value as f64)
    } else {
        Err(Error::NonFinite(format!("{what} at step {step} ({value})")))
    }
}

/// One discriminator update on `batch`. The generator runs in inference mode
/// and receives no gradient.
pub fn d_step(state: &mut TrainState, batch: &Batch) -> Result<f64> {
    state.d.power_iterate();
    let fake = join_halves(&state.g.infer(&halves_tensor(&batch.crops_a)?)?);
    let real = crops_tensor(&batch.crops_b)?;
    let (real_scores, real_cache) = state.d.forward(&real)?;
    let (fake_scores, fake_cache) = state.d.forward(&fake)?;
    let loss = finite(
        d_hinge_loss(real_scores.data(), fake_scores.data())?,
        "discriminator loss",
        state.step,
    )?;
    let (g_real, g_fake) = d_hinge_grad(real_scores.data(), fake_scores.data())?;
    state
        .d
        .backward(&real_cache, &Tensor::from_vec(real_scores.shape(), g_real), true);
    state
        .d
        .backward(&fake_cache, &Tensor::from_vec(fake_scores.shape(), g_fake), true);
    state.adam_d.step(&mut state.d.store);
    Ok(loss)
}

/// One joint generator+siamese update on `batch`; the discriminator only
/// passes gradients through.
pub fn gs_step(state: &mut TrainState, batch: &Batch) -> Result<GsLosses> {
    let w = state.config.losses;
    let step = state.step;
    let beta = w.beta as f32;
    state.g.power_iterate();

    let src = halves_tensor(&batch.crops_a)?;
    let (translated, g_cache) = state.g.forward(&src, Mode::Train)?;

    let (scores, d_cache) = state.d.forward(&join_halves(&translated))?;
    let adv = finite(g_adv_loss(scores.data())?, "adversarial loss", step)?;
    let g_scores = Tensor::from_vec(scores.shape(), g_adv_grad(scores.data())?);
    let mut g_translated = split_halves(&state.d.backward(&d_cache, &g_scores, false));

    let (z_src, s_src_cache) = state.s.forward(&src, Mode::Train)?;
    let (z_tr, s_tr_cache) = state.s.forward(&translated, Mode::Train)?;
    let (travel, mut gz_src, mut gz_tr) = travel_grad(&z_src, &z_tr)?;
    let (margin, mut gz_margin) = margin_grad(&z_src, w.delta as f32)?;
    let travel = finite(travel, "transformation-vector loss", step)?;
    let margin = finite(margin, "margin loss", step)?;
    gz_src.scale(beta);
    gz_margin.scale(w.gamma as f32);
    gz_src.add_assign(&gz_margin);
    gz_tr.scale(beta);
    state.s.backward(&s_src_cache, &gz_src, true);
    let g_from_s = state.s.backward(&s_tr_cache, &gz_tr, true);
    g_translated.add_assign(&g_from_s);
    state.g.backward(&g_cache, &g_translated, true);

    let mut identity = 0.0;
    if w.alpha > 0.0 {
        let target = matrices_to_tensor(&batch.id_chunks.iter().map(|c| &c.values).collect::<Vec<_>>())?;
        let (out, id_cache) = state.g.forward(&target, Mode::Train)?;
        identity = finite(identity_loss(&out, &target)?, "identity loss", step)?;
        let mut grad = identity_grad(&out, &target)?;
        grad.scale(w.alpha as f32);
        state.g.backward(&id_cache, &grad, true);
    }

    state.adam_g.step(&mut state.g.store);
    state.adam_s.step(&mut state.s.store);
    Ok(GsLosses {
        g_total: total_g_loss(adv, identity, travel, &w)?,
        s_total: total_s_loss(travel, margin, &w)?,
        adv,
        identity,
        travel,
        margin,
    })
}

/// Observers of a training run. Every method defaults to doing nothing.
pub trait TrainHooks {
    fn log(&mut self, _step: u64, _name: &str, _value: f64) -> Result<()> {
        Ok(())
    }

    fn checkpoint(&mut self, _state: &TrainState) -> Result<()> {
        Ok(())
    }

    /// Runs after every outer step; returning `false` ends the run early.
    fn after_step(&mut self, _state: &TrainState, _report: &StepReport) -> Result<bool> {
        Ok(true)
    }
}

/// Hooks that ignore everything.
pub struct NoHooks;

impl TrainHooks for NoHooks {}

/// One outer step: `d_updates_per_gs` discriminator updates on fresh
/// batches, then one generator+siamese update on another fresh batch.
pub fn train_step(state: &mut TrainState, ds: &Dataset) -> Result<StepReport> {
    let train = state.config.train.clone();
    let chunk = state.config.chunk;
    let mut d_losses = Vec::with_capacity(train.d_updates_per_gs);
    for _ in 0..train.d_updates_per_gs {
        let batch = sample_training_batch(ds, &train, &chunk, &mut state.rng)?;
        d_losses.push(d_step(state, &batch)?);
    }
    let batch = sample_training_batch(ds, &train, &chunk, &mut state.rng)?;
    let gs = gs_step(state, &batch)?;
    state.step += 1;
    Ok(StepReport {
        step: state.step,
        d_losses,
        gs,
    })
}

/// Run until `total_steps`, checkpointing at the start of a fresh run, every
/// `checkpoint_every` steps and at the end.
pub fn train(state: &mut TrainState, ds: &Dataset, hooks: &mut dyn TrainHooks) -> Result<()> {
    if ds.mel_channels() != state.config.dsp.mel_channels {
        return Err(Error::shape(
            format!("{} mel channels", state.config.dsp.mel_channels),
            format!("{} mel channels", ds.mel_channels()),
        ));
    }
    let mut saved_at = None;
    if state.step == 0 {
        hooks.checkpoint(state)?;
        saved_at = Some(0);
    }
    let train = state.config.train.clone();
    while state.step < train.total_steps {
        let report = train_step(state, ds)?;
        if report.step % train.log_every == 0 {
            for (name, value) in report.scalars() {
                hooks.log(report.step, name, value)?;
            }
        }
        if report.step % train.checkpoint_every == 0 {
            hooks.checkpoint(state)?;
            saved_at = Some(report.step);
        }
        if !hooks.after_step(state, &report)? {
            break;
        }
    }
    if saved_at != Some(state.step) {
        hooks.checkpoint(state)?;
    }
    Ok(())
}
