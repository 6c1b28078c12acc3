//! `melgan-vc` subcommands: corpus preparation, training, conversion and
//! spectrogram plots.

use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::chunker::ChunkConfig;
use crate::config::{apply, parse_lines, KeyValue};
use crate::convert::{convert_file, translate_spectrogram};
use crate::dsp::cache::{read_all, write_record};
use crate::dsp::normalize::max_log_amplitude;
use crate::dsp::stft::frame_count;
use crate::dsp::{
    load_audio, spectrogram_to_waveform, to_log_normalized, waveform_to_mel, write_wav, DspConfig, MelSpectrogram,
    NormalizationStats,
};
use crate::error::{Error, Result};
use crate::trainer::{
    load_checkpoint, log_line, save_checkpoint, train, Dataset, RunConfig, StepReport, TrainHooks, TrainState,
};

#[derive(Debug, Parser)]
#[command(name = "melgan-vc", version, about = "Non-parallel mel-spectrogram domain translation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Identity term enabled.
    Voice,
    /// Identity term disabled.
    Music,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute normalized mel spectrograms for every WAV file in a directory.
    Prepare {
        #[arg(long)]
        input_dir: PathBuf,
        /// Spectrogram cache to write; the manifest goes next to it.
        #[arg(long)]
        output: PathBuf,
        /// `key = value` file; only frontend and crop keys are used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        hop_size: Option<usize>,
    },
    /// Train on two prepared corpora.
    Train {
        #[arg(long)]
        domain_a: PathBuf,
        #[arg(long)]
        domain_b: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run directory for checkpoints, the scalar log and audio samples.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "voice")]
        preset: Preset,
        #[arg(long)]
        total_steps: Option<u64>,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Translate a WAV file of any length.
    Convert {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one cached spectrogram as a binary PGM image.
    Plot {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source: PathBuf,
    /// Byte offset of the record in the cache file.
    pub offset: u64,
    pub frames: usize,
}

/// Index of a spectrogram cache.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    pub stats: NormalizationStats,
    pub config_digest: String,
    /// Frontend configuration as `key = value` text.
    pub dsp_config: String,
    pub crop_frames: usize,
    /// Files left out because they were unreadable or too short.
    pub skipped: usize,
}

pub fn manifest_path(cache: &Path) -> PathBuf {
    let mut name = cache.as_os_str().to_os_string();
    name.push(".manifest.json");
    PathBuf::from(name)
}

impl CorpusManifest {
    pub fn load(cache: &Path) -> Result<Self> {
        let path = manifest_path(cache);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format("corpus manifest", e.to_string()))
    }

    pub fn dsp(&self) -> Result<DspConfig> {
        let mut dsp = DspConfig::default();
        apply(&parse_lines(&self.dsp_config)?, &mut [&mut dsp])?;
        dsp.validate()?;
        if dsp.digest() != self.config_digest {
            return Err(Error::ConfigMismatch(format!(
                "manifest digest {} does not match its frontend configuration ({})",
                self.config_digest,
                dsp.digest()
            )));
        }
        Ok(dsp)
    }
}

/// A cache with its manifest, checked against each other.
pub fn load_corpus(cache: &Path) -> Result<(CorpusManifest, Vec<MelSpectrogram>)> {
    let manifest = CorpusManifest::load(cache)?;
    manifest.dsp()?;
    let file = File::open(cache).map_err(|e| Error::io(cache, e))?;
    let specs = read_all(std::io::BufReader::new(file), &manifest.config_digest)?;
    let consistent = specs.len() == manifest.entries.len()
        && specs
            .iter()
            .zip(&manifest.entries)
            .all(|(s, e)| s.frames() == e.frames && s.stats == manifest.stats);
    if !consistent {
        return Err(Error::format("corpus manifest", "entries do not match the cache records"));
    }
    Ok((manifest, specs))
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .is_some_and(|ext| ext.eq_ignore_ascii_case("wav"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn read_pairs(config: Option<&Path>) -> Result<Vec<(String, String)>> {
    match config {
        None => Ok(Vec::new()),
        Some(path) => parse_lines(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?),
    }
}

fn set_pair(pairs: &mut Vec<(String, String)>, key: &str, value: String) {
    pairs.retain(|(k, _)| k != key);
    pairs.push((key.to_string(), value));
}

/// Linear mel of a file that is long enough to crop, or the reason to skip it.
fn usable_mel(path: &Path, dsp: &DspConfig, chunk: &ChunkConfig) -> std::result::Result<Array2<f32>, String> {
    let wave = load_audio(path, dsp).map_err(|e| e.to_string())?;
    let frames = frame_count(wave.len(), dsp.hop_size);
    if frames < chunk.crop_frames || wave.len() < dsp.window_size {
        return Err(format!(
            "{frames} frames, need at least {} (and {} samples)",
            chunk.crop_frames, dsp.window_size
        ));
    }
    waveform_to_mel(&wave, dsp).map_err(|e| e.to_string())
}

/// Two passes over the directory: the first finds the corpus reference
/// level, the second writes normalized records.
pub fn prepare(input_dir: &Path, output: &Path, config: &RunConfig) -> Result<CorpusManifest> {
    let dsp = &config.dsp;
    let files = wav_files(input_dir)?;
    let mut kept = Vec::new();
    let mut ref_db = f64::NEG_INFINITY;
    for path in &files {
        match usable_mel(path, dsp, &config.chunk) {
            Ok(mel) => {
                ref_db = ref_db.max(max_log_amplitude(&mel, dsp));
                kept.push(path.clone());
            }
            Err(reason) => eprintln!("warning: skipping {}: {reason}", path.display()),
        }
    }
    if kept.is_empty() {
        return Err(Error::Config(format!(
            "no usable audio files in {} ({} candidates)",
            input_dir.display(),
            files.len()
        )));
    }
    let stats = NormalizationStats::new(dsp.min_db, ref_db)?;
    let file = File::create(output).map_err(|e| Error::io(output, e))?;
    let mut out = BufWriter::new(file);
    let mut entries = Vec::with_capacity(kept.len());
    let mut offset = 0u64;
    for path in &kept {
        let mel = usable_mel(path, dsp, &config.chunk).map_err(Error::Config)?;
        let spec = to_log_normalized(&mel, stats, dsp);
        let len = write_record(&mut out, &spec).map_err(|e| Error::io(output, e))?;
        entries.push(ManifestEntry {
            source: path.clone(),
            offset,
            frames: spec.frames(),
        });
        offset += len as u64;
    }
    out.flush().map_err(|e| Error::io(output, e))?;
    let manifest = CorpusManifest {
        entries,
        stats,
        config_digest: dsp.digest(),
        dsp_config: crate::config::render(&[dsp as &dyn KeyValue]),
        crop_frames: config.chunk.crop_frames,
        skipped: files.len() - kept.len(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format("corpus manifest", e.to_string()))?;
    let path = manifest_path(output);
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Run configuration for training on prepared corpora: frontend settings
/// come from the manifest, and a config file may only repeat them.
pub fn training_config(
    manifest_dsp: &DspConfig,
    pairs: &[(String, String)],
    preset: Preset,
    total_steps: Option<u64>,
) -> Result<RunConfig> {
    let dsp_keys = manifest_dsp.keys();
    let (dsp_pairs, mut rest): (Vec<_>, Vec<_>) = pairs.iter().cloned().partition(|(k, _)| dsp_keys.contains(&k.as_str()));
    let mut probe = manifest_dsp.clone();
    apply(&dsp_pairs, &mut [&mut probe])?;
    if &probe != manifest_dsp {
        return Err(Error::ConfigMismatch(
            "frontend keys in the config file differ from the prepared corpora".into(),
        ));
    }
    if preset == Preset::Music && !rest.iter().any(|(k, _)| k == "alpha") {
        rest.push(("alpha".into(), "0".into()));
    }
    if let Some(steps) = total_steps {
        set_pair(&mut rest, "total_steps", steps.to_string());
    }
    let mut config = RunConfig::for_hop(manifest_dsp.hop_size);
    config.dsp = manifest_dsp.clone();
    config.apply(&rest)?;
    config.validate()?;
    Ok(config)
}

/// Writes checkpoints, the scalar log and audio samples into a run directory.
pub struct RunDir {
    dir: PathBuf,
    log: BufWriter<File>,
    sample: MelSpectrogram,
    pub written: Vec<PathBuf>,
}

impl RunDir {
    pub fn new(dir: &Path, sample: MelSpectrogram) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let log_path = dir.join("train.log");
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            log: BufWriter::new(log),
            sample,
            written: Vec::new(),
        })
    }

    pub fn checkpoint_path(&self, step: u64) -> PathBuf {
        self.dir.join(format!("checkpoint_{step:08}.ckpt"))
    }
}

impl TrainHooks for RunDir {
    fn log(&mut self, step: u64, name: &str, value: f64) -> Result<()> {
        let path = self.dir.join("train.log");
        self.log
            .write_all(log_line(step, name, value).as_bytes())
            .map_err(|e| Error::io(&path, e))
    }

    fn checkpoint(&mut self, state: &TrainState) -> Result<()> {
        let path = self.checkpoint_path(state.step);
        save_checkpoint(state, &path)?;
        let latest = self.dir.join("latest.ckpt");
        fs::copy(&path, &latest).map_err(|e| Error::io(&latest, e))?;
        let translated = translate_spectrogram(&state.g, &self.sample, &state.config.chunk)?;
        let wave = spectrogram_to_waveform(&translated, &state.config.dsp)?;
        let sample = self.dir.join(format!("sample_{:08}.wav", state.step));
        write_wav(&sample, &wave)?;
        let log_path = self.dir.join("train.log");
        self.log.flush().map_err(|e| Error::io(&log_path, e))?;
        self.written.extend([path, sample]);
        Ok(())
    }

    fn after_step(&mut self, _state: &TrainState, _report: &StepReport) -> Result<bool> {
        Ok(true)
    }
}

/// Binary PGM with mel channel 0 on the bottom row.
pub fn pgm_bytes(values: &Array2<f32>) -> Vec<u8> {
    let (m, t) = values.dim();
    let mut out = format!("P5\n{t} {m}\n255\n").into_bytes();
    for row in (0..m).rev() {
        out.extend((0..t).map(|c| ((values[[row, c]] as f64 + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8));
    }
    out
}

/// Execute one subcommand; returns the paths it wrote.
pub fn execute(command: Command) -> Result<Vec<PathBuf>> {
    match command {
        Command::Prepare {
            input_dir,
            output,
            config,
            hop_size,
        } => {
            let mut pairs = read_pairs(config.as_deref())?;
            if let Some(h) = hop_size {
                set_pair(&mut pairs, "hop_size", h.to_string());
            }
            let config = RunConfig::from_pairs(&pairs)?;
            let manifest = prepare(&input_dir, &output, &config)?;
            if manifest.skipped > 0 {
                eprintln!("warning: skipped {} file(s)", manifest.skipped);
            }
            Ok(vec![output.clone(), manifest_path(&output)])
        }
        Command::Train {
            domain_a,
            domain_b,
            config,
            out,
            preset,
            total_steps,
            resume,
        } => {
            let (manifest_a, specs_a) = load_corpus(&domain_a)?;
            let (manifest_b, specs_b) = load_corpus(&domain_b)?;
            if manifest_a.config_digest != manifest_b.config_digest {
                return Err(Error::ConfigMismatch(format!(
                    "domain A was prepared with frontend {} and domain B with {}",
                    manifest_a.config_digest, manifest_b.config_digest
                )));
            }
            let mut state = match resume {
                Some(path) => {
                    let mut state = load_checkpoint(&path)?;
                    if state.config.dsp != manifest_a.dsp()? {
                        return Err(Error::ConfigMismatch("checkpoint and corpora use different frontends".into()));
                    }
                    if let Some(steps) = total_steps {
                        state.config.train.total_steps = steps;
                    }
                    state
                }
                None => {
                    let pairs = read_pairs(config.as_deref())?;
                    let config = training_config(&manifest_a.dsp()?, &pairs, preset, total_steps)?;
                    let ds = Dataset::new(specs_a.clone(), specs_b.clone(), &config.chunk)?;
                    TrainState::new(config, ds.stats)?
                }
            };
            let ds = Dataset::new(specs_a, specs_b, &state.config.chunk)?;
            if ds.stats != state.stats {
                return Err(Error::ConfigMismatch("checkpoint normalization differs from the corpora".into()));
            }
            let mut run = RunDir::new(&out, ds.domain_a[0].clone())?;
            train(&mut state, &ds, &mut run)?;
            let mut written = run.written;
            written.push(out.join("train.log"));
            Ok(written)
        }
        Command::Convert {
            checkpoint,
            input,
            out,
        } => {
            let state = load_checkpoint(&checkpoint)?;
            convert_file(&state, &input, &out)?;
            Ok(vec![out])
        }
        Command::Plot { cache, index, out } => {
            let digest = CorpusManifest::load(&cache).map(|m| m.config_digest).unwrap_or_default();
            let file = File::open(&cache).map_err(|e| Error::io(&cache, e))?;
            let specs = read_all(std::io::BufReader::new(file), &digest)?;
            let spec = specs.get(index).ok_or_else(|| {
                Error::OutOfRange(format!("index {index} but the cache holds {} spectrograms", specs.len()))
            })?;
            fs::write(&out, pgm_bytes(&spec.values)).map_err(|e| Error::io(&out, e))?;
            Ok(vec![out])
        }
    }
}

/// Parse arguments, run, print written paths; errors become a one-line
/// diagnostic and a nonzero exit code.
pub fn run<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match execute(cli.command) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
