use std::fs;
use std::path::{Path, PathBuf};

use condfip_core::decoder::init_decoder;
use condfip_core::encoder::init_encoder;
use condfip_core::engine::{predict_noise as abduct, EngineError, LearnedModel, MarginalNoiseModel, Session};
use condfip_core::eval::{real_data_protocol, rmse_plot, run_benchmark, BenchmarkSuiteConfig, EvalError, Predictor, Task};
use condfip_core::kv::KvError;
use condfip_core::model::{ModelConfig, ModelError};
use condfip_core::sim::io::{load_dataset, save_dataset, FormatError};
use condfip_core::sim::{sample_scm, simulate_dataset, Dataset, DistributionTag, MechanismMix, ScmDistributionConfig, SimError, Standardization};
use condfip_core::train::{frozen_encoder, render_log, run_training, Checkpoint, CheckpointError, Stage, TrainConfig, TrainError};
use condfip_core::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::Global;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

impl From<KvError> for CliError {
    fn from(e: KvError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite(_) => CliError::Numeric(e.to_string()),
            ModelError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Model(m) => m.into(),
            EngineError::NonFinite => CliError::Numeric(e.to_string()),
            EngineError::InvalidNode { .. } | EngineError::DuplicateNode(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Engine(e) => e.into(),
            EvalError::Model(e) => e.into(),
            EvalError::Config(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn parse_preset(preset: &str) -> Result<(DistributionTag, MechanismMix)> {
    let bad = || CliError::Usage(format!("unknown preset `{preset}` (expected in|out followed by -lin, -rff or -both)"));
    let (t, m) = preset.split_once('-').ok_or_else(bad)?;
    Ok((DistributionTag::from_tag(t).ok_or_else(bad)?, MechanismMix::from_tag(m).ok_or_else(bad)?))
}

pub fn simulate(g: &Global, preset: &str, d: usize, n: usize, out: &Path) -> Result<()> {
    let (tag, mix) = parse_preset(preset)?;
    if d == 0 || n == 0 {
        return Err(CliError::Usage("--d and --n must be positive".into()));
    }
    let seed = g.seed.unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scm = sample_scm(&ScmDistributionConfig::preset(tag, d, mix), &mut rng)?;
    let ds = simulate_dataset(&scm, n, seed, &mut rng)?;
    save_dataset(&ds, out)?;
    println!("{}: {n} rows, {d} nodes, {} edges", out.display(), ds.dag.edge_count());
    Ok(())
}

fn diagnostic_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".nonfinite");
    out.with_file_name(name)
}

pub fn train(g: &Global, stage: &str, config: Option<&Path>, encoder: Option<&Path>, out: &Path, log: Option<&Path>) -> Result<()> {
    let stage = Stage::from_tag(stage).ok_or_else(|| CliError::Usage(format!("unknown stage `{stage}`")))?;
    let mut c = match config {
        Some(p) => TrainConfig::parse(&read_text(p)?)?,
        None => TrainConfig::desk(stage),
    };
    c.stage = stage;
    if let Some(seed) = g.seed {
        c.seed = seed;
    }
    let frozen = match stage {
        Stage::Encoder => None,
        Stage::Decoder => {
            let path = encoder
                .or(g.checkpoint.as_deref())
                .ok_or_else(|| CliError::Usage("the decoder stage needs --encoder <checkpoint>".into()))?;
            let ckpt = Checkpoint::load(path)?;
            let enc = frozen_encoder(&ckpt, c.encoder_ema);
            let expected = init_encoder(&c.model, &mut ChaCha8Rng::seed_from_u64(0));
            ckpt.check_against(&expected)?;
            Some(enc)
        }
    };
    let mut save_error = None;
    let outcome = run_training(&c, frozen.as_ref(), |ckpt| {
        if let Err(e) = ckpt.save(out) {
            save_error.get_or_insert(e);
        }
    });
    if let Some(e) = save_error {
        return Err(e.into());
    }
    match outcome {
        Ok(o) => {
            let text = render_log(&o.log);
            match log {
                Some(p) => write_text(p, &text)?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Err(TrainError::NonFinite { step, checkpoint }) => {
            let path = diagnostic_path(out);
            checkpoint.save(&path)?;
            Err(CliError::Numeric(format!("non-finite loss at step {step}; state written to {}", path.display())))
        }
        Err(TrainError::Config(e)) => Err(e.into()),
        Err(TrainError::Model(e)) => Err(e.into()),
        Err(e) => Err(CliError::Data(e.to_string())),
    }
}

struct LoadedModel {
    config: ModelConfig,
    encoder: ParamStore<f32>,
    decoder: ParamStore<f32>,
    step: u64,
}

fn load_model(g: &Global) -> Result<LoadedModel> {
    let path = g.checkpoint.as_deref().ok_or_else(|| CliError::Usage("--checkpoint is required".into()))?;
    let ckpt = Checkpoint::load(path)?;
    let config = ModelConfig::desk()
        .with_entries(ckpt.config.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut expected = init_encoder(&config, &mut rng);
    expected.extend(init_decoder(&config, &mut rng));
    ckpt.check_against(&expected).map_err(|e| match e {
        CheckpointError::Missing(_) => CliError::Data(format!("{}: not a decoder-stage checkpoint ({e})", path.display())),
        other => other.into(),
    })?;
    let weights = ckpt.weights(g.ema);
    Ok(LoadedModel { config, encoder: weights.filter_prefix("enc."), decoder: weights, step: ckpt.adam.step })
}

pub fn eval(g: &Global, suite: Option<&Path>, predictor: &str, out_dir: &Path) -> Result<()> {
    let mut s = match suite {
        Some(p) => BenchmarkSuiteConfig::parse(&read_text(p)?)?,
        None => BenchmarkSuiteConfig::default(),
    };
    if let Some(seed) = g.seed {
        s.seed = seed;
    }
    s.threads = g.threads.max(1);
    let mut meta = vec![("predictor".to_string(), predictor.to_string())];
    let loaded;
    let p = match predictor {
        "learned" => {
            loaded = load_model(g)?;
            let path = g.checkpoint.as_deref().expect("checked by load_model");
            meta.push(("checkpoint".into(), path.display().to_string()));
            meta.push(("checkpoint_step".into(), loaded.step.to_string()));
            meta.push(("ema".into(), g.ema.to_string()));
            Predictor::Learned { config: &loaded.config, encoder: &loaded.encoder, decoder: &loaded.decoder }
        }
        "oracle" => Predictor::Oracle,
        "zero" => Predictor::Zero,
        other => return Err(CliError::Usage(format!("unknown predictor `{other}`"))),
    };
    let mut report = run_benchmark(&s, p)?;
    report.meta.splice(0..0, meta);
    fs::create_dir_all(out_dir).map_err(|e| CliError::Data(format!("{}: {e}", out_dir.display())))?;
    write_text(&out_dir.join("report.tsv"), &report.render())?;
    for task in Task::ALL {
        write_text(&out_dir.join(format!("{}.svg", task.name())), &rmse_plot(&report, task))?;
    }
    for a in &report.aggregates {
        println!(
            "{}\t{}\td={}\t{:.4} ({:.4})\tzero {:.4}",
            a.task.name(),
            a.scenario.name(),
            a.d,
            a.mean,
            a.stderr,
            a.baseline_mean
        );
    }
    Ok(())
}

fn with_meta(source: &Dataset, generator: &str, x: ndarray::Array2<f64>, noise: ndarray::Array2<f64>, seed: u64) -> Result<Dataset> {
    let mut meta = source.meta.clone();
    meta.generator = generator.to_string();
    meta.seed = seed;
    meta.row_start = 0;
    meta.standardization = None;
    Ok(Dataset::new(x, Some(noise), source.dag.clone(), meta)?)
}

fn observed(path: &Path) -> Result<Dataset> {
    let ds = load_dataset(path)?;
    let x = match &ds.meta.standardization {
        Some(st) => st.invert(&ds.x),
        None => ds.x.clone(),
    };
    Ok(Dataset { x, meta: ds.meta.clone(), ..ds })
}

pub fn predict_noise(g: &Global, data: &Path, out: &Path) -> Result<()> {
    let m = load_model(g)?;
    let ds = observed(data)?;
    let stats = Standardization::fit(&ds.x);
    let model = LearnedModel::condition(&m.config, &m.encoder, &m.decoder, &stats.apply(&ds.x), &ds.dag)?;
    let noise = Session { model: &model, stats }.predict_noise(&ds.x)?;
    save_dataset(&with_meta(&ds, "predict-noise", ds.x.clone(), noise, ds.meta.seed)?, out)?;
    Ok(())
}

pub fn generate(g: &Global, data: &Path, clamp: Option<(usize, f64)>, rows: Option<usize>, out: &Path) -> Result<()> {
    let m = load_model(g)?;
    let ds = observed(data)?;
    if let Some((node, _)) = clamp {
        if node >= ds.d() {
            return Err(CliError::Usage(format!("--node {node} out of range for {} nodes", ds.d())));
        }
    }
    let stats = Standardization::fit(&ds.x);
    let x_std = stats.apply(&ds.x);
    let model = LearnedModel::condition(&m.config, &m.encoder, &m.decoder, &x_std, &ds.dag)?;
    let marginals = MarginalNoiseModel::fit(&abduct(&model, &x_std)?)?;
    let seed = g.seed.unwrap_or(0);
    let noise = stats.invert_noise(&marginals.sample(rows.unwrap_or(ds.n()), &mut ChaCha8Rng::seed_from_u64(seed)));
    let session = Session { model: &model, stats };
    let (x, generator) = match clamp {
        None => (session.generate(&noise)?, "generate".to_string()),
        Some((node, value)) => (session.intervene(&noise, &[(node, value)])?, format!("intervene({node}={value})")),
    };
    save_dataset(&with_meta(&ds, &generator, x, noise, seed)?, out)?;
    Ok(())
}

pub fn real_data(g: &Global, data: &Path, train_fraction: f64) -> Result<()> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CliError::Usage("--train-fraction must lie in (0, 1)".into()));
    }
    let m = load_model(g)?;
    let ds = observed(data)?;
    let n_train = ((ds.n() as f64 * train_fraction).round() as usize).clamp(2, ds.n().saturating_sub(1).max(2));
    if n_train >= ds.n() {
        return Err(CliError::Data(format!("{} rows are too few to split", ds.n())));
    }
    let (train, test) = ds.split(n_train)?;
    let stats = Standardization::fit(&train.x);
    let (tr, te) = (stats.apply(&train.x), stats.apply(&test.x));
    let model = LearnedModel::condition(&m.config, &m.encoder, &m.decoder, &tr, &ds.dag)?;
    let r = real_data_protocol(&model, &tr, &te, &mut ChaCha8Rng::seed_from_u64(g.seed.unwrap_or(0)))?;
    println!("generated\t{}\nreconstructed\t{}\ntrain\t{}", r.generated, r.reconstructed, r.train);
    Ok(())
}
