use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use crate::engine::{generate, generate_interventional, predict_noise, FunctionalModel, InterventionSpec, LearnedModel, OracleModel, ZeroModel};
use crate::kv::{self, KvError};
use crate::model::ModelConfig;
use crate::rng::task_rng;
use crate::sim::{sample_scm, simulate_dataset, DistributionTag, MechanismKind, MechanismMix, Scm, ScmDistributionConfig, Standardization};
use crate::tensor::ParamStore;

use super::metrics::rmse;
use super::report::{DatasetResult, EvalReport, Task};
use super::EvalError;

const BENCH_STREAM: u64 = 0xbe7c;

/// One test-distribution cell: IN/OUT times LIN/RFF. Sorts as LIN IN, RFF IN, LIN OUT, RFF OUT.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Scenario {
    pub distribution: DistributionTag,
    pub mechanism: MechanismKind,
}

impl Scenario {
    pub fn new(distribution: DistributionTag, mechanism: MechanismKind) -> Self {
        Self { distribution, mechanism }
    }

    pub fn all() -> Vec<Scenario> {
        let mut v = Vec::new();
        for t in [DistributionTag::In, DistributionTag::Out] {
            for m in [MechanismKind::Linear, MechanismKind::Rff] {
                v.push(Scenario::new(t, m));
            }
        }
        v
    }

    /// `in-lin`, `out-rff`, ...
    pub fn name(&self) -> String {
        format!("{}-{}", self.distribution.tag(), self.mechanism.tag()).to_lowercase()
    }

    pub fn from_name(s: &str) -> Option<Self> {
        let (t, m) = s.split_once('-')?;
        Some(Self::new(DistributionTag::from_tag(t)?, MechanismKind::from_tag(&m.to_uppercase())?))
    }

    fn mix(&self) -> MechanismMix {
        match self.mechanism {
            MechanismKind::Linear => MechanismMix::Linear,
            MechanismKind::Rff => MechanismMix::Rff,
        }
    }

    fn index(&self) -> u64 {
        (self.distribution as u64) * 2 + self.mechanism as u64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkSuiteConfig {
    pub node_counts: Vec<usize>,
    pub datasets_per_scenario: usize,
    /// Rows used to build the condition.
    pub n_conditioning: usize,
    /// Held-out rows the tasks are scored on.
    pub n_eval: usize,
    pub scenarios: Vec<Scenario>,
    /// Clamp value in conditioning-split standard deviations above the node mean.
    pub intervention_shift: f64,
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    pub threads: usize,
}

impl Default for BenchmarkSuiteConfig {
    fn default() -> Self {
        Self {
            node_counts: vec![10, 20, 50, 100],
            datasets_per_scenario: 6,
            n_conditioning: 400,
            n_eval: 400,
            scenarios: Scenario::all(),
            intervention_shift: 1.0,
            seed: 0,
            threads: 1,
        }
    }
}

impl BenchmarkSuiteConfig {
    /// Larger held-out sets: 1000 test rows split evenly.
    pub fn more_samples() -> Self {
        Self { n_conditioning: 500, n_eval: 500, ..Self::default() }
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        vec![
            ("node_counts".into(), self.node_counts.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")),
            ("datasets_per_scenario".into(), self.datasets_per_scenario.to_string()),
            ("n_conditioning".into(), self.n_conditioning.to_string()),
            ("n_eval".into(), self.n_eval.to_string()),
            ("scenarios".into(), self.scenarios.iter().map(|s| s.name()).collect::<Vec<_>>().join(",")),
            ("intervention_shift".into(), self.intervention_shift.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut c = Self::default();
        for (k, v) in kv::parse(text)? {
            match k.as_str() {
                "node_counts" => c.node_counts = kv::list(&k, &v)?,
                "datasets_per_scenario" => c.datasets_per_scenario = kv::value(&k, &v)?,
                "n_test" => {
                    let n: usize = kv::value(&k, &v)?;
                    c.n_conditioning = n / 2;
                    c.n_eval = n - n / 2;
                }
                "n_conditioning" => c.n_conditioning = kv::value(&k, &v)?,
                "n_eval" => c.n_eval = kv::value(&k, &v)?,
                "scenarios" => {
                    c.scenarios = v
                        .split(',')
                        .map(|s| Scenario::from_name(s.trim()).ok_or_else(|| KvError::Value { key: k.clone(), value: s.into() }))
                        .collect::<Result<_, _>>()?
                }
                "intervention_shift" => c.intervention_shift = kv::value(&k, &v)?,
                "seed" => c.seed = kv::value(&k, &v)?,
                "threads" => c.threads = kv::value(&k, &v)?,
                _ => return Err(KvError::UnknownKey(k)),
            }
        }
        if c.n_conditioning < 2 || c.n_eval == 0 || c.node_counts.contains(&0) {
            return Err(KvError::Value { key: "sizes".into(), value: format!("{}/{}", c.n_conditioning, c.n_eval) });
        }
        Ok(c)
    }
}

/// Which functional model the benchmark scores.
#[derive(Clone, Copy)]
pub enum Predictor<'a> {
    Learned { config: &'a ModelConfig, encoder: &'a ParamStore<f32>, decoder: &'a ParamStore<f32> },
    /// The simulator's own mechanism.
    Oracle,
    Zero,
}

impl Predictor<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Predictor::Learned { .. } => "learned",
            Predictor::Oracle => "oracle",
            Predictor::Zero => "zero",
        }
    }
}

/// A simulated test dataset split into conditioning and evaluation rows, in
/// standardized units of the conditioning split.
pub struct TestCase {
    pub scm: Scm,
    pub stats: Standardization,
    pub conditioning: Array2<f64>,
    pub eval_x: Array2<f64>,
    pub eval_noise: Array2<f64>,
    /// Clamped node and its standardized value.
    pub intervention: (usize, f64),
    /// Ground-truth interventional rows for `eval_noise`, standardized.
    pub eval_do: Array2<f64>,
}

pub fn test_case(suite: &BenchmarkSuiteConfig, scenario: Scenario, d: usize, index: usize) -> Result<TestCase, EvalError> {
    let stream = BENCH_STREAM ^ (scenario.index() << 32) ^ ((d as u64) << 8);
    let mut rng = task_rng(suite.seed, stream, index as u64);
    let dist = ScmDistributionConfig::preset(scenario.distribution, d, scenario.mix());
    let scm = sample_scm(&dist, &mut rng)?;
    let n = suite.n_conditioning + suite.n_eval;
    let ds = simulate_dataset(&scm, n, suite.seed, &mut rng)?;
    let (cond, eval) = ds.split(suite.n_conditioning)?;
    let stats = Standardization::fit(&cond.x);
    let non_leaves: Vec<usize> = (0..d).filter(|&i| !scm.dag().is_leaf(i)).collect();
    let node = if non_leaves.is_empty() { rng.gen_range(0..d) } else { non_leaves[rng.gen_range(0..non_leaves.len())] };
    let raw_value = stats.mean[node] + suite.intervention_shift * stats.scale[node];
    let raw_noise = eval.noise.clone().expect("simulated data has noise");
    let truth_do = scm.intervene(node, raw_value)?.generate(&raw_noise)?;
    Ok(TestCase {
        stats: stats.clone(),
        conditioning: stats.apply(&cond.x),
        eval_x: stats.apply(&eval.x),
        eval_noise: stats.apply_noise(&raw_noise),
        intervention: (node, stats.value(node, raw_value)),
        eval_do: stats.apply(&truth_do),
        scm,
    })
}

/// RMSE of the three tasks for one model on one test case: noise, generation, intervention.
pub fn score_case(model: &dyn FunctionalModel, case: &TestCase) -> Result<[f64; 3], EvalError> {
    let d = case.scm.d();
    let noise = rmse(&case.eval_noise, &predict_noise(model, &case.eval_x)?)?;
    let gen = rmse(&case.eval_x, &generate(model, &case.eval_noise)?)?;
    let spec = InterventionSpec::single(case.intervention.0, case.intervention.1, d)?;
    let int = rmse(&case.eval_do, &generate_interventional(model, &case.eval_noise, &spec)?)?;
    Ok([noise, gen, int])
}

fn evaluate_case(predictor: Predictor<'_>, case: &TestCase) -> Result<([f64; 3], [f64; 3]), EvalError> {
    let baseline = score_case(&ZeroModel(case.scm.d()), case)?;
    let scores = match predictor {
        Predictor::Learned { config, encoder, decoder } => {
            let model = LearnedModel::condition(config, encoder, decoder, &case.conditioning, case.scm.dag())?;
            score_case(&model, case)?
        }
        Predictor::Oracle => score_case(&OracleModel::new(&case.scm, case.stats.clone()), case)?,
        Predictor::Zero => baseline,
    };
    Ok((scores, baseline))
}

/// Scores `predictor` and the zero baseline on every (scenario, d, dataset).
pub fn run_benchmark(suite: &BenchmarkSuiteConfig, predictor: Predictor<'_>) -> Result<EvalReport, EvalError> {
    let mut jobs = Vec::new();
    for &scenario in &suite.scenarios {
        for &d in &suite.node_counts {
            for index in 0..suite.datasets_per_scenario {
                jobs.push((scenario, d, index));
            }
        }
    }
    let run = |&(scenario, d, index): &(Scenario, usize, usize)| -> Result<Vec<DatasetResult>, EvalError> {
        let case = test_case(suite, scenario, d, index)?;
        let (scores, baseline) = evaluate_case(predictor, &case)?;
        Ok(Task::ALL
            .iter()
            .enumerate()
            .map(|(t, &task)| DatasetResult { task, scenario, d, dataset: index, rmse: scores[t], baseline: baseline[t] })
            .collect())
    };
    let results: Vec<Result<Vec<DatasetResult>, EvalError>> = if suite.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(suite.threads)
            .build()
            .map_err(|e| EvalError::Config(e.to_string()))?;
        pool.install(|| jobs.par_iter().map(run).collect())
    } else {
        jobs.iter().map(run).collect()
    };
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    let mut meta = vec![("predictor".to_string(), predictor.name().to_string())];
    meta.extend(suite.entries());
    Ok(EvalReport::from_rows(meta, rows))
}
