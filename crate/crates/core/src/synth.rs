//! Seeded synthetic tasks for tests, benchmarks and smoke runs.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::config::{DataConfig, TaskDefinition};
use crate::data::{write_dataset, Dataset, Example, Role};
use crate::embedding::write_embeddings;
use crate::error::{Error, Result};
use crate::labels::{Provenance, PseudoLabeledSet};
use crate::llm::ClusterOracle;

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(dim, || {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

fn choice_texts(n: usize) -> Vec<String> {
    (0..n).map(|c| format!("option {c}")).collect()
}

/// Multiple-choice task whose correct query-choice pairs come from one
/// Gaussian and incorrect pairs from another.
#[derive(Debug, Clone)]
pub struct PairClusterSpec {
    pub n_examples: usize,
    pub n_choices: usize,
    pub dim: usize,
    /// Distance between the two means in units of the noise σ.
    pub separation: f64,
    pub seed_fraction: f64,
    pub seed: u64,
}

impl Default for PairClusterSpec {
    fn default() -> Self {
        PairClusterSpec {
            n_examples: 200,
            n_choices: 3,
            dim: 16,
            separation: 4.0,
            seed_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PairClusterTask {
    /// Labeled seed examples (gold kept).
    pub seed: Dataset,
    /// Remaining examples; gold is kept for scoring and must not be used for training.
    pub unlabeled: Dataset,
    /// Pair rows for `seed` followed by `unlabeled`.
    pub pair_features: Array2<f64>,
}

impl PairClusterTask {
    pub fn seed_labels(&self) -> PseudoLabeledSet {
        let mut s = PseudoLabeledSet::new();
        for ex in &self.seed.examples {
            s.insert(&ex.id, ex.gold_label.expect("synthetic gold"), Provenance::Gold, 1.0);
        }
        s
    }
}

pub fn pair_cluster_task(spec: &PairClusterSpec) -> Result<PairClusterTask> {
    if spec.n_choices < 2 || spec.n_examples < 2 || spec.dim == 0 {
        return Err(Error::Validation("synthetic task needs >= 2 examples, >= 2 choices and dim > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sigma = 1.0;
    // common offset keeps every row well away from the origin
    let centre = gaussian_vec(&mut rng, spec.dim, 1.0);
    let dir = {
        let d = gaussian_vec(&mut rng, spec.dim, 1.0);
        let n = d.dot(&d).sqrt();
        d / n
    };
    let half = 0.5 * spec.separation * sigma;
    let mu_pos = &centre + &(&dir * half);
    let mu_neg = &centre - &(&dir * half);

    let n_seed = ((spec.n_examples as f64) * spec.seed_fraction).round() as usize;
    let n_seed = n_seed.clamp(1, spec.n_examples - 1);
    let mut seed_ex = Vec::with_capacity(n_seed);
    let mut unl_ex = Vec::with_capacity(spec.n_examples - n_seed);
    let mut seed_rows = Vec::new();
    let mut unl_rows = Vec::new();
    for i in 0..spec.n_examples {
        let gold = rng.random_range(0..spec.n_choices);
        let ex = Example::new(
            format!("p{i}"),
            format!("synthetic pair question {i}"),
            choice_texts(spec.n_choices),
            Some(gold),
        )?;
        let target = if i < n_seed { &mut seed_rows } else { &mut unl_rows };
        for c in 0..spec.n_choices {
            let mu = if c == gold { &mu_pos } else { &mu_neg };
            let v = mu + &gaussian_vec(&mut rng, spec.dim, sigma);
            target.extend(v.iter().copied());
        }
        if i < n_seed {
            seed_ex.push(ex);
        } else {
            unl_ex.push(ex);
        }
    }
    let mut rows = seed_rows;
    rows.extend(unl_rows);
    let pair_features = Array2::from_shape_vec((spec.n_examples * spec.n_choices, spec.dim), rows)
        .expect("row count matches");
    Ok(PairClusterTask {
        seed: Dataset::new(Role::TargetSeed, "synthetic", "", seed_ex)?,
        unlabeled: Dataset::new(Role::TargetUnlabeled, "synthetic", "", unl_ex)?,
        pair_features,
    })
}

/// A source task and a domain-shifted target task sharing latent clusters.
#[derive(Debug, Clone)]
pub struct ClusterPairSpec {
    pub n_clusters: usize,
    pub n_source: usize,
    pub n_pool: usize,
    pub n_test: usize,
    pub n_choices: usize,
    pub dim: usize,
    /// Spread of examples around their cluster centre.
    pub noise: f64,
    /// Norm of the offset added to every target embedding.
    pub shift: f64,
    pub seed: u64,
}

impl Default for ClusterPairSpec {
    fn default() -> Self {
        ClusterPairSpec {
            n_clusters: 8,
            n_source: 400,
            n_pool: 500,
            n_test: 200,
            n_choices: 4,
            dim: 16,
            noise: 0.35,
            shift: 4.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClusterPair {
    pub source: Dataset,
    pub source_emb: Array2<f64>,
    /// Target pool with gold labels.
    pub pool: Dataset,
    pub pool_emb: Array2<f64>,
    pub pool_pair_emb: Array2<f64>,
    pub test: Dataset,
    pub test_emb: Array2<f64>,
    /// Cluster and gold answer for every source, pool and test query.
    pub oracle: ClusterOracle,
    pub cluster_of: std::collections::HashMap<String, u32>,
}

struct Sampled {
    examples: Vec<Example>,
    emb: Vec<f64>,
    pairs: Vec<f64>,
    clusters: Vec<u32>,
}

fn sample_task(
    rng: &mut ChaCha8Rng,
    prefix: &str,
    n: usize,
    spec: &ClusterPairSpec,
    centres: &[Array1<f64>],
    shift: &Array1<f64>,
    answer_dir: &Array1<f64>,
) -> Result<Sampled> {
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Validation(e.to_string()))?;
    let mut out = Sampled {
        examples: Vec::with_capacity(n),
        emb: Vec::with_capacity(n * spec.dim),
        pairs: Vec::new(),
        clusters: Vec::with_capacity(n),
    };
    // balanced cluster assignment, shuffled
    let mut clusters: Vec<u32> = (0..n).map(|i| (i % spec.n_clusters) as u32).collect();
    clusters.shuffle(rng);
    for (i, &c) in clusters.iter().enumerate() {
        let gold = rng.random_range(0..spec.n_choices);
        out.examples.push(Example::new(
            format!("{prefix}{i}"),
            format!("{prefix} question {i} about topic {c}"),
            choice_texts(spec.n_choices),
            Some(gold),
        )?);
        let x: Array1<f64> = &centres[c as usize] + shift + &Array1::from_shape_simple_fn(spec.dim, || noise.sample(rng));
        out.emb.extend(x.iter().copied());
        for k in 0..spec.n_choices {
            let sign = if k == gold { 1.0 } else { -1.0 };
            let p: Array1<f64> =
                &x + &(answer_dir * sign) + &Array1::from_shape_simple_fn(spec.dim, || noise.sample(rng));
            out.pairs.extend(p.iter().copied());
        }
        out.clusters.push(c);
    }
    Ok(out)
}

pub fn cluster_pair(spec: &ClusterPairSpec) -> Result<ClusterPair> {
    if spec.n_clusters == 0 || spec.n_choices < 2 || spec.dim == 0 {
        return Err(Error::Validation("cluster pair needs clusters, >= 2 choices and dim > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centres: Vec<Array1<f64>> = (0..spec.n_clusters).map(|_| gaussian_vec(&mut rng, spec.dim, 1.0)).collect();
    let shift = {
        let d = gaussian_vec(&mut rng, spec.dim, 1.0);
        let n = d.dot(&d).sqrt();
        d * (spec.shift / n)
    };
    let answer_dir = {
        let d = gaussian_vec(&mut rng, spec.dim, 1.0);
        let n = d.dot(&d).sqrt();
        d / n
    };
    let zero = Array1::zeros(spec.dim);
    let src = sample_task(&mut rng, "s", spec.n_source, spec, &centres, &zero, &answer_dir)?;
    let pool = sample_task(&mut rng, "t", spec.n_pool, spec, &centres, &shift, &answer_dir)?;
    let test = sample_task(&mut rng, "q", spec.n_test, spec, &centres, &shift, &answer_dir)?;

    let mut oracle = ClusterOracle::default();
    let mut cluster_of = std::collections::HashMap::new();
    for s in [&src, &pool, &test] {
        for (ex, &c) in s.examples.iter().zip(&s.clusters) {
            oracle.insert(ex.query.clone(), c, ex.gold_label.expect("synthetic gold"));
            cluster_of.insert(ex.id.clone(), c);
        }
    }
    let mat = |v: Vec<f64>, rows: usize| Array2::from_shape_vec((rows, spec.dim), v).expect("row count matches");
    Ok(ClusterPair {
        source_emb: mat(src.emb, spec.n_source),
        source: Dataset::new(Role::Source, "synthetic_source", "", src.examples)?,
        pool_emb: mat(pool.emb, spec.n_pool),
        pool_pair_emb: mat(pool.pairs, spec.n_pool * spec.n_choices),
        pool: Dataset::new(Role::TargetUnlabeled, "synthetic_target", "", pool.examples)?,
        test_emb: mat(test.emb, spec.n_test),
        test: Dataset::new(Role::TargetTest, "synthetic_target", "", test.examples)?,
        oracle,
        cluster_of,
    })
}

impl ClusterPair {
    /// Writes every input file plus the mock-LLM sidecar into `dir` and
    /// returns the matching data section and sidecar path.
    pub fn write_to(&self, dir: &Path) -> Result<(DataConfig, std::path::PathBuf)> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = |name: &str| dir.join(name);
        write_dataset(p("source.jsonl"), &self.source)?;
        write_embeddings(p("source.xemb"), &self.source_emb)?;
        write_dataset(p("pool.jsonl"), &self.pool)?;
        write_embeddings(p("pool.xemb"), &self.pool_emb)?;
        write_embeddings(p("pool_pairs.xemb"), &self.pool_pair_emb)?;
        write_dataset(p("test.jsonl"), &self.test)?;
        write_embeddings(p("test.xemb"), &self.test_emb)?;
        self.oracle.save(p("oracle.json"))?;
        let data = DataConfig {
            source_task: self.source.task_name.clone(),
            target_task: self.pool.task_name.clone(),
            source_definition: TaskDefinition::Text(String::new()),
            target_definition: TaskDefinition::Text(String::new()),
            source: Some(p("source.jsonl")),
            source_embeddings: Some(p("source.xemb")),
            target_pool: Some(p("pool.jsonl")),
            target_pool_embeddings: Some(p("pool.xemb")),
            target_pool_pair_embeddings: Some(p("pool_pairs.xemb")),
            test: Some(p("test.jsonl")),
            test_embeddings: Some(p("test.xemb")),
        };
        Ok((data, p("oracle.json")))
    }
}
