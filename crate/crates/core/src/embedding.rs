//! Factorization of smoothed co-occurrence counts into target/context
//! vector tables, plus the direct user-item factorization variant.
//!
//! Both factorizations minimize the same squared-residual objective
//! `sum (v_i . w_j - t_ij)^2` by plain SGD over shuffled pair residuals with
//! a per-epoch learning-rate decay of 0.95. For the co-occurrence path the
//! targets are `smooth(P_ij)` and every stored pair is trained in both
//! orientations; zero-count pairs (target 0) can optionally be sampled per
//! entity per epoch. The reported cost trace is always evaluated over the
//! fixed nonzero pair set so epochs are comparable.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::TrainTestSplit;
use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, Matrix};
use crate::pco::{smooth_with_base, Basis, LogBase, PcoMatrix};

/// Per-epoch multiplier on the learning rate.
const LR_DECAY: f64 = 0.95;

/// Which learned table (or their sum) represents an entity downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RepresentationMode {
    #[default]
    Target,
    Context,
    Sum,
}

impl RepresentationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RepresentationMode::Target => "target",
            RepresentationMode::Context => "context",
            RepresentationMode::Sum => "sum",
        }
    }
}

impl std::str::FromStr for RepresentationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target" => Ok(RepresentationMode::Target),
            "context" => Ok(RepresentationMode::Context),
            "sum" => Ok(RepresentationMode::Sum),
            other => Err(Error::Config(format!(
                "unknown representation mode `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Half-width of the uniform init interval.
    pub init_scale: f64,
    pub seed: u64,
    /// Zero-count pairs sampled per entity per epoch, trained with target 0.
    pub zero_pair_samples_per_entity: usize,
    pub representation_mode: RepresentationMode,
    pub log_base: LogBase,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dim: 100,
            learning_rate: 0.05,
            epochs: 50,
            init_scale: 0.01,
            seed: 0,
            zero_pair_samples_per_entity: 0,
            representation_mode: RepresentationMode::Target,
            log_base: LogBase::Natural,
        }
    }
}

impl EmbeddingConfig {
    fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::Config("embedding dim must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("embedding learning rate must be > 0".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("embedding epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Learned target/context tables for the basic entity.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub target_vectors: Matrix,
    pub context_vectors: Matrix,
    pub basis: Basis,
    pub dim: usize,
}

impl EmbeddingModel {
    pub fn n(&self) -> usize {
        self.target_vectors.rows()
    }
}

/// Objective value after every epoch, over the fixed training pair set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub cost_per_epoch: Vec<f64>,
}

/// The fixed training pair set for a co-occurrence matrix: every stored
/// nonzero pair in both orientations, with smoothed counts as targets.
pub fn training_pairs(pco: &PcoMatrix, log_base: LogBase) -> Vec<(u32, u32, f64)> {
    let mut pairs = Vec::with_capacity(pco.num_pairs() * 2);
    for &(i, j, c) in pco.entries() {
        let t = smooth_with_base(c as f64, log_base);
        pairs.push((i, j, t));
        pairs.push((j, i, t));
    }
    pairs
}

/// Analytic gradient of `(v . w - t)^2` with respect to `v` and `w`.
pub fn pair_gradients(v: &[f64], w: &[f64], target: f64) -> (Vec<f64>, Vec<f64>) {
    let g = 2.0 * (dot(v, w) - target);
    (
        w.iter().map(|&x| g * x).collect(),
        v.iter().map(|&x| g * x).collect(),
    )
}

/// Exact objective over an explicit pair set.
pub fn cost_over_pairs(
    target: &Matrix,
    context: &Matrix,
    pairs: &[(u32, u32, f64)],
) -> Result<f64> {
    if target.cols() != context.cols() {
        return Err(Error::DimensionMismatch(format!(
            "target dim {} vs context dim {}",
            target.cols(),
            context.cols()
        )));
    }
    let mut total = 0.0;
    for &(i, j, t) in pairs {
        if i as usize >= target.rows() || j as usize >= context.rows() {
            return Err(Error::DimensionMismatch(format!(
                "pair ({i}, {j}) outside {}x{} tables",
                target.rows(),
                context.rows()
            )));
        }
        let e = dot(target.row(i as usize), context.row(j as usize)) - t;
        total += e * e;
    }
    Ok(total)
}

/// Objective of a model against a co-occurrence matrix, over the same pair
/// set used for training.
pub fn cost(model: &EmbeddingModel, pco: &PcoMatrix, log_base: LogBase) -> Result<f64> {
    if model.n() != pco.n() {
        return Err(Error::DimensionMismatch(format!(
            "model over {} entities, matrix over {}",
            model.n(),
            pco.n()
        )));
    }
    cost_over_pairs(
        &model.target_vectors,
        &model.context_vectors,
        &training_pairs(pco, log_base),
    )
}

/// Row `index` of the table selected by `mode` (or the elementwise sum).
pub fn entity_vector(model: &EmbeddingModel, index: usize, mode: RepresentationMode) -> Result<Vec<f64>> {
    if index >= model.n() {
        return Err(Error::IndexOutOfRange {
            index,
            n: model.n(),
        });
    }
    let t = model.target_vectors.row(index);
    let c = model.context_vectors.row(index);
    Ok(match mode {
        RepresentationMode::Target => t.to_vec(),
        RepresentationMode::Context => c.to_vec(),
        RepresentationMode::Sum => t.iter().zip(c).map(|(a, b)| a + b).collect(),
    })
}

/// Materialize the representation of every entity as a matrix.
pub fn entity_vectors(model: &EmbeddingModel, mode: RepresentationMode) -> Matrix {
    let mut m = Matrix::zeros(model.n(), model.dim);
    for i in 0..model.n() {
        let t = model.target_vectors.row(i);
        let c = model.context_vectors.row(i);
        let row = m.row_mut(i);
        match mode {
            RepresentationMode::Target => row.copy_from_slice(t),
            RepresentationMode::Context => row.copy_from_slice(c),
            RepresentationMode::Sum => {
                for (slot, (a, b)) in row.iter_mut().zip(t.iter().zip(c)) {
                    *slot = a + b;
                }
            }
        }
    }
    m
}

struct ZeroSampling<'a> {
    per_entity: usize,
    pco: &'a PcoMatrix,
}

/// Factorize the smoothed co-occurrence matrix into target/context tables.
pub fn factorize_pco(
    pco: &PcoMatrix,
    config: &EmbeddingConfig,
) -> Result<(EmbeddingModel, TrainingTrace)> {
    config.validate()?;
    if pco.is_empty() {
        return Err(Error::Empty("co-occurrence matrix"));
    }
    let pairs = training_pairs(pco, config.log_base);
    let zero = (config.zero_pair_samples_per_entity > 0).then_some(ZeroSampling {
        per_entity: config.zero_pair_samples_per_entity,
        pco,
    });
    let (target, context, trace) =
        sgd_fit(pco.n(), pco.n(), &pairs, zero, config, "embedding")?;
    Ok((
        EmbeddingModel {
            target_vectors: target,
            context_vectors: context,
            basis: pco.basis(),
            dim: config.dim,
        },
        trace,
    ))
}

/// Fit arbitrary (row, col, target) regression pairs by SGD on squared
/// residuals. This is the trainer behind both factorization paths.
pub fn fit_pairs(
    rows: usize,
    cols: usize,
    pairs: &[(u32, u32, f64)],
    config: &EmbeddingConfig,
) -> Result<(Matrix, Matrix, TrainingTrace)> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Empty("training pair set"));
    }
    sgd_fit(rows, cols, pairs, None, config, "factorization")
}

/// Factorize the training interest matrix (rating / r_max over observed
/// train pairs) into user and item tables.
pub fn factorize_user_item(
    split: &TrainTestSplit,
    config: &EmbeddingConfig,
) -> Result<(Matrix, Matrix, TrainingTrace)> {
    let r_max = split.train.r_max as f64;
    let pairs: Vec<(u32, u32, f64)> = split
        .train
        .ratings
        .iter()
        .map(|&(u, i, r)| (u as u32, i as u32, r as f64 / r_max))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Empty("train rating set"));
    }
    let (users, items, trace) = sgd_fit(
        split.train.num_users,
        split.train.num_items,
        &pairs,
        None,
        config,
        "user-item factorization",
    )?;
    Ok((users, items, trace))
}

fn uniform_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for v in m.row_mut(i) {
            *v = rng.gen_range(-scale..=scale);
        }
    }
    m
}

fn sgd_fit(
    rows: usize,
    cols: usize,
    pairs: &[(u32, u32, f64)],
    zero: Option<ZeroSampling<'_>>,
    config: &EmbeddingConfig,
    stage: &'static str,
) -> Result<(Matrix, Matrix, TrainingTrace)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // Both tables are drawn from the same stream, target table first.
    let mut target = uniform_init(&mut rng, rows, config.dim, config.init_scale);
    let mut context = uniform_init(&mut rng, cols, config.dim, config.init_scale);
    let mut target_touched = vec![false; rows];
    let mut context_touched = vec![false; cols];

    let mut epoch_pairs: Vec<(u32, u32, f64)> = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut scratch = vec![0.0f64; config.dim];
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = config.learning_rate * LR_DECAY.powi(epoch as i32);

        epoch_pairs.clear();
        epoch_pairs.extend_from_slice(pairs);
        if let Some(zs) = &zero {
            sample_zero_pairs(&mut rng, zs, &mut epoch_pairs);
        }
        order.clear();
        order.extend(0..epoch_pairs.len());
        order.shuffle(&mut rng);

        for &idx in &order {
            let (i, j, t) = epoch_pairs[idx];
            target_touched[i as usize] = true;
            context_touched[j as usize] = true;
            let vi = target.row_mut(i as usize);
            let wj = context.row_mut(j as usize);
            // SGD step along the pair gradient, simultaneous update.
            let step = -lr * 2.0 * (dot(vi, wj) - t);
            scratch.copy_from_slice(vi);
            axpy(step, wj, vi);
            axpy(step, &scratch, wj);
        }

        let epoch_cost = cost_over_pairs(&target, &context, pairs)?;
        if !epoch_cost.is_finite() {
            return Err(Error::Divergence {
                stage,
                epoch,
                detail: String::new(),
            });
        }
        trace.push(epoch_cost);
    }

    // Entities that never appeared in a training pair have no evidence
    // behind their rows; leave them at zero (the same policy the profile
    // aggregation applies to empty profiles) instead of at random init.
    for (i, touched) in target_touched.iter().enumerate() {
        if !touched {
            target.row_mut(i).fill(0.0);
        }
    }
    for (j, touched) in context_touched.iter().enumerate() {
        if !touched {
            context.row_mut(j).fill(0.0);
        }
    }

    Ok((
        target,
        context,
        TrainingTrace {
            cost_per_epoch: trace,
        },
    ))
}

fn sample_zero_pairs(
    rng: &mut ChaCha8Rng,
    zs: &ZeroSampling<'_>,
    out: &mut Vec<(u32, u32, f64)>,
) {
    let n = zs.pco.n();
    if n < 2 {
        return;
    }
    for i in 0..n {
        for _ in 0..zs.per_entity {
            // Rejection sampling with a deterministic attempt cap; dense
            // rows may simply yield fewer samples.
            for _attempt in 0..32 {
                let j = rng.gen_range(0..n);
                if j != i && zs.pco.count(i, j) == 0 {
                    out.push((i as u32, j as u32, 0.0));
                    break;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{index_dataset, RatingRecord};
    use crate::pco::build_pco;
    use proptest::prelude::*;

    fn dataset_from_pairs(pairs: &[(usize, usize)]) -> crate::dataset::Dataset {
        let records: Vec<RatingRecord> = pairs
            .iter()
            .map(|&(u, i)| RatingRecord {
                user_id: format!("u{u}"),
                item_id: format!("i{i}"),
                rating: ((u + i) % 5 + 1) as u8,
                timestamp: None,
            })
            .collect();
        index_dataset(&records, 5).unwrap()
    }

    fn small_config(dim: usize, epochs: usize) -> EmbeddingConfig {
        EmbeddingConfig {
            dim,
            epochs,
            seed: 7,
            ..EmbeddingConfig::default()
        }
    }

    /// Construct-and-recover: targets come from known low-rank factors, so
    /// the fitted products must reproduce them.
    #[test]
    fn recovers_planted_bilinear_targets() {
        let n = 30;
        let dim = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let truth_a = uniform_init(&mut rng, n, dim, 1.0);
        let truth_b = uniform_init(&mut rng, n, dim, 1.0);
        let mut pairs = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                pairs.push((i as u32, j as u32, dot(truth_a.row(i), truth_b.row(j))));
            }
        }
        let (target, context, trace) =
            fit_pairs(n, n, &pairs, &small_config(dim, 150)).unwrap();
        let sse: f64 = pairs
            .iter()
            .map(|&(i, j, t)| {
                let e = dot(target.row(i as usize), context.row(j as usize)) - t;
                e * e
            })
            .sum();
        let rmse = (sse / pairs.len() as f64).sqrt();
        assert!(rmse < 0.05, "rmse = {rmse}");
        assert!(
            *trace.cost_per_epoch.last().unwrap() < trace.cost_per_epoch[0],
            "cost did not decrease"
        );
    }

    #[test]
    fn single_pair_converges_to_its_target() {
        // One user rated two items: P_01 = 1, smoothed target 1.
        let ds = dataset_from_pairs(&[(0, 0), (0, 1)]);
        let pco = build_pco(&ds, Basis::ItemBased);
        assert_eq!(pco.count(0, 1), 1);
        // A single-pair system sees one update per epoch, so it needs a
        // hotter schedule than the bulk defaults.
        let config = EmbeddingConfig {
            learning_rate: 0.3,
            init_scale: 0.1,
            ..small_config(1, 300)
        };
        let (model, _) = factorize_pco(&pco, &config).unwrap();
        let fit = dot(model.target_vectors.row(0), model.context_vectors.row(1));
        assert!((fit - 1.0).abs() < 1e-2, "fit = {fit}");
    }

    #[test]
    fn cost_of_zero_model_counts_each_orientation() {
        let target = Matrix::zeros(2, 3);
        let context = Matrix::zeros(2, 3);
        let pairs = vec![(0u32, 1u32, 2.0), (1u32, 0u32, 2.0)];
        let j = cost_over_pairs(&target, &context, &pairs).unwrap();
        assert_eq!(j, 8.0); // (0 - 2)^2 per orientation
    }

    #[test]
    fn cost_is_zero_at_exact_fit() {
        let target = Matrix::from_rows(vec![vec![1.0, 2.0]]);
        let context = Matrix::from_rows(vec![vec![0.5, 0.25]]);
        let t = 1.0 * 0.5 + 2.0 * 0.25;
        let j = cost_over_pairs(&target, &context, &[(0, 0, t)]).unwrap();
        assert_eq!(j, 0.0);
    }

    #[test]
    fn cost_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let target = uniform_init(&mut rng, 6, 4, 1.0);
        let context = uniform_init(&mut rng, 6, 4, 1.0);
        let mut pairs = Vec::new();
        for i in 0..6u32 {
            for j in 0..6u32 {
                if (i + j) % 2 == 0 {
                    pairs.push((i, j, ((i * 7 + j) % 5) as f64 * 0.3));
                }
            }
        }
        let fast = cost_over_pairs(&target, &context, &pairs).unwrap();
        // Independent naive double-loop re-evaluation.
        let mut naive = 0.0;
        for &(i, j, t) in &pairs {
            let mut d = 0.0;
            for k in 0..4 {
                d += target.row(i as usize)[k] * context.row(j as usize)[k];
            }
            naive += (d - t) * (d - t);
        }
        assert!((fast - naive).abs() <= 1e-10 * naive.abs().max(1.0));
    }

    #[test]
    fn cost_rejects_mismatched_model() {
        let ds = dataset_from_pairs(&[(0, 0), (0, 1), (1, 0), (1, 1)]);
        let pco = build_pco(&ds, Basis::ItemBased);
        let model = EmbeddingModel {
            target_vectors: Matrix::zeros(5, 2),
            context_vectors: Matrix::zeros(5, 2),
            basis: Basis::ItemBased,
            dim: 2,
        };
        assert!(matches!(
            cost(&model, &pco, LogBase::Natural),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn entity_vector_modes() {
        let model = EmbeddingModel {
            target_vectors: Matrix::from_rows(vec![vec![1.0, 2.0]]),
            context_vectors: Matrix::from_rows(vec![vec![3.0, 4.0]]),
            basis: Basis::ItemBased,
            dim: 2,
        };
        assert_eq!(
            entity_vector(&model, 0, RepresentationMode::Target).unwrap(),
            vec![1.0, 2.0]
        );
        assert_eq!(
            entity_vector(&model, 0, RepresentationMode::Context).unwrap(),
            vec![3.0, 4.0]
        );
        assert_eq!(
            entity_vector(&model, 0, RepresentationMode::Sum).unwrap(),
            vec![4.0, 6.0]
        );
        assert!(matches!(
            entity_vector(&model, 1, RepresentationMode::Target),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    fn manual_split(ratings: Vec<(usize, usize, u8)>, num_users: usize, num_items: usize) -> TrainTestSplit {
        let mut user_profiles = vec![Vec::new(); num_users];
        let mut item_profiles = vec![Vec::new(); num_items];
        for &(u, i, r) in &ratings {
            user_profiles[u].push((i, r));
            item_profiles[i].push((u, r));
        }
        let included_users = (0..num_users).collect();
        TrainTestSplit {
            train: crate::dataset::Dataset {
                num_users,
                num_items,
                ratings,
                user_profiles,
                item_profiles,
                r_max: 5,
                user_ids: (0..num_users).map(|u| format!("u{u}")).collect(),
                item_ids: (0..num_items).map(|i| format!("i{i}")).collect(),
            },
            test: vec![Vec::new(); num_users],
            included_users,
        }
    }

    #[test]
    fn user_item_single_entry() {
        // rating 4 of 5: interest 0.8
        let split = manual_split(vec![(0, 0, 4)], 1, 1);
        let config = EmbeddingConfig {
            learning_rate: 0.3,
            init_scale: 0.1,
            ..small_config(1, 300)
        };
        let (users, items, _) = factorize_user_item(&split, &config).unwrap();
        let fit = dot(users.row(0), items.row(0));
        assert!((fit - 0.8).abs() < 1e-2, "fit = {fit}");
    }

    #[test]
    fn user_item_empty_train_errors() {
        let split = manual_split(Vec::new(), 2, 2);
        assert!(matches!(
            factorize_user_item(&split, &small_config(2, 10)),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn user_item_recovers_rank_two_interests() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let uf = uniform_init(&mut rng, 10, 2, 0.6);
        let vf = uniform_init(&mut rng, 10, 2, 0.6);
        let mut pairs = Vec::new();
        for u in 0..10u32 {
            for i in 0..10u32 {
                // observe ~70% of entries
                if (u * 13 + i * 7) % 10 < 7 {
                    pairs.push((u, i, dot(uf.row(u as usize), vf.row(i as usize))));
                }
            }
        }
        let config = EmbeddingConfig {
            learning_rate: 0.5,
            init_scale: 0.1,
            ..small_config(2, 300)
        };
        let (users, items, _) = fit_pairs(10, 10, &pairs, &config).unwrap();
        let sse: f64 = pairs
            .iter()
            .map(|&(u, i, t)| {
                let e = dot(users.row(u as usize), items.row(i as usize)) - t;
                e * e
            })
            .sum();
        let rmse = (sse / pairs.len() as f64).sqrt();
        assert!(rmse < 0.05, "rmse = {rmse}");
    }

    #[test]
    fn descent_and_trace_shape() {
        let mut pairs = Vec::new();
        for u in 0..12usize {
            for i in 0..9usize {
                if (u * 5 + i * 3) % 4 != 0 {
                    pairs.push((u, i));
                }
            }
        }
        let ds = dataset_from_pairs(&pairs);
        let pco = build_pco(&ds, Basis::ItemBased);
        let config = small_config(8, 30);
        let (model, trace) = factorize_pco(&pco, &config).unwrap();
        assert_eq!(trace.cost_per_epoch.len(), config.epochs);
        assert!(trace.cost_per_epoch.iter().all(|c| c.is_finite() && *c >= 0.0));
        assert!(trace.cost_per_epoch.last().unwrap() < &trace.cost_per_epoch[0]);
        for w in trace.cost_per_epoch.windows(2) {
            assert!(w[1] <= w[0] * 1.01, "epoch increased cost: {} -> {}", w[0], w[1]);
        }
        assert!(model.target_vectors.is_finite());
        assert!(model.context_vectors.is_finite());
    }

    #[test]
    fn training_is_deterministic() {
        let ds = dataset_from_pairs(&[(0, 0), (0, 1), (1, 0), (1, 2), (2, 1), (2, 2), (3, 0), (3, 2)]);
        let pco = build_pco(&ds, Basis::ItemBased);
        let config = small_config(4, 20);
        let (a, ta) = factorize_pco(&pco, &config).unwrap();
        let (b, tb) = factorize_pco(&pco, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn zero_pair_sampling_is_deterministic_and_trains() {
        let ds = dataset_from_pairs(&[(0, 0), (0, 1), (1, 1), (1, 2), (2, 3)]);
        let pco = build_pco(&ds, Basis::ItemBased);
        let config = EmbeddingConfig {
            zero_pair_samples_per_entity: 2,
            ..small_config(3, 15)
        };
        let (a, _) = factorize_pco(&pco, &config).unwrap();
        let (b, _) = factorize_pco(&pco, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn role_swap_leaves_cost_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let target = uniform_init(&mut rng, 5, 3, 1.0);
        let context = uniform_init(&mut rng, 7, 3, 1.0);
        let pairs: Vec<(u32, u32, f64)> = (0..5u32)
            .flat_map(|i| (0..7u32).map(move |j| (i, j, (i as f64 - j as f64) * 0.2)))
            .collect();
        let swapped: Vec<(u32, u32, f64)> = pairs.iter().map(|&(i, j, t)| (j, i, t)).collect();
        let a = cost_over_pairs(&target, &context, &pairs).unwrap();
        let b = cost_over_pairs(&context, &target, &swapped).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let ds = dataset_from_pairs(&[(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1)]);
        let pco = build_pco(&ds, Basis::ItemBased);
        let config = EmbeddingConfig {
            learning_rate: 1e6,
            init_scale: 1.0,
            ..small_config(4, 10)
        };
        match factorize_pco(&pco, &config) {
            Err(Error::Divergence { stage, .. }) => assert_eq!(stage, "embedding"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn empty_matrix_is_rejected() {
        let ds = dataset_from_pairs(&[(0, 0), (1, 1)]);
        let pco = build_pco(&ds, Basis::ItemBased);
        assert!(matches!(
            factorize_pco(&pco, &small_config(2, 5)),
            Err(Error::Empty(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        /// The analytic pair gradient matches central finite differences.
        /// The loss is quadratic per coordinate, so central differences are
        /// exact up to roundoff.
        #[test]
        fn prop_pair_gradient_matches_finite_differences(
            v in prop::collection::vec(-2.0f64..2.0, 2..8),
            seedling in any::<u64>(),
            t in -3.0f64..3.0,
        ) {
            let dim = v.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seedling);
            let w: Vec<f64> = (0..dim).map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0)).collect();
            let (gv, gw) = pair_gradients(&v, &w, t);
            let loss = |a: &[f64], b: &[f64]| {
                let e = dot(a, b) - t;
                e * e
            };
            for k in 0..dim {
                // The loss is quadratic per coordinate, so central
                // differences have zero truncation error and a larger step
                // only reduces cancellation noise.
                let h = 1e-4 * v[k].abs().max(1.0);
                let mut vp = v.clone();
                let mut vm = v.clone();
                vp[k] += h;
                vm[k] -= h;
                let num = (loss(&vp, &w) - loss(&vm, &w)) / (2.0 * h);
                let denom = gv[k].abs().max(num.abs());
                let err = if denom < 1e-8 { (gv[k] - num).abs() } else { (gv[k] - num).abs() / denom };
                prop_assert!(err < 1e-6, "v[{k}]: analytic {} vs numeric {num}", gv[k]);

                let h = 1e-4 * w[k].abs().max(1.0);
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[k] += h;
                wm[k] -= h;
                let num = (loss(&v, &wp) - loss(&v, &wm)) / (2.0 * h);
                let denom = gw[k].abs().max(num.abs());
                let err = if denom < 1e-8 { (gw[k] - num).abs() } else { (gw[k] - num).abs() / denom };
                prop_assert!(err < 1e-6, "w[{k}]: analytic {} vs numeric {num}", gw[k]);
            }
        }
    }
}
