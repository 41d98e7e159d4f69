//! End-to-end orchestration: load, split, count, factorize, aggregate,
//! train, evaluate, recommend. Each stage is also invocable on its own and
//! exchanges data through the text artifacts in the output directory.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::config::{RunConfig, Variant};
use crate::dataset::{self, Dataset, SplitConfig, TrainTestSplit};
use crate::embedding::{self, EmbeddingConfig, EmbeddingModel, TrainingTrace};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::mlp::{self, MlpConfig, MlpModel, SelectionReport, TrainingExample};
use crate::pco::{build_pco, Basis, PcoMatrix};
use crate::profiles;
use crate::ranking::{self, EvalReport, Ranking};
use crate::seed;

pub const TRAIN_TSV: &str = "train.tsv";
pub const TEST_TSV: &str = "test.tsv";
pub const PCO_TSV: &str = "pco.tsv";
pub const EMBEDDING_TARGET: &str = "embedding_target.txt";
pub const EMBEDDING_CONTEXT: &str = "embedding_context.txt";
pub const USER_VECTORS: &str = "user_vectors.txt";
pub const ITEM_VECTORS: &str = "item_vectors.txt";
pub const COST_TRACE: &str = "cost_trace.txt";
pub const MLP_MODEL: &str = "mlp_model.txt";
pub const SELECTION_TSV: &str = "selection.tsv";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_TSV: &str = "report.tsv";
pub const CONFIG_ECHO: &str = "config.effective.txt";

/// Everything fitted on one split: the final per-entity vector tables, the
/// intermediates worth dumping, and the optional interest network.
#[derive(Debug)]
pub struct FittedVariant {
    pub user_vectors: Matrix,
    pub item_vectors: Matrix,
    pub pco: Option<PcoMatrix>,
    pub embedding: Option<EmbeddingModel>,
    pub trace: TrainingTrace,
    pub mlp: Option<MlpModel>,
    pub selection: Option<SelectionReport>,
    /// Aggregated entities that came out as zero vectors (kept as-is).
    pub num_zero_aggregates: usize,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let inner = || -> Result<Dataset> {
        let path = cfg.resolve_dataset_path()?;
        let file = fs::File::open(&path)?;
        let records = dataset::parse_ratings(std::io::BufReader::new(file), &cfg.format)?;
        dataset::index_dataset(&records, cfg.format.r_max)
    };
    inner().map_err(Error::in_stage("dataset"))
}

/// The split for repetition `rep`; the same run seed and repetition always
/// produce the same split regardless of variant or basis.
pub fn split_for_rep(data: &Dataset, cfg: &RunConfig, rep: usize) -> Result<TrainTestSplit> {
    let split_cfg = SplitConfig {
        upl: cfg.split.upl,
        min_test_items: cfg.split.min_test_items,
        seed: seed::derive(cfg.seed, "split", rep as u64),
    };
    dataset::split_upl(data, &split_cfg).map_err(Error::in_stage("split"))
}

fn embedding_config_for_rep(cfg: &RunConfig, rep: usize) -> EmbeddingConfig {
    EmbeddingConfig {
        seed: seed::derive(cfg.seed, "embed", rep as u64),
        ..cfg.embedding.clone()
    }
}

fn mlp_config_for_rep(cfg: &RunConfig, rep: usize) -> MlpConfig {
    MlpConfig {
        seed: seed::derive(cfg.seed, "mlp", rep as u64),
        ..cfg.mlp.clone()
    }
}

/// One training example per train rating: the two entity vectors plus the
/// interest level rating / r_max.
pub fn build_examples(
    user_vectors: &Matrix,
    item_vectors: &Matrix,
    train: &Dataset,
) -> Vec<TrainingExample> {
    let r_max = train.r_max as f64;
    train
        .ratings
        .iter()
        .map(|&(u, i, r)| TrainingExample {
            user_vector: user_vectors.row(u).to_vec(),
            item_vector: item_vectors.row(i).to_vec(),
            interest: r as f64 / r_max,
        })
        .collect()
}

fn train_mlp_on(
    fitted: &mut FittedVariant,
    split: &TrainTestSplit,
    cfg: &RunConfig,
    rep: usize,
) -> Result<()> {
    let mlp_cfg = mlp_config_for_rep(cfg, rep);
    let examples = build_examples(&fitted.user_vectors, &fitted.item_vectors, &split.train);
    let dim = fitted.user_vectors.cols();
    let (model, selection) =
        mlp::train(&examples, &mlp_cfg, dim).map_err(Error::in_stage("train-mlp"))?;
    fitted.mlp = Some(model);
    fitted.selection = Some(selection);
    Ok(())
}

/// Fit the configured variant on one split.
pub fn fit_split(split: &TrainTestSplit, cfg: &RunConfig, rep: usize) -> Result<FittedVariant> {
    let embed_cfg = embedding_config_for_rep(cfg, rep);
    let mut fitted = match cfg.variant {
        Variant::UserItemMf => {
            let (user_vectors, item_vectors, trace) =
                embedding::factorize_user_item(split, &embed_cfg)
                    .map_err(Error::in_stage("embed"))?;
            FittedVariant {
                user_vectors,
                item_vectors,
                pco: None,
                embedding: None,
                trace,
                mlp: None,
                selection: None,
                num_zero_aggregates: 0,
            }
        }
        Variant::GemRankMlp | Variant::GemRankSimple => {
            let pco = build_pco(&split.train, cfg.basis);
            let (model, trace) =
                embedding::factorize_pco(&pco, &embed_cfg).map_err(Error::in_stage("embed"))?;
            let aggregated =
                profiles::aggregate(&model, split, cfg.aggregation, &cfg.aggregate_options())
                    .map_err(Error::in_stage("aggregate"))?;
            let num_zero_aggregates = aggregated.num_zero_vectors();
            let basic = embedding::entity_vectors(&model, cfg.embedding.representation_mode);
            let (user_vectors, item_vectors) = match cfg.basis {
                Basis::ItemBased => (aggregated.vectors, basic),
                Basis::UserBased => (basic, aggregated.vectors),
            };
            FittedVariant {
                user_vectors,
                item_vectors,
                pco: Some(pco),
                embedding: Some(model),
                trace,
                mlp: None,
                selection: None,
                num_zero_aggregates,
            }
        }
    };
    if cfg.variant.uses_mlp() {
        train_mlp_on(&mut fitted, split, cfg, rep)?;
    }
    Ok(fitted)
}

/// Split, fit, and score one repetition. Returns the per-cutoff user-mean
/// NDCG values alongside the fitted state.
pub fn eval_repetition(
    data: &Dataset,
    cfg: &RunConfig,
    rep: usize,
) -> Result<(TrainTestSplit, FittedVariant, Vec<f64>)> {
    let split = split_for_rep(data, cfg, rep)?;
    let fitted = fit_split(&split, cfg, rep)?;
    let rows = ranking::score_split(
        &fitted.user_vectors,
        &fitted.item_vectors,
        fitted.mlp.as_ref(),
        &split,
        &cfg.n_values,
        cfg.threads,
    )
    .map_err(Error::in_stage("evaluate"))?;
    let means = ranking::mean_ndcg(&rows, cfg.n_values.len());
    Ok((split, fitted, means))
}

fn write_trace(path: &Path, trace: &TrainingTrace) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for c in &trace.cost_per_epoch {
        writeln!(out, "{c}")?;
    }
    out.flush()?;
    Ok(())
}

fn write_selection(path: &Path, selection: &SelectionReport) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "hidden\tvalidation_loss")?;
    for &(hidden, loss) in &selection.validation_losses {
        writeln!(out, "{hidden}\t{loss}")?;
    }
    writeln!(out, "chosen\t{}", selection.chosen_hidden)?;
    out.flush()?;
    Ok(())
}

fn write_split_files(out_dir: &Path, split: &TrainTestSplit) -> Result<()> {
    dataset::write_ratings_tsv(
        &out_dir.join(TRAIN_TSV),
        &split.train,
        split.train.ratings.iter().copied(),
    )?;
    dataset::write_ratings_tsv(
        &out_dir.join(TEST_TSV),
        &split.train,
        split
            .test
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&(i, r)| (u, i, r))),
    )?;
    Ok(())
}

fn write_artifacts(cfg: &RunConfig, split: &TrainTestSplit, fitted: &FittedVariant) -> Result<()> {
    let out = &cfg.out_dir;
    write_split_files(out, split)?;
    if let Some(pco) = &fitted.pco {
        pco.write_text(&out.join(PCO_TSV))?;
    }
    if let Some(model) = &fitted.embedding {
        model.target_vectors.write_text(&out.join(EMBEDDING_TARGET))?;
        model
            .context_vectors
            .write_text(&out.join(EMBEDDING_CONTEXT))?;
    }
    fitted.user_vectors.write_text(&out.join(USER_VECTORS))?;
    fitted.item_vectors.write_text(&out.join(ITEM_VECTORS))?;
    write_trace(&out.join(COST_TRACE), &fitted.trace)?;
    if let Some(model) = &fitted.mlp {
        model.write_text(&out.join(MLP_MODEL))?;
    }
    if let Some(selection) = &fitted.selection {
        write_selection(&out.join(SELECTION_TSV), selection)?;
    }
    Ok(())
}

fn prepare_out_dir(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join(CONFIG_ECHO), cfg.to_flat_text())?;
    Ok(())
}

/// The full pipeline: artifacts from the first repetition's split, report
/// across all repetitions.
pub fn run_pipeline(cfg: &RunConfig) -> Result<EvalReport> {
    let data = load_dataset(cfg)?;
    prepare_out_dir(cfg)?;
    let mut rep_means = Vec::with_capacity(cfg.repetitions);
    for rep in 0..cfg.repetitions {
        let (split, fitted, means) = eval_repetition(&data, cfg, rep)?;
        if rep == 0 {
            write_artifacts(cfg, &split, &fitted).map_err(Error::in_stage("write-artifacts"))?;
        }
        rep_means.push(means);
    }
    let report = EvalReport::from_repetitions(
        cfg.variant.label(cfg.basis),
        cfg.split.upl,
        cfg.n_values.clone(),
        rep_means,
    );
    ranking::write_reports_text(&cfg.out_dir.join(REPORT_TXT), &[&report])?;
    ranking::write_reports_tsv(&cfg.out_dir.join(REPORT_TSV), &[&report])?;
    Ok(report)
}

/// `split` stage: write the first repetition's train/test dump.
pub fn cmd_split(cfg: &RunConfig) -> Result<TrainTestSplit> {
    let data = load_dataset(cfg)?;
    prepare_out_dir(cfg)?;
    let split = split_for_rep(&data, cfg, 0)?;
    write_split_files(&cfg.out_dir, &split)?;
    Ok(split)
}

/// `pco` stage: count co-occurrences over the first repetition's train set.
pub fn cmd_pco(cfg: &RunConfig) -> Result<PcoMatrix> {
    if cfg.variant == Variant::UserItemMf {
        return Err(Error::Config(
            "variant user-item-mf has no pco stage".into(),
        ));
    }
    let data = load_dataset(cfg)?;
    prepare_out_dir(cfg)?;
    let split = split_for_rep(&data, cfg, 0)?;
    let pco = build_pco(&split.train, cfg.basis);
    pco.write_text(&cfg.out_dir.join(PCO_TSV))?;
    Ok(pco)
}

fn read_pco_or_build(
    cfg: &RunConfig,
    data: &Dataset,
    split: &TrainTestSplit,
) -> Result<PcoMatrix> {
    let n = match cfg.basis {
        Basis::ItemBased => data.num_items,
        Basis::UserBased => data.num_users,
    };
    let path = cfg.out_dir.join(PCO_TSV);
    if path.exists() {
        PcoMatrix::read_text(&path, n, cfg.basis)
    } else {
        Ok(build_pco(&split.train, cfg.basis))
    }
}

/// `embed` stage: factorize (reusing a dumped co-occurrence matrix when one
/// is present) and dump the learned tables.
pub fn cmd_embed(cfg: &RunConfig) -> Result<TrainingTrace> {
    let data = load_dataset(cfg)?;
    prepare_out_dir(cfg)?;
    let split = split_for_rep(&data, cfg, 0)?;
    let embed_cfg = embedding_config_for_rep(cfg, 0);
    match cfg.variant {
        Variant::UserItemMf => {
            let (users, items, trace) = embedding::factorize_user_item(&split, &embed_cfg)
                .map_err(Error::in_stage("embed"))?;
            users.write_text(&cfg.out_dir.join(USER_VECTORS))?;
            items.write_text(&cfg.out_dir.join(ITEM_VECTORS))?;
            write_trace(&cfg.out_dir.join(COST_TRACE), &trace)?;
            Ok(trace)
        }
        _ => {
            let pco = read_pco_or_build(cfg, &data, &split).map_err(Error::in_stage("pco"))?;
            let (model, trace) =
                embedding::factorize_pco(&pco, &embed_cfg).map_err(Error::in_stage("embed"))?;
            model
                .target_vectors
                .write_text(&cfg.out_dir.join(EMBEDDING_TARGET))?;
            model
                .context_vectors
                .write_text(&cfg.out_dir.join(EMBEDDING_CONTEXT))?;
            write_trace(&cfg.out_dir.join(COST_TRACE), &trace)?;
            Ok(trace)
        }
    }
}

fn require(path: std::path::PathBuf) -> Result<std::path::PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path))
    }
}

fn read_embedding(cfg: &RunConfig) -> Result<EmbeddingModel> {
    let target = Matrix::read_text(&require(cfg.out_dir.join(EMBEDDING_TARGET))?)?;
    let context = Matrix::read_text(&require(cfg.out_dir.join(EMBEDDING_CONTEXT))?)?;
    if target.rows() != context.rows() || target.cols() != context.cols() {
        return Err(Error::DimensionMismatch(
            "target and context tables disagree".into(),
        ));
    }
    let dim = target.cols();
    Ok(EmbeddingModel {
        target_vectors: target,
        context_vectors: context,
        basis: cfg.basis,
        dim,
    })
}

/// `aggregate` stage: read the dumped embedding and write both final
/// vector tables.
pub fn cmd_aggregate(cfg: &RunConfig) -> Result<()> {
    if cfg.variant == Variant::UserItemMf {
        return Err(Error::Config(
            "variant user-item-mf has no aggregate stage".into(),
        ));
    }
    let data = load_dataset(cfg)?;
    prepare_out_dir(cfg)?;
    let split = split_for_rep(&data, cfg, 0)?;
    let model = read_embedding(cfg)?;
    let aggregated = profiles::aggregate(&model, &split, cfg.aggregation, &cfg.aggregate_options())
        .map_err(Error::in_stage("aggregate"))?;
    let basic = embedding::entity_vectors(&model, cfg.embedding.representation_mode);
    let (user_vectors, item_vectors) = match cfg.basis {
        Basis::ItemBased => (aggregated.vectors, basic),
        Basis::UserBased => (basic, aggregated.vectors),
    };
    user_vectors.write_text(&cfg.out_dir.join(USER_VECTORS))?;
    item_vectors.write_text(&cfg.out_dir.join(ITEM_VECTORS))?;
    Ok(())
}

/// `train-mlp` stage: read the dumped vector tables and train the network.
pub fn cmd_train_mlp(cfg: &RunConfig) -> Result<SelectionReport> {
    if !cfg.variant.uses_mlp() {
        return Err(Error::Config(
            "variant gemrank-simple has no train-mlp stage".into(),
        ));
    }
    let data = load_dataset(cfg)?;
    prepare_out_dir(cfg)?;
    let split = split_for_rep(&data, cfg, 0)?;
    let user_vectors = Matrix::read_text(&require(cfg.out_dir.join(USER_VECTORS))?)?;
    let item_vectors = Matrix::read_text(&require(cfg.out_dir.join(ITEM_VECTORS))?)?;
    if user_vectors.rows() != data.num_users || item_vectors.rows() != data.num_items {
        return Err(Error::DimensionMismatch(
            "vector tables do not match the dataset".into(),
        ));
    }
    let examples = build_examples(&user_vectors, &item_vectors, &split.train);
    let mlp_cfg = mlp_config_for_rep(cfg, 0);
    let (model, selection) = mlp::train(&examples, &mlp_cfg, user_vectors.cols())
        .map_err(Error::in_stage("train-mlp"))?;
    model.write_text(&cfg.out_dir.join(MLP_MODEL))?;
    write_selection(&cfg.out_dir.join(SELECTION_TSV), &selection)?;
    Ok(selection)
}

/// `evaluate` stage: the repetition protocol without per-split artifacts.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvalReport> {
    let data = load_dataset(cfg)?;
    prepare_out_dir(cfg)?;
    let report = ranking::evaluate(&data, cfg)?;
    ranking::write_reports_text(&cfg.out_dir.join(REPORT_TXT), &[&report])?;
    ranking::write_reports_tsv(&cfg.out_dir.join(REPORT_TSV), &[&report])?;
    Ok(report)
}

/// Deployment-style ranking over everything the user has not trained on,
/// from previously persisted artifacts.
pub fn recommend(cfg: &RunConfig, user_id: &str, top_n: usize) -> Result<Vec<(String, f64)>> {
    let data = load_dataset(cfg)?;
    let user = data
        .user_index(user_id)
        .ok_or_else(|| Error::UnknownUser(user_id.to_string()))?;
    if top_n == 0 {
        return Ok(Vec::new());
    }
    let user_vectors = Matrix::read_text(&require(cfg.out_dir.join(USER_VECTORS))?)?;
    let item_vectors = Matrix::read_text(&require(cfg.out_dir.join(ITEM_VECTORS))?)?;
    if user_vectors.rows() != data.num_users || item_vectors.rows() != data.num_items {
        return Err(Error::DimensionMismatch(
            "vector tables do not match the dataset".into(),
        ));
    }
    let split = split_for_rep(&data, cfg, 0)?;
    let trained: std::collections::HashSet<usize> = split.train.user_profiles[user]
        .iter()
        .map(|&(i, _)| i)
        .collect();
    let candidates: Vec<usize> = (0..data.num_items)
        .filter(|i| !trained.contains(i))
        .collect();
    let ranking: Ranking = if cfg.variant.uses_mlp() {
        let model = MlpModel::read_text(&require(cfg.out_dir.join(MLP_MODEL))?)?;
        ranking::rank_mlp(&model, user, user_vectors.row(user), &item_vectors, &candidates)?
    } else {
        ranking::rank_simple(user, user_vectors.row(user), &item_vectors, &candidates)?
    };
    Ok(ranking
        .entries
        .into_iter()
        .take(top_n)
        .map(|(i, score)| (data.item_ids[i].clone(), score))
        .collect())
}
