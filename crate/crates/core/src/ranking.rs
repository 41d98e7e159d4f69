//! Per-user rankings (network-scored or cosine nearest-neighbor) and
//! NDCG@n evaluation against held-out ratings.

use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::dataset::TrainTestSplit;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::mlp::{forward_unchecked, MlpModel};

/// Items ordered by descending score; ties break toward the smaller item
/// index so rankings are reproducible across implementations.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub user_index: usize,
    /// (item_index, score), sorted by (-score, item_index).
    pub entries: Vec<(usize, f64)>,
}

fn sort_entries(entries: &mut [(usize, f64)]) {
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

fn check_candidates(item_vectors: &Matrix, candidates: &[usize]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if let Some(&bad) = candidates.iter().find(|&&i| i >= item_vectors.rows()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            n: item_vectors.rows(),
        });
    }
    Ok(())
}

/// Score every candidate with the interest network and sort.
pub fn rank_mlp(
    model: &MlpModel,
    user_index: usize,
    user_vector: &[f64],
    item_vectors: &Matrix,
    candidates: &[usize],
) -> Result<Ranking> {
    check_candidates(item_vectors, candidates)?;
    if user_vector.len() != model.dim || item_vectors.cols() != model.dim {
        return Err(Error::DimensionMismatch(format!(
            "model dim {} vs user {} / items {}",
            model.dim,
            user_vector.len(),
            item_vectors.cols()
        )));
    }
    let mut entries: Vec<(usize, f64)> = candidates
        .iter()
        .map(|&i| (i, forward_unchecked(model, user_vector, item_vectors.row(i))))
        .collect();
    sort_entries(&mut entries);
    Ok(Ranking {
        user_index,
        entries,
    })
}

/// Score candidates by cosine similarity to the user vector; zero-norm
/// vectors score 0.
pub fn rank_simple(
    user_index: usize,
    user_vector: &[f64],
    item_vectors: &Matrix,
    candidates: &[usize],
) -> Result<Ranking> {
    check_candidates(item_vectors, candidates)?;
    if user_vector.len() != item_vectors.cols() {
        return Err(Error::DimensionMismatch(format!(
            "user dim {} vs item dim {}",
            user_vector.len(),
            item_vectors.cols()
        )));
    }
    let user_norm = dot(user_vector, user_vector).sqrt();
    let mut entries: Vec<(usize, f64)> = candidates
        .iter()
        .map(|&i| {
            let item = item_vectors.row(i);
            let item_norm = dot(item, item).sqrt();
            let score = if user_norm == 0.0 || item_norm == 0.0 {
                0.0
            } else {
                dot(user_vector, item) / (user_norm * item_norm)
            };
            (i, score)
        })
        .collect();
    sort_entries(&mut entries);
    Ok(Ranking {
        user_index,
        entries,
    })
}

fn gain(rating: u8) -> f64 {
    (2.0f64).powi(rating as i32) - 1.0
}

fn discount(position: usize) -> f64 {
    // 1-based position i gets 1 / log2(i + 1).
    ((position + 1) as f64).log2()
}

/// NDCG@n of a ranking against the user's test ratings. Every ranked item
/// must carry a test rating; the ideal ordering sorts the test items by
/// rating, descending.
pub fn ndcg_at_n(ranking: &Ranking, test_ratings: &[(usize, u8)], n: usize) -> Result<f64> {
    assert!(n >= 1, "cutoff must be >= 1");
    let by_item: HashMap<usize, u8> = test_ratings.iter().copied().collect();

    let mut dcg = 0.0;
    for (pos, &(item, _)) in ranking.entries.iter().take(n).enumerate() {
        let rating = *by_item
            .get(&item)
            .ok_or(Error::MissingTestRating(item))?;
        dcg += gain(rating) / discount(pos + 1);
    }

    let mut ideal: Vec<u8> = test_ratings.iter().map(|&(_, r)| r).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let beta: f64 = ideal
        .iter()
        .take(n)
        .enumerate()
        .map(|(pos, &r)| gain(r) / discount(pos + 1))
        .sum();

    if beta == 0.0 {
        return Ok(1.0);
    }
    Ok(dcg / beta)
}

/// NDCG@n means over users, one row per repetition, aggregated into a mean
/// and population standard deviation per cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub variant: String,
    pub upl: usize,
    pub n_values: Vec<usize>,
    /// `per_repetition[rep][k]` is the user-mean NDCG@{n_values[k]}.
    pub per_repetition: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl EvalReport {
    pub fn from_repetitions(
        variant: String,
        upl: usize,
        n_values: Vec<usize>,
        per_repetition: Vec<Vec<f64>>,
    ) -> Self {
        let reps = per_repetition.len().max(1) as f64;
        let mut mean = vec![0.0; n_values.len()];
        for rep in &per_repetition {
            for (k, v) in rep.iter().enumerate() {
                mean[k] += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= reps;
        }
        let mut std = vec![0.0; n_values.len()];
        for rep in &per_repetition {
            for (k, v) in rep.iter().enumerate() {
                std[k] += (v - mean[k]) * (v - mean[k]);
            }
        }
        for s in std.iter_mut() {
            *s = (*s / reps).sqrt();
        }
        EvalReport {
            variant,
            upl,
            n_values,
            per_repetition,
            mean,
            std,
        }
    }
}

/// Human-readable report table.
pub fn write_reports_text(path: &Path, reports: &[&EvalReport]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    if let Some(first) = reports.first() {
        let mut header = format!("{:<14} {:>4}", "variant", "upl");
        for n in &first.n_values {
            header.push_str(&format!(" {:>12} {:>12}", format!("ndcg@{n}_mean"), format!("ndcg@{n}_std")));
        }
        writeln!(out, "{header}")?;
    }
    for r in reports {
        let mut line = format!("{:<14} {:>4}", r.variant, r.upl);
        for k in 0..r.n_values.len() {
            line.push_str(&format!(" {:>12.6} {:>12.6}", r.mean[k], r.std[k]));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Machine-readable dump: tab-separated, full-precision floats.
pub fn write_reports_tsv(path: &Path, reports: &[&EvalReport]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    if let Some(first) = reports.first() {
        let mut header = "variant\tupl".to_string();
        for n in &first.n_values {
            header.push_str(&format!("\tndcg@{n}_mean\tndcg@{n}_std"));
        }
        writeln!(out, "{header}")?;
    }
    for r in reports {
        let mut line = format!("{}\t{}", r.variant, r.upl);
        for k in 0..r.n_values.len() {
            line.push_str(&format!("\t{}\t{}", r.mean[k], r.std[k]));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Per-user NDCG values for every cutoff over a fitted variant's scores.
/// Returns `rows[user_pos][k]` aligned with `split.included_users`.
pub fn score_split(
    user_vectors: &Matrix,
    item_vectors: &Matrix,
    mlp: Option<&MlpModel>,
    split: &TrainTestSplit,
    n_values: &[usize],
    threads: usize,
) -> Result<Vec<Vec<f64>>> {
    let users = &split.included_users;
    let mut rows: Vec<Vec<f64>> = vec![vec![0.0; n_values.len()]; users.len()];

    let score_user = |&u: &usize, row: &mut Vec<f64>| -> Result<()> {
        let test = &split.test[u];
        let candidates: Vec<usize> = test.iter().map(|&(i, _)| i).collect();
        let ranking = match mlp {
            Some(model) => rank_mlp(model, u, user_vectors.row(u), item_vectors, &candidates)?,
            None => rank_simple(u, user_vectors.row(u), item_vectors, &candidates)?,
        };
        for (k, &n) in n_values.iter().enumerate() {
            row[k] = ndcg_at_n(&ranking, test, n)?;
        }
        Ok(())
    };

    if threads <= 1 {
        for (u, row) in users.iter().zip(rows.iter_mut()) {
            score_user(u, row)?;
        }
    } else {
        let chunk = users.len().div_ceil(threads);
        let results: Vec<Result<()>> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (user_chunk, row_chunk) in users.chunks(chunk).zip(rows.chunks_mut(chunk)) {
                handles.push(scope.spawn(move || {
                    for (u, row) in user_chunk.iter().zip(row_chunk.iter_mut()) {
                        score_user(u, row)?;
                    }
                    Ok(())
                }));
            }
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for r in results {
            r?;
        }
    }
    Ok(rows)
}

/// Repeated-split evaluation: for every repetition, a fresh seeded split
/// runs through the whole configured pipeline and each included user's test
/// items are ranked and scored; repetition means are then aggregated.
pub fn evaluate(data: &crate::dataset::Dataset, cfg: &crate::config::RunConfig) -> Result<EvalReport> {
    let mut rep_means = Vec::with_capacity(cfg.repetitions);
    for rep in 0..cfg.repetitions {
        let (_, _, means) = crate::pipeline::eval_repetition(data, cfg, rep)?;
        rep_means.push(means);
    }
    Ok(EvalReport::from_repetitions(
        cfg.variant.label(cfg.basis),
        cfg.split.upl,
        cfg.n_values.clone(),
        rep_means,
    ))
}

/// Column means of [`score_split`] rows: the per-repetition user-mean NDCG.
pub fn mean_ndcg(rows: &[Vec<f64>], n_count: usize) -> Vec<f64> {
    let mut means = vec![0.0; n_count];
    for row in rows {
        for (k, v) in row.iter().enumerate() {
            means[k] += v;
        }
    }
    let count = rows.len().max(1) as f64;
    for m in means.iter_mut() {
        *m /= count;
    }
    means
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_candidate_ranking() {
        let items = Matrix::from_rows(vec![vec![1.0, 0.0]]);
        let r = rank_simple(0, &[1.0, 0.0], &items, &[0]).unwrap();
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.entries[0].0, 0);
    }

    #[test]
    fn equal_scores_break_ties_by_index() {
        let items = Matrix::from_rows(vec![vec![2.0, 0.0], vec![1.0, 0.0]]);
        // Both candidates are parallel to the user: cosine 1 each.
        let r = rank_simple(0, &[1.0, 0.0], &items, &[1, 0]).unwrap();
        assert_eq!(r.entries[0].0, 0);
        assert_eq!(r.entries[1].0, 1);
        assert_eq!(r.entries[0].1, 1.0);
    }

    #[test]
    fn zero_user_vector_scores_zero_ascending() {
        let items = Matrix::from_rows(vec![vec![1.0], vec![2.0], vec![3.0]]);
        let r = rank_simple(0, &[0.0], &items, &[2, 0, 1]).unwrap();
        assert!(r.entries.iter().all(|&(_, s)| s == 0.0));
        let order: Vec<usize> = r.entries.iter().map(|&(i, _)| i).collect();
        assert_eq!(order, vec![0, 1, 2]);
    }

    #[test]
    fn cosine_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let user: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let items = Matrix::from_rows(rows.clone());
        let candidates: Vec<usize> = (0..10).collect();
        let r = rank_simple(0, &user, &items, &candidates).unwrap();
        for &(i, s) in &r.entries {
            let mut d = 0.0;
            let mut nu = 0.0;
            let mut ni = 0.0;
            for k in 0..5 {
                d += user[k] * rows[i][k];
                nu += user[k] * user[k];
                ni += rows[i][k] * rows[i][k];
            }
            let expect = d / (nu.sqrt() * ni.sqrt());
            assert!((s - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_candidates_error() {
        let items = Matrix::from_rows(vec![vec![1.0]]);
        assert!(matches!(
            rank_simple(0, &[1.0], &items, &[]),
            Err(Error::EmptyCandidates)
        ));
    }

    #[test]
    fn mlp_ranking_matches_rescoring_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = MlpModel {
            w_hidden: {
                let mut m = Matrix::zeros(3, 8);
                for h in 0..3 {
                    for v in m.row_mut(h) {
                        *v = rng.gen_range(-1.0..1.0);
                    }
                }
                m
            },
            b_hidden: vec![0.1, -0.2, 0.05],
            w_out: vec![0.7, -0.3, 0.4],
            b_out: 0.02,
            hidden: 3,
            dim: 4,
        };
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let items = Matrix::from_rows(rows);
        let user: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let candidates: Vec<usize> = (0..10).collect();
        let ranking = rank_mlp(&model, 0, &user, &items, &candidates).unwrap();

        // Recompute scores independently and re-sort.
        let mut expect: Vec<(usize, f64)> = candidates
            .iter()
            .map(|&i| {
                (
                    i,
                    crate::mlp::forward(&model, &user, items.row(i)).unwrap(),
                )
            })
            .collect();
        expect.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let got: Vec<usize> = ranking.entries.iter().map(|&(i, _)| i).collect();
        let want: Vec<usize> = expect.iter().map(|&(i, _)| i).collect();
        assert_eq!(got, want);
    }

    fn ranking_of(items: &[usize]) -> Ranking {
        // Scores encode the given order.
        Ranking {
            user_index: 0,
            entries: items
                .iter()
                .enumerate()
                .map(|(pos, &i)| (i, 1.0 - pos as f64 * 0.01))
                .collect(),
        }
    }

    /// Independent naive NDCG reimplementation used as the oracle.
    fn ndcg_oracle(ordered_items: &[usize], ratings: &[(usize, u8)], n: usize) -> f64 {
        let lookup: HashMap<usize, u8> = ratings.iter().copied().collect();
        let mut dcg = 0.0;
        for (idx, item) in ordered_items.iter().take(n).enumerate() {
            let r = lookup[item] as f64;
            dcg += (2f64.powf(r) - 1.0) / ((idx as f64 + 2.0).ln() / 2f64.ln());
        }
        let mut sorted: Vec<f64> = ratings.iter().map(|&(_, r)| r as f64).collect();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut beta = 0.0;
        for (idx, r) in sorted.iter().take(n).enumerate() {
            beta += (2f64.powf(*r) - 1.0) / ((idx as f64 + 2.0).ln() / 2f64.ln());
        }
        if beta == 0.0 {
            1.0
        } else {
            dcg / beta
        }
    }

    #[test]
    fn ideal_ordering_scores_exactly_one() {
        let ratings = vec![(0, 5), (1, 4), (2, 4), (3, 1)];
        let r = ranking_of(&[0, 1, 2, 3]);
        assert_eq!(ndcg_at_n(&r, &ratings, 3).unwrap(), 1.0);
        assert_eq!(ndcg_at_n(&r, &ratings, 10).unwrap(), 1.0);
    }

    #[test]
    fn worked_two_item_example() {
        // Ratings A=3, B=1 ranked [B, A] at n=2; the stated formula gives
        // 5.4165082750002025 / 7.630929753571458.
        let ratings = vec![(10, 3), (20, 1)];
        let r = ranking_of(&[20, 10]);
        let ndcg = ndcg_at_n(&r, &ratings, 2).unwrap();
        assert!((ndcg - 0.7098097413968655).abs() < 1e-12, "ndcg = {ndcg}");
    }

    #[test]
    fn random_permutations_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let ratings: Vec<(usize, u8)> = (0..8).map(|i| (i, rng.gen_range(1..=5))).collect();
        let mut items: Vec<usize> = (0..8).collect();
        for _ in 0..100 {
            use rand::seq::SliceRandom;
            items.shuffle(&mut rng);
            let n = rng.gen_range(1..=10);
            let r = ranking_of(&items);
            let got = ndcg_at_n(&r, &ratings, n).unwrap();
            let want = ndcg_oracle(&items, &ratings, n);
            assert!((got - want).abs() < 1e-12, "n={n} got {got} want {want}");
        }
    }

    #[test]
    fn missing_test_rating_is_an_error() {
        let ratings = vec![(0, 3)];
        let r = ranking_of(&[0, 7]);
        assert!(matches!(
            ndcg_at_n(&r, &ratings, 2),
            Err(Error::MissingTestRating(7))
        ));
    }

    #[test]
    fn repetition_aggregation() {
        let report = EvalReport::from_repetitions(
            "simple".into(),
            10,
            vec![5, 10],
            vec![vec![0.6, 0.7]],
        );
        assert_eq!(report.mean, vec![0.6, 0.7]);
        assert_eq!(report.std, vec![0.0, 0.0]);

        let report = EvalReport::from_repetitions(
            "simple".into(),
            10,
            vec![5],
            vec![vec![0.5], vec![0.7]],
        );
        assert!((report.mean[0] - 0.6).abs() < 1e-15);
        assert!((report.std[0] - 0.1).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        /// NDCG stays in [0, 1], is 1 for the ideal ordering, and does not
        /// change when items with equal ratings are permuted.
        #[test]
        fn prop_ndcg_range_and_tie_invariance(
            ratings in prop::collection::vec(1u8..=5, 2..10),
            seedling in any::<u64>(),
            n in 1usize..12,
        ) {
            let rated: Vec<(usize, u8)> = ratings.iter().copied().enumerate().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seedling);
            let mut items: Vec<usize> = (0..rated.len()).collect();
            use rand::seq::SliceRandom;
            items.shuffle(&mut rng);
            let value = ndcg_at_n(&ranking_of(&items), &rated, n).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&value));

            let mut ideal: Vec<usize> = (0..rated.len()).collect();
            ideal.sort_by_key(|&i| std::cmp::Reverse(ratings[i]));
            prop_assert_eq!(ndcg_at_n(&ranking_of(&ideal), &rated, n).unwrap(), 1.0);

            // Swap two equally rated adjacent items in the permutation.
            for pos in 0..items.len().saturating_sub(1) {
                if ratings[items[pos]] == ratings[items[pos + 1]] {
                    let mut swapped = items.clone();
                    swapped.swap(pos, pos + 1);
                    let v2 = ndcg_at_n(&ranking_of(&swapped), &rated, n).unwrap();
                    prop_assert!((value - v2).abs() < 1e-12);
                }
            }
        }

        /// Promoting a higher-rated item over a lower-rated neighbor never
        /// decreases NDCG.
        #[test]
        fn prop_ndcg_swap_monotonicity(
            ratings in prop::collection::vec(1u8..=5, 2..10),
            seedling in any::<u64>(),
            n in 1usize..12,
        ) {
            let rated: Vec<(usize, u8)> = ratings.iter().copied().enumerate().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seedling);
            let mut items: Vec<usize> = (0..rated.len()).collect();
            use rand::seq::SliceRandom;
            items.shuffle(&mut rng);
            let before = ndcg_at_n(&ranking_of(&items), &rated, n).unwrap();
            for pos in 0..items.len() - 1 {
                if ratings[items[pos + 1]] > ratings[items[pos]] {
                    let mut swapped = items.clone();
                    swapped.swap(pos, pos + 1);
                    let after = ndcg_at_n(&ranking_of(&swapped), &rated, n).unwrap();
                    prop_assert!(after >= before - 1e-12);
                }
            }
        }

        /// Rankings are deterministic functions of their inputs.
        #[test]
        fn prop_rankings_deterministic(
            seedling in any::<u64>(),
            count in 2usize..8,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seedling);
            let rows: Vec<Vec<f64>> = (0..count)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let items = Matrix::from_rows(rows);
            let user: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let candidates: Vec<usize> = (0..count).collect();
            let a = rank_simple(0, &user, &items, &candidates).unwrap();
            let b = rank_simple(0, &user, &items, &candidates).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
