//! Rating-log ingestion, dense indexing, and UPL train/test splits.
//!
//! External user/item identifiers are opaque strings; everything downstream
//! works on dense 0-based indices assigned in order of first appearance.

use std::collections::HashMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One parsed line of a rating log. Timestamps are parsed for validation and
/// then ignored by every later stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: u8,
    pub timestamp: Option<i64>,
}

/// Field layout of a rating log: delimiter-separated
/// `user item rating [timestamp]` lines.
#[derive(Debug, Clone)]
pub struct RatingsFormat {
    /// Field delimiter, e.g. "\t" for MovieLens-100K or "::" for
    /// MovieLens-1M.
    pub delimiter: String,
    /// Maximum possible rating; ratings must lie in `[1, r_max]`.
    pub r_max: u8,
}

impl Default for RatingsFormat {
    fn default() -> Self {
        RatingsFormat {
            delimiter: "\t".to_string(),
            r_max: 5,
        }
    }
}

/// An indexed rating log. `user_profiles` and `item_profiles` are exact
/// transposes of each other.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub num_users: usize,
    pub num_items: usize,
    /// (user_index, item_index, rating), in user-profile order.
    pub ratings: Vec<(usize, usize, u8)>,
    /// Per user: (item_index, rating).
    pub user_profiles: Profiles,
    /// Per item: (user_index, rating).
    pub item_profiles: Profiles,
    pub r_max: u8,
    /// External id of each user index.
    pub user_ids: Vec<String>,
    /// External id of each item index.
    pub item_ids: Vec<String>,
}

impl Dataset {
    pub fn user_index(&self, user_id: &str) -> Option<usize> {
        self.user_ids.iter().position(|u| u == user_id)
    }

    pub fn item_index(&self, item_id: &str) -> Option<usize> {
        self.item_ids.iter().position(|i| i == item_id)
    }
}

/// How a dataset is cut into per-user train/test sets.
#[derive(Debug, Clone)]
pub struct SplitConfig {
    /// Ratings retained per user for training.
    pub upl: usize,
    /// Minimum held-out ratings required to keep a user.
    pub min_test_items: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            upl: 50,
            min_test_items: 10,
            seed: 0,
        }
    }
}

/// A seeded UPL split. Index spaces are shared with the source dataset;
/// excluded users simply have empty train profiles and no test ratings.
#[derive(Debug, Clone)]
pub struct TrainTestSplit {
    pub train: Dataset,
    /// Per user: held-out (item_index, rating). Empty for excluded users.
    pub test: Vec<Vec<(usize, u8)>>,
    /// Users with at least `upl + min_test_items` ratings, ascending.
    pub included_users: Vec<usize>,
}

/// Parse a rating log. Duplicate (user, item) pairs keep the rating of the
/// last occurrence, at the position of first appearance.
pub fn parse_ratings<R: BufRead>(source: R, format: &RatingsFormat) -> Result<Vec<RatingRecord>> {
    let mut records: Vec<RatingRecord> = Vec::new();
    let mut seen: HashMap<(String, String), usize> = HashMap::new();

    for (line_no, line) in source.lines().enumerate() {
        let line_no = line_no + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(format.delimiter.as_str()).collect();
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        if fields.len() < 3 || fields.len() > 4 {
            return Err(parse_err(format!(
                "expected 3 or 4 fields, found {}",
                fields.len()
            )));
        }
        let user_id = fields[0].trim();
        let item_id = fields[1].trim();
        if user_id.is_empty() || item_id.is_empty() {
            return Err(parse_err("empty user or item id".to_string()));
        }
        let rating: u8 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("non-numeric rating `{}`", fields[2])))?;
        if rating < 1 || rating > format.r_max {
            return Err(parse_err(format!(
                "rating {rating} outside [1, {}]",
                format.r_max
            )));
        }
        let timestamp = match fields.get(3) {
            Some(t) => Some(
                t.trim()
                    .parse::<i64>()
                    .map_err(|_| parse_err(format!("non-numeric timestamp `{t}`")))?,
            ),
            None => None,
        };
        let record = RatingRecord {
            user_id: user_id.to_string(),
            item_id: item_id.to_string(),
            rating,
            timestamp,
        };
        match seen.get(&(record.user_id.clone(), record.item_id.clone())) {
            Some(&pos) => records[pos] = record,
            None => {
                seen.insert((record.user_id.clone(), record.item_id.clone()), records.len());
                records.push(record);
            }
        }
    }
    Ok(records)
}

/// Assign dense indices in order of first appearance and build both profile
/// views.
pub fn index_dataset(records: &[RatingRecord], r_max: u8) -> Result<Dataset> {
    if records.is_empty() {
        return Err(Error::Empty("rating record list"));
    }
    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut item_index: HashMap<&str, usize> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut ratings = Vec::with_capacity(records.len());

    for rec in records {
        let u = *user_index.entry(&rec.user_id).or_insert_with(|| {
            user_ids.push(rec.user_id.clone());
            user_ids.len() - 1
        });
        let i = *item_index.entry(&rec.item_id).or_insert_with(|| {
            item_ids.push(rec.item_id.clone());
            item_ids.len() - 1
        });
        ratings.push((u, i, rec.rating));
    }

    let num_users = user_ids.len();
    let num_items = item_ids.len();
    let (user_profiles, item_profiles) = build_profiles(num_users, num_items, &ratings);
    Ok(Dataset {
        num_users,
        num_items,
        ratings,
        user_profiles,
        item_profiles,
        r_max,
        user_ids,
        item_ids,
    })
}

/// Per-entity profile lists: `profiles[entity] = [(other_entity, rating)]`.
pub type Profiles = Vec<Vec<(usize, u8)>>;

fn build_profiles(
    num_users: usize,
    num_items: usize,
    ratings: &[(usize, usize, u8)],
) -> (Profiles, Profiles) {
    let mut user_profiles = vec![Vec::new(); num_users];
    let mut item_profiles = vec![Vec::new(); num_items];
    for &(u, i, r) in ratings {
        user_profiles[u].push((i, r));
        item_profiles[i].push((u, r));
    }
    (user_profiles, item_profiles)
}

/// Split each sufficiently rated user's profile into exactly `upl` train
/// ratings (chosen uniformly at random, seeded) and the rest as test.
pub fn split_upl(dataset: &Dataset, config: &SplitConfig) -> Result<TrainTestSplit> {
    assert!(config.upl >= 1, "upl must be >= 1");
    assert!(config.min_test_items >= 1, "min_test_items must be >= 1");

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut included_users = Vec::new();
    let mut test: Vec<Vec<(usize, u8)>> = vec![Vec::new(); dataset.num_users];
    let mut train_ratings: Vec<(usize, usize, u8)> = Vec::new();

    for (u, profile) in dataset.user_profiles.iter().enumerate() {
        if profile.len() < config.upl + config.min_test_items {
            continue;
        }
        included_users.push(u);
        let mut chosen = rand::seq::index::sample(&mut rng, profile.len(), config.upl).into_vec();
        chosen.sort_unstable();
        let mut next = chosen.iter().peekable();
        for (pos, &(i, r)) in profile.iter().enumerate() {
            if next.peek() == Some(&&pos) {
                next.next();
                train_ratings.push((u, i, r));
            } else {
                test[u].push((i, r));
            }
        }
    }

    if included_users.is_empty() {
        return Err(Error::EmptySplit {
            upl: config.upl,
            min_test_items: config.min_test_items,
        });
    }

    let (user_profiles, item_profiles) =
        build_profiles(dataset.num_users, dataset.num_items, &train_ratings);
    let train = Dataset {
        num_users: dataset.num_users,
        num_items: dataset.num_items,
        ratings: train_ratings,
        user_profiles,
        item_profiles,
        r_max: dataset.r_max,
        user_ids: dataset.user_ids.clone(),
        item_ids: dataset.item_ids.clone(),
    };
    Ok(TrainTestSplit {
        train,
        test,
        included_users,
    })
}

/// Dump one side of a split as `user<TAB>item<TAB>rating` lines with
/// external ids.
pub fn write_ratings_tsv(
    path: &Path,
    dataset: &Dataset,
    ratings: impl Iterator<Item = (usize, usize, u8)>,
) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for (u, i, r) in ratings {
        writeln!(
            out,
            "{}\t{}\t{}",
            dataset.user_ids[u], dataset.item_ids[i], r
        )?;
    }
    out.flush()?;
    Ok(())
}
