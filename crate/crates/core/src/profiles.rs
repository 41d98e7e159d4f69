//! Aggregation of basic-entity embeddings into vectors for the other
//! entity type: users from their rated items under the item basis, items
//! from their raters under the user basis.

use crate::dataset::TrainTestSplit;
use crate::embedding::{EmbeddingModel, RepresentationMode};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pco::Basis;

/// How profile entries are weighted when summing basic-entity vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Unweighted sum over the train profile.
    Binary,
    /// Sum weighted by (rating - profile mean rating).
    #[default]
    RateCentered,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Binary => "binary",
            Aggregation::RateCentered => "rate-centered",
        }
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Aggregation::Binary),
            "rate-centered" => Ok(Aggregation::RateCentered),
            other => Err(Error::Config(format!("unknown aggregation `{other}`"))),
        }
    }
}

/// Which entity type the aggregated vectors describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntityRole {
    Users,
    Items,
}

/// Aggregated vectors for the non-basic entity. Entities with empty train
/// profiles get zero vectors (and a zero mean).
#[derive(Debug, Clone, PartialEq)]
pub struct EntityVectors {
    pub vectors: Matrix,
    pub aggregation: Aggregation,
    /// Per-entity train rating mean; present only for rate-centered
    /// aggregation.
    pub means: Option<Vec<f64>>,
    pub role: EntityRole,
}

impl EntityVectors {
    /// Entities whose aggregate came out identically zero.
    pub fn num_zero_vectors(&self) -> usize {
        (0..self.vectors.rows())
            .filter(|&i| self.vectors.row(i).iter().all(|&v| v == 0.0))
            .count()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AggregateOptions {
    pub representation: RepresentationMode,
    /// L2-normalize each aggregated vector (zero vectors stay zero).
    pub normalize: bool,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        AggregateOptions {
            representation: RepresentationMode::Target,
            normalize: false,
        }
    }
}

/// Unweighted profile sum over the train profiles.
pub fn aggregate_binary(
    model: &EmbeddingModel,
    split: &TrainTestSplit,
    options: &AggregateOptions,
) -> Result<EntityVectors> {
    aggregate(model, split, Aggregation::Binary, options)
}

/// Rate-centered profile sum; the mean is computed over train ratings only.
pub fn aggregate_rate_centered(
    model: &EmbeddingModel,
    split: &TrainTestSplit,
    options: &AggregateOptions,
) -> Result<EntityVectors> {
    aggregate(model, split, Aggregation::RateCentered, options)
}

pub fn aggregate(
    model: &EmbeddingModel,
    split: &TrainTestSplit,
    aggregation: Aggregation,
    options: &AggregateOptions,
) -> Result<EntityVectors> {
    // Under the item basis the profile entries are items (the basic
    // entity) and we aggregate users; under the user basis the roles swap.
    let (basic_count, profiles, role) = match model.basis {
        Basis::ItemBased => (
            split.train.num_items,
            &split.train.user_profiles,
            EntityRole::Users,
        ),
        Basis::UserBased => (
            split.train.num_users,
            &split.train.item_profiles,
            EntityRole::Items,
        ),
    };
    if model.n() != basic_count {
        return Err(Error::BasisMismatch(format!(
            "model embeds {} {} entities but the split has {}",
            model.n(),
            model.basis.as_str(),
            basic_count
        )));
    }

    let mut vectors = Matrix::zeros(profiles.len(), model.dim);
    let mut means = matches!(aggregation, Aggregation::RateCentered)
        .then(|| vec![0.0f64; profiles.len()]);

    for (e, profile) in profiles.iter().enumerate() {
        let lambda = match aggregation {
            Aggregation::Binary => 0.0,
            Aggregation::RateCentered => {
                if profile.is_empty() {
                    0.0
                } else {
                    profile.iter().map(|&(_, r)| r as f64).sum::<f64>() / profile.len() as f64
                }
            }
        };
        if let Some(means) = means.as_mut() {
            means[e] = lambda;
        }
        let row = vectors.row_mut(e);
        for &(k, r) in profile {
            let weight = match aggregation {
                Aggregation::Binary => 1.0,
                Aggregation::RateCentered => r as f64 - lambda,
            };
            let t = model.target_vectors.row(k);
            let c = model.context_vectors.row(k);
            match options.representation {
                RepresentationMode::Target => {
                    for (slot, v) in row.iter_mut().zip(t) {
                        *slot += weight * v;
                    }
                }
                RepresentationMode::Context => {
                    for (slot, v) in row.iter_mut().zip(c) {
                        *slot += weight * v;
                    }
                }
                RepresentationMode::Sum => {
                    for (slot, (a, b)) in row.iter_mut().zip(t.iter().zip(c)) {
                        *slot += weight * (a + b);
                    }
                }
            }
        }
        if options.normalize {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
        }
    }

    Ok(EntityVectors {
        vectors,
        aggregation,
        means,
        role,
    })
}
