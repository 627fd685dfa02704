use hlpnn_tensor::Rng;
use rand::seq::SliceRandom;

use crate::error::Result;
use crate::geo::CityRegistry;
use crate::graph::NetworkEmbeddings;
use crate::model::Sample;
use crate::text::{EncodeConfig, Lexicon, UserRecord};

/// Encodes a labelled split.
pub fn prepare_samples(
    users: &[UserRecord],
    lexicon: &Lexicon,
    registry: &CityRegistry,
    enc: &EncodeConfig,
    network: Option<&NetworkEmbeddings>,
) -> Result<Vec<Sample>> {
    users
        .iter()
        .map(|u| Sample::from_record(u, lexicon, registry, enc, network))
        .collect()
}

/// Splits `0..samples.len()` into batches of users with similar tweet counts.
/// Ties in tweet count and the order of batches are shuffled by `rng`.
pub fn make_batches(samples: &[Sample], batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| samples[i].user.t_used);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}
