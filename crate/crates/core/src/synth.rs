//! Seeded generator of a small hierarchical world: countries, well separated
//! cities, users whose text and metadata hint at their city, and a mention
//! graph that prefers same-city pairs.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use hlpnn_tensor::Rng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine, CityRegistry};
use crate::graph::{build_graph, remove_celebrities, EdgeList, GraphMode, CELEBRITY_THRESHOLD};
use crate::text::{write_dataset, UserRecord};

/// Minimum distance between any two city centres.
pub const MIN_CITY_SEPARATION_KM: f64 = 300.0;
/// City centres never lie poleward of this latitude.
pub const MAX_ABS_LATITUDE: f64 = 60.0;
const PLACEMENT_ATTEMPTS: usize = 20_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSpec {
    pub n_countries: usize,
    pub cities_per_country: usize,
    /// Size of the shared noise vocabulary.
    pub vocab_size: usize,
    pub location_words_per_city: usize,
    /// When positive, a city's location words other than its name share a
    /// prefix of this many letters, as spelling variants and compounds of a
    /// place name do. 0 draws them independently.
    pub location_stem_len: usize,
    pub country_words_per_country: usize,
    /// Probability that a tweet token is drawn from the noise vocabulary.
    pub noise_word_rate: f64,
    /// Share of indicative tokens that name the country rather than the city.
    pub country_word_share: f64,
    /// Probability that an indicative token has two of its letters swapped.
    pub char_noise_rate: f64,
    /// Letter swaps applied to each noised token.
    pub char_swaps: usize,
    /// Inclusive range.
    pub tweets_per_user: (usize, usize),
    /// Inclusive range.
    pub tokens_per_tweet: (usize, usize),
    pub n_users: usize,
    pub mentions_per_user: usize,
    pub mention_intra_city_prob: f64,
    pub train_fraction: f64,
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            n_countries: 3,
            cities_per_country: 4,
            vocab_size: 400,
            location_words_per_city: 6,
            location_stem_len: 0,
            country_words_per_country: 4,
            noise_word_rate: 0.2,
            country_word_share: 0.3,
            char_noise_rate: 0.0,
            char_swaps: 1,
            tweets_per_user: (3, 8),
            tokens_per_tweet: (4, 10),
            n_users: 2000,
            mentions_per_user: 2,
            mention_intra_city_prob: 0.8,
            train_fraction: 0.8,
            dev_fraction: 0.1,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Generation(m));
        for (name, v) in [
            ("n_countries", self.n_countries),
            ("cities_per_country", self.cities_per_country),
            ("vocab_size", self.vocab_size),
            ("location_words_per_city", self.location_words_per_city),
            ("country_words_per_country", self.country_words_per_country),
            ("n_users", self.n_users),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.noise_word_rate) {
            return fail(format!("noise_word_rate = {} is not in [0, 1)", self.noise_word_rate));
        }
        for (name, p) in [
            ("country_word_share", self.country_word_share),
            ("char_noise_rate", self.char_noise_rate),
            ("mention_intra_city_prob", self.mention_intra_city_prob),
            ("train_fraction", self.train_fraction),
            ("dev_fraction", self.dev_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} = {p} is not in [0, 1]"));
            }
        }
        if self.train_fraction + self.dev_fraction > 1.0 {
            return fail("train_fraction + dev_fraction exceeds 1".into());
        }
        for (name, (lo, hi)) in [("tweets_per_user", self.tweets_per_user), ("tokens_per_tweet", self.tokens_per_tweet)] {
            if lo > hi || hi == 0 {
                return fail(format!("{name} range ({lo}, {hi}) is empty"));
            }
        }
        Ok(())
    }
}

/// A generated world. Gold coordinates are the exact city centres.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub registry: CityRegistry,
    pub train: Vec<UserRecord>,
    pub dev: Vec<UserRecord>,
    pub test: Vec<UserRecord>,
    /// Mention graph over all users, celebrities removed.
    pub edges: EdgeList,
    /// Indicative words per city, indexed like the registry.
    pub city_words: Vec<Vec<String>>,
    pub country_words: Vec<Vec<String>>,
    pub noise_words: Vec<String>,
}

impl World {
    /// Writes `cities.tsv`, `train.jsonl`, `dev.jsonl`, `test.jsonl` and `edges.tsv`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.registry.write_tsv(dir.join("cities.tsv"))?;
        write_dataset(dir.join("train.jsonl"), &self.train)?;
        write_dataset(dir.join("dev.jsonl"), &self.dev)?;
        write_dataset(dir.join("test.jsonl"), &self.test)?;
        self.edges.write_tsv(dir.join("edges.tsv"))?;
        Ok(())
    }

    pub fn users(&self) -> impl Iterator<Item = &UserRecord> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }
}

struct WordMaker {
    seen: HashSet<String>,
}

impl WordMaker {
    const CONSONANTS: &'static [u8] = b"bcdfghjklmnprstvz";
    const VOWELS: &'static [u8] = b"aeiou";

    /// A fresh lowercase word of 4 to 9 letters, alternating consonants and vowels.
    fn make(&mut self, rng: &mut Rng) -> String {
        loop {
            let len = rng.random_range(4..=9);
            let start = rng.random_bool(0.5);
            let w: String = (0..len)
                .map(|i| {
                    let set = if (i % 2 == 0) == start { Self::CONSONANTS } else { Self::VOWELS };
                    *set.choose(rng).expect("non-empty") as char
                })
                .collect();
            if self.seen.insert(w.clone()) {
                return w;
            }
        }
    }

    fn many(&mut self, n: usize, rng: &mut Rng) -> Vec<String> {
        (0..n).map(|_| self.make(rng)).collect()
    }

    /// A fresh stem of exactly `len` letters, unique among stems.
    fn stem(&mut self, len: usize, rng: &mut Rng) -> String {
        loop {
            let w: String = (0..len)
                .map(|i| {
                    let set = if i % 2 == 0 { Self::CONSONANTS } else { Self::VOWELS };
                    *set.choose(rng).expect("non-empty") as char
                })
                .collect();
            if self.seen.insert(format!("stem:{w}")) {
                return w;
            }
        }
    }

    /// A fresh word made of `stem` and a 2 to 5 letter ending.
    fn with_stem(&mut self, stem: &str, rng: &mut Rng) -> String {
        loop {
            let tail_len = rng.random_range(2..=5);
            let start = stem.len() % 2 == 1;
            let w: String = stem
                .chars()
                .chain((0..tail_len).map(|i| {
                    let set = if (i % 2 == 0) == start { Self::VOWELS } else { Self::CONSONANTS };
                    *set.choose(rng).expect("non-empty") as char
                }))
                .collect();
            if self.seen.insert(w.clone()) {
                return w;
            }
        }
    }
}

fn place_cities(n: usize, rng: &mut Rng) -> Result<Vec<(f64, f64)>> {
    let mut placed: Vec<(f64, f64)> = Vec::with_capacity(n);
    let grid = (MAX_ABS_LATITUDE * 10.0) as i64;
    for k in 0..n {
        let mut ok = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let lat = rng.random_range(-grid..=grid) as f64 / 10.0;
            let lon = rng.random_range(-1800..1800) as f64 / 10.0;
            let mut clear = true;
            for &p in &placed {
                if haversine(p, (lat, lon))? < MIN_CITY_SEPARATION_KM {
                    clear = false;
                    break;
                }
            }
            if clear {
                placed.push((lat, lon));
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::Generation(format!(
                "could not place city {} of {n} at least {MIN_CITY_SEPARATION_KM} km from the others",
                k + 1
            )));
        }
    }
    Ok(placed)
}

/// Swaps the letters at two distinct random positions.
fn swap_chars(word: &str, rng: &mut Rng) -> String {
    let mut cs: Vec<char> = word.chars().collect();
    if cs.len() >= 2 {
        let i = rng.random_range(0..cs.len());
        let j = (i + rng.random_range(1..cs.len())) % cs.len();
        cs.swap(i, j);
    }
    cs.into_iter().collect()
}

pub fn generate(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let root = Rng::seed_from(spec.seed);
    let n_cities = spec.n_countries * spec.cities_per_country;
    let centres = place_cities(n_cities, &mut root.derive(0))?;

    let mut wrng = root.derive(1);
    let mut words = WordMaker { seen: HashSet::new() };
    let country_names = words.many(spec.n_countries, &mut wrng);
    let city_names = words.many(n_cities, &mut wrng);
    let country_words: Vec<Vec<String>> =
        (0..spec.n_countries).map(|_| words.many(spec.country_words_per_country, &mut wrng)).collect();
    let city_words: Vec<Vec<String>> = (0..n_cities)
        .map(|j| {
            let mut w = vec![city_names[j].clone()];
            let rest = spec.location_words_per_city.saturating_sub(1);
            if spec.location_stem_len > 0 {
                let stem = words.stem(spec.location_stem_len, &mut wrng);
                w.extend((0..rest).map(|_| words.with_stem(&stem, &mut wrng)));
            } else {
                w.extend(words.many(rest, &mut wrng));
            }
            w
        })
        .collect();
    let noise_words = words.many(spec.vocab_size, &mut wrng);
    let languages: Vec<String> = (0..spec.n_countries).map(|c| format!("l{c}")).collect();
    let zones: Vec<String> = (0..spec.n_countries).map(|c| format!("tz{c}")).collect();

    let rows = (0..n_cities)
        .map(|j| {
            let c = j / spec.cities_per_country;
            (city_names[j].clone(), country_names[c].clone(), centres[j].0, centres[j].1)
        })
        .collect();
    let registry = CityRegistry::new(rows)?;

    let mut urng = root.derive(2);
    let ids: Vec<String> = (0..spec.n_users).map(|i| format!("user{i:05}")).collect();
    let homes: Vec<usize> = (0..spec.n_users).map(|_| urng.random_range(0..n_cities)).collect();
    let mut residents: Vec<Vec<usize>> = vec![Vec::new(); n_cities];
    for (u, &j) in homes.iter().enumerate() {
        residents[j].push(u);
    }
    // Metadata is indicative half as often as tweet tokens.
    let meta_rate = (1.0 - spec.noise_word_rate) / 2.0;
    let mut users = Vec::with_capacity(spec.n_users);
    for (u, &j) in homes.iter().enumerate() {
        let c = j / spec.cities_per_country;
        let indicative = |rng: &mut Rng| -> String {
            let pool = if rng.random_bool(spec.country_word_share) { &country_words[c] } else { &city_words[j] };
            let w = pool.choose(rng).expect("non-empty").clone();
            if rng.random_bool(spec.char_noise_rate) {
                (0..spec.char_swaps).fold(w, |w, _| swap_chars(&w, rng))
            } else {
                w
            }
        };
        let n_tweets = urng.random_range(spec.tweets_per_user.0..=spec.tweets_per_user.1);
        let mut tweets: Vec<String> = (0..n_tweets)
            .map(|_| {
                let n_tok = urng.random_range(spec.tokens_per_tweet.0..=spec.tokens_per_tweet.1);
                let toks: Vec<String> = (0..n_tok)
                    .map(|_| {
                        if urng.random_bool(spec.noise_word_rate) {
                            noise_words.choose(&mut urng).expect("non-empty").clone()
                        } else {
                            indicative(&mut urng)
                        }
                    })
                    .collect();
                toks.join(" ")
            })
            .collect();
        for _ in 0..spec.mentions_per_user {
            let local = &residents[j];
            let target = if local.len() > 1 && urng.random_bool(spec.mention_intra_city_prob) {
                *local.choose(&mut urng).expect("non-empty")
            } else {
                urng.random_range(0..spec.n_users)
            };
            if target != u && !tweets.is_empty() {
                let t = urng.random_range(0..tweets.len());
                tweets[t].push_str(&format!(" @{}", ids[target]));
            }
        }
        let meta = |rng: &mut Rng, len: usize| -> String {
            (0..len)
                .map(|_| {
                    if rng.random_bool(meta_rate) {
                        indicative(rng)
                    } else {
                        noise_words.choose(rng).expect("non-empty").clone()
                    }
                })
                .collect::<Vec<_>>()
                .join(" ")
        };
        let description = meta(&mut urng, 4);
        let profile_location = meta(&mut urng, 1);
        let name = noise_words.choose(&mut urng).expect("non-empty").clone();
        let pick = |rng: &mut Rng, own: &String, all: &[String]| -> String {
            if rng.random_bool(meta_rate) {
                own.clone()
            } else {
                all.choose(rng).expect("non-empty").clone()
            }
        };
        let user_language = pick(&mut urng, &languages[c], &languages);
        let time_zone = pick(&mut urng, &zones[c], &zones);
        let city = registry.city(j);
        users.push(UserRecord {
            user_id: ids[u].clone(),
            tweets,
            description,
            profile_location,
            name,
            user_language,
            time_zone,
            latitude: city.lat,
            longitude: city.lon,
            gold_city: Some(city.id.clone()),
        });
    }

    let graph = remove_celebrities(&build_graph(&users, GraphMode::Wnut), CELEBRITY_THRESHOLD);
    let edges = graph.edge_list();

    let mut order: Vec<usize> = (0..spec.n_users).collect();
    order.shuffle(&mut root.derive(3));
    let n_train = (spec.n_users as f64 * spec.train_fraction).round() as usize;
    let n_dev = ((spec.n_users as f64 * spec.dev_fraction).round() as usize).min(spec.n_users - n_train);
    let take = |range: std::ops::Range<usize>| -> Vec<UserRecord> {
        let mut idx = order[range].to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| users[i].clone()).collect()
    };
    Ok(World {
        registry,
        train: take(0..n_train),
        dev: take(n_train..n_train + n_dev),
        test: take(n_train + n_dev..spec.n_users),
        edges,
        city_words,
        country_words,
        noise_words,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::geo::build_bias;
    use crate::text::tokenize;

    fn small(seed: u64) -> WorldSpec {
        WorldSpec {
            n_users: 300,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn registry_shape_and_bias_columns() {
        let w = generate(&small(1)).unwrap();
        assert_eq!((w.registry.num_countries(), w.registry.num_cities()), (3, 12));
        let bias = build_bias(&w.registry);
        for j in 0..12 {
            let col: f64 = (0..3).map(|i| bias.get(i, j)).sum();
            assert_eq!(col, -2.0);
        }
    }

    #[test]
    fn cities_are_separated_and_away_from_poles() {
        let w = generate(&WorldSpec {
            n_countries: 6,
            cities_per_country: 10,
            n_users: 10,
            ..Default::default()
        })
        .unwrap();
        let cs = w.registry.cities();
        for (i, a) in cs.iter().enumerate() {
            assert!(a.lat.abs() <= MAX_ABS_LATITUDE);
            assert_eq!((a.lat * 10.0).round() / 10.0, a.lat);
            for b in &cs[i + 1..] {
                assert!(haversine((a.lat, a.lon), (b.lat, b.lon)).unwrap() >= MIN_CITY_SEPARATION_KM);
            }
        }
    }

    #[test]
    fn gold_coordinates_are_city_centres() {
        let w = generate(&small(2)).unwrap();
        for u in w.users() {
            let c = w.registry.city(w.registry.city_idx(u.gold_city.as_deref().unwrap()).unwrap());
            assert_eq!(haversine((c.lat, c.lon), (u.latitude, u.longitude)).unwrap(), 0.0);
        }
        assert_eq!(w.train.len() + w.dev.len() + w.test.len(), 300);
        assert_eq!((w.train.len(), w.dev.len()), (240, 30));
    }

    #[test]
    fn stemmed_location_words_share_a_prefix() {
        let w = generate(&WorldSpec { location_stem_len: 4, location_words_per_city: 5, ..small(3) }).unwrap();
        let mut stems = std::collections::HashSet::new();
        for words in &w.city_words {
            let rest = &words[1..];
            assert_eq!(rest.len(), 4);
            let stem = &rest[0][..4];
            assert!(rest.iter().all(|x| x.len() > 4 && x.starts_with(stem)), "{rest:?}");
            assert!(stems.insert(stem.to_string()), "stem {stem} reused");
            let distinct: std::collections::HashSet<_> = words.iter().collect();
            assert_eq!(distinct.len(), words.len());
        }
    }

    #[test]
    fn infeasible_world_is_rejected() {
        let spec = WorldSpec {
            n_countries: 100,
            cities_per_country: 100,
            n_users: 1,
            ..Default::default()
        };
        assert!(matches!(generate(&spec), Err(Error::Generation(_))));
        assert!(generate(&WorldSpec { noise_word_rate: 1.0, ..small(0) }).is_err());
    }

    #[test]
    fn zero_noise_tweets_are_all_indicative() {
        let w = generate(&WorldSpec {
            noise_word_rate: 0.0,
            mentions_per_user: 0,
            ..small(3)
        })
        .unwrap();
        for u in &w.train {
            let j = w.registry.city_idx(u.gold_city.as_deref().unwrap()).unwrap();
            let c = w.registry.country_of(j);
            for t in &u.tweets {
                for tok in tokenize(t) {
                    assert!(w.city_words[j].contains(&tok) || w.country_words[c].contains(&tok), "{tok}");
                }
            }
        }
    }

    #[test]
    fn same_seed_gives_identical_files() {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            generate(&small(5)).unwrap().write_dir(d.path()).unwrap();
        }
        for f in ["cities.tsv", "train.jsonl", "dev.jsonl", "test.jsonl", "edges.tsv"] {
            let a = fs::read(dirs[0].path().join(f)).unwrap();
            let b = fs::read(dirs[1].path().join(f)).unwrap();
            assert!(!a.is_empty(), "{f}");
            assert_eq!(a, b, "{f}");
        }
        assert_ne!(generate(&small(5)).unwrap().train, generate(&small(6)).unwrap().train);
    }

    #[test]
    fn mentions_prefer_the_home_city() {
        let w = generate(&WorldSpec {
            mention_intra_city_prob: 0.9,
            ..small(7)
        })
        .unwrap();
        let home: HashMap<&str, &str> =
            w.users().map(|u| (u.user_id.as_str(), u.gold_city.as_deref().unwrap())).collect();
        let (mut same, mut total) = (0, 0);
        for &(a, b, _) in &w.edges.edges {
            if let (Some(x), Some(y)) = (home.get(w.edges.nodes[a].as_str()), home.get(w.edges.nodes[b].as_str())) {
                total += 1;
                same += usize::from(x == y);
            }
        }
        assert!(total > 100);
        assert!(same as f64 / total as f64 > 0.7);
    }

    /// Unigram naive Bayes with add-one smoothing over tweet tokens.
    fn naive_bayes_accuracy(w: &World) -> f64 {
        let m = w.registry.num_cities();
        let mut counts: Vec<HashMap<String, f64>> = vec![HashMap::new(); m];
        let mut totals = vec![0.0f64; m];
        let mut priors = vec![0.0f64; m];
        let mut vocab = HashSet::new();
        let city = |u: &UserRecord| w.registry.city_idx(u.gold_city.as_deref().unwrap()).unwrap();
        for u in &w.train {
            let j = city(u);
            priors[j] += 1.0;
            for tok in u.tweets.iter().flat_map(|t| tokenize(t)) {
                *counts[j].entry(tok.clone()).or_insert(0.0) += 1.0;
                totals[j] += 1.0;
                vocab.insert(tok);
            }
        }
        let v = vocab.len() as f64;
        let mut correct = 0;
        for u in &w.dev {
            let toks: Vec<String> = u.tweets.iter().flat_map(|t| tokenize(t)).collect();
            let score = |j: usize| {
                priors[j].ln()
                    + toks
                        .iter()
                        .map(|t| ((counts[j].get(t).copied().unwrap_or(0.0) + 1.0) / (totals[j] + v)).ln())
                        .sum::<f64>()
            };
            let best = (0..m).max_by(|&a, &b| score(a).total_cmp(&score(b))).unwrap();
            correct += usize::from(best == city(u));
        }
        correct as f64 / w.dev.len() as f64
    }

    #[test]
    fn naive_bayes_oracle_learns_the_world() {
        for seed in 0..3 {
            let w = generate(&WorldSpec {
                n_users: 2000,
                seed,
                ..Default::default()
            })
            .unwrap();
            let acc = naive_bayes_accuracy(&w);
            assert!(acc >= 0.95, "seed {seed}: {acc}");
        }
    }
}
