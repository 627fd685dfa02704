use serde::{Deserialize, Serialize};

use super::distance::haversine;
use super::registry::CityRegistry;
use crate::error::{Error, Result};

/// Acc@161 radius in km, compared inclusively.
pub const ACC_RADIUS_KM: f64 = 161.0;

/// Gold label and true coordinates of one user.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gold {
    pub city: usize,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub acc161: f64,
    pub median_km: f64,
    pub mean_km: f64,
    pub relative_country_error: f64,
    pub n: usize,
}

/// Mergeable partial sums behind a [`MetricsReport`]. Distances are kept so
/// the median of a merged shard set is computed over the union.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsAccumulator {
    correct: usize,
    within: usize,
    wrong_city: usize,
    wrong_country: usize,
    distances: Vec<f64>,
}

impl MetricsAccumulator {
    pub fn add(&mut self, predicted: usize, gold: &Gold, registry: &CityRegistry) -> Result<()> {
        let p = registry.checked_city(predicted)?;
        let g = registry.checked_city(gold.city)?;
        let d = haversine((p.lat, p.lon), (gold.lat, gold.lon))?;
        if predicted == gold.city {
            self.correct += 1;
        } else {
            self.wrong_city += 1;
            if p.country != g.country {
                self.wrong_country += 1;
            }
        }
        if d <= ACC_RADIUS_KM {
            self.within += 1;
        }
        self.distances.push(d);
        Ok(())
    }

    pub fn merge(&mut self, other: MetricsAccumulator) {
        self.correct += other.correct;
        self.within += other.within;
        self.wrong_city += other.wrong_city;
        self.wrong_country += other.wrong_country;
        self.distances.extend(other.distances);
    }

    pub fn finish(&self) -> MetricsReport {
        let n = self.distances.len();
        let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        let mean_km = if n == 0 { 0.0 } else { self.distances.iter().sum::<f64>() / n as f64 };
        MetricsReport {
            accuracy: frac(self.correct),
            acc161: frac(self.within),
            median_km: median(&self.distances),
            mean_km,
            relative_country_error: ratio(self.wrong_country, self.wrong_city),
            n,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Middle value; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn evaluate(predicted: &[usize], golds: &[Gold], registry: &CityRegistry) -> Result<MetricsReport> {
    if predicted.len() != golds.len() {
        return Err(Error::Config(format!(
            "{} predictions for {} gold labels",
            predicted.len(),
            golds.len()
        )));
    }
    let mut acc = MetricsAccumulator::default();
    for (&p, g) in predicted.iter().zip(golds) {
        acc.add(p, g, registry)?;
    }
    Ok(acc.finish())
}

/// Among misclassified cities, the share predicted in the wrong country.
pub fn relative_country_error(predicted: &[usize], gold_cities: &[usize], registry: &CityRegistry) -> Result<f64> {
    let (mut wrong_city, mut wrong_country) = (0, 0);
    for (&p, &g) in predicted.iter().zip(gold_cities) {
        let pc = registry.checked_city(p)?.country;
        let gc = registry.checked_city(g)?.country;
        if p != g {
            wrong_city += 1;
            if pc != gc {
                wrong_country += 1;
            }
        }
    }
    Ok(ratio(wrong_country, wrong_city))
}
