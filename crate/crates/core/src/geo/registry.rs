use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use hlpnn_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::distance::check_coordinates;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct City {
    pub id: String,
    pub country: usize,
    pub lat: f64,
    pub lon: f64,
}

/// Cities with dense ids `0..M_ci` and countries with dense ids `0..M_co`
/// (numbered in order of first appearance).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<(String, String, f64, f64)>", try_from = "Vec<(String, String, f64, f64)>")]
pub struct CityRegistry {
    cities: Vec<City>,
    countries: Vec<String>,
    city_index: HashMap<String, usize>,
    country_index: HashMap<String, usize>,
}

impl TryFrom<Vec<(String, String, f64, f64)>> for CityRegistry {
    type Error = Error;

    fn try_from(rows: Vec<(String, String, f64, f64)>) -> Result<Self> {
        CityRegistry::new(rows)
    }
}

impl From<CityRegistry> for Vec<(String, String, f64, f64)> {
    fn from(r: CityRegistry) -> Self {
        r.cities
            .iter()
            .map(|c| (c.id.clone(), r.countries[c.country].clone(), c.lat, c.lon))
            .collect()
    }
}

impl CityRegistry {
    /// Rows are `(city_id, country_id, lat, lon)`.
    pub fn new(rows: Vec<(String, String, f64, f64)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Registry("no cities".into()));
        }
        let mut reg = CityRegistry {
            cities: Vec::with_capacity(rows.len()),
            countries: Vec::new(),
            city_index: HashMap::new(),
            country_index: HashMap::new(),
        };
        for (city, country, lat, lon) in rows {
            check_coordinates(lat, lon)?;
            let next = reg.countries.len();
            let c = *reg.country_index.entry(country.clone()).or_insert(next);
            if c == next {
                reg.countries.push(country);
            }
            if reg.city_index.insert(city.clone(), reg.cities.len()).is_some() {
                return Err(Error::Registry(format!("duplicate city `{city}`")));
            }
            reg.cities.push(City {
                id: city,
                country: c,
                lat,
                lon,
            });
        }
        Ok(reg)
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_tsv(&fs::read_to_string(path)?)
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |m: String| Error::Ingest { line: n + 1, message: m };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad(format!("expected 4 tab-separated columns, found {}", cols.len())));
            }
            let lat = cols[2].parse().map_err(|e| bad(format!("lat: {e}")))?;
            let lon = cols[3].parse().map_err(|e| bad(format!("lon: {e}")))?;
            rows.push((cols[0].to_string(), cols[1].to_string(), lat, lon));
        }
        Self::new(rows)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for c in &self.cities {
            writeln!(s, "{}\t{}\t{}\t{}", c.id, self.countries[c.country], c.lat, c.lon).unwrap();
        }
        s
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn num_cities(&self) -> usize {
        self.cities.len()
    }

    pub fn num_countries(&self) -> usize {
        self.countries.len()
    }

    pub fn city(&self, idx: usize) -> &City {
        &self.cities[idx]
    }

    pub fn cities(&self) -> &[City] {
        &self.cities
    }

    pub fn country_name(&self, idx: usize) -> &str {
        &self.countries[idx]
    }

    pub fn city_idx(&self, id: &str) -> Option<usize> {
        self.city_index.get(id).copied()
    }

    pub fn country_idx(&self, id: &str) -> Option<usize> {
        self.country_index.get(id).copied()
    }

    pub fn country_of(&self, city: usize) -> usize {
        self.cities[city].country
    }

    pub(crate) fn checked_city(&self, idx: usize) -> Result<&City> {
        self.cities
            .get(idx)
            .ok_or_else(|| Error::Registry(format!("unknown city index {idx} (registry has {})", self.cities.len())))
    }
}

/// `M_co × M_ci` matrix: 0 where the city lies in the country, −1 elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasMatrix {
    pub n_countries: usize,
    pub n_cities: usize,
    pub data: Vec<f64>,
}

impl BiasMatrix {
    pub fn get(&self, country: usize, city: usize) -> f64 {
        self.data[country * self.n_cities + city]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.n_countries, self.n_cities], self.data.clone()).expect("registry is non-empty")
    }
}

pub fn build_bias(registry: &CityRegistry) -> BiasMatrix {
    let (m_co, m_ci) = (registry.num_countries(), registry.num_cities());
    let mut data = vec![-1.0; m_co * m_ci];
    for (j, c) in registry.cities.iter().enumerate() {
        data[c.country * m_ci + j] = 0.0;
    }
    BiasMatrix {
        n_countries: m_co,
        n_cities: m_ci,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg(rows: &[(&str, &str)]) -> CityRegistry {
        CityRegistry::new(rows.iter().map(|(c, k)| (c.to_string(), k.to_string(), 0.0, 0.0)).collect()).unwrap()
    }

    #[test]
    fn bias_two_countries() {
        let b = build_bias(&reg(&[("c1", "A"), ("c2", "A"), ("c3", "B")]));
        assert_eq!(b.data, vec![0.0, 0.0, -1.0, -1.0, -1.0, 0.0]);
    }

    #[test]
    fn bias_single_country_is_zero() {
        let b = build_bias(&reg(&[("c1", "A"), ("c2", "A")]));
        assert!(b.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bias_columns_sum_to_one_minus_countries() {
        let b = build_bias(&reg(&[("a", "X"), ("b", "Y"), ("c", "Z"), ("d", "X"), ("e", "Y")]));
        assert_eq!((b.n_countries, b.n_cities), (3, 5));
        for j in 0..5 {
            let s: f64 = (0..3).map(|i| b.get(i, j)).sum();
            assert_eq!(s, -2.0);
            assert_eq!((0..3).filter(|&i| b.get(i, j) == 0.0).count(), 1);
        }
    }

    #[test]
    fn tsv_round_trip() {
        let text = "nyc\tUS\t40.7\t-74\nparis\tFR\t48.85\t2.35\nla\tUS\t34.05\t-118.25\n";
        let r = CityRegistry::parse_tsv(text).unwrap();
        assert_eq!(r.num_countries(), 2);
        assert_eq!(r.country_of(r.city_idx("la").unwrap()), 0);
        assert_eq!(CityRegistry::parse_tsv(&r.to_tsv()).unwrap(), r);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(CityRegistry::parse_tsv("a\tX\t91\t0\n").is_err());
        assert!(CityRegistry::parse_tsv("a\tX\t1\n").is_err());
        assert!(CityRegistry::parse_tsv("a\tX\t1\t1\na\tY\t1\t1\n").is_err());
        assert!(CityRegistry::parse_tsv("").is_err());
    }
}
