//! City registry, the country-city bias matrix, distances and metrics.

mod distance;
mod metrics;
mod registry;

pub use distance::{haversine, EARTH_RADIUS_KM};
pub use metrics::{evaluate, median, relative_country_error, Gold, MetricsAccumulator, MetricsReport, ACC_RADIUS_KM};
pub use registry::{build_bias, BiasMatrix, City, CityRegistry};
