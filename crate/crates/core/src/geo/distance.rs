use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

pub(crate) fn check_coordinates(lat: f64, lon: f64) -> Result<()> {
    if !(-90.0..=90.0).contains(&lat) {
        return Err(Error::Range { what: "latitude", value: lat });
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(Error::Range { what: "longitude", value: lon });
    }
    Ok(())
}

/// Great-circle distance in km between `(lat, lon)` points given in degrees.
pub fn haversine(p1: (f64, f64), p2: (f64, f64)) -> Result<f64> {
    check_coordinates(p1.0, p1.1)?;
    check_coordinates(p2.0, p2.1)?;
    let (phi1, phi2) = (p1.0.to_radians(), p2.0.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (p2.1 - p1.1).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    Ok(2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn known_distances() {
        assert_eq!(haversine((10.0, 20.0), (10.0, 20.0)).unwrap(), 0.0);
        assert!((haversine((0.0, 0.0), (0.0, 90.0)).unwrap() - 10007.54).abs() < 0.01);
        assert!((haversine((0.0, 0.0), (1.0, 0.0)).unwrap() - 111.195).abs() < 0.001);
    }

    #[test]
    fn range_errors() {
        assert!(matches!(haversine((91.0, 0.0), (0.0, 0.0)), Err(Error::Range { .. })));
        assert!(matches!(haversine((0.0, 0.0), (0.0, -180.5)), Err(Error::Range { .. })));
    }

    fn point() -> impl Strategy<Value = (f64, f64)> {
        (-90.0..=90.0f64, -180.0..=180.0f64)
    }

    proptest! {
        #[test]
        fn metric_axioms(a in point(), b in point(), c in point()) {
            let ab = haversine(a, b).unwrap();
            let ba = haversine(b, a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert_eq!(haversine(a, a).unwrap(), 0.0);
            prop_assert!((0.0..=PI * EARTH_RADIUS_KM + 1e-9).contains(&ab));
            let bc = haversine(b, c).unwrap();
            let ac = haversine(a, c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-6);
        }
    }
}
