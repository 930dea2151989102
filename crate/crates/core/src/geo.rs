//! Geodesic primitives: great-circle distance, robust centroids, and the
//! Gaussian similarity kernel used by the physical graph.

use thiserror::Error;

/// Mean Earth radius in kilometers, fixed for the whole pipeline.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("latitude {0} out of range [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} out of range [-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("centroid of an empty point list is undefined")]
    EmptyPointList,
    #[error("kernel bandwidth must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("kernel distance must be non-negative, got {0}")]
    NegativeDistance(f64),
}

/// A point on the sphere, in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub latitude: f64,
    pub longitude: f64,
}

impl GeoPoint {
    pub fn new(latitude: f64, longitude: f64) -> Result<Self, GeoError> {
        if !(-90.0..=90.0).contains(&latitude) || !latitude.is_finite() {
            return Err(GeoError::LatitudeOutOfRange(latitude));
        }
        if !(-180.0..=180.0).contains(&longitude) || !longitude.is_finite() {
            return Err(GeoError::LongitudeOutOfRange(longitude));
        }
        Ok(Self { latitude, longitude })
    }
}

/// Robust mean location of a user's attended events.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid {
    pub point: GeoPoint,
    /// Number of events retained after outlier removal.
    pub n_used: usize,
}

/// Great-circle distance between two points, in kilometers.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat1 = a.latitude.to_radians();
    let lat2 = b.latitude.to_radians();
    let dlat = (b.latitude - a.latitude).to_radians();
    let dlon = (b.longitude - a.longitude).to_radians();

    let s = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * s.sqrt().min(1.0).asin()
}

/// Gaussian similarity of a distance: `exp(-d^2 / (2 sigma^2))`.
pub fn gaussian_kernel(distance_km: f64, sigma_km: f64) -> Result<f64, GeoError> {
    if sigma_km <= 0.0 || !sigma_km.is_finite() {
        return Err(GeoError::NonPositiveSigma(sigma_km));
    }
    if distance_km < 0.0 {
        return Err(GeoError::NegativeDistance(distance_km));
    }
    Ok((-distance_km * distance_km / (2.0 * sigma_km * sigma_km)).exp())
}

/// Consistency constant relating MAD to the standard deviation of a normal
/// distribution; the usual modified-z rule uses `|x - med| > t * 1.4826 * MAD`.
const MAD_CONSISTENCY: f64 = 1.4826;

/// Centroid of interests: component-wise median, MAD-based outlier removal on
/// haversine distances from that median point, then the arithmetic mean of the
/// surviving coordinates.
///
/// A zero MAD (at least half the distances coincide) keeps every point, as
/// does a threshold so tight it would discard everything.
pub fn centroid_of_interests(points: &[GeoPoint], mad_threshold: f64) -> Result<Centroid, GeoError> {
    if points.is_empty() {
        return Err(GeoError::EmptyPointList);
    }
    let med = GeoPoint {
        latitude: median(points.iter().map(|p| p.latitude)),
        longitude: median(points.iter().map(|p| p.longitude)),
    };
    let dists: Vec<f64> = points.iter().map(|p| haversine_km(*p, med)).collect();
    let med_d = median(dists.iter().copied());
    let deviations: Vec<f64> = dists.iter().map(|d| (d - med_d).abs()).collect();
    let mad = median(deviations.iter().copied());

    let keep: Vec<usize> = if mad == 0.0 {
        (0..points.len()).collect()
    } else {
        let bound = mad_threshold * MAD_CONSISTENCY * mad;
        let kept: Vec<usize> = (0..points.len()).filter(|&i| deviations[i] <= bound).collect();
        if kept.is_empty() {
            (0..points.len()).collect()
        } else {
            kept
        }
    };

    let n = keep.len() as f64;
    let lat = keep.iter().map(|&i| points[i].latitude).sum::<f64>() / n;
    let lon = keep.iter().map(|&i| points[i].longitude).sum::<f64>() / n;
    Ok(Centroid {
        point: GeoPoint { latitude: lat, longitude: lon },
        n_used: keep.len(),
    })
}

/// Median of a finite sequence; even lengths average the two middle values.
pub fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    assert!(!v.is_empty(), "median of empty sequence");
    v.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in median"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    /// Reference implementation via the spherical law of cosines, kept
    /// deliberately separate from the haversine formula above.
    fn law_of_cosines_km(a: GeoPoint, b: GeoPoint) -> f64 {
        let (la, lb) = (a.latitude.to_radians(), b.latitude.to_radians());
        let dlon = (b.longitude - a.longitude).to_radians();
        let cos_c = la.sin() * lb.sin() + la.cos() * lb.cos() * dlon.cos();
        EARTH_RADIUS_KM * cos_c.clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn haversine_identity() {
        let p = pt(41.2, -73.5);
        assert_eq!(haversine_km(p, p), 0.0);
    }

    #[test]
    fn haversine_antipodal_on_equator() {
        let d = haversine_km(pt(0.0, 0.0), pt(0.0, 180.0));
        assert!((d - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 1e-6, "got {d}");
    }

    #[test]
    fn haversine_matches_independent_oracle() {
        // NYC to LA, plus a handful of other fixed pairs.
        let pairs = [
            (pt(40.7128, -74.0060), pt(34.0522, -118.2437)),
            (pt(51.5, -0.12), pt(48.85, 2.35)),
            (pt(-33.86, 151.21), pt(35.68, 139.69)),
        ];
        for (a, b) in pairs {
            let d = haversine_km(a, b);
            let oracle = law_of_cosines_km(a, b);
            assert!((d - oracle).abs() < 0.1, "{d} vs {oracle}");
        }
    }

    #[test]
    fn kernel_fixed_values() {
        assert_eq!(gaussian_kernel(0.0, 5.0).unwrap(), 1.0);
        assert!((gaussian_kernel(5.0, 5.0).unwrap() - (-0.5f64).exp()).abs() < 1e-12);
        assert!((gaussian_kernel(15.0, 5.0).unwrap() - (-4.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn kernel_rejects_bad_sigma() {
        assert!(gaussian_kernel(1.0, 0.0).is_err());
        assert!(gaussian_kernel(1.0, -2.0).is_err());
    }

    #[test]
    fn centroid_single_point() {
        let c = centroid_of_interests(&[pt(12.0, 34.0)], 3.0).unwrap();
        assert_eq!(c.point, pt(12.0, 34.0));
        assert_eq!(c.n_used, 1);
    }

    #[test]
    fn centroid_drops_far_outlier() {
        // Four points around the origin plus one far away. Median point is
        // near (0,0); the outlier's distance deviation dwarfs the MAD bound.
        let points = [
            pt(0.1, 0.1),
            pt(0.1, -0.1),
            pt(-0.1, 0.1),
            pt(-0.1, -0.1),
            pt(50.0, 50.0),
        ];
        let c = centroid_of_interests(&points, 3.0).unwrap();
        assert_eq!(c.n_used, 4);
        assert!(c.point.latitude.abs() < 1e-9, "lat {}", c.point.latitude);
        assert!(c.point.longitude.abs() < 1e-9, "lon {}", c.point.longitude);
    }

    #[test]
    fn centroid_identical_points_keeps_all() {
        let points = [pt(5.0, 5.0); 7];
        let c = centroid_of_interests(&points, 3.0).unwrap();
        assert_eq!(c.n_used, 7);
        assert_eq!(c.point, pt(5.0, 5.0));
    }

    #[test]
    fn centroid_empty_is_error() {
        assert!(centroid_of_interests(&[], 3.0).is_err());
    }

    #[test]
    fn centroid_huge_threshold_is_plain_mean() {
        let points = [pt(0.0, 0.0), pt(1.0, 0.0), pt(0.0, 3.0), pt(10.0, 10.0)];
        let c = centroid_of_interests(&points, 1e12).unwrap();
        assert_eq!(c.n_used, 4);
        assert!((c.point.latitude - 11.0 / 4.0).abs() < 1e-12);
        assert!((c.point.longitude - 13.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median([3.0, 1.0, 2.0].into_iter()), 2.0);
        assert_eq!(median([1.0, 2.0, 100.0, 4.0].into_iter()), 3.0);
        // Median of {1, 2, 100} is 2 regardless of geometric realizability.
        assert_eq!(median([1.0, 2.0, 100.0].into_iter()), 2.0);
    }
}
