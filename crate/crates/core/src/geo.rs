//! Great-circle distances between GPS fixes.

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Haversine distance in meters between two `(lat, lon)` fixes in degrees.
pub fn haversine_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let s_lat = libm::sin((lat2 - lat1) / 2.0);
    let s_lon = libm::sin((lon2 - lon1) / 2.0);
    let h = s_lat * s_lat + libm::cos(lat1) * libm::cos(lat2) * s_lon * s_lon;
    2.0 * EARTH_RADIUS_M * libm::asin(libm::sqrt(h.clamp(0.0, 1.0)))
}

/// Total path length in meters along consecutive fixes.
pub fn path_length_m(fixes: &[(f64, f64)]) -> f64 {
    fixes.windows(2).map(|w| haversine_m(w[0], w[1])).sum()
}

/// Destination fix after travelling `distance_m` on initial `bearing` (radians
/// clockwise from north).
pub fn destination(from: (f64, f64), bearing: f64, distance_m: f64) -> (f64, f64) {
    let lat1 = from.0.to_radians();
    let lon1 = from.1.to_radians();
    let d = distance_m / EARTH_RADIUS_M;
    let lat2 = libm::asin(
        libm::sin(lat1) * libm::cos(d) + libm::cos(lat1) * libm::sin(d) * libm::cos(bearing),
    );
    let lon2 = lon1
        + libm::atan2(
            libm::sin(bearing) * libm::sin(d) * libm::cos(lat1),
            libm::cos(d) - libm::sin(lat1) * libm::sin(lat2),
        );
    (lat2.to_degrees(), lon2.to_degrees())
}
