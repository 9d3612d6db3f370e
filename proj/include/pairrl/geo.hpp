#pragma once
// Geolocation scoring: great-circle distance, recall-at-distance curves, and
// aggregate accuracy reports over parsed prediction records. Everything here
// is a pure function; records come from the JSONL layer or from tests.

#include <optional>
#include <string>
#include <vector>

#include "pairrl/common.hpp"

namespace pairrl {

// Mean Earth radius. Fixed so distance fixtures are bit-stable.
inline constexpr double kEarthRadiusKm = 6371.0;

// A point on the sphere in degrees. Construct through make_geo_point, which
// enforces lat in [-90, 90] and wraps lon into the canonical (-180, 180].
struct GeoPoint {
    double lat = 0.0;
    double lon = 0.0;
};

// Validates and canonicalizes. Throws ValidationError on non-finite input or
// latitude outside [-90, 90].
GeoPoint make_geo_point(double lat_deg, double lon_deg);

// Great-circle distance in kilometers via the haversine formula. Symmetric,
// non-negative, and bounded by pi * kEarthRadiusKm.
double haversine_km(const GeoPoint& a, const GeoPoint& b);

// Canonical form for place-name comparison: trim, collapse inner whitespace,
// lowercase, and strip Latin diacritics ("Sao Paulo" from "São Paulo").
// Unrecognized scripts pass through unchanged. Idempotent.
std::string normalize_place(const std::string& raw);

// One scored response against its gold label. parse_ok=false means nothing
// usable came out of the response text; every pred field must then be empty.
struct GeoEvalRecord {
    std::optional<GeoPoint> pred_point;
    std::optional<std::string> pred_city;
    std::optional<std::string> pred_country_or_state;
    GeoPoint gold_point;
    std::string gold_city;
    std::string gold_region;
    bool parse_ok = false;
};

// Fraction of distances within each threshold (inclusive). Thresholds must be
// strictly ascending and distances non-negative; an empty distance list has
// no defined recall and throws ValidationError.
std::vector<double> recall_at(const std::vector<double>& distances_km,
                              const std::vector<double>& thresholds_km);

// The standard evaluation grid.
const std::vector<double>& default_geo_thresholds_km();

struct GeoReport {
    int n_records = 0;
    int n_parsed = 0;
    int n_with_point = 0;
    double parse_rate = 0.0;
    // Accuracies are over parsed records only; parse_rate exposes the
    // denominator so a refusal-heavy run cannot hide behind them.
    double city_accuracy = 0.0;
    double region_accuracy = 0.0;
    // Distance statistics cover parsed records that carry a coordinate.
    double mean_distance_km = 0.0;
    double median_distance_km = 0.0;
    std::vector<double> thresholds_km;
    std::vector<double> recall;
};

// Scores a batch. Throws ValidationError when there are no records, no
// parseable records, no coordinate predictions to measure, a record violates
// the parse_ok invariant, or the thresholds are malformed.
GeoReport aggregate(const std::vector<GeoEvalRecord>& records,
                    const std::vector<double>& thresholds_km);

}  // namespace pairrl
