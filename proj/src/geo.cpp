#include "pairrl/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace pairrl {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

void check_thresholds(const std::vector<double>& thresholds_km) {
    if (thresholds_km.empty()) {
        throw ValidationError("recall_at: threshold list is empty");
    }
    for (size_t i = 0; i < thresholds_km.size(); ++i) {
        if (!std::isfinite(thresholds_km[i]) || thresholds_km[i] < 0.0) {
            throw ValidationError("recall_at: thresholds must be finite and non-negative");
        }
        if (i > 0 && thresholds_km[i] <= thresholds_km[i - 1]) {
            throw ValidationError("recall_at: thresholds must be strictly ascending");
        }
    }
}

// ---------------- place-name folding ----------------

// Decodes one UTF-8 codepoint starting at s[i] and advances i. Malformed
// bytes decode as themselves so bad input degrades to byte-wise handling
// instead of throwing mid-report.
unsigned decode_utf8(const std::string& s, size_t& i) {
    unsigned char b0 = static_cast<unsigned char>(s[i]);
    int extra = 0;
    unsigned cp = b0;
    if (b0 < 0x80) {
        extra = 0;
    } else if ((b0 & 0xE0) == 0xC0) {
        extra = 1;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        extra = 2;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        extra = 3;
        cp = b0 & 0x07;
    } else {
        ++i;
        return b0;
    }
    if (i + static_cast<size_t>(extra) >= s.size()) {
        ++i;
        return b0;
    }
    for (int k = 1; k <= extra; ++k) {
        unsigned char bk = static_cast<unsigned char>(s[i + k]);
        if ((bk & 0xC0) != 0x80) {
            ++i;
            return b0;
        }
        cp = (cp << 6) | (bk & 0x3F);
    }
    i += 1 + extra;
    return cp;
}

void encode_utf8(unsigned cp, std::string& out) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

struct FoldRange {
    unsigned lo;
    unsigned hi;
    const char* out;
};

// Latin-1 Supplement letters fold to their unaccented base (both cases).
constexpr FoldRange kLatin1[] = {
    {0xC0, 0xC5, "a"}, {0xC6, 0xC6, "ae"}, {0xC7, 0xC7, "c"},  {0xC8, 0xCB, "e"},
    {0xCC, 0xCF, "i"}, {0xD0, 0xD0, "d"},  {0xD1, 0xD1, "n"},  {0xD2, 0xD6, "o"},
    {0xD8, 0xD8, "o"}, {0xD9, 0xDC, "u"},  {0xDD, 0xDD, "y"},  {0xDE, 0xDE, "th"},
    {0xDF, 0xDF, "ss"},
    {0xE0, 0xE5, "a"}, {0xE6, 0xE6, "ae"}, {0xE7, 0xE7, "c"},  {0xE8, 0xEB, "e"},
    {0xEC, 0xEF, "i"}, {0xF0, 0xF0, "d"},  {0xF1, 0xF1, "n"},  {0xF2, 0xF6, "o"},
    {0xF8, 0xF8, "o"}, {0xF9, 0xFC, "u"},  {0xFD, 0xFD, "y"},  {0xFE, 0xFE, "th"},
    {0xFF, 0xFF, "y"},
};

// Latin Extended-A groups upper/lower variants of one base letter in runs.
constexpr FoldRange kLatinExtA[] = {
    {0x100, 0x105, "a"}, {0x106, 0x10D, "c"},  {0x10E, 0x111, "d"}, {0x112, 0x11B, "e"},
    {0x11C, 0x123, "g"}, {0x124, 0x127, "h"},  {0x128, 0x131, "i"}, {0x132, 0x133, "ij"},
    {0x134, 0x135, "j"}, {0x136, 0x138, "k"},  {0x139, 0x142, "l"}, {0x143, 0x14B, "n"},
    {0x14C, 0x151, "o"}, {0x152, 0x153, "oe"}, {0x154, 0x159, "r"}, {0x15A, 0x161, "s"},
    {0x162, 0x167, "t"}, {0x168, 0x173, "u"},  {0x174, 0x175, "w"}, {0x176, 0x178, "y"},
    {0x179, 0x17E, "z"}, {0x17F, 0x17F, "s"},
};

const char* fold_lookup(unsigned cp) {
    const auto scan = [cp](const FoldRange* table, size_t n) -> const char* {
        for (size_t i = 0; i < n; ++i) {
            if (cp >= table[i].lo && cp <= table[i].hi) return table[i].out;
        }
        return nullptr;
    };
    if (cp >= 0xC0 && cp <= 0xFF) return scan(kLatin1, std::size(kLatin1));
    if (cp >= 0x100 && cp <= 0x17F) return scan(kLatinExtA, std::size(kLatinExtA));
    return nullptr;
}

bool is_space_cp(unsigned cp) {
    return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' ||
           cp == '\v' || cp == 0xA0;
}

}  // namespace

GeoPoint make_geo_point(double lat_deg, double lon_deg) {
    if (!std::isfinite(lat_deg) || !std::isfinite(lon_deg)) {
        throw ValidationError("geo point: coordinates must be finite");
    }
    if (lat_deg < -90.0 || lat_deg > 90.0) {
        throw ValidationError("geo point: latitude outside [-90, 90]");
    }
    double lon = std::fmod(lon_deg, 360.0);
    if (lon <= -180.0) lon += 360.0;
    if (lon > 180.0) lon -= 360.0;
    return GeoPoint{lat_deg, lon};
}

double haversine_km(const GeoPoint& a, const GeoPoint& b) {
    double p1 = a.lat * kDegToRad;
    double p2 = b.lat * kDegToRad;
    double sp = std::sin((p2 - p1) / 2.0);
    double sl = std::sin((b.lon - a.lon) * kDegToRad / 2.0);
    double h = sp * sp + std::cos(p1) * std::cos(p2) * sl * sl;
    // Rounding can push h a hair past 1 for near-antipodal pairs.
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

std::string normalize_place(const std::string& raw) {
    std::string out;
    out.reserve(raw.size());
    bool pending_space = false;
    size_t i = 0;
    while (i < raw.size()) {
        unsigned cp = decode_utf8(raw, i);
        if (is_space_cp(cp)) {
            pending_space = true;
            continue;
        }
        // Combining diacritical marks vanish, so decomposed accents fold the
        // same way as precomposed ones.
        if (cp >= 0x300 && cp <= 0x36F) continue;
        if (pending_space && !out.empty()) out.push_back(' ');
        pending_space = false;
        if (cp < 0x80) {
            out.push_back(static_cast<char>(
                std::tolower(static_cast<unsigned char>(cp))));
        } else if (const char* folded = fold_lookup(cp)) {
            out += folded;
        } else {
            encode_utf8(cp, out);
        }
    }
    return out;
}

std::vector<double> recall_at(const std::vector<double>& distances_km,
                              const std::vector<double>& thresholds_km) {
    check_thresholds(thresholds_km);
    if (distances_km.empty()) {
        throw ValidationError("recall_at: distance list is empty");
    }
    for (double d : distances_km) {
        if (!std::isfinite(d) || d < 0.0) {
            throw ValidationError("recall_at: distances must be finite and non-negative");
        }
    }
    std::vector<double> curve(thresholds_km.size(), 0.0);
    for (size_t t = 0; t < thresholds_km.size(); ++t) {
        int hits = 0;
        for (double d : distances_km) {
            if (d <= thresholds_km[t]) ++hits;
        }
        curve[t] = static_cast<double>(hits) / static_cast<double>(distances_km.size());
    }
    return curve;
}

const std::vector<double>& default_geo_thresholds_km() {
    static const std::vector<double> kThresholds = {1.0, 25.0, 200.0, 750.0, 2500.0};
    return kThresholds;
}

GeoReport aggregate(const std::vector<GeoEvalRecord>& records,
                    const std::vector<double>& thresholds_km) {
    check_thresholds(thresholds_km);
    if (records.empty()) {
        throw ValidationError("aggregate: no records");
    }

    GeoReport rep;
    rep.n_records = static_cast<int>(records.size());
    rep.thresholds_km = thresholds_km;

    int city_hits = 0;
    int region_hits = 0;
    std::vector<double> distances;
    for (const GeoEvalRecord& r : records) {
        if (!r.parse_ok) {
            if (r.pred_point || r.pred_city || r.pred_country_or_state) {
                throw ValidationError(
                    "aggregate: unparsed record carries prediction fields");
            }
            continue;
        }
        ++rep.n_parsed;
        if (r.pred_city &&
            normalize_place(*r.pred_city) == normalize_place(r.gold_city)) {
            ++city_hits;
        }
        if (r.pred_country_or_state &&
            normalize_place(*r.pred_country_or_state) == normalize_place(r.gold_region)) {
            ++region_hits;
        }
        if (r.pred_point) {
            distances.push_back(haversine_km(*r.pred_point, r.gold_point));
        }
    }

    if (rep.n_parsed == 0) {
        throw ValidationError("aggregate: no parseable records to score");
    }
    if (distances.empty()) {
        throw ValidationError("aggregate: no coordinate predictions to measure");
    }

    rep.n_with_point = static_cast<int>(distances.size());
    rep.parse_rate = static_cast<double>(rep.n_parsed) / rep.n_records;
    rep.city_accuracy = static_cast<double>(city_hits) / rep.n_parsed;
    rep.region_accuracy = static_cast<double>(region_hits) / rep.n_parsed;

    double sum = 0.0;
    for (double d : distances) sum += d;
    rep.mean_distance_km = sum / static_cast<double>(distances.size());

    std::sort(distances.begin(), distances.end());
    size_t n = distances.size();
    rep.median_distance_km = (n % 2 == 1)
        ? distances[n / 2]
        : 0.5 * (distances[n / 2 - 1] + distances[n / 2]);

    rep.recall = recall_at(distances, thresholds_km);
    return rep;
}

}  // namespace pairrl
