#pragma once

#include <json.hpp>

#include "mfg/master.hpp"
#include "mfg/monotonicity.hpp"
#include "mfg/propagation.hpp"

namespace mfg {

using Json = nlohmann::ordered_json;

Json measure_to_json(const DiscreteMeasure& mu);
DiscreteMeasure measure_from_json(const Json& j);

Json report_to_json(const MonotonicityReport& report);
Json report_to_json(const LipschitzReport& report);
Json profile_to_json(const DissipationProfile& profile, const RateReport* rate);

// FNV-1a over the canonical dump; hex string.
std::string json_hash(const Json& j);

void write_json(const Json& j, const std::string& path);
Json read_json(const std::string& path);

}  // namespace mfg
