#pragma once

#include <algorithm>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "reroof/error.hpp"

namespace reroof::impact {

/// Closed integer interval of roof ages, in years.
struct AgeInterval {
  int lo = 0;
  int hi = 0;
  int count() const { return hi - lo + 1; }
};

/// Inputs of the roof-age -> CAC -> deployment -> CO2 chain. Defaults
/// reproduce the reference estimate.
struct ImpactParams {
  int roof_age_min = 0;
  int roof_age_max = 39;
  std::vector<AgeInterval> viable_intervals{{0, 4}, {25, 39}};
  double top_of_funnel_share = 0.40;      // share of CAC spent before client contact
  double cac_share_of_cost = 0.10;        // CAC as a share of installed cost
  double cost_to_deployment_elasticity = 1.0;
  double annual_co2_per_percent = 12.5;   // Mt CO2 / yr per 1% capacity increase
  int horizon_years = 30;

  void validate() const {
    auto fraction = [](double v, const char* what) {
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string("impact: ") + what + " must lie in [0, 1]");
    };
    fraction(top_of_funnel_share, "top_of_funnel_share");
    fraction(cac_share_of_cost, "cac_share_of_cost");
    if (roof_age_max < roof_age_min) throw ConfigError("impact: roof_age_max < roof_age_min");
    if (horizon_years <= 0) throw ConfigError("impact: horizon_years must be positive");
    if (!(cost_to_deployment_elasticity >= 0.0)) throw ConfigError("impact: elasticity must be >= 0");
    if (!(annual_co2_per_percent >= 0.0)) throw ConfigError("impact: annual_co2_per_percent must be >= 0");
    for (const auto& iv : viable_intervals) {
      if (iv.hi < iv.lo || iv.lo < roof_age_min || iv.hi > roof_age_max) {
        throw ConfigError("impact: viable interval [" + std::to_string(iv.lo) + ", " +
                          std::to_string(iv.hi) + "] outside the roof age range");
      }
    }
  }
};

struct ImpactResult {
  double viable_fraction = 0.0;
  double cac_reduction_fraction = 0.0;
  double total_cost_reduction_fraction = 0.0;
  double capacity_increase_fraction = 0.0;
  double annual_co2_mt = 0.0;
  double total_co2_mt = 0.0;
};

/// Share of integer ages in [roof_age_min, roof_age_max] that fall in a
/// viable interval. Intervals must be disjoint.
inline double viable_fraction(const ImpactParams& p) {
  p.validate();
  auto iv = p.viable_intervals;
  std::sort(iv.begin(), iv.end(), [](const AgeInterval& a, const AgeInterval& b) { return a.lo < b.lo; });
  int viable = 0;
  for (std::size_t i = 0; i < iv.size(); ++i) {
    if (i > 0 && iv[i].lo <= iv[i - 1].hi) {
      throw ConfigError("impact: viable intervals overlap");
    }
    viable += iv[i].count();
  }
  const int total = p.roof_age_max - p.roof_age_min + 1;
  return static_cast<double>(viable) / static_cast<double>(total);
}

/// Each stage is linear in the one before it:
///   cac_reduction   = top_of_funnel_share * (1 - viable_fraction)
///   cost_reduction  = cac_share_of_cost * cac_reduction
///   capacity        = elasticity * cost_reduction
///   annual CO2 (Mt) = capacity in percent * annual_co2_per_percent
///   total CO2 (Mt)  = annual * horizon_years
/// The chain is carried in percent, which keeps round inputs exact.
inline ImpactResult compute_impact(const ImpactParams& p) {
  ImpactResult r;
  r.viable_fraction = viable_fraction(p);
  const double cac_pct = p.top_of_funnel_share * 100.0 * (1.0 - r.viable_fraction);
  const double cost_pct = p.cac_share_of_cost * cac_pct;
  const double capacity_pct = p.cost_to_deployment_elasticity * cost_pct;
  r.cac_reduction_fraction = cac_pct / 100.0;
  r.total_cost_reduction_fraction = cost_pct / 100.0;
  r.capacity_increase_fraction = capacity_pct / 100.0;
  r.annual_co2_mt = capacity_pct * p.annual_co2_per_percent;
  r.total_co2_mt = r.annual_co2_mt * static_cast<double>(p.horizon_years);
  return r;
}

// ---------------------------------------------------------------------------
// Serialisation

inline void to_json(nlohmann::json& j, const AgeInterval& iv) { j = nlohmann::json::array({iv.lo, iv.hi}); }

inline void from_json(const nlohmann::json& j, AgeInterval& iv) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("impact: intervals are [lo, hi] pairs");
  iv.lo = j[0].get<int>();
  iv.hi = j[1].get<int>();
}

inline void to_json(nlohmann::json& j, const ImpactParams& p) {
  j = {{"roof_age_min", p.roof_age_min},
       {"roof_age_max", p.roof_age_max},
       {"viable_intervals", p.viable_intervals},
       {"top_of_funnel_share", p.top_of_funnel_share},
       {"cac_share_of_cost", p.cac_share_of_cost},
       {"cost_to_deployment_elasticity", p.cost_to_deployment_elasticity},
       {"annual_co2_per_percent", p.annual_co2_per_percent},
       {"horizon_years", p.horizon_years}};
}

inline void from_json(const nlohmann::json& j, ImpactParams& p) {
  const ImpactParams d;
  p.roof_age_min = j.value("roof_age_min", d.roof_age_min);
  p.roof_age_max = j.value("roof_age_max", d.roof_age_max);
  p.viable_intervals = j.value("viable_intervals", d.viable_intervals);
  p.top_of_funnel_share = j.value("top_of_funnel_share", d.top_of_funnel_share);
  p.cac_share_of_cost = j.value("cac_share_of_cost", d.cac_share_of_cost);
  p.cost_to_deployment_elasticity = j.value("cost_to_deployment_elasticity", d.cost_to_deployment_elasticity);
  p.annual_co2_per_percent = j.value("annual_co2_per_percent", d.annual_co2_per_percent);
  p.horizon_years = j.value("horizon_years", d.horizon_years);
}

inline void to_json(nlohmann::json& j, const ImpactResult& r) {
  j = {{"viable_fraction", r.viable_fraction},
       {"cac_reduction_fraction", r.cac_reduction_fraction},
       {"total_cost_reduction_fraction", r.total_cost_reduction_fraction},
       {"capacity_increase_fraction", r.capacity_increase_fraction},
       {"annual_co2_mt", r.annual_co2_mt},
       {"total_co2_mt", r.total_co2_mt}};
}

inline std::string to_text(const ImpactResult& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "viable roof-age fraction        %10.4f\n"
                "CAC reduction                   %10.4f\n"
                "total cost reduction            %10.4f\n"
                "solar capacity increase         %10.4f\n"
                "CO2 displaced per year (Mt)     %10.1f\n"
                "CO2 displaced over horizon (Mt) %10.1f\n",
                r.viable_fraction, r.cac_reduction_fraction, r.total_cost_reduction_fraction,
                r.capacity_increase_fraction, r.annual_co2_mt, r.total_co2_mt);
  return buf;
}

}  // namespace reroof::impact
