#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "sparsefocus/errors.hpp"
#include "sparsefocus/optics.hpp"

namespace sf {

using Json = nlohmann::json;

/// Reads optional fields out of a JSON object and rejects keys nobody asked for.
class JsonFields {
 public:
  JsonFields(const Json& obj, std::string section) : obj_(obj), section_(std::move(section)) {
    if (!obj_.is_object()) throw ConfigError(section_ + ": expected a JSON object");
  }

  template <typename V>
  void read(const char* key, V& out) {
    known_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->template get<V>();
    } catch (const Json::exception& e) {
      throw ConfigError(section_ + "." + key + ": " + e.what());
    }
  }

  const Json* sub(const char* key) {
    known_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!known_.count(it.key())) throw ConfigError(section_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const Json& obj_;
  std::string section_;
  std::set<std::string> known_;
};

inline Json to_json(const OpticsConfig& c) {
  return Json{{"z_range_um", c.z_range_um},
              {"z_step_um", c.z_step_um},
              {"dof_um", c.dof_um},
              {"psf_sigma0_px", c.psf_sigma0_px},
              {"psf_slope_px_per_um", c.psf_slope_px_per_um},
              {"asym_gamma", c.asym_gamma},
              {"ring_width_frac", c.ring_width_frac},
              {"noise_sigma", c.noise_sigma},
              {"image_px", c.image_px}};
}

inline OpticsConfig optics_from_json(const Json& j, OpticsConfig c = {}) {
  JsonFields f(j, "optics");
  f.read("z_range_um", c.z_range_um);
  f.read("z_step_um", c.z_step_um);
  f.read("dof_um", c.dof_um);
  f.read("psf_sigma0_px", c.psf_sigma0_px);
  f.read("psf_slope_px_per_um", c.psf_slope_px_per_um);
  f.read("asym_gamma", c.asym_gamma);
  f.read("ring_width_frac", c.ring_width_frac);
  f.read("noise_sigma", c.noise_sigma);
  f.read("image_px", c.image_px);
  f.finish();
  c.validate();
  return c;
}

}  // namespace sf
