#pragma once

#include <string>

#include <json.hpp>

namespace avloc::runner {

// JSON-config command entry points backing the shared-library API and the
// CLI. Each takes a config object and returns a JSON report.
nlohmann::json run_synth(const nlohmann::json& cfg);
nlohmann::json run_caption(const nlohmann::json& cfg);
nlohmann::json run_train(const nlohmann::json& cfg);
nlohmann::json run_eval(const nlohmann::json& cfg);
nlohmann::json run_visualize(const nlohmann::json& cfg);
nlohmann::json run_selftest(const nlohmann::json& cfg);

}  // namespace avloc::runner
