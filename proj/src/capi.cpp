#include "avloc.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "core/error.hpp"
#include "runner/runner.hpp"

struct avloc_context {
  std::string last_error;
};

namespace {

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

using CommandFn = nlohmann::json (*)(const nlohmann::json&);

avloc_status run_command(avloc_context* ctx, const char* config_json, char** report_json,
                         CommandFn fn) {
  if (report_json) *report_json = nullptr;
  if (!ctx) return AVLOC_E_VALIDATION;
  ctx->last_error.clear();
  if (!config_json) {
    ctx->last_error = "null config";
    return AVLOC_E_VALIDATION;
  }
  try {
    const nlohmann::json cfg = nlohmann::json::parse(config_json, nullptr, true);
    const nlohmann::json report = fn(cfg);
    if (report_json) *report_json = dup_string(report.dump());
    return AVLOC_OK;
  } catch (const nlohmann::json::exception& e) {
    ctx->last_error = std::string("config parse error: ") + e.what();
    return AVLOC_E_VALIDATION;
  } catch (const avloc::ValidationError& e) {
    ctx->last_error = e.what();
    return AVLOC_E_VALIDATION;
  } catch (const avloc::IoError& e) {
    ctx->last_error = e.what();
    return AVLOC_E_IO;
  } catch (const std::exception& e) {
    ctx->last_error = e.what();
    return AVLOC_E_RUNTIME;
  }
}

}  // namespace

extern "C" {

const char* avloc_version(void) { return "0.1.0"; }

avloc_status avloc_context_create(avloc_context** out_ctx) {
  if (!out_ctx) return AVLOC_E_VALIDATION;
  *out_ctx = new (std::nothrow) avloc_context();
  return *out_ctx ? AVLOC_OK : AVLOC_E_RUNTIME;
}

void avloc_context_destroy(avloc_context* ctx) { delete ctx; }

const char* avloc_last_error(const avloc_context* ctx) {
  return ctx ? ctx->last_error.c_str() : "null context";
}

avloc_status avloc_run_synth(avloc_context* ctx, const char* config_json, char** report_json) {
  return run_command(ctx, config_json, report_json, &avloc::runner::run_synth);
}

avloc_status avloc_run_caption(avloc_context* ctx, const char* config_json, char** report_json) {
  return run_command(ctx, config_json, report_json, &avloc::runner::run_caption);
}

avloc_status avloc_run_train(avloc_context* ctx, const char* config_json, char** report_json) {
  return run_command(ctx, config_json, report_json, &avloc::runner::run_train);
}

avloc_status avloc_run_eval(avloc_context* ctx, const char* config_json, char** report_json) {
  return run_command(ctx, config_json, report_json, &avloc::runner::run_eval);
}

avloc_status avloc_run_visualize(avloc_context* ctx, const char* config_json,
                                 char** report_json) {
  return run_command(ctx, config_json, report_json, &avloc::runner::run_visualize);
}

avloc_status avloc_run_selftest(avloc_context* ctx, const char* config_json,
                                char** report_json) {
  return run_command(ctx, config_json, report_json, &avloc::runner::run_selftest);
}

void avloc_string_free(char* s) { std::free(s); }

}  // extern "C"
