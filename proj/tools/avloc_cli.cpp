// Command-line front end. Deliberately a thin shell over the C API: every
// subcommand assembles a JSON config, hands it to the shared library and
// prints the returned report.
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "avloc.h"

namespace {

using nlohmann::json;

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) {
    std::fprintf(stderr, "cannot open config file: %s\n", path.c_str());
    std::exit(2);
  }
  std::string text;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) text.append(buf, n);
  std::fclose(f);
  json cfg = json::parse(text, nullptr, false);
  if (cfg.is_discarded()) {
    std::fprintf(stderr, "config file is not valid JSON: %s\n", path.c_str());
    std::exit(2);
  }
  return cfg;
}

int dispatch(avloc_status (*fn)(avloc_context*, const char*, char**), const json& cfg,
             bool quiet) {
  avloc_context* ctx = nullptr;
  if (avloc_context_create(&ctx) != AVLOC_OK) {
    std::fprintf(stderr, "failed to create context\n");
    return 3;
  }
  char* report = nullptr;
  const avloc_status status = fn(ctx, cfg.dump().c_str(), &report);
  if (status == AVLOC_OK) {
    if (!quiet && report) std::printf("%s\n", report);
  } else {
    std::fprintf(stderr, "error: %s\n", avloc_last_error(ctx));
  }
  avloc_string_free(report);
  avloc_context_destroy(ctx);
  if (status == AVLOC_OK) return 0;
  return status == AVLOC_E_VALIDATION ? 2 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"avloc — object-aware audio-visual sound source localization toolkit"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress the JSON report on stdout");

  std::string config_path;
  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic shapes-and-tones dataset");
  std::string out_dir;
  std::uint64_t seed = 0;
  int n_clips = 100;
  bool duet = false;
  double distractor_prob = 1.0;
  synth->add_option("--config", config_path, "JSON config file");
  synth->add_option("--out-dir", out_dir, "output directory");
  synth->add_option("--seed", seed, "generator seed");
  synth->add_option("--clips", n_clips, "number of clips");
  synth->add_flag("--duet", duet, "two sources per clip");
  synth->add_option("--distractor-prob", distractor_prob, "silent distractor probability");

  // caption
  auto* caption = app.add_subcommand("caption", "populate the caption cache for a dataset");
  std::string manifest, cache, client_mode = "fixture", endpoint, model = "mllm";
  caption->add_option("--config", config_path, "JSON config file");
  caption->add_option("--manifest", manifest, "dataset manifest");
  caption->add_option("--cache", cache, "caption cache (JSON lines)");
  caption->add_option("--client", client_mode, "fixture|http");
  caption->add_option("--endpoint", endpoint, "http endpoint (or AVLOC_MLLM_ENDPOINT)");
  caption->add_option("--model", model, "model name used in cache keys");

  // train
  auto* train = app.add_subcommand("train", "train the two-stream localizer");
  train->add_option("--config", config_path, "JSON config file")->required();
  int steps = -1;
  std::uint64_t train_seed = 0;
  bool train_seed_set = false;
  double lambda1 = -1.0, lambda2 = -1.0;
  train->add_option("--steps", steps, "override step count");
  train->add_option("--seed", train_seed, "override seed")->each([&](const std::string&) {
    train_seed_set = true;
  });
  train->add_option("--lambda1", lambda1, "override the alignment loss weight");
  train->add_option("--lambda2", lambda2, "override the region-isolation loss weight");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string checkpoint, mode = "single", eval_out;
  eval->add_option("--config", config_path, "JSON config file");
  eval->add_option("--checkpoint", checkpoint, "checkpoint path");
  eval->add_option("--manifest", manifest, "dataset manifest");
  eval->add_option("--mode", mode, "single|multi");
  eval->add_option("--out-dir", eval_out, "where to write metric reports");

  // visualize
  auto* vis = app.add_subcommand("visualize", "export heatmaps and overlays");
  std::vector<std::string> clip_ids;
  vis->add_option("--config", config_path, "JSON config file");
  vis->add_option("--checkpoint", checkpoint, "checkpoint path");
  vis->add_option("--manifest", manifest, "dataset manifest");
  vis->add_option("--out-dir", out_dir, "output directory");
  vis->add_option("--clip", clip_ids, "clip id (repeatable; default: all)");

  // selftest
  auto* selftest = app.add_subcommand("selftest", "run the built-in oracle suites");
  selftest->add_option("--config", config_path, "JSON config file");

  CLI11_PARSE(app, argc, argv);

  json cfg = load_config_file(config_path);
  if (app.got_subcommand(synth)) {
    if (!out_dir.empty()) cfg["out_dir"] = out_dir;
    if (synth->count("--seed")) cfg["seed"] = seed;
    if (synth->count("--clips")) cfg["n_clips"] = n_clips;
    if (duet) cfg["duet"] = true;
    if (synth->count("--distractor-prob")) cfg["silent_distractor_prob"] = distractor_prob;
    return dispatch(&avloc_run_synth, cfg, quiet);
  }
  if (app.got_subcommand(caption)) {
    if (!manifest.empty()) cfg["manifest"] = manifest;
    if (!cache.empty()) cfg["caption_cache"] = cache;
    if (!cfg.contains("client")) cfg["client"] = json::object();
    if (caption->count("--client")) cfg["client"]["mode"] = client_mode;
    if (!endpoint.empty()) cfg["client"]["endpoint"] = endpoint;
    if (caption->count("--model")) cfg["client"]["model"] = model;
    return dispatch(&avloc_run_caption, cfg, quiet);
  }
  if (app.got_subcommand(train)) {
    if (steps >= 0) cfg["steps"] = steps;
    if (train_seed_set) cfg["seed"] = train_seed;
    if (!cfg.contains("loss")) cfg["loss"] = json::object();
    if (lambda1 >= 0.0) cfg["loss"]["lambda1"] = lambda1;
    if (lambda2 >= 0.0) cfg["loss"]["lambda2"] = lambda2;
    return dispatch(&avloc_run_train, cfg, quiet);
  }
  if (app.got_subcommand(eval)) {
    if (!checkpoint.empty()) cfg["checkpoint"] = checkpoint;
    if (!manifest.empty()) cfg["manifest"] = manifest;
    if (eval->count("--mode")) cfg["mode"] = mode;
    if (!eval_out.empty()) cfg["out_dir"] = eval_out;
    return dispatch(&avloc_run_eval, cfg, quiet);
  }
  if (app.got_subcommand(vis)) {
    if (!checkpoint.empty()) cfg["checkpoint"] = checkpoint;
    if (!manifest.empty()) cfg["manifest"] = manifest;
    if (!out_dir.empty()) cfg["out_dir"] = out_dir;
    if (!clip_ids.empty()) cfg["clip_ids"] = clip_ids;
    return dispatch(&avloc_run_visualize, cfg, quiet);
  }
  return dispatch(&avloc_run_selftest, cfg, quiet);
}
