#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "core/optim.hpp"
#include "dataio/dataio.hpp"
#include "encoders/encoders.hpp"
#include "guidance/guidance.hpp"
#include "losses/losses.hpp"

#include <json.hpp>

namespace avloc::runner {

struct TrainConfig {
  std::string manifest;
  std::string caption_cache;
  std::string caption_model = "fixture-v1";
  std::string out_dir;
  std::string init_checkpoint;  // warm-start parameters (fresh optimizer)
  std::uint64_t seed = 0;
  int steps = 500;
  int batch_size = 16;
  int checkpoint_every = 0;  // 0: only the initial and final snapshots
  int threads = 0;
  encoders::EncoderConfig encoder;
  losses::LossConfig loss;
  AdamConfig adam;
  dataio::SpectrogramConfig spect;
};
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);

// Bit-exact parameter/optimizer archive with a config echo.
struct Checkpoint {
  int version = 1;
  long long step = 0;
  encoders::EncoderConfig encoder_cfg;
  nlohmann::json params;
  nlohmann::json optimizer;  // empty for inference-only snapshots
  nlohmann::json metrics_snapshot;
};
void save_checkpoint(const std::string& path, const encoders::ToyEncoders& model, Adam* adam,
                     long long step, const nlohmann::json& metrics_snapshot);
std::unique_ptr<encoders::ToyEncoders> load_checkpoint(const std::string& path, Adam* adam,
                                                       long long* step);

struct StepRecord {
  long long step = 0;
  losses::LossReport report;
};

struct TrainOutcome {
  std::string log_path;
  std::string init_checkpoint;
  std::string final_checkpoint;
  long long steps_run = 0;
  double first_total = 0.0;
  double last_total = 0.0;
};

// Full loop: dataset + caption cache -> batches -> objective -> optimizer.
// Reference embeddings are precomputed once and stay frozen. The per-step
// callback (when set) observes every loss report.
TrainOutcome train(const TrainConfig& cfg,
                   const std::function<void(const StepRecord&)>& on_step = nullptr);

// Shared helper: reference embeddings for every clip in the dataset, from the
// caption cache (fails if any clip is missing).
struct ClipReferences {
  Tensor foreground;  // (K,c)
  Tensor background;  // (c,)
  int K = 1;
};
std::vector<ClipReferences> references_for_dataset(const dataio::Dataset& data,
                                                   const std::string& cache_path,
                                                   const std::string& model,
                                                   const encoders::EncoderConfig& text_cfg);

}  // namespace avloc::runner
