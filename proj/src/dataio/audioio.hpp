#pragma once

#include <string>
#include <utility>
#include <vector>

#include "core/tensor.hpp"

namespace avloc::dataio {

// Float32 PCM WAV (format 3), mono.
void write_wav(const std::string& path, const std::vector<double>& samples, int sample_rate);
std::pair<std::vector<double>, int> read_wav(const std::string& path);

std::vector<double> resample_linear(const std::vector<double>& x, int sr_in, int sr_out);

struct SpectrogramConfig {
  int target_sr = 16000;
  double seconds = 3.0;
  int window = 512;  // Hann
  int hop = 160;
  double log_floor = 1e-5;
};

// Frame count for a full-length clip under cfg (fixed for all valid inputs).
int spectrogram_frames(const SpectrogramConfig& cfg);
int spectrogram_bins(const SpectrogramConfig& cfg);  // window/2 + 1

// log(|STFT| + floor) of a 16 kHz mono clip, shape (1, F, T).
Tensor stft_log_magnitude(const std::vector<double>& samples, const SpectrogramConfig& cfg);

// Resample to 16 kHz, loop-pad/trim to exactly cfg.seconds, then transform.
Tensor preprocess_audio(const std::vector<double>& waveform, int sample_rate,
                        const SpectrogramConfig& cfg = {});

}  // namespace avloc::dataio
