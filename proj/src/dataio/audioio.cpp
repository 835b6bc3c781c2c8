#include "dataio/audioio.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "core/error.hpp"

namespace avloc::dataio {

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
               static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b, 4);
}

void put_u16(std::ofstream& out, std::uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF)};
  out.write(b, 2);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

// Iterative radix-2 FFT; `re`/`im` length must be a power of two.
void fft_radix2(std::vector<double>& re, std::vector<double>& im) {
  const std::size_t n = re.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * 3.141592653589793238462643383279502884 / static_cast<double>(len);
    const double wr = std::cos(ang), wi = std::sin(ang);
    for (std::size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (std::size_t k = 0; k < len / 2; ++k) {
        const double ur = re[i + k], ui = im[i + k];
        const double vr = re[i + k + len / 2] * cr - im[i + k + len / 2] * ci;
        const double vi = re[i + k + len / 2] * ci + im[i + k + len / 2] * cr;
        re[i + k] = ur + vr;
        im[i + k] = ui + vi;
        re[i + k + len / 2] = ur - vr;
        im[i + k + len / 2] = ui - vi;
        const double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

}  // namespace

void write_wav(const std::string& path, const std::vector<double>& samples, int sample_rate) {
  if (samples.empty()) throw ValidationError("refusing to write empty waveform");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write wav: " + path);
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 4);
  out.write("RIFF", 4);
  put_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(out, 16);
  put_u16(out, 3);  // IEEE float
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate) * 4);
  put_u16(out, 4);
  put_u16(out, 32);
  out.write("data", 4);
  put_u32(out, data_bytes);
  for (double s : samples) {
    const float f = static_cast<float>(s);
    char b[4];
    std::memcpy(b, &f, 4);
    out.write(b, 4);
  }
  if (!out) throw IoError("short write: " + path);
}

std::pair<std::vector<double>, int> read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open wav: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw IoError("not a RIFF/WAVE file: " + path);
  std::size_t pos = 12;
  int sample_rate = 0, fmt = 0, bits = 0, channels = 0;
  std::vector<double> samples;
  while (pos + 8 <= bytes.size()) {
    const std::string id(reinterpret_cast<const char*>(bytes.data() + pos), 4);
    const std::uint32_t len = get_u32(bytes.data() + pos + 4);
    pos += 8;
    if (pos + len > bytes.size()) throw IoError("truncated wav chunk: " + path);
    if (id == "fmt ") {
      fmt = get_u16(bytes.data() + pos);
      channels = get_u16(bytes.data() + pos + 2);
      sample_rate = static_cast<int>(get_u32(bytes.data() + pos + 4));
      bits = get_u16(bytes.data() + pos + 14);
    } else if (id == "data") {
      if (channels != 1) throw IoError("only mono wav supported: " + path);
      if (fmt == 3 && bits == 32) {
        samples.resize(len / 4);
        for (std::size_t i = 0; i < samples.size(); ++i) {
          float f;
          std::memcpy(&f, bytes.data() + pos + i * 4, 4);
          samples[i] = f;
        }
      } else if (fmt == 1 && bits == 16) {
        samples.resize(len / 2);
        for (std::size_t i = 0; i < samples.size(); ++i) {
          std::int16_t s;
          std::memcpy(&s, bytes.data() + pos + i * 2, 2);
          samples[i] = s / 32768.0;
        }
      } else {
        throw IoError("unsupported wav encoding (want float32 or pcm16): " + path);
      }
    }
    pos += len + (len & 1);
  }
  if (samples.empty()) throw IoError("wav has no samples: " + path);
  return {std::move(samples), sample_rate};
}

std::vector<double> resample_linear(const std::vector<double>& x, int sr_in, int sr_out) {
  if (x.empty()) throw ValidationError("cannot resample empty audio");
  if (sr_in <= 0 || sr_out <= 0) throw ValidationError("sample rates must be positive");
  if (sr_in == sr_out) return x;
  const std::size_t n_out =
      static_cast<std::size_t>(static_cast<double>(x.size()) * sr_out / sr_in);
  std::vector<double> out(std::max<std::size_t>(n_out, 1));
  const double step = static_cast<double>(sr_in) / sr_out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double t = static_cast<double>(i) * step;
    const std::size_t i0 = std::min(static_cast<std::size_t>(t), x.size() - 1);
    const std::size_t i1 = std::min(i0 + 1, x.size() - 1);
    const double frac = t - static_cast<double>(i0);
    out[i] = x[i0] * (1.0 - frac) + x[i1] * frac;
  }
  return out;
}

int spectrogram_frames(const SpectrogramConfig& cfg) {
  const int length = static_cast<int>(cfg.seconds * cfg.target_sr);
  return 1 + (length - cfg.window) / cfg.hop;
}

int spectrogram_bins(const SpectrogramConfig& cfg) { return cfg.window / 2 + 1; }

Tensor stft_log_magnitude(const std::vector<double>& samples, const SpectrogramConfig& cfg) {
  const int F = spectrogram_bins(cfg);
  const int T = 1 + (static_cast<int>(samples.size()) - cfg.window) / cfg.hop;
  if (T < 1) throw ValidationError("clip shorter than one analysis window");
  Tensor out({1, F, T});
  std::vector<double> hann(static_cast<std::size_t>(cfg.window));
  for (int i = 0; i < cfg.window; ++i)
    hann[static_cast<std::size_t>(i)] =
        0.5 * (1.0 - std::cos(2.0 * 3.141592653589793 * i / cfg.window));
  std::vector<double> re(static_cast<std::size_t>(cfg.window)), im(re.size());
  for (int t = 0; t < T; ++t) {
    const int start = t * cfg.hop;
    for (int i = 0; i < cfg.window; ++i) {
      re[static_cast<std::size_t>(i)] =
          samples[static_cast<std::size_t>(start + i)] * hann[static_cast<std::size_t>(i)];
      im[static_cast<std::size_t>(i)] = 0.0;
    }
    fft_radix2(re, im);
    for (int f = 0; f < F; ++f) {
      const double mag = std::sqrt(re[static_cast<std::size_t>(f)] * re[static_cast<std::size_t>(f)] +
                                   im[static_cast<std::size_t>(f)] * im[static_cast<std::size_t>(f)]);
      out.at(0, f, t) = std::log(mag + cfg.log_floor);
    }
  }
  return out;
}

Tensor preprocess_audio(const std::vector<double>& waveform, int sample_rate,
                        const SpectrogramConfig& cfg) {
  if (waveform.empty()) throw ValidationError("empty audio");
  for (double v : waveform)
    if (!std::isfinite(v)) throw ValidationError("non-finite audio sample");
  std::vector<double> x = resample_linear(waveform, sample_rate, cfg.target_sr);
  const std::size_t want = static_cast<std::size_t>(cfg.seconds * cfg.target_sr);
  if (x.size() < want) {
    // loop-pad short clips
    std::vector<double> padded;
    padded.reserve(want);
    while (padded.size() < want) {
      const std::size_t take = std::min(x.size(), want - padded.size());
      padded.insert(padded.end(), x.begin(), x.begin() + static_cast<std::ptrdiff_t>(take));
    }
    x = std::move(padded);
  } else if (x.size() > want) {
    x.resize(want);
  }
  return stft_log_magnitude(x, cfg);
}

}  // namespace avloc::dataio
