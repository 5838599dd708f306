#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "pir/dataio.hpp"
#include "pir/rng.hpp"
#include "pir/tensor.hpp"

namespace pir {

/// Synthetic long-tail benchmark: hourly sinusoids (daily + weekly) with
/// AR(1) noise per channel, plus rare square/spike motifs injected into
/// segment-aligned positions. Motifs recur in the training region so that
/// retrieval has exact references; test-region motifs create the error tail.
struct SynthConfig {
  int channels = 3;
  int length = 6000;
  int segment_len = 24;  // motif length; align with the forecast horizon
  double motif_rate = 0.05;
  int templates = 10;
  int min_train_occurrences = 5;
  double motif_amplitude = 2.5;
  bool motifs = true;
  double train_fraction = 0.7;
  double val_fraction = 0.1;
  double ar_phi = 0.7;
  double ar_sigma = 0.1;
  std::uint64_t seed = 0;
};

struct MotifEvent {
  int start = 0;
  int channel = 0;
  int template_id = 0;
};

struct SynthOutput {
  TimeSeriesDataset dataset;
  std::vector<MotifEvent> events;          // ground truth for tail analysis
  std::vector<int> skipped_segments;       // segments crossing a split boundary
};

/// The ten fixed motif shapes. Ids 0-4 are signed square pulses with varying
/// offset and width; ids 5-9 are signed Gaussian spikes.
inline std::vector<double> motif_template(int id, int len, double amplitude) {
  std::vector<double> out(len, 0.0);
  if (id < 5) {
    const int off = (id * len) / 10;
    const int width = len / 2 + (id * len) / 12;
    const double sign = id % 2 == 0 ? 1.0 : -1.0;
    for (int j = off; j < std::min(len, off + width); ++j) out[j] = sign * amplitude;
  } else {
    const int q = id - 5;
    const double center = (0.2 + 0.15 * q) * len;
    const double sigma = len / (6.0 + q);
    const double sign = q % 2 == 0 ? 1.0 : -1.0;
    for (int j = 0; j < len; ++j) {
      const double z = (j - center) / sigma;
      out[j] = sign * amplitude * std::exp(-0.5 * z * z);
    }
  }
  return out;
}

inline SynthOutput generate_synthetic_benchmark(const SynthConfig& cfg) {
  if (cfg.length < 4 * cfg.segment_len) {
    throw std::invalid_argument("synthetic benchmark: series too short for the segment length");
  }
  SynthOutput out;
  TimeSeriesDataset& ds = out.dataset;
  const std::int64_t start = parse_timestamp("2020-01-06 00:00:00");  // a Monday
  for (int c = 0; c < cfg.channels; ++c) ds.channel_names.push_back("s" + std::to_string(c));
  ds.timestamps.reserve(cfg.length);
  for (int i = 0; i < cfg.length; ++i) ds.timestamps.push_back(start + 3600ll * i);
  ds.values = Tensor({cfg.length, cfg.channels});

  Rng base_rng = seeded_for(cfg.seed, "synth-base");
  for (int c = 0; c < cfg.channels; ++c) {
    const double amp_d = base_rng.uniform(0.8, 1.2);
    const double phase_d = base_rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double amp_w = base_rng.uniform(0.5, 0.8);
    const double phase_w = base_rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double level = 2.0 * c;
    double ar = 0.0;
    for (int i = 0; i < cfg.length; ++i) {
      ar = cfg.ar_phi * ar + base_rng.normal(0.0, cfg.ar_sigma);
      ds.values.at(i, c) = level + amp_d * std::sin(2.0 * std::numbers::pi * i / 24.0 + phase_d) +
                           amp_w * std::sin(2.0 * std::numbers::pi * i / 168.0 + phase_w) + ar;
    }
  }

  if (!cfg.motifs) return out;

  const int boundary1 = static_cast<int>(cfg.length * cfg.train_fraction);
  const int boundary2 = static_cast<int>(cfg.length * (cfg.train_fraction + cfg.val_fraction));
  const int segments = cfg.length / cfg.segment_len;
  std::vector<std::vector<int>> region_segments(3);
  for (int s = 0; s < segments; ++s) {
    const int lo = s * cfg.segment_len, hi = lo + cfg.segment_len;
    if (hi <= boundary1) {
      region_segments[0].push_back(s);
    } else if (lo >= boundary1 && hi <= boundary2) {
      region_segments[1].push_back(s);
    } else if (lo >= boundary2) {
      region_segments[2].push_back(s);
    } else {
      out.skipped_segments.push_back(s);  // crosses a split boundary
    }
  }

  Rng place_rng = seeded_for(cfg.seed, "synth-motifs");
  for (int region = 0; region < 3; ++region) {
    auto& eligible = region_segments[region];
    place_rng.shuffle(eligible);
    int count = static_cast<int>(std::round(cfg.motif_rate * eligible.size()));
    if (region == 0) {
      // guarantee every template recurs in the training region
      count = std::max(count, cfg.templates * cfg.min_train_occurrences);
    }
    count = std::min(count, static_cast<int>(eligible.size()));
    for (int i = 0; i < count; ++i) {
      MotifEvent ev;
      ev.start = eligible[i] * cfg.segment_len;
      ev.channel = place_rng.below(cfg.channels);
      // round-robin in the training region so each template hits its quota
      ev.template_id = region == 0 ? i % cfg.templates : place_rng.below(cfg.templates);
      const auto tpl = motif_template(ev.template_id, cfg.segment_len, cfg.motif_amplitude);
      for (int j = 0; j < cfg.segment_len; ++j) {
        ds.values.at(ev.start + j, ev.channel) += tpl[j];
      }
      out.events.push_back(ev);
    }
  }
  std::sort(out.events.begin(), out.events.end(),
            [](const MotifEvent& a, const MotifEvent& b) { return a.start < b.start; });
  return out;
}

inline void write_motif_log(const SynthOutput& synth, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "start,channel,template\n";
  for (const auto& ev : synth.events) {
    out << ev.start << "," << ev.channel << "," << ev.template_id << "\n";
  }
  if (!synth.skipped_segments.empty()) {
    out << "# skipped segments crossing split boundaries:";
    for (int s : synth.skipped_segments) out << " " << s;
    out << "\n";
  }
}

}  // namespace pir
