#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "neuroloop/codec/layout.hpp"
#include "neuroloop/core/rng.hpp"
#include "neuroloop/substrate/substrate.hpp"

namespace neuroloop::substrate {

/// Leaky integrate-and-fire network with pair-based STDP, laid out as one
/// cluster of neurons under each electrode. All constants are exposed.
struct SpikingConfig {
  std::size_t neurons_per_channel = 8;
  double excitatory_fraction = 0.8;

  double v_rest_mv = -65.0;
  double v_reset_mv = -65.0;
  double v_threshold_mv = -50.0;
  double tau_m_ms = 20.0;
  int refractory_ms = 2;

  // Connection probability p0 * exp(-d / sigma), d in electrode pitches.
  double connect_p0 = 0.3;
  double connect_sigma = 1.0;
  double w_exc_init_mv = 1.0;  // excitatory weights start uniform in [0.5, 1.5] x this
  double w_inh_mv = 2.0;
  double w_max_mv = 4.0;

  // Injected depolarization per pulse = coupling * gain * amplitude(uA) * pulse_width(us),
  // gain uniform in [1 - jitter, 1 + jitter] per neuron.
  double coupling_mv_per_pc = 0.1;
  double coupling_jitter = 0.5;

  // Background Poisson drive per neuron.
  double noise_rate_hz = 0.5;
  double noise_mv = 20.0;

  bool plasticity = true;
  double a_plus = 0.01;   // in units of w_max
  double a_minus = 0.012;
  double tau_plus_ms = 20.0;
  double tau_minus_ms = 20.0;

  // Synthetic voltage output: spike transients on a flat baseline.
  bool voltage_output = false;
  double voltage_sample_rate_hz = 10000.0;
  double spike_amplitude_uv = -100.0;

  void validate() const {
    if (neurons_per_channel == 0) throw ConfigError("neurons_per_channel must be positive");
    if (!(excitatory_fraction >= 0.0 && excitatory_fraction <= 1.0))
      throw ConfigError("excitatory_fraction must be in [0, 1]");
    if (!(tau_m_ms > 0) || refractory_ms < 0) throw ConfigError("membrane constants out of range");
    if (!(v_threshold_mv > v_reset_mv)) throw ConfigError("threshold must exceed reset potential");
    if (!(w_max_mv > 0) || w_exc_init_mv < 0 || w_inh_mv < 0) throw ConfigError("synaptic weights out of range");
    if (noise_rate_hz < 0) throw ConfigError("noise rate must be non-negative");
    if (!(tau_plus_ms > 0 && tau_minus_ms > 0)) throw ConfigError("STDP time constants must be positive");
    if (voltage_output && !(voltage_sample_rate_hz >= 1000.0))
      throw ConfigError("voltage sample rate must be at least 1 kHz");
  }
};

class SpikingSubstrate final : public Substrate {
 public:
  struct Synapse {
    std::uint32_t pre;
    std::uint32_t post;
    double weight;
  };

  SpikingSubstrate(const codec::RegionLayout& layout, SpikingConfig cfg, std::uint64_t seed)
      : cfg_(cfg), channels_(layout.channels), rng_(seed) {
    cfg_.validate();
    const std::size_t n = channels_ * cfg_.neurons_per_channel;
    v_.assign(n, cfg_.v_rest_mv);
    refractory_.assign(n, 0);
    excitatory_.resize(n);
    gain_.resize(n);
    pre_trace_.assign(n, 0.0);
    post_trace_.assign(n, 0.0);
    pending_.assign(n, 0.0);
    next_noise_.resize(n);
    outgoing_.resize(n);
    incoming_.resize(n);

    // Excitatory flags: a fixed fraction within each cluster.
    const auto exc_per_cluster =
        static_cast<std::size_t>(std::llround(cfg_.excitatory_fraction * static_cast<double>(cfg_.neurons_per_channel)));
    for (std::size_t i = 0; i < n; ++i) {
      excitatory_[i] = (i % cfg_.neurons_per_channel) < exc_per_cluster;
      gain_[i] = rng_.uniform(1.0 - cfg_.coupling_jitter, 1.0 + cfg_.coupling_jitter);
      next_noise_[i] = cfg_.noise_rate_hz > 0 ? rng_.exponential(cfg_.noise_rate_hz / 1000.0) : 1e300;
    }

    const auto cols = static_cast<double>(layout.grid_cols);
    auto pos = [&](std::size_t neuron) {
      const auto ch = static_cast<double>(neuron / cfg_.neurons_per_channel);
      return std::pair{std::floor(ch / cols), std::fmod(ch, cols)};
    };
    for (std::size_t pre = 0; pre < n; ++pre) {
      const auto [pr, pc] = pos(pre);
      for (std::size_t post = 0; post < n; ++post) {
        if (pre == post) continue;
        const auto [qr, qc] = pos(post);
        const double d = std::hypot(pr - qr, pc - qc);
        if (!rng_.bernoulli(cfg_.connect_p0 * std::exp(-d / cfg_.connect_sigma))) continue;
        const double w = excitatory_[pre] ? cfg_.w_exc_init_mv * rng_.uniform(0.5, 1.5) : cfg_.w_inh_mv;
        const auto id = static_cast<std::uint32_t>(synapses_.size());
        synapses_.push_back({static_cast<std::uint32_t>(pre), static_cast<std::uint32_t>(post),
                             std::min(w, cfg_.w_max_mv)});
        outgoing_[pre].push_back(id);
        incoming_[post].push_back(id);
      }
    }
    decay_plus_ = std::exp(-1.0 / cfg_.tau_plus_ms);
    decay_minus_ = std::exp(-1.0 / cfg_.tau_minus_ms);
  }

  Capabilities capabilities() const override { return {!cfg_.voltage_output, true}; }
  std::size_t channels() const override { return channels_; }
  std::uint64_t clock_ms() const override { return clock_; }

  void rest(std::uint64_t duration_ms) override {
    for (std::uint64_t t = 0; t < duration_ms; ++t) advance(nullptr, 0, nullptr, 0);
  }

  const std::vector<Synapse>& synapses() const { return synapses_; }
  const SpikingConfig& config() const { return cfg_; }
  std::size_t neurons() const { return v_.size(); }

  double mean_excitatory_weight() const {
    double s = 0;
    std::size_t k = 0;
    for (const auto& syn : synapses_)
      if (excitatory_[syn.pre]) {
        s += syn.weight;
        ++k;
      }
    return k ? s / static_cast<double>(k) : 0.0;
  }

 protected:
  Recording do_stimulate(const StimulationMatrix& stim, std::uint64_t record_ms) override {
    // Per-bin list of stimulated channels.
    std::vector<std::vector<std::uint32_t>> onsets_by_bin(stim.bins());
    for (std::size_t c = 0; c < stim.channels(); ++c)
      for (auto b : stim.onsets.events(c)) onsets_by_bin[b].push_back(static_cast<std::uint32_t>(c));
    const double charge = stim.amplitude_ua * stim.pulse_width_us;

    SpikeMatrix spikes(channels_, record_ms);
    for (std::uint64_t t = 0; t < record_ms; ++t) {
      const std::vector<std::uint32_t>* on = t < onsets_by_bin.size() ? &onsets_by_bin[t] : nullptr;
      advance(on, charge, &spikes, static_cast<std::size_t>(t));
    }
    if (!cfg_.voltage_output) return spikes;

    const double per_ms = cfg_.voltage_sample_rate_hz / 1000.0;
    ResponseMatrix v(channels_, static_cast<std::size_t>(std::llround(static_cast<double>(record_ms) * per_ms)),
                     cfg_.voltage_sample_rate_hz);
    for (std::size_t c = 0; c < channels_; ++c)
      for (auto b : spikes.spikes.events(c))
        v.at(c, static_cast<std::size_t>(std::llround(b * per_ms))) = cfg_.spike_amplitude_uv;
    return v;
  }

 private:
  // One 1 ms Euler step. Synaptic input has a 1 ms delay; stimulation and
  // background kicks land in the current step.
  void advance(const std::vector<std::uint32_t>* stim_channels, double charge, SpikeMatrix* out, std::size_t bin) {
    const std::size_t n = v_.size();
    std::vector<double> input(n, 0.0);
    input.swap(pending_);
    if (stim_channels)
      for (auto c : *stim_channels) {
        const std::size_t first = c * cfg_.neurons_per_channel;
        for (std::size_t i = first; i < first + cfg_.neurons_per_channel; ++i)
          input[i] += cfg_.coupling_mv_per_pc * gain_[i] * charge;
      }
    const double now = static_cast<double>(clock_);
    if (cfg_.noise_rate_hz > 0) {
      const double rate_per_ms = cfg_.noise_rate_hz / 1000.0;
      for (std::size_t i = 0; i < n; ++i)
        while (next_noise_[i] < now + 1.0) {
          input[i] += cfg_.noise_mv;
          next_noise_[i] += rng_.exponential(rate_per_ms);
        }
    }
    if (cfg_.plasticity)
      for (std::size_t i = 0; i < n; ++i) {
        pre_trace_[i] *= decay_plus_;
        post_trace_[i] *= decay_minus_;
      }

    fired_.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (refractory_[i] > 0) {
        --refractory_[i];
        v_[i] = cfg_.v_reset_mv;
        continue;
      }
      v_[i] += (cfg_.v_rest_mv - v_[i]) / cfg_.tau_m_ms + input[i];
      if (v_[i] >= cfg_.v_threshold_mv) {
        v_[i] = cfg_.v_reset_mv;
        refractory_[i] = cfg_.refractory_ms;
        fired_.push_back(static_cast<std::uint32_t>(i));
      }
    }

    std::fill(pending_.begin(), pending_.end(), 0.0);
    for (auto i : fired_) {
      for (auto id : outgoing_[i]) {
        Synapse& s = synapses_[id];
        pending_[s.post] += excitatory_[i] ? s.weight : -s.weight;
      }
      if (cfg_.plasticity) {
        const double wmax = cfg_.w_max_mv;
        // Pre spike: depress by the postsynaptic trace.
        if (excitatory_[i])
          for (auto id : outgoing_[i]) {
            Synapse& s = synapses_[id];
            s.weight = std::clamp(s.weight - cfg_.a_minus * wmax * post_trace_[s.post], 0.0, wmax);
          }
        // Post spike: potentiate excitatory inputs by their presynaptic trace.
        for (auto id : incoming_[i]) {
          Synapse& s = synapses_[id];
          if (excitatory_[s.pre]) s.weight = std::clamp(s.weight + cfg_.a_plus * wmax * pre_trace_[s.pre], 0.0, wmax);
        }
      }
    }
    if (cfg_.plasticity)
      for (auto i : fired_) {
        pre_trace_[i] += 1.0;
        post_trace_[i] += 1.0;
      }
    if (out)
      for (auto i : fired_) {
        const std::size_t ch = i / cfg_.neurons_per_channel;
        out->spikes.set(ch, bin);
      }
    ++clock_;
  }

  SpikingConfig cfg_;
  std::size_t channels_;
  Rng rng_;
  std::uint64_t clock_ = 0;

  std::vector<double> v_;
  std::vector<int> refractory_;
  std::vector<bool> excitatory_;
  std::vector<double> gain_;
  std::vector<double> pre_trace_;
  std::vector<double> post_trace_;
  std::vector<double> pending_;
  std::vector<double> next_noise_;
  std::vector<std::uint32_t> fired_;

  std::vector<Synapse> synapses_;
  std::vector<std::vector<std::uint32_t>> outgoing_;
  std::vector<std::vector<std::uint32_t>> incoming_;
  double decay_plus_ = 1.0;
  double decay_minus_ = 1.0;
};

inline void to_json(nlohmann::json& j, const SpikingConfig& c) {
  j = nlohmann::json{{"neurons_per_channel", c.neurons_per_channel},
                     {"excitatory_fraction", c.excitatory_fraction},
                     {"v_rest_mv", c.v_rest_mv},
                     {"v_reset_mv", c.v_reset_mv},
                     {"v_threshold_mv", c.v_threshold_mv},
                     {"tau_m_ms", c.tau_m_ms},
                     {"refractory_ms", c.refractory_ms},
                     {"connect_p0", c.connect_p0},
                     {"connect_sigma", c.connect_sigma},
                     {"w_exc_init_mv", c.w_exc_init_mv},
                     {"w_inh_mv", c.w_inh_mv},
                     {"w_max_mv", c.w_max_mv},
                     {"coupling_mv_per_pc", c.coupling_mv_per_pc},
                     {"coupling_jitter", c.coupling_jitter},
                     {"noise_rate_hz", c.noise_rate_hz},
                     {"noise_mv", c.noise_mv},
                     {"plasticity", c.plasticity},
                     {"a_plus", c.a_plus},
                     {"a_minus", c.a_minus},
                     {"tau_plus_ms", c.tau_plus_ms},
                     {"tau_minus_ms", c.tau_minus_ms},
                     {"voltage_output", c.voltage_output},
                     {"voltage_sample_rate_hz", c.voltage_sample_rate_hz},
                     {"spike_amplitude_uv", c.spike_amplitude_uv}};
}

inline void from_json(const nlohmann::json& j, SpikingConfig& c) {
  c.neurons_per_channel = j.value("neurons_per_channel", c.neurons_per_channel);
  c.excitatory_fraction = j.value("excitatory_fraction", c.excitatory_fraction);
  c.v_rest_mv = j.value("v_rest_mv", c.v_rest_mv);
  c.v_reset_mv = j.value("v_reset_mv", c.v_reset_mv);
  c.v_threshold_mv = j.value("v_threshold_mv", c.v_threshold_mv);
  c.tau_m_ms = j.value("tau_m_ms", c.tau_m_ms);
  c.refractory_ms = j.value("refractory_ms", c.refractory_ms);
  c.connect_p0 = j.value("connect_p0", c.connect_p0);
  c.connect_sigma = j.value("connect_sigma", c.connect_sigma);
  c.w_exc_init_mv = j.value("w_exc_init_mv", c.w_exc_init_mv);
  c.w_inh_mv = j.value("w_inh_mv", c.w_inh_mv);
  c.w_max_mv = j.value("w_max_mv", c.w_max_mv);
  c.coupling_mv_per_pc = j.value("coupling_mv_per_pc", c.coupling_mv_per_pc);
  c.coupling_jitter = j.value("coupling_jitter", c.coupling_jitter);
  c.noise_rate_hz = j.value("noise_rate_hz", c.noise_rate_hz);
  c.noise_mv = j.value("noise_mv", c.noise_mv);
  c.plasticity = j.value("plasticity", c.plasticity);
  c.a_plus = j.value("a_plus", c.a_plus);
  c.a_minus = j.value("a_minus", c.a_minus);
  c.tau_plus_ms = j.value("tau_plus_ms", c.tau_plus_ms);
  c.tau_minus_ms = j.value("tau_minus_ms", c.tau_minus_ms);
  c.voltage_output = j.value("voltage_output", c.voltage_output);
  c.voltage_sample_rate_hz = j.value("voltage_sample_rate_hz", c.voltage_sample_rate_hz);
  c.spike_amplitude_uv = j.value("spike_amplitude_uv", c.spike_amplitude_uv);
}

}  // namespace neuroloop::substrate
